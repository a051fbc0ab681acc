//! Receiver: preamble timing, OFDM demodulation, pilot-based channel
//! estimation, zero-forcing combining and payload recovery.

use nalgebra::DMatrix;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::grid::{demap_symbols, GridMap, OfdmParams, PilotSequence, ResourceGrid};
use crate::interleave::{deshuffle, ShufflePlan};
use crate::metrics::{capped_db, DB_CAP};
use crate::tx::{preamble_streams, FrameLayout, PreambleParams, TimeFrame};
use crate::Cplx;

/// Condition number above which a cell is treated as singular.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// Correlate against the known preamble.
    Preamble,
    /// Use the true frame start.
    Genie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiMode {
    Estimated,
    Perfect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RxConfig {
    pub sync: SyncMode,
    pub csi: CsiMode,
    /// Minimum peak-to-mean ratio of the timing metric.
    pub sync_threshold: f64,
    /// Samples the FFT window is moved into the cyclic prefix.
    pub timing_backoff: usize,
    /// Largest frame delay the timing search covers.
    pub max_delay: usize,
}

impl Default for RxConfig {
    fn default() -> Self {
        Self {
            sync: SyncMode::Preamble,
            csi: CsiMode::Estimated,
            sync_threshold: 4.0,
            timing_backoff: 3,
            max_delay: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncResult {
    pub offset: usize,
    pub peak_to_mean: f64,
}

/// Finds the preamble start by maximising the cross-correlation magnitude
/// summed over all receive streams and all per-stream preambles. Lags
/// `0..=max_lag` are searched; ties resolve to the smallest lag.
pub fn synchronize(
    samples: &[Vec<Cplx>],
    preamble: &PreambleParams,
    n_tx: usize,
    max_lag: usize,
    threshold: f64,
) -> Result<SyncResult> {
    let refs = preamble_streams(preamble, n_tx)?;
    let len = preamble.len;
    let available = samples.iter().map(Vec::len).min().unwrap_or(0);
    if available < len {
        return Err(Error::Framing("received buffer shorter than the preamble".into()));
    }
    let last = max_lag.min(available - len);
    let conj: Vec<Vec<Cplx>> = refs.iter().map(|r| r.iter().map(|v| v.conj()).collect()).collect();
    let metric: Vec<f64> = (0..=last)
        .map(|d| {
            samples
                .iter()
                .map(|y| {
                    let window = &y[d..d + len];
                    conj.iter()
                        .map(|p| window.iter().zip(p).map(|(a, b)| a * b).sum::<Cplx>().norm())
                        .sum::<f64>()
                })
                .sum()
        })
        .collect();
    let (offset, peak) = metric
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let mean = metric.iter().sum::<f64>() / metric.len() as f64;
    let ratio = if mean > 0.0 { peak / mean } else { 0.0 };
    if !(ratio >= threshold) {
        return Err(Error::SyncFailure { ratio, threshold });
    }
    Ok(SyncResult {
        offset,
        peak_to_mean: ratio,
    })
}

/// Slices `n_symbols` OFDM symbols starting at `start` (may be negative or
/// run past the buffer only when the missing samples are zero-padded by the
/// caller; otherwise a framing error is returned).
pub fn extract_symbols(samples: &[Vec<Cplx>], start: isize, params: &OfdmParams, n_symbols: usize) -> Result<TimeFrame> {
    let layout = FrameLayout {
        preamble_len: 0,
        cp_len: params.cp_len,
        fft_size: params.fft_size,
        n_symbols,
    };
    let len = layout.len() as isize;
    let streams = samples
        .iter()
        .map(|y| {
            if start + len > y.len() as isize {
                return Err(Error::Framing(format!(
                    "need {} samples from offset {start}, buffer has {}",
                    len,
                    y.len()
                )));
            }
            Ok((start..start + len)
                .map(|n| if n < 0 { Cplx::new(0.0, 0.0) } else { y[n as usize] })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TimeFrame { streams, layout })
}

/// Removes the phase ramp `e^{j2π·bin·shift/N}` that an FFT window placed
/// `shift` samples late (negative: early) puts on every subcarrier.
pub fn compensate_window_shift(grid: &mut ResourceGrid, shift: isize) {
    if shift == 0 {
        return;
    }
    let params = *grid.params();
    let derotate: Vec<Cplx> = (0..params.used_subcarriers)
        .map(|k| {
            Cplx::from_polar(
                1.0,
                -std::f64::consts::TAU * params.signed_bin(k) as f64 * shift as f64 / params.fft_size as f64,
            )
        })
        .collect();
    for s in 0..grid.n_streams() {
        for m in 0..grid.n_symbols() {
            for (v, r) in grid.symbol_mut(s, m).iter_mut().zip(&derotate) {
                *v *= r;
            }
        }
    }
}

/// Strips cyclic prefixes and applies the unitary forward DFT; the returned
/// grid has one stream per receive antenna.
pub fn ofdm_demodulate(frame: &TimeFrame, params: &OfdmParams) -> Result<ResourceGrid> {
    let layout = frame.layout;
    if layout.cp_len != params.cp_len || layout.fft_size != params.fft_size {
        return Err(Error::Framing("frame numerology differs from the OFDM parameters".into()));
    }
    if layout.n_symbols == 0 || !layout.n_symbols.is_multiple_of(params.symbols_per_block) {
        return Err(Error::Framing(format!(
            "{} OFDM symbols is not a whole number of {}-symbol blocks",
            layout.n_symbols, params.symbols_per_block
        )));
    }
    if let Some(bad) = frame.streams.iter().find(|s| s.len() != layout.len()) {
        return Err(Error::Framing(format!(
            "stream holds {} samples, layout needs {}",
            bad.len(),
            layout.len()
        )));
    }
    let rx_params = OfdmParams {
        n_streams: frame.n_streams(),
        ..*params
    };
    let mut grid = ResourceGrid::with_symbols(rx_params, layout.n_symbols);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(params.fft_size);
    let scale = 1.0 / (params.fft_size as f64).sqrt();
    let bins: Vec<usize> = (0..params.used_subcarriers).map(|k| params.fft_bin(k)).collect();
    let mut buf = vec![Cplx::new(0.0, 0.0); params.fft_size];
    for (r, stream) in frame.streams.iter().enumerate() {
        for m in 0..layout.n_symbols {
            buf.copy_from_slice(&stream[layout.body_span(m)]);
            fft.process(&mut buf);
            for (cell, &bin) in grid.symbol_mut(r, m).iter_mut().zip(&bins) {
                *cell = buf[bin] * scale;
            }
        }
    }
    Ok(grid)
}

/// Per-cell n_rx × n_tx channel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub n_rx: usize,
    pub n_tx: usize,
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    h: Vec<Cplx>,
    valid: Vec<bool>,
}

impl ChannelEstimate {
    fn new(n_rx: usize, n_tx: usize, n_symbols: usize, n_subcarriers: usize) -> Self {
        Self {
            n_rx,
            n_tx,
            n_symbols,
            n_subcarriers,
            h: vec![Cplx::new(0.0, 0.0); n_symbols * n_subcarriers * n_rx * n_tx],
            valid: vec![false; n_symbols * n_subcarriers],
        }
    }

    fn offset(&self, symbol: usize, subcarrier: usize) -> usize {
        (symbol * self.n_subcarriers + subcarrier) * self.n_rx * self.n_tx
    }

    /// Row-major n_rx × n_tx matrix of one cell.
    pub fn matrix(&self, symbol: usize, subcarrier: usize) -> &[Cplx] {
        let o = self.offset(symbol, subcarrier);
        &self.h[o..o + self.n_rx * self.n_tx]
    }

    pub fn get(&self, symbol: usize, subcarrier: usize, rx: usize, tx: usize) -> Cplx {
        self.h[self.offset(symbol, subcarrier) + rx * self.n_tx + tx]
    }

    fn set(&mut self, symbol: usize, subcarrier: usize, rx: usize, tx: usize, v: Cplx) {
        let o = self.offset(symbol, subcarrier) + rx * self.n_tx + tx;
        self.h[o] = v;
    }

    pub fn is_valid(&self, symbol: usize, subcarrier: usize) -> bool {
        self.valid[symbol * self.n_subcarriers + subcarrier]
    }

    fn finalize(mut self) -> Self {
        for cell in 0..self.n_symbols * self.n_subcarriers {
            let o = cell * self.n_rx * self.n_tx;
            self.valid[cell] = self.h[o..o + self.n_rx * self.n_tx]
                .iter()
                .all(|v| v.re.is_finite() && v.im.is_finite());
        }
        self
    }

    /// True channel response, including the phase ramp of an FFT window
    /// placed `window_shift` samples after the ideal position.
    pub fn from_realization(
        ch: &ChannelRealization,
        params: &OfdmParams,
        n_symbols: usize,
        window_shift: isize,
    ) -> Self {
        let mut est = Self::new(ch.n_rx(), ch.n_tx(), n_symbols, params.used_subcarriers);
        let drifting = ch.end_taps.is_some();
        for k in 0..params.used_subcarriers {
            let ramp = Cplx::from_polar(
                1.0,
                std::f64::consts::TAU * params.signed_bin(k) as f64 * window_shift as f64 / params.fft_size as f64,
            );
            let mut response = ch.frequency_response(params, k, 0, n_symbols);
            for m in 0..n_symbols {
                if drifting && m > 0 {
                    response = ch.frequency_response(params, k, m, n_symbols);
                }
                for r in 0..ch.n_rx() {
                    for t in 0..ch.n_tx() {
                        est.set(m, k, r, t, response[r * ch.n_tx() + t] * ramp);
                    }
                }
            }
        }
        est.finalize()
    }
}

/// Nearest subcarrier owned by `stream` (ties toward the lower index).
fn nearest_owned(k: usize, stream: usize, n_streams: usize, n_subcarriers: usize) -> Option<usize> {
    let lower = (k >= stream).then(|| k - (k - stream) % n_streams);
    let upper = {
        let u = match lower {
            Some(l) if l == k => k,
            Some(l) => l + n_streams,
            None => stream,
        };
        (u < n_subcarriers).then_some(u)
    };
    match (lower, upper) {
        (Some(l), Some(u)) => Some(if k - l <= u - k { l } else { u }),
        (l, u) => l.or(u),
    }
}

/// Least-squares estimates on pilot cells, nearest-neighbour fill across
/// subcarriers, linear interpolation across pilot symbols and constant
/// extrapolation outside them. `params.n_streams` is the transmit stream
/// count; the grid carries one stream per receive antenna.
pub fn estimate_channel(
    grid: &ResourceGrid,
    pilots: &PilotSequence,
    pilot_gain: f64,
    params: &OfdmParams,
) -> Result<ChannelEstimate> {
    let n_tx = params.n_streams;
    let n_rx = grid.n_streams();
    let n_sc = params.used_subcarriers;
    let n_symbols = grid.n_symbols();
    if n_tx > n_sc {
        return Err(Error::Estimation(format!("{n_sc} subcarriers cannot carry pilots for {n_tx} streams")));
    }
    let pilot_symbols: Vec<usize> = (0..n_symbols).filter(|&m| params.is_pilot_symbol(m)).collect();
    if pilot_symbols.is_empty() {
        return Err(Error::Estimation("grid contains no pilot symbols".into()));
    }
    let neighbours: Vec<Vec<usize>> = (0..n_sc)
        .map(|k| {
            (0..n_tx)
                .map(|t| nearest_owned(k, t, n_tx, n_sc).expect("every stream owns a subcarrier"))
                .collect()
        })
        .collect();

    // LS per pilot symbol, filled across subcarriers: [pilot][k][r][t].
    let per_pilot = n_sc * n_rx * n_tx;
    let mut at_pilots = vec![Cplx::new(0.0, 0.0); pilot_symbols.len() * per_pilot];
    for (p, &m) in pilot_symbols.iter().enumerate() {
        let mut ls = vec![Cplx::new(0.0, 0.0); n_sc * n_rx];
        for k in 0..n_sc {
            let reference = pilots.value(k) * pilot_gain;
            for r in 0..n_rx {
                ls[k * n_rx + r] = grid.get(r, m, k) / reference;
            }
        }
        for k in 0..n_sc {
            for r in 0..n_rx {
                for t in 0..n_tx {
                    at_pilots[p * per_pilot + (k * n_rx + r) * n_tx + t] = ls[neighbours[k][t] * n_rx + r];
                }
            }
        }
    }

    let mut est = ChannelEstimate::new(n_rx, n_tx, n_symbols, n_sc);
    for m in 0..n_symbols {
        let (p0, p1, w) = match pilot_symbols.binary_search(&m) {
            Ok(i) => (i, i, 0.0),
            Err(0) => (0, 0, 0.0),
            Err(i) if i == pilot_symbols.len() => (i - 1, i - 1, 0.0),
            Err(i) => {
                let (a, b) = (pilot_symbols[i - 1], pilot_symbols[i]);
                (i - 1, i, (m - a) as f64 / (b - a) as f64)
            }
        };
        for k in 0..n_sc {
            let o = est.offset(m, k);
            for j in 0..n_rx * n_tx {
                let a = at_pilots[p0 * per_pilot + k * n_rx * n_tx + j];
                let b = at_pilots[p1 * per_pilot + k * n_rx * n_tx + j];
                est.h[o + j] = a + (b - a) * w;
            }
        }
    }
    Ok(est.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZfOutput {
    /// Equalized grid, one stream per transmit stream; pilot symbols are zero.
    pub grid: ResourceGrid,
    /// Condition number per (symbol, subcarrier); NaN on pilot symbols.
    pub condition: Vec<f64>,
    pub singular_cells: usize,
}

/// Per-cell least-squares inversion `x̂ = (HᴴH)⁻¹Hᴴy` on data symbols.
pub fn zf_combine(grid: &ResourceGrid, est: &ChannelEstimate, params: &OfdmParams) -> Result<ZfOutput> {
    let (n_rx, n_tx) = (est.n_rx, est.n_tx);
    if n_rx < n_tx {
        return Err(Error::invalid(format!("zero forcing needs n_rx ≥ n_tx, got {n_rx} < {n_tx}")));
    }
    if grid.n_streams() != n_rx || grid.n_symbols() != est.n_symbols || grid.n_subcarriers() != est.n_subcarriers {
        return Err(Error::invalid("channel estimate does not match the received grid"));
    }
    let tx_params = OfdmParams {
        n_streams: n_tx,
        ..*params
    };
    let n_sc = est.n_subcarriers;
    let mut out = ResourceGrid::with_symbols(tx_params, grid.n_symbols());
    let mut condition = vec![f64::NAN; grid.n_symbols() * n_sc];
    let mut singular_cells = 0;
    // Block-fading estimates repeat across symbols; reuse each subcarrier's pseudo-inverse.
    let mut cache: Vec<Option<(Vec<Cplx>, Option<DMatrix<Cplx>>, f64)>> = vec![None; n_sc];
    for m in (0..grid.n_symbols()).filter(|&m| !params.is_pilot_symbol(m)) {
        for (k, slot) in cache.iter_mut().enumerate() {
            let h = est.matrix(m, k);
            if !matches!(slot, Some((prev, _, _)) if prev.as_slice() == h) {
                let (pinv, cond) = pseudo_inverse(h, n_rx, n_tx, est.is_valid(m, k));
                *slot = Some((h.to_vec(), pinv, cond));
            }
            let (_, pinv, cond) = slot.as_ref().expect("cache filled");
            condition[m * n_sc + k] = *cond;
            match pinv {
                Some(pinv) => {
                    for t in 0..n_tx {
                        let mut acc = Cplx::new(0.0, 0.0);
                        for r in 0..n_rx {
                            acc += pinv[(t, r)] * grid.get(r, m, k);
                        }
                        out.set(t, m, k, acc);
                    }
                }
                None => singular_cells += 1,
            }
        }
    }
    Ok(ZfOutput {
        grid: out,
        condition,
        singular_cells,
    })
}

fn pseudo_inverse(h: &[Cplx], n_rx: usize, n_tx: usize, valid: bool) -> (Option<DMatrix<Cplx>>, f64) {
    if !valid {
        return (None, f64::INFINITY);
    }
    let mat = DMatrix::from_row_slice(n_rx, n_tx, h);
    let svd = mat.svd(true, true);
    let s = &svd.singular_values;
    let (max, min) = s.iter().fold((0.0f64, f64::INFINITY), |(a, b), &v| (a.max(v), b.min(v)));
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return (None, cond);
    }
    let u = svd.u.as_ref().expect("left singular vectors");
    let v_t = svd.v_t.as_ref().expect("right singular vectors");
    // pinv = V Σ⁻¹ Uᴴ
    let inv_s = DMatrix::from_diagonal(&s.map(|v| Cplx::new(1.0 / v, 0.0)));
    (Some(v_t.adjoint() * inv_s * u.adjoint()), cond)
}

/// Demaps, deshuffles and undoes the amplitude normalization.
pub fn recover_payload(
    grid: &ResourceGrid,
    map: &GridMap,
    plan: &ShufflePlan,
    norm_factor: f64,
    n_payload: usize,
) -> Result<Vec<Cplx>> {
    if n_payload == 0 {
        return Ok(Vec::new());
    }
    let shuffled = demap_symbols(grid, map, n_payload)?;
    let ordered = deshuffle(&shuffled, plan)?;
    Ok(ordered.into_iter().map(|v| v * norm_factor).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evm {
    pub evm_rms: f64,
    pub rx_snr_db: f64,
    /// `|rx - tx|²` per payload position.
    pub error_power: Vec<f64>,
}

/// RMS error vector magnitude relative to the reference, and the implied
/// SNR `-20·log10(evm)` capped at +80 dB.
pub fn compute_evm(tx_ref: &[Cplx], rx: &[Cplx]) -> Result<Evm> {
    if tx_ref.len() != rx.len() {
        return Err(Error::SizeMismatch {
            expected: tx_ref.len(),
            got: rx.len(),
        });
    }
    let signal: f64 = tx_ref.iter().map(|v| v.norm_sqr()).sum();
    if signal == 0.0 {
        return Err(Error::invalid("EVM reference is all zero"));
    }
    let error_power: Vec<f64> = tx_ref.iter().zip(rx).map(|(a, b)| (b - a).norm_sqr()).collect();
    let noise: f64 = error_power.iter().sum();
    let evm_rms = (noise / signal).sqrt();
    let rx_snr_db = if noise == 0.0 { DB_CAP } else { capped_db(signal / noise) };
    Ok(Evm {
        evm_rms,
        rx_snr_db,
        error_power,
    })
}

/// Outcome of receiving one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RxReport {
    pub recovered: Vec<Cplx>,
    pub rx_snr_db: f64,
    pub evm_rms: f64,
    /// Error power per payload position, in payload order.
    pub position_err: Vec<f64>,
    /// Mean error power per used subcarrier (physical allocation, all streams).
    pub per_subcarrier_err: Vec<f64>,
    /// Mean error power per transmit stream (physical allocation).
    pub per_stream_err: Vec<f64>,
    pub timing_offset: usize,
    pub singular_cells: usize,
}
