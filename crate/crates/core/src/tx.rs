//! Transmit chain: amplitude normalization, fixed-point quantization,
//! shuffling, grid mapping, OFDM modulation and the synchronization preamble.

use std::ops::Range;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid_map, map_symbols, OfdmParams, PilotSequence, ResourceGrid};
use crate::interleave::{shuffle, ShufflePlan};
use crate::metrics::percentile;
use crate::Cplx;

/// DAC full scale per I/Q rail.
pub const CLIP_LIMIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreambleParams {
    pub root: u32,
    pub len: usize,
    /// Amplitude of the constant-envelope preamble samples.
    pub gain: f64,
}

impl Default for PreambleParams {
    fn default() -> Self {
        Self {
            root: 25,
            len: 139,
            gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TxConfig {
    pub norm_factor: f64,
    /// 0 disables quantization.
    pub quant_bits: u32,
    pub pilot_seed: u64,
    /// Amplitude applied to the unit-power pilot values.
    pub pilot_gain: f64,
    pub preamble: PreambleParams,
}

impl Default for TxConfig {
    fn default() -> Self {
        Self {
            norm_factor: 3.0,
            quant_bits: 14,
            pilot_seed: 0x5eed,
            pilot_gain: 1.0,
            preamble: PreambleParams::default(),
        }
    }
}

impl TxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.norm_factor > 0.0) || !self.norm_factor.is_finite() {
            return Err(Error::config("tx.norm_factor", "must be positive"));
        }
        if self.quant_bits != 0 && !(2..=24).contains(&self.quant_bits) {
            return Err(Error::config("tx.quant_bits", "must be 0 or within [2, 24]"));
        }
        if !(self.pilot_gain > 0.0) {
            return Err(Error::config("tx.pilot_gain", "must be positive"));
        }
        if !(self.preamble.gain > 0.0) {
            return Err(Error::config("tx.preamble.gain", "must be positive"));
        }
        check_zc(self.preamble.root, self.preamble.len)
            .map_err(|e| Error::config("tx.preamble", e.to_string()))
    }
}

/// Sample layout of a frame: optional preamble, then back-to-back OFDM
/// symbols each made of `cp_len` prefix samples and `fft_size` body samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub preamble_len: usize,
    pub cp_len: usize,
    pub fft_size: usize,
    pub n_symbols: usize,
}

impl FrameLayout {
    pub fn symbol_len(&self) -> usize {
        self.cp_len + self.fft_size
    }

    pub fn len(&self) -> usize {
        self.preamble_len + self.n_symbols * self.symbol_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn preamble_span(&self) -> Range<usize> {
        0..self.preamble_len
    }

    /// Prefix plus body of OFDM symbol `m`.
    pub fn symbol_span(&self, m: usize) -> Range<usize> {
        let start = self.preamble_len + m * self.symbol_len();
        start..start + self.symbol_len()
    }

    pub fn body_span(&self, m: usize) -> Range<usize> {
        let span = self.symbol_span(m);
        span.start + self.cp_len..span.end
    }

    /// OFDM symbol containing sample `n`, `None` inside the preamble or past the end.
    pub fn symbol_of(&self, n: usize) -> Option<usize> {
        if n < self.preamble_len {
            return None;
        }
        let m = (n - self.preamble_len) / self.symbol_len();
        (m < self.n_symbols).then_some(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrame {
    pub streams: Vec<Vec<Cplx>>,
    pub layout: FrameLayout,
}

impl TimeFrame {
    pub fn n_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        let n: usize = self.streams.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.streams
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x.norm_sqr())
            .sum::<f64>()
            / n as f64
    }

    pub fn scale(&mut self, gain: f64) {
        for x in self.streams.iter_mut().flat_map(|s| s.iter_mut()) {
            *x *= gain;
        }
    }
}

/// Divides each rail by `norm` and clips it to `[-1, 1]`.
pub fn normalize_clip(x: &[Cplx], norm: f64) -> Result<Vec<Cplx>> {
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invalid("normalization factor must be positive"));
    }
    x.iter()
        .map(|v| {
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::invalid("non-finite symbol value"));
            }
            Ok(Cplx::new(
                (v.re / norm).clamp(-CLIP_LIMIT, CLIP_LIMIT),
                (v.im / norm).clamp(-CLIP_LIMIT, CLIP_LIMIT),
            ))
        })
        .collect()
}

#[inline]
fn quantize_rail(v: f64, levels: f64) -> f64 {
    (v * levels).round() / levels
}

/// Mid-tread uniform quantizer with `2^(bits-1) - 1` positive levels per rail.
pub fn quantize_fixed_point(x: &[Cplx], bits: u32) -> Result<Vec<Cplx>> {
    if bits == 0 {
        return Ok(x.to_vec());
    }
    if !(2..=24).contains(&bits) {
        return Err(Error::invalid(format!("quantizer width {bits} outside [2, 24]")));
    }
    let levels = ((1u64 << (bits - 1)) - 1) as f64;
    x.iter()
        .map(|v| {
            // NaN fails these comparisons as well.
            if !(v.re.abs() <= CLIP_LIMIT && v.im.abs() <= CLIP_LIMIT) {
                return Err(Error::invalid("quantizer input outside [-1, 1]"));
            }
            Ok(Cplx::new(quantize_rail(v.re, levels), quantize_rail(v.im, levels)))
        })
        .collect()
}

/// Normalization followed by quantization: the symbols as they leave the DAC.
pub fn condition_symbols(x: &[Cplx], cfg: &TxConfig) -> Result<Vec<Cplx>> {
    let normalized = normalize_clip(x, cfg.norm_factor)?;
    quantize_fixed_point(&normalized, cfg.quant_bits)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn check_zc(root: u32, len: usize) -> Result<()> {
    if len == 0 || len.is_multiple_of(2) {
        return Err(Error::invalid("Zadoff-Chu length must be odd"));
    }
    if root == 0 || root as usize >= len || gcd(root as u64, len as u64) != 1 {
        return Err(Error::invalid("Zadoff-Chu root must lie in (0, len) and be coprime with len"));
    }
    Ok(())
}

/// `x[n] = exp(-jπ·u·n·(n+1)/L)` for odd `L`.
pub fn zadoff_chu(root: u32, len: usize) -> Result<Vec<Cplx>> {
    check_zc(root, len)?;
    let u = root as u64;
    let l = len as u64;
    Ok((0..l)
        .map(|n| {
            // u·n·(n+1) is even, so reduce modulo 2L to keep the phase argument small.
            let k = (u * n % (2 * l)) * ((n + 1) % (2 * l)) % (2 * l);
            Cplx::from_polar(1.0, -std::f64::consts::PI * k as f64 / l as f64)
        })
        .collect())
}

/// Per-stream preamble: the root sequence cyclically advanced by
/// `s·⌊L/n_streams⌋` samples for stream `s`, scaled by the preamble gain.
pub fn preamble_streams(pre: &PreambleParams, n_streams: usize) -> Result<Vec<Vec<Cplx>>> {
    let root = zadoff_chu(pre.root, pre.len)?;
    let step = pre.len / n_streams.max(1);
    Ok((0..n_streams)
        .map(|s| {
            let shift = s * step;
            (0..pre.len)
                .map(|n| root[(n + shift) % pre.len] * pre.gain)
                .collect()
        })
        .collect())
}

/// Unitary inverse DFT of each OFDM symbol with the used subcarriers placed
/// around DC, followed by cyclic-prefix insertion.
pub fn ofdm_modulate(grid: &ResourceGrid) -> TimeFrame {
    let params = *grid.params();
    let layout = FrameLayout {
        preamble_len: 0,
        cp_len: params.cp_len,
        fft_size: params.fft_size,
        n_symbols: grid.n_symbols(),
    };
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(params.fft_size);
    let scale = 1.0 / (params.fft_size as f64).sqrt();
    let bins: Vec<usize> = (0..params.used_subcarriers).map(|k| params.fft_bin(k)).collect();
    let mut buf = vec![Cplx::new(0.0, 0.0); params.fft_size];
    let streams = (0..grid.n_streams())
        .map(|s| {
            let mut out = Vec::with_capacity(layout.len());
            for m in 0..grid.n_symbols() {
                buf.fill(Cplx::new(0.0, 0.0));
                for (&bin, &v) in bins.iter().zip(grid.symbol(s, m)) {
                    buf[bin] = v;
                }
                ifft.process(&mut buf);
                out.extend(buf[params.fft_size - params.cp_len..].iter().map(|v| v * scale));
                out.extend(buf.iter().map(|v| v * scale));
            }
            out
        })
        .collect();
    TimeFrame { streams, layout }
}

/// Complete transmit path for one payload.
pub fn build_frame(
    symbols: &[Cplx],
    cfg: &TxConfig,
    params: &OfdmParams,
    plan: &ShufflePlan,
    pilots: &PilotSequence,
) -> Result<TimeFrame> {
    cfg.validate()?;
    if symbols.is_empty() {
        return Err(Error::invalid("cannot build a frame from an empty payload"));
    }
    let conditioned = condition_symbols(symbols, cfg)?;
    let shuffled = shuffle(&conditioned, plan)?;
    let map = build_grid_map(params, shuffled.len())?;
    let grid = map_symbols(&shuffled, &map, params, pilots, cfg.pilot_gain)?;
    let body = ofdm_modulate(&grid);
    let preambles = preamble_streams(&cfg.preamble, params.n_streams)?;
    let streams = preambles
        .into_iter()
        .zip(body.streams)
        .map(|(mut pre, data)| {
            pre.extend(data);
            pre
        })
        .collect();
    Ok(TimeFrame {
        streams,
        layout: FrameLayout {
            preamble_len: cfg.preamble.len,
            ..body.layout
        },
    })
}

/// `max|x|² / mean|x|²` in dB; `None` for zero-power input.
pub fn papr_db(samples: &[Cplx]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let (peak, sum) = samples.iter().fold((0.0f64, 0.0f64), |(p, s), x| {
        let e = x.norm_sqr();
        (p.max(e), s + e)
    });
    let mean = sum / samples.len() as f64;
    (mean > 0.0).then(|| 10.0 * (peak / mean).log10())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaprStats {
    pub values_db: Vec<f64>,
    pub p50_db: f64,
    pub p95_db: f64,
    pub p99_db: f64,
    /// Zero-power segments left out of the statistics.
    pub excluded: usize,
}

impl PaprStats {
    pub fn from_values(values_db: Vec<f64>, excluded: usize) -> Result<Self> {
        if values_db.is_empty() {
            return Err(Error::invalid("no non-zero segments to measure PAPR on"));
        }
        let mut sorted = values_db.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            p50_db: percentile(&sorted, 50.0),
            p95_db: percentile(&sorted, 95.0),
            p99_db: percentile(&sorted, 99.0),
            values_db,
            excluded,
        })
    }
}

/// PAPR of every stream's OFDM symbol bodies (or of the whole post-preamble
/// span per stream when `per_symbol` is false). The preamble is never included.
pub fn measure_papr(frame: &TimeFrame, per_symbol: bool) -> Result<PaprStats> {
    if frame.is_empty() || frame.layout.n_symbols == 0 {
        return Err(Error::invalid("frame has no OFDM symbols"));
    }
    let layout = frame.layout;
    let mut values = Vec::new();
    let mut excluded = 0;
    for stream in &frame.streams {
        if per_symbol {
            for m in 0..layout.n_symbols {
                match papr_db(&stream[layout.body_span(m)]) {
                    Some(v) => values.push(v),
                    None => excluded += 1,
                }
            }
        } else {
            match papr_db(&stream[layout.preamble_len..layout.len()]) {
                Some(v) => values.push(v),
                None => excluded += 1,
            }
        }
    }
    PaprStats::from_values(values, excluded)
}

/// Per-OFDM-symbol PAPR of a raw symbol stream that fills every used
/// subcarrier (no pilots), as in a plain 72-subcarrier OFDM waveform.
pub fn papr_of_symbol_stream(symbols: &[Cplx], params: &OfdmParams) -> Result<PaprStats> {
    let n = params.used_subcarriers;
    let n_symbols = symbols.len() / n;
    if n_symbols == 0 {
        return Err(Error::invalid("need at least one full OFDM symbol"));
    }
    let single = OfdmParams {
        n_streams: 1,
        ..*params
    };
    let mut grid = ResourceGrid::with_symbols(single, n_symbols);
    for (m, chunk) in symbols.chunks_exact(n).enumerate() {
        grid.symbol_mut(0, m).copy_from_slice(chunk);
    }
    measure_papr(&ofdm_modulate(&grid), true)
}
