//! Channel impairments: AWGN, block-fading MIMO tapped delay lines and a
//! memoryless Rapp power amplifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::OfdmParams;
use crate::rng::{derive_seed, SplitMix64};
use crate::tx::TimeFrame;
use crate::Cplx;

const NOISE_TAG: u64 = 0x006e_6f69_7365;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelProfile {
    /// Unit-gain, crosstalk-free channel: only noise is added.
    Awgn,
    /// One Rayleigh tap per antenna pair.
    Flat,
    /// Rayleigh taps with exponentially decaying mean power.
    ExpPdp { n_taps: usize, decay_db_per_tap: f64 },
    /// Deterministic direct path plus one echo on every co-polar pair.
    TwoTap { delay: usize, echo: Cplx },
}

/// Sample-spaced taps per (rx, tx) pair, held for one frame. With
/// `end_taps` set the taps move linearly from `taps` (first OFDM symbol) to
/// `end_taps` (last OFDM symbol), staying constant within each symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<Vec<Vec<Cplx>>>,
    pub end_taps: Option<Vec<Vec<Vec<Cplx>>>>,
    /// `f64::INFINITY` disables noise.
    pub noise_snr_db: f64,
    pub seed: u64,
}

impl ChannelRealization {
    pub fn n_rx(&self) -> usize {
        self.taps.len()
    }

    pub fn n_tx(&self) -> usize {
        self.taps.first().map_or(0, Vec::len)
    }

    pub fn max_taps(&self) -> usize {
        let count = |t: &Vec<Vec<Vec<Cplx>>>| t.iter().flatten().map(Vec::len).max().unwrap_or(0);
        count(&self.taps).max(self.end_taps.as_ref().map_or(0, count))
    }

    pub fn identity(n: usize) -> Self {
        draw_channel(ChannelProfile::Awgn, n, n, 0).expect("identity channel")
    }

    pub fn with_noise(mut self, snr_db: f64) -> Self {
        self.noise_snr_db = snr_db;
        self
    }

    fn taps_at(&self, alpha: f64, rx: usize, tx: usize, k: usize) -> Cplx {
        let start = self.taps[rx][tx].get(k).copied().unwrap_or_default();
        match &self.end_taps {
            Some(end) if alpha > 0.0 => {
                let stop = end[rx][tx].get(k).copied().unwrap_or_default();
                start + (stop - start) * alpha
            }
            _ => start,
        }
    }

    /// n_rx × n_tx response on used subcarrier `subcarrier`, row-major, at
    /// OFDM symbol `symbol` of a frame with `n_symbols` symbols.
    pub fn frequency_response(
        &self,
        params: &OfdmParams,
        subcarrier: usize,
        symbol: usize,
        n_symbols: usize,
    ) -> Vec<Cplx> {
        let alpha = drift_fraction(symbol, n_symbols);
        let bin = params.signed_bin(subcarrier) as f64;
        let n_taps = self.max_taps();
        let rot: Vec<Cplx> = (0..n_taps)
            .map(|k| Cplx::from_polar(1.0, -std::f64::consts::TAU * bin * k as f64 / params.fft_size as f64))
            .collect();
        let mut out = Vec::with_capacity(self.n_rx() * self.n_tx());
        for r in 0..self.n_rx() {
            for t in 0..self.n_tx() {
                out.push((0..n_taps).map(|k| self.taps_at(alpha, r, t, k) * rot[k]).sum());
            }
        }
        out
    }
}

fn drift_fraction(symbol: usize, n_symbols: usize) -> f64 {
    if n_symbols <= 1 {
        0.0
    } else {
        symbol as f64 / (n_symbols - 1) as f64
    }
}

/// Draws a realization; noise is disabled until set with
/// [`ChannelRealization::with_noise`].
pub fn draw_channel(profile: ChannelProfile, n_tx: usize, n_rx: usize, seed: u64) -> Result<ChannelRealization> {
    if n_tx == 0 || n_rx == 0 {
        return Err(Error::invalid("channel needs at least one antenna on each side"));
    }
    let mut rng = SplitMix64::new(seed);
    let zero = Cplx::new(0.0, 0.0);
    let taps = match profile {
        ChannelProfile::Awgn => (0..n_rx)
            .map(|r| (0..n_tx).map(|t| vec![if r == t { Cplx::new(1.0, 0.0) } else { zero }]).collect())
            .collect(),
        ChannelProfile::Flat => rayleigh_taps(&mut rng, n_rx, n_tx, &[1.0]),
        ChannelProfile::ExpPdp {
            n_taps,
            decay_db_per_tap,
        } => {
            if n_taps == 0 {
                return Err(Error::invalid("power delay profile needs at least one tap"));
            }
            let weights: Vec<f64> = (0..n_taps)
                .map(|k| 10f64.powf(-(k as f64) * decay_db_per_tap / 10.0))
                .collect();
            let total: f64 = weights.iter().sum();
            let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
            rayleigh_taps(&mut rng, n_rx, n_tx, &weights)
        }
        ChannelProfile::TwoTap { delay, echo } => {
            if delay == 0 {
                return Err(Error::invalid("echo delay must be at least one sample"));
            }
            (0..n_rx)
                .map(|r| {
                    (0..n_tx)
                        .map(|t| {
                            let mut h = vec![zero; delay + 1];
                            if r == t {
                                h[0] = Cplx::new(1.0, 0.0);
                                h[delay] = echo;
                            }
                            h
                        })
                        .collect()
                })
                .collect()
        }
    };
    Ok(ChannelRealization {
        taps,
        end_taps: None,
        noise_snr_db: f64::INFINITY,
        seed,
    })
}

fn rayleigh_taps(rng: &mut SplitMix64, n_rx: usize, n_tx: usize, weights: &[f64]) -> Vec<Vec<Vec<Cplx>>> {
    (0..n_rx)
        .map(|_| {
            (0..n_tx)
                .map(|_| weights.iter().map(|&w| rng.complex_normal(w)).collect())
                .collect()
        })
        .collect()
}

/// Adds complex Gaussian noise of variance `signal_power_ref / 10^(snr_db/10)`.
pub fn awgn(x: &[Cplx], snr_db: f64, signal_power_ref: f64, seed: u64) -> Vec<Cplx> {
    if snr_db == f64::INFINITY {
        return x.to_vec();
    }
    let variance = signal_power_ref / 10f64.powf(snr_db / 10.0);
    let mut rng = SplitMix64::new(seed);
    x.iter().map(|&v| v + rng.complex_normal(variance)).collect()
}

/// Noise on every stream, each drawing from its own sub-stream of `seed`.
pub fn awgn_streams(streams: &[Vec<Cplx>], snr_db: f64, signal_power_ref: f64, seed: u64) -> Vec<Vec<Cplx>> {
    streams
        .iter()
        .enumerate()
        .map(|(r, s)| awgn(s, snr_db, signal_power_ref, derive_seed(seed, r as u64)))
        .collect()
}

/// Noiseless MIMO convolution; output keeps the input frame length.
pub fn convolve(frame: &TimeFrame, ch: &ChannelRealization) -> Result<TimeFrame> {
    if frame.n_streams() != ch.n_tx() {
        return Err(Error::SizeMismatch {
            expected: ch.n_tx(),
            got: frame.n_streams(),
        });
    }
    let layout = frame.layout;
    let len = frame.len();
    let n_taps = ch.max_taps();
    let streams = (0..ch.n_rx())
        .map(|r| {
            let mut y = vec![Cplx::new(0.0, 0.0); len];
            match &ch.end_taps {
                None => {
                    for (t, x) in frame.streams.iter().enumerate() {
                        for (k, &h) in ch.taps[r][t].iter().enumerate() {
                            if h == Cplx::new(0.0, 0.0) {
                                continue;
                            }
                            for (yn, &xn) in y[k..].iter_mut().zip(x) {
                                *yn += h * xn;
                            }
                        }
                    }
                }
                Some(_) => {
                    for (n, yn) in y.iter_mut().enumerate() {
                        let alpha = layout
                            .symbol_of(n)
                            .map_or(0.0, |m| drift_fraction(m, layout.n_symbols));
                        for (t, x) in frame.streams.iter().enumerate() {
                            for k in 0..n_taps.min(n + 1) {
                                *yn += ch.taps_at(alpha, r, t, k) * x[n - k];
                            }
                        }
                    }
                }
            }
            y
        })
        .collect();
    Ok(TimeFrame { streams, layout })
}

/// Convolution followed by noise referenced to the mean received power of
/// the whole frame.
pub fn apply_mimo_channel(frame: &TimeFrame, ch: &ChannelRealization) -> Result<TimeFrame> {
    let mut out = convolve(frame, ch)?;
    if ch.noise_snr_db != f64::INFINITY {
        let reference = out.mean_power();
        out.streams = awgn_streams(&out.streams, ch.noise_snr_db, reference, derive_seed(ch.seed, NOISE_TAG));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaParams {
    /// Output saturation amplitude.
    pub sat: f64,
    /// Rapp smoothness factor.
    pub p: f64,
    pub backoff_db: f64,
}

impl Default for PaParams {
    fn default() -> Self {
        Self {
            sat: 1.0,
            p: 3.0,
            backoff_db: 0.0,
        }
    }
}

impl PaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sat > 0.0) {
            return Err(Error::config("pa.sat", "must be positive"));
        }
        if !(self.p > 0.0) {
            return Err(Error::config("pa.p", "must be positive"));
        }
        if !self.backoff_db.is_finite() {
            return Err(Error::config("pa.backoff_db", "must be finite"));
        }
        Ok(())
    }

    /// AM/AM curve for an input amplitude, backoff excluded.
    pub fn am_am(&self, amplitude: f64) -> f64 {
        let two_p = 2.0 * self.p;
        amplitude / (1.0 + (amplitude / self.sat).powf(two_p)).powf(1.0 / two_p)
    }
}

/// Rapp AM/AM compression with phase preserved, after input backoff.
pub fn pa_rapp(x: &[Cplx], pa: &PaParams) -> Vec<Cplx> {
    let gain = 10f64.powf(-pa.backoff_db / 20.0);
    x.iter()
        .map(|&v| {
            let v = v * gain;
            let a = v.norm();
            if a == 0.0 {
                v
            } else {
                v * (pa.am_am(a) / a)
            }
        })
        .collect()
}
