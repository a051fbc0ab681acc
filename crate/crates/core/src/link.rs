//! One payload through the whole chain: transmitter, PA, channel, receiver.

use serde::{Deserialize, Serialize};

use crate::channel::{awgn_streams, convolve, pa_rapp, ChannelRealization, PaParams};
use crate::error::{Error, Result};
use crate::grid::{build_grid_map, make_pilot_sequence, OfdmParams, PilotSequence};
use crate::interleave::ShufflePlan;
use crate::metrics::{error_spectrum, ErrorSpectrum};
use crate::rx::{
    compensate_window_shift, compute_evm, estimate_channel, extract_symbols, ofdm_demodulate, recover_payload, synchronize, zf_combine,
    ChannelEstimate, CsiMode, RxConfig, RxReport, SyncMode,
};
use crate::tx::{build_frame, condition_symbols, measure_papr, PaprStats, TimeFrame, TxConfig};
use crate::Cplx;

/// What the configured SNR is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReference {
    /// Mean power of the transmitted payload cells (per stream, before the
    /// channel). Noise per subcarrier cell is `P_data / snr`.
    #[default]
    DataCells,
    /// Mean received sample power over the whole frame, preamble included.
    Frame,
    /// Fixed noise variance `10^(-snr/10)` per sample, independent of the
    /// signal; used when the transmit power itself is swept.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub reference: NoiseReference,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn off() -> Self {
        Self {
            snr_db: f64::INFINITY,
            reference: NoiseReference::DataCells,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkSetup {
    pub ofdm: OfdmParams,
    pub tx: TxConfig,
    pub rx: RxConfig,
    pub pa: Option<PaParams>,
    /// Leading silence inserted before the frame, in samples.
    pub delay: usize,
}

impl LinkSetup {
    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        self.tx.validate()?;
        if let Some(pa) = &self.pa {
            pa.validate()?;
        }
        if self.rx.timing_backoff > self.ofdm.cp_len {
            return Err(Error::config("rx.timing_backoff", "must not exceed the cyclic prefix"));
        }
        Ok(())
    }

    pub fn pilots(&self) -> PilotSequence {
        make_pilot_sequence(self.tx.pilot_seed, &self.ofdm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkReport {
    pub rx: RxReport,
    /// Conditioned payload rescaled by the normalization factor: the EVM reference.
    pub tx_ref: Vec<Cplx>,
    pub papr: PaprStats,
    pub spectrum: ErrorSpectrum,
    pub sync_peak_ratio: Option<f64>,
    /// Mean power at the PA input relative to the saturation power, in dB.
    pub pa_input_power_db: Option<f64>,
}

/// Runs `payload` through the link. The FFT window starts
/// `rx.timing_backoff` samples early, inside the cyclic prefix, and the
/// resulting phase ramp is removed before estimation.
pub fn run_link(
    payload: &[Cplx],
    setup: &LinkSetup,
    channel: &ChannelRealization,
    plan: &ShufflePlan,
    noise: &NoiseSpec,
) -> Result<LinkReport> {
    setup.validate()?;
    let params = &setup.ofdm;
    let pilots = setup.pilots();
    let n = payload.len();

    let tx_ref: Vec<Cplx> = condition_symbols(payload, &setup.tx)?
        .into_iter()
        .map(|v| v * setup.tx.norm_factor)
        .collect();
    let mut frame = build_frame(payload, &setup.tx, params, plan, &pilots)?;
    let papr = measure_papr(&frame, true)?;
    let layout = frame.layout;

    let mut pa_input_power_db = None;
    if let Some(pa) = &setup.pa {
        let drive = 10f64.powf(-pa.backoff_db / 20.0);
        pa_input_power_db = Some(10.0 * (frame.mean_power() * drive * drive / (pa.sat * pa.sat)).log10());
        for s in frame.streams.iter_mut() {
            *s = pa_rapp(s, pa);
        }
    }

    let received = convolve(&frame, channel)?;
    let variance = noise_variance(noise, &tx_ref, setup.tx.norm_factor, &received);
    let tail = params.cp_len + setup.rx.timing_backoff;
    let padded: Vec<Vec<Cplx>> = received
        .streams
        .iter()
        .map(|s| {
            let mut v = vec![Cplx::new(0.0, 0.0); setup.delay];
            v.extend_from_slice(s);
            v.extend(std::iter::repeat_n(Cplx::new(0.0, 0.0), tail));
            v
        })
        .collect();
    let samples = match variance {
        Some(var) => awgn_streams(&padded, 0.0, var, noise.seed),
        None => padded,
    };

    let (offset, sync_peak_ratio) = match setup.rx.sync {
        SyncMode::Genie => (setup.delay, None),
        SyncMode::Preamble => {
            let s = synchronize(
                &samples,
                &setup.tx.preamble,
                params.n_streams,
                setup.rx.max_delay,
                setup.rx.sync_threshold,
            )?;
            (s.offset, Some(s.peak_to_mean))
        }
    };
    let start = (offset + layout.preamble_len) as isize - setup.rx.timing_backoff as isize;
    let body = extract_symbols(&samples, start, params, layout.n_symbols)?;
    let mut grid = ofdm_demodulate(&body, params)?;
    compensate_window_shift(&mut grid, -(setup.rx.timing_backoff as isize));

    let estimate = match setup.rx.csi {
        CsiMode::Estimated => estimate_channel(&grid, &pilots, setup.tx.pilot_gain, params)?,
        CsiMode::Perfect => {
            // Residual misalignment once the deliberate advance is undone.
            let shift = offset as isize - setup.delay as isize;
            ChannelEstimate::from_realization(channel, params, layout.n_symbols, shift)
        }
    };
    let zf = zf_combine(&grid, &estimate, params)?;
    let map = build_grid_map(params, n)?;
    let recovered = recover_payload(&zf.grid, &map, plan, setup.tx.norm_factor, n)?;
    let evm = compute_evm(&tx_ref, &recovered)?;
    let spectrum = error_spectrum(&evm.error_power, plan, params)?;

    Ok(LinkReport {
        rx: RxReport {
            rx_snr_db: evm.rx_snr_db,
            evm_rms: evm.evm_rms,
            per_subcarrier_err: ErrorSpectrum::per_subcarrier(&spectrum.physical),
            per_stream_err: ErrorSpectrum::per_stream(&spectrum.physical),
            position_err: evm.error_power,
            recovered,
            timing_offset: offset,
            singular_cells: zf.singular_cells,
        },
        tx_ref,
        papr,
        spectrum,
        sync_peak_ratio,
        pa_input_power_db,
    })
}

/// Per-sample noise variance, or `None` when noise is off.
fn noise_variance(noise: &NoiseSpec, tx_ref: &[Cplx], norm: f64, received: &TimeFrame) -> Option<f64> {
    if noise.snr_db == f64::INFINITY {
        return None;
    }
    let ratio = 10f64.powf(noise.snr_db / 10.0);
    let reference = match noise.reference {
        NoiseReference::DataCells => {
            tx_ref.iter().map(|v| v.norm_sqr()).sum::<f64>() / (tx_ref.len() as f64 * norm * norm)
        }
        NoiseReference::Frame => received.mean_power(),
        NoiseReference::Absolute => 1.0,
    };
    Some(reference / ratio)
}
