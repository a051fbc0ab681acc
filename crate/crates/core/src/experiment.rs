//! Batch experiments: TOML config, seeded Monte Carlo trials, CSV results
//! and a replayable run manifest.
//!
//! Every trial draws its randomness from `trial_seed(master, scenario, t)`;
//! within a trial all sweep points share the same images, channel and noise
//! draw, so differences between points are paired comparisons.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{draw_channel, ChannelProfile, ChannelRealization, PaParams};
use crate::codec::{bridge_import, gaussian_source, Codec, LinearCodec, QamCodec, SourceImage};
use crate::error::{Error, Result};
use crate::grid::OfdmParams;
use crate::interleave::{make_plan, ShufflePlan, SHUFFLE_ALGORITHM};
use crate::link::{run_link, LinkSetup, NoiseReference, NoiseSpec};
use crate::metrics::{mse, psnr_from_mse, SpectrumBin};
use crate::parallel::{par_map, Execution};
use crate::rng::{derive_seed, trial_seed, RNG_ALGORITHM};
use crate::rx::RxConfig;
use crate::tx::TxConfig;
use crate::Cplx;

pub const MANIFEST_VERSION: u32 = 1;
pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const IMAGE_TAG: u64 = 0x696d_6167;
const CHANNEL_TAG: u64 = 0x6368_616e;
const NOISE_TAG: u64 = 0x6e6f_6973;
const SHUFFLE_TAG: u64 = 0x7368_7566;
const SOURCE_TAG: u64 = 0x7372_6365;

const TILE: (usize, usize, usize) = (32, 32, 3);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    LinearRegion,
    PaprSweep,
    ErrorSpectrum,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::LinearRegion, Scenario::PaprSweep, Scenario::ErrorSpectrum];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::LinearRegion => "linear_region",
            Scenario::PaprSweep => "papr_sweep",
            Scenario::ErrorSpectrum => "error_spectrum",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
            Error::config(
                "experiment.scenario",
                format!("unknown scenario `{s}`, expected one of {}", known.join(", ")),
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Awgn,
    Flat,
    ExpPdp,
    TwoTap,
}

impl ProfileName {
    fn label(self) -> &'static str {
        match self {
            ProfileName::Awgn => "awgn",
            ProfileName::Flat => "flat",
            ProfileName::ExpPdp => "exp_pdp",
            ProfileName::TwoTap => "two_tap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    /// Channel used by `papr_sweep`.
    pub profile: ProfileName,
    /// Tap count of the exponential power delay profile.
    pub taps: usize,
    pub decay_db_per_tap: f64,
    pub echo_delay: usize,
    /// Echo gain as `[re, im]`.
    pub echo: [f64; 2],
    /// Fixes the fading draw for every trial; otherwise each trial draws its own.
    pub seed: Option<u64>,
    /// Silence before the frame, in samples.
    pub frame_delay: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            profile: ProfileName::Awgn,
            taps: 8,
            decay_db_per_tap: 3.0,
            echo_delay: 4,
            echo: [0.9, 0.0],
            seed: None,
            frame_delay: 0,
        }
    }
}

impl ChannelSection {
    fn profile(&self, name: ProfileName) -> ChannelProfile {
        match name {
            ProfileName::Awgn => ChannelProfile::Awgn,
            ProfileName::Flat => ChannelProfile::Flat,
            ProfileName::ExpPdp => ChannelProfile::ExpPdp {
                n_taps: self.taps,
                decay_db_per_tap: self.decay_db_per_tap,
            },
            ProfileName::TwoTap => ChannelProfile::TwoTap {
                delay: self.echo_delay,
                echo: Cplx::new(self.echo[0], self.echo[1]),
            },
        }
    }

    fn realize(&self, name: ProfileName, n: usize, trial_seed: u64) -> Result<ChannelRealization> {
        let seed = self.seed.unwrap_or_else(|| derive_seed(trial_seed, CHANNEL_TAG));
        draw_channel(self.profile(name), n, n, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaSection {
    /// PA in the chain for `linear_region` and `error_spectrum`; `papr_sweep` always uses it.
    pub enabled: bool,
    pub sat: f64,
    pub p: f64,
    pub backoff_db: f64,
}

impl Default for PaSection {
    fn default() -> Self {
        let pa = PaParams::default();
        Self {
            enabled: false,
            sat: pa.sat,
            p: pa.p,
            backoff_db: pa.backoff_db,
        }
    }
}

impl PaSection {
    fn params(&self, backoff_db: f64) -> PaParams {
        PaParams {
            sat: self.sat,
            p: self.p,
            backoff_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    Linear,
    Qam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub kind: CodecKind,
    pub seed: u64,
    /// Complex symbols per 32×32×3 image (linear codec).
    pub symbols: usize,
    /// QAM order (qam codec).
    pub order: usize,
    /// 32×32 tiles per payload when images are synthesized.
    pub images: usize,
    /// PNG whose 32×32 tiles form the payload of every trial.
    pub png: Option<PathBuf>,
    /// Raw channel-planar 8-bit image, with `raw_shape = [h, w, channels]`.
    pub raw: Option<PathBuf>,
    pub raw_shape: Option<[usize; 3]>,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self {
            kind: CodecKind::Linear,
            seed: 7,
            symbols: 512,
            order: 16,
            images: 64,
            png: None,
            raw: None,
            raw_shape: None,
        }
    }
}

impl CodecSection {
    fn build(&self) -> Result<Box<dyn Codec>> {
        Ok(match self.kind {
            CodecKind::Linear => Box::new(
                LinearCodec::new(self.seed, TILE, self.symbols).map_err(|e| Error::config("codec.symbols", e.to_string()))?,
            ),
            CodecKind::Qam => Box::new(QamCodec::new(self.order).map_err(|e| Error::config("codec.order", e.to_string()))?),
        })
    }

    /// Tiles loaded from disk, or `None` for synthetic images.
    fn load_images(&self) -> Result<Option<Vec<SourceImage>>> {
        let image = match (&self.png, &self.raw) {
            (Some(_), Some(_)) => return Err(Error::config("codec.raw", "set either codec.png or codec.raw")),
            (Some(png), None) => SourceImage::load_png(png)?,
            (None, Some(raw)) => {
                let [h, w, c] = self
                    .raw_shape
                    .ok_or_else(|| Error::config("codec.raw_shape", "required with codec.raw"))?;
                SourceImage::from_planar_bytes(h, w, c, &fs::read(raw)?)?
            }
            (None, None) => return Ok(None),
        };
        if image.shape().2 != TILE.2 {
            return Err(Error::config("codec", "images must have 3 channels"));
        }
        image.tiles(TILE.0, TILE.1).map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Gaussian,
    Qam4,
    Qam16,
    Qam64,
    Qam256,
    /// Symbols read from `experiment.bridge_path`.
    Bridge,
}

impl SourceKind {
    fn label(self) -> &'static str {
        match self {
            SourceKind::Gaussian => "gaussian",
            SourceKind::Qam4 => "qam4",
            SourceKind::Qam16 => "qam16",
            SourceKind::Qam64 => "qam64",
            SourceKind::Qam256 => "qam256",
            SourceKind::Bridge => "bridge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub scenario: String,
    pub seed: u64,
    pub trials: usize,
    /// 0 lets the thread pool decide; 1 runs sequentially.
    pub workers: usize,
    pub shuffle: bool,
    /// One permutation for all trials; otherwise each trial derives its own.
    pub shuffle_seed: Option<u64>,
    pub noise_reference: NoiseReference,
    /// `linear_region` SNR axis.
    pub snr_db: Vec<f64>,
    /// `linear_region` channel axis.
    pub channels: Vec<ProfileName>,
    /// `papr_sweep` PA backoff axis; lower backoff drives the PA harder.
    pub backoff_db: Vec<f64>,
    /// `papr_sweep` noise: variance `10^(-x/10)` per sample, relative to `pa.sat²`.
    pub pa_noise_db: f64,
    pub sources: Vec<SourceKind>,
    pub bridge_path: Option<PathBuf>,
    /// `papr_sweep` payload length per trial.
    pub payload_symbols: usize,
    /// `error_spectrum` operating point.
    pub spectrum_snr_db: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            scenario: Scenario::LinearRegion.name().into(),
            seed: 1,
            trials: 10,
            workers: 0,
            shuffle: true,
            shuffle_seed: None,
            noise_reference: NoiseReference::DataCells,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            channels: vec![ProfileName::Awgn, ProfileName::ExpPdp],
            backoff_db: (0..13).map(|i| 9.0 - i as f64).collect(),
            pa_noise_db: 30.0,
            sources: vec![SourceKind::Gaussian, SourceKind::Qam16],
            bridge_path: None,
            payload_symbols: 8640,
            spectrum_snr_db: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ofdm: OfdmParams,
    pub tx: TxConfig,
    pub rx: RxConfig,
    pub channel: ChannelSection,
    pub pa: PaSection,
    pub codec: CodecSection,
    pub experiment: ExperimentSection,
}

impl Config {
    /// Parses TOML; unknown or mistyped keys are reported with their path.
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<toml>", e.to_string()))?;
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario()?;
        self.link_setup(None).validate()?;
        let ex = &self.experiment;
        if ex.trials == 0 {
            return Err(Error::config("experiment.trials", "must be at least 1"));
        }
        for (key, empty) in [
            ("experiment.snr_db", ex.snr_db.is_empty()),
            ("experiment.channels", ex.channels.is_empty()),
            ("experiment.backoff_db", ex.backoff_db.is_empty()),
            ("experiment.sources", ex.sources.is_empty()),
        ] {
            if empty {
                return Err(Error::config(key, "must not be empty"));
            }
        }
        if ex.payload_symbols == 0 {
            return Err(Error::config("experiment.payload_symbols", "must be positive"));
        }
        if ex.sources.contains(&SourceKind::Bridge) && ex.bridge_path.is_none() {
            return Err(Error::config("experiment.bridge_path", "required by the `bridge` source"));
        }
        if self.codec.images == 0 {
            return Err(Error::config("codec.images", "must be positive"));
        }
        self.pa.params(self.pa.backoff_db).validate()?;
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.experiment.scenario.parse()
    }

    fn link_setup(&self, pa: Option<PaParams>) -> LinkSetup {
        LinkSetup {
            ofdm: self.ofdm,
            tx: self.tx,
            rx: self.rx,
            pa,
            delay: self.channel.frame_delay,
        }
    }

    fn default_pa(&self) -> Option<PaParams> {
        self.pa.enabled.then(|| self.pa.params(self.pa.backoff_db))
    }

    fn input_files(&self) -> Vec<&Path> {
        let ex = &self.experiment;
        let bridge = ex
            .sources
            .contains(&SourceKind::Bridge)
            .then_some(ex.bridge_path.as_deref())
            .flatten();
        [self.codec.png.as_deref(), self.codec.raw.as_deref(), bridge]
            .into_iter()
            .flatten()
            .collect()
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub shuffle_seed: Option<u64>,
    pub no_shuffle: bool,
}

impl RunOptions {
    fn apply(&self, cfg: &mut Config) {
        let ex = &mut cfg.experiment;
        if let Some(s) = &self.scenario {
            ex.scenario = s.clone();
        }
        if let Some(seed) = self.seed {
            ex.seed = seed;
        }
        if let Some(w) = self.workers {
            ex.workers = w;
        }
        if let Some(s) = self.shuffle_seed {
            ex.shuffle_seed = Some(s);
        }
        if self.no_shuffle {
            ex.shuffle = false;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Run record, sufficient to regenerate `results.csv` byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub software: String,
    pub csv_schema_version: u32,
    pub scenario: String,
    pub master_seed: u64,
    pub rng_algorithm: String,
    pub shuffle_algorithm: String,
    pub shuffle: bool,
    pub shuffle_seed: Option<u64>,
    pub workers: usize,
    pub trials: usize,
    pub trial_seeds: Vec<u64>,
    pub config_text: String,
    pub config_sha256: String,
    pub inputs: Vec<InputDigest>,
    pub results_file: String,
    pub results_rows: usize,
    pub results_sha256: String,
}

pub fn software_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output of an in-memory run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub csv: Vec<u8>,
    pub manifest: Manifest,
}

/// Runs the configured scenario without touching the output directory.
pub fn execute(config_text: &str, options: &RunOptions) -> Result<RunOutput> {
    let mut cfg = Config::parse(config_text)?;
    options.apply(&mut cfg);
    cfg.validate()?;
    let scenario = cfg.scenario()?;
    let ex = &cfg.experiment;
    let trial_seeds: Vec<u64> = (0..ex.trials as u64)
        .map(|t| trial_seed(ex.seed, scenario.name(), t))
        .collect();
    let exec = Execution::from_workers(ex.workers);
    let (csv, rows) = match scenario {
        Scenario::LinearRegion => linear_region(&cfg, &trial_seeds, exec)?,
        Scenario::PaprSweep => papr_sweep(&cfg, &trial_seeds, exec)?,
        Scenario::ErrorSpectrum => error_spectrum_table(&cfg, &trial_seeds, exec)?,
    };
    let inputs = cfg
        .input_files()
        .into_iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.to_path_buf(),
                sha256: sha256_hex(&fs::read(p)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        software: software_version(),
        csv_schema_version: CSV_SCHEMA_VERSION,
        scenario: scenario.name().into(),
        master_seed: ex.seed,
        rng_algorithm: RNG_ALGORITHM.into(),
        shuffle_algorithm: SHUFFLE_ALGORITHM.into(),
        shuffle: ex.shuffle,
        shuffle_seed: ex.shuffle_seed,
        workers: ex.workers,
        trials: ex.trials,
        trial_seeds,
        config_text: config_text.into(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        inputs,
        results_file: RESULTS_FILE.into(),
        results_rows: rows,
        results_sha256: sha256_hex(&csv),
    };
    Ok(RunOutput { csv, manifest })
}

/// Runs an experiment and writes `results.csv` and `manifest.json` into `out_dir`.
pub fn run_experiment(config_text: &str, options: &RunOptions, out_dir: &Path) -> Result<Manifest> {
    let out = execute(config_text, options)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(RESULTS_FILE), &out.csv)?;
    fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&out.manifest)? + "\n",
    )?;
    Ok(out.manifest)
}

/// Reads a manifest and regenerates its CSV. The config text, input files
/// and regenerated CSV are all checked against the recorded hashes. With
/// `out_dir` the regenerated CSV is written there.
pub fn replay(manifest_path: &Path, out_dir: Option<&Path>) -> Result<Vec<u8>> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Replay(format!("cannot read manifest {}: {e}", manifest_path.display())))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::Replay(format!("unsupported manifest version {}", m.format_version)));
    }
    if m.software != software_version() {
        return Err(Error::Replay(format!(
            "manifest written by {}, this is {}",
            m.software,
            software_version()
        )));
    }
    if sha256_hex(m.config_text.as_bytes()) != m.config_sha256 {
        return Err(Error::Replay("config text does not match its recorded hash".into()));
    }
    for input in &m.inputs {
        let bytes = fs::read(&input.path)
            .map_err(|e| Error::Replay(format!("input {}: {e}", input.path.display())))?;
        if sha256_hex(&bytes) != input.sha256 {
            return Err(Error::Replay(format!("input {} changed since the run", input.path.display())));
        }
    }
    let options = RunOptions {
        scenario: Some(m.scenario.clone()),
        seed: Some(m.master_seed),
        workers: Some(m.workers),
        shuffle_seed: m.shuffle_seed,
        no_shuffle: !m.shuffle,
    };
    let out = execute(&m.config_text, &options)?;
    if out.manifest.trial_seeds != m.trial_seeds {
        return Err(Error::Replay("trial seeds differ from the manifest".into()));
    }
    if out.manifest.results_sha256 != m.results_sha256 {
        return Err(Error::Replay(format!(
            "regenerated results hash {} differs from recorded {}",
            out.manifest.results_sha256, m.results_sha256
        )));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(&m.results_file), &out.csv)?;
    }
    Ok(out.csv)
}

/// Rows tagged with (point, trial), written in that order.
fn write_rows<R: Serialize>(mut rows: Vec<(usize, usize, R)>) -> Result<(Vec<u8>, usize)> {
    rows.sort_by_key(|(p, t, _)| (*p, *t));
    let n = rows.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    for (_, _, r) in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok((bytes, n))
}

fn shuffle_axis(cfg: &Config) -> Vec<bool> {
    if cfg.experiment.shuffle {
        vec![true, false]
    } else {
        vec![false]
    }
}

fn plan_for(cfg: &Config, shuffle: bool, n: usize, seed: u64) -> Result<ShufflePlan> {
    if shuffle {
        make_plan(cfg.experiment.shuffle_seed.unwrap_or_else(|| derive_seed(seed, SHUFFLE_TAG)), n)
    } else {
        ShufflePlan::identity(n)
    }
}

fn trial_images(cfg: &Config, loaded: &Option<Vec<SourceImage>>, seed: u64) -> Vec<SourceImage> {
    match loaded {
        Some(tiles) => tiles.clone(),
        None => {
            let base = derive_seed(seed, IMAGE_TAG);
            (0..cfg.codec.images)
                .map(|i| SourceImage::synthetic(TILE.0, TILE.1, TILE.2, derive_seed(base, i as u64)))
                .collect()
        }
    }
}

#[derive(Debug, Serialize)]
struct LinearRow {
    point: usize,
    trial: usize,
    trial_seed: u64,
    channel: &'static str,
    shuffle: bool,
    snr_db: f64,
    rx_snr_db: f64,
    evm_rms: f64,
    mse: f64,
    psnr_db: f64,
    papr_p95_db: f64,
    timing_offset: usize,
    singular_cells: usize,
}

fn linear_region(cfg: &Config, seeds: &[u64], exec: Execution) -> Result<(Vec<u8>, usize)> {
    let codec = cfg.codec.build()?;
    let loaded = cfg.codec.load_images()?;
    let ex = &cfg.experiment;
    let shuffles = shuffle_axis(cfg);
    let setup = cfg.link_setup(cfg.default_pa());
    let trials: Vec<(usize, u64)> = seeds.iter().copied().enumerate().collect();
    let per_trial = par_map(&trials, exec, |&(t, seed)| {
        let images = trial_images(cfg, &loaded, seed);
        let payload = codec.encode_batch(&images)?;
        let mut rows = Vec::new();
        let mut point = 0;
        for &profile in &ex.channels {
            let ch = cfg.channel.realize(profile, cfg.ofdm.n_streams, seed)?;
            for &snr_db in &ex.snr_db {
                for &shuffle in &shuffles {
                    let plan = plan_for(cfg, shuffle, payload.len(), seed)?;
                    let noise = NoiseSpec {
                        snr_db,
                        reference: ex.noise_reference,
                        seed: derive_seed(seed, NOISE_TAG),
                    };
                    let report = run_link(&payload, &setup, &ch, &plan, &noise)?;
                    let decoded = codec.decode_batch(&report.rx.recovered)?;
                    let m = pooled_mse(&images, &decoded)?;
                    rows.push((
                        point,
                        t,
                        LinearRow {
                            point,
                            trial: t,
                            trial_seed: seed,
                            channel: profile.label(),
                            shuffle,
                            snr_db,
                            rx_snr_db: report.rx.rx_snr_db,
                            evm_rms: report.rx.evm_rms,
                            mse: m,
                            psnr_db: psnr_from_mse(m, 1.0),
                            papr_p95_db: report.papr.p95_db,
                            timing_offset: report.rx.timing_offset,
                            singular_cells: report.rx.singular_cells,
                        },
                    ));
                    point += 1;
                }
            }
        }
        Ok(rows)
    })?;
    write_rows(per_trial.into_iter().flatten().collect())
}

/// Mean squared error over all pixels of all images.
pub fn pooled_mse(reference: &[SourceImage], test: &[SourceImage]) -> Result<f64> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::SizeMismatch {
            expected: reference.len(),
            got: test.len(),
        });
    }
    let mut total = 0.0;
    for (r, t) in reference.iter().zip(test) {
        total += mse(r, t)?;
    }
    Ok(total / reference.len() as f64)
}

#[derive(Debug, Serialize)]
struct PaprRow {
    point: usize,
    trial: usize,
    trial_seed: u64,
    source: &'static str,
    backoff_db: f64,
    input_power_db: f64,
    rx_snr_db: f64,
    evm_rms: f64,
    papr_p50_db: f64,
    papr_p95_db: f64,
    papr_p99_db: f64,
    sync_peak_ratio: Option<f64>,
}

/// Symbols for one source, rescaled to unit mean power.
pub fn source_symbols(kind: SourceKind, n: usize, seed: u64, bridge: Option<&[Cplx]>) -> Result<Vec<Cplx>> {
    let raw = match kind {
        SourceKind::Gaussian => gaussian_source(seed, n),
        SourceKind::Qam4 => QamCodec::new(4)?.random_symbols(n, seed),
        SourceKind::Qam16 => QamCodec::new(16)?.random_symbols(n, seed),
        SourceKind::Qam64 => QamCodec::new(64)?.random_symbols(n, seed),
        SourceKind::Qam256 => QamCodec::new(256)?.random_symbols(n, seed),
        SourceKind::Bridge => bridge
            .ok_or_else(|| Error::config("experiment.bridge_path", "no bridged symbols loaded"))?
            .to_vec(),
    };
    let power = raw.iter().map(|v| v.norm_sqr()).sum::<f64>() / raw.len() as f64;
    if !(power > 0.0) {
        return Err(Error::invalid(format!("{} source has zero power", kind.label())));
    }
    let g = power.sqrt().recip();
    Ok(raw.into_iter().map(|v| v * g).collect())
}

fn papr_sweep(cfg: &Config, seeds: &[u64], exec: Execution) -> Result<(Vec<u8>, usize)> {
    let ex = &cfg.experiment;
    let bridge = match (ex.sources.contains(&SourceKind::Bridge), &ex.bridge_path) {
        (true, Some(p)) => Some(bridge_import(p)?),
        _ => None,
    };
    let trials: Vec<(usize, u64)> = seeds.iter().copied().enumerate().collect();
    let per_trial = par_map(&trials, exec, |&(t, seed)| {
        let ch = cfg.channel.realize(cfg.channel.profile, cfg.ofdm.n_streams, seed)?;
        let noise = NoiseSpec {
            snr_db: ex.pa_noise_db + 20.0 * cfg.pa.sat.log10(),
            reference: NoiseReference::Absolute,
            seed: derive_seed(seed, NOISE_TAG),
        };
        let mut rows = Vec::new();
        let mut point = 0;
        for (i, &kind) in ex.sources.iter().enumerate() {
            let src_seed = derive_seed(derive_seed(seed, SOURCE_TAG), i as u64);
            let payload = source_symbols(kind, ex.payload_symbols, src_seed, bridge.as_deref())?;
            let plan = plan_for(cfg, ex.shuffle, payload.len(), seed)?;
            for &backoff_db in &ex.backoff_db {
                let setup = cfg.link_setup(Some(cfg.pa.params(backoff_db)));
                let report = run_link(&payload, &setup, &ch, &plan, &noise)?;
                rows.push((
                    point,
                    t,
                    PaprRow {
                        point,
                        trial: t,
                        trial_seed: seed,
                        source: kind.label(),
                        backoff_db,
                        input_power_db: report.pa_input_power_db.unwrap_or(f64::NAN),
                        rx_snr_db: report.rx.rx_snr_db,
                        evm_rms: report.rx.evm_rms,
                        papr_p50_db: report.papr.p50_db,
                        papr_p95_db: report.papr.p95_db,
                        papr_p99_db: report.papr.p99_db,
                        sync_peak_ratio: report.sync_peak_ratio,
                    },
                ));
                point += 1;
            }
        }
        Ok(rows)
    })?;
    write_rows(per_trial.into_iter().flatten().collect())
}

#[derive(Debug, Serialize)]
struct SpectrumRow {
    point: usize,
    trial: usize,
    trial_seed: u64,
    shuffle: bool,
    view: &'static str,
    stream: usize,
    subcarrier_index: usize,
    signed_bin: isize,
    mean_err_power: f64,
    count: usize,
}

fn error_spectrum_table(cfg: &Config, seeds: &[u64], exec: Execution) -> Result<(Vec<u8>, usize)> {
    let codec = cfg.codec.build()?;
    let loaded = cfg.codec.load_images()?;
    let ex = &cfg.experiment;
    let shuffles = shuffle_axis(cfg);
    let setup = cfg.link_setup(cfg.default_pa());
    let trials: Vec<(usize, u64)> = seeds.iter().copied().enumerate().collect();
    let per_trial = par_map(&trials, exec, |&(t, seed)| {
        let payload = codec.encode_batch(&trial_images(cfg, &loaded, seed))?;
        let ch = cfg.channel.realize(ProfileName::TwoTap, cfg.ofdm.n_streams, seed)?;
        let noise = NoiseSpec {
            snr_db: ex.spectrum_snr_db,
            reference: ex.noise_reference,
            seed: derive_seed(seed, NOISE_TAG),
        };
        let mut rows = Vec::new();
        let mut point = 0;
        for &shuffle in &shuffles {
            let plan = plan_for(cfg, shuffle, payload.len(), seed)?;
            let report = run_link(&payload, &setup, &ch, &plan, &noise)?;
            let views: [(&'static str, &Vec<Vec<SpectrumBin>>); 2] = [
                ("physical", &report.spectrum.physical),
                ("unshuffled", &report.spectrum.unshuffled),
            ];
            for (view, bins) in views {
                for (stream, row) in bins.iter().enumerate() {
                    for (k, bin) in row.iter().enumerate() {
                        rows.push((
                            point,
                            t,
                            SpectrumRow {
                                point,
                                trial: t,
                                trial_seed: seed,
                                shuffle,
                                view,
                                stream,
                                subcarrier_index: k,
                                signed_bin: cfg.ofdm.signed_bin(k),
                                mean_err_power: bin.mean(),
                                count: bin.count,
                            },
                        ));
                        point += 1;
                    }
                }
            }
        }
        Ok(rows)
    })?;
    write_rows(per_trial.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        let err = "fig5".parse::<Scenario>().unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "experiment.scenario"));
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = Config::parse("[channel]\nprofil = \"flat\"\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert!(key.starts_with("channel"), "{key}"),
            other => panic!("{other:?}"),
        }
        let err = Config::parse("[ofdm]\nfft_size = \"big\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "ofdm.fft_size"), "{err:?}");
    }

    #[test]
    fn empty_config_is_valid() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg, Config::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_names_keys() {
        let mut cfg = Config::default();
        cfg.experiment.trials = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config { ref key, .. }) if key == "experiment.trials"));
        let mut cfg = Config::default();
        cfg.experiment.sources.push(SourceKind::Bridge);
        assert!(matches!(cfg.validate(), Err(Error::Config { ref key, .. }) if key == "experiment.bridge_path"));
    }

    #[test]
    fn options_override_config() {
        let mut cfg = Config::default();
        RunOptions {
            scenario: Some("papr_sweep".into()),
            seed: Some(9),
            workers: Some(3),
            shuffle_seed: Some(4),
            no_shuffle: true,
        }
        .apply(&mut cfg);
        assert_eq!(cfg.scenario().unwrap(), Scenario::PaprSweep);
        assert_eq!(cfg.experiment.seed, 9);
        assert_eq!(cfg.experiment.workers, 3);
        assert_eq!(cfg.experiment.shuffle_seed, Some(4));
        assert!(!cfg.experiment.shuffle);
    }

    #[test]
    fn sources_have_unit_power() {
        for kind in [SourceKind::Gaussian, SourceKind::Qam4, SourceKind::Qam256] {
            let x = source_symbols(kind, 1000, 3, None).unwrap();
            let p = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / 1000.0;
            assert!((p - 1.0).abs() < 1e-12);
        }
        assert!(source_symbols(SourceKind::Bridge, 10, 0, None).is_err());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
