//! OFDM numerology, resource-grid layout, pilot pattern and the canonical
//! mapping between flat symbol sequences and grid cells.
//!
//! A grid is organised in blocks of `symbols_per_block` OFDM symbols. The
//! symbol at `pilot_symbol_index` of every block carries pilots; stream `s`
//! owns the used subcarriers whose index is `≡ s (mod n_streams)` and leaves
//! the others empty, so per-stream pilots never overlap. All remaining cells
//! carry data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::Cplx;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmParams {
    pub fft_size: usize,
    pub used_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub cp_len: usize,
    pub symbols_per_block: usize,
    pub pilot_symbol_index: usize,
    pub n_streams: usize,
    pub dc_null: bool,
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self {
            fft_size: 128,
            used_subcarriers: 72,
            subcarrier_spacing_hz: 15_000.0,
            cp_len: 10,
            symbols_per_block: 7,
            pilot_symbol_index: 0,
            n_streams: 2,
            dc_null: true,
        }
    }
}

impl OfdmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(format!("ofdm.{key}"), msg));
        if self.n_streams == 0 {
            return bad("n_streams", "must be at least 1");
        }
        if self.used_subcarriers == 0 {
            return bad("used_subcarriers", "must be at least 1");
        }
        if self.fft_size == 0 || self.used_subcarriers >= self.fft_size {
            return bad("used_subcarriers", "must be smaller than fft_size");
        }
        if self.dc_null && !self.used_subcarriers.is_multiple_of(2) {
            return bad("used_subcarriers", "must be even when dc_null is set");
        }
        if self.symbols_per_block < 2 {
            return bad("symbols_per_block", "must be at least 2");
        }
        if self.pilot_symbol_index >= self.symbols_per_block {
            return bad("pilot_symbol_index", "must lie inside the block");
        }
        if !(self.subcarrier_spacing_hz > 0.0) {
            return bad("subcarrier_spacing_hz", "must be positive");
        }
        if self.cp_len > self.fft_size {
            return bad("cp_len", "must not exceed fft_size");
        }
        Ok(())
    }

    /// Useful OFDM symbol duration in seconds, CP excluded.
    pub fn symbol_duration_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.fft_size as f64 * self.subcarrier_spacing_hz
    }

    pub fn data_symbols_per_block(&self) -> usize {
        self.symbols_per_block - 1
    }

    /// Data cells available in one block across all streams.
    pub fn block_capacity(&self) -> usize {
        self.n_streams * self.used_subcarriers * self.data_symbols_per_block()
    }

    pub fn is_pilot_symbol(&self, symbol: usize) -> bool {
        symbol % self.symbols_per_block == self.pilot_symbol_index
    }

    /// Stream whose pilot occupies `subcarrier` on pilot symbols.
    pub fn pilot_owner(&self, subcarrier: usize) -> usize {
        subcarrier % self.n_streams
    }

    /// Signed frequency bin of used subcarrier `index` (lowest frequency first).
    pub fn signed_bin(&self, index: usize) -> isize {
        let half = (self.used_subcarriers / 2) as isize;
        let i = index as isize;
        if self.dc_null {
            if i < half {
                i - half
            } else {
                i - half + 1
            }
        } else {
            i - half
        }
    }

    /// FFT bin (0..fft_size) of used subcarrier `index`.
    pub fn fft_bin(&self, index: usize) -> usize {
        self.signed_bin(index).rem_euclid(self.fft_size as isize) as usize
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.fft_size + self.cp_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellRole {
    Data,
    Pilot(usize),
    Null,
}

/// Unit-power 4-QAM pilot values, one per used subcarrier, reused on every
/// pilot symbol. Each value is transmitted only by the subcarrier's owner.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotSequence {
    values: Vec<Cplx>,
}

impl PilotSequence {
    pub fn value(&self, subcarrier: usize) -> Cplx {
        self.values[subcarrier]
    }

    pub fn values(&self) -> &[Cplx] {
        &self.values
    }
}

pub fn make_pilot_sequence(seed: u64, params: &OfdmParams) -> PilotSequence {
    let mut rng = SplitMix64::new(seed);
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let values = (0..params.used_subcarriers)
        .map(|_| {
            let re = if rng.bit() { -a } else { a };
            let im = if rng.bit() { -a } else { a };
            Cplx::new(re, im)
        })
        .collect();
    PilotSequence { values }
}

/// streams × symbols × used subcarriers array of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    params: OfdmParams,
    n_symbols: usize,
    cells: Vec<Cplx>,
}

impl ResourceGrid {
    pub fn zeros(params: OfdmParams, n_blocks: usize) -> Self {
        let n_symbols = n_blocks * params.symbols_per_block;
        Self::with_symbols(params, n_symbols)
    }

    pub(crate) fn with_symbols(params: OfdmParams, n_symbols: usize) -> Self {
        let len = params.n_streams * n_symbols * params.used_subcarriers;
        Self {
            params,
            n_symbols,
            cells: vec![Cplx::new(0.0, 0.0); len],
        }
    }

    pub fn params(&self) -> &OfdmParams {
        &self.params
    }

    pub fn n_streams(&self) -> usize {
        self.params.n_streams
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn n_blocks(&self) -> usize {
        self.n_symbols / self.params.symbols_per_block
    }

    pub fn n_subcarriers(&self) -> usize {
        self.params.used_subcarriers
    }

    #[inline]
    fn index(&self, stream: usize, symbol: usize, subcarrier: usize) -> usize {
        (stream * self.n_symbols + symbol) * self.params.used_subcarriers + subcarrier
    }

    #[inline]
    pub fn get(&self, stream: usize, symbol: usize, subcarrier: usize) -> Cplx {
        self.cells[self.index(stream, symbol, subcarrier)]
    }

    #[inline]
    pub fn set(&mut self, stream: usize, symbol: usize, subcarrier: usize, value: Cplx) {
        let i = self.index(stream, symbol, subcarrier);
        self.cells[i] = value;
    }

    /// Used-subcarrier values of one OFDM symbol of one stream.
    pub fn symbol(&self, stream: usize, symbol: usize) -> &[Cplx] {
        let start = self.index(stream, symbol, 0);
        &self.cells[start..start + self.params.used_subcarriers]
    }

    pub fn symbol_mut(&mut self, stream: usize, symbol: usize) -> &mut [Cplx] {
        let start = self.index(stream, symbol, 0);
        let n = self.params.used_subcarriers;
        &mut self.cells[start..start + n]
    }

    pub fn role(&self, stream: usize, symbol: usize, subcarrier: usize) -> CellRole {
        if self.params.is_pilot_symbol(symbol) {
            if self.params.pilot_owner(subcarrier) == stream {
                CellRole::Pilot(stream)
            } else {
                CellRole::Null
            }
        } else {
            CellRole::Data
        }
    }

    /// Role of every cell in storage order (stream, symbol, subcarrier).
    pub fn roles(&self) -> Vec<CellRole> {
        let mut out = Vec::with_capacity(self.cells.len());
        for s in 0..self.n_streams() {
            for t in 0..self.n_symbols {
                for k in 0..self.params.used_subcarriers {
                    out.push(self.role(s, t, k));
                }
            }
        }
        out
    }

    pub fn cells(&self) -> &[Cplx] {
        &self.cells
    }
}

/// Address of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub stream: usize,
    pub symbol: usize,
    pub subcarrier: usize,
}

/// Ordered list of every data cell of a grid. The first `n_payload` entries
/// carry payload; the rest are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    cells: Vec<CellIndex>,
    n_payload: usize,
    n_blocks: usize,
}

impl GridMap {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn n_payload(&self) -> usize {
        self.n_payload
    }

    pub fn n_padding(&self) -> usize {
        self.cells.len() - self.n_payload
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn cells(&self) -> &[CellIndex] {
        &self.cells
    }

    pub fn is_padding(&self, position: usize) -> bool {
        position >= self.n_payload
    }
}

/// Lays out enough whole blocks for `n_payload_symbols` in canonical order:
/// stream-major, then OFDM symbol, then subcarrier.
pub fn build_grid_map(params: &OfdmParams, n_payload_symbols: usize) -> Result<GridMap> {
    params.validate()?;
    if n_payload_symbols == 0 {
        return Err(Error::invalid("payload must contain at least one symbol"));
    }
    let capacity = params.block_capacity();
    let n_blocks = n_payload_symbols.div_ceil(capacity);
    let n_symbols = n_blocks * params.symbols_per_block;
    let mut cells = Vec::with_capacity(n_blocks * capacity);
    for stream in 0..params.n_streams {
        for symbol in (0..n_symbols).filter(|&t| !params.is_pilot_symbol(t)) {
            for subcarrier in 0..params.used_subcarriers {
                cells.push(CellIndex {
                    stream,
                    symbol,
                    subcarrier,
                });
            }
        }
    }
    Ok(GridMap {
        cells,
        n_payload: n_payload_symbols,
        n_blocks,
    })
}

/// Places `symbols` on the data cells of a fresh grid and inserts pilots
/// scaled by `pilot_gain`. Padding and null cells stay zero.
pub fn map_symbols(
    symbols: &[Cplx],
    map: &GridMap,
    params: &OfdmParams,
    pilots: &PilotSequence,
    pilot_gain: f64,
) -> Result<ResourceGrid> {
    if symbols.is_empty() {
        return Err(Error::invalid("cannot map an empty symbol sequence"));
    }
    if symbols.len() > map.len() {
        return Err(Error::SizeMismatch {
            expected: map.len(),
            got: symbols.len(),
        });
    }
    if pilots.values.len() != params.used_subcarriers {
        return Err(Error::SizeMismatch {
            expected: params.used_subcarriers,
            got: pilots.values.len(),
        });
    }
    let mut grid = ResourceGrid::zeros(*params, map.n_blocks());
    for (cell, &value) in map.cells().iter().zip(symbols) {
        grid.set(cell.stream, cell.symbol, cell.subcarrier, value);
    }
    insert_pilots(&mut grid, pilots, pilot_gain);
    Ok(grid)
}

pub(crate) fn insert_pilots(grid: &mut ResourceGrid, pilots: &PilotSequence, gain: f64) {
    let params = *grid.params();
    for symbol in (0..grid.n_symbols()).filter(|&t| params.is_pilot_symbol(t)) {
        for k in 0..params.used_subcarriers {
            let owner = params.pilot_owner(k);
            grid.set(owner, symbol, k, pilots.value(k) * gain);
        }
    }
}

/// Reads the first `n_payload` data cells back in canonical order.
pub fn demap_symbols(grid: &ResourceGrid, map: &GridMap, n_payload: usize) -> Result<Vec<Cplx>> {
    if n_payload > map.len() {
        return Err(Error::SizeMismatch {
            expected: map.len(),
            got: n_payload,
        });
    }
    if grid.n_blocks() != map.n_blocks() || grid.n_streams() != map_streams(map) {
        return Err(Error::invalid("grid shape does not match the grid map"));
    }
    Ok(map.cells()[..n_payload]
        .iter()
        .map(|c| grid.get(c.stream, c.symbol, c.subcarrier))
        .collect())
}

fn map_streams(map: &GridMap) -> usize {
    map.cells().last().map_or(0, |c| c.stream + 1)
}
