//! Source-to-symbol codecs and the symbol file bridge.
//!
//! [`LinearCodec`] is an analog projection codec: symbols are linear
//! functions of the mean-centred image and feed the decoder without any
//! quantization, so reconstruction quality degrades smoothly with noise.
//! [`QamCodec`] is a digital reference (8-bit pixels, Gray-mapped QAM,
//! hard decisions). [`gaussian_source`] produces unconstrained symbols.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::Cplx;

/// Row-major `h × w × channels` image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceImage {
    h: usize,
    w: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl SourceImage {
    pub fn new(h: usize, w: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != h * w * channels {
            return Err(Error::SizeMismatch {
                expected: h * w * channels,
                got: pixels.len(),
            });
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixel intensities must be finite and within [0, 1]"));
        }
        Ok(Self { h, w, channels, pixels })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// 8-bit samples are mapped to `value / 255`.
    pub fn from_bytes(h: usize, w: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(h, w, channels, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    /// Channel-planar bytes (all of channel 0, then channel 1, ...).
    pub fn from_planar_bytes(h: usize, w: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let plane = h * w;
        if bytes.len() != plane * channels {
            return Err(Error::SizeMismatch {
                expected: plane * channels,
                got: bytes.len(),
            });
        }
        let mut pixels = vec![0.0; bytes.len()];
        for c in 0..channels {
            for i in 0..plane {
                pixels[i * channels + c] = bytes[c * plane + i] as f64 / 255.0;
            }
        }
        Self::new(h, w, channels, pixels)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_bytes(h as usize, w as usize, 3, img.as_raw())
    }

    /// Smooth seeded test pattern: a few random plane waves per channel.
    pub fn synthetic(h: usize, w: usize, channels: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let waves: Vec<Vec<(f64, f64, f64, f64)>> = (0..channels)
            .map(|_| {
                (0..4)
                    .map(|_| {
                        let fx = rng.below(4) as f64;
                        let fy = rng.below(4) as f64;
                        let phase = rng.next_f64() * std::f64::consts::TAU;
                        let amp = 0.05 + 0.1 * rng.next_f64();
                        (fx, fy, phase, amp)
                    })
                    .collect()
            })
            .collect();
        let mut pixels = Vec::with_capacity(h * w * channels);
        for y in 0..h {
            for x in 0..w {
                for wave in &waves {
                    let v: f64 = wave
                        .iter()
                        .map(|&(fx, fy, phase, amp)| {
                            let arg = std::f64::consts::TAU * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64);
                            amp * (arg + phase).cos()
                        })
                        .sum();
                    pixels.push((0.5 + v).clamp(0.0, 1.0));
                }
            }
        }
        Self { h, w, channels, pixels }
    }

    /// Cuts the image into `th × tw` tiles, row by row; dimensions must divide evenly.
    pub fn tiles(&self, th: usize, tw: usize) -> Result<Vec<SourceImage>> {
        if th == 0 || tw == 0 || !self.h.is_multiple_of(th) || !self.w.is_multiple_of(tw) {
            return Err(Error::invalid(format!(
                "{}x{} image does not split into {th}x{tw} tiles",
                self.h, self.w
            )));
        }
        let c = self.channels;
        let mut out = Vec::with_capacity((self.h / th) * (self.w / tw));
        for r0 in (0..self.h).step_by(th) {
            for c0 in (0..self.w).step_by(tw) {
                let mut pixels = Vec::with_capacity(th * tw * c);
                for y in r0..r0 + th {
                    let start = (y * self.w + c0) * c;
                    pixels.extend_from_slice(&self.pixels[start..start + tw * c]);
                }
                out.push(Self {
                    h: th,
                    w: tw,
                    channels: c,
                    pixels,
                });
            }
        }
        Ok(out)
    }

    /// Places equally sized tiles row by row on a `cols`-wide canvas.
    pub fn assemble(tiles: &[SourceImage], cols: usize) -> Result<Self> {
        let first = tiles.first().ok_or_else(|| Error::invalid("no tiles to assemble"))?;
        if cols == 0 || !tiles.len().is_multiple_of(cols) {
            return Err(Error::invalid("tile count must be a multiple of the column count"));
        }
        let (th, tw, c) = first.shape();
        if tiles.iter().any(|t| t.shape() != first.shape()) {
            return Err(Error::invalid("tiles differ in shape"));
        }
        let rows = tiles.len() / cols;
        let (h, w) = (rows * th, cols * tw);
        let mut pixels = vec![0.0; h * w * c];
        for (i, tile) in tiles.iter().enumerate() {
            let (r0, c0) = ((i / cols) * th, (i % cols) * tw);
            for y in 0..th {
                let dst = ((r0 + y) * w + c0) * c;
                let src = y * tw * c;
                pixels[dst..dst + tw * c].copy_from_slice(&tile.pixels[src..src + tw * c]);
            }
        }
        Self::new(h, w, c, pixels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecDescriptor {
    pub name: String,
    pub symbols_per_source: usize,
    pub source_shape: (usize, usize, usize),
}

impl CodecDescriptor {
    /// Complex channel symbols per source sample.
    pub fn bandwidth_ratio(&self) -> f64 {
        let (h, w, c) = self.source_shape;
        self.symbols_per_source as f64 / (h * w * c) as f64
    }
}

pub trait Codec: Send + Sync {
    fn descriptor(&self) -> &CodecDescriptor;

    fn encode(&self, image: &SourceImage) -> Result<Vec<Cplx>>;

    fn decode(&self, symbols: &[Cplx]) -> Result<SourceImage>;

    fn encode_batch(&self, images: &[SourceImage]) -> Result<Vec<Cplx>> {
        let mut out = Vec::with_capacity(images.len() * self.descriptor().symbols_per_source);
        for img in images {
            out.extend(self.encode(img)?);
        }
        Ok(out)
    }

    fn decode_batch(&self, symbols: &[Cplx]) -> Result<Vec<SourceImage>> {
        let n = self.descriptor().symbols_per_source;
        if !symbols.len().is_multiple_of(n) {
            return Err(Error::SizeMismatch {
                expected: symbols.len().div_ceil(n) * n,
                got: symbols.len(),
            });
        }
        symbols.chunks_exact(n).map(|c| self.decode(c)).collect()
    }
}

fn check_shape(desc: &CodecDescriptor, image: &SourceImage) -> Result<()> {
    if image.shape() != desc.source_shape {
        return Err(Error::invalid(format!(
            "codec `{}` expects shape {:?}, got {:?}",
            desc.name,
            desc.source_shape,
            image.shape()
        )));
    }
    Ok(())
}

/// Projection codec with a seeded orthonormal basis.
///
/// The basis is `n = 2·symbols` rows of an orthonormal DCT-II matrix,
/// applied to sign-flipped, permuted pixels; rows `u_k` and `v_k` form
/// symbol row `a_k = (u_k + j·v_k)/√2`, so `A·Aᴴ = I`. Decoding takes
/// `2·Re(Aᴴy)`, which is the orthogonal projection onto the real span of
/// the basis.
#[derive(Debug, Clone)]
pub struct LinearCodec {
    descriptor: CodecDescriptor,
    /// `2·symbols` rows of `dim` values; row `k` is `u_k`, row `symbols + k` is `v_k`.
    basis: Vec<f64>,
    dim: usize,
    prior_mean: f64,
}

impl LinearCodec {
    pub fn new(seed: u64, shape: (usize, usize, usize), symbols: usize) -> Result<Self> {
        let dim = shape.0 * shape.1 * shape.2;
        if symbols == 0 || 2 * symbols > dim {
            return Err(Error::invalid(format!(
                "{symbols} complex symbols cannot be drawn from {dim} pixels"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let mut freqs: Vec<usize> = (0..dim).collect();
        let mut perm: Vec<usize> = (0..dim).collect();
        for v in [&mut freqs, &mut perm] {
            for i in (1..dim).rev() {
                v.swap(i, rng.below(i as u64 + 1) as usize);
            }
        }
        let signs: Vec<f64> = (0..dim).map(|_| if rng.bit() { -1.0 } else { 1.0 }).collect();
        let n = dim as f64;
        let mut basis = Vec::with_capacity(2 * symbols * dim);
        for &k in &freqs[..2 * symbols] {
            let alpha = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            basis.extend((0..dim).map(|i| {
                let j = perm[i] as f64;
                alpha * signs[i] * (std::f64::consts::PI * (2.0 * j + 1.0) * k as f64 / (2.0 * n)).cos()
            }));
        }
        Ok(Self {
            descriptor: CodecDescriptor {
                name: format!("linear-{seed}"),
                symbols_per_source: symbols,
                source_shape: shape,
            },
            basis,
            dim,
            prior_mean: 0.5,
        })
    }

    /// 32×32×3 images to 512 symbols.
    pub fn standard(seed: u64) -> Self {
        Self::new(seed, (32, 32, 3), 512).expect("valid default shape")
    }

    pub fn with_prior_mean(mut self, mean: f64) -> Self {
        self.prior_mean = mean;
        self
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.basis[i * self.dim..(i + 1) * self.dim]
    }

    /// Row `k` of the complex encoding matrix.
    pub fn matrix_row(&self, k: usize) -> Vec<Cplx> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let n = self.descriptor.symbols_per_source;
        self.row(k)
            .iter()
            .zip(self.row(n + k))
            .map(|(&u, &v)| Cplx::new(u * s, v * s))
            .collect()
    }

    fn reconstruct(&self, symbols: &[Cplx], offset: f64) -> Vec<f64> {
        let n = self.descriptor.symbols_per_source;
        let scale = std::f64::consts::SQRT_2;
        let mut out = vec![offset; self.dim];
        for (k, y) in symbols.iter().enumerate() {
            let (a, b) = (y.re * scale, y.im * scale);
            for ((o, &u), &v) in out.iter_mut().zip(self.row(k)).zip(self.row(n + k)) {
                *o += a * u + b * v;
            }
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl Codec for LinearCodec {
    fn descriptor(&self) -> &CodecDescriptor {
        &self.descriptor
    }

    fn encode(&self, image: &SourceImage) -> Result<Vec<Cplx>> {
        check_shape(&self.descriptor, image)?;
        let mu = mean(image.pixels());
        let centred: Vec<f64> = image.pixels().iter().map(|p| p - mu).collect();
        let n = self.descriptor.symbols_per_source;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let dot = |row: &[f64]| row.iter().zip(&centred).map(|(a, b)| a * b).sum::<f64>();
        Ok((0..n)
            .map(|k| Cplx::new(dot(self.row(k)) * s, dot(self.row(n + k)) * s))
            .collect())
    }

    /// The image mean is not transmitted; decoding adds the codec's prior
    /// mean (0.5 unless set with [`LinearCodec::with_prior_mean`]).
    fn decode(&self, symbols: &[Cplx]) -> Result<SourceImage> {
        self.decode_with_mean(symbols, self.prior_mean)
    }
}

impl LinearCodec {
    /// Decodes with a known image mean, e.g. one sent as side information.
    pub fn decode_with_mean(&self, symbols: &[Cplx], mean: f64) -> Result<SourceImage> {
        let n = self.descriptor.symbols_per_source;
        if symbols.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                got: symbols.len(),
            });
        }
        let cleaned: Vec<Cplx> = symbols
            .iter()
            .map(|v| {
                if v.re.is_finite() && v.im.is_finite() {
                    *v
                } else {
                    Cplx::new(0.0, 0.0)
                }
            })
            .collect();
        let pixels = self
            .reconstruct(&cleaned, mean)
            .into_iter()
            .map(|p| p.clamp(0.0, 1.0))
            .collect();
        let (h, w, c) = self.descriptor.source_shape;
        SourceImage::new(h, w, c, pixels)
    }
}

/// Square Gray-mapped QAM with unit average power.
#[derive(Debug, Clone)]
pub struct QamCodec {
    order: usize,
    bits_per_axis: usize,
    scale: f64,
    descriptor: CodecDescriptor,
}

impl QamCodec {
    pub fn new(order: usize) -> Result<Self> {
        if ![4, 16, 64, 256].contains(&order) {
            return Err(Error::invalid(format!("unsupported QAM order {order}")));
        }
        let bits = order.trailing_zeros() as usize;
        let shape = (32, 32, 3);
        Ok(Self {
            order,
            bits_per_axis: bits / 2,
            scale: (2.0 * (order as f64 - 1.0) / 3.0).sqrt(),
            descriptor: CodecDescriptor {
                name: format!("qam{order}"),
                symbols_per_source: (32 * 32 * 3 * 8) / bits,
                source_shape: shape,
            },
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.bits_per_axis
    }

    /// Gray-coded axis bits to amplitude: bits `0…0` map to the largest
    /// positive level.
    fn level(&self, bits: &[u8]) -> f64 {
        let gray = bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        let mut index = gray;
        let mut shift = gray >> 1;
        while shift != 0 {
            index ^= shift;
            shift >>= 1;
        }
        let side = 1usize << self.bits_per_axis;
        (side as f64 - 1.0) - 2.0 * index as f64
    }

    fn slice_axis(&self, v: f64, out: &mut Vec<u8>) {
        let side = 1usize << self.bits_per_axis;
        let index = (((side - 1) as f64 - v * self.scale) / 2.0).round().clamp(0.0, (side - 1) as f64) as usize;
        let gray = index ^ (index >> 1);
        for b in (0..self.bits_per_axis).rev() {
            out.push(((gray >> b) & 1) as u8);
        }
    }

    /// Maps bits (0/1 values; length a multiple of bits-per-symbol) to symbols.
    /// The first half of each group drives I, the second half Q.
    pub fn modulate(&self, bits: &[u8]) -> Result<Vec<Cplx>> {
        let k = self.bits_per_symbol();
        if !bits.len().is_multiple_of(k) {
            return Err(Error::invalid(format!("bit count must be a multiple of {k}")));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("bits must be 0 or 1"));
        }
        let half = self.bits_per_axis;
        Ok(bits
            .chunks_exact(k)
            .map(|g| Cplx::new(self.level(&g[..half]), self.level(&g[half..])) / self.scale)
            .collect())
    }

    /// Hard-decision slicing back to bits.
    pub fn demodulate(&self, symbols: &[Cplx]) -> Vec<u8> {
        let mut out = Vec::with_capacity(symbols.len() * self.bits_per_symbol());
        for v in symbols {
            let re = if v.re.is_finite() { v.re } else { 0.0 };
            let im = if v.im.is_finite() { v.im } else { 0.0 };
            self.slice_axis(re, &mut out);
            self.slice_axis(im, &mut out);
        }
        out
    }

    /// Every constellation point, in bit-pattern order.
    pub fn constellation(&self) -> Vec<Cplx> {
        let k = self.bits_per_symbol();
        let bits: Vec<u8> = (0..self.order)
            .flat_map(|p| (0..k).rev().map(move |b| ((p >> b) & 1) as u8))
            .collect();
        self.modulate(&bits).expect("well-formed bit groups")
    }

    /// Uniformly random symbols from a seeded bit stream.
    pub fn random_symbols(&self, n: usize, seed: u64) -> Vec<Cplx> {
        let mut rng = SplitMix64::new(seed);
        let bits: Vec<u8> = (0..n * self.bits_per_symbol()).map(|_| rng.bit() as u8).collect();
        self.modulate(&bits).expect("well-formed bit groups")
    }
}

impl Codec for QamCodec {
    fn descriptor(&self) -> &CodecDescriptor {
        &self.descriptor
    }

    fn encode(&self, image: &SourceImage) -> Result<Vec<Cplx>> {
        check_shape(&self.descriptor, image)?;
        let bits: Vec<u8> = image
            .pixels()
            .iter()
            .flat_map(|&p| {
                let byte = (p * 255.0).round() as u8;
                (0..8).rev().map(move |b| (byte >> b) & 1)
            })
            .collect();
        self.modulate(&bits)
    }

    fn decode(&self, symbols: &[Cplx]) -> Result<SourceImage> {
        if symbols.len() != self.descriptor.symbols_per_source {
            return Err(Error::SizeMismatch {
                expected: self.descriptor.symbols_per_source,
                got: symbols.len(),
            });
        }
        let bits = self.demodulate(symbols);
        let bytes: Vec<u8> = bits
            .chunks_exact(8)
            .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b))
            .collect();
        let (h, w, c) = self.descriptor.source_shape;
        SourceImage::from_bytes(h, w, c, &bytes)
    }
}

/// i.i.d. circular complex Gaussian symbols of unit variance.
pub fn gaussian_source(seed: u64, n: usize) -> Vec<Cplx> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| rng.complex_normal(1.0)).collect()
}

pub const BRIDGE_MAGIC: &[u8; 4] = b"SMSY";
pub const BRIDGE_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

/// Writes symbols as `SMSY`, u16 version, u64 count, u16 reserved, then
/// interleaved little-endian f32 I/Q pairs. Values are rounded to f32.
pub fn write_bridge<W: Write>(symbols: &[Cplx], mut w: W) -> Result<()> {
    w.write_all(BRIDGE_MAGIC)?;
    w.write_all(&BRIDGE_VERSION.to_le_bytes())?;
    w.write_all(&(symbols.len() as u64).to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    for v in symbols {
        w.write_all(&(v.re as f32).to_le_bytes())?;
        w.write_all(&(v.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bridge<R: Read>(mut r: R) -> Result<Vec<Cplx>> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("file shorter than the 16-byte header".into()),
        _ => Error::Io(e),
    })?;
    if &header[..4] != BRIDGE_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != BRIDGE_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(header[6..14].try_into().expect("8 bytes"));
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let expected = count
        .checked_mul(8)
        .ok_or_else(|| Error::Format("symbol count overflows".into()))?;
    if body.len() as u64 != expected {
        return Err(Error::Format(format!(
            "header announces {count} symbols ({expected} bytes), body has {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
            let im = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
            Cplx::new(re as f64, im as f64)
        })
        .collect())
}

pub fn bridge_export(symbols: &[Cplx], path: &Path) -> Result<()> {
    write_bridge(symbols, BufWriter::new(File::create(path)?))
}

pub fn bridge_import(path: &Path) -> Result<Vec<Cplx>> {
    read_bridge(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_ratio() {
        let codec = LinearCodec::standard(1);
        assert_eq!(codec.descriptor().symbols_per_source, 512);
        assert!((codec.descriptor().bandwidth_ratio() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rows_are_orthonormal() {
        let codec = LinearCodec::new(3, (8, 8, 3), 40).unwrap();
        let rows: Vec<Vec<Cplx>> = (0..40).map(|k| codec.matrix_row(k)).collect();
        for i in 0..40 {
            for j in 0..40 {
                let g: Cplx = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b.conj()).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - Cplx::new(want, 0.0)).norm() < 1e-9, "({i},{j}) {g}");
            }
        }
    }

    #[test]
    fn shape_checks() {
        let codec = LinearCodec::standard(1);
        let wrong = SourceImage::synthetic(16, 16, 3, 0);
        assert!(codec.encode(&wrong).is_err());
        assert!(codec.decode(&[Cplx::new(0.0, 0.0); 10]).is_err());
        assert!(LinearCodec::new(1, (4, 4, 1), 9).is_err());
        assert!(SourceImage::new(2, 2, 1, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(SourceImage::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn decode_is_total() {
        let codec = LinearCodec::standard(2);
        let mut junk = gaussian_source(4, 512);
        for v in junk.iter_mut() {
            *v *= 1e6;
        }
        junk[3] = Cplx::new(f64::NAN, 1.0);
        let img = codec.decode(&junk).unwrap();
        assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn qpsk_gray_table() {
        let q = QamCodec::new(4).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let pts = q.modulate(&[0, 0, 0, 1, 1, 0, 1, 1]).unwrap();
        assert!((pts[0] - Cplx::new(s, s)).norm() < 1e-15);
        assert!((pts[1] - Cplx::new(s, -s)).norm() < 1e-15);
        assert!((pts[2] - Cplx::new(-s, s)).norm() < 1e-15);
        assert!((pts[3] - Cplx::new(-s, -s)).norm() < 1e-15);
        assert!(QamCodec::new(8).is_err());
        assert!(q.modulate(&[0, 1, 1]).is_err());
    }

    #[test]
    fn constellations_have_unit_power_and_gray_neighbours() {
        for order in [4, 16, 64, 256] {
            let q = QamCodec::new(order).unwrap();
            let pts = q.constellation();
            assert_eq!(pts.len(), order);
            let power = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / order as f64;
            assert!((power - 1.0).abs() < 1e-12, "{order}: {power}");
            // Horizontally adjacent points differ in exactly one bit.
            let step = 2.0 / (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
            for (i, a) in pts.iter().enumerate() {
                for (j, b) in pts.iter().enumerate() {
                    if (a.im - b.im).abs() < 1e-9 && ((a.re - b.re).abs() - step).abs() < 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1);
                    }
                }
            }
        }
    }

    #[test]
    fn qam_round_trip() {
        for order in [4, 16, 64, 256] {
            let q = QamCodec::new(order).unwrap();
            let mut rng = SplitMix64::new(order as u64);
            let bits: Vec<u8> = (0..q.bits_per_symbol() * 500).map(|_| rng.bit() as u8).collect();
            assert_eq!(q.demodulate(&q.modulate(&bits).unwrap()), bits);
            let img = SourceImage::synthetic(32, 32, 3, order as u64);
            let back = q.decode(&q.encode(&img).unwrap()).unwrap();
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_source_statistics() {
        let n = 1_000_000;
        let x = gaussian_source(12, n);
        let mean: Cplx = x.iter().sum::<Cplx>() / n as f64;
        let var = x.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.01);
        assert!(mean.norm() < 0.005);
        assert_eq!(gaussian_source(12, 10), gaussian_source(12, 10));
    }

    #[test]
    fn bridge_format_errors() {
        assert!(matches!(read_bridge(&[][..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_bridge(&[Cplx::new(0.5, -0.25)], &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8);
        assert_eq!(&buf[..4], b"SMSY");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..14], &1u64.to_le_bytes());
        assert_eq!(&buf[16..20], &0.5f32.to_le_bytes());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_bridge(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(read_bridge(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_bridge(&extra[..]), Err(Error::Format(_))));
        let mut v2 = buf;
        v2[4] = 2;
        assert!(matches!(read_bridge(&v2[..]), Err(Error::Format(_))));
    }

    #[test]
    fn planar_ingestion() {
        let bytes: Vec<u8> = (0..12).collect();
        let img = SourceImage::from_planar_bytes(2, 2, 3, &bytes).unwrap();
        // Pixel 1 channel 2 comes from plane 2 offset 1.
        assert!((img.pixels()[3 + 2] - 9.0 / 255.0).abs() < 1e-15);
        assert!(SourceImage::from_planar_bytes(2, 2, 3, &bytes[..11]).is_err());
    }

    #[test]
    fn tiles_assemble_in_row_order() {
        let tiles: Vec<SourceImage> = (0..4)
            .map(|i| SourceImage::new(2, 2, 1, vec![i as f64 / 4.0; 4]).unwrap())
            .collect();
        let big = SourceImage::assemble(&tiles, 2).unwrap();
        assert_eq!(big.shape(), (4, 4, 1));
        assert_eq!(big.pixels()[0], 0.0);
        assert_eq!(big.pixels()[3], 0.25);
        assert_eq!(big.pixels()[15], 0.75);
        assert_eq!(big.tiles(2, 2).unwrap(), tiles);
        assert!(big.tiles(3, 2).is_err());
    }
}
