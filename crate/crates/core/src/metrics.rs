//! Quality and signal metrics: PSNR, SQNR, percentiles and error spectra.

use crate::codec::SourceImage;
use crate::error::{Error, Result};
use crate::grid::{build_grid_map, OfdmParams};
use crate::interleave::ShufflePlan;
use crate::tx::quantize_fixed_point;
use crate::Cplx;

/// Upper bound on every reported dB ratio, so zero-error cases stay finite.
pub const DB_CAP: f64 = 80.0;

/// `10·log10(ratio)` capped at [`DB_CAP`].
pub fn capped_db(ratio: f64) -> f64 {
    if ratio.is_infinite() || ratio.is_nan() {
        return DB_CAP;
    }
    (10.0 * ratio.log10()).min(DB_CAP)
}

/// Linear-interpolated percentile of already sorted values.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty set");
    let rank = (pct / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn squared_error(reference: &SourceImage, test: &SourceImage) -> Result<(f64, usize)> {
    if reference.shape() != test.shape() {
        return Err(Error::invalid(format!(
            "image shapes differ: {:?} vs {:?}",
            reference.shape(),
            test.shape()
        )));
    }
    let sum = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((sum, reference.pixels().len()))
}

pub fn mse(reference: &SourceImage, test: &SourceImage) -> Result<f64> {
    let (sum, n) = squared_error(reference, test)?;
    Ok(sum / n as f64)
}

pub fn psnr(reference: &SourceImage, test: &SourceImage, peak: f64) -> Result<f64> {
    let m = mse(reference, test)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        DB_CAP
    } else {
        capped_db(peak * peak / mse)
    }
}

/// PSNR of a set of tiles scored as one image: the squared errors of all
/// tiles are pooled before taking the ratio.
pub fn psnr_tiled(references: &[SourceImage], tests: &[SourceImage], peak: f64) -> Result<f64> {
    if references.len() != tests.len() || references.is_empty() {
        return Err(Error::SizeMismatch {
            expected: references.len(),
            got: tests.len(),
        });
    }
    let mut sum = 0.0;
    let mut n = 0;
    for (r, t) in references.iter().zip(tests) {
        let (s, c) = squared_error(r, t)?;
        sum += s;
        n += c;
    }
    Ok(psnr_from_mse(sum / n as f64, peak))
}

/// Signal-to-quantization-noise ratio of `bits`-bit fixed point on `x`.
pub fn measure_sqnr(x: &[Cplx], bits: u32) -> Result<f64> {
    let q = quantize_fixed_point(x, bits)?;
    let signal: f64 = x.iter().map(|v| v.norm_sqr()).sum();
    if signal == 0.0 {
        return Err(Error::invalid("SQNR undefined for a zero signal"));
    }
    let noise: f64 = x.iter().zip(&q).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(if noise == 0.0 {
        DB_CAP
    } else {
        capped_db(signal / noise)
    })
}

/// Error statistics for one (stream, subcarrier) cell column.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpectrumBin {
    pub sum: f64,
    pub count: usize,
}

impl SpectrumBin {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Mean error power per (stream, subcarrier), indexed `[stream][subcarrier]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSpectrum {
    /// Grouped by the cell each symbol actually occupied.
    pub physical: Vec<Vec<SpectrumBin>>,
    /// Grouped by the cell each symbol would have occupied without shuffling.
    pub unshuffled: Vec<Vec<SpectrumBin>>,
}

impl ErrorSpectrum {
    pub fn total(view: &[Vec<SpectrumBin>]) -> f64 {
        view.iter().flatten().map(|b| b.sum).sum()
    }

    pub fn per_subcarrier(view: &[Vec<SpectrumBin>]) -> Vec<f64> {
        let n_sc = view.first().map_or(0, Vec::len);
        (0..n_sc)
            .map(|k| {
                let (s, c) = view
                    .iter()
                    .fold((0.0, 0), |(s, c), row| (s + row[k].sum, c + row[k].count));
                if c == 0 {
                    0.0
                } else {
                    s / c as f64
                }
            })
            .collect()
    }

    pub fn per_stream(view: &[Vec<SpectrumBin>]) -> Vec<f64> {
        view.iter()
            .map(|row| {
                let (s, c) = row.iter().fold((0.0, 0), |(s, c), b| (s + b.sum, c + b.count));
                if c == 0 {
                    0.0
                } else {
                    s / c as f64
                }
            })
            .collect()
    }
}

/// Groups per-position error powers (payload order) by grid cell.
pub fn error_spectrum(position_err: &[f64], plan: &ShufflePlan, params: &OfdmParams) -> Result<ErrorSpectrum> {
    let n = position_err.len();
    if n != plan.len() {
        return Err(Error::SizeMismatch {
            expected: plan.len(),
            got: n,
        });
    }
    let map = build_grid_map(params, n)?;
    let empty = vec![vec![SpectrumBin::default(); params.used_subcarriers]; params.n_streams];
    let mut physical = empty.clone();
    let mut unshuffled = empty;
    let inverse = plan.inverse();
    for (position, &e) in position_err.iter().enumerate() {
        let actual = map.cells()[inverse[position]];
        let bin = &mut physical[actual.stream][actual.subcarrier];
        bin.sum += e;
        bin.count += 1;
        let nominal = map.cells()[position];
        let bin = &mut unshuffled[nominal.stream][nominal.subcarrier];
        bin.sum += e;
        bin.count += 1;
    }
    Ok(ErrorSpectrum { physical, unshuffled })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interleave::make_plan;

    fn image(value: f64) -> SourceImage {
        SourceImage::new(4, 4, 3, vec![value; 48]).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = image(0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), DB_CAP);
        let b = image(0.6);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let small = SourceImage::new(2, 2, 3, vec![0.0; 12]).unwrap();
        assert!(psnr(&a, &small, 1.0).is_err());
    }

    #[test]
    fn tiled_psnr_pools_errors() {
        let refs: Vec<SourceImage> = (0..64).map(|_| image(0.5)).collect();
        let tests: Vec<SourceImage> = (0..64).map(|i| image(0.5 + 0.002 * i as f64)).collect();
        // Direct computation over the concatenated pixel set.
        let pooled: f64 = (0..64).map(|i| (0.002 * i as f64).powi(2) * 48.0).sum::<f64>() / (64.0 * 48.0);
        let want = 10.0 * (1.0 / pooled).log10();
        let got = psnr_tiled(&refs, &tests, 1.0).unwrap();
        assert!((got - want).abs() < 1e-9);
        let mean_of_tiles: f64 = (1..64)
            .map(|i| psnr(&refs[i], &tests[i], 1.0).unwrap())
            .sum::<f64>()
            / 63.0;
        assert!((got - mean_of_tiles).abs() > 1.0);
    }

    #[test]
    fn sqnr_edge_cases() {
        assert!(measure_sqnr(&[Cplx::new(0.0, 0.0); 4], 14).is_err());
        let exact: Vec<Cplx> = (0..10).map(|i| Cplx::new(i as f64 / 8191.0, -(i as f64) / 8191.0)).collect();
        assert_eq!(measure_sqnr(&exact[1..], 14).unwrap(), DB_CAP);
        assert!(measure_sqnr(&[Cplx::new(1.5, 0.0)], 14).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert!((percentile(&v, 95.0) - 4.8).abs() < 1e-12);
    }

    #[test]
    fn spectrum_views_and_totals() {
        let params = OfdmParams::default();
        let n = 2000;
        let err: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 * 0.01).collect();
        let identity = ShufflePlan::identity(n).unwrap();
        let s = error_spectrum(&err, &identity, &params).unwrap();
        assert_eq!(s.physical, s.unshuffled);
        let plan = make_plan(3, n).unwrap();
        let s = error_spectrum(&err, &plan, &params).unwrap();
        let total: f64 = err.iter().sum();
        assert!((ErrorSpectrum::total(&s.physical) - total).abs() < 1e-9);
        assert!((ErrorSpectrum::total(&s.unshuffled) - total).abs() < 1e-9);
        assert_ne!(s.physical, s.unshuffled);
        assert!(error_spectrum(&err[1..], &plan, &params).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
    }
}
