use nalgebra::DMatrix;
use proptest::prelude::*;

use semlink::channel::awgn;
use semlink::codec::{bridge_export, bridge_import, Codec, LinearCodec, QamCodec, SourceImage};
use semlink::error::Error;
use semlink::metrics::mse;
use semlink::rng::SplitMix64;
use semlink::Cplx;

fn random_image(seed: u64, shape: (usize, usize, usize)) -> SourceImage {
    let mut rng = SplitMix64::new(seed);
    let n = shape.0 * shape.1 * shape.2;
    SourceImage::new(shape.0, shape.1, shape.2, (0..n).map(|_| rng.next_f64()).collect()).unwrap()
}

#[test]
fn linear_decode_is_the_least_squares_projection() {
    let shape = (8, 8, 3);
    let codec = LinearCodec::new(21, shape, 40).unwrap();
    // Real basis of the symbol map: rows Re(a_k) and Im(a_k), scaled back to unit norm.
    let dim = 192;
    let mut b = DMatrix::<f64>::zeros(80, dim);
    for k in 0..40 {
        for (j, v) in codec.matrix_row(k).iter().enumerate() {
            b[(k, j)] = v.re * std::f64::consts::SQRT_2;
            b[(40 + k, j)] = v.im * std::f64::consts::SQRT_2;
        }
    }
    let gram = (&b * b.transpose()).try_inverse().unwrap();
    for seed in 0..5 {
        let img = random_image(seed, shape);
        let mu = img.pixels().iter().sum::<f64>() / dim as f64;
        let xc = DMatrix::from_iterator(dim, 1, img.pixels().iter().map(|p| p - mu));
        let proj = b.transpose() * (&gram * (&b * &xc));
        let decoded = codec.decode_with_mean(&codec.encode(&img).unwrap(), mu).unwrap();
        for (i, got) in decoded.pixels().iter().enumerate() {
            let want = (proj[i] + mu).clamp(0.0, 1.0);
            assert!((got - want).abs() < 1e-9, "pixel {i}: {got} vs {want}");
        }
    }
}

#[test]
fn linear_rows_are_orthonormal_at_full_size() {
    let codec = LinearCodec::standard(5);
    let rows: Vec<Vec<Cplx>> = (0..512).step_by(37).map(|k| codec.matrix_row(k)).collect();
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in rows.iter().enumerate() {
            let g: Cplx = a.iter().zip(b).map(|(x, y)| x * y.conj()).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((g - Cplx::new(want, 0.0)).norm() < 1e-9);
        }
    }
}

#[test]
fn reconstruction_mse_falls_with_symbol_snr() {
    let codec = LinearCodec::standard(3);
    let snrs = [0.0, 5.0, 10.0, 15.0, 20.0];
    let mut avg = [0.0; 5];
    for seed in 0..10 {
        let img = SourceImage::synthetic(32, 32, 3, seed);
        let y = codec.encode(&img).unwrap();
        let power = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len() as f64;
        for (slot, &snr) in avg.iter_mut().zip(&snrs) {
            let noisy = awgn(&y, snr, power, 100 + seed);
            *slot += mse(&img, &codec.decode(&noisy).unwrap()).unwrap() / 10.0;
        }
    }
    for w in avg.windows(2) {
        assert!(w[1] < w[0], "{avg:?}");
    }
}

#[test]
fn bridge_round_trip_is_bit_exact() {
    let mut rng = SplitMix64::new(77);
    let x: Vec<Cplx> = (0..1_000_000)
        .map(|_| {
            let v = rng.complex_normal(1.0);
            Cplx::new(v.re as f32 as f64, v.im as f32 as f64)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("symbols.smsy");
    bridge_export(&x, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 8 * 1_000_000);
    let back = bridge_import(&path).unwrap();
    assert_eq!(back.len(), x.len());
    assert!(x.iter().zip(&back).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));

    let empty = dir.path().join("empty.smsy");
    std::fs::write(&empty, b"").unwrap();
    assert!(matches!(bridge_import(&empty), Err(Error::Format(_))));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[1] = b'N';
    std::fs::write(&empty, &bytes).unwrap();
    assert!(matches!(bridge_import(&empty), Err(Error::Format(_))));
}

#[test]
fn qam_digital_round_trip_through_images() {
    for order in [4, 16, 64, 256] {
        let codec = QamCodec::new(order).unwrap();
        let bytes: Vec<u8> = (0..3072).map(|i| (i * 7 % 256) as u8).collect();
        let img = SourceImage::from_bytes(32, 32, 3, &bytes).unwrap();
        let y = codec.encode(&img).unwrap();
        assert_eq!(y.len(), codec.descriptor().symbols_per_source);
        assert_eq!(codec.decode(&y).unwrap(), img);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn encode_length_matches_descriptor(seed in any::<u64>()) {
        let img = random_image(seed, (32, 32, 3));
        let linear = LinearCodec::standard(seed % 4);
        prop_assert_eq!(linear.encode(&img).unwrap().len(), linear.descriptor().symbols_per_source);
        let qam = QamCodec::new(16).unwrap();
        prop_assert_eq!(qam.encode(&img).unwrap().len(), qam.descriptor().symbols_per_source);
    }

    #[test]
    fn decode_is_total_on_finite_input(seed in any::<u64>(), scale in 1e-6f64..1e6) {
        let mut rng = SplitMix64::new(seed);
        let y: Vec<Cplx> = (0..6144).map(|_| rng.complex_normal(1.0) * scale).collect();
        let linear = LinearCodec::standard(1);
        let img = linear.decode(&y[..512]).unwrap();
        prop_assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        let qam = QamCodec::new(16).unwrap();
        let img = qam.decode(&y).unwrap();
        prop_assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
