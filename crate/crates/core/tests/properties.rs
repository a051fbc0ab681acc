use proptest::prelude::*;

use semlink::channel::{pa_rapp, PaParams};
use semlink::grid::{build_grid_map, demap_symbols, make_pilot_sequence, map_symbols, CellRole, OfdmParams};
use semlink::interleave::{deshuffle, make_plan, shuffle};
use semlink::tx::{normalize_clip, quantize_fixed_point};
use semlink::Cplx;

fn params_strategy() -> impl Strategy<Value = OfdmParams> {
    (1usize..=4, 2usize..=14, 1usize..=20, 0usize..14).prop_map(|(n_streams, spb, half, pilot)| OfdmParams {
        n_streams,
        symbols_per_block: spb,
        used_subcarriers: 2 * half,
        fft_size: 64,
        pilot_symbol_index: pilot % spb,
        ..OfdmParams::default()
    })
}

fn cplx_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Cplx>> {
    prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b)| Cplx::new(a, b)), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn demap_inverts_map(params in params_strategy(), seed in any::<u64>(), extra in 0usize..3, frac in 0.0f64..1.0) {
        let cap = params.block_capacity();
        let n = ((extra * cap) as f64 + frac * cap as f64).max(1.0) as usize;
        let map = build_grid_map(&params, n).unwrap();
        prop_assert_eq!(map.len() % cap, 0);
        prop_assert!(map.len() >= n && map.len() - n < cap);
        let mut rng = semlink::rng::SplitMix64::new(seed);
        let x: Vec<Cplx> = (0..n).map(|_| rng.complex_normal(1.0)).collect();
        let pilots = make_pilot_sequence(seed, &params);
        let grid = map_symbols(&x, &map, &params, &pilots, 1.0).unwrap();
        prop_assert_eq!(demap_symbols(&grid, &map, n).unwrap(), x);
    }

    #[test]
    fn deshuffle_inverts_shuffle(x in cplx_vec(1..400), seed in any::<u64>()) {
        let plan = make_plan(seed, x.len()).unwrap();
        let y = shuffle(&x, &plan).unwrap();
        prop_assert_eq!(deshuffle(&y, &plan).unwrap(), x.clone());
        let key = |v: &Cplx| (v.re.to_bits(), v.im.to_bits());
        let mut a: Vec<_> = x.iter().map(key).collect();
        let mut b: Vec<_> = y.iter().map(key).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #[test]
    fn grid_map_is_a_bijection_onto_data_cells(params in params_strategy(), blocks in 1usize..4) {
        let map = build_grid_map(&params, blocks * params.block_capacity()).unwrap();
        let grid = semlink::grid::ResourceGrid::zeros(params, blocks);
        let mut scanned = Vec::new();
        for s in 0..params.n_streams {
            for m in 0..grid.n_symbols() {
                for k in 0..params.used_subcarriers {
                    if grid.role(s, m, k) == CellRole::Data {
                        scanned.push((s, m, k));
                    }
                }
            }
        }
        let mut mapped: Vec<_> = map.cells().iter().map(|c| (c.stream, c.symbol, c.subcarrier)).collect();
        prop_assert_eq!(mapped.len(), scanned.len());
        mapped.sort_unstable();
        prop_assert_eq!(mapped, scanned);
    }

    #[test]
    fn pilot_symbols_have_one_owner_per_subcarrier(params in params_strategy(), seed in any::<u64>()) {
        let map = build_grid_map(&params, 1).unwrap();
        let grid = map_symbols(&[Cplx::new(1.0, 0.0)], &map, &params, &make_pilot_sequence(seed, &params), 1.0).unwrap();
        let m = params.pilot_symbol_index;
        for k in 0..params.used_subcarriers {
            let active = (0..params.n_streams).filter(|&s| grid.get(s, m, k) != Cplx::new(0.0, 0.0)).count();
            prop_assert_eq!(active, 1);
        }
    }

    #[test]
    fn quantizer_is_idempotent_and_monotone(mut v in prop::collection::vec(-1.0f64..=1.0, 2..50), bits in 2u32..=24) {
        v.sort_by(f64::total_cmp);
        let x: Vec<Cplx> = v.iter().map(|&a| Cplx::new(a, -a)).collect();
        let q = quantize_fixed_point(&x, bits).unwrap();
        prop_assert_eq!(quantize_fixed_point(&q, bits).unwrap(), q.clone());
        for w in q.windows(2) {
            prop_assert!(w[0].re <= w[1].re);
            prop_assert!(w[0].im >= w[1].im);
        }
        let levels = ((1u64 << (bits - 1)) - 1) as f64;
        for (a, b) in x.iter().zip(&q) {
            prop_assert!((a.re - b.re).abs() <= 0.5 / levels + 1e-15);
        }
    }

    #[test]
    fn normalize_clip_is_idempotent_at_unit_scale(x in cplx_vec(1..100), n in 0.1f64..10.0) {
        let once = normalize_clip(&x, n).unwrap();
        prop_assert_eq!(normalize_clip(&once, 1.0).unwrap(), once.clone());
        prop_assert!(once.iter().all(|v| v.re.abs() <= 1.0 && v.im.abs() <= 1.0));
    }

    #[test]
    fn rapp_is_amplitude_monotone(a in 0.0f64..20.0, b in 0.0f64..20.0, phase in 0.0f64..6.28, p in 0.5f64..10.0, backoff in -6.0f64..12.0) {
        let pa = PaParams { sat: 1.0, p, backoff_db: backoff };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let out = pa_rapp(&[Cplx::from_polar(lo, phase), Cplx::from_polar(hi, phase)], &pa);
        prop_assert!(out[0].norm() <= out[1].norm() + 1e-15);
        prop_assert!(out[1].norm() <= pa.sat + 1e-12);
        if lo > 0.0 {
            prop_assert!((out[0].arg() - Cplx::from_polar(1.0, phase).arg()).abs() < 1e-9);
        }
    }
}

#[test]
fn capacity_formula_over_parameter_range() {
    for n_streams in 1..=4 {
        for spb in 2..=14 {
            let params = OfdmParams {
                n_streams,
                symbols_per_block: spb,
                ..OfdmParams::default()
            };
            assert_eq!(params.block_capacity(), n_streams * 72 * (spb - 1));
            let map = build_grid_map(&params, params.block_capacity() + 1).unwrap();
            assert_eq!(map.n_blocks(), 2);
            assert_eq!(map.n_padding(), params.block_capacity() - 1);
        }
    }
}
