use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use semlink::channel::{draw_channel, ChannelProfile};
use semlink::codec::gaussian_source;
use semlink::interleave::make_plan;
use semlink::link::{run_link, LinkSetup, NoiseReference, NoiseSpec};
use semlink::parallel::{par_map, Execution};
use semlink::rng::derive_seed;

const TRIALS: u64 = 16;
const SYMBOLS: usize = 8640;

fn trial(seed: &u64) -> semlink::Result<f64> {
    let x = gaussian_source(*seed, SYMBOLS);
    let plan = make_plan(derive_seed(*seed, 1), SYMBOLS)?;
    let profile = ChannelProfile::ExpPdp {
        n_taps: 8,
        decay_db_per_tap: 3.0,
    };
    let ch = draw_channel(profile, 2, 2, derive_seed(*seed, 2))?;
    let noise = NoiseSpec {
        snr_db: 10.0,
        reference: NoiseReference::DataCells,
        seed: derive_seed(*seed, 3),
    };
    Ok(run_link(&x, &LinkSetup::default(), &ch, &plan, &noise)?.rx.rx_snr_db)
}

fn bench(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..TRIALS).collect();
    let mut group = c.benchmark_group("link_trials");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| par_map(black_box(&seeds), Execution::Sequential, trial).unwrap())
    });
    group.bench_function("parallel", |b| {
        b.iter(|| par_map(black_box(&seeds), Execution::Parallel { workers: 0 }, trial).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
