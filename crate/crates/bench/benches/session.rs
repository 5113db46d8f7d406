use burstshape::client::BandwidthTrace;
use burstshape::harness::{run_baseline, run_shaped, SessionConfig};
use burstshape::shaper::{QualityLadder, StreamSpec};
use criterion::{criterion_group, criterion_main, Criterion};

fn config(rate: f64, link: BandwidthTrace) -> SessionConfig {
    let stream = StreamSpec::new(QualityLadder::single(rate), 600.0, 40.0).unwrap();
    SessionConfig::new(stream, 4_000_000, link)
}

fn sessions(c: &mut Criterion) {
    let flat = config(1e6, BandwidthTrace::constant(20e6));
    c.bench_function("run_shaped_10min", |b| b.iter(|| run_shaped(&flat).unwrap()));
    c.bench_function("run_baseline_10min", |b| b.iter(|| run_baseline(&flat, 75_000_000).unwrap()));

    let dip = config(700e3, BandwidthTrace::new(vec![(0.0, 12e6), (120.0, 1.2e6), (180.0, 12e6)]).unwrap());
    c.bench_function("run_shaped_bandwidth_dip", |b| b.iter(|| run_shaped(&dip).unwrap()));
}

criterion_group!(benches, sessions);
criterion_main!(benches);
