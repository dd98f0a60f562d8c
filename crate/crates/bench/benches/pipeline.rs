use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use percept_bench::uplink_config;
use percept_core::harness::{run_once, Scheme, SolverKind};
use percept_core::scene::{freq_channel, sample_scene};
use percept_core::UlaConfig;

fn channel(c: &mut Criterion) {
    let cfg = uplink_config();
    let scene = sample_scene(&cfg.scene_spec().unwrap(), 0).unwrap();
    let (rx, tx) = (UlaConfig::new(4).unwrap(), UlaConfig::new(1).unwrap());
    c.bench_function("freq_channel 512 subcarriers", |b| {
        b.iter(|| {
            for n in 0..512 {
                black_box(freq_channel(&scene.links[0], n, 0, &cfg.grid, rx, tx));
            }
        })
    });
}

fn runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_once");
    g.sample_size(10);
    for (name, scheme, solver) in [
        ("indirect omp", Scheme::Indirect, SolverKind::Omp),
        ("baseline", Scheme::Baseline, SolverKind::Omp),
    ] {
        let mut cfg = uplink_config();
        cfg.scheme = scheme;
        cfg.solver.kind = solver;
        g.bench_function(name, |b| b.iter(|| run_once(&cfg, 0).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, channel, runs);
criterion_main!(benches);
