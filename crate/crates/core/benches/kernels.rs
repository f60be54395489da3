//! Parallel against sequential kernels.
//!
//! With the default `parallel` feature each kernel runs twice: on the global
//! rayon pool and inside a one-thread pool. `cargo bench --no-default-features`
//! builds the sequential fallback for a third reference point.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use magd_core::cap;
use magd_core::mag::PropagationConfig;
use magd_core::numerics::{spmm, DenseMatrix};
use magd_core::taa::{self, TaaConfig, TaaParams};
use magd_core::verify::random_graph;
use magd_core::Modality;

#[derive(Clone, Copy)]
enum Mode {
    #[cfg(feature = "parallel")]
    Rayon,
    #[cfg(feature = "parallel")]
    RayonSingle,
    #[cfg(not(feature = "parallel"))]
    Sequential,
}

impl Mode {
    fn all() -> Vec<Mode> {
        #[cfg(feature = "parallel")]
        return vec![Mode::Rayon, Mode::RayonSingle];
        #[cfg(not(feature = "parallel"))]
        return vec![Mode::Sequential];
    }

    fn name(self) -> &'static str {
        match self {
            #[cfg(feature = "parallel")]
            Mode::Rayon => "rayon",
            #[cfg(feature = "parallel")]
            Mode::RayonSingle => "rayon-1",
            #[cfg(not(feature = "parallel"))]
            Mode::Sequential => "sequential",
        }
    }

    /// Builds a runner once; the one-thread pool is reused across iterations.
    fn runner(self) -> Box<dyn Fn(&(dyn Fn() + Sync))> {
        match self {
            #[cfg(feature = "parallel")]
            Mode::Rayon => Box::new(|f| f()),
            #[cfg(feature = "parallel")]
            Mode::RayonSingle => {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
                Box::new(move |f| pool.install(f))
            }
            #[cfg(not(feature = "parallel"))]
            Mode::Sequential => Box::new(|f| f()),
        }
    }
}

fn bench_spmm(c: &mut Criterion) {
    let mut group = c.benchmark_group("spmm");
    for edges in [10_000, 100_000] {
        let mag = random_graph(edges, 10, 32, 1).unwrap();
        let ops = cap::plain_operators(&mag);
        let x = mag.features(Modality::Text).clone();
        for mode in Mode::all() {
            let run = mode.runner();
            group.bench_with_input(BenchmarkId::new(mode.name(), edges), &edges, |b, _| {
                b.iter(|| run(&|| {
                    black_box(spmm(&ops.tt, &x).unwrap());
                }))
            });
        }
    }
    group.finish();
}

fn bench_cap(c: &mut Criterion) {
    let mut group = c.benchmark_group("cap_precompute");
    group.sample_size(10);
    let cfg = PropagationConfig::shared(3, 0.5, 0.3).unwrap();
    for edges in [10_000, 100_000] {
        let mag = random_graph(edges, 10, 32, 2).unwrap();
        for mode in Mode::all() {
            let run = mode.runner();
            group.bench_with_input(BenchmarkId::new(mode.name(), edges), &edges, |b, _| {
                b.iter(|| run(&|| {
                    let ops = cap::build_priors(&mag).unwrap();
                    black_box(cap::propagate(&mag, &ops, &cfg).unwrap());
                }))
            });
        }
    }
    group.finish();
}

fn bench_taa(c: &mut Criterion) {
    let mut group = c.benchmark_group("taa_forward");
    group.sample_size(10);
    let n = 512;
    for k in [2, 4] {
        let tcfg = TaaConfig::new(32, 32, 32);
        let params = TaaParams::init(&tcfg, 3).unwrap();
        let hops = |s: usize| -> Vec<DenseMatrix> {
            (0..=k)
                .map(|h: usize| {
                    DenseMatrix::from_fn(n, 32, |r, c| (((r * 31 + c * 7 + h * 13 + s) % 17) as f64 - 8.0) / 8.0)
                })
                .collect()
        };
        let t = magd_core::Trajectory::new(Modality::Text, hops(0)).unwrap();
        let i = magd_core::Trajectory::new(Modality::Image, hops(5)).unwrap();
        for mode in Mode::all() {
            let run = mode.runner();
            group.bench_with_input(BenchmarkId::new(mode.name(), k), &k, |b, _| {
                b.iter(|| run(&|| {
                    black_box(taa::forward(&t, &i, &params).unwrap());
                }))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_spmm, bench_cap, bench_taa);
criterion_main!(benches);
