//! Compares a full fit on the bundled grid across worker pools. Build with
//! --no-default-features to see the sequential fallback under the same
//! harness (the pool sizes then make no difference).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use moe_scaling::dataio::{bundled_experiment_grid, synthesize};
use moe_scaling::fitting::{fit, FitConfig};
use moe_scaling::law::ScalingCoefficients;

fn bench_fit(c: &mut Criterion) {
    let coeffs = ScalingCoefficients::bundled();
    let records = synthesize(bundled_experiment_grid(), &coeffs, 0.005, 17).unwrap();
    let config = FitConfig {
        grid_sample: 8,
        ..FitConfig::default()
    };

    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    for threads in [1usize, 0] {
        let label = if threads == 0 {
            "default-pool"
        } else {
            "one-thread"
        };
        group.bench_with_input(BenchmarkId::new("restarts-8", label), &threads, |b, &t| {
            #[cfg(feature = "parallel")]
            {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .expect("pool");
                b.iter(|| pool.install(|| fit(&records, &config).unwrap()));
            }
            #[cfg(not(feature = "parallel"))]
            {
                let _ = t;
                b.iter(|| fit(&records, &config).unwrap());
            }
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fit);
criterion_main!(benches);
