//! One-thread pool against the default pool on the hot batch kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pgdro::dro::DroConfig;
use pgdro::models::{full_loss_grad, LinearHead, RobustCe};
use pgdro::numkit::{Matrix, SeededRng};
use pgdro::priors::MixturePrior;

struct Batch {
    x: Matrix,
    labels: Vec<usize>,
    priors: Vec<MixturePrior>,
    head: LinearHead,
}

fn batch() -> Batch {
    let (k, d, n, atoms) = (8, 10, 256, 64);
    let mut rng = SeededRng::new(7, 0);
    let x = Matrix::from_fn(n, d, |_, _| rng.standard_normal());
    let labels = (0..n).map(|i| i % k).collect();
    let priors = (0..k)
        .map(|c| MixturePrior::empirical(c, Matrix::from_fn(atoms, d, |_, _| rng.standard_normal())).unwrap())
        .collect();
    let head = LinearHead::new(
        Matrix::from_fn(k, d, |_, _| 0.3 * rng.standard_normal()),
        vec![0.0; k],
    )
    .unwrap();
    Batch { x, labels, priors, head }
}

fn pools(c: &mut Criterion) {
    let b = batch();
    let dro = DroConfig::default();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let mut g = c.benchmark_group("robust_ce_batch");
    for (name, pool) in [("threads_1", &single), ("threads_default", &default)] {
        g.bench_function(name, |bench| {
            bench.iter(|| {
                pool.install(|| {
                    let obj = RobustCe::new(&b.x, &b.labels, &b.priors, &dro).unwrap();
                    black_box(full_loss_grad(&obj, &b.head).unwrap())
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, pools);
criterion_main!(benches);
