//! Wall-clock benchmarks for the pieces that dominate a production run:
//! spectral cache construction, a single MM step and a full frame solve at
//! benchmark scale, the box-constrained linear solve, and the scalar quartic
//! kernel.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rigsolve_core::mm::{Init, MmSolver, SolverConfig};
use rigsolve_core::qp::{QpConfig, QpSolver};
use rigsolve_core::quartic::{minimize_quartic, QuarticProblem};
use rigsolve_core::rig::WeightVector;
use rigsolve_core::spectral::QuadraticCache;
use rigsolve_core::synth::{generate, GenSpec, SyntheticDataset};

fn benchmark_dataset() -> SyntheticDataset {
    generate(&GenSpec::default()).expect("benchmark generation")
}

fn bench_cache_build(c: &mut Criterion) {
    let data = benchmark_dataset();
    c.bench_function("cache_build_benchmark_scale", |b| {
        b.iter(|| QuadraticCache::build(&data.rig))
    });
}

fn bench_mm(c: &mut Criterion) {
    let data = benchmark_dataset();
    let cache = QuadraticCache::build(&data.rig);
    let solver = MmSolver::new(&data.rig, &cache).unwrap();
    let config = SolverConfig {
        lambda: 10.0,
        init: Init::Linear,
        ..Default::default()
    };
    let target = &data.targets[0];

    let w = WeightVector::zeros(data.rig.n_controllers());
    c.bench_function("mm_step_benchmark_scale", |b| {
        b.iter(|| solver.step(&w, target, &config).unwrap())
    });
    c.bench_function("mm_solve_frame_benchmark_scale", |b| {
        b.iter(|| solver.solve(target, &config).unwrap())
    });
}

fn bench_qp(c: &mut Criterion) {
    let data = benchmark_dataset();
    let solver = QpSolver::new(data.rig.blendshapes());
    let config = QpConfig::new(10.0);
    let target = &data.targets[0];
    c.bench_function("qp_solve_frame_benchmark_scale", |b| {
        b.iter(|| solver.solve(target, &config).unwrap())
    });
}

fn bench_quartic(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    c.bench_function("minimize_quartic", |b| {
        b.iter_batched(
            || {
                let w: f64 = rng.gen_range(0.0..=1.0);
                QuarticProblem::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(0.0..10.0),
                    -w,
                    1.0 - w,
                )
                .unwrap()
            },
            |prob| minimize_quartic(&prob).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_cache_build, bench_mm, bench_qp, bench_quartic
}
criterion_main!(benches);
