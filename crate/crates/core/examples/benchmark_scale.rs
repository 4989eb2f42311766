//! Quick end-to-end timing on the default benchmark-scale benchmark: generate,
//! build the spectral cache, then solve a handful of frames with both models.
//!
//! Run with `cargo run --release -p rigsolve-core --example benchmark_scale`.

use std::time::Instant;

use rigsolve_core::mm::{Init, MmSolver, SolverConfig};
use rigsolve_core::qp::{QpConfig, QpSolver};
use rigsolve_core::synth::{generate, GenSpec};
use rigsolve_core::{cardinality, mesh_error, QuadraticCache};

fn main() {
    let spec = GenSpec::default();
    let t0 = Instant::now();
    let data = generate(&spec).expect("generate");
    println!("generate: {:.2?}", t0.elapsed());

    let t0 = Instant::now();
    let cache = QuadraticCache::build(&data.rig);
    println!("cache build: {:.2?} (s = {:.3e})", t0.elapsed(), cache.s_coefficient());

    let solver = MmSolver::new(&data.rig, &cache).expect("solver");
    let qp = QpSolver::new(data.rig.blendshapes());

    for lambda in [0.0, 10.0] {
        for frame in 0..3 {
            let target = &data.targets[frame];
            let t0 = Instant::now();
            let report = qp.solve(target, &QpConfig::new(lambda)).expect("qp");
            println!(
                "frame {frame} lambda {lambda:5}: linear    {:3} iters {:8.2?} err {:.4e} card {:3}",
                report.iterations,
                t0.elapsed(),
                mesh_error(&data.rig, &report.weights, target).unwrap(),
                cardinality(&report.weights, 1e-4),
            );
            for init in [Init::Zero, Init::Linear] {
                let config = SolverConfig {
                    lambda,
                    init,
                    ..Default::default()
                };
                let t0 = Instant::now();
                let report = solver.solve(target, &config).expect("mm");
                println!(
                    "frame {frame} lambda {lambda:5}: quad/{init:<6} {:3} iters {:8.2?} err {:.4e} card {:3} conv {}",
                    report.iterations,
                    t0.elapsed(),
                    mesh_error(&data.rig, &report.weights, target).unwrap(),
                    cardinality(&report.weights, 1e-4),
                    report.converged,
                );
            }
        }
    }
}
