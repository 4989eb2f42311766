//! `rigsolve`: generate synthetic benchmarks, fit controller weights to
//! target meshes, and run sparsity/fidelity sweeps.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 solver
//! non-convergence under `--strict`. Every failure prints a single
//! `error[<code>]: <description>` line on stderr.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use rigsolve_core::io;
use rigsolve_core::metrics::{
    self, Model, SweepConfig, SweepRecord, DEFAULT_CARDINALITY_THRESHOLD, DEFAULT_LAMBDA_GRID,
};
use rigsolve_core::mm::{Init, MmSolver, SolverConfig};
use rigsolve_core::qp::{QpConfig, QpSolver};
use rigsolve_core::rig::{Rig, TargetMesh};
use rigsolve_core::spectral::QuadraticCache;
use rigsolve_core::synth::{generate, GenSpec};
use rigsolve_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

struct Failure {
    code: String,
    message: String,
    exit: u8,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = err.code();
        let exit = if code.starts_with("usage/") {
            EXIT_USAGE
        } else {
            EXIT_DATA
        };
        Failure {
            code: code.to_string(),
            message: err.to_string(),
            exit,
        }
    }
}

fn not_converged(detail: String) -> Failure {
    Failure {
        code: "solver/not-converged".into(),
        message: detail,
        exit: EXIT_NOT_CONVERGED,
    }
}

#[derive(Parser)]
#[command(name = "rigsolve", version, about = "Inverse rig solvers for blendshape animation")]
struct Cli {
    /// Worker threads for frame-level parallelism (default: all cores, or
    /// RIGSOLVE_THREADS if set). Results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rig, ground-truth weights and targets.
    Gen(GenArgs),
    /// Solve every frame of a target sequence with one solver configuration.
    Solve(SolveArgs),
    /// Run the lambda-sweep benchmark and write its CSV table.
    Sweep(SweepArgs),
    /// Compute metrics for externally produced weights.
    Eval(EvalArgs),
    /// Print rig dimensions and a spectral summary.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = GenSpec::default().n_vertices)]
    vertices: usize,
    #[arg(long, default_value_t = GenSpec::default().n_controllers)]
    controllers: usize,
    #[arg(long, default_value_t = GenSpec::default().n_pairs)]
    pairs: usize,
    #[arg(long, default_value_t = GenSpec::default().n_triples)]
    triples: usize,
    #[arg(long, default_value_t = GenSpec::default().n_quads)]
    quads: usize,
    #[arg(long, default_value_t = GenSpec::default().n_frames)]
    frames: usize,
    #[arg(long, default_value_t = GenSpec::default().sparsity)]
    sparsity: f64,
    #[arg(long, default_value_t = GenSpec::default().correction_scale)]
    correction_scale: f64,
    #[arg(long, default_value_t = GenSpec::default().noise_std)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for rig.json, rig.bin, targets.bin, weights.bin.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, default_value = "quadratic")]
    model: String,
    #[arg(long, default_value = "zero")]
    init: String,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Objective-change convergence threshold.
    #[arg(long, default_value_t = SolverConfig::default().epsilon)]
    eps: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iters)]
    max_iters: usize,
    /// Weight file to write (sidecar added alongside).
    #[arg(long)]
    out: PathBuf,
    /// Optional per-frame report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Exit with code 3 if any frame fails to converge.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    /// Comma-separated lambda grid.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = DEFAULT_LAMBDA_GRID)]
    lambdas: Vec<f64>,
    /// Comma-separated models (linear, quadratic).
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = vec!["linear".to_string(), "quadratic".to_string()])]
    models: Vec<String>,
    /// Comma-separated initializations (zero, pseudoinverse, linear).
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = vec!["zero".to_string(), "linear".to_string()])]
    inits: Vec<String>,
    #[arg(long, default_value_t = SweepConfig::default().epsilon)]
    eps: f64,
    #[arg(long, default_value_t = SweepConfig::default().max_iters)]
    max_iters: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Exit with code 3 if any sweep cell fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    /// Output CSV path (frame, mesh_error, cardinality).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    rig: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version are not failures
            if err.use_stderr() {
                eprintln!("{err}");
                return ExitCode::from(EXIT_USAGE);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error[{}]: {}", failure.code, failure.message);
            ExitCode::from(failure.exit)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = match cli.threads {
        Some(n) => Some(n),
        None => match std::env::var("RIGSOLVE_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| Failure {
                code: "usage/invalid-config".into(),
                message: format!("RIGSOLVE_THREADS must be a positive integer, got `{v}`"),
                exit: EXIT_USAGE,
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure {
                code: "usage/invalid-config".into(),
                message: "--threads must be at least 1".into(),
                exit: EXIT_USAGE,
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure {
                code: "usage/invalid-config".into(),
                message: e.to_string(),
                exit: EXIT_USAGE,
            })?;
    }
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), Failure> {
    let spec = GenSpec {
        n_vertices: args.vertices,
        n_controllers: args.controllers,
        n_pairs: args.pairs,
        n_triples: args.triples,
        n_quads: args.quads,
        n_frames: args.frames,
        sparsity: args.sparsity,
        correction_scale: args.correction_scale,
        noise_std: args.noise_std,
        seed: args.seed,
    };
    let data = generate(&spec)?;
    io::save_rig(&data.rig, &args.out)?;
    io::save_targets(&data.targets, &args.out.join("targets.bin"))?;
    let provenance = io::WeightsProvenance {
        solver: "ground-truth".into(),
        lambda: 0.0,
        init: "-".into(),
        rig_hash: io::rig_hash(&data.rig),
    };
    io::save_weights(
        &data.ground_truth,
        Some(provenance),
        &args.out.join("weights.bin"),
    )?;
    println!(
        "wrote rig ({} vertices, {} controllers, {}+{}+{} corrections), {} frames to {}",
        data.rig.n_vertices(),
        data.rig.n_controllers(),
        data.rig.corrections2().len(),
        data.rig.corrections3().len(),
        data.rig.corrections4().len(),
        data.targets.len(),
        args.out.display()
    );
    Ok(())
}

fn load_rig_and_targets(rig: &PathBuf, targets: &PathBuf) -> Result<(Rig, Vec<TargetMesh>), Failure> {
    let rig = io::load_rig(rig)?;
    let targets = io::load_targets(targets, &rig)?;
    Ok((rig, targets))
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let model = Model::from_str(&args.model)?;
    let init = Init::from_str(&args.init)?;
    let (rig, targets) = load_rig_and_targets(&args.rig, &args.targets)?;

    let mut records: Vec<SweepRecord> = Vec::with_capacity(targets.len());
    let mut weights = Vec::with_capacity(targets.len());
    let mut unconverged = 0usize;
    match model {
        Model::Linear => {
            let qp = QpSolver::new(rig.blendshapes());
            let config = QpConfig::new(args.lambda);
            let solved: Vec<_> = targets
                .par_iter()
                .map(|t| qp.solve(t, &config))
                .collect::<rigsolve_core::Result<_>>()?;
            for (frame, report) in solved.into_iter().enumerate() {
                if !report.converged {
                    unconverged += 1;
                }
                records.push(SweepRecord {
                    frame,
                    lambda: args.lambda,
                    model,
                    init: None,
                    mesh_error: metrics::mesh_error(&rig, &report.weights, &targets[frame])?,
                    cardinality: metrics::cardinality(
                        &report.weights,
                        DEFAULT_CARDINALITY_THRESHOLD,
                    ),
                    iterations: report.iterations,
                    wall_ms: 0.0,
                    objective: report.objective,
                });
                weights.push(report.weights);
            }
        }
        Model::Quadratic => {
            let cache = QuadraticCache::build(&rig);
            let solver = MmSolver::new(&rig, &cache)?;
            let config = SolverConfig {
                lambda: args.lambda,
                epsilon: args.eps,
                max_iters: args.max_iters,
                init,
            };
            let solved: Vec<_> = targets
                .par_iter()
                .map(|t| solver.solve(t, &config))
                .collect::<rigsolve_core::Result<_>>()?;
            for (frame, report) in solved.into_iter().enumerate() {
                if !report.converged {
                    unconverged += 1;
                }
                records.push(SweepRecord {
                    frame,
                    lambda: args.lambda,
                    model,
                    init: Some(init),
                    mesh_error: metrics::mesh_error(&rig, &report.weights, &targets[frame])?,
                    cardinality: metrics::cardinality(
                        &report.weights,
                        DEFAULT_CARDINALITY_THRESHOLD,
                    ),
                    iterations: report.iterations,
                    wall_ms: report.wall_time.as_secs_f64() * 1e3,
                    objective: report.final_objective(),
                });
                weights.push(report.weights);
            }
        }
    }

    let provenance = io::WeightsProvenance {
        solver: model.to_string(),
        lambda: args.lambda,
        init: match model {
            Model::Linear => "-".into(),
            Model::Quadratic => init.to_string(),
        },
        rig_hash: io::rig_hash(&rig),
    };
    io::save_weights(&weights, Some(provenance), &args.out)?;
    if let Some(report_path) = &args.report {
        let mut buf = Vec::new();
        metrics::write_csv(&mut buf, &records)?;
        fs::write(report_path, buf).map_err(Error::from)?;
    }
    println!(
        "solved {} frames ({} unconverged), weights at {}",
        targets.len(),
        unconverged,
        args.out.display()
    );
    if args.strict && unconverged > 0 {
        return Err(not_converged(format!(
            "{unconverged} of {} frames did not converge",
            targets.len()
        )));
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let models = args
        .models
        .iter()
        .map(|s| Model::from_str(s))
        .collect::<rigsolve_core::Result<Vec<_>>>()?;
    let inits = args
        .inits
        .iter()
        .map(|s| Init::from_str(s))
        .collect::<rigsolve_core::Result<Vec<_>>>()?;
    let (rig, targets) = load_rig_and_targets(&args.rig, &args.targets)?;
    let cache = QuadraticCache::build(&rig);
    let config = SweepConfig {
        lambdas: args.lambdas.clone(),
        models,
        inits,
        epsilon: args.eps,
        max_iters: args.max_iters,
        ..Default::default()
    };
    let result = metrics::run_sweep(&rig, &cache, &targets, &config)?;
    let mut buf = Vec::new();
    metrics::write_csv(&mut buf, &result.records)?;
    fs::write(&args.out, buf).map_err(Error::from)?;
    for (cell, detail) in &result.errors {
        eprintln!("warning: sweep cell {cell} failed: {detail}");
    }
    println!(
        "swept {} cells ({} failed) to {}",
        result.records.len() + result.errors.len(),
        result.errors.len(),
        args.out.display()
    );
    if args.strict && !result.errors.is_empty() {
        return Err(not_converged(format!(
            "{} sweep cells failed",
            result.errors.len()
        )));
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let (rig, targets) = load_rig_and_targets(&args.rig, &args.targets)?;
    let (weights, sidecar) = io::load_weights(&args.weights)?;
    if sidecar.m != rig.n_controllers() {
        return Err(Error::DimensionMismatch {
            field: "weights",
            expected: rig.n_controllers(),
            found: sidecar.m,
        }
        .into());
    }
    if weights.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            field: "frames",
            expected: targets.len(),
            found: weights.len(),
        }
        .into());
    }
    let mut out = String::from("frame,mesh_error,cardinality\n");
    for (frame, (w, t)) in weights.iter().zip(&targets).enumerate() {
        let err = metrics::mesh_error(&rig, w, t)?;
        let card = metrics::cardinality(w, DEFAULT_CARDINALITY_THRESHOLD);
        out.push_str(&format!("{frame},{err:.16e},{card}\n"));
    }
    fs::write(&args.out, out).map_err(Error::from)?;
    println!("evaluated {} frames to {}", weights.len(), args.out.display());
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Failure> {
    let rig = io::load_rig(&args.rig)?;
    let cache = QuadraticCache::build(&rig);
    println!("vertices:        {}", rig.n_vertices());
    println!("controllers:     {}", rig.n_controllers());
    println!("pair terms:      {}", rig.corrections2().len());
    println!("triple terms:    {}", rig.corrections3().len());
    println!("quad terms:      {}", rig.corrections4().len());
    println!("rig hash:        {}", io::rig_hash(&rig));
    let max_sigma = cache.sigma_max().iter().cloned().fold(0.0f64, f64::max);
    let coords_touched = cache.sigma_max().iter().filter(|&&s| s > 0.0).count();
    println!(
        "pair spectrum:   max sigma {:.6e} over {} of {} coordinates",
        max_sigma,
        coords_touched,
        rig.n_coords()
    );
    println!("surrogate s:     {:.6e}", cache.s_coefficient());
    println!(
        "involved ctrls:  {} of {}",
        cache.involved_controllers().len(),
        rig.n_controllers()
    );
    Ok(())
}
