//! Evaluation metrics and the lambda-sweep benchmark harness.
//!
//! Mesh error is always measured against the full quartic rig, whatever model
//! produced the weights; the divisor is the vertex count `n` (not `3n` and
//! not a square root), kept for comparability with existing trade-off plots
//! even though the quantity is not literally an RMSE.

use std::io::{BufRead, Write};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mm::{Init, MmSolver, SolverConfig};
use crate::qp::{QpConfig, QpSolver};
use crate::rig::{Rig, TargetMesh, WeightVector};
use crate::spectral::QuadraticCache;

/// Weights below this are treated as inactive when counting cardinality.
/// Animation tools ignore sub-1e-4 activations, and the solvers produce exact
/// zeros at the box boundary, so results are insensitive to the exact value.
pub const DEFAULT_CARDINALITY_THRESHOLD: f64 = 1e-4;

/// The standard sweep grid for the sparsity/fidelity trade-off.
pub const DEFAULT_LAMBDA_GRID: [f64; 9] = [0.0, 2.5, 5.0, 7.5, 10.0, 20.0, 50.0, 100.0, 500.0];

/// Which rig approximation the solver fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    Linear,
    Quadratic,
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Model::Linear => "linear",
            Model::Quadratic => "quadratic",
        })
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Model::Linear),
            "quadratic" => Ok(Model::Quadratic),
            other => Err(Error::InvalidConfig(format!(
                "unknown model `{other}` (expected linear|quadratic)"
            ))),
        }
    }
}

/// `||evaluate_full(w) - target||_2 / n_vertices`.
pub fn mesh_error(rig: &Rig, w: &WeightVector, target: &TargetMesh) -> Result<f64> {
    let out = rig.evaluate_full(w)?;
    if target.len() != out.len() {
        return Err(Error::DimensionMismatch {
            field: "target",
            expected: out.len(),
            found: target.len(),
        });
    }
    Ok((out.coords() - target.coords()).norm() / rig.n_vertices() as f64)
}

/// Number of weights strictly above `threshold`.
pub fn cardinality(w: &WeightVector, threshold: f64) -> usize {
    w.as_slice().iter().filter(|&&v| v > threshold).count()
}

/// One sweep cell: a single frame solved by one (lambda, model, init)
/// combination. `init` is `None` for the linear model, which has no
/// initialization choice.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub frame: usize,
    pub lambda: f64,
    pub model: Model,
    pub init: Option<Init>,
    pub mesh_error: f64,
    pub cardinality: usize,
    pub iterations: usize,
    pub wall_ms: f64,
    pub objective: f64,
}

/// Sweep options beyond the grid itself.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub models: Vec<Model>,
    pub inits: Vec<Init>,
    pub epsilon: f64,
    pub max_iters: usize,
    pub qp_tol: f64,
    pub qp_max_iters: usize,
    pub cardinality_threshold: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let mm = SolverConfig::default();
        let qp = QpConfig::new(0.0);
        Self {
            lambdas: DEFAULT_LAMBDA_GRID.to_vec(),
            models: vec![Model::Linear, Model::Quadratic],
            inits: vec![Init::Zero, Init::Linear],
            epsilon: mm.epsilon,
            // benchmark iteration budget; higher than the single-solve
            // default because trade-off curves compare near-converged points
            max_iters: 400,
            qp_tol: qp.tol,
            qp_max_iters: qp.max_iters,
            cardinality_threshold: DEFAULT_CARDINALITY_THRESHOLD,
        }
    }
}

/// Sweep output: records in deterministic (lambda, model, init, frame) order,
/// per-cell solver errors (non-fatal), and the count of objective-trace
/// monotonicity violations observed across all solves.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub errors: Vec<(usize, String)>,
    pub trace_violations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    lambda: f64,
    model: Model,
    init: Option<Init>,
    frame: usize,
}

/// Run the full benchmark sweep. Cells are independent and solved in
/// parallel on the current rayon pool; output order does not depend on the
/// thread count.
pub fn run_sweep(
    rig: &Rig,
    cache: &QuadraticCache,
    targets: &[TargetMesh],
    config: &SweepConfig,
) -> Result<SweepResult> {
    let solver = MmSolver::new(rig, cache)?;
    let qp = QpSolver::new(rig.blendshapes());

    let mut cells: Vec<Cell> = Vec::new();
    for &lambda in &config.lambdas {
        for &model in &config.models {
            let inits: Vec<Option<Init>> = match model {
                Model::Linear => vec![None],
                Model::Quadratic => config.inits.iter().copied().map(Some).collect(),
            };
            for init in inits {
                for frame in 0..targets.len() {
                    cells.push(Cell {
                        lambda,
                        model,
                        init,
                        frame,
                    });
                }
            }
        }
    }

    let outcomes: Vec<std::result::Result<(SweepRecord, usize), String>> = cells
        .par_iter()
        .map(|cell| {
            solve_cell(rig, &solver, &qp, targets, cell, config).map_err(|e| e.to_string())
        })
        .collect();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut errors = Vec::new();
    let mut trace_violations = 0;
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((record, violations)) => {
                records.push(record);
                trace_violations += violations;
            }
            Err(detail) => errors.push((idx, detail)),
        }
    }
    Ok(SweepResult {
        records,
        errors,
        trace_violations,
    })
}

fn solve_cell(
    rig: &Rig,
    solver: &MmSolver<'_>,
    qp: &QpSolver<'_>,
    targets: &[TargetMesh],
    cell: &Cell,
    config: &SweepConfig,
) -> Result<(SweepRecord, usize)> {
    let target = &targets[cell.frame];
    let (weights, iterations, wall_ms, objective, violations) = match cell.model {
        Model::Linear => {
            let qp_config = QpConfig {
                lambda: cell.lambda,
                tol: config.qp_tol,
                max_iters: config.qp_max_iters,
            };
            let start = Instant::now();
            let report = qp.solve(target, &qp_config)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            (
                report.weights,
                report.iterations,
                wall_ms,
                report.objective,
                0,
            )
        }
        Model::Quadratic => {
            let mm_config = SolverConfig {
                lambda: cell.lambda,
                epsilon: config.epsilon,
                max_iters: config.max_iters,
                init: cell.init.expect("quadratic cells carry an init"),
            };
            let report = solver.solve(target, &mm_config)?;
            let violations = report
                .objective_trace
                .windows(2)
                .filter(|p| p[1] > p[0] + 1e-12 * (1.0 + p[0].abs()))
                .count();
            let objective = report.final_objective();
            (
                report.weights,
                report.iterations,
                report.wall_time.as_secs_f64() * 1e3,
                objective,
                violations,
            )
        }
    };
    // re-validate before computing metrics; clamped solver output must
    // already satisfy the box
    let weights = WeightVector::new(weights.into_vector())?;
    let record = SweepRecord {
        frame: cell.frame,
        lambda: cell.lambda,
        model: cell.model,
        init: cell.init,
        mesh_error: mesh_error(rig, &weights, target)?,
        cardinality: cardinality(&weights, config.cardinality_threshold),
        iterations,
        wall_ms,
        objective,
    };
    Ok((record, violations))
}

/// Frame-averaged view of one (lambda, model, init) curve point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub lambda: f64,
    pub model: Model,
    pub init: Option<Init>,
    pub mean_mesh_error: f64,
    pub mean_cardinality: f64,
    pub median_iterations: f64,
    pub mean_wall_ms: f64,
    pub n_frames: usize,
}

/// Collapse sweep records into per-(lambda, model, init) frame averages, in
/// first-appearance order.
pub fn aggregate(records: &[SweepRecord]) -> Vec<CurvePoint> {
    let mut keys: Vec<(f64, Model, Option<Init>)> = Vec::new();
    for r in records {
        let key = (r.lambda, r.model, r.init);
        if !keys.iter().any(|k| k.0 == key.0 && k.1 == key.1 && k.2 == key.2) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(lambda, model, init)| {
            let group: Vec<&SweepRecord> = records
                .iter()
                .filter(|r| r.lambda == lambda && r.model == model && r.init == init)
                .collect();
            let n = group.len() as f64;
            let mut iters: Vec<f64> = group.iter().map(|r| r.iterations as f64).collect();
            iters.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median_iterations = if iters.is_empty() {
                0.0
            } else if iters.len() % 2 == 1 {
                iters[iters.len() / 2]
            } else {
                0.5 * (iters[iters.len() / 2 - 1] + iters[iters.len() / 2])
            };
            CurvePoint {
                lambda,
                model,
                init,
                mean_mesh_error: group.iter().map(|r| r.mesh_error).sum::<f64>() / n,
                mean_cardinality: group.iter().map(|r| r.cardinality as f64).sum::<f64>() / n,
                median_iterations,
                mean_wall_ms: group.iter().map(|r| r.wall_ms).sum::<f64>() / n,
                n_frames: group.len(),
            }
        })
        .collect()
}

pub const CSV_HEADER: &str = "frame,lambda,model,init,mesh_error,cardinality,iterations,wall_ms,objective";

fn init_label(init: Option<Init>) -> String {
    match init {
        Some(init) => init.to_string(),
        None => "-".to_string(),
    }
}

/// Write records as CSV (UTF-8, LF, 17 significant digits on every float so
/// the file round-trips bitwise).
pub fn write_csv<W: Write>(out: &mut W, records: &[SweepRecord]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{:.16e},{},{},{:.16e},{},{},{:.16e},{:.16e}",
            r.frame,
            r.lambda,
            r.model,
            init_label(r.init),
            r.mesh_error,
            r.cardinality,
            r.iterations,
            r.wall_ms,
            r.objective,
        )?;
    }
    Ok(())
}

/// Parse a CSV produced by [`write_csv`].
pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<SweepRecord>> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Csv {
        line: 1,
        detail: "empty file".into(),
    })?;
    let header = header?;
    if header.trim_end() != CSV_HEADER {
        return Err(Error::Csv {
            line: 1,
            detail: format!("unexpected header `{header}`"),
        });
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Csv {
                line: lineno,
                detail: format!("expected 9 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::Csv {
            line: lineno,
            detail: format!("invalid {what}"),
        };
        let init = match fields[3] {
            "-" => None,
            other => Some(other.parse::<Init>().map_err(|_| bad("init"))?),
        };
        records.push(SweepRecord {
            frame: fields[0].parse().map_err(|_| bad("frame"))?,
            lambda: fields[1].parse().map_err(|_| bad("lambda"))?,
            model: fields[2].parse().map_err(|_| bad("model"))?,
            init,
            mesh_error: fields[4].parse().map_err(|_| bad("mesh_error"))?,
            cardinality: fields[5].parse().map_err(|_| bad("cardinality"))?,
            iterations: fields[6].parse().map_err(|_| bad("iterations"))?,
            wall_ms: fields[7].parse().map_err(|_| bad("wall_ms"))?,
            objective: fields[8].parse().map_err(|_| bad("objective"))?,
        });
    }
    Ok(records)
}
