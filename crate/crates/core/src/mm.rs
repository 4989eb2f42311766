//! Majorization-minimization solver for the quadratic rig approximation.
//!
//! Minimizes `||f_quad(w) - b_hat||^2 + lambda 1'w` over `[0, 1]^m`. Each
//! iteration majorizes the objective by a separable quartic built from the
//! cached spectra (sign-split eigenvalue bound plus Cauchy-Schwarz), then
//! solves one constrained scalar quartic per controller. The surrogate
//! touches the objective at the current iterate, so the objective trace is
//! non-increasing and every iterate stays feasible by construction.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DVector, SVD};

use crate::error::{Error, Result};
use crate::qp::{QpConfig, QpSolver};
use crate::quartic::{minimize_quartic, QuarticProblem};
use crate::rig::{Rig, TargetMesh, WeightVector};
use crate::spectral::QuadraticCache;

/// Initialization strategy for the MM iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Init {
    /// `w_0 = 0`.
    Zero,
    /// Clamped minimum-norm least-squares solution of `Bw ~ b_hat`.
    Pseudoinverse,
    /// Solution of the linear-approximation QP at the same lambda.
    Linear,
}

impl std::fmt::Display for Init {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Init::Zero => "zero",
            Init::Pseudoinverse => "pseudoinverse",
            Init::Linear => "linear",
        })
    }
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Init::Zero),
            "pseudoinverse" => Ok(Init::Pseudoinverse),
            "linear" => Ok(Init::Linear),
            other => Err(Error::InvalidConfig(format!(
                "unknown init `{other}` (expected zero|pseudoinverse|linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Sparsity regularization weight, `>= 0`.
    pub lambda: f64,
    /// Stop when the objective changes less than this between iterations.
    pub epsilon: f64,
    pub max_iters: usize,
    pub init: Init,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            epsilon: 1e-6,
            max_iters: 200,
            init: Init::Zero,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one frame solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub weights: WeightVector,
    /// Number of MM steps taken.
    pub iterations: usize,
    /// Objective value before any step and after each step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace never empty")
    }
}

/// Separable surrogate for one MM iteration: the upper bound is
/// `p + sum_j (q_j v_j + r v_j^2 + s v_j^4)` in the increment `v`.
#[derive(Debug, Clone)]
pub struct SurrogateCoefficients {
    pub p: f64,
    pub q: DVector<f64>,
    pub r: f64,
    pub s: f64,
}

impl SurrogateCoefficients {
    /// Value of the surrogate (including the regularization of `w + v`) at
    /// increment `v`.
    pub fn eval(&self, v: &DVector<f64>) -> f64 {
        let mut acc = self.p;
        for (j, &vj) in v.iter().enumerate() {
            let v2 = vj * vj;
            acc += self.q[j] * vj + self.r * v2 + self.s * v2 * v2;
        }
        acc
    }
}

/// MM solver bound to one rig and its spectral cache. Shareable across
/// threads; the pseudoinverse factorization and the baseline QP context are
/// built lazily on first use.
pub struct MmSolver<'a> {
    rig: &'a Rig,
    cache: &'a QuadraticCache,
    svd: OnceLock<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    qp: OnceLock<QpSolver<'a>>,
}

impl<'a> MmSolver<'a> {
    pub fn new(rig: &'a Rig, cache: &'a QuadraticCache) -> Result<Self> {
        if cache.n_controllers() != rig.n_controllers() || cache.n_coords() != rig.n_coords()
            || cache.n_pairs() != rig.corrections2().len()
        {
            return Err(Error::InvalidConfig(
                "cache was not built from this rig".into(),
            ));
        }
        Ok(Self {
            rig,
            cache,
            svd: OnceLock::new(),
            qp: OnceLock::new(),
        })
    }

    pub fn rig(&self) -> &Rig {
        self.rig
    }

    pub fn cache(&self) -> &QuadraticCache {
        self.cache
    }

    /// The minimized objective: `||f_quad(w) - b_hat||^2 + lambda 1'w`.
    pub fn objective(&self, w: &WeightVector, target: &TargetMesh, lambda: f64) -> Result<f64> {
        let g = self.rig.residual_g(w, target)?;
        Ok(g.norm_squared() + lambda * w.vector().sum())
    }

    /// Coefficients of the separable surrogate at `w`.
    pub fn surrogate_coefficients(
        &self,
        w: &WeightVector,
        target: &TargetMesh,
        lambda: f64,
    ) -> Result<SurrogateCoefficients> {
        let g = self.rig.residual_g(w, target)?;
        Ok(self.assemble(w, &g, lambda))
    }

    /// Shared assembly path: all aggregates are computed from the cached pair
    /// dot products, never materializing the dense `3n x m` matrix of rows
    /// `h_i`.
    fn assemble(&self, w: &WeightVector, g: &DVector<f64>, lambda: f64) -> SurrogateCoefficients {
        let cache = self.cache;
        let ws = w.as_slice();
        let m = self.rig.n_controllers();

        let p = g.norm_squared() + lambda * w.vector().sum();

        // q_j = 2 sum_i g_i h_ij + lambda, with h_i = B_i + 2 w'D^(i).
        let mut q = self.rig.blendshapes().transpose() * g;
        let pair_g_dots: Vec<f64> = cache.pairs.iter().map(|p| p.runs.dot(g)).collect();
        for (idx, pair) in cache.pairs.iter().enumerate() {
            q[pair.j] += ws[pair.k] * pair_g_dots[idx];
            q[pair.k] += ws[pair.j] * pair_g_dots[idx];
        }
        q *= 2.0;
        q.add_scalar_mut(lambda);

        // sum_i ||h_i||^2 = ||B||_F^2 + 2 tr(B'U) + ||U||_F^2 where column j
        // of U is sum over pairs (j,k) of w_k b^{j,k}.
        let mut trace_bu = 0.0;
        for pair in &cache.pairs {
            trace_bu += ws[pair.k] * pair.dot_bj + ws[pair.j] * pair.dot_bk;
        }
        let mut u_frob_sq = 0.0;
        for c in 0..m {
            let adj = &cache.adjacency[c];
            let dots = &cache.cross_dots[c];
            for (a, &(_, other_a)) in adj.iter().enumerate() {
                let base = a * (a + 1) / 2;
                let wa = ws[other_a];
                u_frob_sq += wa * wa * dots[base + a];
                for (b, &(_, other_b)) in adj[..a].iter().enumerate() {
                    u_frob_sq += 2.0 * wa * ws[other_b] * dots[base + b];
                }
            }
        }
        let sum_h_sq = cache.b_frob_sq + 2.0 * trace_bu + u_frob_sq;

        let mut sum_g_lambda_m = 0.0;
        for (i, &gi) in g.iter().enumerate() {
            sum_g_lambda_m += gi * cache.lambda_m(i, gi);
        }
        let r = 2.0 * (sum_g_lambda_m + sum_h_sq);

        SurrogateCoefficients {
            p,
            q,
            r,
            s: cache.s_coefficient(),
        }
    }

    /// One MM step: minimize the surrogate per controller and add the
    /// increments. The result is feasible by construction.
    pub fn step(
        &self,
        w: &WeightVector,
        target: &TargetMesh,
        config: &SolverConfig,
    ) -> Result<WeightVector> {
        config.validate()?;
        let coeffs = self.surrogate_coefficients(w, target, config.lambda)?;
        self.step_with(w, &coeffs)
    }

    fn step_with(&self, w: &WeightVector, coeffs: &SurrogateCoefficients) -> Result<WeightVector> {
        let mut next = w.vector().clone();
        for (j, wj) in w.as_slice().iter().enumerate() {
            let prob = QuarticProblem::new(
                coeffs.p,
                coeffs.q[j],
                coeffs.r,
                coeffs.s,
                -wj,
                1.0 - wj,
            )?;
            let (v_hat, _) = minimize_quartic(&prob)?;
            next[j] = (wj + v_hat).clamp(0.0, 1.0);
        }
        WeightVector::new(next)
    }

    /// Full Algorithm: initialize, iterate MM steps, stop when the objective
    /// changes by less than `epsilon` or after `max_iters` steps.
    pub fn solve(&self, target: &TargetMesh, config: &SolverConfig) -> Result<SolveReport> {
        config.validate()?;
        let start = Instant::now();
        let mut w = self.initialize(target, config)?;
        let mut g = self.rig.residual_g(&w, target)?;
        let mut objective = g.norm_squared() + config.lambda * w.vector().sum();
        let mut trace = vec![objective];
        let mut converged = false;
        let mut iterations = 0;

        for _ in 0..config.max_iters {
            let coeffs = self.assemble(&w, &g, config.lambda);
            w = self.step_with(&w, &coeffs)?;
            iterations += 1;
            g = self.rig.residual_g(&w, target)?;
            let next_objective = g.norm_squared() + config.lambda * w.vector().sum();
            trace.push(next_objective);
            let delta = (objective - next_objective).abs();
            objective = next_objective;
            if delta < config.epsilon {
                converged = true;
                break;
            }
        }

        Ok(SolveReport {
            weights: w,
            iterations,
            objective_trace: trace,
            converged,
            wall_time: start.elapsed(),
        })
    }

    fn initialize(&self, target: &TargetMesh, config: &SolverConfig) -> Result<WeightVector> {
        match config.init {
            Init::Zero => Ok(WeightVector::zeros(self.rig.n_controllers())),
            Init::Pseudoinverse => {
                if target.len() != self.rig.n_coords() {
                    return Err(Error::DimensionMismatch {
                        field: "target",
                        expected: self.rig.n_coords(),
                        found: target.len(),
                    });
                }
                let svd = self
                    .svd
                    .get_or_init(|| SVD::new(self.rig.blendshapes().clone(), true, true));
                // rank-revealing cutoff: B may be rank deficient
                let cutoff = 1e-10
                    * svd
                        .singular_values
                        .iter()
                        .cloned()
                        .fold(0.0f64, f64::max);
                let ls = svd
                    .solve(target.coords(), cutoff)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                Ok(WeightVector::clamped(ls))
            }
            Init::Linear => {
                let qp = self.qp.get_or_init(|| QpSolver::new(self.rig.blendshapes()));
                let report = qp.solve(target, &QpConfig::new(config.lambda))?;
                Ok(report.weights)
            }
        }
    }
}
