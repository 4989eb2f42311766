//! Box-constrained convex baseline for the linear rig approximation.
//!
//! Minimizes `F(w) = ||Bw - b_hat||^2 + lambda 1'w` over `[0, 1]^m` with an
//! accelerated projected gradient method (fixed step `1/L`, function-value
//! restart). Inside the box the L1 penalty is the linear term, so no proximal
//! operator is needed. The Gram matrix `B'B` is formed once and shared across
//! frames, leaving only `m x m` products in the iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rig::{TargetMesh, WeightVector};

/// Per-solve options for the baseline QP.
#[derive(Debug, Clone, Copy)]
pub struct QpConfig {
    pub lambda: f64,
    /// Projected-gradient residual tolerance (infinity norm).
    pub tol: f64,
    pub max_iters: usize,
}

impl QpConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            tol: 1e-8,
            max_iters: 5000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "qp lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "qp tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("qp max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of one QP solve.
#[derive(Debug, Clone)]
pub struct QpReport {
    pub weights: WeightVector,
    pub iterations: usize,
    pub converged: bool,
    /// Final objective `||Bw - b_hat||^2 + lambda 1'w`.
    pub objective: f64,
}

/// Solver context bound to one blendshape matrix; reusable across frames.
pub struct QpSolver<'a> {
    blendshapes: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
    /// Lipschitz constant of the gradient: `2 lambda_max(B'B)`.
    lipschitz: f64,
}

impl<'a> QpSolver<'a> {
    pub fn new(blendshapes: &'a DMatrix<f64>) -> Self {
        let gram = blendshapes.transpose() * blendshapes;
        // small inflation guards against power iteration undershooting
        let lipschitz = 2.0 * power_iteration_lambda_max(&gram, 1e-8) * (1.0 + 1e-6);
        Self {
            blendshapes,
            gram,
            lipschitz,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Solve one frame. `target` is neutral-relative.
    pub fn solve(&self, target: &TargetMesh, config: &QpConfig) -> Result<QpReport> {
        config.validate()?;
        if target.len() != self.blendshapes.nrows() {
            return Err(Error::DimensionMismatch {
                field: "target",
                expected: self.blendshapes.nrows(),
                found: target.len(),
            });
        }
        let m = self.blendshapes.ncols();
        let bt = self.blendshapes.transpose() * target.coords();
        let target_sq = target.coords().norm_squared();
        let lambda = config.lambda;

        // gradient and objective through the Gram matrix
        let grad = |w: &DVector<f64>| -> DVector<f64> {
            let mut g = &self.gram * w;
            g -= &bt;
            g *= 2.0;
            g.add_scalar_mut(lambda);
            g
        };
        let objective = |w: &DVector<f64>| -> f64 {
            (w.dot(&(&self.gram * w)) - 2.0 * w.dot(&bt) + target_sq) + lambda * w.sum()
        };
        let project = |w: &mut DVector<f64>| {
            for v in w.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        };

        let step = if self.lipschitz > 0.0 {
            1.0 / self.lipschitz
        } else {
            // zero matrix: the objective is linear in w, the origin is optimal
            1.0
        };

        let mut x = DVector::zeros(m);
        let mut x_prev = x.clone();
        let mut fx = objective(&x);
        let mut theta: f64 = 1.0;
        let mut iterations = 0;
        let mut converged = false;

        for _ in 0..config.max_iters {
            iterations += 1;
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_next;
            let mut y = &x + (&x - &x_prev) * beta;
            project(&mut y);
            let mut x_next = &y - grad(&y) * step;
            project(&mut x_next);
            let mut fx_next = objective(&x_next);
            if fx_next > fx {
                // restart momentum; a plain projected-gradient step from x
                // cannot increase the objective at step 1/L (up to rounding),
                // so accept it unconditionally to keep making progress
                let mut x_pg = &x - grad(&x) * step;
                project(&mut x_pg);
                x_next = x_pg;
                fx_next = objective(&x_next);
                theta = 1.0;
            } else {
                theta = theta_next;
            }
            x_prev = std::mem::replace(&mut x, x_next);
            fx = fx_next;

            // projected-gradient residual at the new point
            let g = grad(&x);
            let mut residual = 0.0f64;
            for j in 0..m {
                let stepped = (x[j] - g[j]).clamp(0.0, 1.0);
                residual = residual.max((x[j] - stepped).abs());
            }
            if residual <= config.tol {
                converged = true;
                break;
            }
        }

        Ok(QpReport {
            objective: objective(&x),
            weights: WeightVector::clamped(x),
            iterations,
            converged,
        })
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration with a relative tolerance on the Rayleigh quotient.
fn power_iteration_lambda_max(a: &DMatrix<f64>, rel_tol: f64) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0f64;
    for _ in 0..10_000 {
        let mut av = a * &v;
        let norm = av.norm();
        if norm == 0.0 {
            return 0.0;
        }
        av /= norm;
        let lambda_next = av.dot(&(a * &av));
        let done = (lambda_next - lambda).abs() <= rel_tol * lambda_next.abs().max(1e-300);
        v = av;
        lambda = lambda_next;
        if done {
            break;
        }
    }
    lambda
}
