//! Global minimization of `p + q v + r v^2 + s v^4` over a closed interval.
//!
//! This is the per-controller subproblem of each MM iteration: a quartic with
//! zero cubic coefficient and `s >= 0`. The derivative is a depressed cubic,
//! so the candidate minimizers are its real roots (closed form) plus the
//! interval endpoints.

use crate::error::{Error, Result};

/// One per-controller subproblem. `lo`/`hi` come from the box constraint on
/// the weight increment: `[-w_j, 1 - w_j]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticProblem {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub lo: f64,
    pub hi: f64,
}

impl QuarticProblem {
    pub fn new(p: f64, q: f64, r: f64, s: f64, lo: f64, hi: f64) -> Result<Self> {
        let prob = Self { p, q, r, s, lo, hi };
        prob.validate()?;
        Ok(prob)
    }

    fn validate(&self) -> Result<()> {
        let vals = [self.p, self.q, self.r, self.s, self.lo, self.hi];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::QuarticContract(format!(
                "non-finite coefficient in {self:?}"
            )));
        }
        if self.s < 0.0 {
            return Err(Error::QuarticContract(format!("s = {} < 0", self.s)));
        }
        if self.lo > self.hi {
            return Err(Error::QuarticContract(format!(
                "empty interval [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn eval(&self, v: f64) -> f64 {
        let v2 = v * v;
        self.p + self.q * v + self.r * v2 + self.s * v2 * v2
    }
}

/// Real roots of the depressed cubic `v^3 + a1 v + a0 = 0`, sorted ascending.
///
/// Discriminant split: one trigonometric branch for three real roots, Cardano
/// otherwise, each root polished by two Newton steps. The degenerate
/// `a1 = a0 = 0` case returns the triple root 0 once.
pub fn cubic_roots_depressed(a1: f64, a0: f64) -> Vec<f64> {
    if a1 == 0.0 && a0 == 0.0 {
        return vec![0.0];
    }
    let mut roots: Vec<f64> = Vec::with_capacity(3);
    if a1 == 0.0 {
        roots.push((-a0).cbrt());
    } else {
        let disc = (a0 / 2.0) * (a0 / 2.0) + (a1 / 3.0).powi(3);
        if disc > 0.0 {
            // one real root
            let sq = disc.sqrt();
            let u = (-a0 / 2.0 + sq).cbrt();
            let v = (-a0 / 2.0 - sq).cbrt();
            roots.push(u + v);
        } else {
            // three real roots (a1 < 0 here)
            let rad = (-a1 / 3.0).sqrt();
            let arg = (3.0 * a0 / (2.0 * a1 * rad)).clamp(-1.0, 1.0);
            let phi = arg.acos();
            for k in 0..3 {
                roots.push(2.0 * rad * ((phi - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos());
            }
        }
    }
    for root in &mut roots {
        // Newton polishing recovers digits lost by the closed form.
        for _ in 0..2 {
            let f = root.powi(3) + a1 * *root + a0;
            let df = 3.0 * *root * *root + a1;
            if df != 0.0 {
                *root -= f / df;
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup();
    roots
}

/// Constrained global minimizer of a quartic problem.
///
/// Returns `(v_star, value)` with `v_star` in `[lo, hi]`. Ties between
/// equal-value candidates resolve to the smallest `v`.
pub fn minimize_quartic(prob: &QuarticProblem) -> Result<(f64, f64)> {
    prob.validate()?;
    let mut candidates: Vec<f64> = vec![prob.lo, prob.hi];
    if prob.s > 0.0 {
        // stationary points: q + 2 r v + 4 s v^3 = 0
        let a1 = prob.r / (2.0 * prob.s);
        let a0 = prob.q / (4.0 * prob.s);
        for root in cubic_roots_depressed(a1, a0) {
            if root >= prob.lo && root <= prob.hi {
                candidates.push(root.clamp(prob.lo, prob.hi));
            }
        }
    } else if prob.r != 0.0 {
        // quadratic: derivative q + 2 r v = 0
        let root = -prob.q / (2.0 * prob.r);
        if root >= prob.lo && root <= prob.hi {
            candidates.push(root);
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_v = candidates[0];
    let mut best_val = prob.eval(best_v);
    for &v in &candidates[1..] {
        let val = prob.eval(v);
        if val < best_val {
            best_v = v;
            best_val = val;
        }
    }
    Ok((best_v, best_val))
}
