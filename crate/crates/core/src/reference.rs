//! Slow, independent reference implementations used to cross-check the
//! optimized code paths in tests. Everything here favors obviousness over
//! speed: dense matrices, grid scans, bisection and brute-force enumeration.
//!
//! Not intended for production use; exported so downstream test suites can
//! reuse the same oracles.

use nalgebra::{DMatrix, DVector};

use crate::quartic::QuarticProblem;
use crate::rig::{Rig, TargetMesh, WeightVector};
use crate::spectral::QuadraticCache;

/// Dense `m x m` matrix `D^(i)` for one coordinate, built entry by entry from
/// the pair list: `D_jk = D_kj = b_i^{j,k} / 2`, zero diagonal.
pub fn dense_d_matrix(rig: &Rig, i: usize) -> DMatrix<f64> {
    let m = rig.n_controllers();
    let mut d = DMatrix::zeros(m, m);
    for (t, v) in rig.corrections2() {
        let half = 0.5 * v[i];
        d[(t[0], t[1])] += half;
        d[(t[1], t[0])] += half;
    }
    d
}

/// Exhaustive grid scan of a quartic problem over its interval. Returns the
/// best `(v, value)` among `lo`, `lo + step`, ..., `hi`.
pub fn grid_min_quartic(prob: &QuarticProblem, step: f64) -> (f64, f64) {
    assert!(step > 0.0);
    let mut best_v = prob.lo;
    let mut best_val = prob.eval(prob.lo);
    let steps = ((prob.hi - prob.lo) / step).ceil() as u64;
    for k in 1..=steps {
        let v = (prob.lo + k as f64 * step).min(prob.hi);
        let val = prob.eval(v);
        if val < best_val {
            best_v = v;
            best_val = val;
        }
    }
    (best_v, best_val)
}

/// Root of `v^3 + a1 v + a0` in `[lo, hi]` by bisection. The bracket must
/// contain a sign change.
pub fn bisect_depressed_cubic(a1: f64, a0: f64, lo: f64, hi: f64) -> f64 {
    let f = |v: f64| v * v * v + a1 * v + a0;
    let (mut lo, mut hi) = (lo, hi);
    let (mut flo, fhi) = (f(lo), f(hi));
    assert!(
        flo * fhi <= 0.0,
        "no sign change in [{lo}, {hi}] for a1={a1}, a0={a0}"
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 {
            return mid;
        }
        if flo * fmid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fmid;
        }
    }
    0.5 * (lo + hi)
}

/// Brute-force solution of `min ||Bw - b_hat||^2 + lambda 1'w` over the unit
/// box by enumerating all 3^m active-set patterns (each coordinate fixed at
/// 0, fixed at 1, or free) and solving the equality-constrained normal
/// equations on the free block. Returns the best feasible objective.
///
/// Exponential in `m`; keep `m` small.
pub fn qp_enumeration_oracle(b: &DMatrix<f64>, b_hat: &DVector<f64>, lambda: f64) -> f64 {
    let m = b.ncols();
    assert!(m <= 12, "enumeration oracle is 3^m");
    let gram = b.transpose() * b;
    let bt = b.transpose() * b_hat;
    let objective = |w: &DVector<f64>| (b * w - b_hat).norm_squared() + lambda * w.sum();

    let mut best = f64::INFINITY;
    let patterns = 3usize.pow(m as u32);
    for code in 0..patterns {
        let mut digits = vec![0u8; m];
        let mut c = code;
        for d in digits.iter_mut() {
            *d = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..m).filter(|&j| digits[j] == 2).collect();
        let mut w = DVector::from_fn(m, |j, _| if digits[j] == 1 { 1.0 } else { 0.0 });
        if !free.is_empty() {
            let nf = free.len();
            // stationarity on the free block:
            //   2 G_FF w_F = 2 bt_F - lambda - 2 G_FA 1_A
            let mut a = DMatrix::zeros(nf, nf);
            let mut rhs = DVector::zeros(nf);
            for (r, &jr) in free.iter().enumerate() {
                for (cc, &jc) in free.iter().enumerate() {
                    a[(r, cc)] = 2.0 * gram[(jr, jc)];
                }
                let mut val = 2.0 * bt[jr] - lambda;
                for j in 0..m {
                    if digits[j] == 1 {
                        val -= 2.0 * gram[(jr, j)];
                    }
                }
                rhs[r] = val;
            }
            let Some(sol) = a.lu().solve(&rhs) else {
                continue;
            };
            let mut feasible = true;
            for (r, &jr) in free.iter().enumerate() {
                if !(-1e-9..=1.0 + 1e-9).contains(&sol[r]) {
                    feasible = false;
                    break;
                }
                w[jr] = sol[r].clamp(0.0, 1.0);
            }
            if !feasible {
                continue;
            }
        }
        let val = objective(&w);
        if val < best {
            best = val;
        }
    }
    best
}

/// Quadratic-approximation objective evaluated with per-coordinate scalar
/// sums, no linear algebra.
pub fn objective_quadratic_naive(
    rig: &Rig,
    w: &WeightVector,
    target: &TargetMesh,
    lambda: f64,
) -> f64 {
    let ws = w.as_slice();
    let mut fidelity = 0.0;
    for i in 0..rig.n_coords() {
        let mut fi = 0.0;
        for j in 0..rig.n_controllers() {
            fi += rig.blendshapes()[(i, j)] * ws[j];
        }
        for (t, v) in rig.corrections2() {
            fi += ws[t[0]] * ws[t[1]] * v[i];
        }
        let g = fi - target.coords()[i];
        fidelity += g * g;
    }
    fidelity + lambda * ws.iter().sum::<f64>()
}

/// Surrogate coefficients assembled the direct way: one residual entry and
/// one explicit row `h_i` per coordinate.
pub fn surrogate_coefficients_naive(
    rig: &Rig,
    cache: &QuadraticCache,
    w: &WeightVector,
    target: &TargetMesh,
    lambda: f64,
) -> (f64, DVector<f64>, f64, f64) {
    let m = rig.n_controllers();
    let g = rig.residual_g(w, target).unwrap();
    let p = g.norm_squared() + lambda * w.vector().sum();
    let mut q = DVector::from_element(m, lambda);
    let mut r = 0.0;
    for i in 0..rig.n_coords() {
        let h = cache.h_row(rig, i, w.vector());
        q.axpy(2.0 * g[i], &h, 1.0);
        r += g[i] * cache.lambda_m(i, g[i]) + h.norm_squared();
    }
    (p, q, 2.0 * r, cache.s_coefficient())
}

/// Central finite differences of the fidelity term
/// `||f_quad(w) - b_hat||^2` alone (no regularization). The weights must sit
/// at least `h` inside the box.
pub fn finite_diff_fidelity_gradient(
    rig: &Rig,
    w: &WeightVector,
    target: &TargetMesh,
    h: f64,
) -> DVector<f64> {
    let m = rig.n_controllers();
    let fidelity = |wv: DVector<f64>| -> f64 {
        rig.residual_g(&WeightVector::new(wv).unwrap(), target)
            .unwrap()
            .norm_squared()
    };
    DVector::from_fn(m, |j, _| {
        let mut plus = w.vector().clone();
        plus[j] += h;
        let mut minus = w.vector().clone();
        minus[j] -= h;
        (fidelity(plus) - fidelity(minus)) / (2.0 * h)
    })
}
