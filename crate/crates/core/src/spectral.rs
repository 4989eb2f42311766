//! Per-coordinate quadratic-form cache.
//!
//! For each mesh coordinate `i` the pair corrections induce a symmetric
//! `m x m` matrix `D^(i)` with entries `D_jk = D_kj = b_i^{j,k} / 2` and zero
//! diagonal. The solver needs the extreme eigenvalues and the largest
//! singular value of every `D^(i)` once per character, plus a few dot
//! products reused on every iteration; this module computes and stores them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::rig::{Rig, SparseRuns};

#[derive(Debug, Clone)]
pub(crate) struct PairEntry {
    pub j: usize,
    pub k: usize,
    pub values: DVector<f64>,
    /// Run-length view of `values` for the per-iteration dot products.
    pub runs: SparseRuns,
    /// `||b^{j,k}||^2`
    pub norm_sq: f64,
    /// `B_{:,j} . b^{j,k}`
    pub dot_bj: f64,
    /// `B_{:,k} . b^{j,k}`
    pub dot_bk: f64,
}

/// Spectral quantities and iteration-invariant dot products for a rig's pair
/// corrections. Immutable and shareable across threads and frames.
#[derive(Debug, Clone)]
pub struct QuadraticCache {
    m: usize,
    n_coords: usize,
    pub(crate) pairs: Vec<PairEntry>,
    lambda_min: Vec<f64>,
    lambda_max: Vec<f64>,
    sigma_max: Vec<f64>,
    s_coefficient: f64,
    involved: Vec<usize>,
    /// `||B||_F^2`
    pub(crate) b_frob_sq: f64,
    /// For each controller, the pairs it appears in as `(pair index, other controller)`.
    pub(crate) adjacency: Vec<Vec<(usize, usize)>>,
    /// Per controller, lower-triangular (incl. diagonal) dot products between
    /// the correction vectors of its adjacent pairs, indexed like
    /// `cross_dots[c][a * (a + 1) / 2 + b]` for `b <= a`.
    pub(crate) cross_dots: Vec<Vec<f64>>,
}

impl QuadraticCache {
    /// Build the cache for a rig. Cost is dominated by one small symmetric
    /// eigendecomposition per coordinate touched by a pair correction.
    pub fn build(rig: &Rig) -> Self {
        let m = rig.n_controllers();
        let n_coords = rig.n_coords();
        let b = rig.blendshapes();

        let pairs: Vec<PairEntry> = rig
            .corrections2()
            .iter()
            .map(|(t, v)| PairEntry {
                j: t[0],
                k: t[1],
                norm_sq: v.norm_squared(),
                dot_bj: b.column(t[0]).dot(v),
                dot_bk: b.column(t[1]).dot(v),
                runs: SparseRuns::from_dense(v),
                values: v.clone(),
            })
            .collect();

        // Pairs with a nonzero entry at each coordinate.
        let mut pairs_at: Vec<Vec<u32>> = vec![Vec::new(); n_coords];
        for (p, entry) in pairs.iter().enumerate() {
            for (i, &v) in entry.values.iter().enumerate() {
                if v != 0.0 {
                    pairs_at[i].push(p as u32);
                }
            }
        }

        let spectra: Vec<(f64, f64, f64)> = (0..n_coords)
            .into_par_iter()
            .map(|i| coordinate_spectrum(&pairs, &pairs_at[i], i, m))
            .collect();
        let lambda_min: Vec<f64> = spectra.iter().map(|s| s.0).collect();
        let lambda_max: Vec<f64> = spectra.iter().map(|s| s.1).collect();
        let sigma_max: Vec<f64> = spectra.iter().map(|s| s.2).collect();

        let s_coefficient = 2.0 * m as f64 * sigma_max.iter().map(|s| s * s).sum::<f64>();

        let mut involved: Vec<usize> = pairs.iter().flat_map(|p| [p.j, p.k]).collect();
        involved.sort_unstable();
        involved.dedup();

        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
        for (p, entry) in pairs.iter().enumerate() {
            adjacency[entry.j].push((p, entry.k));
            adjacency[entry.k].push((p, entry.j));
        }
        let cross_dots: Vec<Vec<f64>> = adjacency
            .iter()
            .map(|adj| {
                let mut dots = Vec::with_capacity(adj.len() * (adj.len() + 1) / 2);
                for (a, &(pa, _)) in adj.iter().enumerate() {
                    for &(pb, _) in &adj[..=a] {
                        dots.push(if pa == pb {
                            pairs[pa].norm_sq
                        } else {
                            pairs[pa].values.dot(&pairs[pb].values)
                        });
                    }
                }
                dots
            })
            .collect();

        QuadraticCache {
            m,
            n_coords,
            pairs,
            lambda_min,
            lambda_max,
            sigma_max,
            s_coefficient,
            involved,
            b_frob_sq: b.iter().map(|x| x * x).sum(),
            adjacency,
            cross_dots,
        }
    }

    pub fn n_controllers(&self) -> usize {
        self.m
    }

    pub fn n_coords(&self) -> usize {
        self.n_coords
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn lambda_min(&self) -> &[f64] {
        &self.lambda_min
    }

    pub fn lambda_max(&self) -> &[f64] {
        &self.lambda_max
    }

    pub fn sigma_max(&self) -> &[f64] {
        &self.sigma_max
    }

    /// The quartic coefficient `s = 2m * sum_i sigma_max(D^(i))^2`, shared by
    /// every per-controller subproblem.
    pub fn s_coefficient(&self) -> f64 {
        self.s_coefficient
    }

    /// Controllers that appear in at least one pair correction, sorted.
    pub fn involved_controllers(&self) -> &[usize] {
        &self.involved
    }

    /// Sign-dependent spectral bound `lambda_M(D^(i), g_i)`.
    pub fn lambda_m(&self, i: usize, g_i: f64) -> f64 {
        if g_i < 0.0 {
            self.lambda_min[i]
        } else {
            self.lambda_max[i]
        }
    }

    /// `w' D^(i) w`, evaluated through the sparse pair list.
    pub fn quad_form(&self, i: usize, w: &DVector<f64>) -> f64 {
        assert_eq!(w.len(), self.m, "quad_form weight length");
        self.pairs
            .iter()
            .map(|p| w[p.j] * w[p.k] * p.values[i])
            .sum()
    }

    /// Row `h_i = B_i + 2 w' D^(i)` of the linearized rig at `w`.
    pub fn h_row(&self, rig: &Rig, i: usize, w: &DVector<f64>) -> DVector<f64> {
        assert_eq!(w.len(), self.m, "h_row weight length");
        assert_eq!(rig.n_controllers(), self.m, "h_row rig");
        let mut h = rig.blendshapes().row(i).transpose();
        for p in &self.pairs {
            let v = p.values[i];
            if v != 0.0 {
                h[p.j] += w[p.k] * v;
                h[p.k] += w[p.j] * v;
            }
        }
        h
    }
}

/// Spectrum of one coordinate's `D^(i)`, restricted to the controllers with a
/// nonzero row; zero rows contribute the eigenvalue 0, restored explicitly
/// when the restriction is smaller than `m`.
fn coordinate_spectrum(pairs: &[PairEntry], active: &[u32], i: usize, m: usize) -> (f64, f64, f64) {
    if active.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut controllers: Vec<usize> = active
        .iter()
        .flat_map(|&p| [pairs[p as usize].j, pairs[p as usize].k])
        .collect();
    controllers.sort_unstable();
    controllers.dedup();
    let k = controllers.len();
    let mut sub = DMatrix::zeros(k, k);
    for &p in active {
        let entry = &pairs[p as usize];
        let half = 0.5 * entry.values[i];
        let a = controllers.binary_search(&entry.j).unwrap();
        let b = controllers.binary_search(&entry.k).unwrap();
        sub[(a, b)] = half;
        sub[(b, a)] = half;
    }
    let eigs = jacobi_eigenvalues(&mut sub);
    let mut lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if k < m {
        // zero rows of the full D^(i) put 0 into the spectrum
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    (lo, hi, lo.abs().max(hi.abs()))
}

/// Cyclic Jacobi eigenvalue iteration for a small dense symmetric matrix.
/// Converges when the off-diagonal Frobenius norm drops below `1e-12` times
/// the initial Frobenius norm.
fn jacobi_eigenvalues(a: &mut DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    if n == 1 {
        return vec![a[(0, 0)]];
    }
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob == 0.0 {
        return vec![0.0; n];
    }
    let tol = 1e-12 * frob;
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| 2.0 * a[(p, q)] * a[(p, q)])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                for r in 0..n {
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    a[(r, p)] = c * arp - s * arq;
                    a[(r, q)] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[(p, r)];
                    let aqr = a[(q, r)];
                    a[(p, r)] = c * apr - s * aqr;
                    a[(q, r)] = s * apr + c * aqr;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::reference;
    use crate::rig::Rig;

    fn rig_with_pairs(
        nc: usize,
        m: usize,
        pairs: Vec<([usize; 2], DVector<f64>)>,
        rng: &mut ChaCha8Rng,
    ) -> Rig {
        let b = DMatrix::from_fn(nc, m, |_, _| rng.gen_range(-1.0..1.0));
        Rig::new(DVector::zeros(nc), b, pairs, vec![], vec![]).unwrap()
    }

    fn random_pair_rig(rng: &mut ChaCha8Rng, nc: usize, m: usize, n_pairs: usize) -> Rig {
        let mut tuples: Vec<[usize; 2]> = vec![];
        while tuples.len() < n_pairs {
            let j = rng.gen_range(0..m - 1);
            let k = rng.gen_range(j + 1..m);
            if !tuples.contains(&[j, k]) {
                tuples.push([j, k]);
            }
        }
        let pairs = tuples
            .into_iter()
            .map(|t| {
                // sparse correction: most coordinates zero
                let v = DVector::from_fn(nc, |_, _| {
                    if rng.gen_bool(0.4) {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    }
                });
                (t, v)
            })
            .collect();
        rig_with_pairs(nc, m, pairs, rng)
    }

    #[test]
    fn empty_pairs_give_zero_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rig = rig_with_pairs(6, 3, vec![], &mut rng);
        let cache = QuadraticCache::build(&rig);
        assert!(cache.lambda_min().iter().all(|&x| x == 0.0));
        assert!(cache.lambda_max().iter().all(|&x| x == 0.0));
        assert!(cache.sigma_max().iter().all(|&x| x == 0.0));
        assert_eq!(cache.s_coefficient(), 0.0);
        assert!(cache.involved_controllers().is_empty());
    }

    #[test]
    fn single_pair_analytic_spectrum() {
        // one pair (0,1), value 1 at coordinate 0: D = [[0, 0.5], [0.5, 0]]
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut v = DVector::zeros(6);
        v[0] = 1.0;
        let rig = rig_with_pairs(6, 2, vec![([0, 1], v)], &mut rng);
        let cache = QuadraticCache::build(&rig);
        assert!((cache.lambda_min()[0] + 0.5).abs() < 1e-12);
        assert!((cache.lambda_max()[0] - 0.5).abs() < 1e-12);
        assert!((cache.sigma_max()[0] - 0.5).abs() < 1e-12);
        for i in 1..6 {
            assert_eq!(cache.sigma_max()[i], 0.0);
        }
        // s = 2 m sum sigma^2 = 2 * 2 * 0.25
        assert!((cache.s_coefficient() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectra_match_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..10 {
            let m = 4 + (trial % 5);
            let rig = random_pair_rig(&mut rng, 9, m, m);
            let cache = QuadraticCache::build(&rig);
            for i in 0..rig.n_coords() {
                let d = reference::dense_d_matrix(&rig, i);
                let eig = SymmetricEigen::new(d);
                let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = eig
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((cache.lambda_min()[i] - lo).abs() < 1e-10, "lo at {i}");
                assert!((cache.lambda_max()[i] - hi).abs() < 1e-10, "hi at {i}");
                assert_eq!(
                    cache.sigma_max()[i],
                    cache.lambda_min()[i].abs().max(cache.lambda_max()[i].abs())
                );
            }
        }
    }

    #[test]
    fn quad_form_examples_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rig = random_pair_rig(&mut rng, 9, 5, 4);
        let cache = QuadraticCache::build(&rig);
        let zero = DVector::zeros(5);
        for i in 0..rig.n_coords() {
            assert_eq!(cache.quad_form(i, &zero), 0.0);
            for j in 0..5 {
                let mut e = DVector::zeros(5);
                e[j] = 1.0;
                assert_eq!(cache.quad_form(i, &e), 0.0, "zero diagonal");
            }
        }
        for _ in 0..20 {
            let w = DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
            for i in 0..rig.n_coords() {
                let d = reference::dense_d_matrix(&rig, i);
                let expect = (w.transpose() * &d * &w)[(0, 0)];
                let got = cache.quad_form(i, &w);
                assert!((got - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn h_row_examples_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rig = random_pair_rig(&mut rng, 9, 5, 4);
        let cache = QuadraticCache::build(&rig);
        let zero = DVector::zeros(5);
        for i in 0..rig.n_coords() {
            let h0 = cache.h_row(&rig, i, &zero);
            let bi = rig.blendshapes().row(i).transpose();
            assert_eq!(h0, bi);
        }
        for _ in 0..10 {
            let w = DVector::from_fn(5, |_, _| rng.gen_range(0.0..1.0));
            for i in 0..rig.n_coords() {
                let d = reference::dense_d_matrix(&rig, i);
                let expect = rig.blendshapes().row(i).transpose()
                    + (&d * &w) * 2.0; // D symmetric: (2 w' D)' = 2 D w
                let got = cache.h_row(&rig, i, &w);
                assert!((got - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinearity_of_implied_d() {
        // quad_form(u + v) - quad_form(u) - quad_form(v) = 2 u' D v
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rig = random_pair_rig(&mut rng, 6, 6, 6);
        let cache = QuadraticCache::build(&rig);
        for _ in 0..30 {
            let u = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let v = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            for i in 0..rig.n_coords() {
                let lhs = cache.quad_form(i, &(&u + &v))
                    - cache.quad_form(i, &u)
                    - cache.quad_form(i, &v);
                let d = reference::dense_d_matrix(&rig, i);
                let rhs = 2.0 * (u.transpose() * &d * &v)[(0, 0)];
                assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + rhs.abs()));
            }
        }
    }

    #[test]
    fn rayleigh_quotients_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rig = random_pair_rig(&mut rng, 6, 6, 8);
        let cache = QuadraticCache::build(&rig);
        for _ in 0..1000 {
            let mut v = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let n = v.norm();
            if n == 0.0 {
                continue;
            }
            v /= n;
            let i = rng.gen_range(0..rig.n_coords());
            let q = cache.quad_form(i, &v);
            assert!(q >= cache.lambda_min()[i] - 1e-9);
            assert!(q <= cache.lambda_max()[i] + 1e-9);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rig = random_pair_rig(&mut rng, 12, 8, 10);
        let a = QuadraticCache::build(&rig);
        let b = QuadraticCache::build(&rig);
        assert_eq!(a.lambda_min(), b.lambda_min());
        assert_eq!(a.lambda_max(), b.lambda_max());
        assert_eq!(a.sigma_max(), b.sigma_max());
        assert_eq!(a.s_coefficient(), b.s_coefficient());
    }
}
