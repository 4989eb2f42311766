//! Reproducible synthetic rigs and animation sequences.
//!
//! Real capture data is proprietary, so benchmarks run on generated analogues
//! at matching dimensions: localized blendshapes (each touches one contiguous
//! vertex block), corrective terms supported on the union of their
//! controllers' blocks, and smooth sparse ground-truth weight trajectories.
//! Everything is drawn from a single seeded ChaCha stream, so equal specs
//! produce bitwise-equal outputs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rig::{Rig, TargetMesh, WeightVector};

/// Standard deviation of blendshape entries inside their support blocks,
/// mesh length units. Sets the overall displacement scale: large enough that
/// the standard lambda grid spans mild-to-strong regularization instead of
/// overwhelming the data term, as it would on a unit-scale mesh.
const BLENDSHAPE_AMPLITUDE: f64 = 5.0;

/// Generation parameters. `Default` is the benchmark-scale benchmark used by the
/// acceptance suite.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub n_vertices: usize,
    pub n_controllers: usize,
    pub n_pairs: usize,
    pub n_triples: usize,
    pub n_quads: usize,
    pub n_frames: usize,
    /// Expected fraction of active controllers per frame, in (0, 1].
    pub sparsity: f64,
    /// Correction vector norm relative to the mean blendshape column norm.
    pub correction_scale: f64,
    /// Standard deviation of additive Gaussian target noise, length units.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    /// Benchmark-scale benchmark dimensions.
    fn default() -> Self {
        Self {
            n_vertices: 6012,
            n_controllers: 100,
            n_pairs: 150,
            n_triples: 30,
            n_quads: 10,
            n_frames: 150,
            sparsity: 0.15,
            correction_scale: 0.5,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

fn binomial(m: usize, k: usize) -> f64 {
    if m < k {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_vertices == 0 || self.n_controllers == 0 || self.n_frames == 0 {
            return Err(Error::InfeasibleSpec(
                "n_vertices, n_controllers and n_frames must be positive".into(),
            ));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::InfeasibleSpec(format!(
                "sparsity must be in (0, 1], got {}",
                self.sparsity
            )));
        }
        if !(self.correction_scale >= 0.0 && self.correction_scale.is_finite()) {
            return Err(Error::InfeasibleSpec(format!(
                "correction_scale must be finite and >= 0, got {}",
                self.correction_scale
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InfeasibleSpec(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        for (count, order) in [
            (self.n_pairs, 2usize),
            (self.n_triples, 3),
            (self.n_quads, 4),
        ] {
            if count as f64 > binomial(self.n_controllers, order) {
                return Err(Error::InfeasibleSpec(format!(
                    "{count} order-{order} tuples do not fit in m = {} controllers",
                    self.n_controllers
                )));
            }
        }
        Ok(())
    }
}

/// A generated benchmark: the rig, the ground-truth weights that produced the
/// targets, and the (possibly noisy) targets themselves.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub rig: Rig,
    pub ground_truth: Vec<WeightVector>,
    pub targets: Vec<TargetMesh>,
}

/// Generate a dataset. Single-threaded and fully deterministic in the seed.
pub fn generate(spec: &GenSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_vertices;
    let nc = 3 * n;
    let m = spec.n_controllers;

    // Localized blendshapes: each controller deforms one contiguous vertex
    // block of roughly a twentieth of the mesh.
    let block_vertices = (n / 20).max(1);
    let mut blocks: Vec<(usize, usize)> = Vec::with_capacity(m); // coord ranges
    let mut blendshapes = DMatrix::zeros(nc, m);
    for j in 0..m {
        let start_v = rng.gen_range(0..=n - block_vertices);
        let (lo, hi) = (3 * start_v, 3 * (start_v + block_vertices));
        blocks.push((lo, hi));
        for i in lo..hi {
            blendshapes[(i, j)] = BLENDSHAPE_AMPLITUDE * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mean_col_norm =
        (0..m).map(|j| blendshapes.column(j).norm()).sum::<f64>() / m as f64;
    let correction_norm = spec.correction_scale * mean_col_norm;

    let sample_tuples = |rng: &mut ChaCha8Rng, order: usize, count: usize| -> Vec<Vec<usize>> {
        let mut tuples: Vec<Vec<usize>> = Vec::with_capacity(count);
        while tuples.len() < count {
            let mut t: Vec<usize> = Vec::with_capacity(order);
            while t.len() < order {
                let c = rng.gen_range(0..m);
                if !t.contains(&c) {
                    t.push(c);
                }
            }
            t.sort_unstable();
            if !tuples.contains(&t) {
                tuples.push(t);
            }
        }
        tuples
    };

    // Correction vectors live on the union of their controllers' blocks and
    // share a common norm relative to the primary blendshapes.
    let make_correction = |rng: &mut ChaCha8Rng, tuple: &[usize]| -> DVector<f64> {
        let mut v = DVector::zeros(nc);
        for &c in tuple {
            let (lo, hi) = blocks[c];
            for i in lo..hi {
                v[i] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let norm = v.norm();
        if norm > 0.0 && correction_norm > 0.0 {
            v *= correction_norm / norm;
        } else {
            v.fill(0.0);
        }
        v
    };

    let mut corrections2 = Vec::with_capacity(spec.n_pairs);
    for t in sample_tuples(&mut rng, 2, spec.n_pairs) {
        let v = make_correction(&mut rng, &t);
        corrections2.push(([t[0], t[1]], v));
    }
    let mut corrections3 = Vec::with_capacity(spec.n_triples);
    for t in sample_tuples(&mut rng, 3, spec.n_triples) {
        let v = make_correction(&mut rng, &t);
        corrections3.push(([t[0], t[1], t[2]], v));
    }
    let mut corrections4 = Vec::with_capacity(spec.n_quads);
    for t in sample_tuples(&mut rng, 4, spec.n_quads) {
        let v = make_correction(&mut rng, &t);
        corrections4.push(([t[0], t[1], t[2], t[3]], v));
    }

    let rig = Rig::new(
        DVector::zeros(nc),
        blendshapes,
        corrections2,
        corrections3,
        corrections4,
    )?;

    // Smooth sparse trajectories: clamped sinusoids. A controller is active
    // when its sinusoid exceeds c = cos(pi * sparsity), which a sinusoid does
    // for exactly a `sparsity` fraction of its period.
    let activity = (std::f64::consts::PI * spec.sparsity).cos();
    struct Track {
        amplitude: f64,
        cycles: f64,
        phase: f64,
    }
    let tracks: Vec<Track> = (0..m)
        .map(|_| Track {
            amplitude: rng.gen_range(0.3..1.0),
            cycles: rng.gen_range(0.5..2.0),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect();

    let mut ground_truth = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let phase_t = t as f64 / spec.n_frames as f64;
        let w = DVector::from_fn(m, |j, _| {
            let track = &tracks[j];
            let s = (std::f64::consts::TAU * track.cycles * phase_t + track.phase).sin();
            let raw = (s - activity) / (1.0 - activity).max(f64::MIN_POSITIVE);
            track.amplitude * raw.clamp(0.0, 1.0)
        });
        ground_truth.push(WeightVector::new(w)?);
    }

    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.noise_std).map_err(|e| Error::InfeasibleSpec(e.to_string()))?)
    } else {
        None
    };
    let mut targets = Vec::with_capacity(spec.n_frames);
    for w in &ground_truth {
        let mut b_hat = rig.evaluate_full(w)?.into_coords();
        if let Some(noise) = &noise {
            for x in b_hat.iter_mut() {
                *x += noise.sample(&mut rng);
            }
        }
        targets.push(TargetMesh::new(b_hat));
    }

    Ok(SyntheticDataset {
        rig,
        ground_truth,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::{QpConfig, QpSolver};

    fn small_spec() -> GenSpec {
        GenSpec {
            n_vertices: 120,
            n_controllers: 12,
            n_pairs: 10,
            n_triples: 4,
            n_quads: 2,
            n_frames: 40,
            sparsity: 0.3,
            correction_scale: 0.5,
            noise_std: 0.0,
            seed: 9,
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = small_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.rig, b.rig);
        assert_eq!(a.ground_truth.len(), b.ground_truth.len());
        for (x, y) in a.ground_truth.iter().zip(&b.ground_truth) {
            assert_eq!(x.vector(), y.vector());
        }
        for (x, y) in a.targets.iter().zip(&b.targets) {
            assert_eq!(x.coords(), y.coords());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&GenSpec {
            seed: 10,
            ..small_spec()
        })
        .unwrap();
        assert_ne!(a.rig.blendshapes(), b.rig.blendshapes());
    }

    #[test]
    fn linear_spec_is_exactly_recoverable() {
        // no corrections, no noise: the QP refits every frame to near-zero
        // residual
        let spec = GenSpec {
            n_pairs: 0,
            n_triples: 0,
            n_quads: 0,
            ..small_spec()
        };
        let data = generate(&spec).unwrap();
        assert!(data.rig.corrections2().is_empty());
        let solver = QpSolver::new(data.rig.blendshapes());
        for target in &data.targets {
            let report = solver.solve(target, &QpConfig::new(0.0)).unwrap();
            let err = (data.rig.evaluate_full(&report.weights).unwrap().coords()
                - target.coords())
            .norm()
                / data.rig.n_vertices() as f64;
            assert!(err <= 1e-6, "mesh error {err}");
        }
    }

    #[test]
    fn corrections_make_rig_orders_differ() {
        let data = generate(&small_spec()).unwrap();
        let mut gap = 0.0;
        for w in &data.ground_truth {
            let full = data.rig.evaluate_full(w).unwrap();
            let lin = data.rig.evaluate_linear(w).unwrap();
            gap += (full.coords() - lin.coords()).norm_squared();
        }
        assert!(
            (gap / data.ground_truth.len() as f64).sqrt() > 0.0,
            "full and linear rig evaluations coincide"
        );
    }

    #[test]
    fn weights_are_feasible_and_sparse() {
        let spec = small_spec();
        let data = generate(&spec).unwrap();
        let m = spec.n_controllers as f64;
        let expect = spec.sparsity * m;
        let sigma = (m * spec.sparsity * (1.0 - spec.sparsity)).sqrt();
        let mut mean_active = 0.0;
        for w in &data.ground_truth {
            for &v in w.as_slice() {
                assert!((0.0..=1.0).contains(&v));
            }
            mean_active += w.as_slice().iter().filter(|&&v| v > 0.0).count() as f64;
        }
        mean_active /= data.ground_truth.len() as f64;
        assert!(
            (mean_active - expect).abs() <= 3.0 * sigma,
            "mean active {mean_active}, expected about {expect}"
        );
    }

    #[test]
    fn trajectories_are_smooth() {
        let data = generate(&small_spec()).unwrap();
        for pair in data.ground_truth.windows(2) {
            let step = (pair[1].vector() - pair[0].vector()).amax();
            assert!(step < 0.5, "frame-to-frame jump {step}");
        }
    }

    #[test]
    fn correction_norms_follow_scale() {
        let data = generate(&small_spec()).unwrap();
        let mean_col = (0..data.rig.n_controllers())
            .map(|j| data.rig.blendshapes().column(j).norm())
            .sum::<f64>()
            / data.rig.n_controllers() as f64;
        for (_, v) in data.rig.corrections2() {
            assert!((v.norm() - 0.5 * mean_col).abs() <= 1e-9 * mean_col);
        }
    }

    #[test]
    fn noise_perturbs_targets() {
        let clean = generate(&small_spec()).unwrap();
        let noisy = generate(&GenSpec {
            noise_std: 0.1,
            ..small_spec()
        })
        .unwrap();
        let diff = (noisy.targets[0].coords() - clean.targets[0].coords()).norm();
        assert!(diff > 0.0);
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        assert!(generate(&GenSpec {
            n_pairs: 1000,
            ..small_spec()
        })
        .is_err());
        assert!(generate(&GenSpec {
            sparsity: 0.0,
            ..small_spec()
        })
        .is_err());
        assert!(generate(&GenSpec {
            n_frames: 0,
            ..small_spec()
        })
        .is_err());
        assert!(generate(&GenSpec {
            noise_std: -1.0,
            ..small_spec()
        })
        .is_err());
    }
}
