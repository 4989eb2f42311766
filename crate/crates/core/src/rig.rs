//! Blendshape data model and rig function evaluation.
//!
//! A rig maps controller weights `w` to mesh coordinates. The full rig is a
//! fourth-order polynomial: a linear blendshape term plus corrective terms
//! activated by products of two, three or four controller weights. All meshes
//! are stored relative to the neutral face, so `w = 0` maps to the zero
//! vector.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Run-length view of a mostly-zero vector: maximal nonzero runs with their
/// start offsets. Correction vectors are supported on a few contiguous
/// vertex blocks, so iterating runs instead of the full length makes the
/// per-frame hot loops proportional to the support size.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SparseRuns {
    runs: Vec<(usize, Vec<f64>)>,
}

impl SparseRuns {
    pub fn from_dense(v: &DVector<f64>) -> Self {
        let mut runs = Vec::new();
        let mut i = 0;
        let s = v.as_slice();
        while i < s.len() {
            if s[i] != 0.0 {
                let start = i;
                while i < s.len() && s[i] != 0.0 {
                    i += 1;
                }
                runs.push((start, s[start..i].to_vec()));
            } else {
                i += 1;
            }
        }
        Self { runs }
    }

    /// `out += c * self`
    pub fn axpy_into(&self, c: f64, out: &mut DVector<f64>) {
        let out = out.as_mut_slice();
        for (start, vals) in &self.runs {
            for (k, &v) in vals.iter().enumerate() {
                out[start + k] += c * v;
            }
        }
    }

    pub fn dot(&self, other: &DVector<f64>) -> f64 {
        let other = other.as_slice();
        let mut acc = 0.0;
        for (start, vals) in &self.runs {
            for (k, &v) in vals.iter().enumerate() {
                acc += v * other[start + k];
            }
        }
        acc
    }
}

/// A blendshape rig: neutral mesh, blendshape matrix and corrective terms.
///
/// Immutable after construction; evaluation methods are read-only and safe to
/// call concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    n_vertices: usize,
    neutral: DVector<f64>,
    /// 3n x m, column j is blendshape j (neutral-relative).
    blendshapes: DMatrix<f64>,
    corrections2: Vec<([usize; 2], DVector<f64>)>,
    corrections3: Vec<([usize; 3], DVector<f64>)>,
    corrections4: Vec<([usize; 4], DVector<f64>)>,
    // run-length views of the corrections, precomputed for the evaluation
    // hot loops
    sparse2: Vec<SparseRuns>,
    sparse3: Vec<SparseRuns>,
    sparse4: Vec<SparseRuns>,
}

fn validate_tuples<const K: usize>(
    tuples: &[([usize; K], DVector<f64>)],
    m: usize,
    n_coords: usize,
) -> Result<()> {
    let mut seen: Vec<[usize; K]> = Vec::with_capacity(tuples.len());
    for (tuple, vec) in tuples {
        if vec.len() != n_coords {
            return Err(Error::DimensionMismatch {
                field: "correction vector",
                expected: n_coords,
                found: vec.len(),
            });
        }
        for win in tuple.windows(2) {
            if win[0] >= win[1] {
                return Err(Error::InvalidTuple {
                    order: K,
                    detail: format!("{tuple:?} is not strictly ascending"),
                });
            }
        }
        if tuple[K - 1] >= m {
            return Err(Error::InvalidTuple {
                order: K,
                detail: format!("{tuple:?} has a controller index out of range (m = {m})"),
            });
        }
        if seen.contains(tuple) {
            return Err(Error::InvalidTuple {
                order: K,
                detail: format!("{tuple:?} appears more than once"),
            });
        }
        seen.push(*tuple);
    }
    Ok(())
}

impl Rig {
    pub fn new(
        neutral: DVector<f64>,
        blendshapes: DMatrix<f64>,
        corrections2: Vec<([usize; 2], DVector<f64>)>,
        corrections3: Vec<([usize; 3], DVector<f64>)>,
        corrections4: Vec<([usize; 4], DVector<f64>)>,
    ) -> Result<Self> {
        let n_coords = neutral.len();
        if n_coords == 0 || n_coords % 3 != 0 {
            return Err(Error::InvalidConfig(format!(
                "neutral mesh length must be a positive multiple of 3, got {n_coords}"
            )));
        }
        if blendshapes.nrows() != n_coords {
            return Err(Error::DimensionMismatch {
                field: "blendshapes",
                expected: n_coords,
                found: blendshapes.nrows(),
            });
        }
        let m = blendshapes.ncols();
        if m == 0 {
            return Err(Error::InvalidConfig("rig needs at least one controller".into()));
        }
        validate_tuples(&corrections2, m, n_coords)?;
        validate_tuples(&corrections3, m, n_coords)?;
        validate_tuples(&corrections4, m, n_coords)?;
        fn sparse<const K: usize>(c: &[([usize; K], DVector<f64>)]) -> Vec<SparseRuns> {
            c.iter().map(|(_, v)| SparseRuns::from_dense(v)).collect()
        }
        Ok(Self {
            sparse2: sparse(&corrections2),
            sparse3: sparse(&corrections3),
            sparse4: sparse(&corrections4),
            n_vertices: n_coords / 3,
            neutral,
            blendshapes,
            corrections2,
            corrections3,
            corrections4,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Number of scalar mesh coordinates, `3 * n_vertices`.
    pub fn n_coords(&self) -> usize {
        self.n_vertices * 3
    }

    pub fn n_controllers(&self) -> usize {
        self.blendshapes.ncols()
    }

    pub fn neutral(&self) -> &DVector<f64> {
        &self.neutral
    }

    pub fn blendshapes(&self) -> &DMatrix<f64> {
        &self.blendshapes
    }

    pub fn corrections2(&self) -> &[([usize; 2], DVector<f64>)] {
        &self.corrections2
    }

    pub fn corrections3(&self) -> &[([usize; 3], DVector<f64>)] {
        &self.corrections3
    }

    pub fn corrections4(&self) -> &[([usize; 4], DVector<f64>)] {
        &self.corrections4
    }

    fn check_weights(&self, w: &WeightVector) -> Result<()> {
        if w.len() != self.n_controllers() {
            return Err(Error::DimensionMismatch {
                field: "weights",
                expected: self.n_controllers(),
                found: w.len(),
            });
        }
        Ok(())
    }

    fn check_target(&self, target: &TargetMesh) -> Result<()> {
        if target.len() != self.n_coords() {
            return Err(Error::DimensionMismatch {
                field: "target",
                expected: self.n_coords(),
                found: target.len(),
            });
        }
        Ok(())
    }

    /// Full quartic rig: `Bw` plus all corrective terms, neutral-relative.
    pub fn evaluate_full(&self, w: &WeightVector) -> Result<TargetMesh> {
        self.check_weights(w)?;
        let mut out = &self.blendshapes * w.vector();
        let ws = w.as_slice();
        for ((t, _), runs) in self.corrections2.iter().zip(&self.sparse2) {
            let c = ws[t[0]] * ws[t[1]];
            if c != 0.0 {
                runs.axpy_into(c, &mut out);
            }
        }
        for ((t, _), runs) in self.corrections3.iter().zip(&self.sparse3) {
            let c = ws[t[0]] * ws[t[1]] * ws[t[2]];
            if c != 0.0 {
                runs.axpy_into(c, &mut out);
            }
        }
        for ((t, _), runs) in self.corrections4.iter().zip(&self.sparse4) {
            let c = ws[t[0]] * ws[t[1]] * ws[t[2]] * ws[t[3]];
            if c != 0.0 {
                runs.axpy_into(c, &mut out);
            }
        }
        Ok(TargetMesh(out))
    }

    /// Quadratic rig approximation: `Bw` plus the pair corrections only.
    pub fn evaluate_quadratic(&self, w: &WeightVector) -> Result<TargetMesh> {
        self.check_weights(w)?;
        let mut out = &self.blendshapes * w.vector();
        let ws = w.as_slice();
        for ((t, _), runs) in self.corrections2.iter().zip(&self.sparse2) {
            let c = ws[t[0]] * ws[t[1]];
            if c != 0.0 {
                runs.axpy_into(c, &mut out);
            }
        }
        Ok(TargetMesh(out))
    }

    /// Linear rig approximation: `Bw`.
    pub fn evaluate_linear(&self, w: &WeightVector) -> Result<TargetMesh> {
        self.check_weights(w)?;
        Ok(TargetMesh(&self.blendshapes * w.vector()))
    }

    /// Residual of the quadratic rig against a target, per coordinate:
    /// `g_i = B_i w + w' D^(i) w - b_hat_i`.
    pub fn residual_g(&self, w: &WeightVector, target: &TargetMesh) -> Result<DVector<f64>> {
        self.check_target(target)?;
        let mut g = self.evaluate_quadratic(w)?.0;
        g -= &target.0;
        Ok(g)
    }
}

/// Controller activations, each constrained to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(DVector<f64>);

impl WeightVector {
    pub fn new(w: DVector<f64>) -> Result<Self> {
        for (j, &v) in w.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "weight {j} = {v} is outside [0, 1]"
                )));
            }
        }
        Ok(Self(w))
    }

    /// Clamp each component into `[0, 1]`; NaN maps to 0.
    pub fn clamped(w: DVector<f64>) -> Self {
        Self(w.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn zeros(m: usize) -> Self {
        Self(DVector::zeros(m))
    }

    /// Unit vector `e_j`.
    pub fn unit(m: usize, j: usize) -> Self {
        let mut w = DVector::zeros(m);
        w[j] = 1.0;
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

/// A mesh to be fitted, stored relative to the rig's neutral face.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMesh(pub(crate) DVector<f64>);

impl TargetMesh {
    pub fn new(b_hat: DVector<f64>) -> Self {
        Self(b_hat)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.0
    }
}
