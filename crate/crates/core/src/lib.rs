//! Inverse rig solvers for blendshape facial animation.
//!
//! Given a target mesh, recover bounded controller weights that reproduce it
//! under a blendshape rig with corrective terms. Two solvers are provided: a
//! majorization-minimization method on the quadratic rig approximation and a
//! projected-gradient baseline on the linear approximation, both with an L1
//! sparsity penalty (linear on the feasible box).

pub mod error;
pub mod io;
pub mod metrics;
pub mod mm;
pub mod qp;
pub mod quartic;
pub mod reference;
pub mod rig;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use metrics::{cardinality, mesh_error, run_sweep, Model, SweepConfig, SweepRecord};
pub use mm::{Init, MmSolver, SolveReport, SolverConfig, SurrogateCoefficients};
pub use qp::{QpConfig, QpReport, QpSolver};
pub use quartic::{cubic_roots_depressed, minimize_quartic, QuarticProblem};
pub use rig::{Rig, TargetMesh, WeightVector};
pub use spectral::QuadraticCache;
