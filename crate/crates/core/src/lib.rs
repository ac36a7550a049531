//! Estimators and diagnostics for treatment effects when the outcome is
//! weakly positive with point mass at zero.
//!
//! The crate covers four strands of the same problem:
//!
//! - **Scale sensitivity**: how the ATE of a log-like transformation
//!   `m(a*Y)` moves with the unit scale `a`, the extensive-margin slope that
//!   drives it, and the bisection that hits any target magnitude.
//! - **Percentage effects**: Poisson-QMLE estimates of the ATE in levels as
//!   a share of the control mean, including 2x2 and event-study
//!   difference-in-differences variants, plus the menu of normalized and
//!   calibrated target parameters.
//! - **Margins**: Lee-style trimming bounds for the intensive margin,
//!   selection-assumption point estimates, and the instrumental-variables
//!   versions built from complier CDFs.
//! - **Identification lab**: exact coupling ranges over joint distributions
//!   with fixed marginals (a transportation LP), separability and
//!   scale-invariance tests, and the two-part-model decomposition.
//!
//! Inference is a clustered nonparametric bootstrap whose replicates are
//! pure functions of `(seed, draw index)`, so results are identical at any
//! thread count. The `parallel` feature (on by default) runs grids,
//! replicates, and batches on rayon; without it everything runs
//! sequentially through the same code paths.

pub mod bounds;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod exec;
pub mod inference;
pub mod lab;
pub mod poisson;
pub mod regression;
pub mod sensitivity;
pub mod simulate;
pub(crate) mod stats;
pub mod targets;
pub mod transforms;

pub use dataset::{load_csv, ColumnSpec, Dataset};
pub use error::{Error, Result};
pub use estimate::EstimateResult;
pub use transforms::{Transform, TransformKind};
