//! Robust 2-D pose-graph optimization with explicit outlier modeling.
//!
//! The library estimates robot poses and per-loop-closure inlier/outlier
//! decisions jointly. Loop closures carry a truncated least-squares cost,
//! reformulated with binary accept/reject variables whose correlation is
//! modeled by Ising-style coupling terms. Inference runs through a
//! semidefinite relaxation that needs no initial guess, followed by
//! rounding, outlier rejection, and local Gauss-Newton refinement.
//!
//! Module map:
//! - [`pose`] / [`graph`]: SE(2) types, measurements, weighted residuals.
//! - [`g2o`]: g2o text I/O and the correlation sidecar format.
//! - [`synth`]: deterministic grid / Manhattan-world generators with
//!   grouped outlier injection.
//! - [`model`]: the discrete-continuous objective in sum form and its
//!   matrix form (cost matrices and the lifted variable embedding).
//! - [`sdp`]: first-order operator-splitting solver for the relaxation.
//! - [`pipeline`]: solve, round, reject, re-solve, refine.
//! - [`local`]: chordal initialization + Gauss-Newton for classical PGO.
//! - [`bench`] / [`plot`]: benchmark harness, metrics, SVG trajectory plots.

pub mod bench;
pub mod error;
pub mod g2o;
pub mod graph;
pub mod local;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod pose;
pub mod sdp;
pub mod synth;
#[doc(hidden)]
pub mod test_utils;

pub use error::{Error, Result};
pub use graph::{PoseGraph, RelPoseMeasurement, RobustParams};
pub use model::DcgmProblem;

pub use pose::Pose2;
pub use sdp::{SdpOptions, SdpSolution};
