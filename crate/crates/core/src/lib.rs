//! Removal of wide-angle face distortion from videos by spatio-temporal mesh
//! warping.
//!
//! A video is described by per-frame intrinsics, face boxes with subject
//! masks, and seed line segments. Line endpoints are tracked with pyramidal
//! Lucas–Kanade ([`tracking`]); faces and lines become fixed per-frame data
//! ([`problem`]); every energy term turns into weighted linear residual rows
//! ([`energy`]); one sparse least-squares solve yields a warping mesh per
//! frame ([`solver`]); the meshes are applied to the frames ([`render`]).
//! [`pipeline`] ties it together.

pub mod annotations;
pub mod camera;
pub mod energy;
pub mod error;
pub mod pipeline;
pub mod problem;
pub mod render;
pub mod scene;
pub mod solver;
pub mod sparse;
pub mod tracking;

pub use camera::{CameraIntrinsics, Mesh};
pub use energy::{EnergyWeights, FaceLatent, SparseLsqSystem, TermEnergies, UnknownLayout};
pub use error::{Error, Result};
pub use problem::{FrameProblem, Problem};
pub use solver::{Mode, Solution, SolveReport};
