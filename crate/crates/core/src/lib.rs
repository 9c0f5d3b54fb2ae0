//! Relative pose estimation and uncalibrated structure from motion for a
//! camera moving on a sphere while facing outward, the motion of a hand-held
//! panorama capture.
//!
//! * [`geom`]: camera model, distortion, structured epipolar matrices.
//! * [`solvers`]: four-point and six-point (with distortion) fundamental
//!   matrix solvers, an eight-point baseline, pose decomposition and the
//!   pure-rotation model.
//! * [`robust`]: MLESAC, GRIC model selection, kernel voting.
//! * [`pipeline`]: keyframes to bundle-adjusted reconstruction.
//! * [`bench`]: synthetic data and solver experiments.

pub mod bench;
pub mod geom;
pub mod pipeline;
pub mod robust;
pub mod solvers;
pub mod tracks;
