//! Model-predictive control of a drone-mounted camera with controllable
//! focal length, focus distance and aperture.
//!
//! The crate is organized bottom-up:
//!
//! * [`optics`]: thin-lens depth of field and pinhole projection,
//! * [`kinematics`]: discrete rig dynamics and rollouts,
//! * [`objectives`]: cinematographic costs and their gradients,
//! * [`constraints`]: bounds, collision and occlusion constraints,
//! * [`mpc`]: the receding-horizon optimizer,
//! * [`estimation`]: target tracking from noisy detections,
//! * [`sim`]: scripted scenes and the closed-loop driver,
//! * [`scenario`]: configuration schema and the instruction sequencer,
//! * [`presets`]: the built-in example scenarios,
//! * [`io`]: run tables, CSV output and summary metrics.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod estimation;
pub mod io;
pub mod kinematics;
pub mod mpc;
pub mod objectives;
pub mod optics;
pub mod presets;
pub mod scenario;
mod serde_rotation;
pub mod sim;
pub mod so3;
