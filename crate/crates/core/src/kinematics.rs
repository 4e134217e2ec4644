//! Discrete-time models for the drone, the gimbal and the lens, plus the
//! low-level interpolation that splits one control period into substeps.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::optics::IntrinsicState;
use crate::so3;

/// Orientation drift (‖RᵀR − I‖_F) above which a rotation is re-orthonormalized.
pub const REORTHONORMALIZE_THRESHOLD: f64 = 1e-12;

/// Number of scalar inputs per control step: acceleration (3), angular
/// velocity (3), focal, focus and aperture rates.
pub const INPUT_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Gimbal orientation, camera frame to world.
    #[serde(with = "crate::serde_rotation")]
    pub orientation: Matrix3<f64>,
}

impl DroneState {
    pub fn at_rest(position: Vector3<f64>, orientation: Matrix3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            orientation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DroneInput {
    pub acceleration: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntrinsicInput {
    /// mm/s
    pub focal_rate: f64,
    /// m/s
    pub focus_rate: f64,
    /// f-stop/s
    pub aperture_rate: f64,
}

/// One control step worth of commands.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub drone: DroneInput,
    pub intrinsics: IntrinsicInput,
}

impl ControlInput {
    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        let a = self.drone.acceleration;
        let w = self.drone.angular_velocity;
        let c = self.intrinsics;
        [
            a.x,
            a.y,
            a.z,
            w.x,
            w.y,
            w.z,
            c.focal_rate,
            c.focus_rate,
            c.aperture_rate,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert!(v.len() >= INPUT_DIM);
        Self {
            drone: DroneInput {
                acceleration: Vector3::new(v[0], v[1], v[2]),
                angular_velocity: Vector3::new(v[3], v[4], v[5]),
            },
            intrinsics: IntrinsicInput {
                focal_rate: v[6],
                focus_rate: v[7],
                aperture_rate: v[8],
            },
        }
    }
}

/// Joint drone + lens state at control step `time_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub drone: DroneState,
    pub intrinsics: IntrinsicState,
    pub time_index: u64,
}

/// Double integrator: `p' = p + dt·v`, `v' = v + dt·a`. Uses the pre-update
/// velocity for the position.
pub fn step_translation(state: &DroneState, input: &DroneInput, dt: f64) -> DroneState {
    DroneState {
        position: state.position + state.velocity * dt,
        velocity: state.velocity + input.acceleration * dt,
        orientation: state.orientation,
    }
}

/// `R' = R · exp(dt·Ω^)`.
pub fn step_rotation(state: &DroneState, input: &DroneInput, dt: f64) -> DroneState {
    let mut r = state.orientation * so3::exp(&(input.angular_velocity * dt));
    if so3::orthogonality_error(&r) > REORTHONORMALIZE_THRESHOLD {
        r = so3::orthonormalize(&r);
    }
    DroneState {
        orientation: r,
        ..*state
    }
}

/// Single integrator on the lens state. No clamping: bounds are constraints.
pub fn step_intrinsics(intr: &IntrinsicState, input: &IntrinsicInput, dt: f64) -> IntrinsicState {
    IntrinsicState {
        focal_length: intr.focal_length + dt * input.focal_rate,
        focus_distance: intr.focus_distance + dt * input.focus_rate,
        aperture: intr.aperture + dt * input.aperture_rate,
    }
}

/// Full rig transition for one control period.
pub fn step(rig: &CameraRig, input: &ControlInput, dt: f64) -> CameraRig {
    let translated = step_translation(&rig.drone, &input.drone, dt);
    let drone = step_rotation(&translated, &input.drone, dt);
    CameraRig {
        drone,
        intrinsics: step_intrinsics(&rig.intrinsics, &input.intrinsics, dt),
        time_index: rig.time_index + 1,
    }
}

/// Inputs together with the states they generate (single shooting).
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub dt: f64,
    pub inputs: Vec<ControlInput>,
    /// `inputs.len() + 1` states, starting with the initial rig.
    pub states: Vec<CameraRig>,
}

impl Rollout {
    pub fn simulate(initial: &CameraRig, inputs: &[ControlInput], dt: f64) -> Self {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(*initial);
        for u in inputs {
            let next = step(states.last().expect("non-empty"), u, dt);
            states.push(next);
        }
        Self {
            dt,
            inputs: inputs.to_vec(),
            states,
        }
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

fn lerp_no_overshoot(a: f64, b: f64, s: f64) -> f64 {
    let v = a + (b - a) * s;
    v.clamp(a.min(b), a.max(b))
}

fn lerp_vec(a: &Vector3<f64>, b: &Vector3<f64>, s: f64) -> Vector3<f64> {
    Vector3::new(
        lerp_no_overshoot(a.x, b.x, s),
        lerp_no_overshoot(a.y, b.y, s),
        lerp_no_overshoot(a.z, b.z, s),
    )
}

/// Splits the segment `from → to` into `substeps` set-points, the last of
/// which is exactly `to`. Positions, velocities and lens values are
/// interpolated linearly; the orientation moves along the geodesic.
pub fn interpolate_commands(from: &CameraRig, to: &CameraRig, substeps: usize) -> Vec<CameraRig> {
    assert!(substeps >= 1, "substeps must be at least 1");
    let delta = so3::log(&(from.drone.orientation.transpose() * to.drone.orientation));
    let mut out = Vec::with_capacity(substeps);
    for i in 1..=substeps {
        if i == substeps {
            out.push(*to);
            break;
        }
        let s = i as f64 / substeps as f64;
        let mut orientation = from.drone.orientation * so3::exp(&(delta * s));
        if so3::orthogonality_error(&orientation) > REORTHONORMALIZE_THRESHOLD {
            orientation = so3::orthonormalize(&orientation);
        }
        let (fi, ti) = (&from.intrinsics, &to.intrinsics);
        out.push(CameraRig {
            drone: DroneState {
                position: lerp_vec(&from.drone.position, &to.drone.position, s),
                velocity: lerp_vec(&from.drone.velocity, &to.drone.velocity, s),
                orientation,
            },
            intrinsics: IntrinsicState {
                focal_length: lerp_no_overshoot(fi.focal_length, ti.focal_length, s),
                focus_distance: lerp_no_overshoot(fi.focus_distance, ti.focus_distance, s),
                aperture: lerp_no_overshoot(fi.aperture, ti.aperture, s),
            },
            time_index: from.time_index,
        });
    }
    out
}
