//! Target tracking from detections: robust depth, back-projection, a
//! constant-velocity Kalman filter and velocity-aligned orientations.

use nalgebra::{DMatrix, Matrix3, Matrix3x6, Matrix6, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::BoundingBox;
use crate::kinematics::CameraRig;
use crate::objectives::{TargetPose, TargetPrediction};
use crate::optics::{back_project, calibration_matrix, CameraSensorSpec, OpticsError};
use crate::so3;

/// World gravity direction.
pub const GRAVITY_DIRECTION: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("depth patch has no valid entry")]
    NoValidDepth,
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

/// Kind of target; selects the representative pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetNature {
    Person,
    Vehicle,
    Object,
}

/// Which point of the box the detector reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepresentativePoint {
    TopCenter,
    Center,
}

impl TargetNature {
    pub fn representative_point(self) -> RepresentativePoint {
        match self {
            TargetNature::Person => RepresentativePoint::TopCenter,
            TargetNature::Vehicle | TargetNature::Object => RepresentativePoint::Center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetMeta {
    pub nature: TargetNature,
    /// Height `t_h` (m).
    pub height: f64,
    /// Width `t_w` (m).
    pub width: f64,
    /// Orientation assumed while the target is (nearly) static.
    #[serde(with = "crate::serde_rotation", default = "Matrix3::identity")]
    pub preliminary_rotation: Matrix3<f64>,
}

impl TargetMeta {
    /// World offset from the tracked point to the geometric center.
    pub fn center_offset(&self) -> Vector3<f64> {
        match self.nature.representative_point() {
            RepresentativePoint::TopCenter => Vector3::new(0.0, 0.0, -self.height / 2.0),
            RepresentativePoint::Center => Vector3::zeros(),
        }
    }

    pub fn validation_errors(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if !(self.height > 0.0) {
            out.push(("height".into(), "must be positive".into()));
        }
        if !(self.width > 0.0) {
            out.push(("width".into(), "must be positive".into()));
        }
        if !so3::is_rotation(&self.preliminary_rotation, 1e-6) {
            out.push((
                "preliminary_rotation".into(),
                "must be a rotation matrix".into(),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub target_id: String,
    pub bbox: BoundingBox,
    pub pixel: Vector2<f64>,
    /// Depth samples (m) over the box; nonpositive or NaN entries are invalid.
    pub depth_patch: DMatrix<f64>,
}

fn valid_depth(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

/// Median over rows of the per-row minimum valid depth. Rows without valid
/// entries are skipped; an even number of rows averages the middle pair.
pub fn robust_depth(patch: &DMatrix<f64>) -> Result<f64, EstimationError> {
    let mut mins: Vec<f64> = patch
        .row_iter()
        .filter_map(|row| {
            row.iter()
                .copied()
                .filter(|v| valid_depth(*v))
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
        })
        .collect();
    if mins.is_empty() {
        return Err(EstimationError::NoValidDepth);
    }
    mins.sort_by(f64::total_cmp);
    let n = mins.len();
    Ok(if n % 2 == 1 {
        mins[n / 2]
    } else {
        0.5 * (mins[n / 2 - 1] + mins[n / 2])
    })
}

/// World position `m_t = p_d + R_d · ρ K⁻¹ [u v 1]ᵀ` of a detection.
pub fn measure_world_position(
    det: &Detection,
    rig: &CameraRig,
    spec: &CameraSensorSpec,
) -> Result<Vector3<f64>, EstimationError> {
    let depth = robust_depth(&det.depth_patch)?;
    let k = calibration_matrix(&rig.intrinsics, spec)?;
    let rel = back_project(&det.pixel, depth, &k)?;
    Ok(rig.drone.position + rig.drone.orientation * rel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrientationSource {
    Velocity,
    /// Speed below the threshold.
    SlowFallback,
    /// Velocity (anti)parallel to gravity.
    DegenerateFallback,
}

/// Rotation whose first column follows the velocity, the second is
/// `normalize(r1 × g)` and the third `r1 × r2`.
pub fn orientation_from_velocity(
    v: &Vector3<f64>,
    fallback: &Matrix3<f64>,
    speed_threshold: f64,
) -> (Matrix3<f64>, OrientationSource) {
    let speed = v.norm();
    if speed < speed_threshold || speed == 0.0 {
        return (*fallback, OrientationSource::SlowFallback);
    }
    let r1 = v / speed;
    let c = r1.cross(&GRAVITY_DIRECTION);
    if c.norm() < 1e-6 {
        return (*fallback, OrientationSource::DegenerateFallback);
    }
    let r2 = c.normalize();
    let r3 = r1.cross(&r2);
    (
        Matrix3::from_columns(&[r1, r2, r3]),
        OrientationSource::Velocity,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// White-acceleration process noise `σ_a` (m/s²).
    pub process_noise: f64,
    /// Position measurement noise (m).
    pub measurement_noise: f64,
    /// Prior velocity standard deviation of a new track (m/s).
    pub initial_velocity_std: f64,
    /// Below this speed the orientation falls back to the preliminary one.
    pub speed_threshold: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            process_noise: 0.5,
            measurement_noise: 0.04,
            initial_velocity_std: 2.0,
            speed_threshold: 0.1,
        }
    }
}

impl EstimationConfig {
    pub fn validation_errors(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (name, v) in [
            ("process_noise", self.process_noise),
            ("measurement_noise", self.measurement_noise),
            ("initial_velocity_std", self.initial_velocity_std),
            ("speed_threshold", self.speed_threshold),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                out.push((name.to_string(), "must be a nonnegative number".into()));
            }
        }
        out
    }
}

/// Constant-velocity track: state `[p, v]` with a 6×6 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrack {
    pub state: SVector<f64, 6>,
    pub covariance: Matrix6<f64>,
    pub rotation: Matrix3<f64>,
    pub orientation_source: OrientationSource,
}

fn position_selector() -> Matrix3x6<f64> {
    let mut h = Matrix3x6::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    h
}

impl TargetTrack {
    /// New track at a first measurement with zero velocity.
    pub fn new(measurement: &Vector3<f64>, rotation: Matrix3<f64>, cfg: &EstimationConfig) -> Self {
        let mut state = SVector::<f64, 6>::zeros();
        state.fixed_rows_mut::<3>(0).copy_from(measurement);
        let mut covariance = Matrix6::zeros();
        let pv = cfg.measurement_noise.powi(2);
        let vv = cfg.initial_velocity_std.powi(2);
        for i in 0..3 {
            covariance[(i, i)] = pv;
            covariance[(i + 3, i + 3)] = vv;
        }
        Self {
            state,
            covariance,
            rotation,
            orientation_source: OrientationSource::SlowFallback,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(3).into_owned()
    }

    /// Constant-velocity prediction with white-acceleration process noise.
    pub fn predict(&self, dt: f64, process_noise: f64) -> Self {
        let mut f = Matrix6::identity();
        for i in 0..3 {
            f[(i, i + 3)] = dt;
        }
        let q = process_noise * process_noise;
        let (q_pp, q_pv, q_vv) = (q * dt.powi(4) / 4.0, q * dt.powi(3) / 2.0, q * dt * dt);
        let mut qm = Matrix6::zeros();
        for i in 0..3 {
            qm[(i, i)] = q_pp;
            qm[(i, i + 3)] = q_pv;
            qm[(i + 3, i)] = q_pv;
            qm[(i + 3, i + 3)] = q_vv;
        }
        let covariance = f * self.covariance * f.transpose() + qm;
        Self {
            state: f * self.state,
            covariance: (covariance + covariance.transpose()) * 0.5,
            ..self.clone()
        }
    }

    /// Joseph-form correction with a position measurement.
    pub fn update(&self, measurement: &Vector3<f64>, measurement_noise: f64) -> Self {
        let h = position_selector();
        let r = Matrix3::identity() * measurement_noise * measurement_noise;
        let s = h * self.covariance * h.transpose() + r;
        let Some(s_inv) = s.try_inverse() else {
            return self.clone();
        };
        let k = self.covariance * h.transpose() * s_inv;
        let innovation = measurement - h * self.state;
        let ikh = Matrix6::identity() - k * h;
        let covariance = ikh * self.covariance * ikh.transpose() + k * r * k.transpose();
        Self {
            state: self.state + k * innovation,
            covariance: (covariance + covariance.transpose()) * 0.5,
            ..self.clone()
        }
    }

    /// Refreshes the orientation from the current velocity estimate.
    pub fn refresh_orientation(&mut self, fallback: &Matrix3<f64>, speed_threshold: f64) {
        let (r, source) = orientation_from_velocity(&self.velocity(), fallback, speed_threshold);
        self.rotation = r;
        self.orientation_source = source;
    }

    /// `n + 1` noise-free constant-velocity poses; entry 0 is the estimate.
    pub fn predict_poses(&self, n: usize, dt: f64) -> Vec<TargetPose> {
        let (p, v) = (self.position(), self.velocity());
        (0..=n)
            .map(|k| TargetPose {
                position: p + v * (k as f64 * dt),
                rotation: self.rotation,
            })
            .collect()
    }
}

/// Horizon prediction of a tracked target with its geometry.
pub fn predict_horizon(
    track: &TargetTrack,
    id: &str,
    meta: &TargetMeta,
    is_obstacle: bool,
    n: usize,
    dt: f64,
) -> TargetPrediction {
    TargetPrediction {
        id: id.to_string(),
        poses: track.predict_poses(n, dt),
        width: meta.width,
        height: meta.height,
        center_offset: meta.center_offset(),
        is_obstacle,
    }
}
