//! Inequality constraints `g ≥ 0`: input and state bounds, collision distance
//! and bounding-box separation between targets.
//!
//! Residuals are indexed by horizon step. Input residuals exist for steps
//! `0..N`, state, collision and occlusion residuals for steps `1..=N` (the
//! state at step 0 is given and cannot be changed by the plan).

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{CameraRig, ControlInput, DroneInput, IntrinsicInput, Rollout, INPUT_DIM};
use crate::objectives::{PointProjection, StateGradient, TargetPrediction};
use crate::optics::{calibration_matrix, project, CameraSensorSpec, OpticsError};
use crate::so3;

/// Number of bounded scalar state channels: position (3), velocity (3),
/// gimbal angles (3), focal length, focus distance, aperture.
pub const STATE_CHANNELS: usize = 12;

/// Residuals below `-VIOLATION_THRESHOLD` count as violations.
pub const VIOLATION_THRESHOLD: f64 = 1e-9;

/// Closed interval, serialized as `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub const fn symmetric(half: f64) -> Self {
        Self::new(-half, half)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64, slack: f64) -> bool {
        v >= self.lower - slack && v <= self.upper + slack
    }

    pub fn is_valid(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite() && self.lower <= self.upper
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lower, i.upper]
    }
}

/// Bounds on the control inputs. Vector channels use the same interval on
/// every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBounds {
    pub acceleration: Interval,
    pub angular_velocity: Interval,
    pub focal_rate: Interval,
    pub focus_rate: Interval,
    pub aperture_rate: Interval,
}

impl Default for InputBounds {
    fn default() -> Self {
        Self {
            acceleration: Interval::symmetric(1.0),
            angular_velocity: Interval::symmetric(0.25),
            focal_rate: Interval::symmetric(7.0),
            focus_rate: Interval::symmetric(15.0),
            aperture_rate: Interval::symmetric(3.0),
        }
    }
}

impl InputBounds {
    /// Per-channel intervals in the order of [`ControlInput::to_array`].
    pub fn channels(&self) -> [Interval; INPUT_DIM] {
        let (a, w) = (self.acceleration, self.angular_velocity);
        [
            a,
            a,
            a,
            w,
            w,
            w,
            self.focal_rate,
            self.focus_rate,
            self.aperture_rate,
        ]
    }

    pub fn lower(&self) -> ControlInput {
        ControlInput::from_slice(&self.channels().map(|i| i.lower))
    }

    pub fn upper(&self) -> ControlInput {
        ControlInput::from_slice(&self.channels().map(|i| i.upper))
    }

    pub fn clamp(&self, u: &ControlInput) -> ControlInput {
        let v = u.to_array();
        let ch = self.channels();
        let clamped: Vec<f64> = v
            .iter()
            .zip(ch.iter())
            .map(|(x, i)| x.clamp(i.lower, i.upper))
            .collect();
        ControlInput::from_slice(&clamped)
    }
}

/// Bounds on the rig state. The rotation interval applies to each of the
/// Z-Y-X Euler angles of `R_refᵀ R_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBounds {
    pub position: Interval,
    pub velocity: Interval,
    pub rotation: Interval,
    pub focal_length: Interval,
    pub focus_distance: Interval,
    pub aperture: Interval,
}

impl Default for StateBounds {
    fn default() -> Self {
        Self {
            position: Interval::symmetric(30.0),
            velocity: Interval::symmetric(40.0),
            rotation: Interval::symmetric(0.25),
            focal_length: Interval::new(15.0, 500.0),
            focus_distance: Interval::new(4.0, 2000.0),
            aperture: Interval::new(1.2, 22.0),
        }
    }
}

impl StateBounds {
    pub fn channels(&self) -> [Interval; STATE_CHANNELS] {
        let (p, v, r) = (self.position, self.velocity, self.rotation);
        [
            p,
            p,
            p,
            v,
            v,
            v,
            r,
            r,
            r,
            self.focal_length,
            self.focus_distance,
            self.aperture,
        ]
    }
}

fn identity_rotation() -> Matrix3<f64> {
    Matrix3::identity()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSet {
    #[serde(default)]
    pub input_bounds: InputBounds,
    #[serde(default)]
    pub state_bounds: StateBounds,
    /// Orientation around which the gimbal angle bounds are measured.
    #[serde(with = "crate::serde_rotation", default = "identity_rotation")]
    pub rotation_reference: Matrix3<f64>,
    /// Minimum drone–target distance `d_min` (m).
    pub safety_distance: f64,
    #[serde(default = "default_true")]
    pub collision_enabled: bool,
    #[serde(default)]
    pub occlusion_enabled: bool,
    /// Required horizontal gap between boxes of an active pair (px).
    #[serde(default)]
    pub occlusion_margin_px: f64,
    /// Tolerance used when judging feasibility of a start state.
    pub epsilon_slack: f64,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            input_bounds: InputBounds::default(),
            state_bounds: StateBounds::default(),
            rotation_reference: Matrix3::identity(),
            safety_distance: 2.0,
            collision_enabled: true,
            occlusion_enabled: false,
            occlusion_margin_px: 0.0,
            epsilon_slack: 1e-6,
        }
    }
}

impl ConstraintSet {
    /// Lists every violated invariant as `(field, message)`.
    pub fn validation_errors(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let inputs = [
            ("acceleration", self.input_bounds.acceleration),
            ("angular_velocity", self.input_bounds.angular_velocity),
            ("focal_rate", self.input_bounds.focal_rate),
            ("focus_rate", self.input_bounds.focus_rate),
            ("aperture_rate", self.input_bounds.aperture_rate),
        ];
        for (name, i) in inputs {
            if !i.is_valid() {
                out.push((
                    format!("input_bounds.{name}"),
                    "lower must not exceed upper".into(),
                ));
            }
        }
        let states = [
            ("position", self.state_bounds.position),
            ("velocity", self.state_bounds.velocity),
            ("rotation", self.state_bounds.rotation),
            ("focal_length", self.state_bounds.focal_length),
            ("focus_distance", self.state_bounds.focus_distance),
            ("aperture", self.state_bounds.aperture),
        ];
        for (name, i) in states {
            if !i.is_valid() {
                out.push((
                    format!("state_bounds.{name}"),
                    "lower must not exceed upper".into(),
                ));
            }
        }
        if !so3::is_rotation(&self.rotation_reference, 1e-6) {
            out.push((
                "rotation_reference".into(),
                "must be a rotation matrix".into(),
            ));
        }
        if !(self.safety_distance >= 0.0) {
            out.push(("safety_distance".into(), "must be nonnegative".into()));
        }
        if !(self.occlusion_margin_px >= 0.0) {
            out.push(("occlusion_margin_px".into(), "must be nonnegative".into()));
        }
        if !(self.epsilon_slack >= 0.0) {
            out.push(("epsilon_slack".into(), "must be nonnegative".into()));
        }
        out
    }

    /// Gimbal angles of `R` relative to the reference orientation.
    pub fn gimbal_angles(&self, r: &Matrix3<f64>) -> Vector3<f64> {
        so3::euler_zyx(&(self.rotation_reference.transpose() * r))
    }

    /// Scalar state channels in the order of [`StateBounds::channels`].
    pub fn state_values(&self, rig: &CameraRig) -> [f64; STATE_CHANNELS] {
        let p = rig.drone.position;
        let v = rig.drone.velocity;
        let e = self.gimbal_angles(&rig.drone.orientation);
        let i = rig.intrinsics;
        [
            p.x,
            p.y,
            p.z,
            v.x,
            v.y,
            v.z,
            e.x,
            e.y,
            e.z,
            i.focal_length,
            i.focus_distance,
            i.aperture,
        ]
    }

    /// Whether `rig` satisfies the state bounds within `epsilon_slack`.
    pub fn state_within_bounds(&self, rig: &CameraRig) -> bool {
        self.state_values(rig)
            .iter()
            .zip(self.state_bounds.channels().iter())
            .all(|(v, b)| b.contains(*v, self.epsilon_slack))
    }
}

/// Image-plane box of a target, `left_top ≤ right_bottom` componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub left_top: Vector2<f64>,
    pub right_bottom: Vector2<f64>,
}

impl BoundingBox {
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= self.left_top.x
            && px.x <= self.right_bottom.x
            && px.y >= self.left_top.y
            && px.y <= self.right_bottom.y
    }

    /// Whether the two boxes share any point.
    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.left_top.x <= other.right_bottom.x
            && other.left_top.x <= self.right_bottom.x
            && self.left_top.y <= other.right_bottom.y
            && other.left_top.y <= self.right_bottom.y
    }

    pub fn center(&self) -> Vector2<f64> {
        (self.left_top + self.right_bottom) * 0.5
    }
}

/// Camera-frame corner offsets of a `width × height` box.
fn corner_offsets(width: f64, height: f64) -> (Vector3<f64>, Vector3<f64>) {
    (
        Vector3::new(-width / 2.0, -height / 2.0, 0.0),
        Vector3::new(width / 2.0, height / 2.0, 0.0),
    )
}

/// Projects the box of extent `width × height` centered at `center` (world).
/// The box is spanned in the camera's image-aligned axes at the center depth.
pub fn predict_bounding_box(
    rig: &CameraRig,
    center: &Vector3<f64>,
    width: f64,
    height: f64,
    spec: &CameraSensorSpec,
) -> Result<BoundingBox, OpticsError> {
    let rel = rig.drone.orientation.transpose() * (center - rig.drone.position);
    let k = calibration_matrix(&rig.intrinsics, spec)?;
    let (lt, rb) = corner_offsets(width, height);
    Ok(BoundingBox {
        left_top: project(&(rel + lt), &k)?,
        right_bottom: project(&(rel + rb), &k)?,
    })
}

/// Box of prediction `pred` at horizon step `k`.
pub fn target_box(
    rig: &CameraRig,
    pred: &TargetPrediction,
    k: usize,
    spec: &CameraSensorSpec,
) -> Result<BoundingBox, OpticsError> {
    predict_bounding_box(rig, &pred.center(k), pred.width, pred.height, spec)
}

/// A pair of targets whose boxes must stay horizontally separated, `left`
/// remaining on the left of `right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionRecord {
    pub left: usize,
    pub right: usize,
    pub active: bool,
}

/// Activation test for the ordered pair (`t1`, `t2`): the vertical pixel
/// intervals overlap and `t2` lies strictly to the right of `t1`.
pub fn occlusion_activation(t1: &BoundingBox, t2: &BoundingBox) -> bool {
    let vertical_overlap = t1.left_top.y <= t2.right_bottom.y && t2.left_top.y <= t1.right_bottom.y;
    vertical_overlap && t2.left_top.x > t1.right_bottom.x
}

/// Evaluates activation for every ordered pair involving at least one filmed
/// target, at horizon step 0. Pairs with a target behind the camera are skipped.
pub fn occlusion_records(
    rig: &CameraRig,
    preds: &[TargetPrediction],
    spec: &CameraSensorSpec,
) -> Vec<OcclusionRecord> {
    let boxes: Vec<Option<BoundingBox>> = preds
        .iter()
        .map(|p| target_box(rig, p, 0, spec).ok())
        .collect();
    let mut out = Vec::new();
    for i in 0..preds.len() {
        for j in 0..preds.len() {
            if i == j || (preds[i].is_obstacle && preds[j].is_obstacle) {
                continue;
            }
            if let (Some(a), Some(b)) = (&boxes[i], &boxes[j]) {
                out.push(OcclusionRecord {
                    left: i,
                    right: j,
                    active: occlusion_activation(a, b),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    InputLower,
    InputUpper,
    StateLower,
    StateUpper,
    Collision,
    Occlusion,
}

/// One residual. `index` is the input or state channel, the target index for
/// collision residuals, or the record index for occlusion residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub kind: ConstraintKind,
    pub step: usize,
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintResiduals {
    pub entries: Vec<Residual>,
}

impl ConstraintResiduals {
    /// Smallest residual, `+∞` when there is none.
    pub fn min(&self) -> f64 {
        self.entries
            .iter()
            .map(|r| r.value)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_of(&self, kind: ConstraintKind) -> f64 {
        self.entries
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.value)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn violations(&self, tol: f64) -> impl Iterator<Item = &Residual> {
        self.entries.iter().filter(move |r| r.value < -tol)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.violations(tol).next().is_none()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|r| r.value).collect()
    }
}

/// Path constraint with its gradient with respect to at most two states.
#[derive(Debug, Clone)]
pub(crate) struct PathConstraint {
    pub residual: Residual,
    pub grads: [(usize, StateGradient); 2],
    pub n_grads: usize,
}

impl PathConstraint {
    fn new(kind: ConstraintKind, step: usize, index: usize, value: f64) -> Self {
        Self {
            residual: Residual {
                kind,
                step,
                index,
                value,
            },
            grads: [(0, StateGradient::default()); 2],
            n_grads: 0,
        }
    }

    fn with_grad(mut self, state: usize, g: StateGradient) -> Self {
        self.grads[self.n_grads] = (state, g);
        self.n_grads += 1;
        self
    }

    pub fn gradients(&self) -> &[(usize, StateGradient)] {
        &self.grads[..self.n_grads]
    }
}

/// Minimum distance between the relative segment `r0 → r1` and the origin,
/// with the interpolation parameter where it is attained.
fn segment_distance(r0: &Vector3<f64>, r1: &Vector3<f64>) -> (f64, f64, Vector3<f64>) {
    let delta = r1 - r0;
    let len2 = delta.norm_squared();
    let s = if len2 > 1e-24 {
        (-r0.dot(&delta) / len2).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let r = r0 + delta * s;
    (r.norm(), s, r)
}

/// State, collision and occlusion constraints over steps `1..=N`, with
/// gradients with respect to the states.
pub(crate) fn path_constraints(
    rollout: &Rollout,
    preds: &[TargetPrediction],
    spec: &CameraSensorSpec,
    cset: &ConstraintSet,
    records: &[OcclusionRecord],
) -> Vec<PathConstraint> {
    let n = rollout.horizon();
    let bounds = cset.state_bounds.channels();
    let mut out = Vec::with_capacity(n * (2 * STATE_CHANNELS + preds.len() + records.len()));
    for k in 1..=n {
        let rig = &rollout.states[k];
        let values = cset.state_values(rig);
        let q = cset.rotation_reference.transpose() * rig.drone.orientation;
        let euler_grads = so3::euler_zyx_entry_gradients(&q);
        for ch in 0..STATE_CHANNELS {
            let mut g = StateGradient::default();
            match ch {
                0..=2 => g.position[ch] = 1.0,
                3..=5 => g.velocity[ch - 3] = 1.0,
                6..=8 => g.rotation = so3::right_tangent_gradient(&q, &euler_grads[ch - 6]),
                9 => g.focal_length = 1.0,
                10 => g.focus_distance = 1.0,
                _ => g.aperture = 1.0,
            }
            let b = bounds[ch];
            out.push(
                PathConstraint::new(ConstraintKind::StateLower, k, ch, values[ch] - b.lower)
                    .with_grad(k, g),
            );
            out.push(
                PathConstraint::new(ConstraintKind::StateUpper, k, ch, b.upper - values[ch])
                    .with_grad(k, g * -1.0),
            );
        }

        if cset.collision_enabled {
            let prev = &rollout.states[k - 1];
            for (t, pred) in preds.iter().enumerate() {
                let r0 = pred.center(k - 1) - prev.drone.position;
                let r1 = pred.center(k) - rig.drone.position;
                let (d, s, r) = segment_distance(&r0, &r1);
                let dir = if d > 1e-12 { r / d } else { Vector3::zeros() };
                let g_prev = StateGradient {
                    position: -dir * (1.0 - s),
                    ..Default::default()
                };
                let g_curr = StateGradient {
                    position: -dir * s,
                    ..Default::default()
                };
                out.push(
                    PathConstraint::new(ConstraintKind::Collision, k, t, d - cset.safety_distance)
                        .with_grad(k - 1, g_prev)
                        .with_grad(k, g_curr),
                );
            }
        }

        if cset.occlusion_enabled {
            for (idx, rec) in records.iter().enumerate() {
                if !rec.active {
                    continue;
                }
                let (l, r) = (&preds[rec.left], &preds[rec.right]);
                let (_, l_rb) = corner_offsets(l.width, l.height);
                let (r_lt, _) = corner_offsets(r.width, r.height);
                let pl = PointProjection::new(rig, spec, &l.center(k), &l_rb);
                let pr = PointProjection::new(rig, spec, &r.center(k), &r_lt);
                let value = pr.pixel.x - pl.pixel.x - cset.occlusion_margin_px;
                let mut g = StateGradient::default();
                pr.accumulate(rig, &Vector2::new(1.0, 0.0), &mut g);
                pl.accumulate(rig, &Vector2::new(-1.0, 0.0), &mut g);
                out.push(
                    PathConstraint::new(ConstraintKind::Occlusion, k, idx, value).with_grad(k, g),
                );
            }
        }
    }
    out
}

fn input_residuals(inputs: &[ControlInput], bounds: &InputBounds, out: &mut Vec<Residual>) {
    let ch = bounds.channels();
    for (k, u) in inputs.iter().enumerate() {
        for (i, (v, b)) in u.to_array().iter().zip(ch.iter()).enumerate() {
            out.push(Residual {
                kind: ConstraintKind::InputLower,
                step: k,
                index: i,
                value: v - b.lower,
            });
            out.push(Residual {
                kind: ConstraintKind::InputUpper,
                step: k,
                index: i,
                value: b.upper - v,
            });
        }
    }
}

/// Stacked residuals of every constraint for a rollout.
pub fn evaluate_constraints(
    rollout: &Rollout,
    preds: &[TargetPrediction],
    spec: &CameraSensorSpec,
    cset: &ConstraintSet,
    records: &[OcclusionRecord],
) -> ConstraintResiduals {
    let mut entries = Vec::new();
    input_residuals(&rollout.inputs, &cset.input_bounds, &mut entries);
    entries.extend(
        path_constraints(rollout, preds, spec, cset, records)
            .into_iter()
            .map(|c| c.residual),
    );
    ConstraintResiduals { entries }
}

/// Zero input, the usual cold-start guess.
pub fn zero_input() -> ControlInput {
    ControlInput {
        drone: DroneInput::default(),
        intrinsics: IntrinsicInput::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::DroneState;
    use crate::objectives::TargetPose;
    use crate::optics::IntrinsicState;

    fn rig() -> CameraRig {
        CameraRig {
            drone: DroneState::at_rest(Vector3::zeros(), Matrix3::identity()),
            intrinsics: IntrinsicState::new(35.0, 10.0, 1.2),
            time_index: 0,
        }
    }

    fn spec() -> CameraSensorSpec {
        CameraSensorSpec::simulation_default()
    }

    fn static_pred(id: &str, p: Vector3<f64>, w: f64, h: f64, n: usize) -> TargetPrediction {
        TargetPrediction {
            id: id.into(),
            poses: vec![
                TargetPose {
                    position: p,
                    rotation: Matrix3::identity(),
                };
                n + 1
            ],
            width: w,
            height: h,
            center_offset: Vector3::zeros(),
            is_obstacle: false,
        }
    }

    fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox {
            left_top: Vector2::new(x0, y0),
            right_bottom: Vector2::new(x1, y1),
        }
    }

    #[test]
    fn degenerate_box_at_projected_center() {
        let b =
            predict_bounding_box(&rig(), &Vector3::new(0.0, 0.0, 10.0), 0.0, 0.0, &spec()).unwrap();
        assert_eq!(b.left_top, b.right_bottom);
        assert!((b.left_top - Vector2::new(480.0, 270.0)).norm() < 1e-9);
    }

    #[test]
    fn box_corners_scale_with_focal_over_depth() {
        let b =
            predict_bounding_box(&rig(), &Vector3::new(0.0, 0.0, 10.0), 1.0, 2.0, &spec()).unwrap();
        let fx = spec().beta_x() * 35.0;
        let fy = spec().beta_y() * 35.0;
        assert!((b.left_top.x - (480.0 - fx * 0.5 / 10.0)).abs() < 1e-9);
        assert!((b.right_bottom.x - (480.0 + fx * 0.5 / 10.0)).abs() < 1e-9);
        assert!((b.left_top.y - (270.0 - fy / 10.0)).abs() < 1e-9);
        assert!((b.right_bottom.y - (270.0 + fy / 10.0)).abs() < 1e-9);
        // Half-extents of roughly 70.7 and 141.4 px.
        assert!((b.right_bottom.x - 480.0 - 70.7).abs() < 0.05);
        assert!((b.right_bottom.y - 270.0 - 141.4).abs() < 0.05);

        let far =
            predict_bounding_box(&rig(), &Vector3::new(0.0, 0.0, 20.0), 1.0, 2.0, &spec()).unwrap();
        let size = b.right_bottom - b.left_top;
        let far_size = far.right_bottom - far.left_top;
        assert!((size / 2.0 - far_size).norm() < 1e-9);
        assert!((b.center() - far.center()).norm() < 1e-9);
    }

    #[test]
    fn box_behind_camera_is_an_error() {
        let r = predict_bounding_box(&rig(), &Vector3::new(0.0, 0.0, -3.0), 1.0, 1.0, &spec());
        assert!(matches!(r, Err(OpticsError::BehindCamera { .. })));
    }

    #[test]
    fn activation_examples() {
        let t1 = bbox(100.0, 100.0, 200.0, 200.0);
        let t2 = bbox(250.0, 120.0, 350.0, 220.0);
        assert!(occlusion_activation(&t1, &t2));
        assert!(!occlusion_activation(&t2, &t1));

        let low = bbox(250.0, 300.0, 350.0, 400.0);
        assert!(!occlusion_activation(&t1, &low));

        let interleaved = bbox(150.0, 120.0, 250.0, 220.0);
        assert!(!occlusion_activation(&t1, &interleaved));
    }

    #[test]
    fn interior_plan_has_positive_residuals() {
        let mut r = rig();
        r.intrinsics.aperture = 2.0;
        let rollout = Rollout::simulate(&r, &[zero_input(); 3], 0.2);
        let preds = vec![static_pred("a", Vector3::new(0.0, 0.0, 10.0), 0.5, 1.8, 3)];
        let res = evaluate_constraints(&rollout, &preds, &spec(), &ConstraintSet::default(), &[]);
        assert!(res.min() > 0.0);
        assert_eq!(
            res.entries.len(),
            3 * 2 * INPUT_DIM + 3 * 2 * STATE_CHANNELS + 3
        );
    }

    #[test]
    fn collision_residual_reports_violation() {
        let rollout = Rollout::simulate(&rig(), &[zero_input()], 0.2);
        let preds = vec![static_pred("a", Vector3::new(1.5, 0.0, 0.0), 0.5, 1.8, 1)];
        let res = evaluate_constraints(&rollout, &preds, &spec(), &ConstraintSet::default(), &[]);
        assert!((res.min_of(ConstraintKind::Collision) + 0.5).abs() < 1e-12);
        assert!(!res.is_feasible(VIOLATION_THRESHOLD));
    }

    #[test]
    fn collision_residual_sees_the_segment_interior() {
        let mut start = rig();
        start.drone.velocity = Vector3::new(10.0, 0.0, 0.0);
        let rollout = Rollout::simulate(&start, &[zero_input()], 0.2);
        // Target beside the midpoint of the 2 m segment.
        let preds = vec![static_pred("a", Vector3::new(1.0, 2.5, 0.0), 0.5, 1.8, 1)];
        let res = evaluate_constraints(&rollout, &preds, &spec(), &ConstraintSet::default(), &[]);
        assert!((res.min_of(ConstraintKind::Collision) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn input_at_bound_gives_zero_and_width() {
        let mut u = zero_input();
        u.intrinsics.focal_rate = 7.0;
        let rollout = Rollout::simulate(&rig(), &[u], 0.2);
        let res = evaluate_constraints(&rollout, &[], &spec(), &ConstraintSet::default(), &[]);
        let upper = res
            .entries
            .iter()
            .find(|r| r.kind == ConstraintKind::InputUpper && r.index == 6)
            .unwrap();
        let lower = res
            .entries
            .iter()
            .find(|r| r.kind == ConstraintKind::InputLower && r.index == 6)
            .unwrap();
        assert_eq!(upper.value, 0.0);
        assert_eq!(lower.value, 14.0);
    }

    #[test]
    fn path_constraint_gradients_match_finite_differences() {
        let start = CameraRig {
            drone: DroneState {
                position: Vector3::new(0.0, 0.0, 1.0),
                velocity: Vector3::new(0.3, 0.1, 0.0),
                orientation: so3::look_rotation(&Vector3::new(1.0, 0.05, -0.05), &Vector3::z()),
            },
            intrinsics: IntrinsicState::new(40.0, 8.0, 2.0),
            time_index: 0,
        };
        let inputs: Vec<ControlInput> = (0..3)
            .map(|k| {
                ControlInput::from_slice(&[
                    0.2,
                    -0.1 * k as f64,
                    0.05,
                    0.02,
                    0.1,
                    -0.05,
                    3.0,
                    1.0,
                    0.2,
                ])
            })
            .collect();
        let mut actor = static_pred("actor", Vector3::new(8.0, 1.0, 1.0), 0.5, 1.8, 3);
        for (k, p) in actor.poses.iter_mut().enumerate() {
            p.position.y -= 0.1 * k as f64;
        }
        let mut cactus = static_pred("cactus", Vector3::new(5.0, -0.6, 1.0), 0.6, 2.0, 3);
        cactus.is_obstacle = true;
        let preds = vec![actor, cactus];
        let cset = ConstraintSet {
            rotation_reference: so3::look_rotation(&Vector3::x(), &Vector3::z()),
            occlusion_enabled: true,
            ..Default::default()
        };
        let rollout = Rollout::simulate(&start, &inputs, 0.2);
        let records = occlusion_records(&rollout.states[0], &preds, &spec());
        assert!(records.iter().any(|r| r.active));

        let cons = path_constraints(&rollout, &preds, &spec(), &cset, &records);
        let base: Vec<f64> = inputs.iter().flat_map(|u| u.to_array()).collect();
        let eval = |z: &[f64]| {
            let us: Vec<ControlInput> = z.chunks(INPUT_DIM).map(ControlInput::from_slice).collect();
            let r = Rollout::simulate(&start, &us, 0.2);
            path_constraints(&r, &preds, &spec(), &cset, &records)
                .iter()
                .map(|c| c.residual.value)
                .collect::<Vec<_>>()
        };
        for (ci, c) in cons.iter().enumerate() {
            let mut seeds = vec![StateGradient::default(); rollout.states.len()];
            for (s, g) in c.gradients() {
                seeds[*s] += *g;
            }
            let grad = crate::objectives::backpropagate(&rollout, &seeds);
            let h = 1e-6;
            for i in 0..base.len() {
                let mut p = base.clone();
                let mut m = base.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (eval(&p)[ci] - eval(&m)[ci]) / (2.0 * h);
                let tol = 1e-5 * fd.abs().max(1.0);
                assert!(
                    (fd - grad[i]).abs() < tol,
                    "{:?} input {i}: fd {fd} adjoint {}",
                    c.residual,
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn interval_serializes_as_pair() {
        let s = serde_json::to_string(&Interval::new(-1.0, 2.0)).unwrap();
        assert_eq!(s, "[-1.0,2.0]");
        let back: Interval = serde_json::from_str(&s).unwrap();
        assert_eq!(back, Interval::new(-1.0, 2.0));
    }
}
