//! Cinematographic cost terms and their gradients.
//!
//! Each stage cost is the sum of four terms:
//!
//! * `j_dof`: squared deviation of the near/far depth-of-field limits,
//! * `j_im`: weighted squared pixel error of composition points,
//! * `j_p`: Frobenius deviation of the relative rotation plus squared deviation
//!   of the camera–target distance,
//! * `j_f`: squared deviation of the focal length.
//!
//! Two evaluation modes exist. The strict functions (`j_dof`, `j_im`, …,
//! [`horizon_cost`]) follow the definitions literally and report projection
//! failures as errors. The planner works on a smooth surrogate
//! ([`surrogate_horizon_cost`], [`cost_gradient`]) that coincides with the strict
//! cost whenever every composition point is more than [`DEPTH_EPSILON`] in front
//! of the camera and the focus is not close to the hyperfocal distance.

use nalgebra::{DVector, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::kinematics::{CameraRig, Rollout, INPUT_DIM};
use crate::optics::{
    depth_of_field, mm_to_m, CameraSensorSpec, FarDistance, IntrinsicState, OpticsError,
};
use crate::so3;

/// Depth below which the surrogate projection freezes the depth.
pub const DEPTH_EPSILON: f64 = 0.1;
/// Weight of the quadratic penalty `κ (ε_z − z)²` below [`DEPTH_EPSILON`].
pub const BEHIND_CAMERA_PENALTY: f64 = 1e4;
/// The surrogate far distance is exact while `H − F ≥ FAR_REGULARIZATION · H`
/// and continues linearly in `H − F` beyond that point.
pub const FAR_REGULARIZATION: f64 = 5e-3;

/// Pose of one target at one horizon step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

/// Predicted poses of one target over the horizon, plus the geometry used by
/// the bounding-box constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPrediction {
    pub id: String,
    /// `N + 1` poses, index 0 being the solve time.
    pub poses: Vec<TargetPose>,
    /// Target width in meters.
    pub width: f64,
    /// Target height in meters.
    pub height: f64,
    /// World offset from the tracked point to the box center.
    pub center_offset: Vector3<f64>,
    pub is_obstacle: bool,
}

impl TargetPrediction {
    pub fn pose(&self, k: usize) -> &TargetPose {
        &self.poses[k.min(self.poses.len() - 1)]
    }

    pub fn center(&self, k: usize) -> Vector3<f64> {
        self.pose(k).position + self.center_offset
    }
}

/// Scene snapshot at a single horizon step: one pose per target, in the same
/// order as the predictions.
pub fn scene_at(preds: &[TargetPrediction], k: usize) -> Vec<TargetPose> {
    preds.iter().map(|p| *p.pose(k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofObjective {
    /// Desired near distance (m).
    pub near: f64,
    /// Desired far distance (m); the far term is skipped when infinite.
    pub far: FarDistance,
    pub w_near: f64,
    pub w_far: f64,
}

impl Default for DofObjective {
    fn default() -> Self {
        Self {
            near: 0.0,
            far: FarDistance::Infinite,
            w_near: 0.0,
            w_far: 0.0,
        }
    }
}

/// A point of a target that should appear at a given pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositionTarget {
    /// Index into the prediction list.
    pub target: usize,
    /// Point offset in the target body frame (m).
    pub offset: Vector3<f64>,
    pub desired: Vector2<f64>,
    /// Horizontal and vertical weights.
    pub weight: Vector2<f64>,
}

/// Desired camera–target relation. The rotation is the value compared with
/// `R_dtᵀ`, where `R_dt = R_dᵀ R_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTarget {
    pub target: usize,
    pub distance: f64,
    pub rotation: Matrix3<f64>,
    pub w_distance: f64,
    pub w_rotation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FocalObjective {
    /// Desired focal length (mm).
    pub focal_length: f64,
    pub weight: f64,
}

/// Resolved instructions for one horizon step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Instructions {
    pub dof: DofObjective,
    pub composition: Vec<CompositionTarget>,
    pub pose: Vec<PoseTarget>,
    pub focal: FocalObjective,
}

impl Instructions {
    pub fn is_trivial(&self) -> bool {
        self.dof.w_near == 0.0
            && self.dof.w_far == 0.0
            && self.focal.weight == 0.0
            && self
                .composition
                .iter()
                .all(|c| c.weight == Vector2::zeros())
            && self
                .pose
                .iter()
                .all(|p| p.w_distance == 0.0 && p.w_rotation == 0.0)
    }
}

/// Instructions for horizon step `k`; the last entry is reused past the end.
pub fn instructions_at(instr: &[Instructions], k: usize) -> &Instructions {
    &instr[k.min(instr.len() - 1)]
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageCost {
    pub j_dof: f64,
    pub j_im: f64,
    pub j_p: f64,
    pub j_f: f64,
    pub total: f64,
}

impl StageCost {
    fn from_terms(j_dof: f64, j_im: f64, j_p: f64, j_f: f64) -> Self {
        Self {
            j_dof,
            j_im,
            j_p,
            j_f,
            total: j_dof + j_im + j_p + j_f,
        }
    }
}

/// Per-step and summed cost terms over a horizon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostBreakdown {
    pub per_step: Vec<StageCost>,
    pub j_dof: f64,
    pub j_im: f64,
    pub j_p: f64,
    pub j_f: f64,
    pub total: f64,
}

impl CostBreakdown {
    fn from_steps(per_step: Vec<StageCost>) -> Self {
        let mut out = CostBreakdown::default();
        for s in &per_step {
            out.j_dof += s.j_dof;
            out.j_im += s.j_im;
            out.j_p += s.j_p;
            out.j_f += s.j_f;
            out.total += s.total;
        }
        out.per_step = per_step;
        out
    }
}

// ---------------------------------------------------------------------------
// Strict terms
// ---------------------------------------------------------------------------

/// `w_Dn (D_n − D_n*)² + w_Df (D_f − D_f*)²`. The far term is skipped when the
/// desired far distance is infinite or its weight is zero; an infinite actual
/// far distance against a finite target costs `+∞`.
pub fn j_dof(
    intr: &IntrinsicState,
    spec: &CameraSensorSpec,
    instr: &Instructions,
) -> Result<f64, OpticsError> {
    let dof = depth_of_field(intr, spec)?;
    let obj = &instr.dof;
    let mut cost = 0.0;
    if obj.w_near != 0.0 {
        cost += obj.w_near * (dof.near_distance - obj.near).powi(2);
    }
    if obj.w_far != 0.0 {
        if let FarDistance::Finite(target) = obj.far {
            cost += match dof.far_distance {
                FarDistance::Finite(far) => obj.w_far * (far - target).powi(2),
                FarDistance::Infinite => f64::INFINITY,
            };
        }
    }
    Ok(cost)
}

/// World point of a composition target.
fn composition_point(c: &CompositionTarget, scene: &[TargetPose]) -> Vector3<f64> {
    let pose = &scene[c.target];
    pose.position + pose.rotation * c.offset
}

/// Pixel of a world point seen from the rig.
pub fn pixel_of(
    rig: &CameraRig,
    world: &Vector3<f64>,
    spec: &CameraSensorSpec,
) -> Result<Vector2<f64>, OpticsError> {
    let rel = rig.drone.orientation.transpose() * (world - rig.drone.position);
    let k = crate::optics::calibration_matrix(&rig.intrinsics, spec)?;
    crate::optics::project(&rel, &k)
}

/// `Σ w_im · ‖im − im*‖²` over composition points (per-axis weights).
pub fn j_im(
    rig: &CameraRig,
    scene: &[TargetPose],
    spec: &CameraSensorSpec,
    instr: &Instructions,
) -> Result<f64, OpticsError> {
    let mut cost = 0.0;
    for c in &instr.composition {
        if c.weight == Vector2::zeros() {
            continue;
        }
        let px = pixel_of(rig, &composition_point(c, scene), spec)?;
        let r = px - c.desired;
        cost += c.weight.x * r.x * r.x + c.weight.y * r.y * r.y;
    }
    Ok(cost)
}

/// `Σ w_R ‖R_dtᵀ − R*‖_F + w_d (d_dt − d*)²`.
pub fn j_p(rig: &CameraRig, scene: &[TargetPose], instr: &Instructions) -> f64 {
    let r_d = rig.drone.orientation;
    instr
        .pose
        .iter()
        .map(|t| {
            let pose = &scene[t.target];
            let mut cost = 0.0;
            if t.w_rotation != 0.0 {
                let r_dt = r_d.transpose() * pose.rotation;
                cost += t.w_rotation * (r_dt.transpose() - t.rotation).norm();
            }
            if t.w_distance != 0.0 {
                let d = (pose.position - rig.drone.position).norm();
                cost += t.w_distance * (d - t.distance).powi(2);
            }
            cost
        })
        .sum()
}

/// `w_f (f − f*)²`.
pub fn j_f(intr: &IntrinsicState, instr: &Instructions) -> f64 {
    instr.focal.weight * (intr.focal_length - instr.focal.focal_length).powi(2)
}

pub fn stage_cost(
    rig: &CameraRig,
    scene: &[TargetPose],
    spec: &CameraSensorSpec,
    instr: &Instructions,
) -> Result<StageCost, OpticsError> {
    Ok(StageCost::from_terms(
        j_dof(&rig.intrinsics, spec, instr)?,
        j_im(rig, scene, spec, instr)?,
        j_p(rig, scene, instr),
        j_f(&rig.intrinsics, instr),
    ))
}

/// Sum of stage costs over all states of the rollout (steps `0..=N`).
/// `instr` holds one entry per step; a shorter slice repeats its last entry.
pub fn horizon_cost(
    rollout: &Rollout,
    preds: &[TargetPrediction],
    spec: &CameraSensorSpec,
    instr: &[Instructions],
) -> Result<CostBreakdown, OpticsError> {
    check_alignment(rollout, preds, instr);
    let per_step = rollout
        .states
        .iter()
        .enumerate()
        .map(|(k, rig)| stage_cost(rig, &scene_at(preds, k), spec, instructions_at(instr, k)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CostBreakdown::from_steps(per_step))
}

fn check_alignment(rollout: &Rollout, preds: &[TargetPrediction], instr: &[Instructions]) {
    assert!(
        !instr.is_empty(),
        "at least one instruction set is required"
    );
    for p in preds {
        assert!(
            p.poses.len() >= rollout.states.len(),
            "prediction for {} has {} poses, rollout has {} states",
            p.id,
            p.poses.len(),
            rollout.states.len()
        );
    }
}

// ---------------------------------------------------------------------------
// Surrogate terms with gradients
// ---------------------------------------------------------------------------

/// Gradient of a scalar with respect to one rig state. `rotation` is taken
/// with respect to a right perturbation `R ← R exp(ξ^)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateGradient {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Vector3<f64>,
    pub focal_length: f64,
    pub focus_distance: f64,
    pub aperture: f64,
}

impl std::ops::AddAssign for StateGradient {
    fn add_assign(&mut self, o: Self) {
        self.position += o.position;
        self.velocity += o.velocity;
        self.rotation += o.rotation;
        self.focal_length += o.focal_length;
        self.focus_distance += o.focus_distance;
        self.aperture += o.aperture;
    }
}

impl std::ops::Mul<f64> for StateGradient {
    type Output = StateGradient;
    fn mul(self, s: f64) -> Self {
        StateGradient {
            position: self.position * s,
            velocity: self.velocity * s,
            rotation: self.rotation * s,
            focal_length: self.focal_length * s,
            focus_distance: self.focus_distance * s,
            aperture: self.aperture * s,
        }
    }
}

/// Projection of `world` (plus a camera-frame offset) with its Jacobians.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PointProjection {
    pub pixel: Vector2<f64>,
    /// Camera-frame position of the world point, before the offset.
    pub rel_base: Vector3<f64>,
    /// Camera-frame depth actually used (after the offset).
    pub depth: f64,
    pub d_pixel_d_rel: Matrix2x3<f64>,
    pub d_pixel_d_focal: Vector2<f64>,
    /// Whether the depth was frozen at [`DEPTH_EPSILON`].
    pub clamped: bool,
}

impl PointProjection {
    pub fn new(
        rig: &CameraRig,
        spec: &CameraSensorSpec,
        world: &Vector3<f64>,
        cam_offset: &Vector3<f64>,
    ) -> Self {
        let r = rig.drone.orientation;
        let rel_base = r.transpose() * (world - rig.drone.position);
        let rel = rel_base + cam_offset;
        let f = rig.intrinsics.focal_length;
        let (fx, fy) = (spec.beta_x() * f, spec.beta_y() * f);
        let s = spec.skew;
        let clamped = rel.z <= DEPTH_EPSILON;
        let z = if clamped { DEPTH_EPSILON } else { rel.z };
        let nu = fx * rel.x + s * rel.y;
        let nv = fy * rel.y;
        let pixel = Vector2::new(nu / z + spec.principal_u, nv / z + spec.principal_v);
        let (dz_u, dz_v) = if clamped {
            (0.0, 0.0)
        } else {
            (-nu / (z * z), -nv / (z * z))
        };
        let d_pixel_d_rel = Matrix2x3::new(fx / z, s / z, dz_u, 0.0, fy / z, dz_v);
        let d_pixel_d_focal = Vector2::new(spec.beta_x() * rel.x / z, spec.beta_y() * rel.y / z);
        Self {
            pixel,
            rel_base,
            depth: rel.z,
            d_pixel_d_rel,
            d_pixel_d_focal,
            clamped,
        }
    }

    /// Pulls a pixel-space gradient back onto the rig state.
    pub fn accumulate(&self, rig: &CameraRig, g_pixel: &Vector2<f64>, out: &mut StateGradient) {
        let g_rel = self.d_pixel_d_rel.transpose() * g_pixel;
        self.accumulate_rel(rig, &g_rel, out);
        out.focal_length += self.d_pixel_d_focal.dot(g_pixel);
    }

    /// Pulls a camera-frame gradient back onto position and orientation.
    pub fn accumulate_rel(&self, rig: &CameraRig, g_rel: &Vector3<f64>, out: &mut StateGradient) {
        out.position -= rig.drone.orientation * g_rel;
        out.rotation += g_rel.cross(&self.rel_base);
    }
}

/// Near distance and regularized far distance with partial derivatives with
/// respect to (focal length [mm], focus distance [m], aperture).
#[derive(Debug, Clone, Copy)]
pub(crate) struct DofDerivatives {
    pub near: f64,
    pub d_near: Vector3<f64>,
    pub far: f64,
    pub d_far: Vector3<f64>,
}

pub(crate) fn dof_derivatives(intr: &IntrinsicState, spec: &CameraSensorSpec) -> DofDerivatives {
    let f = mm_to_m(intr.focal_length);
    let c = mm_to_m(spec.circle_of_confusion);
    let a = intr.aperture;
    let focus = intr.focus_distance;
    let h = f * f / (a * c) + f;
    // dH/d(f_mm) and dH/dA
    let dh_df = mm_to_m(2.0 * f / (a * c) + 1.0);
    let dh_da = -f * f / (a * a * c);

    let den = h + focus - 2.0 * f;
    let den2 = den * den;
    let near = focus * (h - f) / den;
    let dn_dfocus = (h - f) * (h - 2.0 * f) / den2;
    let dn_dh = focus * (focus - f) / den2;
    let dn_df_explicit = focus * (h - focus) / den2;
    let d_near = Vector3::new(
        mm_to_m(dn_df_explicit) + dn_dh * dh_df,
        dn_dfocus,
        dn_dh * dh_da,
    );

    let q = h - focus;
    let q0 = FAR_REGULARIZATION * h;
    let (inv, dinv_dq, dinv_dh) = if q >= q0 {
        (1.0 / q, -1.0 / (q * q), 0.0)
    } else {
        (
            2.0 / q0 - q / (q0 * q0),
            -1.0 / (q0 * q0),
            FAR_REGULARIZATION * (-2.0 / (q0 * q0) + 2.0 * q / (q0 * q0 * q0)),
        )
    };
    let far = focus * (h - f) * inv;
    let df_dfocus = (h - f) * inv - focus * (h - f) * dinv_dq;
    let df_dh = focus * inv + focus * (h - f) * (dinv_dq + dinv_dh);
    let df_df_explicit = -focus * inv;
    let d_far = Vector3::new(
        mm_to_m(df_df_explicit) + df_dh * dh_df,
        df_dfocus,
        df_dh * dh_da,
    );
    DofDerivatives {
        near,
        d_near,
        far,
        d_far,
    }
}

/// Surrogate stage cost; accumulates its gradient into `grad` when given.
pub fn surrogate_stage_cost(
    rig: &CameraRig,
    scene: &[TargetPose],
    spec: &CameraSensorSpec,
    instr: &Instructions,
    mut grad: Option<&mut StateGradient>,
) -> StageCost {
    let intr = &rig.intrinsics;

    // Depth of field.
    let mut cost_dof = 0.0;
    let obj = &instr.dof;
    let far_active = obj.w_far != 0.0 && !obj.far.is_infinite();
    if obj.w_near != 0.0 || far_active {
        let d = dof_derivatives(intr, spec);
        let mut g = Vector3::zeros();
        if obj.w_near != 0.0 {
            let r = d.near - obj.near;
            cost_dof += obj.w_near * r * r;
            g += d.d_near * (2.0 * obj.w_near * r);
        }
        if far_active {
            let r = d.far - obj.far.as_f64();
            cost_dof += obj.w_far * r * r;
            g += d.d_far * (2.0 * obj.w_far * r);
        }
        if let Some(out) = grad.as_deref_mut() {
            out.focal_length += g.x;
            out.focus_distance += g.y;
            out.aperture += g.z;
        }
    }

    // Composition.
    let mut cost_im = 0.0;
    for c in &instr.composition {
        if c.weight == Vector2::zeros() {
            continue;
        }
        let world = composition_point(c, scene);
        let proj = PointProjection::new(rig, spec, &world, &Vector3::zeros());
        let r = proj.pixel - c.desired;
        cost_im += c.weight.x * r.x * r.x + c.weight.y * r.y * r.y;
        if proj.clamped {
            let gap = DEPTH_EPSILON - proj.depth;
            cost_im += BEHIND_CAMERA_PENALTY * gap * gap;
        }
        if let Some(out) = grad.as_deref_mut() {
            let g_pixel = Vector2::new(2.0 * c.weight.x * r.x, 2.0 * c.weight.y * r.y);
            proj.accumulate(rig, &g_pixel, out);
            if proj.clamped {
                let gap = DEPTH_EPSILON - proj.depth;
                let g_rel = Vector3::new(0.0, 0.0, -2.0 * BEHIND_CAMERA_PENALTY * gap);
                proj.accumulate_rel(rig, &g_rel, out);
            }
        }
    }

    // Relative pose.
    let mut cost_p = 0.0;
    let r_d = rig.drone.orientation;
    for t in &instr.pose {
        let pose = &scene[t.target];
        if t.w_rotation != 0.0 {
            // R_dtᵀ = R_tᵀ R_d
            let b = pose.rotation.transpose() * r_d;
            let m = b - t.rotation;
            let norm = m.norm();
            cost_p += t.w_rotation * norm;
            if let Some(out) = grad.as_deref_mut() {
                if norm > 1e-12 {
                    // d‖M‖ = <M, B ξ^>/‖M‖
                    let c = b.transpose() * m;
                    out.rotation += so3::vee(&(c - c.transpose())) * (t.w_rotation / norm);
                }
            }
        }
        if t.w_distance != 0.0 {
            let delta = pose.position - rig.drone.position;
            let d = delta.norm();
            let r = d - t.distance;
            cost_p += t.w_distance * r * r;
            if let Some(out) = grad.as_deref_mut() {
                if d > 1e-12 {
                    out.position -= delta * (2.0 * t.w_distance * r / d);
                }
            }
        }
    }

    // Focal length.
    let r = intr.focal_length - instr.focal.focal_length;
    let cost_f = instr.focal.weight * r * r;
    if let Some(out) = grad {
        out.focal_length += 2.0 * instr.focal.weight * r;
    }

    StageCost::from_terms(cost_dof, cost_im, cost_p, cost_f)
}

pub fn surrogate_horizon_cost(
    rollout: &Rollout,
    preds: &[TargetPrediction],
    spec: &CameraSensorSpec,
    instr: &[Instructions],
) -> CostBreakdown {
    check_alignment(rollout, preds, instr);
    let per_step = rollout
        .states
        .iter()
        .enumerate()
        .map(|(k, rig)| {
            surrogate_stage_cost(
                rig,
                &scene_at(preds, k),
                spec,
                instructions_at(instr, k),
                None,
            )
        })
        .collect();
    CostBreakdown::from_steps(per_step)
}

/// Per-state gradients of the surrogate stage costs.
pub(crate) fn stage_gradients(
    rollout: &Rollout,
    preds: &[TargetPrediction],
    spec: &CameraSensorSpec,
    instr: &[Instructions],
) -> (CostBreakdown, Vec<StateGradient>) {
    let mut grads = vec![StateGradient::default(); rollout.states.len()];
    let per_step = rollout
        .states
        .iter()
        .enumerate()
        .map(|(k, rig)| {
            surrogate_stage_cost(
                rig,
                &scene_at(preds, k),
                spec,
                instructions_at(instr, k),
                Some(&mut grads[k]),
            )
        })
        .collect();
    (CostBreakdown::from_steps(per_step), grads)
}

/// Adjoint pass: maps per-state gradients onto the stacked input vector
/// `[a, Ω, v_f, v_F, v_A]` × N.
pub fn backpropagate(rollout: &Rollout, seeds: &[StateGradient]) -> DVector<f64> {
    let n = rollout.horizon();
    assert_eq!(seeds.len(), n + 1);
    let dt = rollout.dt;
    let mut grad = DVector::zeros(n * INPUT_DIM);
    let mut lambda = seeds[n];
    for k in (0..n).rev() {
        let u = &rollout.inputs[k];
        let w = u.drone.angular_velocity * dt;
        let jr = so3::right_jacobian(&w);
        let e = so3::exp(&w);
        let g_omega = jr.transpose() * lambda.rotation * dt;
        let g_acc = lambda.velocity * dt;
        let base = k * INPUT_DIM;
        for i in 0..3 {
            grad[base + i] = g_acc[i];
            grad[base + 3 + i] = g_omega[i];
        }
        grad[base + 6] = lambda.focal_length * dt;
        grad[base + 7] = lambda.focus_distance * dt;
        grad[base + 8] = lambda.aperture * dt;

        let seed = &seeds[k];
        lambda = StateGradient {
            position: seed.position + lambda.position,
            velocity: seed.velocity + lambda.velocity + lambda.position * dt,
            rotation: seed.rotation + e * lambda.rotation,
            focal_length: seed.focal_length + lambda.focal_length,
            focus_distance: seed.focus_distance + lambda.focus_distance,
            aperture: seed.aperture + lambda.aperture,
        };
    }
    grad
}

/// Gradient of the surrogate horizon cost with respect to the stacked inputs.
pub fn cost_gradient(
    rollout: &Rollout,
    preds: &[TargetPrediction],
    spec: &CameraSensorSpec,
    instr: &[Instructions],
) -> DVector<f64> {
    check_alignment(rollout, preds, instr);
    let (_, seeds) = stage_gradients(rollout, preds, spec, instr);
    backpropagate(rollout, &seeds)
}
