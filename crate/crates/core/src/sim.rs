//! Kinematic world and closed-loop driver.
//!
//! Targets follow scripted waypoint trajectories. Filmed targets are observed
//! through a synthetic detector (projected box, representative pixel, noisy
//! depth patch) and tracked by the Kalman filter; obstacles are known exactly.
//! Each control period runs sense → estimate → plan → act, executing the
//! first segment of the plan as `m` interpolated set-points.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraints::{target_box, BoundingBox, ConstraintKind, ConstraintSet, Interval};
use crate::estimation::{
    measure_world_position, orientation_from_velocity, predict_horizon, Detection, TargetMeta,
    TargetTrack,
};
use crate::kinematics::{interpolate_commands, CameraRig, ControlInput, DroneState, Rollout};
use crate::mpc::{shift_warm_start, solve, Plan, SolveError, SolveStats, SolveStatus};
use crate::objectives::{
    surrogate_horizon_cost, surrogate_stage_cost, Instructions, StageCost, TargetPose,
    TargetPrediction,
};
use crate::optics::{calibration_matrix, depth_of_field, project, CameraSensorSpec, FarDistance};
use crate::scenario::ScenarioConfig;
use crate::so3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    /// Cubic Hermite with finite-difference tangents and zero end velocity.
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub interpolation: Interpolation,
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    pub fn stationary(position: Vector3<f64>) -> Self {
        Self {
            interpolation: Interpolation::Linear,
            waypoints: vec![Waypoint { t: 0.0, position }],
        }
    }

    /// Position and velocity at `t`, clamped to the script span.
    pub fn sample(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let w = &self.waypoints;
        if w.len() == 1 || t <= w[0].t {
            return (w[0].position, Vector3::zeros());
        }
        let last = w.len() - 1;
        if t >= w[last].t {
            return (w[last].position, Vector3::zeros());
        }
        let i = w.partition_point(|p| p.t <= t) - 1;
        let (a, b) = (&w[i], &w[i + 1]);
        let h = b.t - a.t;
        let s = (t - a.t) / h;
        match self.interpolation {
            Interpolation::Linear => {
                let v = (b.position - a.position) / h;
                (a.position + (b.position - a.position) * s, v)
            }
            Interpolation::Smooth => {
                let m0 = self.tangent(i);
                let m1 = self.tangent(i + 1);
                let (s2, s3) = (s * s, s * s * s);
                let p = a.position * (2.0 * s3 - 3.0 * s2 + 1.0)
                    + m0 * (h * (s3 - 2.0 * s2 + s))
                    + b.position * (-2.0 * s3 + 3.0 * s2)
                    + m1 * (h * (s3 - s2));
                let dp = a.position * (6.0 * s2 - 6.0 * s)
                    + m0 * (h * (3.0 * s2 - 4.0 * s + 1.0))
                    + b.position * (-6.0 * s2 + 6.0 * s)
                    + m1 * (h * (3.0 * s2 - 2.0 * s));
                (p, dp / h)
            }
        }
    }

    fn tangent(&self, i: usize) -> Vector3<f64> {
        let w = &self.waypoints;
        if i == 0 || i == w.len() - 1 {
            return Vector3::zeros();
        }
        (w[i + 1].position - w[i - 1].position) / (w[i + 1].t - w[i - 1].t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedTarget {
    pub id: String,
    pub meta: TargetMeta,
    /// Named points in the body frame (x forward, y left, z up), relative to
    /// the tracked point.
    #[serde(default)]
    pub anchors: BTreeMap<String, Vector3<f64>>,
    #[serde(default)]
    pub is_obstacle: bool,
    pub trajectory: Trajectory,
    /// Half-range of a uniform per-run offset applied to the whole script.
    #[serde(default)]
    pub position_jitter: Vector3<f64>,
}

impl ScriptedTarget {
    /// Copy of the script shifted by `offset`.
    pub fn shifted(&self, offset: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        for w in &mut out.trajectory.waypoints {
            w.position += offset;
        }
        out
    }

    /// World position of the geometric center at `t`.
    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        target_pose_at(self, t).position + self.meta.center_offset()
    }
}

/// Ground-truth pose: interpolated tracked point, orientation along the
/// motion direction or the preliminary orientation when stationary.
pub fn target_pose_at(target: &ScriptedTarget, t: f64) -> TargetPose {
    let (position, velocity) = target.trajectory.sample(t);
    let (rotation, _) =
        orientation_from_velocity(&velocity, &target.meta.preliminary_rotation, 1e-9);
    TargetPose { position, rotation }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    /// Standard deviation of each depth sample (m).
    pub depth_noise: f64,
    /// Probability of missing a detection in a frame.
    pub dropout: f64,
    /// Standard deviation of the representative pixel (px).
    pub pixel_jitter: f64,
    pub patch_rows: usize,
    pub patch_cols: usize,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            depth_noise: 0.04,
            dropout: 0.0,
            pixel_jitter: 0.0,
            patch_rows: 5,
            patch_cols: 3,
        }
    }
}

impl SensorModel {
    pub fn noise_free() -> Self {
        Self {
            depth_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validation_errors(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if !(self.depth_noise >= 0.0) {
            out.push(("depth_noise".into(), "must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            out.push(("dropout".into(), "must be a probability".into()));
        }
        if !(self.pixel_jitter >= 0.0) {
            out.push(("pixel_jitter".into(), "must be nonnegative".into()));
        }
        if self.patch_rows == 0 || self.patch_cols == 0 {
            out.push(("patch_rows".into(), "patch must be nonempty".into()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub period: f64,
    pub substeps: usize,
    pub step: u64,
}

impl SimClock {
    pub fn new(period: f64, substeps: usize) -> Self {
        assert!(period > 0.0 && substeps >= 1);
        Self {
            period,
            substeps,
            step: 0,
        }
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.period
    }

    pub fn substep_time(&self, i: usize) -> f64 {
        (self.step as f64 + i as f64 / self.substeps as f64) * self.period
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

/// Obstacle geometry as seen by the detector.
#[derive(Debug, Clone, Copy)]
pub struct Occluder {
    pub center: Vector3<f64>,
    pub width: f64,
    pub height: f64,
}

/// Synthetic detection of `target` from `rig`, or `None` when the target is
/// behind the camera, outside the image, hidden by a closer obstacle whose box
/// covers its representative pixel, or dropped.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_detection(
    rig: &CameraRig,
    id: &str,
    pose: &TargetPose,
    meta: &TargetMeta,
    occluders: &[Occluder],
    sensor: &SensorModel,
    spec: &CameraSensorSpec,
    rng: &mut ChaCha8Rng,
) -> Option<Detection> {
    // Draw every random number up front so the stream does not depend on
    // the outcome.
    let dropped = rng.gen::<f64>() < sensor.dropout;
    let jitter = Vector2::new(standard_normal(rng), standard_normal(rng)) * sensor.pixel_jitter;
    let noise: Vec<f64> = (0..sensor.patch_rows * sensor.patch_cols)
        .map(|_| standard_normal(rng) * sensor.depth_noise)
        .collect();

    let r_t = rig.drone.orientation.transpose();
    let rel = r_t * (pose.position - rig.drone.position);
    if rel.z <= 0.0 {
        return None;
    }
    let k = calibration_matrix(&rig.intrinsics, spec).ok()?;
    let pixel = project(&rel, &k).ok()?;
    if !spec.contains_pixel(&pixel) {
        return None;
    }
    for o in occluders {
        let depth = (r_t * (o.center - rig.drone.position)).z;
        if depth <= 0.0 || depth >= rel.z {
            continue;
        }
        if let Ok(b) =
            crate::constraints::predict_bounding_box(rig, &o.center, o.width, o.height, spec)
        {
            if b.contains(&pixel) {
                return None;
            }
        }
    }
    if dropped {
        return None;
    }
    let center = pose.position + meta.center_offset();
    let bbox =
        crate::constraints::predict_bounding_box(rig, &center, meta.width, meta.height, spec)
            .ok()?;
    let depth_patch = DMatrix::from_row_iterator(
        sensor.patch_rows,
        sensor.patch_cols,
        noise.iter().map(|n| rel.z + n),
    );
    Some(Detection {
        target_id: id.to_string(),
        bbox,
        pixel: pixel + jitter,
        depth_patch,
    })
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RunEvent {
    Collision {
        time: f64,
        target: String,
        distance: f64,
    },
}

/// Per-target quantities of one log row.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRecord {
    pub truth: Vector3<f64>,
    /// NaN until the target has been detected once.
    pub estimate: Vector3<f64>,
    pub covariance_trace: f64,
    pub visible: bool,
    /// Minimum drone–center distance over the substeps ending at this row.
    pub min_distance: f64,
    pub bbox: Option<BoundingBox>,
}

/// Per-anchor image quantities of one log row.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorRecord {
    pub pixel: Option<Vector2<f64>>,
    /// Desired pixel when the anchor is part of the active composition.
    pub desired: Option<Vector2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub cost: StageCost,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    pub fallback: bool,
    pub active_occlusions: usize,
    pub min_state_residual: f64,
    pub min_collision_residual: f64,
    pub min_occlusion_residual: f64,
}

/// One control period.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub time: f64,
    pub sequence: usize,
    pub rig: CameraRig,
    pub near: f64,
    pub far: f64,
    pub desired_near: f64,
    pub desired_far: f64,
    pub desired_focal: f64,
    pub focal_ramp: bool,
    pub targets: Vec<TargetRecord>,
    pub anchors: Vec<AnchorRecord>,
    /// Stage cost of the executed (ground-truth) state.
    pub executed_cost: StageCost,
    /// Minimum over targets of distance − d_min for this row.
    pub distance_residual: f64,
    /// `None` on the final row, which has no solve.
    pub plan: Option<PlanRecord>,
    /// Set on the last row when the following segment ended in contact.
    pub contact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub scenario: String,
    pub seed: u64,
    pub target_ids: Vec<String>,
    /// `target.anchor` labels in column order.
    pub anchor_labels: Vec<String>,
    pub records: Vec<StepRecord>,
    pub event: Option<RunEvent>,
}

impl RunLog {
    pub fn collided(&self) -> bool {
        matches!(self.event, Some(RunEvent::Collision { .. }))
    }

    pub fn target_index(&self, id: &str) -> Option<usize> {
        self.target_ids.iter().position(|t| t == id)
    }
}

/// Randomized initial conditions of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub rig: CameraRig,
    pub targets: Vec<ScriptedTarget>,
}

fn uniform_offset(rng: &mut ChaCha8Rng, half: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let u: f64 = rng.gen::<f64>() * 2.0 - 1.0;
        u * half[i]
    })
}

/// Draws the per-run initial rig and target offsets.
pub fn setup_run(config: &ScenarioConfig, seed: u64) -> RunSetup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let init = &config.initial_rig;
    let position = init.position + uniform_offset(&mut rng, &init.position_jitter);
    let targets: Vec<ScriptedTarget> = config
        .targets
        .iter()
        .map(|t| t.shifted(&uniform_offset(&mut rng, &t.position_jitter)))
        .collect();
    let orientation = so3::look_rotation(&(init.look_at - position), &Vector3::z());
    RunSetup {
        rig: CameraRig {
            drone: DroneState {
                position,
                velocity: init.velocity,
                orientation,
            },
            intrinsics: init.intrinsics,
            time_index: 0,
        },
        targets,
    }
}

/// Anchor labels `target.anchor` of every filmed target, in config order.
pub fn anchor_labels(config: &ScenarioConfig) -> Vec<(usize, String, String)> {
    let mut out = Vec::new();
    for (i, t) in config.targets.iter().enumerate() {
        for name in t.anchors.keys() {
            out.push((i, t.id.clone(), name.clone()));
        }
    }
    out
}

pub fn ground_truth_predictions(
    targets: &[ScriptedTarget],
    t: f64,
    n: usize,
    dt: f64,
) -> Vec<TargetPrediction> {
    targets
        .iter()
        .map(|s| TargetPrediction {
            id: s.id.clone(),
            poses: (0..=n)
                .map(|j| target_pose_at(s, t + j as f64 * dt))
                .collect(),
            width: s.meta.width,
            height: s.meta.height,
            center_offset: s.meta.center_offset(),
            is_obstacle: s.is_obstacle,
        })
        .collect()
}

/// Keeps only the terms that refer to available targets and renumbers them.
fn remap_instructions(instr: &Instructions, map: &[Option<usize>]) -> Instructions {
    let mut out = instr.clone();
    out.composition = instr
        .composition
        .iter()
        .filter_map(|c| {
            map[c.target].map(|t| crate::objectives::CompositionTarget { target: t, ..*c })
        })
        .collect();
    out.pose = instr
        .pose
        .iter()
        .filter_map(|p| map[p.target].map(|t| crate::objectives::PoseTarget { target: t, ..*p }))
        .collect();
    out
}

fn fallback_plan(
    rig: &CameraRig,
    prev: Option<&Plan>,
    preds: &[TargetPrediction],
    instr: &[Instructions],
    config: &ScenarioConfig,
) -> Plan {
    let inputs: Vec<ControlInput> = shift_warm_start(prev, config.solver.horizon)
        .iter()
        .map(|u| config.constraints.input_bounds.clamp(u))
        .collect();
    let rollout = Rollout::simulate(rig, &inputs, config.solver.dt);
    let cost = surrogate_horizon_cost(&rollout, preds, &config.camera, instr);
    let residuals = crate::constraints::evaluate_constraints(
        &rollout,
        preds,
        &config.camera,
        &config.constraints,
        &[],
    );
    Plan {
        feasible: residuals.is_feasible(config.solver.feasibility_tol),
        inputs,
        predicted_states: rollout.states,
        cost,
        residuals,
        occlusion_records: Vec::new(),
        status: SolveStatus::MaxIterations,
        stats: SolveStats::default(),
    }
}

/// Copy of `cset` whose state bounds are widened just enough to contain the
/// state of `rig`.
fn relax_state_bounds(cset: &ConstraintSet, rig: &CameraRig) -> ConstraintSet {
    let values = cset.state_values(rig);
    let mut out = cset.clone();
    let b = &mut out.state_bounds;
    let widen = |iv: &mut Interval, vs: &[f64]| {
        for v in vs {
            iv.lower = iv.lower.min(*v);
            iv.upper = iv.upper.max(*v);
        }
    };
    widen(&mut b.position, &values[0..3]);
    widen(&mut b.velocity, &values[3..6]);
    widen(&mut b.rotation, &values[6..9]);
    widen(&mut b.focal_length, &values[9..10]);
    widen(&mut b.focus_distance, &values[10..11]);
    widen(&mut b.aperture, &values[11..12]);
    out
}

fn min_or_nan(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// Runs one closed-loop simulation of `config` with `seed`.
pub fn run_closed_loop(config: &ScenarioConfig, seed: u64) -> RunLog {
    let setup = setup_run(config, seed);
    run_closed_loop_from(config, seed, setup)
}

/// Closed loop from explicit initial conditions.
pub fn run_closed_loop_from(config: &ScenarioConfig, seed: u64, setup: RunSetup) -> RunLog {
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(seed);
    sensor_rng.set_stream(2);

    let targets = setup.targets;
    let mut rig = setup.rig;
    let spec = &config.camera;
    let cset = &config.constraints;
    let n = config.solver.horizon;
    let dt = config.solver.dt;
    let mut clock = SimClock::new(dt, config.simulation.substeps);
    let periods = (config.simulation.duration / dt + 1e-9).floor() as u64;
    let anchors = anchor_labels(config);

    let mut log = RunLog {
        scenario: config.name.clone(),
        seed,
        target_ids: targets.iter().map(|t| t.id.clone()).collect(),
        anchor_labels: anchors.iter().map(|(_, t, a)| format!("{t}.{a}")).collect(),
        records: Vec::new(),
        event: None,
    };
    if periods == 0 {
        return log;
    }

    let mut tracks: Vec<Option<TargetTrack>> = vec![None; targets.len()];
    let mut prev_plan: Option<Plan> = None;
    let mut segment_min: Vec<f64> = targets
        .iter()
        .map(|s| (s.center_at(0.0) - rig.drone.position).norm())
        .collect();

    for k in 0..=periods {
        let t = clock.time();
        let truth: Vec<TargetPose> = targets.iter().map(|s| target_pose_at(s, t)).collect();
        let occluders: Vec<Occluder> = targets
            .iter()
            .zip(&truth)
            .filter(|(s, _)| s.is_obstacle)
            .map(|(s, p)| Occluder {
                center: p.position + s.meta.center_offset(),
                width: s.meta.width,
                height: s.meta.height,
            })
            .collect();

        // Sense and estimate.
        let mut visible = vec![false; targets.len()];
        for (i, s) in targets.iter().enumerate() {
            if s.is_obstacle {
                continue;
            }
            let det = synthesize_detection(
                &rig,
                &s.id,
                &truth[i],
                &s.meta,
                &occluders,
                &config.sensor,
                spec,
                &mut sensor_rng,
            );
            let measurement = det.and_then(|d| measure_world_position(&d, &rig, spec).ok());
            visible[i] = measurement.is_some();
            let est = &config.estimation;
            tracks[i] = match (tracks[i].take(), measurement) {
                (Some(tr), m) => {
                    let predicted = if k > 0 {
                        tr.predict(dt, est.process_noise)
                    } else {
                        tr
                    };
                    Some(match m {
                        Some(m) => predicted.update(&m, est.measurement_noise),
                        None => predicted,
                    })
                }
                (None, Some(m)) => Some(TargetTrack::new(&m, s.meta.preliminary_rotation, est)),
                (None, None) => None,
            };
            if let Some(tr) = tracks[i].as_mut() {
                tr.refresh_orientation(&s.meta.preliminary_rotation, est.speed_threshold);
            }
        }

        // Horizon predictions in config order, skipping unknown targets.
        let mut map = vec![None; targets.len()];
        let mut preds = Vec::new();
        let truth_preds = ground_truth_predictions(&targets, t, n, dt);
        for (i, s) in targets.iter().enumerate() {
            let pred = if s.is_obstacle {
                Some(truth_preds[i].clone())
            } else {
                tracks[i]
                    .as_ref()
                    .map(|tr| predict_horizon(tr, &s.id, &s.meta, false, n, dt))
            };
            if let Some(p) = pred {
                map[i] = Some(preds.len());
                preds.push(p);
            }
        }
        // Relative set-points use the distance expected at each horizon step:
        // target prediction against the previous plan shifted by one period.
        let drone_at = |j: usize| -> Vector3<f64> {
            match &prev_plan {
                Some(p) if j > 0 => {
                    p.predicted_states[(j + 1).min(p.predicted_states.len() - 1)]
                        .drone
                        .position
                }
                _ => rig.drone.position,
            }
        };
        let est_distances_at = |j: usize| -> Vec<f64> {
            (0..targets.len())
                .map(|i| match map[i] {
                    Some(m) => (preds[m].poses[j.min(preds[m].poses.len() - 1)].position
                        - drone_at(j))
                    .norm(),
                    None => f64::NAN,
                })
                .collect()
        };
        let truth_distances: Vec<f64> = truth
            .iter()
            .map(|p| (p.position - rig.drone.position).norm())
            .collect();
        let instr_full: Vec<Instructions> = (0..=n)
            .map(|j| config.instructions_at(t + j as f64 * dt, &est_distances_at(j)))
            .collect();
        let instr: Vec<Instructions> = instr_full
            .iter()
            .map(|i| remap_instructions(i, &map))
            .collect();
        let truth_instr = config.instructions_at(t, &truth_distances);

        // Plan.
        let plan_record;
        let next_rig;
        if k < periods {
            let solved = solve(
                &rig,
                &preds,
                &instr,
                cset,
                spec,
                &config.solver,
                prev_plan.as_ref(),
            );
            let (plan, fallback) = match solved {
                Ok(p) => (p, false),
                Err(SolveError::InfeasibleStart { .. }) => {
                    // Position and gimbal bounds are only enforced through the
                    // penalty; after a small excursion, plan from a bound set
                    // that admits the current state.
                    let relaxed = relax_state_bounds(cset, &rig);
                    match solve(
                        &rig,
                        &preds,
                        &instr,
                        &relaxed,
                        spec,
                        &config.solver,
                        prev_plan.as_ref(),
                    ) {
                        Ok(p) => (p, true),
                        Err(_) => (
                            fallback_plan(&rig, prev_plan.as_ref(), &preds, &instr, config),
                            true,
                        ),
                    }
                }
                Err(SolveError::InvalidProblem(_)) => (
                    fallback_plan(&rig, prev_plan.as_ref(), &preds, &instr, config),
                    true,
                ),
            };
            plan_record = Some(PlanRecord {
                cost: StageCost {
                    j_dof: plan.cost.j_dof,
                    j_im: plan.cost.j_im,
                    j_p: plan.cost.j_p,
                    j_f: plan.cost.j_f,
                    total: plan.cost.total,
                },
                iterations: plan.stats.iterations,
                converged: plan.status == SolveStatus::Converged,
                feasible: plan.feasible,
                fallback,
                active_occlusions: plan.occlusion_records.iter().filter(|r| r.active).count(),
                min_state_residual: min_or_nan(
                    plan.residuals
                        .min_of(ConstraintKind::StateLower)
                        .min(plan.residuals.min_of(ConstraintKind::StateUpper)),
                ),
                min_collision_residual: min_or_nan(
                    plan.residuals.min_of(ConstraintKind::Collision),
                ),
                min_occlusion_residual: min_or_nan(
                    plan.residuals.min_of(ConstraintKind::Occlusion),
                ),
            });
            next_rig = Some(plan.predicted_states[1]);
            prev_plan = Some(plan);
        } else {
            plan_record = None;
            next_rig = None;
        }

        // Log the state at t.
        let dof = depth_of_field(&rig.intrinsics, spec).ok();
        let scene_truth = truth.clone();
        let executed_cost = surrogate_stage_cost(&rig, &scene_truth, spec, &truth_instr, None);
        let target_records: Vec<TargetRecord> = targets
            .iter()
            .enumerate()
            .map(|(i, _)| TargetRecord {
                truth: truth[i].position,
                estimate: tracks[i]
                    .as_ref()
                    .map_or(Vector3::from_element(f64::NAN), |tr| tr.position()),
                covariance_trace: tracks[i]
                    .as_ref()
                    .map_or(f64::NAN, |tr| tr.covariance.trace()),
                visible: visible[i],
                min_distance: segment_min[i],
                bbox: target_box(&rig, &truth_preds[i], 0, spec).ok(),
            })
            .collect();
        let anchor_records: Vec<AnchorRecord> = anchors
            .iter()
            .map(|(ti, _, name)| {
                let offset = targets[*ti].anchors[name];
                let world = truth[*ti].position + truth[*ti].rotation * offset;
                let pixel = crate::objectives::pixel_of(&rig, &world, spec).ok();
                let desired = truth_instr
                    .composition
                    .iter()
                    .find(|c| c.target == *ti && c.offset == offset)
                    .map(|c| c.desired);
                AnchorRecord { pixel, desired }
            })
            .collect();
        let distance_residual = segment_min
            .iter()
            .map(|d| d - cset.safety_distance)
            .fold(f64::INFINITY, f64::min);
        let seq = config.active_sequence(t);
        log.records.push(StepRecord {
            step: clock.step,
            time: t,
            sequence: seq,
            rig,
            near: dof.map_or(f64::NAN, |d| d.near_distance),
            far: dof.map_or(f64::NAN, |d| match d.far_distance {
                FarDistance::Finite(v) => v,
                FarDistance::Infinite => f64::INFINITY,
            }),
            desired_near: if truth_instr.dof.w_near > 0.0 {
                truth_instr.dof.near
            } else {
                f64::NAN
            },
            desired_far: if truth_instr.dof.w_far > 0.0 {
                truth_instr.dof.far.as_f64()
            } else {
                f64::NAN
            },
            desired_focal: if truth_instr.focal.weight > 0.0 {
                truth_instr.focal.focal_length
            } else {
                f64::NAN
            },
            focal_ramp: config.focal_ramp_active(t),
            targets: target_records,
            anchors: anchor_records,
            executed_cost,
            distance_residual: if distance_residual.is_finite() {
                distance_residual
            } else {
                f64::NAN
            },
            plan: plan_record,
            contact: false,
        });

        // Act: interpolate to the next set-point and watch for contact.
        let Some(next) = next_rig else { break };
        let setpoints = interpolate_commands(&rig, &next, clock.substeps);
        for d in segment_min.iter_mut() {
            *d = f64::INFINITY;
        }
        let mut collision = None;
        for (i, sp) in setpoints.iter().enumerate() {
            let ts = clock.substep_time(i + 1);
            for (j, s) in targets.iter().enumerate() {
                let d = (s.center_at(ts) - sp.drone.position).norm();
                segment_min[j] = segment_min[j].min(d);
                if d < config.simulation.contact_radius && collision.is_none() {
                    collision = Some(RunEvent::Collision {
                        time: ts,
                        target: s.id.clone(),
                        distance: d,
                    });
                }
            }
            if collision.is_some() {
                break;
            }
        }
        if collision.is_some() {
            log::info!(
                "run {} seed {seed}: contact at t = {:.2} s",
                config.name,
                clock.substep_time(0)
            );
            log.event = collision;
            if let Some(last) = log.records.last_mut() {
                last.contact = true;
            }
            break;
        }
        rig = next;
        rig.time_index = clock.step + 1;
        clock.advance();
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::TargetNature;
    use crate::optics::IntrinsicState;
    use nalgebra::Matrix3;

    fn walker() -> ScriptedTarget {
        ScriptedTarget {
            id: "walker".into(),
            meta: TargetMeta {
                nature: TargetNature::Person,
                height: 1.8,
                width: 0.5,
                preliminary_rotation: Matrix3::identity(),
            },
            anchors: BTreeMap::new(),
            is_obstacle: false,
            trajectory: Trajectory {
                interpolation: Interpolation::Linear,
                waypoints: vec![
                    Waypoint {
                        t: 0.0,
                        position: Vector3::zeros(),
                    },
                    Waypoint {
                        t: 10.0,
                        position: Vector3::new(10.0, 0.0, 0.0),
                    },
                ],
            },
            position_jitter: Vector3::zeros(),
        }
    }

    #[test]
    fn pose_interpolation_examples() {
        let w = walker();
        assert_eq!(target_pose_at(&w, -1.0).position, Vector3::zeros());
        assert!((target_pose_at(&w, 5.0).position - Vector3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
        let moving = target_pose_at(&w, 5.0).rotation;
        assert!((moving - Matrix3::identity()).norm() < 1e-12);

        let mut still = walker();
        still.trajectory = Trajectory::stationary(Vector3::new(1.0, 2.0, 3.0));
        for t in [0.0, 3.0, 100.0] {
            assert_eq!(
                target_pose_at(&still, t).position,
                Vector3::new(1.0, 2.0, 3.0)
            );
        }
    }

    #[test]
    fn smooth_trajectory_is_continuous_with_consistent_velocity() {
        let traj = Trajectory {
            interpolation: Interpolation::Smooth,
            waypoints: vec![
                Waypoint {
                    t: 0.0,
                    position: Vector3::zeros(),
                },
                Waypoint {
                    t: 2.0,
                    position: Vector3::new(2.0, 1.0, 0.0),
                },
                Waypoint {
                    t: 5.0,
                    position: Vector3::new(4.0, -1.0, 0.5),
                },
            ],
        };
        for w in &traj.waypoints {
            assert!((traj.sample(w.t).0 - w.position).norm() < 1e-12);
        }
        let h = 1e-6;
        for t in [0.5, 1.9, 2.1, 4.0] {
            let fd = (traj.sample(t + h).0 - traj.sample(t - h).0) / (2.0 * h);
            assert!((fd - traj.sample(t).1).norm() < 1e-6);
        }
    }

    fn spec() -> CameraSensorSpec {
        CameraSensorSpec::simulation_default()
    }

    fn rig_looking_at(target: Vector3<f64>, from: Vector3<f64>) -> CameraRig {
        CameraRig {
            drone: DroneState::at_rest(from, so3::look_rotation(&(target - from), &Vector3::z())),
            intrinsics: IntrinsicState::new(35.0, 5.0, 2.8),
            time_index: 0,
        }
    }

    #[test]
    fn noise_free_detection_round_trips() {
        let w = walker();
        let pose = TargetPose {
            position: Vector3::new(0.3, -0.2, 1.8),
            rotation: Matrix3::identity(),
        };
        let rig = rig_looking_at(Vector3::new(0.0, 0.0, 1.2), Vector3::new(6.0, 1.0, 1.5));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let det = synthesize_detection(
            &rig,
            "walker",
            &pose,
            &w.meta,
            &[],
            &SensorModel::noise_free(),
            &spec(),
            &mut rng,
        )
        .expect("visible");
        let m = measure_world_position(&det, &rig, &spec()).unwrap();
        assert!((m - pose.position).norm() < 1e-9);
        // Head top projects onto the top edge of the camera-aligned box.
        let b = det.bbox;
        assert!(det.pixel.x > b.left_top.x && det.pixel.x < b.right_bottom.x);
        let h = b.right_bottom.y - b.left_top.y;
        assert!((det.pixel.y - b.left_top.y).abs() < 0.05 * h);
    }

    #[test]
    fn detector_rejects_hidden_targets() {
        let w = walker();
        let pose = TargetPose {
            position: Vector3::new(0.0, 0.0, 1.8),
            rotation: Matrix3::identity(),
        };
        let sensor = SensorModel::noise_free();
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        let behind = rig_looking_at(Vector3::new(10.0, 0.0, 1.5), Vector3::new(5.0, 0.0, 1.5));
        assert!(synthesize_detection(
            &behind,
            "w",
            &pose,
            &w.meta,
            &[],
            &sensor,
            &spec(),
            &mut rng
        )
        .is_none());

        let rig = rig_looking_at(Vector3::new(0.0, 0.0, 1.2), Vector3::new(6.0, 0.0, 1.35));
        let cactus = Occluder {
            center: Vector3::new(3.0, 0.0, 1.0),
            width: 0.6,
            height: 2.0,
        };
        assert!(synthesize_detection(
            &rig,
            "w",
            &pose,
            &w.meta,
            &[cactus],
            &sensor,
            &spec(),
            &mut rng
        )
        .is_none());
        // The same obstacle behind the target does not hide it.
        let behind_target = Occluder {
            center: Vector3::new(-3.0, 0.0, 1.0),
            ..cactus
        };
        assert!(synthesize_detection(
            &rig,
            "w",
            &pose,
            &w.meta,
            &[behind_target],
            &sensor,
            &spec(),
            &mut rng
        )
        .is_some());

        let always_drop = SensorModel {
            dropout: 1.0,
            ..SensorModel::noise_free()
        };
        assert!(synthesize_detection(
            &rig,
            "w",
            &pose,
            &w.meta,
            &[],
            &always_drop,
            &spec(),
            &mut rng
        )
        .is_none());
    }

    #[test]
    fn clock_arithmetic() {
        let mut c = SimClock::new(0.2, 5);
        c.advance();
        c.advance();
        assert!((c.time() - 0.4).abs() < 1e-15);
        assert!((c.substep_time(5) - 0.6).abs() < 1e-15);
    }
}
