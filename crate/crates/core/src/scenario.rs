//! Scenario configuration: schema, validation and the instruction sequencer.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::ConstraintSet;
use crate::estimation::EstimationConfig;
use crate::mpc::SolverConfig;
use crate::objectives::{
    CompositionTarget, DofObjective, FocalObjective, Instructions, PoseTarget,
};
use crate::optics::{CameraSensorSpec, FarDistance, IntrinsicState};
use crate::sim::{ScriptedTarget, SensorModel};
use crate::so3;

/// A scalar that is either constant or piecewise linear in the time since the
/// sequence start. Repeated times encode jumps; the later point wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    Ramp { ramp: Vec<[f64; 2]> },
}

impl Schedule {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::Ramp { ramp } => {
                let last = ramp.len() - 1;
                if t < ramp[0][0] {
                    return ramp[0][1];
                }
                if t >= ramp[last][0] {
                    return ramp[last][1];
                }
                let i = ramp.partition_point(|p| p[0] <= t) - 1;
                let (a, b) = (ramp[i], ramp[i + 1]);
                a[1] + (b[1] - a[1]) * (t - a[0]) / (b[0] - a[0])
            }
        }
    }

    /// Whether `t` lies strictly inside a time-varying stretch.
    pub fn is_ramping(&self, t: f64) -> bool {
        match self {
            Schedule::Constant(_) => false,
            Schedule::Ramp { ramp } => ramp
                .windows(2)
                .any(|w| w[0][0] <= t && t < w[1][0] && w[0][1] != w[1][1]),
        }
    }

    fn issues(&self, path: &str, out: &mut Vec<FieldIssue>) {
        match self {
            Schedule::Constant(v) => {
                if !v.is_finite() {
                    out.push(FieldIssue::new(path, "must be finite"));
                }
            }
            Schedule::Ramp { ramp } => {
                if ramp.is_empty() {
                    out.push(FieldIssue::new(path, "ramp needs at least one point"));
                }
                if ramp.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                    out.push(FieldIssue::new(path, "ramp points must be finite"));
                }
                if ramp.windows(2).any(|w| w[1][0] < w[0][0]) {
                    out.push(FieldIssue::new(path, "ramp times must be nondecreasing"));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSpec {
    Absolute(f64),
    /// Current camera–target distance plus a scheduled offset.
    Relative {
        target: String,
        offset: Schedule,
    },
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DofSpec {
    pub near: DistanceSpec,
    pub far: DistanceSpec,
    pub w_near: f64,
    pub w_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionSpec {
    pub target: String,
    pub anchor: String,
    pub pixel: Vector2<f64>,
    /// Per-axis weights `[w_x, w_y]`.
    pub weight: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub target: String,
    pub distance: f64,
    /// Desired camera-to-target relative rotation `R_dᵀ R_t`.
    #[serde(with = "crate::serde_rotation")]
    pub relative_rotation: Matrix3<f64>,
    pub w_distance: f64,
    pub w_rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalSpec {
    pub focal_length: Schedule,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<DofSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub composition: Vec<CompositionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pose: Vec<PoseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal: Option<FocalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sequence {
    pub start: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub instructions: InstructionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Recording length (s); the loop runs `floor(duration / Δ_T)` periods.
    pub duration: f64,
    /// Interpolated set-points per control period.
    pub substeps: usize,
    /// Ground-truth distance below which the run aborts with a collision.
    #[serde(default = "default_contact_radius")]
    pub contact_radius: f64,
}

fn default_contact_radius() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub repetitions: usize,
    /// Run `i` uses seed `base_seed + i`.
    pub base_seed: u64,
}

impl RunConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64)
            .map(|i| self.base_seed + i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialRig {
    pub position: Vector3<f64>,
    #[serde(default)]
    pub velocity: Vector3<f64>,
    /// The camera starts level, looking at this point.
    pub look_at: Vector3<f64>,
    pub intrinsics: IntrinsicState,
    /// Half-range of a uniform per-run offset of the start position.
    #[serde(default)]
    pub position_jitter: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub camera: CameraSensorSpec,
    pub constraints: ConstraintSet,
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    pub sensor: SensorModel,
    #[serde(default)]
    pub estimation: EstimationConfig,
    pub targets: Vec<ScriptedTarget>,
    pub sequences: Vec<Sequence>,
    pub runs: RunConfig,
    pub initial_rig: InitialRig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldIssue {
    pub path: String,
    pub message: String,
}

impl FieldIssue {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<FieldIssue>),
}

fn push_prefixed(out: &mut Vec<FieldIssue>, prefix: &str, errs: Vec<(String, String)>) {
    out.extend(
        errs.into_iter()
            .map(|(f, m)| FieldIssue::new(format!("{prefix}.{f}"), m)),
    );
}

impl ScenarioConfig {
    /// Every violation found, with its field path.
    pub fn validation_issues(&self) -> Vec<FieldIssue> {
        let mut out = Vec::new();
        if let Err(e) = self.camera.validate() {
            out.push(FieldIssue::new("camera", e.to_string()));
        }
        push_prefixed(
            &mut out,
            "constraints",
            self.constraints.validation_errors(),
        );
        push_prefixed(&mut out, "solver", self.solver.validation_errors());
        push_prefixed(&mut out, "sensor", self.sensor.validation_errors());
        push_prefixed(&mut out, "estimation", self.estimation.validation_errors());

        let sim = &self.simulation;
        if !(sim.duration >= 0.0 && sim.duration.is_finite()) {
            out.push(FieldIssue::new(
                "simulation.duration",
                "must be finite and nonnegative",
            ));
        }
        if sim.substeps == 0 {
            out.push(FieldIssue::new("simulation.substeps", "must be at least 1"));
        }
        if !(sim.contact_radius >= 0.0) {
            out.push(FieldIssue::new(
                "simulation.contact_radius",
                "must be nonnegative",
            ));
        }
        if self.runs.repetitions == 0 {
            out.push(FieldIssue::new("runs.repetitions", "must be at least 1"));
        }

        let init = &self.initial_rig;
        if let Err(e) = init.intrinsics.validate() {
            out.push(FieldIssue::new("initial_rig.intrinsics", e.to_string()));
        }
        let forward = init.look_at - init.position;
        if forward.norm() < 1e-9 || forward.cross(&Vector3::z()).norm() < 1e-9 * forward.norm() {
            out.push(FieldIssue::new(
                "initial_rig.look_at",
                "must differ from the position and not be straight above or below it",
            ));
        }
        if init.position_jitter.iter().any(|v| !(*v >= 0.0)) {
            out.push(FieldIssue::new(
                "initial_rig.position_jitter",
                "must be nonnegative",
            ));
        }

        let mut ids = HashSet::new();
        for (i, t) in self.targets.iter().enumerate() {
            let p = format!("targets[{i}]");
            if !ids.insert(t.id.as_str()) {
                out.push(FieldIssue::new(
                    format!("{p}.id"),
                    format!("duplicate id '{}'", t.id),
                ));
            }
            push_prefixed(&mut out, &format!("{p}.meta"), t.meta.validation_errors());
            let w = &t.trajectory.waypoints;
            if w.is_empty() {
                out.push(FieldIssue::new(
                    format!("{p}.trajectory.waypoints"),
                    "must be nonempty",
                ));
            }
            if w.windows(2).any(|p| !(p[1].t > p[0].t)) {
                out.push(FieldIssue::new(
                    format!("{p}.trajectory.waypoints"),
                    "waypoint times must be strictly increasing",
                ));
            }
            if t.position_jitter.iter().any(|v| !(*v >= 0.0)) {
                out.push(FieldIssue::new(
                    format!("{p}.position_jitter"),
                    "must be nonnegative",
                ));
            }
        }

        if self.sequences.is_empty() {
            out.push(FieldIssue::new(
                "sequences",
                "at least one sequence is required",
            ));
        } else if self.sequences[0].start != 0.0 {
            out.push(FieldIssue::new(
                "sequences[0].start",
                "the first sequence must start at 0",
            ));
        }
        for (i, w) in self.sequences.windows(2).enumerate() {
            if !(w[1].start > w[0].start) {
                out.push(FieldIssue::new(
                    format!("sequences[{}].start", i + 1),
                    "sequence start times must be strictly increasing",
                ));
            }
        }
        for (i, s) in self.sequences.iter().enumerate() {
            self.instruction_issues(
                &s.instructions,
                &format!("sequences[{i}].instructions"),
                &mut out,
            );
        }
        out
    }

    fn target_index(&self, id: &str) -> Option<usize> {
        self.targets.iter().position(|t| t.id == id)
    }

    fn check_target(&self, id: &str, path: String, out: &mut Vec<FieldIssue>) -> Option<usize> {
        let idx = self.target_index(id);
        match idx {
            None => out.push(FieldIssue::new(path, format!("unknown target id '{id}'"))),
            Some(i) if self.targets[i].is_obstacle => out.push(FieldIssue::new(
                path,
                format!("'{id}' is an obstacle, not a filmed target"),
            )),
            _ => {}
        }
        idx
    }

    fn instruction_issues(&self, spec: &InstructionSpec, p: &str, out: &mut Vec<FieldIssue>) {
        if let Some(dof) = &spec.dof {
            for (name, d) in [("near", &dof.near), ("far", &dof.far)] {
                let path = format!("{p}.dof.{name}");
                match d {
                    DistanceSpec::Absolute(v) => {
                        if !(*v > 0.0 && v.is_finite()) {
                            out.push(FieldIssue::new(path, "must be a positive distance"));
                        }
                    }
                    DistanceSpec::Relative { target, offset } => {
                        self.check_target(target, format!("{path}.target"), out);
                        offset.issues(&format!("{path}.offset"), out);
                    }
                    DistanceSpec::Infinite => {
                        if name == "near" {
                            out.push(FieldIssue::new(
                                path,
                                "the near distance cannot be infinite",
                            ));
                        }
                    }
                }
            }
            for (name, w) in [("w_near", dof.w_near), ("w_far", dof.w_far)] {
                if !(w >= 0.0) {
                    out.push(FieldIssue::new(
                        format!("{p}.dof.{name}"),
                        "must be nonnegative",
                    ));
                }
            }
        }
        for (i, c) in spec.composition.iter().enumerate() {
            let cp = format!("{p}.composition[{i}]");
            if let Some(t) = self.check_target(&c.target, format!("{cp}.target"), out) {
                if !self.targets[t].anchors.contains_key(&c.anchor) {
                    out.push(FieldIssue::new(
                        format!("{cp}.anchor"),
                        format!("target '{}' has no anchor '{}'", c.target, c.anchor),
                    ));
                }
            }
            if c.weight.iter().any(|w| !(*w >= 0.0)) {
                out.push(FieldIssue::new(
                    format!("{cp}.weight"),
                    "must be nonnegative",
                ));
            }
            if c.pixel.iter().any(|v| !v.is_finite()) {
                out.push(FieldIssue::new(format!("{cp}.pixel"), "must be finite"));
            }
        }
        for (i, q) in spec.pose.iter().enumerate() {
            let qp = format!("{p}.pose[{i}]");
            self.check_target(&q.target, format!("{qp}.target"), out);
            if !so3::is_rotation(&q.relative_rotation, 1e-6) {
                out.push(FieldIssue::new(
                    format!("{qp}.relative_rotation"),
                    "must be a rotation matrix",
                ));
            }
            if !(q.distance >= 0.0) {
                out.push(FieldIssue::new(
                    format!("{qp}.distance"),
                    "must be nonnegative",
                ));
            }
            if !(q.w_distance >= 0.0 && q.w_rotation >= 0.0) {
                out.push(FieldIssue::new(
                    qp.to_string(),
                    "weights must be nonnegative",
                ));
            }
        }
        if let Some(f) = &spec.focal {
            f.focal_length
                .issues(&format!("{p}.focal.focal_length"), out);
            if !(f.weight >= 0.0) {
                out.push(FieldIssue::new(
                    format!("{p}.focal.weight"),
                    "must be nonnegative",
                ));
            }
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let issues = self.validation_issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(issues))
        }
    }

    /// Index of the last sequence with `start ≤ t`.
    pub fn active_sequence(&self, t: f64) -> usize {
        self.sequences
            .iter()
            .rposition(|s| s.start <= t)
            .unwrap_or(0)
    }

    /// Whether the focal-length set-point is ramping at `t`.
    pub fn focal_ramp_active(&self, t: f64) -> bool {
        let s = &self.sequences[self.active_sequence(t)];
        s.instructions
            .focal
            .as_ref()
            .is_some_and(|f| f.focal_length.is_ramping(t - s.start))
    }

    /// Instructions in force at `t`. `distances[i]` is the current
    /// camera–target distance of target `i` (NaN when unknown); a relative
    /// DoF distance against an unknown target drops that DoF term.
    pub fn instructions_at(&self, t: f64, distances: &[f64]) -> Instructions {
        let seq = &self.sequences[self.active_sequence(t)];
        let tr = t - seq.start;
        let spec = &seq.instructions;
        let mut out = Instructions::default();

        if let Some(dof) = &spec.dof {
            let resolve = |d: &DistanceSpec| -> Option<FarDistance> {
                match d {
                    DistanceSpec::Absolute(v) => Some(FarDistance::Finite(*v)),
                    DistanceSpec::Infinite => Some(FarDistance::Infinite),
                    DistanceSpec::Relative { target, offset } => {
                        let base = self.target_index(target).map_or(f64::NAN, |i| distances[i]);
                        let v = base + offset.value(tr);
                        v.is_finite().then_some(FarDistance::Finite(v))
                    }
                }
            };
            let near = resolve(&dof.near);
            let far = resolve(&dof.far);
            out.dof = DofObjective {
                near: near.map_or(0.0, |n| n.as_f64()),
                far: far.unwrap_or(FarDistance::Infinite),
                w_near: if near.is_some() { dof.w_near } else { 0.0 },
                w_far: if far.is_some() { dof.w_far } else { 0.0 },
            };
        }
        out.composition = spec
            .composition
            .iter()
            .filter_map(|c| {
                let i = self.target_index(&c.target)?;
                Some(CompositionTarget {
                    target: i,
                    offset: *self.targets[i].anchors.get(&c.anchor)?,
                    desired: c.pixel,
                    weight: c.weight,
                })
            })
            .collect();
        out.pose = spec
            .pose
            .iter()
            .filter_map(|q| {
                Some(PoseTarget {
                    target: self.target_index(&q.target)?,
                    distance: q.distance,
                    // Compared with R_dtᵀ inside the cost.
                    rotation: q.relative_rotation.transpose(),
                    w_distance: q.w_distance,
                    w_rotation: q.w_rotation,
                })
            })
            .collect();
        if let Some(f) = &spec.focal {
            out.focal = FocalObjective {
                focal_length: f.focal_length.value(tr),
                weight: f.weight,
            };
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::from_json(&text)
}

/// Instructions of the sequence active at `t`, with schedules resolved.
pub fn active_instructions(config: &ScenarioConfig, t: f64, distances: &[f64]) -> Instructions {
    config.instructions_at(t, distances)
}
