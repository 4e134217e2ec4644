//! Built-in example scenarios.
//!
//! Desired pixels and relative rotations are derived from one nominal camera
//! pose per shot, so that every instruction term can be met simultaneously.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::constraints::{ConstraintSet, Interval};
use crate::estimation::{EstimationConfig, TargetMeta, TargetNature};
use crate::kinematics::{CameraRig, DroneState};
use crate::mpc::SolverConfig;
use crate::objectives::pixel_of;
use crate::optics::{CameraSensorSpec, IntrinsicState};
use crate::scenario::{
    CompositionSpec, DistanceSpec, DofSpec, FocalSpec, InitialRig, InstructionSpec, PoseSpec,
    RunConfig, ScenarioConfig, Schedule, Sequence, SimulationConfig,
};
use crate::sim::{Interpolation, ScriptedTarget, SensorModel, Trajectory, Waypoint};
use crate::so3;

pub const NAMES: [&str; 5] = [
    "e1_plane",
    "e3_dolly_zoom",
    "e4_occlusion",
    "e4_collision",
    "e6_rule_of_thirds",
];

pub fn by_name(name: &str) -> Option<ScenarioConfig> {
    match name {
        "e1_plane" => Some(e1_plane()),
        "e3_dolly_zoom" => Some(e3_dolly_zoom()),
        "e4_occlusion" => Some(e4_occlusion()),
        "e4_collision" => Some(e4_collision()),
        "e6_rule_of_thirds" => Some(e6_rule_of_thirds()),
        _ => None,
    }
}

pub fn all() -> Vec<ScenarioConfig> {
    NAMES
        .iter()
        .map(|n| by_name(n).expect("known preset"))
        .collect()
}

const ACTOR_HEIGHT: f64 = 1.8;
/// Camera distance and height that put the nose and hips on the upper and
/// lower thirds of a level 35 mm frame.
const PORTRAIT_DISTANCE: f64 = 5.5;
const PORTRAIT_HEIGHT: f64 = 1.35;

fn actor(position: Vector3<f64>) -> ScriptedTarget {
    let mut anchors = BTreeMap::new();
    anchors.insert("nose".to_string(), Vector3::new(0.0, 0.0, -0.1));
    anchors.insert("hips".to_string(), Vector3::new(0.0, 0.0, -0.8));
    ScriptedTarget {
        id: "actor".into(),
        meta: TargetMeta {
            nature: TargetNature::Person,
            height: ACTOR_HEIGHT,
            width: 0.5,
            preliminary_rotation: Matrix3::identity(),
        },
        anchors,
        is_obstacle: false,
        trajectory: Trajectory::stationary(position),
        position_jitter: Vector3::zeros(),
    }
}

fn cactus(id: &str, ground: Vector2<f64>, width: f64, height: f64) -> ScriptedTarget {
    ScriptedTarget {
        id: id.into(),
        meta: TargetMeta {
            nature: TargetNature::Object,
            height,
            width,
            preliminary_rotation: Matrix3::identity(),
        },
        anchors: BTreeMap::new(),
        is_obstacle: true,
        trajectory: Trajectory::stationary(Vector3::new(ground.x, ground.y, height / 2.0)),
        position_jitter: Vector3::zeros(),
    }
}

fn rig(position: Vector3<f64>, orientation: Matrix3<f64>, focal_length: f64) -> CameraRig {
    CameraRig {
        drone: DroneState::at_rest(position, orientation),
        intrinsics: IntrinsicState::new(focal_length, 5.0, 2.8),
        time_index: 0,
    }
}

/// Nominal shot: a camera pose plus the composition and relative rotation it
/// produces for the listed anchors.
struct Shot {
    camera: CameraRig,
    pixels: Vec<(String, Vector2<f64>)>,
    relative_rotation: Matrix3<f64>,
}

fn shot(
    camera: CameraRig,
    target: &ScriptedTarget,
    target_rotation: &Matrix3<f64>,
    spec: &CameraSensorSpec,
) -> Shot {
    let base = target.trajectory.waypoints[0].position;
    let pixels = target
        .anchors
        .iter()
        .map(|(name, offset)| {
            let world = base + target_rotation * offset;
            let px = pixel_of(&camera, &world, spec).expect("anchor in front of the camera");
            (name.clone(), px.map(round_px))
        })
        .collect();
    Shot {
        relative_rotation: camera.drone.orientation.transpose() * target_rotation,
        camera,
        pixels,
    }
}

fn round_px(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn round_matrix(m: Matrix3<f64>) -> Matrix3<f64> {
    m.map(|v| (v * 1e12).round() / 1e12)
}

fn composition(shot: &Shot, target: &str, weight: [f64; 2]) -> Vec<CompositionSpec> {
    shot.pixels
        .iter()
        .map(|(anchor, px)| CompositionSpec {
            target: target.into(),
            anchor: anchor.clone(),
            pixel: *px,
            weight: Vector2::new(weight[0], weight[1]),
        })
        .collect()
}

/// Level camera in front of a target at the origin facing +x.
fn front_camera(distance: f64, yaw: f64) -> CameraRig {
    let position = Vector3::new(distance, 0.0, PORTRAIT_HEIGHT);
    let forward = Vector3::new(-1.0, 0.0, 0.0);
    let turned = so3::exp(&Vector3::new(0.0, 0.0, yaw)) * forward;
    rig(position, so3::look_rotation(&turned, &Vector3::z()), 35.0)
}

/// Yaw that moves a target on the optical axis to the left third.
fn left_third_yaw(spec: &CameraSensorSpec) -> f64 {
    let beta_f = spec.beta_x() * 35.0;
    ((spec.image_width / 3.0 - spec.principal_u) / beta_f).atan()
}

fn base(name: &str, description: &str, duration: f64, repetitions: usize) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        description: description.into(),
        camera: CameraSensorSpec::simulation_default(),
        constraints: ConstraintSet::default(),
        solver: SolverConfig::default(),
        simulation: SimulationConfig {
            duration,
            substeps: 10,
            contact_radius: 0.5,
        },
        sensor: SensorModel::default(),
        estimation: EstimationConfig::default(),
        targets: Vec::new(),
        sequences: Vec::new(),
        runs: RunConfig {
            repetitions,
            base_seed: 1,
        },
        initial_rig: InitialRig {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            look_at: Vector3::x(),
            intrinsics: IntrinsicState::new(35.0, 5.0, 2.8),
            position_jitter: Vector3::zeros(),
        },
    }
}

fn relative_near(offset: f64) -> DistanceSpec {
    DistanceSpec::Relative {
        target: "actor".into(),
        offset: Schedule::Constant(offset),
    }
}

/// A plane flying a smooth course, filmed from four perspectives.
pub fn e1_plane() -> ScenarioConfig {
    let mut c = base(
        "e1_plane",
        "Plane on a smooth course filmed from four perspectives with changing vertical composition.",
        40.0,
        15,
    );
    let mut anchors = BTreeMap::new();
    anchors.insert("top".to_string(), Vector3::new(0.0, 0.0, 1.5));
    anchors.insert("bottom".to_string(), Vector3::new(0.0, 0.0, -1.5));
    let plane = ScriptedTarget {
        id: "plane".into(),
        meta: TargetMeta {
            nature: TargetNature::Vehicle,
            height: 3.0,
            width: 12.0,
            preliminary_rotation: Matrix3::identity(),
        },
        anchors,
        is_obstacle: false,
        trajectory: Trajectory {
            interpolation: Interpolation::Smooth,
            waypoints: [
                // Speeds up to about 10 m/s; the course runs past the end of
                // the shot so the plane never brakes on camera.
                (0.0, [0.0, 0.0, 20.0]),
                (10.0, [17.5, 3.0, 21.0]),
                (20.0, [67.5, 6.0, 23.0]),
                (30.0, [145.0, 0.0, 23.0]),
                (40.0, [240.0, -8.0, 21.0]),
                (50.0, [340.0, -10.0, 20.0]),
            ]
            .iter()
            .map(|(t, p)| Waypoint {
                t: *t,
                position: Vector3::from(*p),
            })
            .collect(),
        },
        position_jitter: Vector3::zeros(),
    };
    let spec = c.camera.clone();
    // Perspectives in the plane's body frame (x forward, y left, z up).
    // (name, camera offset in the body frame, aim tilt, w_im, w_R)
    type Perspective = (&'static str, [f64; 3], f64, [f64; 2], f64);
    let perspectives: [Perspective; 4] = [
        ("chase", [-20.0, 0.0, 4.0], 0.0, [1.25, 0.5], 100.0),
        ("side", [0.0, 20.0, 2.0], 0.04, [2.0, 0.5], 2000.0),
        ("high angle", [-8.0, 6.0, 16.0], -0.04, [1.5, 1.0], 200.0),
        ("quarter", [-14.0, -14.0, 3.0], 0.02, [1.5, 0.5], 350.0),
    ];
    for (i, (name, offset, tilt, w_im, w_r)) in perspectives.iter().enumerate() {
        let o = Vector3::from(*offset);
        // Aim slightly above or below the plane to vary the vertical third.
        let aim = -o + Vector3::new(0.0, 0.0, tilt * o.norm());
        let camera = rig(o, so3::look_rotation(&aim, &Vector3::z()), 35.0);
        let mut local = plane.clone();
        local.trajectory = Trajectory::stationary(Vector3::zeros());
        let s = shot(camera, &local, &Matrix3::identity(), &spec);
        c.sequences.push(Sequence {
            start: 10.0 * i as f64,
            name: (*name).into(),
            instructions: InstructionSpec {
                dof: None,
                composition: composition(&s, "plane", *w_im),
                pose: vec![PoseSpec {
                    target: "plane".into(),
                    distance: (o.norm() * 1e6).round() / 1e6,
                    relative_rotation: round_matrix(s.relative_rotation),
                    w_distance: 20.0,
                    w_rotation: *w_r,
                }],
                focal: None,
            },
        });
    }
    c.targets = vec![plane];
    c.constraints.state_bounds.position = Interval::symmetric(500.0);
    // The shots look between 90° right of and 45° left of the heading; a
    // reference halfway keeps every gimbal yaw clear of the Euler singularity.
    let mid = (-22.5f64).to_radians();
    c.constraints.state_bounds.rotation = Interval::symmetric(1.45);
    c.constraints.rotation_reference =
        so3::look_rotation(&Vector3::new(mid.cos(), mid.sin(), 0.0), &Vector3::z());
    c.initial_rig.position = Vector3::new(-20.0, 0.0, 24.0);
    c.initial_rig.look_at = Vector3::new(0.0, 0.0, 20.0);
    c.initial_rig.position_jitter = Vector3::new(2.0, 2.0, 1.0);
    c
}

/// Cowboy shot followed by a dolly zoom from 35 to 450 mm with a scripted
/// depth of field.
pub fn e3_dolly_zoom() -> ScenarioConfig {
    let seq1 = 10.0;
    let ramp = 70.0;
    let mut c = base(
        "e3_dolly_zoom",
        "Cowboy shot of a standing actor, then a dolly zoom from 35 to 450 mm while the depth of field follows a schedule.",
        seq1 + ramp + 2.0,
        15,
    );
    let spec = c.camera.clone();
    let a = actor(Vector3::new(0.0, 0.0, ACTOR_HEIGHT));
    let s = shot(
        front_camera(PORTRAIT_DISTANCE, 0.0),
        &a,
        &Matrix3::identity(),
        &spec,
    );
    let rotation = round_matrix(s.relative_rotation);
    let pose = |w_rotation| PoseSpec {
        target: "actor".into(),
        distance: PORTRAIT_DISTANCE,
        relative_rotation: rotation,
        w_distance: 0.0,
        w_rotation,
    };
    c.sequences = vec![
        Sequence {
            start: 0.0,
            name: "cowboy shot".into(),
            instructions: InstructionSpec {
                dof: Some(DofSpec {
                    near: relative_near(-3.0),
                    far: DistanceSpec::Infinite,
                    w_near: 10.0,
                    w_far: 0.0,
                }),
                composition: composition(&s, "actor", [0.5, 1.0]),
                pose: vec![pose(500.0)],
                focal: Some(FocalSpec {
                    focal_length: Schedule::Constant(35.0),
                    weight: 10.0,
                }),
            },
        },
        Sequence {
            start: seq1,
            name: "dolly zoom".into(),
            instructions: InstructionSpec {
                dof: Some(DofSpec {
                    near: relative_near(-3.0),
                    far: DistanceSpec::Relative {
                        target: "actor".into(),
                        offset: Schedule::Ramp {
                            ramp: vec![[0.0, 5.0], [40.0, 55.0], [55.0, 1.0], [ramp, 1.0]],
                        },
                    },
                    w_near: 10.0,
                    w_far: 10.0,
                }),
                composition: composition(&s, "actor", [0.5, 1.5]),
                pose: vec![pose(500.0)],
                focal: Some(FocalSpec {
                    focal_length: Schedule::Ramp {
                        ramp: vec![[0.0, 35.0], [ramp, 450.0]],
                    },
                    weight: 0.75,
                }),
            },
        },
    ];
    c.targets = vec![
        a,
        cactus("cactus_front", Vector2::new(30.0, -7.0), 0.8, 3.0),
        cactus("cactus_back", Vector2::new(-25.0, 6.0), 0.8, 3.0),
    ];
    c.constraints.state_bounds.position = Interval::symmetric(100.0);
    c.constraints.rotation_reference = s.camera.drone.orientation;
    c.initial_rig.position = Vector3::new(9.0, 0.0, 2.0);
    c.initial_rig.position_jitter = Vector3::new(1.0, 1.0, 0.3);
    c.initial_rig.look_at = Vector3::new(0.0, 0.0, 1.4);
    c
}

/// Rule-of-thirds shot of a static actor with a cactus between the ideal
/// camera pose and the actor.
pub fn e4_occlusion() -> ScenarioConfig {
    let mut c = base(
        "e4_occlusion",
        "Front rule-of-thirds shot with a cactus on the line of sight from the ideal viewpoint.",
        20.0,
        10,
    );
    let spec = c.camera.clone();
    let a = actor(Vector3::new(0.0, 0.0, ACTOR_HEIGHT));
    let camera = front_camera(PORTRAIT_DISTANCE, left_third_yaw(&spec));
    let s = shot(camera, &a, &Matrix3::identity(), &spec);
    let cam = camera.drone.position;
    let between = Vector2::new(cam.x, cam.y) * 0.5;
    let mut obstacle = cactus("cactus", between, 0.6, 2.2);
    obstacle.position_jitter = Vector3::new(0.2, 0.2, 0.0);
    c.sequences = vec![front_shot_sequence(&s)];
    c.targets = vec![a, obstacle];
    c.constraints.occlusion_enabled = true;
    c.constraints.occlusion_margin_px = 10.0;
    c.constraints.state_bounds.rotation = Interval::symmetric(1.0);
    c.constraints.rotation_reference = camera.drone.orientation;
    c.initial_rig.position = Vector3::new(5.5, 3.5, 1.6);
    c.initial_rig.position_jitter = Vector3::new(0.5, 0.5, 0.2);
    c.initial_rig.look_at = Vector3::new(0.0, 0.0, 1.4);
    c
}

/// The same shot with a cactus standing at the ideal viewpoint.
pub fn e4_collision() -> ScenarioConfig {
    let mut c = base(
        "e4_collision",
        "Front rule-of-thirds shot whose ideal viewpoint lies inside a cactus.",
        20.0,
        10,
    );
    let spec = c.camera.clone();
    let a = actor(Vector3::new(0.0, 0.0, ACTOR_HEIGHT));
    let camera = front_camera(PORTRAIT_DISTANCE, left_third_yaw(&spec));
    let s = shot(camera, &a, &Matrix3::identity(), &spec);
    let cam = camera.drone.position;
    let mut obstacle = cactus("cactus", Vector2::new(cam.x, cam.y), 0.8, 2.6);
    obstacle.position_jitter = Vector3::new(0.2, 0.2, 0.0);
    c.sequences = vec![front_shot_sequence(&s)];
    c.targets = vec![a, obstacle];
    c.constraints.state_bounds.rotation = Interval::symmetric(1.0);
    c.constraints.rotation_reference = camera.drone.orientation;
    c.initial_rig.position = Vector3::new(6.5, 3.5, 1.6);
    c.initial_rig.position_jitter = Vector3::new(0.5, 0.5, 0.2);
    c.initial_rig.look_at = Vector3::new(0.0, 0.0, 1.4);
    c
}

fn front_shot_sequence(s: &Shot) -> Sequence {
    Sequence {
        start: 0.0,
        name: "front, rule of thirds".into(),
        instructions: InstructionSpec {
            dof: Some(DofSpec {
                near: relative_near(-3.0),
                far: DistanceSpec::Infinite,
                w_near: 10.0,
                w_far: 0.0,
            }),
            composition: composition(s, "actor", [0.5, 1.0]),
            pose: vec![PoseSpec {
                target: "actor".into(),
                distance: PORTRAIT_DISTANCE,
                relative_rotation: round_matrix(s.relative_rotation),
                w_distance: 0.0,
                w_rotation: 500.0,
            }],
            focal: Some(FocalSpec {
                focal_length: Schedule::Constant(35.0),
                weight: 10.0,
            }),
        },
    }
}

/// Static actor on the left third, noise-free sensing.
pub fn e6_rule_of_thirds() -> ScenarioConfig {
    let mut c = base(
        "e6_rule_of_thirds",
        "Static actor placed on the left vertical third from a nearby start, noise-free sensing.",
        10.0,
        1,
    );
    let spec = c.camera.clone();
    let a = actor(Vector3::new(0.0, 0.0, ACTOR_HEIGHT));
    let camera = front_camera(PORTRAIT_DISTANCE, left_third_yaw(&spec));
    let s = shot(camera, &a, &Matrix3::identity(), &spec);
    c.sequences = vec![front_shot_sequence(&s)];
    c.targets = vec![a];
    c.sensor = SensorModel::noise_free();
    c.constraints.rotation_reference = camera.drone.orientation;
    c.initial_rig.position = camera.drone.position + Vector3::new(0.6, 0.4, 0.15);
    c.initial_rig.look_at = Vector3::new(0.0, 0.0, 1.4);
    c
}
