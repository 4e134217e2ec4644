//! Run logs as fixed-schema tables, summary metrics and file emission.
//!
//! Every metric is computed from the table, so `summarize` over CSV files on
//! disk reproduces the numbers written at the end of a run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::ScenarioConfig;
use crate::sim::{anchor_labels, RunLog, StepRecord};

/// Rows averaged by the steady-state pixel error.
pub const STEADY_STATE_ROWS: usize = 10;
/// Ramp rows skipped before the dolly-zoom ratio spread and the near-distance
/// error are measured.
pub const RAMP_TRANSIENT_ROWS: usize = 10;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Column roles needed by the metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetColumns {
    pub id: String,
    pub is_obstacle: bool,
}

/// One run as a numeric table. Booleans are 0/1, missing values NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTable {
    pub seed: u64,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// The column set of a scenario; depends on the config only.
pub fn columns(config: &ScenarioConfig) -> Vec<String> {
    let mut h: Vec<String> = [
        "step",
        "time",
        "sequence",
        "drone_x",
        "drone_y",
        "drone_z",
        "drone_vx",
        "drone_vy",
        "drone_vz",
        "gimbal_roll",
        "gimbal_pitch",
        "gimbal_yaw",
        "focal_length",
        "focus_distance",
        "aperture",
        "dof_near",
        "dof_far",
        "desired_near",
        "desired_far",
        "desired_focal",
        "focal_ramp",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for t in &config.targets {
        let id = &t.id;
        for suffix in [
            "x",
            "y",
            "z",
            "est_x",
            "est_y",
            "est_z",
            "cov_trace",
            "visible",
            "distance",
            "box_left",
            "box_top",
            "box_right",
            "box_bottom",
        ] {
            h.push(format!("{id}_{suffix}"));
        }
    }
    for (_, t, a) in anchor_labels(config) {
        for suffix in ["u", "v", "desired_u", "desired_v", "error"] {
            h.push(format!("{t}.{a}_{suffix}"));
        }
    }
    for prefix in ["exec", "plan"] {
        for term in ["j_dof", "j_im", "j_p", "j_f", "total"] {
            h.push(format!("{prefix}_{term}"));
        }
    }
    for s in [
        "plan_iterations",
        "plan_converged",
        "plan_feasible",
        "plan_fallback",
        "active_occlusions",
        "min_state_residual",
        "min_collision_residual",
        "min_occlusion_residual",
        "min_distance_residual",
        "contact",
    ] {
        h.push(s.into());
    }
    h
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn row(config: &ScenarioConfig, r: &StepRecord) -> Vec<f64> {
    let d = &r.rig.drone;
    let angles = config.constraints.gimbal_angles(&d.orientation);
    let mut v = vec![
        r.step as f64,
        r.time,
        r.sequence as f64,
        d.position.x,
        d.position.y,
        d.position.z,
        d.velocity.x,
        d.velocity.y,
        d.velocity.z,
        angles.x,
        angles.y,
        angles.z,
        r.rig.intrinsics.focal_length,
        r.rig.intrinsics.focus_distance,
        r.rig.intrinsics.aperture,
        r.near,
        r.far,
        r.desired_near,
        r.desired_far,
        r.desired_focal,
        flag(r.focal_ramp),
    ];
    for t in &r.targets {
        v.extend(t.truth.iter());
        v.extend(t.estimate.iter());
        v.push(t.covariance_trace);
        v.push(flag(t.visible));
        v.push(t.min_distance);
        match &t.bbox {
            Some(b) => v.extend([
                b.left_top.x,
                b.left_top.y,
                b.right_bottom.x,
                b.right_bottom.y,
            ]),
            None => v.extend([f64::NAN; 4]),
        }
    }
    for a in &r.anchors {
        let px = a.pixel.map_or([f64::NAN; 2], |p| [p.x, p.y]);
        let des = a.desired.map_or([f64::NAN; 2], |p| [p.x, p.y]);
        let err = match (a.pixel, a.desired) {
            (Some(p), Some(q)) => (p - q).norm(),
            _ => f64::NAN,
        };
        v.extend(px);
        v.extend(des);
        v.push(err);
    }
    let e = &r.executed_cost;
    v.extend([e.j_dof, e.j_im, e.j_p, e.j_f, e.total]);
    match &r.plan {
        Some(p) => {
            v.extend([
                p.cost.j_dof,
                p.cost.j_im,
                p.cost.j_p,
                p.cost.j_f,
                p.cost.total,
            ]);
            v.extend([
                p.iterations as f64,
                flag(p.converged),
                flag(p.feasible),
                flag(p.fallback),
                p.active_occlusions as f64,
                p.min_state_residual,
                p.min_collision_residual,
                p.min_occlusion_residual,
            ]);
        }
        None => v.extend([f64::NAN; 13]),
    }
    v.push(r.distance_residual);
    v.push(flag(r.contact));
    v
}

impl RunTable {
    pub fn from_log(config: &ScenarioConfig, log: &RunLog) -> Self {
        let header = columns(config);
        let rows: Vec<Vec<f64>> = log.records.iter().map(|r| row(config, r)).collect();
        debug_assert!(rows.iter().all(|r| r.len() == header.len()));
        Self {
            seed: log.seed,
            header,
            rows,
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), IoError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(&self.header).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn read_csv(path: &Path, seed: u64) -> Result<Self, IoError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .map(String::from)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let values: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            rows.push(values.map_err(|e| IoError::Format {
                path: path.display().to_string(),
                message: e.to_string(),
            })?);
        }
        Ok(Self { seed, header, rows })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Acceptance metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub rows: usize,
    /// Mean over the last rows of the worst composed-anchor pixel error.
    pub steady_state_pixel_error: f64,
    /// Minimum drone–target distance along the executed path.
    pub min_distance: f64,
    /// Minimum drone distance to obstacles only.
    pub min_obstacle_distance: f64,
    /// Worst absolute near-distance error after the transient: over the focal
    /// ramp past its first rows, or over the last rows when nothing ramps.
    pub dof_near_error: f64,
    /// Largest relative deviation of distance/focal length from its mean
    /// while the focal ramp is active, after the transient.
    pub dolly_ratio_spread: f64,
    pub collided: bool,
    pub filmed_visible_at_end: bool,
    /// Rows where some obstacle box overlaps some filmed-target box.
    pub overlapping_box_rows: usize,
}

fn finite_mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v
        .filter(|x| x.is_finite())
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn fmin(v: impl Iterator<Item = f64>) -> f64 {
    let m = v.filter(|x| !x.is_nan()).fold(f64::INFINITY, f64::min);
    if m.is_finite() {
        m
    } else {
        f64::NAN
    }
}

fn fmax(v: impl Iterator<Item = f64>) -> f64 {
    -fmin(v.map(|x| -x))
}

fn boxes_overlap(a: [f64; 4], b: [f64; 4]) -> bool {
    a.iter().chain(&b).all(|v| v.is_finite())
        && a[0] < b[2]
        && b[0] < a[2]
        && a[1] < b[3]
        && b[1] < a[3]
}

/// Computes the run metrics from a table.
pub fn run_metrics(
    table: &RunTable,
    targets: &[TargetColumns],
    safety_distance: f64,
) -> RunMetrics {
    let col = |n: &str| {
        table
            .column(n)
            .unwrap_or_else(|| vec![f64::NAN; table.rows.len()])
    };
    let error_cols: Vec<usize> = table
        .header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.ends_with("_error"))
        .map(|(i, _)| i)
        .collect();
    let worst: Vec<f64> = table
        .rows
        .iter()
        .map(|r| fmax(error_cols.iter().map(|&i| r[i])))
        .collect();
    let tail = worst.len().saturating_sub(STEADY_STATE_ROWS);
    let steady_state_pixel_error = finite_mean(worst[tail..].iter().copied());

    let min_distance = fmin(col("min_distance_residual").into_iter()) + safety_distance;
    let min_obstacle_distance = fmin(
        targets
            .iter()
            .filter(|t| t.is_obstacle)
            .flat_map(|t| col(&format!("{}_distance", t.id))),
    );

    let ramp = col("focal_ramp");
    let ramp_rows: Vec<usize> = (0..table.rows.len())
        .filter(|&i| ramp[i] == 1.0)
        .skip(RAMP_TRANSIENT_ROWS)
        .collect();
    let settled_rows: Vec<usize> = if ramp.contains(&1.0) {
        ramp_rows.clone()
    } else {
        (tail..table.rows.len()).collect()
    };
    let near = col("dof_near");
    let desired = col("desired_near");
    let dof_near_error = fmax(settled_rows.iter().map(|&i| (near[i] - desired[i]).abs()));

    let filmed: Vec<&TargetColumns> = targets.iter().filter(|t| !t.is_obstacle).collect();
    let dolly_ratio_spread = match filmed.first() {
        Some(t) => {
            let dist = col(&format!("{}_distance", t.id));
            let f = col("focal_length");
            let ratios: Vec<f64> = ramp_rows.iter().map(|&i| dist[i] / f[i]).collect();
            let mean = finite_mean(ratios.iter().copied());
            ratios
                .iter()
                .map(|r| (r / mean - 1.0).abs())
                .fold(f64::NAN, f64::max)
        }
        None => f64::NAN,
    };

    let collided = col("contact").contains(&1.0);
    let filmed_visible_at_end = !table.rows.is_empty()
        && filmed
            .iter()
            .all(|t| col(&format!("{}_visible", t.id)).last() == Some(&1.0));

    let boxes = |id: &str| -> Vec<[f64; 4]> {
        let c: Vec<Vec<f64>> = ["box_left", "box_top", "box_right", "box_bottom"]
            .iter()
            .map(|s| col(&format!("{id}_{s}")))
            .collect();
        (0..table.rows.len())
            .map(|i| [c[0][i], c[1][i], c[2][i], c[3][i]])
            .collect()
    };
    let obstacle_boxes: Vec<Vec<[f64; 4]>> = targets
        .iter()
        .filter(|t| t.is_obstacle)
        .map(|t| boxes(&t.id))
        .collect();
    let filmed_boxes: Vec<Vec<[f64; 4]>> = filmed.iter().map(|t| boxes(&t.id)).collect();
    let overlapping_box_rows = (0..table.rows.len())
        .filter(|&i| {
            obstacle_boxes
                .iter()
                .any(|o| filmed_boxes.iter().any(|f| boxes_overlap(o[i], f[i])))
        })
        .count();

    RunMetrics {
        seed: table.seed,
        rows: table.rows.len(),
        steady_state_pixel_error,
        min_distance,
        min_obstacle_distance,
        dof_near_error,
        dolly_ratio_spread,
        collided,
        filmed_visible_at_end,
        overlapping_box_rows,
    }
}

pub fn target_columns(config: &ScenarioConfig) -> Vec<TargetColumns> {
    config
        .targets
        .iter()
        .map(|t| TargetColumns {
            id: t.id.clone(),
            is_obstacle: t.is_obstacle,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        // No finite sample: no location, and nothing disperses.
        return MeanStd {
            mean: f64::NAN,
            std: 0.0,
        };
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub safety_distance: f64,
    pub runs: Vec<RunMetrics>,
    pub steady_state_pixel_error: MeanStd,
    pub min_distance: MeanStd,
    pub dof_near_error: MeanStd,
    pub dolly_ratio_spread: MeanStd,
    pub collisions: usize,
    pub visible_at_end: usize,
}

pub fn summarize_tables(config: &ScenarioConfig, tables: &[RunTable]) -> Summary {
    let targets = target_columns(config);
    let runs: Vec<RunMetrics> = tables
        .iter()
        .map(|t| run_metrics(t, &targets, config.constraints.safety_distance))
        .collect();
    let agg = |f: fn(&RunMetrics) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
    Summary {
        scenario: config.name.clone(),
        safety_distance: config.constraints.safety_distance,
        steady_state_pixel_error: agg(|m| m.steady_state_pixel_error),
        min_distance: agg(|m| m.min_distance),
        dof_near_error: agg(|m| m.dof_near_error),
        dolly_ratio_spread: agg(|m| m.dolly_ratio_spread),
        collisions: runs.iter().filter(|m| m.collided).count(),
        visible_at_end: runs.iter().filter(|m| m.filmed_visible_at_end).count(),
        runs,
    }
}

/// Per-row mean and standard deviation across runs, aligned by row index.
pub fn aggregate(tables: &[RunTable]) -> RunTable {
    let Some(first) = tables.first() else {
        return RunTable {
            seed: 0,
            header: Vec::new(),
            rows: Vec::new(),
        };
    };
    let mut header = vec!["row".to_string(), "runs".to_string()];
    for h in &first.header {
        header.push(format!("{h}_mean"));
        header.push(format!("{h}_std"));
    }
    let len = tables.iter().map(|t| t.rows.len()).max().unwrap_or(0);
    let rows = (0..len)
        .map(|i| {
            let present: Vec<&Vec<f64>> = tables.iter().filter_map(|t| t.rows.get(i)).collect();
            let mut out = vec![i as f64, present.len() as f64];
            for c in 0..first.header.len() {
                let ms = mean_std(&present.iter().map(|r| r[c]).collect::<Vec<_>>());
                out.push(ms.mean);
                out.push(ms.std);
            }
            out
        })
        .collect();
    RunTable {
        seed: 0,
        header,
        rows,
    }
}

pub const SCENARIO_FILE: &str = "scenario.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub fn run_file_name(seed: u64) -> String {
    format!("run_{seed}.csv")
}

/// Writes the config copy, one CSV per run, the summary and the aggregate.
pub fn emit_outputs(
    config: &ScenarioConfig,
    logs: &[RunLog],
    out_dir: &Path,
) -> Result<Summary, IoError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let scenario_path = out_dir.join(SCENARIO_FILE);
    fs::write(&scenario_path, config.to_json()).map_err(io_err(&scenario_path))?;
    let tables: Vec<RunTable> = logs.iter().map(|l| RunTable::from_log(config, l)).collect();
    for t in &tables {
        t.write_csv(&out_dir.join(run_file_name(t.seed)))?;
    }
    write_summary(config, &tables, out_dir)
}

fn write_summary(
    config: &ScenarioConfig,
    tables: &[RunTable],
    out_dir: &Path,
) -> Result<Summary, IoError> {
    let summary = summarize_tables(config, tables);
    let path = out_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    if !tables.is_empty() {
        aggregate(tables).write_csv(&out_dir.join(AGGREGATE_FILE))?;
    }
    Ok(summary)
}

/// Run CSV files of a directory, ordered by seed.
pub fn run_files(dir: &Path) -> Result<Vec<(u64, PathBuf)>, IoError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(seed) = name
            .strip_prefix("run_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((seed, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Recomputes the summary and aggregate of an output directory.
pub fn summarize_dir(dir: &Path) -> Result<Summary, IoError> {
    let scenario_path = dir.join(SCENARIO_FILE);
    let config = crate::scenario::load_scenario(&scenario_path).map_err(|e| IoError::Format {
        path: scenario_path.display().to_string(),
        message: e.to_string(),
    })?;
    let tables = run_files(dir)?
        .into_iter()
        .map(|(seed, p)| RunTable::read_csv(&p, seed))
        .collect::<Result<Vec<_>, _>>()?;
    write_summary(&config, &tables, dir)
}
