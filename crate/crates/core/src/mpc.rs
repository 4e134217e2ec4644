//! Receding-horizon optimizer.
//!
//! The decision vector stacks the `N` control inputs, each channel scaled to
//! `[-1, 1]` by its bounds. Input bounds are enforced by projection; state,
//! collision and occlusion constraints enter through an augmented Lagrangian
//! with the PHR penalty
//!
//! ```text
//! ψ(g, λ, ρ) = −λg + ρg²/2   if g ≤ λ/ρ
//!            = −λ²/(2ρ)       otherwise
//! ```
//!
//! Each inner problem is solved by a projected Newton method (Hessian from
//! differences of the adjoint gradient, damped until positive definite on the
//! free variables) with a monotone Armijo arc search, so the merit value never
//! increases while the multipliers are held fixed.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{
    evaluate_constraints, occlusion_records, path_constraints, ConstraintResiduals, ConstraintSet,
    OcclusionRecord, PathConstraint, STATE_CHANNELS,
};
use crate::kinematics::{step, CameraRig, ControlInput, Rollout, INPUT_DIM};
use crate::objectives::{
    backpropagate, stage_gradients, surrogate_horizon_cost, CostBreakdown, Instructions,
    TargetPrediction,
};
use crate::optics::CameraSensorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Horizon length `N` in steps.
    pub horizon: usize,
    /// Sampling time `Δ_T` (s).
    pub dt: f64,
    /// Budget of inner iterations over the whole solve.
    pub max_iterations: usize,
    #[serde(default = "default_outer")]
    pub max_outer_iterations: usize,
    /// Tolerance on the infinity norm of the scaled projected gradient.
    pub convergence_tol: f64,
    #[serde(default = "default_feasibility_tol")]
    pub feasibility_tol: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    #[serde(default = "default_penalty_max")]
    pub penalty_max: f64,
    pub warm_start: bool,
}

fn default_outer() -> usize {
    20
}

fn default_feasibility_tol() -> f64 {
    1e-6
}

fn default_penalty_max() -> f64 {
    1e9
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            dt: 0.2,
            max_iterations: 200,
            max_outer_iterations: default_outer(),
            convergence_tol: 1e-6,
            feasibility_tol: default_feasibility_tol(),
            penalty_initial: 100.0,
            penalty_growth: 10.0,
            penalty_max: default_penalty_max(),
            warm_start: true,
        }
    }
}

impl SolverConfig {
    pub fn validation_errors(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                out.push((field.to_string(), msg.to_string()));
            }
        };
        check(self.horizon >= 1, "horizon", "must be at least 1");
        check(
            self.dt > 0.0 && self.dt.is_finite(),
            "dt",
            "must be positive",
        );
        check(
            self.max_iterations >= 1,
            "max_iterations",
            "must be at least 1",
        );
        check(
            self.max_outer_iterations >= 1,
            "max_outer_iterations",
            "must be at least 1",
        );
        check(
            self.convergence_tol > 0.0,
            "convergence_tol",
            "must be positive",
        );
        check(
            self.feasibility_tol > 0.0,
            "feasibility_tol",
            "must be positive",
        );
        check(
            self.penalty_initial > 0.0,
            "penalty_initial",
            "must be positive",
        );
        check(self.penalty_growth > 1.0, "penalty_growth", "must exceed 1");
        check(
            self.penalty_max >= self.penalty_initial,
            "penalty_max",
            "must be at least penalty_initial",
        );
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub outer_iterations: usize,
    /// Merit value after each accepted step, tagged with the outer iteration
    /// (multipliers are constant within one outer iteration).
    pub merit_history: Vec<(usize, f64)>,
    pub projected_gradient_norm: f64,
    pub max_violation: f64,
    pub final_penalty: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub inputs: Vec<ControlInput>,
    /// `N + 1` states; entry 0 is the initial rig.
    pub predicted_states: Vec<CameraRig>,
    pub cost: CostBreakdown,
    pub residuals: ConstraintResiduals,
    pub occlusion_records: Vec<OcclusionRecord>,
    pub feasible: bool,
    pub status: SolveStatus,
    pub stats: SolveStats,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("initial state violates its bounds (channel {channel}, value {value})")]
    InfeasibleStart { channel: usize, value: f64 },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// Initial guess from a previous plan: drop its first input and repeat the
/// last one. Returns zeros without a previous plan.
pub fn shift_warm_start(prev: Option<&Plan>, horizon: usize) -> Vec<ControlInput> {
    let prev_inputs = prev.map(|p| p.inputs.as_slice()).unwrap_or(&[]);
    if prev_inputs.is_empty() {
        return vec![ControlInput::default(); horizon];
    }
    let last = *prev_inputs.last().unwrap();
    let mut out: Vec<ControlInput> = prev_inputs.iter().skip(1).copied().collect();
    out.resize(horizon, last);
    out
}

fn phr(g: f64, lambda: f64, rho: f64) -> (f64, f64) {
    if g <= lambda / rho {
        (-lambda * g + 0.5 * rho * g * g, -lambda + rho * g)
    } else {
        (-lambda * lambda / (2.0 * rho), 0.0)
    }
}

struct Problem<'a> {
    initial: &'a CameraRig,
    preds: &'a [TargetPrediction],
    instr: &'a [Instructions],
    cset: &'a ConstraintSet,
    spec: &'a CameraSensorSpec,
    records: &'a [OcclusionRecord],
    dt: f64,
    horizon: usize,
    mid: [f64; INPUT_DIM],
    half: [f64; INPUT_DIM],
    cost_scale: f64,
}

struct Evaluation {
    merit: f64,
    grad: DVector<f64>,
    cost: CostBreakdown,
    constraints: Vec<PathConstraint>,
}

impl Problem<'_> {
    fn inputs(&self, z: &DVector<f64>) -> Vec<ControlInput> {
        (0..self.horizon)
            .map(|k| {
                let mut u = [0.0; INPUT_DIM];
                for i in 0..INPUT_DIM {
                    u[i] = self.mid[i] + self.half[i] * z[k * INPUT_DIM + i];
                }
                ControlInput::from_slice(&u)
            })
            .collect()
    }

    fn scale(&self, inputs: &[ControlInput]) -> DVector<f64> {
        let mut z = DVector::zeros(self.horizon * INPUT_DIM);
        for (k, u) in inputs.iter().enumerate().take(self.horizon) {
            for (i, v) in u.to_array().iter().enumerate() {
                z[k * INPUT_DIM + i] = if self.half[i] > 0.0 {
                    ((v - self.mid[i]) / self.half[i]).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        z
    }

    fn rollout(&self, z: &DVector<f64>) -> Rollout {
        Rollout::simulate(self.initial, &self.inputs(z), self.dt)
    }

    fn evaluate(&self, z: &DVector<f64>, lambda: &[f64], rho: f64) -> Evaluation {
        let rollout = self.rollout(z);
        let (cost, mut seeds) = stage_gradients(&rollout, self.preds, self.spec, self.instr);
        let constraints =
            path_constraints(&rollout, self.preds, self.spec, self.cset, self.records);
        let inv_scale = 1.0 / self.cost_scale;
        for s in seeds.iter_mut() {
            *s = *s * inv_scale;
        }
        let mut merit = cost.total * inv_scale;
        for (c, l) in constraints.iter().zip(lambda) {
            let (psi, dpsi) = phr(c.residual.value, *l, rho);
            merit += psi;
            if dpsi != 0.0 {
                for (state, g) in c.gradients() {
                    seeds[*state] += *g * dpsi;
                }
            }
        }
        let mut grad = backpropagate(&rollout, &seeds);
        for (j, g) in grad.iter_mut().enumerate() {
            *g *= self.half[j % INPUT_DIM];
        }
        Evaluation {
            merit,
            grad,
            cost,
            constraints,
        }
    }

    fn cost_only(&self, z: &DVector<f64>) -> f64 {
        let rollout = self.rollout(z);
        stage_gradients(&rollout, self.preds, self.spec, self.instr)
            .0
            .total
    }
}

fn project_box(z: &DVector<f64>) -> DVector<f64> {
    z.map(|v| v.clamp(-1.0, 1.0))
}

fn max_violation(constraints: &[PathConstraint]) -> f64 {
    constraints
        .iter()
        .map(|c| (-c.residual.value).max(0.0))
        .fold(0.0, f64::max)
}

/// Solves one horizon problem starting from `initial`.
///
/// `instr` holds the instructions for steps `0..=N` (a shorter slice repeats
/// its last entry). Occlusion records are evaluated once at the initial state
/// and held fixed for the whole solve.
#[allow(clippy::too_many_arguments)]
pub fn solve(
    initial: &CameraRig,
    preds: &[TargetPrediction],
    instr: &[Instructions],
    cset: &ConstraintSet,
    spec: &CameraSensorSpec,
    cfg: &SolverConfig,
    warm: Option<&Plan>,
) -> Result<Plan, SolveError> {
    let started = Instant::now();
    let n = cfg.horizon;
    if instr.is_empty() {
        return Err(SolveError::InvalidProblem("no instructions".into()));
    }
    if let Some(p) = preds.iter().find(|p| p.poses.len() < n + 1) {
        return Err(SolveError::InvalidProblem(format!(
            "prediction for {} has {} poses, need {}",
            p.id,
            p.poses.len(),
            n + 1
        )));
    }
    let values = cset.state_values(initial);
    let bounds = cset.state_bounds.channels();
    for ch in 0..STATE_CHANNELS {
        if !bounds[ch].contains(values[ch], cset.epsilon_slack) {
            return Err(SolveError::InfeasibleStart {
                channel: ch,
                value: values[ch],
            });
        }
    }

    let records = if cset.occlusion_enabled {
        occlusion_records(initial, preds, spec)
    } else {
        Vec::new()
    };

    let channels = cset.input_bounds.channels();
    let mut mid = [0.0; INPUT_DIM];
    let mut half = [0.0; INPUT_DIM];
    for i in 0..INPUT_DIM {
        mid[i] = 0.5 * (channels[i].lower + channels[i].upper);
        half[i] = 0.5 * channels[i].width();
    }
    let mut problem = Problem {
        initial,
        preds,
        instr,
        cset,
        spec,
        records: &records,
        dt: cfg.dt,
        horizon: n,
        mid,
        half,
        cost_scale: 1.0,
    };

    let guess = if cfg.warm_start {
        shift_warm_start(warm, n)
    } else {
        shift_warm_start(None, n)
    };
    let mut z = problem.scale(&guess);
    problem.cost_scale = problem.cost_only(&z).max(1.0);

    let mut stats = SolveStats::default();
    let mut rho = cfg.penalty_initial;
    let n_cons = path_constraints(&problem.rollout(&z), preds, spec, cset, &records).len();
    let mut lambda = vec![0.0; n_cons];
    let mut prev_violation = f64::INFINITY;
    let mut status = SolveStatus::MaxIterations;
    let mut eval = problem.evaluate(&z, &lambda, rho);

    for outer in 0..cfg.max_outer_iterations {
        stats.outer_iterations = outer + 1;
        let inner_converged = projected_newton(
            &problem, &mut z, &mut eval, &lambda, rho, cfg, outer, &mut stats,
        );
        let violation = max_violation(&eval.constraints);
        log::debug!(
            "outer {outer}: inner converged {inner_converged}, iterations {}, violation {violation:.3e}, rho {rho:.1e}",
            stats.iterations
        );
        if inner_converged && violation <= cfg.feasibility_tol {
            status = SolveStatus::Converged;
            break;
        }
        if stats.iterations >= cfg.max_iterations {
            break;
        }
        for (l, c) in lambda.iter_mut().zip(&eval.constraints) {
            *l = (*l - rho * c.residual.value).max(0.0);
        }
        if violation > 0.25 * prev_violation {
            rho = (rho * cfg.penalty_growth).min(cfg.penalty_max);
        }
        prev_violation = violation;
        eval = problem.evaluate(&z, &lambda, rho);
    }

    let solved = problem.inputs(&z);
    let inputs = repair_integrator_bounds(initial, &solved, cset, cfg.dt);
    let rollout = Rollout::simulate(initial, &inputs, cfg.dt);
    let cost = if inputs == solved {
        eval.cost.clone()
    } else {
        surrogate_horizon_cost(&rollout, preds, spec, instr)
    };
    let residuals = evaluate_constraints(&rollout, preds, spec, cset, &records);
    stats.max_violation = max_violation(&eval.constraints);
    stats.final_penalty = rho;
    stats.projected_gradient_norm = (project_box(&(&z - &eval.grad)) - &z).amax();
    stats.wall_time_s = started.elapsed().as_secs_f64();
    if stats.wall_time_s > cfg.dt {
        log::warn!(
            "solve took {:.3} s, longer than the {:.3} s period",
            stats.wall_time_s,
            cfg.dt
        );
    }
    Ok(Plan {
        feasible: residuals.is_feasible(cfg.feasibility_tol),
        inputs,
        predicted_states: rollout.states,
        cost,
        residuals,
        occlusion_records: records,
        status,
        stats,
    })
}

/// Input channels that integrate directly into a bounded state channel:
/// acceleration into velocity and the lens rates into the lens state.
const INTEGRATOR_CHANNELS: [(usize, usize); 6] = [(0, 3), (1, 4), (2, 5), (6, 9), (7, 10), (8, 11)];

/// Clamps the integrating inputs so that their states stay inside the state
/// bounds, stepping forward through the horizon. The augmented Lagrangian
/// only reaches its tolerance asymptotically; this projection makes the
/// linear channels exactly feasible whenever the start is.
fn repair_integrator_bounds(
    initial: &CameraRig,
    inputs: &[ControlInput],
    cset: &ConstraintSet,
    dt: f64,
) -> Vec<ControlInput> {
    let bounds = cset.state_bounds.channels();
    let limits = cset.input_bounds.channels();
    let mut rig = *initial;
    let mut out = Vec::with_capacity(inputs.len());
    for u in inputs {
        let values = cset.state_values(&rig);
        let mut a = u.to_array();
        for (i, ch) in INTEGRATOR_CHANNELS {
            let lo = ((bounds[ch].lower - values[ch]) / dt).max(limits[i].lower);
            let hi = ((bounds[ch].upper - values[ch]) / dt).min(limits[i].upper);
            if lo <= hi {
                a[i] = a[i].clamp(lo, hi);
            }
        }
        let repaired = ControlInput::from_slice(&a);
        rig = step(&rig, &repaired, dt);
        out.push(repaired);
    }
    out
}

/// Merit Hessian by forward differences of the analytic gradient,
/// symmetrized.
fn merit_hessian(
    problem: &Problem,
    z: &DVector<f64>,
    eval: &Evaluation,
    lambda: &[f64],
    rho: f64,
) -> DMatrix<f64> {
    const STEP: f64 = 1e-6;
    let n = z.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let step = if z[i] + STEP <= 1.0 { STEP } else { -STEP };
        let mut zp = z.clone();
        zp[i] += step;
        let g = problem.evaluate(&zp, lambda, rho).grad;
        h.set_column(i, &((g - &eval.grad) / step));
    }
    (&h + h.transpose()) * 0.5
}

/// Variables held at a bound by the gradient.
fn active_set(z: &DVector<f64>, g: &DVector<f64>) -> Vec<bool> {
    const AT_BOUND: f64 = 1e-10;
    z.iter()
        .zip(g.iter())
        .map(|(zi, gi)| {
            (*zi <= -1.0 + AT_BOUND && *gi > 0.0) || (*zi >= 1.0 - AT_BOUND && *gi < 0.0)
        })
        .collect()
}

/// Newton direction on the free variables with Levenberg damping until the
/// reduced Hessian is positive definite; bound-held variables take a
/// diagonally scaled gradient step, which the projection then cancels.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>, active: &[bool]) -> DVector<f64> {
    let n = g.len();
    let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
    let scale = h.diagonal().amax().max(1e-12);
    let mut d = DVector::zeros(n);
    for i in 0..n {
        if active[i] {
            d[i] = -g[i] / h[(i, i)].abs().max(1e-8 * scale);
        }
    }
    if free.is_empty() {
        return d;
    }
    let m = free.len();
    let hf = DMatrix::from_fn(m, m, |a, b| h[(free[a], free[b])]);
    let gf = DVector::from_fn(m, |a, _| g[free[a]]);
    let mut mu = 0.0;
    loop {
        let damped = &hf + DMatrix::identity(m, m) * mu;
        if let Some(chol) = damped.cholesky() {
            let df = chol.solve(&(-&gf));
            for (a, &i) in free.iter().enumerate() {
                d[i] = df[a];
            }
            return d;
        }
        mu = if mu == 0.0 { 1e-10 * scale } else { mu * 10.0 };
    }
}

/// Projected Newton on the box `[-1, 1]^n` with fixed multipliers. Each
/// accepted step satisfies an Armijo condition along the projected arc, so
/// the merit decreases monotonically. Returns whether the projected-gradient
/// tolerance was reached.
#[allow(clippy::too_many_arguments)]
fn projected_newton(
    problem: &Problem,
    z: &mut DVector<f64>,
    eval: &mut Evaluation,
    lambda: &[f64],
    rho: f64,
    cfg: &SolverConfig,
    outer: usize,
    stats: &mut SolveStats,
) -> bool {
    const ARMIJO: f64 = 1e-4;
    // Relative merit gain below which a step counts as no progress; at a
    // kink of the objective the line search keeps accepting such steps.
    const STALL: f64 = 1e-12;
    let mut stalled = 0;
    // Leave budget for later penalty updates.
    let budget = (stats.iterations + cfg.max_iterations.div_ceil(4)).min(cfg.max_iterations);
    loop {
        let pg = (project_box(&(&*z - &eval.grad)) - &*z).amax();
        if pg <= cfg.convergence_tol {
            return true;
        }
        if stats.iterations >= budget {
            return false;
        }
        stats.iterations += 1;

        let h = merit_hessian(problem, z, eval, lambda, rho);
        let active = active_set(z, &eval.grad);
        let newton = newton_direction(&h, &eval.grad, &active);
        let gradient = -&eval.grad / h.diagonal().amax().max(1e-12);
        let mut accepted = None;
        'directions: for d in [newton, gradient] {
            let mut t = 1.0;
            while t >= 1e-12 {
                let trial = project_box(&(&*z + &d * t));
                let slope = eval.grad.dot(&(&trial - &*z));
                if slope < 0.0 {
                    let next = problem.evaluate(&trial, lambda, rho);
                    if next.merit.is_finite() && next.merit <= eval.merit + ARMIJO * slope {
                        accepted = Some((trial, next));
                        break 'directions;
                    }
                }
                t *= 0.5;
            }
        }
        let Some((trial, next)) = accepted else {
            // No decrease possible at machine precision: treat as stationary.
            return true;
        };
        stalled = if eval.merit - next.merit <= STALL * eval.merit.abs().max(1.0) {
            stalled + 1
        } else {
            0
        };
        *z = trial;
        *eval = next;
        if stalled >= 3 {
            return true;
        }
        stats.merit_history.push((outer, eval.merit));
    }
}
