//! High-level capture planning: choose where and when to meet the ball.
//!
//! The catch pose problem is nonconvex in the configuration, so it is split
//! into a scan over candidate catch times and a damped least-squares pose
//! solve per time. Each converged pose that clears the height floor and the
//! joint limits becomes a candidate; the winner minimizes a weighted
//! joint-displacement cost with a reward for catching late.

use nalgebra::DVector;

use crate::ballistics::BallPrediction;
use crate::error::{Error, Result};
use crate::model::{forward_kinematics, RobotModel};
use crate::optim::damped_pose_solve;

/// Planner weights and search grid.
#[derive(Debug, Clone)]
pub struct CapturePlannerConfig {
    /// Displacement weight for the two virtual base joints.
    pub lambda_b: f64,
    /// Displacement weight for the arm joints.
    pub lambda_m: f64,
    /// Reward factor on the squared catch time.
    pub alpha: f64,
    /// Minimum container height at the catch, meters.
    pub beta: f64,
    /// Catch-time grid spacing, seconds.
    pub t_grid_step: f64,
    /// Earliest catch time considered, seconds.
    pub t_min: f64,
}

impl Default for CapturePlannerConfig {
    fn default() -> Self {
        Self {
            lambda_b: 5.0,
            lambda_m: 1.0,
            alpha: 2.0,
            beta: 0.5,
            t_grid_step: 0.02,
            t_min: 0.1,
        }
    }
}

impl CapturePlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_b > 0.0 && self.lambda_m > 0.0 && self.alpha > 0.0) {
            return Err(Error::InvalidConfiguration(
                "capture weights must be positive".into(),
            ));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfiguration(
                "height floor must be positive".into(),
            ));
        }
        if !(self.t_grid_step > 0.0 && self.t_min > 0.0) {
            return Err(Error::InvalidConfiguration(
                "time grid parameters must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Per-joint displacement weights: base twice, arm for the rest.
    pub fn joint_weights(&self, dof: usize) -> DVector<f64> {
        DVector::from_fn(dof, |i, _| {
            if i < 2 {
                self.lambda_b
            } else {
                self.lambda_m
            }
        })
    }
}

/// Selected catch configuration and time.
#[derive(Debug, Clone)]
pub struct CaptureSolution {
    pub q_ca: DVector<f64>,
    pub t_ca: f64,
    pub objective: f64,
    /// Grid times that produced at least one feasible candidate.
    pub candidate_count: usize,
}

/// Constraint residuals of a capture solution, recomputed from scratch.
#[derive(Debug, Clone)]
pub struct CaptureReport {
    /// Container center to predicted ball position, meters.
    pub position_error: f64,
    /// Angle between container axis and the reversed approach velocity, rad.
    pub axis_error: f64,
    /// Container height at the catch, meters.
    pub height: f64,
    pub position_ok: bool,
    pub axis_ok: bool,
    pub height_ok: bool,
    pub limits_ok: bool,
}

impl CaptureReport {
    pub fn all_ok(&self) -> bool {
        self.position_ok && self.axis_ok && self.height_ok && self.limits_ok
    }
}

/// Weighted displacement cost minus the catch-time reward:
/// 0.5 * (sum_i w_i (q_i - q0_i)^2 - alpha * t^2).
pub fn capture_objective(
    q_ca: &DVector<f64>,
    q_0: &DVector<f64>,
    t_ca: f64,
    cfg: &CapturePlannerConfig,
) -> f64 {
    let w = cfg.joint_weights(q_0.len());
    let mut cost = 0.0;
    for i in 0..q_0.len() {
        let d = q_ca[i] - q_0[i];
        cost += w[i] * d * d;
    }
    0.5 * (cost - cfg.alpha * t_ca * t_ca)
}

fn base_displacement(q: &DVector<f64>, q_0: &DVector<f64>) -> f64 {
    let dphi = q[0] - q_0[0];
    let dd = q[1] - q_0[1];
    (dphi * dphi + dd * dd).sqrt()
}

/// Strict preference order between candidates: lower objective wins; ties
/// break toward the later catch, then the smaller base displacement.
fn candidate_better(
    obj_a: f64,
    t_a: f64,
    base_a: f64,
    obj_b: f64,
    t_b: f64,
    base_b: f64,
) -> bool {
    if (obj_a - obj_b).abs() > 1e-12 {
        return obj_a < obj_b;
    }
    if (t_a - t_b).abs() > 1e-12 {
        return t_a > t_b;
    }
    base_a < base_b
}

fn within_limits(model: &RobotModel, q: &DVector<f64>) -> bool {
    (0..q.len()).all(|i| {
        q[i] >= model.limits.lower[i] - 1e-9 && q[i] <= model.limits.upper[i] + 1e-9
    })
}

/// Scan the catch-time grid and return the best feasible catch.
///
/// Each grid time is solved from the rest configuration and, when available,
/// from the previous grid time's converged pose, which tracks the moving
/// target smoothly. Candidate filtering happens after the solves, so the
/// solve sequence (and therefore the candidate poses) does not depend on the
/// height floor.
pub fn plan_capture(
    model: &RobotModel,
    pred: &BallPrediction,
    q_0: &DVector<f64>,
    cfg: &CapturePlannerConfig,
) -> Result<CaptureSolution> {
    cfg.validate()?;
    model.validate_q(q_0)?;
    if pred.horizon < cfg.t_min {
        return Err(Error::InvalidConfiguration(format!(
            "prediction horizon {} shorter than t_min {}",
            pred.horizon, cfg.t_min
        )));
    }

    let mut grid = Vec::new();
    let mut k = 0usize;
    loop {
        let t = cfg.t_min + k as f64 * cfg.t_grid_step;
        if t > pred.horizon + 1e-9 {
            break;
        }
        grid.push(t.min(pred.horizon));
        k += 1;
    }
    if *grid.last().unwrap() < pred.horizon - 1e-9 {
        grid.push(pred.horizon);
    }

    let weights = cfg.joint_weights(model.dof());
    let mut prev: Option<DVector<f64>> = None;
    let mut best: Option<(f64, f64, f64, DVector<f64>)> = None;
    let mut candidate_count = 0usize;

    for &t in &grid {
        let (p, v) = pred.query(t)?;
        if v.norm() < 1e-9 {
            continue;
        }
        let mut seeds = vec![q_0.clone()];
        if let Some(ref pq) = prev {
            seeds.push(pq.clone());
        }
        let mut best_here: Option<(f64, f64, f64, DVector<f64>)> = None;
        let mut converged_here: Option<DVector<f64>> = None;
        for seed in &seeds {
            let sol = damped_pose_solve(model, &p, &v, seed, &weights)?;
            if !sol.converged {
                continue;
            }
            if converged_here.is_none() {
                converged_here = Some(sol.q.clone());
            }
            let fk = forward_kinematics(model, &sol.q)?;
            if fk.position().z < cfg.beta - 1e-6 || !within_limits(model, &sol.q) {
                continue;
            }
            let obj = capture_objective(&sol.q, q_0, t, cfg);
            let base = base_displacement(&sol.q, q_0);
            let replace = match &best_here {
                None => true,
                Some((o, tt, b, _)) => candidate_better(obj, t, base, *o, *tt, *b),
            };
            if replace {
                best_here = Some((obj, t, base, sol.q));
            }
        }
        if let Some(cq) = converged_here {
            prev = Some(cq);
        }
        if let Some((obj, tt, base, q)) = best_here {
            candidate_count += 1;
            let replace = match &best {
                None => true,
                Some((o, bt, bb, _)) => candidate_better(obj, tt, base, *o, *bt, *bb),
            };
            if replace {
                best = Some((obj, tt, base, q));
            }
        }
    }

    match best {
        Some((objective, t_ca, _, q_ca)) => Ok(CaptureSolution {
            q_ca,
            t_ca,
            objective,
            candidate_count,
        }),
        None => Err(Error::NoCapturePlan),
    }
}

/// Recompute every catch constraint from the stored solution.
pub fn validate_capture(
    model: &RobotModel,
    sol: &CaptureSolution,
    pred: &BallPrediction,
    cfg: &CapturePlannerConfig,
) -> Result<CaptureReport> {
    let (p, v) = pred.query(sol.t_ca)?;
    let fk = forward_kinematics(model, &sol.q_ca)?;
    let position_error = (fk.position() - p).norm();
    let axis = fk.z_axis();
    let approach = -v.normalize();
    let axis_error = axis.dot(&approach).clamp(-1.0, 1.0).acos();
    let height = fk.position().z;
    Ok(CaptureReport {
        position_error,
        axis_error,
        height,
        position_ok: position_error <= 1e-3,
        axis_ok: axis_error <= 1e-2,
        height_ok: height >= cfg.beta - 1e-6,
        limits_ok: within_limits(model, &sol.q_ca),
    })
}
