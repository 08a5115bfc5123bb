//! Post-catch compliance control.
//!
//! After the ball lands in the container, a per-tick QP turns each commanded
//! container twist into joint velocities. The twist equation carries a slack
//! variable so the QP stays feasible, and two control barrier rows keep the
//! container above the floor and outside a safety cylinder around the base
//! while it gives way.

use nalgebra::{DMatrix, DVector, Vector2, Vector6};

use crate::error::{Error, Result};
use crate::model::{extended_jacobian, forward_kinematics, RobotModel};
use crate::optim::{solve_qp, QpProblem, QpStatus};

const QP_MAX_ITER: usize = 10_000;
/// A barrier multiplier above this is treated as shaping the solution.
const ACTIVE_LAMBDA: f64 = 1e-7;

/// Compliance controller parameters.
#[derive(Debug, Clone)]
pub struct PocConfig {
    /// Barrier decay rate toward the floor, per tick.
    pub gamma_z: f64,
    /// Barrier decay rate toward the base cylinder, per tick.
    pub gamma_xy: f64,
    /// Minimum container height, meters.
    pub z_safe: f64,
    /// Keep-out radius around the base axis, meters.
    pub r_safe: f64,
    /// Slack penalty; larger values track the commanded twist tighter.
    pub mu: f64,
    /// Control period, seconds.
    pub tick: f64,
    /// Barrier toggles, used by ablation experiments.
    pub enable_z_cbf: bool,
    pub enable_xy_cbf: bool,
}

impl Default for PocConfig {
    fn default() -> Self {
        Self {
            gamma_z: 0.1,
            gamma_xy: 0.1,
            z_safe: 0.2,
            r_safe: 0.3,
            mu: 1000.0,
            tick: 0.02,
            enable_z_cbf: true,
            enable_xy_cbf: true,
        }
    }
}

impl PocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_z > 0.0 && self.gamma_xy > 0.0) {
            return Err(Error::InvalidConfiguration(
                "barrier rates must be positive".into(),
            ));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidConfiguration(
                "slack weight must be positive".into(),
            ));
        }
        if !(self.tick > 0.0) {
            return Err(Error::InvalidConfiguration(
                "tick must be positive".into(),
            ));
        }
        if !(self.z_safe >= 0.0 && self.r_safe >= 0.0) {
            return Err(Error::InvalidConfiguration(
                "safety distances must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Container twist commands, one row per control tick.
#[derive(Debug, Clone)]
pub struct ComplianceSequence {
    pub rows: Vec<Vector6<f64>>,
    /// Command rate, Hz.
    pub rate: f64,
}

impl ComplianceSequence {
    pub const MAX_LEN: usize = 16;
    pub const MAX_ROW_NORM: f64 = 10.0;

    pub fn new(rows: Vec<Vector6<f64>>, rate: f64) -> Result<Self> {
        let seq = Self { rows, rate };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() > Self::MAX_LEN {
            return Err(Error::InvalidConfiguration(format!(
                "sequence length {} exceeds {}",
                self.rows.len(),
                Self::MAX_LEN
            )));
        }
        if !(self.rate > 0.0) {
            return Err(Error::InvalidConfiguration(
                "sequence rate must be positive".into(),
            ));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidConfiguration(format!(
                    "sequence row {i} not finite"
                )));
            }
            if row.norm() > Self::MAX_ROW_NORM {
                return Err(Error::InvalidConfiguration(format!(
                    "sequence row {i} norm {} exceeds {}",
                    row.norm(),
                    Self::MAX_ROW_NORM
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// One tick of the compliance QP.
#[derive(Debug, Clone)]
pub struct PocStep {
    pub qd: DVector<f64>,
    pub delta: Vector6<f64>,
    pub active_z: bool,
    pub active_xy: bool,
}

/// Core QP shared by the controller and its fixtures:
/// min 0.5(||qd||^2 + mu ||delta||^2) s.t. J qd = psi + delta, barrier and
/// per-joint rate-box rows qd_lo <= qd <= qd_hi.
///
/// Barrier rows implement a per-tick decay condition: the directional speed
/// toward a boundary at distance h is limited to (gamma / tick) * h, so one
/// Euler tick at the extreme leaves (1 - gamma) * h >= 0.
///
/// `grad_g` is the full derivative of the cylinder clearance with respect
/// to q. The clearance is measured from the moving base axis, so the row
/// must include the base columns; projecting only the container velocity
/// leaves base self-motion invisible to the constraint. `None` skips the
/// cylinder row (the gradient is undefined on the axis itself).
pub fn poc_qp(
    jac: &DMatrix<f64>,
    psi: &Vector6<f64>,
    f: f64,
    g: f64,
    grad_g: Option<&DVector<f64>>,
    qd_lo: &DVector<f64>,
    qd_hi: &DVector<f64>,
    cfg: &PocConfig,
) -> Result<PocStep> {
    cfg.validate()?;
    if jac.nrows() != 6 {
        return Err(Error::InvalidDim(format!(
            "jacobian must have 6 rows, got {}",
            jac.nrows()
        )));
    }
    let n = jac.ncols();
    if qd_lo.len() != n || qd_hi.len() != n {
        return Err(Error::InvalidDim(format!(
            "{} low and {} high rate bounds for {n} joints",
            qd_lo.len(),
            qd_hi.len()
        )));
    }
    for i in 0..n {
        if qd_lo[i] > qd_hi[i] {
            return Err(Error::InvalidConfiguration(format!(
                "joint {i}: rate bounds cross, {} > {}",
                qd_lo[i], qd_hi[i]
            )));
        }
    }
    let dim = n + 6;

    let mut h = DMatrix::identity(dim, dim);
    for i in n..dim {
        h[(i, i)] = cfg.mu;
    }
    let c = DVector::zeros(dim);

    // J qd - delta = psi.
    let mut a_eq = DMatrix::zeros(6, dim);
    a_eq.view_mut((0, 0), (6, n)).copy_from(jac);
    for r in 0..6 {
        a_eq[(r, n + r)] = -1.0;
    }
    let b_eq = DVector::from_iterator(6, psi.iter().copied());

    let mut rows_in: Vec<DVector<f64>> = Vec::new();
    let mut b_in_vals: Vec<f64> = Vec::new();

    // Floor barrier on the container vertical speed.
    let mut z_row_idx = None;
    if cfg.enable_z_cbf {
        let mut row_z = DVector::zeros(dim);
        for c_ in 0..n {
            row_z[c_] = jac[(2, c_)];
        }
        z_row_idx = Some(rows_in.len());
        rows_in.push(row_z);
        b_in_vals.push(-(cfg.gamma_z / cfg.tick) * f);
    }

    // Base cylinder barrier on the clearance decay rate.
    let mut xy_row_idx = None;
    if let (true, Some(grad)) = (cfg.enable_xy_cbf, grad_g) {
        if grad.len() != n {
            return Err(Error::InvalidDim(format!(
                "cylinder gradient has {} entries for {n} joints",
                grad.len()
            )));
        }
        let mut row_xy = DVector::zeros(dim);
        row_xy.rows_mut(0, n).copy_from(grad);
        xy_row_idx = Some(rows_in.len());
        rows_in.push(row_xy);
        b_in_vals.push(-(cfg.gamma_xy / cfg.tick) * g);
    }

    // Joint rate boxes.
    for i in 0..n {
        let mut up = DVector::zeros(dim);
        up[i] = -1.0;
        rows_in.push(up);
        b_in_vals.push(-qd_hi[i]);
        let mut lo = DVector::zeros(dim);
        lo[i] = 1.0;
        rows_in.push(lo);
        b_in_vals.push(qd_lo[i]);
    }

    let mi = rows_in.len();
    let mut a_in = DMatrix::zeros(mi, dim);
    for (r, row) in rows_in.iter().enumerate() {
        a_in.row_mut(r).copy_from(&row.transpose());
    }
    let b_in = DVector::from_vec(b_in_vals);

    let prob = QpProblem {
        h,
        c,
        a_eq,
        b_eq,
        a_in,
        b_in,
    };
    let sol = solve_qp(&prob, QP_MAX_ITER)?;
    let usable = match sol.status {
        QpStatus::Optimal => true,
        QpStatus::MaxIter => sol.kkt_residual < 1e-6,
        QpStatus::Infeasible => false,
    };
    if !usable {
        return Err(Error::SafetyStop(format!(
            "compliance QP unsolvable (status {:?}, kkt {:.2e})",
            sol.status, sol.kkt_residual
        )));
    }

    let qd = sol.x.rows(0, n).into_owned();
    let delta = Vector6::from_iterator(sol.x.rows(n, 6).iter().copied());
    let active_z = z_row_idx.map_or(false, |i| sol.lambda_in[i] > ACTIVE_LAMBDA);
    let active_xy = xy_row_idx.map_or(false, |i| sol.lambda_in[i] > ACTIVE_LAMBDA);
    Ok(PocStep {
        qd,
        delta,
        active_z,
        active_xy,
    })
}

/// Floor clearance of the container at configuration `q`.
pub fn floor_margin(model: &RobotModel, q: &DVector<f64>, cfg: &PocConfig) -> Result<f64> {
    let fk = forward_kinematics(model, q)?;
    Ok(fk.position().z - cfg.z_safe)
}

/// Clearance between the container and the keep-out cylinder around the
/// base axis, plus the horizontal unit offset when defined.
pub fn cylinder_margin(
    model: &RobotModel,
    q: &DVector<f64>,
    cfg: &PocConfig,
) -> Result<(f64, Option<Vector2<f64>>)> {
    let fk = forward_kinematics(model, q)?;
    let c = fk.position();
    let (phi, d) = (q[0], q[1]);
    let bx = d * phi.cos();
    let by = d * phi.sin();
    let off = Vector2::new(c.x - bx, c.y - by);
    let dist = off.norm();
    let grad = if dist > 1e-9 { Some(off / dist) } else { None };
    Ok((dist - cfg.r_safe, grad))
}

/// Cylinder clearance and its full derivative with respect to q. Both the
/// container and the base axis move with q, so the row combines the
/// horizontal Jacobian rows with the base position partials.
pub fn cylinder_constraint(
    model: &RobotModel,
    q: &DVector<f64>,
    jac: &DMatrix<f64>,
    cfg: &PocConfig,
) -> Result<(f64, Option<DVector<f64>>)> {
    let (g, u) = cylinder_margin(model, q, cfg)?;
    let grad = u.map(|u| {
        let n = jac.ncols();
        let (phi, d) = (q[0], q[1]);
        let mut row = DVector::zeros(n);
        for j in 0..n {
            row[j] = u.x * jac[(0, j)] + u.y * jac[(1, j)];
        }
        row[0] -= u.x * (-d * phi.sin()) + u.y * (d * phi.cos());
        row[1] -= u.x * phi.cos() + u.y * phi.sin();
        row
    });
    Ok((g, grad))
}

/// One control tick at configuration `q` tracking the commanded twist.
/// Rate bounds combine the velocity limit with the distance to each
/// position limit over one tick, so an integrated step never leaves the
/// position range; a joint resting on its limit is pinned, not recovered.
pub fn poc_step(
    model: &RobotModel,
    q: &DVector<f64>,
    psi_i: &Vector6<f64>,
    cfg: &PocConfig,
) -> Result<PocStep> {
    model.validate_q(q)?;
    let jac = extended_jacobian(model, q)?;
    let jac = DMatrix::from_iterator(6, model.dof(), jac.iter().copied());
    let f = floor_margin(model, q, cfg)?;
    let (g, grad_g) = cylinder_constraint(model, q, &jac, cfg)?;
    let n = model.dof();
    let mut qd_lo = DVector::zeros(n);
    let mut qd_hi = DVector::zeros(n);
    for i in 0..n {
        let vel = model.limits.velocity[i];
        qd_hi[i] = vel.min(((model.limits.upper[i] - q[i]) / cfg.tick).max(0.0));
        qd_lo[i] = (-vel).max(((model.limits.lower[i] - q[i]) / cfg.tick).min(0.0));
    }
    poc_qp(&jac, psi_i, f, g, grad_g.as_ref(), &qd_lo, &qd_hi, cfg)
}

/// One logged tick of a compliance rollout. `q` is the state the step was
/// computed at; the final row carries the terminal state with zero rates.
#[derive(Debug, Clone)]
pub struct PocLogRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub delta: Vector6<f64>,
    pub f: f64,
    pub g: f64,
    pub active_z: bool,
    pub active_xy: bool,
}

/// Compliance rollout log; `safety_stop` carries the reason when the QP
/// became unsolvable and the rollout ended early with the joints held.
#[derive(Debug, Clone)]
pub struct PocRollout {
    pub rows: Vec<PocLogRow>,
    pub safety_stop: Option<String>,
}

impl PocRollout {
    pub fn final_q(&self) -> &DVector<f64> {
        &self.rows.last().expect("rollout always logs a row").q
    }

    pub fn min_floor_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.f).fold(f64::INFINITY, f64::min)
    }

    pub fn min_cylinder_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.g).fold(f64::INFINITY, f64::min)
    }

    /// Write rows `t, q..., qd..., slack, f, g, active_z, active_xy`.
    pub fn export_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.rows.first().map_or(0, |r| r.q.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("q{i}")));
        header.extend((0..n).map(|i| format!("qd{i}")));
        header.extend(["slack", "f", "g", "active_z", "active_xy"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![format!("{}", r.t)];
            rec.extend(r.q.iter().map(|v| format!("{v}")));
            rec.extend(r.qd.iter().map(|v| format!("{v}")));
            rec.push(format!("{}", r.delta.norm()));
            rec.push(format!("{}", r.f));
            rec.push(format!("{}", r.g));
            rec.push(format!("{}", u8::from(r.active_z)));
            rec.push(format!("{}", u8::from(r.active_xy)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run the compliance controller over a command sequence from the catch
/// configuration, Euler-integrating the joint state each tick.
pub fn track_sequence(
    model: &RobotModel,
    q_ca: &DVector<f64>,
    psi: &ComplianceSequence,
    cfg: &PocConfig,
) -> Result<PocRollout> {
    cfg.validate()?;
    psi.validate()?;
    model.validate_q(q_ca)?;
    if (1.0 / psi.rate - cfg.tick).abs() > 1e-9 {
        return Err(Error::InvalidConfiguration(format!(
            "sequence rate {} Hz does not match tick {} s",
            psi.rate, cfg.tick
        )));
    }

    let mut q = q_ca.clone();
    let mut rows = Vec::with_capacity(psi.len() + 1);
    let mut safety_stop = None;

    for (i, cmd) in psi.rows.iter().enumerate() {
        let t = i as f64 * cfg.tick;
        match poc_step(model, &q, cmd, cfg) {
            Ok(step) => {
                let f = floor_margin(model, &q, cfg)?;
                let (g, _) = cylinder_margin(model, &q, cfg)?;
                rows.push(PocLogRow {
                    t,
                    q: q.clone(),
                    qd: step.qd.clone(),
                    delta: step.delta,
                    f,
                    g,
                    active_z: step.active_z,
                    active_xy: step.active_xy,
                });
                q += step.qd * cfg.tick;
            }
            Err(Error::SafetyStop(msg)) => {
                safety_stop = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let t_end = rows.len() as f64 * cfg.tick;
    let f = floor_margin(model, &q, cfg)?;
    let (g, _) = cylinder_margin(model, &q, cfg)?;
    rows.push(PocLogRow {
        t: t_end,
        q,
        qd: DVector::zeros(q_ca.len()),
        delta: Vector6::zeros(),
        f,
        g,
        active_z: false,
        active_xy: false,
    });

    Ok(PocRollout { rows, safety_stop })
}
