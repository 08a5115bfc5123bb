//! Damped least-squares solve for a capture pose: place the container
//! center at a target point with its opening axis anti-parallel to a
//! given direction. Orientation error lives in the 2-d tangent plane of
//! the desired axis, leaving roll about the axis free.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::Result;
use crate::model::{forward_kinematics, RobotModel};

#[derive(Debug, Clone)]
pub struct PoseSolve {
    pub q: DVector<f64>,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

const RESIDUAL_TOL: f64 = 1e-4;
const MAX_ITER: usize = 100;
const FD_STEP: f64 = 1e-6;

/// Orthonormal basis of the plane orthogonal to unit vector `b`.
fn tangent_basis(b: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if b.x.abs() < 0.9 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let t1 = helper.cross(b).normalize();
    let t2 = b.cross(&t1);
    (t1, t2)
}

/// Seeks `q` with container position `target_p` and container z-axis
/// aligned to `-target_z` (the container opens against the approach
/// direction). Levenberg-Marquardt on the 5-d residual; the damping
/// matrix is `mu * diag(weights)`, so heavily weighted joints (the base)
/// move last. Iterates are clamped to joint limits throughout.
///
/// Never errors on solve failure: `converged=false` marks a candidate
/// the caller should discard.
pub fn damped_pose_solve(
    model: &RobotModel,
    target_p: &Vector3<f64>,
    target_z: &Vector3<f64>,
    q_seed: &DVector<f64>,
    weights: &DVector<f64>,
) -> Result<PoseSolve> {
    model.validate_q(q_seed)?;
    let n = model.dof();
    if weights.len() != n {
        return Err(crate::error::Error::InvalidDim(format!(
            "{} weights for {} joints",
            weights.len(),
            n
        )));
    }
    let axis_goal = -target_z.normalize();
    let (t1, t2) = tangent_basis(&axis_goal);

    let residual = |q: &DVector<f64>| -> Result<(DVector<f64>, f64)> {
        let fk = forward_kinematics(model, q)?;
        let dp = fk.position() - target_p;
        let a = fk.z_axis();
        let r = DVector::from_vec(vec![dp.x, dp.y, dp.z, t1.dot(&a), t2.dot(&a)]);
        Ok((r, a.dot(&axis_goal)))
    };

    let mut q = q_seed.clone();
    model.clamp_q(&mut q);
    let (mut r, mut axis_dot) = residual(&q)?;
    let mut mu = 1e-3;

    for iter in 0..MAX_ITER {
        if r.norm() < RESIDUAL_TOL && axis_dot > 0.0 {
            return Ok(PoseSolve { q, residual: r.norm(), converged: true, iterations: iter });
        }
        // Residual Jacobian by central differences.
        let mut jac = DMatrix::zeros(5, n);
        let mut qp = q.clone();
        let mut qm = q.clone();
        for c in 0..n {
            qp[c] = q[c] + FD_STEP;
            qm[c] = q[c] - FD_STEP;
            let (rp, _) = residual(&qp)?;
            let (rm, _) = residual(&qm)?;
            for row in 0..5 {
                jac[(row, c)] = (rp[row] - rm[row]) / (2.0 * FD_STEP);
            }
            qp[c] = q[c];
            qm[c] = q[c];
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut system = jtj;
        for i in 0..n {
            system[(i, i)] += mu * weights[i].max(1e-9);
        }
        let step = match system.cholesky() {
            Some(ch) => ch.solve(&(-&jtr)),
            None => {
                mu = (mu * 2.0).min(1e12);
                continue;
            }
        };
        let mut q_try = &q + step;
        model.clamp_q(&mut q_try);
        let (r_try, dot_try) = residual(&q_try)?;
        if r_try.norm() < r.norm() {
            q = q_try;
            r = r_try;
            axis_dot = dot_try;
            mu = (mu * 0.5).max(1e-12);
        } else {
            mu = (mu * 2.0).min(1e12);
        }
    }
    let converged = r.norm() < RESIDUAL_TOL && axis_dot > 0.0;
    Ok(PoseSolve { q, residual: r.norm(), converged, iterations: MAX_ITER })
}
