//! Whole-body kinematic model: a planar mobile base under a serial arm,
//! with a catching container as the end effector.
//!
//! The base contributes two virtual joints `(phi, d)` in a polar chart:
//! the base sits at `(d*cos(phi), d*sin(phi))` with heading `phi`, which
//! matches a differential-drive platform moving along a ray. The arm is
//! described by modified Denavit-Hartenberg rows. The full chain is
//!
//! `T_container = T_base(phi, d) * T_mount * T_arm(q_m) * T_tool`
//!
//! and a configuration vector is `q = [phi, d, q_m...]`.

use nalgebra::{DVector, Matrix3, Matrix4, Matrix6xX, Vector3};

use crate::error::{Error, Result};

/// Rotation-matrix logarithm as a rotation vector. The angle comes from
/// `atan2(|skew|, (trace-1)/2)`, which stays accurate for the near-identity
/// rotations produced by finite differencing (an acos-of-trace form loses
/// half the mantissa there).
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let s = Vector3::new(
        (r[(2, 1)] - r[(1, 2)]) / 2.0,
        (r[(0, 2)] - r[(2, 0)]) / 2.0,
        (r[(1, 0)] - r[(0, 1)]) / 2.0,
    );
    let sin_t = s.norm();
    let cos_t = ((r[(0, 0)] + r[(1, 1)] + r[(2, 2)]) - 1.0) / 2.0;
    let theta = sin_t.atan2(cos_t);
    if sin_t < 1e-14 {
        // Identity to this precision; the antipodal case (theta near pi)
        // never arises from differencing steps.
        return s;
    }
    s * (theta / sin_t)
}

/// One modified-DH row. `a` and `alpha` are the link parameters of the
/// previous axis, `d` the offset along the current z, `theta` a fixed
/// angle offset added to the joint variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta: f64,
}

/// Per-joint box limits, base joints first. Velocity and acceleration
/// bounds are symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub velocity: DVector<f64>,
    pub acceleration: DVector<f64>,
}

impl JointLimits {
    pub fn dof(&self) -> usize {
        self.lower.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.lower.len();
        if self.upper.len() != n || self.velocity.len() != n || self.acceleration.len() != n {
            return Err(Error::InvalidDim("joint limit vectors disagree on length".into()));
        }
        for i in 0..n {
            if !(self.lower[i] < self.upper[i]) {
                return Err(Error::InvalidConfiguration(format!(
                    "joint {i}: lower {} must be below upper {}",
                    self.lower[i], self.upper[i]
                )));
            }
            if !(self.velocity[i] > 0.0) || !(self.acceleration[i] > 0.0) {
                return Err(Error::InvalidConfiguration(format!(
                    "joint {i}: velocity and acceleration bounds must be positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub arm: Vec<DhRow>,
    /// Base deck to arm root.
    pub mount: Matrix4<f64>,
    /// Flange to container center.
    pub tool: Matrix4<f64>,
    pub limits: JointLimits,
}

/// World pose of the container as a homogeneous transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainerPose {
    pub transform: Matrix4<f64>,
}

impl ContainerPose {
    pub fn position(&self) -> Vector3<f64> {
        self.transform.fixed_view::<3, 1>(0, 3).into()
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.transform.fixed_view::<3, 3>(0, 0).into()
    }

    /// Opening axis of the container (third column of the rotation).
    pub fn z_axis(&self) -> Vector3<f64> {
        self.transform.fixed_view::<3, 1>(0, 2).into()
    }
}

impl RobotModel {
    /// Total joint count including the two base joints.
    pub fn dof(&self) -> usize {
        2 + self.arm.len()
    }

    /// A generic fast 7-DoF arm on a planar base. Link lengths give about
    /// 0.9 m of horizontal reach from the arm root; the bounds describe a
    /// quick research arm and a nimble base rather than any specific
    /// product.
    pub fn generic() -> Self {
        let fr = std::f64::consts::FRAC_PI_2;
        let arm = vec![
            DhRow { a: 0.0, alpha: 0.0, d: 0.30, theta: 0.0 },
            DhRow { a: 0.0, alpha: -fr, d: 0.0, theta: 0.0 },
            DhRow { a: 0.0, alpha: fr, d: 0.34, theta: 0.0 },
            DhRow { a: 0.06, alpha: fr, d: 0.0, theta: 0.0 },
            DhRow { a: -0.06, alpha: -fr, d: 0.34, theta: 0.0 },
            DhRow { a: 0.0, alpha: fr, d: 0.0, theta: 0.0 },
            DhRow { a: 0.05, alpha: fr, d: 0.10, theta: 0.0 },
        ];
        let mut mount = Matrix4::identity();
        mount[(0, 3)] = 0.20;
        mount[(2, 3)] = 0.35;
        let mut tool = Matrix4::identity();
        tool[(2, 3)] = 0.12;
        let limits = JointLimits {
            lower: DVector::from_vec(vec![
                -6.3, -4.0, -2.9, -2.2, -2.9, -2.9, -2.9, -2.2, -2.9,
            ]),
            upper: DVector::from_vec(vec![6.3, 4.0, 2.9, 2.2, 2.9, 2.9, 2.9, 2.2, 2.9]),
            velocity: DVector::from_vec(vec![3.0, 2.5, 9.0, 9.0, 9.0, 9.0, 10.0, 10.0, 10.0]),
            acceleration: DVector::from_vec(vec![
                6.0, 4.0, 40.0, 40.0, 40.0, 40.0, 50.0, 50.0, 50.0,
            ]),
        };
        let model = Self { arm, mount, tool, limits };
        model.validate().expect("generic model is well formed");
        model
    }

    pub fn validate(&self) -> Result<()> {
        if self.limits.dof() != self.dof() {
            return Err(Error::InvalidDim(format!(
                "limits cover {} joints, model has {}",
                self.limits.dof(),
                self.dof()
            )));
        }
        self.limits.validate()
    }

    /// Checks length and finiteness; limit violations are allowed here
    /// (solvers clamp instead of failing).
    pub fn validate_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::InvalidDim(format!(
                "configuration has {} entries, model needs {}",
                q.len(),
                self.dof()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfiguration("non-finite joint value".into()));
        }
        Ok(())
    }

    pub fn clamp_q(&self, q: &mut DVector<f64>) {
        for i in 0..q.len() {
            q[i] = q[i].clamp(self.limits.lower[i], self.limits.upper[i]);
        }
    }
}

/// World pose of the base deck for virtual joints `(phi, d)`.
pub fn base_transform(phi: f64, d: f64) -> Matrix4<f64> {
    let (s, c) = phi.sin_cos();
    let mut t = Matrix4::identity();
    t[(0, 0)] = c;
    t[(0, 1)] = -s;
    t[(1, 0)] = s;
    t[(1, 1)] = c;
    t[(0, 3)] = d * c;
    t[(1, 3)] = d * s;
    t
}

/// Modified-DH link transform for joint value `q`:
/// `Rx(alpha) * Tx(a) * Rz(theta + q) * Tz(d)`.
fn dh_transform(row: &DhRow, q: f64) -> Matrix4<f64> {
    let (sa, ca) = row.alpha.sin_cos();
    let (st, ct) = (row.theta + q).sin_cos();
    Matrix4::new(
        ct, -st, 0.0, row.a,
        st * ca, ct * ca, -sa, -sa * row.d,
        st * sa, ct * sa, ca, ca * row.d,
        0.0, 0.0, 0.0, 1.0,
    )
}

pub fn forward_kinematics(model: &RobotModel, q: &DVector<f64>) -> Result<ContainerPose> {
    model.validate_q(q)?;
    let mut t = base_transform(q[0], q[1]) * model.mount;
    for (i, row) in model.arm.iter().enumerate() {
        t *= dh_transform(row, q[2 + i]);
    }
    Ok(ContainerPose { transform: t * model.tool })
}

/// 6 x n task Jacobian of the container pose: rows 0..3 world linear
/// velocity, rows 3..6 world angular velocity. Central differences with
/// step 1e-6; the angular block differences the rotation through its log.
pub fn extended_jacobian(model: &RobotModel, q: &DVector<f64>) -> Result<Matrix6xX<f64>> {
    model.validate_q(q)?;
    let h = 1e-6;
    let n = model.dof();
    let mut jac = Matrix6xX::zeros(n);
    let mut qp = q.clone();
    let mut qm = q.clone();
    for i in 0..n {
        qp[i] = q[i] + h;
        qm[i] = q[i] - h;
        let tp = forward_kinematics(model, &qp)?;
        let tm = forward_kinematics(model, &qm)?;
        let dp = (tp.position() - tm.position()) / (2.0 * h);
        let drot = tp.rotation() * tm.rotation().transpose();
        let w = rotation_log(&drot) / (2.0 * h);
        for r in 0..3 {
            jac[(r, i)] = dp[r];
            jac[(r + 3, i)] = w[r];
        }
        qp[i] = q[i];
        qm[i] = q[i];
    }
    Ok(jac)
}
