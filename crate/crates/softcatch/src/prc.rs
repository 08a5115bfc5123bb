//! Pre-catch trajectory planning.
//!
//! Plans one rest-to-rest quintic per joint from the current configuration to
//! the capture configuration. The shared duration comes from the slowest
//! joint's minimum-time estimate, inflated by a proportion parameter so the
//! smooth polynomial stays inside velocity and acceleration limits.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::RobotModel;

/// Peak normalized velocity of the rest-to-rest quintic, 15/8 at s = 1/2.
const QUINTIC_VEL_PEAK: f64 = 1.875;

/// Duration used when start and goal coincide, avoiding 0/0 in s = t/T.
const MIN_DURATION: f64 = 1e-3;

/// Planner parameters.
#[derive(Debug, Clone)]
pub struct PrcConfig {
    /// Time inflation applied to the minimum-time estimate. Must exceed 1.
    pub lambda: f64,
}

impl Default for PrcConfig {
    fn default() -> Self {
        Self { lambda: 1.5 }
    }
}

/// One sample of a joint-space trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
    /// True when the query time fell outside [0, T] and was clamped.
    pub clamped: bool,
}

/// Rest-to-rest quintic joint trajectory over a shared duration.
#[derive(Debug, Clone)]
pub struct QuinticTrajectory {
    pub q_0: DVector<f64>,
    pub q_ca: DVector<f64>,
    pub t_prc: f64,
    /// Per-joint coefficients of q(s) in normalized time s = t / t_prc,
    /// lowest order first: [q_0, 0, 0, 10Δq, -15Δq, 6Δq].
    pub coeffs: Vec<[f64; 6]>,
}

/// Minimum rest-to-rest travel time for one joint moving `dq` radians under
/// symmetric velocity and acceleration bounds.
///
/// Short moves never reach cruise speed and use a triangular profile; long
/// moves accelerate to `v_max`, cruise, and decelerate.
pub fn min_time(dq: f64, v_max: f64, a_max: f64) -> Result<f64> {
    if !(dq.is_finite() && dq >= 0.0) {
        return Err(Error::InvalidConfiguration(format!(
            "min_time needs dq >= 0, got {dq}"
        )));
    }
    if !(v_max > 0.0 && a_max > 0.0) {
        return Err(Error::InvalidConfiguration(format!(
            "min_time needs positive limits, got v={v_max} a={a_max}"
        )));
    }
    let dq_acc = 0.5 * a_max * (v_max / a_max).powi(2);
    if dq < 2.0 * dq_acc {
        Ok(2.0 * (dq / a_max).sqrt())
    } else {
        Ok(2.0 * v_max / a_max + (dq - a_max * (v_max / a_max).powi(2)) / v_max)
    }
}

fn check_within_limits(model: &RobotModel, q: &DVector<f64>, what: &str) -> Result<()> {
    model.validate_q(q)?;
    for i in 0..q.len() {
        if q[i] < model.limits.lower[i] - 1e-12 || q[i] > model.limits.upper[i] + 1e-12 {
            return Err(Error::InvalidConfiguration(format!(
                "{what}[{i}] = {} outside [{}, {}]",
                q[i], model.limits.lower[i], model.limits.upper[i]
            )));
        }
    }
    Ok(())
}

/// Plan the pre-catch quintic from `q_0` to `q_ca`.
///
/// The shared duration is `lambda` times the slowest joint's minimum time.
/// Because the quintic's peak velocity factor (15/8) can exceed the inflation
/// margin on cruise-dominated joints, the duration is re-inflated by 10%
/// until every joint's analytic peaks respect its limits.
pub fn plan_prc(
    model: &RobotModel,
    q_0: &DVector<f64>,
    q_ca: &DVector<f64>,
    cfg: &PrcConfig,
) -> Result<QuinticTrajectory> {
    if !(cfg.lambda > 1.0) {
        return Err(Error::InvalidConfiguration(format!(
            "lambda must exceed 1, got {}",
            cfg.lambda
        )));
    }
    check_within_limits(model, q_0, "q_0")?;
    check_within_limits(model, q_ca, "q_ca")?;

    let n = q_0.len();
    let mut t_max: f64 = 0.0;
    for i in 0..n {
        let dq = (q_ca[i] - q_0[i]).abs();
        let t = min_time(dq, model.limits.velocity[i], model.limits.acceleration[i])?;
        t_max = t_max.max(t);
    }
    let mut t_prc = (cfg.lambda * t_max).max(MIN_DURATION);

    // Analytic quintic peaks: |qd| = 1.875 dq/T, |qdd| = 10/sqrt(3) dq/T^2.
    let acc_peak = 10.0 / 3.0f64.sqrt();
    loop {
        let ok = (0..n).all(|i| {
            let dq = (q_ca[i] - q_0[i]).abs();
            QUINTIC_VEL_PEAK * dq / t_prc <= model.limits.velocity[i]
                && acc_peak * dq / (t_prc * t_prc) <= model.limits.acceleration[i]
        });
        if ok {
            break;
        }
        t_prc *= 1.1;
    }

    let coeffs = (0..n)
        .map(|i| {
            let dq = q_ca[i] - q_0[i];
            [q_0[i], 0.0, 0.0, 10.0 * dq, -15.0 * dq, 6.0 * dq]
        })
        .collect();
    Ok(QuinticTrajectory {
        q_0: q_0.clone(),
        q_ca: q_ca.clone(),
        t_prc,
        coeffs,
    })
}

impl QuinticTrajectory {
    pub fn dof(&self) -> usize {
        self.coeffs.len()
    }

    /// Evaluate position, velocity, and acceleration at time `t`.
    ///
    /// Out-of-range times clamp to the nearest endpoint and set the flag.
    /// Endpoints return the stored configurations bit-exactly with zero
    /// derivatives.
    pub fn sample(&self, t: f64) -> TrajectorySample {
        let n = self.dof();
        let clamped = t < 0.0 || t > self.t_prc;
        if t <= 0.0 {
            return TrajectorySample {
                q: self.q_0.clone(),
                qd: DVector::zeros(n),
                qdd: DVector::zeros(n),
                clamped,
            };
        }
        if t >= self.t_prc {
            return TrajectorySample {
                q: self.q_ca.clone(),
                qd: DVector::zeros(n),
                qdd: DVector::zeros(n),
                clamped,
            };
        }
        let s = t / self.t_prc;
        let mut q = DVector::zeros(n);
        let mut qd = DVector::zeros(n);
        let mut qdd = DVector::zeros(n);
        for (i, a) in self.coeffs.iter().enumerate() {
            // Horner in s for the polynomial and its first two derivatives.
            let mut p = a[5];
            let mut dp = 5.0 * a[5];
            let mut ddp = 20.0 * a[5];
            for k in (1..5).rev() {
                p = p * s + a[k];
                if k >= 1 {
                    dp = dp * s + k as f64 * a[k];
                }
                if k >= 2 {
                    ddp = ddp * s + (k * (k - 1)) as f64 * a[k];
                }
            }
            p = p * s + a[0];
            q[i] = p;
            qd[i] = dp / self.t_prc;
            qdd[i] = ddp / (self.t_prc * self.t_prc);
        }
        TrajectorySample {
            q,
            qd,
            qdd,
            clamped,
        }
    }

    /// Write sampled rows `t, q..., qd...` at the given sampling step.
    pub fn export_csv<W: std::io::Write>(&self, dt: f64, out: W) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidConfiguration(format!(
                "export step must be positive, got {dt}"
            )));
        }
        let n = self.dof();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("q{i}")));
        header.extend((0..n).map(|i| format!("qd{i}")));
        w.write_record(&header)?;
        let steps = (self.t_prc / dt).ceil() as usize;
        for k in 0..=steps {
            let t = (k as f64 * dt).min(self.t_prc);
            let s = self.sample(t);
            let mut row = vec![format!("{t}")];
            row.extend(s.q.iter().map(|v| format!("{v}")));
            row.extend(s.qd.iter().map(|v| format!("{v}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::JointLimits;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    /// Planar 2-joint fixture with uniform limits.
    fn two_joint_model(v_max: f64, a_max: f64) -> RobotModel {
        RobotModel {
            arm: vec![],
            mount: Matrix4::identity(),
            tool: Matrix4::identity(),
            limits: JointLimits {
                lower: DVector::from_element(2, -10.0),
                upper: DVector::from_element(2, 10.0),
                velocity: DVector::from_element(2, v_max),
                acceleration: DVector::from_element(2, a_max),
            },
        }
    }

    /// Largest rest-to-rest distance coverable in time `t` under the limits:
    /// a symmetric triangle until cruise speed is reached, trapezoid after.
    fn max_distance(t: f64, v_max: f64, a_max: f64) -> f64 {
        let t_sw = 2.0 * v_max / a_max;
        if t <= t_sw {
            a_max * t * t / 4.0
        } else {
            v_max * (t - v_max / a_max)
        }
    }

    /// Independent minimum-time oracle: bisect the forward reachability map.
    fn min_time_bisect(dq: f64, v_max: f64, a_max: f64) -> f64 {
        if dq == 0.0 {
            return 0.0;
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while max_distance(hi, v_max, a_max) < dq {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if max_distance(mid, v_max, a_max) < dq {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn min_time_frozen_values() {
        assert_eq!(min_time(0.0, 2.0, 4.0).unwrap(), 0.0);
        // Triangular branch: 2 sqrt(0.8 / 4).
        assert_relative_eq!(
            min_time(0.8, 2.0, 4.0).unwrap(),
            0.8944271909999159,
            epsilon = 1e-12
        );
        // Trapezoidal branch: 2 * 0.5 + (2 - 1) / 2.
        assert_relative_eq!(min_time(2.0, 2.0, 4.0).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn min_time_matches_bisection_oracle() {
        let cases = [
            (0.3, 1.0, 2.0),
            (5.0, 1.0, 2.0),
            (0.01, 4.5, 18.0),
            (2.9, 4.0, 15.0),
            (1.0, 2.0, 1000.0),
            (10.0, 0.5, 3.0),
        ];
        for (dq, v, a) in cases {
            let got = min_time(dq, v, a).unwrap();
            let want = min_time_bisect(dq, v, a);
            assert_relative_eq!(got, want, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn min_time_rejects_bad_inputs() {
        assert!(min_time(-0.1, 1.0, 1.0).is_err());
        assert!(min_time(1.0, 0.0, 1.0).is_err());
        assert!(min_time(1.0, 1.0, -2.0).is_err());
        assert!(min_time(f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn planned_duration_is_inflated_max() {
        // Joint times 0.89443 and 1.5 under shared limits (2, 4).
        let model = two_joint_model(2.0, 4.0);
        let q_0 = DVector::from_vec(vec![0.0, 0.0]);
        let q_ca = DVector::from_vec(vec![0.8, 2.0]);
        let traj = plan_prc(&model, &q_0, &q_ca, &PrcConfig::default()).unwrap();
        assert_relative_eq!(traj.t_prc, 2.25, epsilon = 1e-12);
    }

    #[test]
    fn endpoints_are_exact() {
        let model = two_joint_model(2.0, 4.0);
        let q_0 = DVector::from_vec(vec![0.3, -1.2]);
        let q_ca = DVector::from_vec(vec![-0.7, 2.4]);
        let traj = plan_prc(&model, &q_0, &q_ca, &PrcConfig::default()).unwrap();
        let s0 = traj.sample(0.0);
        let s1 = traj.sample(traj.t_prc);
        assert_eq!(s0.q, q_0);
        assert_eq!(s1.q, q_ca);
        assert!(!s0.clamped && !s1.clamped);
        assert_eq!(s0.qd.amax(), 0.0);
        assert_eq!(s1.qdd.amax(), 0.0);
        // Polynomial derivatives vanish approaching the endpoints too.
        let eps = 1e-7 * traj.t_prc;
        assert!(traj.sample(eps).qd.amax() < 1e-9);
        assert!(traj.sample(traj.t_prc - eps).qd.amax() < 1e-9);
    }

    #[test]
    fn midpoint_symmetry_and_peak_velocity() {
        let model = two_joint_model(4.0, 20.0);
        let q_0 = DVector::from_vec(vec![0.0, 1.0]);
        let q_ca = DVector::from_vec(vec![1.0, 1.0]);
        let mut traj = plan_prc(&model, &q_0, &q_ca, &PrcConfig::default()).unwrap();
        // Pin T = 1 to read the normalized peak factors directly.
        traj.t_prc = 1.0;
        let mid = traj.sample(0.5);
        assert_relative_eq!(mid.q[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(mid.qd[0], 1.875, epsilon = 1e-15);
        assert_eq!(mid.q[1], 1.0);
        assert_eq!(mid.qd[1], 0.0);
    }

    #[test]
    fn peak_acceleration_factor() {
        let model = two_joint_model(10.0, 100.0);
        let q_0 = DVector::from_vec(vec![0.0, 0.0]);
        let q_ca = DVector::from_vec(vec![1.0, 0.0]);
        let mut traj = plan_prc(&model, &q_0, &q_ca, &PrcConfig::default()).unwrap();
        traj.t_prc = 1.0;
        let mut peak = 0.0f64;
        for k in 0..=100_000 {
            let t = k as f64 * 1e-5;
            peak = peak.max(traj.sample(t).qdd[0].abs());
        }
        assert_relative_eq!(peak, 10.0 / 3.0f64.sqrt(), epsilon = 1e-4);
    }

    #[test]
    fn degenerate_plan_uses_floor_duration() {
        let model = two_joint_model(2.0, 4.0);
        let q = DVector::from_vec(vec![0.5, -0.5]);
        let traj = plan_prc(&model, &q, &q, &PrcConfig::default()).unwrap();
        assert_eq!(traj.t_prc, 1e-3);
        let s = traj.sample(5e-4);
        assert_eq!(s.q, q);
        assert_eq!(s.qd.amax(), 0.0);
    }

    #[test]
    fn out_of_range_samples_clamp_with_flag() {
        let model = two_joint_model(2.0, 4.0);
        let q_0 = DVector::from_vec(vec![0.0, 0.0]);
        let q_ca = DVector::from_vec(vec![1.0, -1.0]);
        let traj = plan_prc(&model, &q_0, &q_ca, &PrcConfig::default()).unwrap();
        let before = traj.sample(-0.1);
        assert!(before.clamped);
        assert_eq!(before.q, q_0);
        let after = traj.sample(traj.t_prc + 0.1);
        assert!(after.clamped);
        assert_eq!(after.q, q_ca);
    }

    #[test]
    fn rejects_out_of_limit_configurations_and_bad_lambda() {
        let model = two_joint_model(2.0, 4.0);
        let inside = DVector::from_vec(vec![0.0, 0.0]);
        let outside = DVector::from_vec(vec![11.0, 0.0]);
        assert!(plan_prc(&model, &outside, &inside, &PrcConfig::default()).is_err());
        assert!(plan_prc(&model, &inside, &outside, &PrcConfig::default()).is_err());
        let bad = PrcConfig { lambda: 1.0 };
        assert!(plan_prc(&model, &inside, &inside, &bad).is_err());
    }

    #[test]
    fn sample_matches_direct_polynomial() {
        let model = two_joint_model(2.0, 4.0);
        let q_0 = DVector::from_vec(vec![0.2, -0.9]);
        let q_ca = DVector::from_vec(vec![-1.1, 1.7]);
        let traj = plan_prc(&model, &q_0, &q_ca, &PrcConfig::default()).unwrap();
        for k in 1..20 {
            let t = traj.t_prc * k as f64 / 20.0;
            let s = t / traj.t_prc;
            let got = traj.sample(t);
            for i in 0..2 {
                let dq = q_ca[i] - q_0[i];
                let basis = 10.0 * s.powi(3) - 15.0 * s.powi(4) + 6.0 * s.powi(5);
                let want = q_0[i] + dq * basis;
                assert_relative_eq!(got.q[i], want, epsilon = 1e-13, max_relative = 1e-13);
                let dbasis = 30.0 * s.powi(2) - 60.0 * s.powi(3) + 30.0 * s.powi(4);
                assert_relative_eq!(
                    got.qd[i],
                    dq * dbasis / traj.t_prc,
                    epsilon = 1e-12,
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn csv_export_round_trips() {
        let model = two_joint_model(2.0, 4.0);
        let q_0 = DVector::from_vec(vec![0.0, 0.0]);
        let q_ca = DVector::from_vec(vec![1.0, 2.0]);
        let traj = plan_prc(&model, &q_0, &q_ca, &PrcConfig::default()).unwrap();
        let mut buf = Vec::new();
        traj.export_csv(0.05, &mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let headers = rdr.headers().unwrap().clone();
        assert_eq!(&headers[0], "t");
        assert_eq!(&headers[1], "q0");
        assert_eq!(&headers[3], "qd0");
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        let last = rows.last().unwrap();
        assert_relative_eq!(last[0].parse::<f64>().unwrap(), traj.t_prc);
        assert_relative_eq!(last[1].parse::<f64>().unwrap(), 1.0);
        assert_relative_eq!(last[2].parse::<f64>().unwrap(), 2.0);
    }

    proptest! {
        #[test]
        fn samples_stay_in_endpoint_hull(
            q0 in -3.0f64..3.0,
            dq in -4.0f64..4.0,
            frac in 0.0f64..1.0,
        ) {
            let model = two_joint_model(3.0, 10.0);
            let q_0 = DVector::from_vec(vec![q0, 0.0]);
            let q_ca = DVector::from_vec(vec![q0 + dq, 0.0]);
            let traj = plan_prc(&model, &q_0, &q_ca, &PrcConfig::default()).unwrap();
            let s = traj.sample(frac * traj.t_prc);
            let lo = q_0[0].min(q_ca[0]) - 1e-12;
            let hi = q_0[0].max(q_ca[0]) + 1e-12;
            prop_assert!(s.q[0] >= lo && s.q[0] <= hi);
        }

        #[test]
        fn planned_peaks_respect_limits(
            dq0 in 0.0f64..6.0,
            dq1 in 0.0f64..6.0,
            v in 0.2f64..5.0,
            a in 0.5f64..20.0,
        ) {
            let model = two_joint_model(v, a);
            let q_0 = DVector::from_vec(vec![0.0, 0.0]);
            let q_ca = DVector::from_vec(vec![dq0, dq1]);
            let traj = plan_prc(&model, &q_0, &q_ca, &PrcConfig::default()).unwrap();
            for k in 0..=400 {
                let s = traj.sample(traj.t_prc * k as f64 / 400.0);
                for i in 0..2 {
                    prop_assert!(s.qd[i].abs() <= v + 1e-9);
                    prop_assert!(s.qdd[i].abs() <= a + 1e-9);
                }
            }
        }
    }
}
