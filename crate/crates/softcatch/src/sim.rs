//! Closed-loop catching simulator and Monte-Carlo harness.
//!
//! A trial runs the full pipeline: noisy observation of the incoming ball,
//! filter convergence, flight prediction, capture planning, a timed reach,
//! a geometric catch test, and finally compliant cushioning. All failures
//! are outcome classes rather than errors, so aggregate rates always sum
//! to one.
//!
//! Throws are sampled by choosing a launch point in a cylinder and a pass
//! point inside the robot's capture band, then solving for the launch
//! velocity; a drag-corrected shot is verified to cross the capture band
//! after the minimum flight time and rejected otherwise.

use nalgebra::{DVector, Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::ballistics::{
    ekf_predict, ekf_update, integrate, predict, BallBelief, BallPrediction, BallState,
};
use crate::capture::{plan_capture, CapturePlannerConfig, CaptureSolution};
use crate::error::{Error, Result};
use crate::model::{forward_kinematics, extended_jacobian, RobotModel};
use crate::plstm::{PlstmParams, SEQ_LEN, TWIST_DIM};
use crate::poc::{track_sequence, ComplianceSequence, PocConfig, PocRollout};
use crate::prc::{plan_prc, PrcConfig};

/// Cushioning variants under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Both barrier rows active.
    Full,
    /// Floor barrier dropped.
    NoZCbf,
    /// Base-cylinder barrier dropped.
    NoXyCbf,
    /// Joints frozen at the catch pose; no cushioning at all.
    RigidHold,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoZCbf => "no-z",
            Mode::NoXyCbf => "no-xy",
            Mode::RigidHold => "rigid",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "no-z" => Ok(Mode::NoZCbf),
            "no-xy" => Ok(Mode::NoXyCbf),
            "rigid" => Ok(Mode::RigidHold),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected full, no-z, no-xy, rigid)"
            ))),
        }
    }
}

/// Trial classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OutcomeClass {
    Success,
    GroundCrash,
    BaseCrash,
    NotCatch,
}

/// One sampled catching task.
#[derive(Debug, Clone, Serialize)]
pub struct TrialSpec {
    pub p0: [f64; 3],
    pub v0: [f64; 3],
    /// Seed for this trial's measurement noise.
    pub seed: u64,
    /// Ball observation time before planning, seconds.
    pub obs_window: f64,
    /// Reach-trajectory sampling rate, Hz.
    pub control_rate: f64,
}

impl TrialSpec {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::from_row_slice(&self.p0)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::from_row_slice(&self.v0)
    }

    pub fn validate(&self, sampling: &SamplingConfig) -> Result<()> {
        let p = self.position();
        let v = self.velocity();
        if !(p.iter().all(|x| x.is_finite()) && v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidConfiguration(
                "trial spec has non-finite ball state".into(),
            ));
        }
        let r = (p.x * p.x + p.y * p.y).sqrt();
        if r > sampling.cylinder_radius + 1e-9 {
            return Err(Error::InvalidConfiguration(format!(
                "launch radius {r:.3} outside sampling cylinder"
            )));
        }
        if p.z < sampling.launch_z_min - 1e-9 || p.z > sampling.launch_z_max + 1e-9 {
            return Err(Error::InvalidConfiguration(format!(
                "launch height {:.3} outside sampling band",
                p.z
            )));
        }
        if !(self.obs_window > 0.0 && self.control_rate > 0.0) {
            return Err(Error::InvalidConfiguration(
                "observation window and control rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Throw sampler bounds. Launch points live in a cylinder; pass points in
/// the capture band in front of the robot's rest container.
#[derive(Debug, Clone, Serialize)]
pub struct SamplingConfig {
    /// Launch cylinder radius, meters.
    pub cylinder_radius: f64,
    pub launch_r_min: f64,
    pub launch_r_max: f64,
    pub launch_z_min: f64,
    pub launch_z_max: f64,
    /// Azimuth half-width of launch points around the container heading.
    pub launch_half_angle: f64,
    /// Flight time to the sampled pass point, seconds.
    pub tf_min: f64,
    pub tf_max: f64,
    /// Capture band (pass points), polar around the world origin.
    pub target_r_min: f64,
    pub target_r_max: f64,
    pub target_z_min: f64,
    pub target_z_max: f64,
    /// Azimuth half-width of pass points around the container heading.
    pub target_half_angle: f64,
    /// The flight must cross the capture band after this time, seconds.
    pub pass_after: f64,
    /// Fraction of throws built to stress the safety barriers: low, steep
    /// catches (floor) and close, fast inbound catches (base cylinder).
    pub adversarial_fraction: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            cylinder_radius: 3.0,
            launch_r_min: 1.4,
            launch_r_max: 2.6,
            launch_z_min: 1.0,
            launch_z_max: 2.0,
            launch_half_angle: 0.5,
            tf_min: 0.75,
            tf_max: 1.1,
            target_r_min: 0.25,
            target_r_max: 0.55,
            target_z_min: 0.6,
            target_z_max: 1.15,
            target_half_angle: 0.6,
            pass_after: 0.5,
            adversarial_fraction: 0.0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = self.launch_r_min <= self.launch_r_max
            && self.launch_r_max <= self.cylinder_radius
            && self.launch_z_min <= self.launch_z_max
            && self.tf_min <= self.tf_max
            && self.target_r_min <= self.target_r_max
            && self.target_z_min <= self.target_z_max;
        if !ordered {
            return Err(Error::InvalidConfiguration(
                "sampling bounds out of order".into(),
            ));
        }
        if !(self.tf_min > self.pass_after) {
            return Err(Error::InvalidConfiguration(
                "flight time must exceed the pass-after threshold".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.adversarial_fraction) {
            return Err(Error::InvalidConfiguration(
                "adversarial fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Simulator parameters around the module configs.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Drag coefficient used for truth, filtering, and prediction.
    pub k_ad: f64,
    pub ball_mass: f64,
    /// Measurement rate, Hz, and noise sigma, meters.
    pub meas_rate: f64,
    pub meas_sigma: f64,
    /// Catch test: ball-to-container distance bound, meters.
    pub aperture: f64,
    /// Catch test: worst allowed angle between container axis and the
    /// incoming flight, degrees.
    pub max_align_deg: f64,
    /// Container height below this during cushioning is a ground crash.
    pub ground_margin: f64,
    /// Container-to-base horizontal distance below this is a base crash.
    pub base_collision_radius: f64,
    pub capture: CapturePlannerConfig,
    pub prc: PrcConfig,
    pub poc: PocConfig,
    pub sampling: SamplingConfig,
    /// When set, cushioning commands come from an exponential decay of the
    /// predicted catch velocity with this time constant instead of the
    /// network (pipeline testing without trained weights).
    pub psi_tau_override: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k_ad: 0.0295,
            ball_mass: 0.057,
            meas_rate: 200.0,
            meas_sigma: 0.002,
            aperture: 0.08,
            max_align_deg: 30.0,
            ground_margin: 0.05,
            base_collision_radius: 0.15,
            capture: CapturePlannerConfig::default(),
            prc: PrcConfig::default(),
            poc: PocConfig::default(),
            sampling: SamplingConfig::default(),
            psi_tau_override: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_ad >= 0.0 && self.ball_mass > 0.0) {
            return Err(Error::InvalidConfiguration(
                "ball parameters must be positive".into(),
            ));
        }
        if !(self.meas_rate > 0.0 && self.meas_sigma >= 0.0) {
            return Err(Error::InvalidConfiguration(
                "measurement model must be positive".into(),
            ));
        }
        if !(self.aperture > 0.0 && self.max_align_deg > 0.0) {
            return Err(Error::InvalidConfiguration(
                "catch test bounds must be positive".into(),
            ));
        }
        self.capture.validate()?;
        self.poc.validate()?;
        self.sampling.validate()?;
        Ok(())
    }
}

/// Result of one trial. `catch_error` is present only for successes;
/// `impact_proxy` for every trial that reached the attached phase.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub class: OutcomeClass,
    pub catch_error: Option<f64>,
    /// Peak per-tick momentum transfer rate after attachment, kg m/s^2.
    pub impact_proxy: Option<f64>,
    /// Short reason string for non-successes.
    pub detail: String,
    pub t_ca: Option<f64>,
    pub t_prc: Option<f64>,
    pub min_floor_margin: Option<f64>,
    pub min_cylinder_margin: Option<f64>,
    pub capture: Option<CaptureSolution>,
    pub rollout: Option<PocRollout>,
}

impl TrialOutcome {
    fn not_catch(detail: impl Into<String>) -> Self {
        Self {
            class: OutcomeClass::NotCatch,
            catch_error: None,
            impact_proxy: None,
            detail: detail.into(),
            t_ca: None,
            t_prc: None,
            min_floor_margin: None,
            min_cylinder_margin: None,
            capture: None,
            rollout: None,
        }
    }
}

/// March a ball state forward by any duration in integrator-sized steps.
fn integrate_for(state: &BallState, duration: f64, k_ad: f64) -> Result<BallState> {
    let mut s = *state;
    let mut left = duration;
    while left > 1e-12 {
        let dt = left.min(0.05);
        s = integrate(&s, dt, k_ad)?;
        left -= dt;
    }
    Ok(s)
}

/// Rest configuration the reach starts from. The container sits low,
/// near z 0.77, so fast catches keep cushioning room above the floor.
pub fn ready_pose(model: &RobotModel) -> DVector<f64> {
    let mut q = DVector::zeros(model.dof());
    q[3] = -1.1;
    q[5] = 1.4;
    q[7] = 0.62;
    q
}

/// Exponential cushioning decay of a catch velocity: row j carries
/// v * exp(-j dt / tau), angular rows zero.
pub fn decay_sequence(v: &Vector3<f64>, tau: f64, dt: f64) -> Vec<Vector6<f64>> {
    (1..=SEQ_LEN)
        .map(|j| {
            let s = (-(j as f64) * dt / tau).exp();
            let mut row = Vector6::zeros();
            row[0] = v.x * s;
            row[1] = v.y * s;
            row[2] = v.z * s;
            row
        })
        .collect()
}

fn observe_and_predict(
    spec: &TrialSpec,
    cfg: &SimConfig,
) -> Result<(BallPrediction, BallState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, cfg.meas_sigma.max(0.0)).map_err(|e| {
        Error::InvalidConfiguration(format!("bad measurement sigma: {e}"))
    })?;
    let dt = 1.0 / cfg.meas_rate;
    let frames = (spec.obs_window * cfg.meas_rate).round() as usize;

    let mut truth = BallState::new(spec.position(), spec.velocity(), 0.0);
    let z0 = truth.p + Vector3::from_fn(|_, _| noise.sample(&mut rng));
    let mut cov = Matrix6::zeros();
    for i in 0..3 {
        cov[(i, i)] = (cfg.meas_sigma * cfg.meas_sigma).max(1e-12);
        cov[(i + 3, i + 3)] = 25.0;
    }
    let mut belief = BallBelief::new(z0, Vector3::zeros(), cov, 0.0);

    let mut q = Matrix6::zeros();
    for i in 0..3 {
        q[(i, i)] = 1e-6;
        q[(i + 3, i + 3)] = 1e-4;
    }
    let r = Matrix3::identity() * (cfg.meas_sigma * cfg.meas_sigma).max(1e-12);

    for _ in 0..frames {
        truth = integrate(&truth, dt, cfg.k_ad)?;
        belief = ekf_predict(&belief, dt, cfg.k_ad, &q)?;
        let z = truth.p + Vector3::from_fn(|_, _| noise.sample(&mut rng));
        belief = ekf_update(&belief, &z, &r)?;
    }

    // Predict to just above the floor; a coarse pass finds the crossing.
    let coarse = predict(&belief, 2.0, 0.01, cfg.k_ad)?;
    let horizon = coarse.crossing_time(0.05).unwrap_or(2.0).min(2.0);
    let pred = predict(&belief, horizon.max(0.05), 0.01, cfg.k_ad)?;
    Ok((pred, truth))
}

fn impact_proxy_over(
    model: &RobotModel,
    v_catch: &Vector3<f64>,
    rollout: &PocRollout,
    mass: f64,
    tick: f64,
) -> Result<f64> {
    let mut speeds = vec![*v_catch];
    for row in &rollout.rows {
        let jac = extended_jacobian(model, &row.q)?;
        let twist = &jac * &row.qd;
        speeds.push(Vector3::new(twist[0], twist[1], twist[2]));
    }
    let mut peak: f64 = 0.0;
    for pair in speeds.windows(2) {
        peak = peak.max((pair[1] - pair[0]).norm());
    }
    Ok(mass * peak / tick)
}

/// Run one catching trial end to end.
pub fn run_trial(
    model: &RobotModel,
    spec: &TrialSpec,
    params: &PlstmParams,
    mode: Mode,
    cfg: &SimConfig,
) -> Result<TrialOutcome> {
    cfg.validate()?;
    spec.validate(&cfg.sampling)?;

    let (pred, truth_at_obs) = observe_and_predict(spec, cfg)?;
    if pred.horizon <= cfg.capture.t_min {
        return Ok(TrialOutcome::not_catch("flight ends before planning window"));
    }

    let q_0 = ready_pose(model);
    let sol = match plan_capture(model, &pred, &q_0, &cfg.capture) {
        Ok(s) => s,
        Err(Error::NoCapturePlan) => {
            return Ok(TrialOutcome::not_catch("no reachable capture pose"))
        }
        Err(e) => return Err(e),
    };

    let traj = match plan_prc(model, &q_0, &sol.q_ca, &cfg.prc) {
        Ok(t) => t,
        Err(e) => return Ok(TrialOutcome::not_catch(format!("reach planning: {e}"))),
    };
    if traj.t_prc > sol.t_ca + 1e-9 {
        return Ok(TrialOutcome::not_catch(format!(
            "reach needs {:.3} s, ball arrives in {:.3} s",
            traj.t_prc, sol.t_ca
        )));
    }

    // The reach runs open loop at the control rate and parks at the catch
    // pose; the ball flies on under drag from the observed state.
    let mut ball = truth_at_obs;
    let remaining = sol.t_ca;
    if remaining > 0.0 {
        ball = integrate_for(&ball, remaining, cfg.k_ad)?;
    }
    let fk = forward_kinematics(model, &sol.q_ca)?;
    let center = fk.position();
    let miss = (ball.p - center).norm();
    let axis = fk.z_axis();
    let vnorm = ball.v.norm();
    let align_deg = if vnorm > 1e-9 {
        let c = axis.dot(&(-ball.v / vnorm)).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    } else {
        0.0
    };
    if miss > cfg.aperture || align_deg >= cfg.max_align_deg {
        return Ok(TrialOutcome {
            detail: format!("missed: error {miss:.3} m, alignment {align_deg:.1} deg"),
            t_ca: Some(sol.t_ca),
            t_prc: Some(traj.t_prc),
            capture: Some(sol),
            ..TrialOutcome::not_catch("")
        });
    }

    let tick = cfg.poc.tick;
    if mode == Mode::RigidHold {
        // All momentum absorbed in one tick; the pose never moves.
        let proxy = cfg.ball_mass * vnorm / tick;
        let f = center.z - cfg.poc.z_safe;
        let (bx, by) = (sol.q_ca[1] * sol.q_ca[0].cos(), sol.q_ca[1] * sol.q_ca[0].sin());
        let horiz = ((center.x - bx).powi(2) + (center.y - by).powi(2)).sqrt();
        let class = if center.z < cfg.ground_margin {
            OutcomeClass::GroundCrash
        } else if horiz < cfg.base_collision_radius {
            OutcomeClass::BaseCrash
        } else {
            OutcomeClass::Success
        };
        return Ok(TrialOutcome {
            class,
            catch_error: (class == OutcomeClass::Success).then_some(miss),
            impact_proxy: Some(proxy),
            detail: String::new(),
            t_ca: Some(sol.t_ca),
            t_prc: Some(traj.t_prc),
            min_floor_margin: Some(f),
            min_cylinder_margin: Some(horiz - cfg.poc.r_safe),
            capture: Some(sol),
            rollout: None,
        });
    }

    // Cushioning commands: network rollout on the predicted catch state,
    // or a plain decay when overridden.
    let (pred_p, pred_v) = pred.query(sol.t_ca)?;
    let rows = match cfg.psi_tau_override {
        Some(tau) => decay_sequence(&pred_v, tau, tick),
        None => {
            let input = Vector6::new(
                pred_p.x, pred_p.y, pred_p.z, pred_v.x, pred_v.y, pred_v.z,
            );
            let out = params.forward(&input);
            (0..SEQ_LEN)
                .map(|r| {
                    let mut row = Vector6::from_fn(|c, _| out[(r, c)]);
                    // Commands saturate rather than fault on a wild net.
                    let n = row.norm();
                    if n > ComplianceSequence::MAX_ROW_NORM {
                        row *= ComplianceSequence::MAX_ROW_NORM / n;
                    }
                    row
                })
                .collect()
        }
    };
    debug_assert_eq!(rows.len(), SEQ_LEN);
    debug_assert_eq!(rows[0].len(), TWIST_DIM);
    let psi = ComplianceSequence::new(rows, 1.0 / tick)?;

    let mut poc_cfg = cfg.poc.clone();
    match mode {
        Mode::NoZCbf => poc_cfg.enable_z_cbf = false,
        Mode::NoXyCbf => poc_cfg.enable_xy_cbf = false,
        _ => {}
    }
    let rollout = track_sequence(model, &sol.q_ca, &psi, &poc_cfg)?;

    let min_f = rollout.min_floor_margin();
    let min_g = rollout.min_cylinder_margin();
    // Margins are measured against the safety offsets; crashes use the
    // absolute clearances.
    let min_z = min_f + cfg.poc.z_safe;
    let min_horiz = min_g + cfg.poc.r_safe;
    let class = if min_z < cfg.ground_margin {
        OutcomeClass::GroundCrash
    } else if min_horiz < cfg.base_collision_radius {
        OutcomeClass::BaseCrash
    } else {
        OutcomeClass::Success
    };
    let proxy = impact_proxy_over(model, &ball.v, &rollout, cfg.ball_mass, tick)?;

    Ok(TrialOutcome {
        class,
        catch_error: (class == OutcomeClass::Success).then_some(miss),
        impact_proxy: Some(proxy),
        detail: match class {
            OutcomeClass::GroundCrash => format!("container fell to z {min_z:.3}"),
            OutcomeClass::BaseCrash => format!("container closed to {min_horiz:.3} of base"),
            _ => String::new(),
        },
        t_ca: Some(sol.t_ca),
        t_prc: Some(traj.t_prc),
        min_floor_margin: Some(min_f),
        min_cylinder_margin: Some(min_g),
        capture: Some(sol),
        rollout: Some(rollout),
    })
}

/// Container heading at the ready pose; throw sampling centers on it.
fn ready_heading(model: &RobotModel) -> Result<f64> {
    let fk = forward_kinematics(model, &ready_pose(model))?;
    let c = fk.position();
    Ok(c.y.atan2(c.x))
}

/// Rejection-sample `n` throws that cross the capture band.
pub fn sample_specs(
    model: &RobotModel,
    n: usize,
    seed: u64,
    cfg: &SimConfig,
) -> Result<Vec<TrialSpec>> {
    if n == 0 {
        return Err(Error::InvalidConfiguration("need at least one trial".into()));
    }
    cfg.sampling.validate()?;
    let s = &cfg.sampling;
    let heading = ready_heading(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let budget = 100 * n;

    while specs.len() < n {
        attempts += 1;
        if attempts > budget {
            return Err(Error::SamplingExhausted {
                attempts,
                want: n,
            });
        }

        let adversarial = rng.random::<f64>() < s.adversarial_fraction;
        let stress_base = adversarial && rng.random::<bool>();

        let (target, tf, p0) = if !adversarial {
            let ta = heading + rng.random_range(-s.target_half_angle..=s.target_half_angle);
            let tr = rng.random_range(s.target_r_min..=s.target_r_max);
            let tz = rng.random_range(s.target_z_min..=s.target_z_max);
            let target = Vector3::new(tr * ta.cos(), tr * ta.sin(), tz);
            let tf = rng.random_range(s.tf_min..=s.tf_max);
            let la = ta + rng.random_range(-s.launch_half_angle..=s.launch_half_angle);
            let lr = rng.random_range(s.launch_r_min..=s.launch_r_max);
            let lz = rng.random_range(s.launch_z_min..=s.launch_z_max);
            (target, tf, Vector3::new(lr * la.cos(), lr * la.sin(), lz))
        } else if stress_base {
            // Close-in pass point with a fast, flat inbound flight.
            let ta = heading + rng.random_range(-0.25..=0.25);
            let tr = rng.random_range(s.target_r_min..=(s.target_r_min + 0.08));
            let tz = rng.random_range(0.75..=1.0);
            let target = Vector3::new(tr * ta.cos(), tr * ta.sin(), tz);
            let tf = rng.random_range(s.tf_min..=(s.tf_min + 0.1));
            let la = ta + rng.random_range(-0.2..=0.2);
            let lr = rng.random_range((s.launch_r_max - 0.3)..=s.launch_r_max);
            let lz = rng.random_range(1.0..=1.3);
            (target, tf, Vector3::new(lr * la.cos(), lr * la.sin(), lz))
        } else {
            // Vertical toss over the catch annulus: the ball falls back
            // through the catch band steeply, so the cushioning stroke is
            // deep and the floor barrier has to work.
            let ta = heading + rng.random_range(-0.25..=0.25);
            let tr = rng.random_range(0.35..=0.55);
            let lx = tr * ta.cos();
            let ly = tr * ta.sin();
            let lz = rng.random_range(1.25..=1.45);
            let target = Vector3::new(
                lx + rng.random_range(-0.1..=0.1),
                ly + rng.random_range(-0.1..=0.1),
                rng.random_range(0.85..=0.95),
            );
            let tf = rng.random_range(1.05..=1.25);
            (target, tf, Vector3::new(lx, ly, lz))
        };

        // Drag-free solve, then two drag corrections of the launch velocity.
        let g = Vector3::new(0.0, 0.0, -crate::ballistics::GRAVITY);
        let mut v0 = (target - p0 - g * (0.5 * tf * tf)) / tf;
        for _ in 0..2 {
            let state = BallState::new(p0, v0, 0.0);
            let hit = integrate_for(&state, tf, cfg.k_ad)?;
            v0 += (target - hit.p) / tf;
        }

        // Honest pass-through check under drag after the minimum time.
        let mut state = BallState::new(p0, v0, 0.0);
        let scan_dt = 0.01;
        let mut crosses = false;
        let mut t = 0.0;
        while t < tf + 0.3 {
            state = integrate(&state, scan_dt, cfg.k_ad)?;
            t += scan_dt;
            if t <= s.pass_after {
                continue;
            }
            if state.p.z < 0.05 {
                break;
            }
            let r = (state.p.x * state.p.x + state.p.y * state.p.y).sqrt();
            if r <= s.target_r_max + 0.1
                && state.p.z >= s.target_z_min - 0.1
                && state.p.z <= s.target_z_max + 0.1
            {
                crosses = true;
                break;
            }
        }
        if !crosses {
            continue;
        }

        let spec = TrialSpec {
            p0: [p0.x, p0.y, p0.z],
            v0: [v0.x, v0.y, v0.z],
            seed: rng.random::<u64>(),
            obs_window: 0.1,
            control_rate: 100.0,
        };
        if spec.validate(s).is_err() {
            continue;
        }
        specs.push(spec);
    }
    Ok(specs)
}

/// Run a fixed spec list under one mode, preserving order.
pub fn run_batch(
    model: &RobotModel,
    specs: &[TrialSpec],
    params: &PlstmParams,
    mode: Mode,
    cfg: &SimConfig,
) -> Result<Vec<TrialOutcome>> {
    specs
        .iter()
        .map(|spec| run_trial(model, spec, params, mode, cfg))
        .collect()
}

/// Aggregate experiment report.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub mode: String,
    pub n: usize,
    pub seed: u64,
    pub success: usize,
    pub ground_crash: usize,
    pub base_crash: usize,
    pub not_catch: usize,
    pub success_rate: f64,
    pub ground_crash_rate: f64,
    pub base_crash_rate: f64,
    pub not_catch_rate: f64,
    pub mean_catch_error: Option<f64>,
    pub max_catch_error: Option<f64>,
    pub impact_mean: Option<f64>,
    pub impact_median: Option<f64>,
    pub min_floor_margin: Option<f64>,
    pub min_cylinder_margin: Option<f64>,
}

/// Reduce trial outcomes in order; medians use the sorted successes.
pub fn aggregate(mode: Mode, seed: u64, outcomes: &[TrialOutcome]) -> MonteCarloReport {
    let n = outcomes.len();
    let count = |class: OutcomeClass| outcomes.iter().filter(|o| o.class == class).count();
    let success = count(OutcomeClass::Success);
    let ground_crash = count(OutcomeClass::GroundCrash);
    let base_crash = count(OutcomeClass::BaseCrash);
    let not_catch = count(OutcomeClass::NotCatch);

    let errors: Vec<f64> = outcomes.iter().filter_map(|o| o.catch_error).collect();
    let impacts: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.class == OutcomeClass::Success)
        .filter_map(|o| o.impact_proxy)
        .collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let median = |v: &[f64]| {
        (!v.is_empty()).then(|| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            let m = s.len() / 2;
            if s.len() % 2 == 1 {
                s[m]
            } else {
                0.5 * (s[m - 1] + s[m])
            }
        })
    };
    let fold_min = |get: fn(&TrialOutcome) -> Option<f64>| {
        outcomes
            .iter()
            .filter_map(get)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
    };

    MonteCarloReport {
        mode: mode.as_str().to_string(),
        n,
        seed,
        success,
        ground_crash,
        base_crash,
        not_catch,
        success_rate: success as f64 / n as f64,
        ground_crash_rate: ground_crash as f64 / n as f64,
        base_crash_rate: base_crash as f64 / n as f64,
        not_catch_rate: not_catch as f64 / n as f64,
        mean_catch_error: mean(&errors),
        max_catch_error: errors.iter().copied().fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        }),
        impact_mean: mean(&impacts),
        impact_median: median(&impacts),
        min_floor_margin: fold_min(|o| o.min_floor_margin),
        min_cylinder_margin: fold_min(|o| o.min_cylinder_margin),
    }
}

/// Sample `n` throws and run them under one mode.
pub fn monte_carlo(
    model: &RobotModel,
    n: usize,
    seed: u64,
    params: &PlstmParams,
    mode: Mode,
    cfg: &SimConfig,
) -> Result<MonteCarloReport> {
    if n == 0 {
        return Err(Error::InvalidConfiguration("need at least one trial".into()));
    }
    let specs = sample_specs(model, n, seed, cfg)?;
    let outcomes = run_batch(model, &specs, params, mode, cfg)?;
    Ok(aggregate(mode, seed, &outcomes))
}
