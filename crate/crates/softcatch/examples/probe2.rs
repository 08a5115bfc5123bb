use nalgebra::{DVector, Matrix6, Vector3};
use softcatch::ballistics::{predict, BallBelief};
use softcatch::capture::{plan_capture, CapturePlannerConfig};
use softcatch::model::{forward_kinematics, RobotModel};
use softcatch::optim::damped_pose_solve;

fn solve_ready(model: &RobotModel, r: f64, z: f64) -> Option<DVector<f64>> {
    let mut seed = DVector::zeros(model.dof());
    seed[3] = -0.8;
    seed[5] = 1.4;
    seed[7] = 0.9;
    let fk0 = forward_kinematics(model, &seed).ok()?;
    let target = Vector3::new(-r, 0.0, z);
    let axis = -fk0.z_axis();
    let mut w = DVector::from_element(model.dof(), 1.0);
    w[0] = 8.0;
    w[1] = 8.0;
    w[2] = 4.0;
    let sol = damped_pose_solve(model, &target, &axis, &seed, &w).ok()?;
    sol.converged.then_some(sol.q)
}

fn trace_toss(model: &RobotModel, ready: &DVector<f64>) {
    let fk = forward_kinematics(model, ready).unwrap();
    println!(
        "ready q = {:?}",
        ready.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
    println!(
        "ready container: r={:.4} z={:.4} axis_z={:.4}",
        fk.position().xy().norm(),
        fk.position().z,
        fk.z_axis().z
    );

    let p0 = Vector3::new(-0.2825, 0.0, 1.35);
    let v0 = Vector3::new(0.01, 0.02, 5.2);
    let belief = BallBelief::new(p0, v0, Matrix6::identity() * 1e-6, 0.0);
    let pred = predict(&belief, 2.0, 0.01, 0.0295).unwrap();
    let horizon = pred.crossing_time(0.05).unwrap_or(2.0);
    println!("ball crosses z=0.05 at t={horizon:.3}");

    let cfg = CapturePlannerConfig::default();
    match plan_capture(model, &pred, ready, &cfg) {
        Ok(sol) => {
            let cfk = forward_kinematics(model, &sol.q_ca).unwrap();
            let (bp, bv) = pred.query(sol.t_ca).unwrap();
            println!(
                "planner picks t_ca={:.3} z={:.3} obj={:.3} ball_vz={:.2} ball_z={:.3}",
                sol.t_ca,
                cfk.position().z,
                sol.objective,
                bv.z,
                bp.z
            );
        }
        Err(e) => println!("planner failed: {e}"),
    }
}

fn main() {
    let model = RobotModel::generic();

    // Workspace floor: lowest upright-container height the arm can reach,
    // with random seed restarts so solver local minima do not masquerade
    // as workspace boundaries. Also brute force over folded poses.
    use rand::Rng as _;
    use rand::SeedableRng as _;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let up = Vector3::new(0.0, 0.0, 1.0);
    let within = |q: &DVector<f64>| {
        (0..q.len()).all(|j| q[j] >= model.limits.lower[j] - 1e-9 && q[j] <= model.limits.upper[j] + 1e-9)
    };
    for z in [0.30, 0.20, 0.12, 0.04] {
        let mut best: Option<(f64, f64, bool)> = None;
        let mut best_legal: Option<(f64, f64)> = None;
        for _ in 0..400 {
            let mut seed = DVector::zeros(model.dof());
            for j in 3..model.dof() {
                seed[j] = rng.random_range(-1.8..1.8);
            }
            let r = rng.random_range(0.25..0.6);
            let target = Vector3::new(-r, 0.0, z);
            if let Ok(sol) = damped_pose_solve(&model, &target, &up, &seed, &DVector::from_element(model.dof(), 1.0)) {
                if sol.converged {
                    let fk = forward_kinematics(&model, &sol.q).unwrap();
                    let legal = within(&sol.q);
                    let key = (fk.position().z, fk.position().xy().norm(), legal);
                    if best.is_none() || key.0 < best.unwrap().0 {
                        best = Some(key);
                    }
                    if legal && (best_legal.is_none() || key.0 < best_legal.unwrap().0) {
                        best_legal = Some((key.0, key.1));
                    }
                }
            }
        }
        println!("target z={z}: best {best:?}  best_within_limits {best_legal:?}");
    }

    // Brute force: sample joint space, track the lowest container with a
    // near-vertical axis (axis_z > 0.9).
    let mut lowest = f64::INFINITY;
    let mut lowest_q = DVector::zeros(model.dof());
    for _ in 0..2_000_000 {
        let mut q = DVector::zeros(model.dof());
        for j in 3..model.dof() {
            q[j] = rng.random_range(model.limits.lower[j]..model.limits.upper[j]);
        }
        let fk = forward_kinematics(&model, &q).unwrap();
        if fk.z_axis().z > 0.9 && fk.position().xy().norm() > 0.22 {
            let z = fk.position().z;
            if z < lowest {
                lowest = z;
                lowest_q = q;
            }
        }
    }
    let fk = forward_kinematics(&model, &lowest_q).unwrap();
    println!(
        "brute-force floor: z={:.3} r={:.3} axis_z={:.3} q={:?}",
        lowest,
        fk.position().xy().norm(),
        fk.z_axis().z,
        lowest_q.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
}
