use std::collections::BTreeMap;
use std::time::Instant;

use softcatch::model::RobotModel;
use softcatch::plstm::{evaluate_mse, generate_demos, train, DemoGenConfig, TrainConfig};
use softcatch::sim::{run_batch, sample_specs, Mode, OutcomeClass, SimConfig};

fn main() {
    let model = RobotModel::generic();
    let mut cfg = SimConfig::default();
    cfg.psi_tau_override = None;

    let t0 = Instant::now();
    let demos = generate_demos(600, 11, &DemoGenConfig::default()).unwrap();
    let tc = TrainConfig {
        epochs: 120,
        ..TrainConfig::default()
    };
    let (params, losses) = train(&demos, &tc).unwrap();
    println!(
        "trained in {:?}: first loss {:.5}, final {:.5}, eval {:.5}",
        t0.elapsed(),
        losses.first().unwrap(),
        losses.last().unwrap(),
        evaluate_mse(&params, &demos)
    );

    // Raw net behavior on steep downward inputs.
    for vz in [3.0f64, 4.0, 5.0, 5.5, 6.0] {
        let input = nalgebra::Vector6::new(0.45, 0.0, 0.9, 0.0, 0.0, -vz);
        let out = params.forward(&input);
        let rows_z: Vec<String> = (0..16).map(|r| format!("{:.2}", out[(r, 2)])).collect();
        let stroke: f64 = (0..16).map(|r| out[(r, 2)] * 0.02).sum();
        println!(
            "net vz={vz}: stroke {stroke:.3} rows_z [{}]",
            rows_z.join(" ")
        );
    }

    let t0 = Instant::now();
    let specs = sample_specs(&model, 100, 7, &cfg).unwrap();
    println!("sampling took {:?}", t0.elapsed());

    let t0 = Instant::now();
    let outcomes = run_batch(&model, &specs, &params, Mode::Full, &cfg).unwrap();
    println!("100 trials took {:?}", t0.elapsed());

    let mut by_class: BTreeMap<String, usize> = BTreeMap::new();
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    for o in &outcomes {
        *by_class.entry(format!("{:?}", o.class)).or_default() += 1;
        if o.class == OutcomeClass::NotCatch {
            let key = o
                .detail
                .split(|c: char| c.is_ascii_digit())
                .next()
                .unwrap_or("?")
                .trim()
                .to_string();
            *reasons.entry(key).or_default() += 1;
        }
    }
    println!("classes: {by_class:?}");
    println!("notcatch reasons: {reasons:?}");

    let imps: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.class == OutcomeClass::Success)
        .filter_map(|o| o.impact_proxy)
        .collect();
    if !imps.is_empty() {
        let mean = imps.iter().sum::<f64>() / imps.len() as f64;
        println!("impact mean over successes: {mean:.3}");
    }

    let rigid = run_batch(&model, &specs, &params, Mode::RigidHold, &cfg).unwrap();
    let mut reductions: Vec<f64> = Vec::new();
    for (a, b) in outcomes.iter().zip(&rigid) {
        if a.class == OutcomeClass::Success && b.class == OutcomeClass::Success {
            let (ia, ib) = (a.impact_proxy.unwrap(), b.impact_proxy.unwrap());
            reductions.push(1.0 - ia / ib);
        }
    }
    reductions.sort_by(f64::total_cmp);
    if !reductions.is_empty() {
        println!(
            "paired reductions: n={} min={:.3} median={:.3} max={:.3}",
            reductions.len(),
            reductions[0],
            reductions[reductions.len() / 2],
            reductions[reductions.len() - 1]
        );
    }

    for (i, o) in outcomes.iter().enumerate() {
        if o.class == OutcomeClass::BaseCrash {
            let g0 = o.rollout.as_ref().map(|r| r.rows[0].g);
            println!(
                "base crash trial {i}: row0 g = {g0:?}, min_g = {:?}",
                o.min_cylinder_margin
            );
        }
    }
    let tca: Vec<f64> = outcomes.iter().filter_map(|o| o.t_ca).collect();
    let tprc: Vec<f64> = outcomes.iter().filter_map(|o| o.t_prc).collect();
    if !tca.is_empty() {
        println!(
            "t_ca range {:.3}..{:.3}, t_prc range {:.3}..{:.3}",
            tca.iter().cloned().fold(f64::INFINITY, f64::min),
            tca.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            tprc.iter().cloned().fold(f64::INFINITY, f64::min),
            tprc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
    }

    // Phase 2: ablation directions on adversarially enriched samples.
    println!("\n--- ablation probe (adversarial_fraction 0.35) ---");
    let mut abl_cfg = SimConfig::default();
    abl_cfg.sampling.adversarial_fraction = 0.35;
    let specs = sample_specs(&model, 200, 7, &abl_cfg).unwrap();
    for mode in [Mode::Full, Mode::NoZCbf, Mode::NoXyCbf, Mode::RigidHold] {
        let t0 = Instant::now();
        let outs = run_batch(&model, &specs, &params, mode, &abl_cfg).unwrap();
        let mut n_s = 0;
        let mut n_g = 0;
        let mut n_b = 0;
        let mut n_n = 0;
        for o in &outs {
            match o.class {
                OutcomeClass::Success => n_s += 1,
                OutcomeClass::GroundCrash => n_g += 1,
                OutcomeClass::BaseCrash => n_b += 1,
                OutcomeClass::NotCatch => n_n += 1,
            }
        }
        println!(
            "{:<10} success {:>3}  ground {:>3}  base {:>3}  notcatch {:>3}  ({:?})",
            format!("{mode:?}"),
            n_s,
            n_g,
            n_b,
            n_n,
            t0.elapsed()
        );

        if mode == Mode::NoZCbf {
            let mut min_zs: Vec<f64> = outs
                .iter()
                .filter_map(|o| o.min_floor_margin)
                .map(|f| f + abl_cfg.poc.z_safe)
                .collect();
            min_zs.sort_by(f64::total_cmp);
            if !min_zs.is_empty() {
                println!(
                    "  no-z min container z: min={:.3} p10={:.3} med={:.3}",
                    min_zs[0],
                    min_zs[min_zs.len() / 10],
                    min_zs[min_zs.len() / 2]
                );
            }
            let mut catch_zs: Vec<f64> = outs
                .iter()
                .filter_map(|o| o.capture.as_ref())
                .map(|c| {
                    softcatch::model::forward_kinematics(&model, &c.q_ca)
                        .unwrap()
                        .position()
                        .z
                })
                .collect();
            catch_zs.sort_by(f64::total_cmp);
            if !catch_zs.is_empty() {
                println!(
                    "  catch z: min={:.3} med={:.3} max={:.3}",
                    catch_zs[0],
                    catch_zs[catch_zs.len() / 2],
                    catch_zs[catch_zs.len() - 1]
                );
            }

            // Deep-dive the lowest trial: achieved container v_z per tick.
            let lowest = outs
                .iter()
                .enumerate()
                .filter(|(_, o)| o.min_floor_margin.is_some())
                .min_by(|a, b| {
                    a.1.min_floor_margin
                        .unwrap()
                        .total_cmp(&b.1.min_floor_margin.unwrap())
                })
                .map(|(i, _)| i)
                .unwrap();
            let o = &outs[lowest];
            let roll = o.rollout.as_ref().unwrap();
            // Ball velocity at catch from the truth trajectory.
            let spec = &specs[lowest];
            let st = softcatch::ballistics::BallState::new(
                nalgebra::Vector3::from_column_slice(&spec.p0),
                nalgebra::Vector3::from_column_slice(&spec.v0),
                0.0,
            );
            let mut s2 = st;
            let mut t = 0.0;
            let t_ca = o.t_ca.unwrap();
            while t < t_ca - 1e-9 {
                let step = (t_ca - t).min(0.05);
                s2 = softcatch::ballistics::integrate(&s2, step, abl_cfg.k_ad).unwrap();
                t += step;
            }
            println!(
                "  lowest trial {lowest}: ball v at catch = ({:.2},{:.2},{:.2})",
                s2.v.x, s2.v.y, s2.v.z
            );
            let vz: Vec<String> = roll
                .rows
                .iter()
                .map(|r| {
                    let jac =
                        softcatch::model::extended_jacobian(&model, &r.q).unwrap();
                    let v: f64 = (0..r.qd.len()).map(|j| jac[(2, j)] * r.qd[j]).sum();
                    format!("{v:.2}")
                })
                .collect();
            println!("  achieved v_z per tick: {}", vz.join(" "));
            let zs: Vec<String> = roll
                .rows
                .iter()
                .map(|r| format!("{:.3}", r.f + abl_cfg.poc.z_safe))
                .collect();
            println!("  z per tick: {}", zs.join(" "));
            // Why the descent stalls: joint limit gaps, Jacobian z-row, g.
            for (k, r) in roll.rows.iter().enumerate() {
                let jac = softcatch::model::extended_jacobian(&model, &r.q).unwrap();
                let jz: f64 = (0..r.qd.len()).map(|j| jac[(2, j)].powi(2)).sum::<f64>().sqrt();
                let gaps: Vec<String> = (0..r.q.len())
                    .map(|j| {
                        let lo = r.q[j] - model.limits.lower[j];
                        let hi = model.limits.upper[j] - r.q[j];
                        format!("{:.2}", lo.min(hi))
                    })
                    .collect();
                println!(
                    "    tick {k:2}: |Jz|={jz:.2} qd_norm={:.2} gaps=[{}]",
                    r.qd.norm(),
                    gaps.join(" ")
                );
            }
        }
    }
}
