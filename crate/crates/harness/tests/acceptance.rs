//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line
//! with its measured values and wall time; the process exits nonzero if any
//! criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use grasp_core::ik::{control_step, CollisionModel, ControlCommand, IkConfig};
use grasp_core::kinematics::{ChainState, FingerId, RigidTransform, Twist, TwistFrame};
use grasp_core::qp::{relaxed_barrier, solve, solve_batch, BarrierConfig, QpProblem, QpStatus};
use grasp_core::rewards::{
    assemble_observations, task_rewards, ActionHistory, LiftCommand, Mvbb, RewardConfig,
};
use grasp_core::steer::{
    contour_from_jacobians, scale_velocity_limits, tracking_error_profile, velocity_limit_contour, Plane,
    ProfileSample, ACTIVE_SLACK,
};
use grasp_harness::rollout::{default_workers, VELOCITY_TOLERANCE};
use grasp_harness::{run_batch, PolicySpec, Scenario};
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{active_set_oracle, chain, random_q, random_qp};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario(name: &str) -> Scenario {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/scenarios").join(name);
    Scenario::load(p).expect("shipped scenario loads")
}

fn barrier() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut gap_v, mut gap_d, mut fd_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let mu = 10f64.powf(rng.random_range(-6.0..0.0));
        let delta = 10f64.powf(rng.random_range(-6.0..-1.0));
        // the quadratic extension at h = δ, where its scaled offset is −1
        let log = relaxed_barrier(delta, mu, delta);
        let s = -1.0f64;
        let quad_v = 0.5 * mu * (s * s - 1.0) - mu * delta.ln();
        let quad_d = mu * s / delta;
        gap_v = gap_v.max((log.value - quad_v).abs() / log.value.abs().max(1.0));
        gap_d = gap_d.max((log.first - quad_d).abs() / log.first.abs().max(1.0));

        let h = rng.random_range(-10.0..10.0);
        let eps = 1e-6 * f64::abs(h).max(delta);
        if (h - delta).abs() <= 2.0 * eps {
            continue;
        }
        let f = |x: f64| relaxed_barrier(x, mu, delta);
        let d1 = (f(h + eps).value - f(h - eps).value) / (2.0 * eps);
        let d2 = (f(h + eps).first - f(h - eps).first) / (2.0 * eps);
        let b = f(h);
        fd_err = fd_err
            .max((b.first - d1).abs() / b.first.abs().max(d1.abs()).max(1.0))
            .max((b.second - d2).abs() / b.second.abs().max(d2.abs()).max(1.0));
    }
    ensure(
        gap_v <= 1e-12 && gap_d <= 1e-12 && fd_err <= 1e-6,
        format!("seam value gap {gap_v:.1e}, slope gap {gap_d:.1e}, derivative error {fd_err:.1e}"),
    )
}

fn qp_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let cfg = BarrierConfig::default();
    let (mut dx, mut df, mut kkt, mut unconverged) = (0.0f64, 0.0f64, 0.0f64, 0);
    for _ in 0..500 {
        let p = random_qp(&mut rng, 8, 6);
        let (x_ref, f_ref) = active_set_oracle(&p).ok_or("oracle found no feasible active set")?;
        let sol = solve(&p, &cfg, None).map_err(|e| e.to_string())?;
        if sol.status != QpStatus::Converged {
            unconverged += 1;
            continue;
        }
        dx = dx.max((&sol.x - &x_ref).amax());
        df = df.max((sol.objective - f_ref).abs());
        kkt = kkt.max(sol.kkt_residual);
    }
    ensure(
        dx <= 1e-4 && df <= 1e-6 && kkt <= 1e-6 && unconverged == 0,
        format!("max |Δx| {dx:.1e}, max |Δf| {df:.1e}, max KKT {kkt:.1e}, unconverged {unconverged}/500"),
    )
}

fn batch() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 6;
    let template = loop {
        let p = random_qp(&mut rng, n, 6);
        if p.dims() == (n, 0, 6) {
            break p;
        }
    };
    let problems: Vec<QpProblem> = (0..256)
        .map(|_| {
            let mut p = template.clone();
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            p.h = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
            p.g = support::random_vec(&mut rng, n, 3.0);
            p
        })
        .collect();
    let cfg = BarrierConfig::default();
    let batch = solve_batch(&problems, &cfg, None).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (p, b) in problems.iter().zip(&batch) {
        let s = solve(p, &cfg, None).map_err(|e| e.to_string())?;
        worst = worst.max((&s.x - &b.x).amax());
    }
    ensure(worst <= 1e-12, format!("max elementwise difference {worst:.1e} over 256 problems"))
}

fn cancellation() -> Check {
    let model = chain("arm_5f.toml");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut arm_max, mut fd_max) = (0.0f64, 0.0f64);
    let h = 1e-6;
    for _ in 0..1000 {
        let q = random_q(&model, &mut rng);
        let st = ChainState::new(&model, &q).unwrap();
        let shifted: Vec<(ChainState, ChainState)> = (0..model.dof())
            .map(|j| {
                let mut p = q.clone();
                let mut m = q.clone();
                p[j] += h;
                m[j] -= h;
                (ChainState::new(&model, &p).unwrap(), ChainState::new(&model, &m).unwrap())
            })
            .collect();
        for f in 0..model.fingers().len() {
            let fid = FingerId(f);
            let jac = st.fingertip_relative_jacobian(fid).unwrap();
            arm_max = arm_max.max(jac.columns(0, model.arm_dof()).amax());
            for (j, (p, m)) in shifted.iter().enumerate() {
                let numeric = (p.fingertip_in_palm(fid).unwrap() - m.fingertip_in_palm(fid).unwrap()) / (2.0 * h);
                let analytic = jac.fixed_view::<3, 1>(3, j).into_owned();
                fd_max = fd_max.max((analytic - numeric).norm() / numeric.norm().max(1e-3));
            }
        }
    }
    ensure(
        arm_max <= 1e-12 && fd_max <= 1e-5,
        format!("max |arm column| {arm_max:.1e}, translational FD error {fd_max:.1e} over 1000 configurations"),
    )
}

fn rollout_constraints() -> Check {
    let sc = scenario("grasp_5f.toml");
    let (s, _) = run_batch(&sc, &PolicySpec::Scripted, 100, default_workers(), false).map_err(|e| e.to_string())?;
    let max_excess = s.per_episode.iter().map(|e| e.max_velocity_excess).fold(0.0, f64::max);
    ensure(
        s.position_violations == 0 && max_excess <= VELOCITY_TOLERANCE && s.min_collision_slack >= -1e-3,
        format!(
            "position violations {}, max velocity excess {max_excess:.1e}, min post-step collision slack {:.2e}, success {:.2}",
            s.position_violations, s.min_collision_slack, s.success_rate
        ),
    )
}

fn tracking_monotonicity() -> Check {
    let model = chain("single_joint.toml");
    let cfg = IkConfig::default();
    let q = DVector::zeros(1);
    // palm column of the Jacobian at q = 0: ω_z = 1, v_y = 0.5
    let col: Vector3<f64> = Vector3::new(0.0, 0.5, 0.0);
    let norm: f64 = (1.0 + col.norm_squared()).sqrt();
    let vmax = model.velocity_upper()[0];
    // smallest command magnitude whose damped solution reaches the limit
    let threshold = vmax * (norm * norm + cfg.lambda) / norm;
    let mut samples = Vec::new();
    let mut warm = None;
    for i in 0..=400 {
        let c = 3.0 * threshold * i as f64 / 400.0;
        let cmd = ControlCommand {
            palm_twist: Twist::new(Vector3::z() * (c / norm), col * (c / norm), TwistFrame::World),
            fingertip_velocities: vec![],
        };
        let out = control_step(&model, &CollisionModel::empty(), &q, &cmd, &cfg, warm.as_ref()).map_err(|e| e.to_string())?;
        let d = &out.diagnostics;
        samples.push(ProfileSample {
            command_norm: d.command_norm,
            tracking_error: d.tracking_error,
            active: d.active_counts(ACTIVE_SLACK),
        });
        warm = Some(out.qdot);
    }
    let bins = tracking_error_profile(&samples, 12).map_err(|e| e.to_string())?;
    let monotone = bins.windows(2).all(|w| w[1].mean_error >= w[0].mean_error);
    let early = samples
        .iter()
        .filter(|s| s.active[2] > 0 && s.command_norm < threshold * (1.0 - 1e-4))
        .count();
    let saturated = samples.iter().filter(|s| s.active[2] > 0).count();
    ensure(
        monotone && early == 0 && saturated > 0,
        format!("binned error non-decreasing: {monotone}, activations below threshold {threshold:.4}: {early}, above: {saturated}"),
    )
}

fn observation_dims() -> Check {
    let mut got = Vec::new();
    for name in ["arm_2f.toml", "arm_5f.toml"] {
        let model = chain(name);
        let st = ChainState::new(&model, &model.home()).unwrap();
        let mvbb = Mvbb::new(Vector3::new(0.5, 0.0, 0.05), UnitQuaternion::identity(), Vector3::new(0.05, 0.05, 0.1)).unwrap();
        let cmd = LiftCommand {
            position: Vector3::new(0.5, 0.0, 0.3),
            orientation: UnitQuaternion::identity(),
        };
        let obs = assemble_observations(
            &st,
            &DVector::zeros(model.dof()),
            &mvbb,
            &cmd,
            &ActionHistory::zeros(model.fingers().len()),
            &DVector::zeros(6),
        )
        .map_err(|e| e.to_string())?;
        got.push((obs.arm.len(), obs.hand.len()));
    }
    ensure(
        got == [(53, 44), (77, 77)],
        format!("arm 2F/5F {}/{}, hand 2F/5F {}/{}", got[0].0, got[1].0, got[0].1, got[1].1),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)))
}

fn random_point(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-r..r))
}

fn reward_properties() -> Check {
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut range_bad, mut gate_bad, mut inv) = (0, 0, 0.0f64);
    let mut grasped = 0;
    for _ in 0..10_000 {
        let dims = Vector3::from_fn(|_, _| rng.random_range(0.02..0.3));
        let mvbb = Mvbb::new(random_point(&mut rng, 0.5), random_rotation(&mut rng), dims).unwrap();
        let palm = RigidTransform::from_quaternion(&random_rotation(&mut rng), mvbb.position + random_point(&mut rng, 0.6));
        let cmd = LiftCommand {
            position: mvbb.position + random_point(&mut rng, 0.3),
            orientation: random_rotation(&mut rng),
        };
        let n = rng.random_range(0..=5);
        let r = task_rewards(&palm, &mvbb, &cmd, n, &cfg);
        let in_range = 0.0 <= r.alignment
            && r.alignment <= r.distance
            && r.distance <= 1.0
            && r.grasp.fract() == 0.0
            && (0.0..=7.0).contains(&r.grasp)
            && (0.0..=1.0).contains(&r.lift);
        range_bad += usize::from(!in_range);
        gate_bad += usize::from(!r.grasped && r.lift != 0.0);
        grasped += usize::from(r.grasped);

        let t = RigidTransform::from_quaternion(&random_rotation(&mut rng), random_point(&mut rng, 2.0));
        let m = task_rewards(&t.compose(&palm), &mvbb.transformed(&t), &cmd.transformed(&t), n, &cfg);
        for (a, b) in [(r.distance, m.distance), (r.alignment, m.alignment), (r.grasp, m.grasp), (r.lift, m.lift)] {
            inv = inv.max((a - b).abs());
        }
    }
    ensure(
        range_bad == 0 && gate_bad == 0 && inv <= 1e-9 && grasped > 0,
        format!("range violations {range_bad}, gating violations {gate_bad}, max transform change {inv:.1e}, grasped states {grasped}"),
    )
}

fn steerability() -> Check {
    let workers = default_workers();
    let apf = scenario("apf_5f.toml");
    let (a, _) = run_batch(&apf, &PolicySpec::Scripted, 8, workers, false).map_err(|e| e.to_string())?;
    let sep = a.per_episode.iter().filter_map(|e| e.min_obstacle_separation).fold(f64::INFINITY, f64::min);

    let reach = scenario("reach_5f.toml");
    let mut times = Vec::new();
    let mut all_success = a.success_rate == 1.0;
    for factor in [1.0, 0.75, 0.5] {
        let mut file = reach.file.clone();
        file.ik = scale_velocity_limits(&file.ik, factor).map_err(|e| e.to_string())?;
        let sc = Scenario::from_parts(file, reach.model.clone()).map_err(|e| e.to_string())?;
        let (s, _) = run_batch(&sc, &PolicySpec::Scripted, 8, workers, false).map_err(|e| e.to_string())?;
        all_success &= s.success_rate == 1.0;
        times.push(s.mean_time_to_success.unwrap_or(f64::INFINITY));
    }
    let monotone = times.windows(2).all(|w| w[1] >= w[0]);
    ensure(
        sep >= 0.0 && monotone && all_success,
        format!(
            "min obstacle separation {sep:.4} m (waypoint success {:.2}); time to goal at 1.0/0.75/0.5: {:.3}/{:.3}/{:.3} s",
            a.success_rate, times[0], times[1], times[2]
        ),
    )
}

fn contours() -> Check {
    let model = chain("single_joint.toml");
    let v = model.velocity_upper();
    let n = 360;
    let one = velocity_limit_contour(&model, &[DVector::zeros(1)], Plane::Xy, &v, n).map_err(|e| e.to_string())?;
    // tangent of the single joint at q = 0 is +y
    let e1 = (one[n / 4].x.hypot(one[n / 4].y) - v[0] * 0.5).abs();

    let square = contour_from_jacobians(&[DMatrix::identity(2, 2)], &DVector::from_element(2, 1.0), n).map_err(|e| e.to_string())?;
    let e2 = square
        .iter()
        .map(|p| (p.x.hypot(p.y) - 1.0 / p.angle.cos().abs().max(p.angle.sin().abs())).abs())
        .fold(0.0, f64::max);

    let arm = chain("arm_5f.toml");
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let qs: Vec<_> = (0..50).map(|_| random_q(&arm, &mut rng)).collect();
    let va = arm.velocity_upper();
    let base = velocity_limit_contour(&arm, &qs, Plane::Xy, &va, n).map_err(|e| e.to_string())?;
    let doubled = velocity_limit_contour(&arm, &qs, Plane::Xy, &(&va * 2.0), n).map_err(|e| e.to_string())?;
    let exact = base.iter().zip(&doubled).all(|(a, b)| 2.0 * a.x == b.x && 2.0 * a.y == b.y);
    ensure(
        e1 <= 1e-9 && e2 <= 1e-9 && exact,
        format!("single joint error {e1:.1e}, identity error {e2:.1e}, doubling exact: {exact}"),
    )
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { name: "barrier continuity and derivatives", budget: Duration::from_secs(1), run: barrier },
        Criterion { name: "QP solver matches the active-set oracle", budget: Duration::from_secs(30), run: qp_oracle },
        Criterion { name: "batch solve matches sequential solves", budget: Duration::from_secs(10), run: batch },
        Criterion { name: "arm columns cancel in relative fingertip Jacobians", budget: Duration::from_secs(20), run: cancellation },
        Criterion { name: "rollout constraint satisfaction, 100 scripted 5F episodes", budget: Duration::from_secs(120), run: rollout_constraints },
        Criterion { name: "tracking error monotone on a 1-DoF saturating sweep", budget: Duration::from_secs(10), run: tracking_monotonicity },
        Criterion { name: "observation dimensions", budget: Duration::from_secs(1), run: observation_dims },
        Criterion { name: "reward ranges, gating and frame invariance", budget: Duration::from_secs(5), run: reward_properties },
        Criterion { name: "steerability: APF separation and velocity-limit scaling", budget: Duration::from_secs(60), run: steerability },
        Criterion { name: "velocity-limit contours, analytic cases", budget: Duration::from_secs(5), run: contours },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let took = start.elapsed();
        let over = took > c.budget;
        let (tag, detail) = match (&result, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over the time budget")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {}: {detail} [{:.2} s of {} s]", c.name, took.as_secs_f64(), c.budget.as_secs());
    }
    println!(
        "N/A trained-policy success rates, pose errors and training curves: these need trained multi-agent policies and contact \
         physics, neither of which ships here; the harness reports success rate, time to success and pose errors for external policies"
    );
    println!("N/A binding-layer equivalence: the bindings are not part of this build");
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
