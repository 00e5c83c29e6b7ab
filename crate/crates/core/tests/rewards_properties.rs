mod support;

use grasp_core::kinematics::{ChainState, RigidTransform};
use grasp_core::rewards::{
    arm_observation_len, assemble_observations, contact_proxy, grasp_reward, hand_observation_len, task_rewards,
    ActionHistory, LiftCommand, Mvbb, RewardConfig,
};
use nalgebra::{DVector, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{chain, random_q};

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(Vector3::new(
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
    ))
}

fn random_point(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
    RigidTransform::from_quaternion(&random_rotation(rng), random_point(rng, 2.0))
}

struct World {
    palm: RigidTransform,
    mvbb: Mvbb,
    cmd: LiftCommand,
    contacts: usize,
}

fn random_world(rng: &mut ChaCha8Rng) -> World {
    let mvbb = Mvbb::new(
        random_point(rng, 0.5),
        random_rotation(rng),
        Vector3::new(rng.random_range(0.02..0.3), rng.random_range(0.02..0.3), rng.random_range(0.02..0.3)),
    )
    .unwrap();
    // palms from inside the box out to well beyond the golden zone
    let palm = RigidTransform::from_quaternion(&random_rotation(rng), mvbb.position + random_point(rng, 0.6));
    let cmd = LiftCommand {
        position: mvbb.position + random_point(rng, 0.3),
        orientation: random_rotation(rng),
    };
    World {
        palm,
        mvbb,
        cmd,
        contacts: rng.random_range(0..=5),
    }
}

#[test]
fn reward_ranges_and_gating_on_random_states() {
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut grasped = 0;
    for _ in 0..10_000 {
        let w = random_world(&mut rng);
        let r = task_rewards(&w.palm, &w.mvbb, &w.cmd, w.contacts, &cfg);
        assert!(0.0 <= r.alignment && r.alignment <= r.distance && r.distance <= 1.0, "{r:?}");
        assert!(r.grasp.fract() == 0.0 && (0.0..=7.0).contains(&r.grasp));
        assert!((0.0..=1.0).contains(&r.lift));
        if !r.grasped {
            assert_eq!(r.lift, 0.0);
            assert_eq!(r.grasp, 0.0);
        } else {
            grasped += 1;
        }
    }
    // the gated branch is exercised, not just the zero branch
    assert!(grasped > 100, "{grasped} grasped states");
}

#[test]
fn rewards_ignore_a_joint_rigid_motion() {
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10_000 {
        let w = random_world(&mut rng);
        let t = random_transform(&mut rng);
        let a = task_rewards(&w.palm, &w.mvbb, &w.cmd, w.contacts, &cfg);
        let b = task_rewards(&t.compose(&w.palm), &w.mvbb.transformed(&t), &w.cmd.transformed(&t), w.contacts, &cfg);
        for (x, y) in [
            (a.distance, b.distance),
            (a.alignment, b.alignment),
            (a.grasp, b.grasp),
            (a.lift, b.lift),
            (a.e_pos, b.e_pos),
            (a.e_ori, b.e_ori),
        ] {
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn contact_count_ignores_the_world_frame() {
    let model = chain("arm_5f.toml");
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let q = random_q(&model, &mut rng);
        let st = ChainState::new(&model, &q).unwrap();
        // a box around the palm so that some tips touch it
        let mvbb = Mvbb::new(st.palm_pose().translation + random_point(&mut rng, 0.05), random_rotation(&mut rng), Vector3::new(0.1, 0.08, 0.12)).unwrap();
        let t = random_transform(&mut rng);
        let moved = ChainState::with_base(&model, &q, &t).unwrap();
        assert_eq!(contact_proxy(&st, &mvbb, 0.005), contact_proxy(&moved, &mvbb.transformed(&t), 0.005));
    }
}

#[test]
fn grasp_reward_is_monotone_and_capped() {
    let mut prev = 0.0;
    for n in 0..12 {
        let r = grasp_reward(true, n);
        assert!(r >= prev && r <= 7.0);
        assert_eq!(grasp_reward(false, n), 0.0);
        prev = r;
    }
    assert_eq!(grasp_reward(true, 7), 7.0);
}

#[test]
fn observation_lengths_match_the_platform_tables() {
    for (name, arm_len, hand_len) in [("arm_2f.toml", 53, 44), ("arm_5f.toml", 77, 77)] {
        let model = chain(name);
        let k = model.fingers().len();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let q = random_q(&model, &mut rng);
        let st = ChainState::new(&model, &q).unwrap();
        let mvbb = Mvbb::new(Vector3::new(0.5, 0.0, 0.05), UnitQuaternion::identity(), Vector3::new(0.05, 0.05, 0.1)).unwrap();
        let cmd = LiftCommand {
            position: Vector3::new(0.5, 0.0, 0.3),
            orientation: UnitQuaternion::identity(),
        };
        let obs = assemble_observations(&st, &DVector::zeros(model.dof()), &mvbb, &cmd, &ActionHistory::zeros(k), &DVector::zeros(6))
            .unwrap();
        assert_eq!(obs.arm.len(), arm_len, "{name}");
        assert_eq!(obs.hand.len(), hand_len, "{name}");
        assert_eq!(arm_observation_len(model.dof()), arm_len);
        assert_eq!(hand_observation_len(model.hand_dof(), k), hand_len);
        assert_eq!(obs.critic.len(), arm_len + 3 * k);
    }
}

proptest! {
    #[test]
    fn signed_distance_matches_the_clamped_point(
        p in prop::array::uniform3(-0.5f64..0.5),
        dims in prop::array::uniform3(0.01f64..0.4),
        axis in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let rot = UnitQuaternion::from_scaled_axis(Vector3::from(axis));
        let b = Mvbb::new(Vector3::new(0.1, -0.2, 0.05), rot, Vector3::from(dims)).unwrap();
        let p = Vector3::from(p);
        let local = rot.inverse_transform_vector(&(p - b.position));
        let half = b.dimensions * 0.5;
        let inside = (0..3).all(|i| local[i].abs() <= half[i]);
        let expected = if inside {
            -(0..3).map(|i| half[i] - local[i].abs()).fold(f64::INFINITY, f64::min)
        } else {
            let clamped = Vector3::from_fn(|i, _| local[i].clamp(-half[i], half[i]));
            (local - clamped).norm()
        };
        prop_assert!((b.signed_distance(&p) - expected).abs() <= 1e-12);
    }
}
