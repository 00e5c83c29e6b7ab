mod support;

use grasp_core::kinematics::{polar_rotation, ChainState, FingerId, RigidTransform};
use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{chain, random_q};

const FD_STEP: f64 = 1e-6;

/// Angular velocity from two rotations a step apart: the skew part of
/// `R₊ R₋ᵀ` is the log map to third order in the angle.
fn angular_difference(plus: &Matrix3<f64>, minus: &Matrix3<f64>) -> Vector3<f64> {
    let d = plus * minus.transpose();
    Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]) / (4.0 * FD_STEP)
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / scale.max(1e-3)
}

fn perturbed(q: &DVector<f64>, j: usize, s: f64) -> DVector<f64> {
    let mut out = q.clone();
    out[j] += s;
    out
}

#[test]
fn palm_jacobian_matches_central_differences() {
    for name in ["arm_5f.toml", "arm_2f.toml"] {
        let model = chain(name);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q = random_q(&model, &mut rng);
            let jac = ChainState::new(&model, &q).unwrap().palm_jacobian();
            for j in 0..model.dof() {
                let p = ChainState::new(&model, &perturbed(&q, j, FD_STEP)).unwrap();
                let m = ChainState::new(&model, &perturbed(&q, j, -FD_STEP)).unwrap();
                let w = angular_difference(&p.palm_pose().rotation, &m.palm_pose().rotation);
                let v = (p.palm_pose().translation - m.palm_pose().translation) / (2.0 * FD_STEP);
                let numeric = [w.x, w.y, w.z, v.x, v.y, v.z];
                let col: Vec<f64> = jac.column(j).iter().copied().collect();
                assert!(relative_error(&col, &numeric) <= 1e-5, "{name} column {j}: {col:?} vs {numeric:?}");
            }
        }
    }
}

#[test]
fn relative_fingertip_jacobian_matches_palm_frame_differences() {
    let model = chain("arm_5f.toml");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let q = random_q(&model, &mut rng);
        let st = ChainState::new(&model, &q).unwrap();
        for f in 0..model.fingers().len() {
            let fid = FingerId(f);
            let jac = st.fingertip_relative_jacobian(fid).unwrap();
            for j in 0..model.dof() {
                let p = ChainState::new(&model, &perturbed(&q, j, FD_STEP)).unwrap();
                let m = ChainState::new(&model, &perturbed(&q, j, -FD_STEP)).unwrap();
                let rel = |s: &ChainState| {
                    s.palm_pose().rotation.transpose() * s.fingertip_pose(fid).unwrap().rotation
                };
                let (rp, rm) = (rel(&p), rel(&m));
                let w = angular_difference(&rp, &rm);
                let v = (p.fingertip_in_palm(fid).unwrap() - m.fingertip_in_palm(fid).unwrap()) / (2.0 * FD_STEP);
                let numeric = [w.x, w.y, w.z, v.x, v.y, v.z];
                let col: Vec<f64> = jac.column(j).iter().copied().collect();
                assert!(relative_error(&col, &numeric) <= 1e-5, "finger {f} column {j}: {col:?} vs {numeric:?}");
            }
        }
    }
}

#[test]
fn arm_columns_vanish_from_relative_fingertip_jacobians() {
    let model = chain("arm_5f.toml");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q = random_q(&model, &mut rng);
        let st = ChainState::new(&model, &q).unwrap();
        for f in 0..model.fingers().len() {
            let jac = st.fingertip_relative_jacobian(FingerId(f)).unwrap();
            worst = worst.max(jac.columns(0, model.arm_dof()).amax());
        }
    }
    assert!(worst <= 1e-12, "largest arm column entry {worst:e}");
}

#[test]
fn rotations_stay_orthonormal_over_long_compositions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = RigidTransform::identity();
    for _ in 0..1000 {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let step = RigidTransform::from_axis_angle(&axis, rng.random_range(-3.0..3.0));
        t = t.compose(&step);
    }
    assert!(t.orthonormality_error() < 1e-12);
    let polar = polar_rotation(&(t.rotation * 1.01));
    assert!((polar - t.rotation).amax() < 1e-12);
}

fn base_transform() -> impl Strategy<Value = RigidTransform> {
    (prop::array::uniform3(-1.0f64..1.0), prop::array::uniform3(-3.0f64..3.0)).prop_map(|(t, r)| {
        let q = UnitQuaternion::from_scaled_axis(Vector3::from(r));
        RigidTransform::from_quaternion(&q, Vector3::from(t))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relative_jacobian_ignores_the_world_frame(base in base_transform(), seed in any::<u64>()) {
        let model = chain("arm_5f.toml");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_q(&model, &mut rng);
        let a = ChainState::new(&model, &q).unwrap();
        let b = ChainState::with_base(&model, &q, &base).unwrap();
        for f in 0..model.fingers().len() {
            let ja = a.fingertip_relative_jacobian(FingerId(f)).unwrap();
            let jb = b.fingertip_relative_jacobian(FingerId(f)).unwrap();
            prop_assert!((ja - jb).amax() <= 1e-12);
        }
        // palm pose moves with the base
        let moved = base.compose(a.palm_pose());
        prop_assert!((moved.translation - b.palm_pose().translation).amax() <= 1e-12);
    }
}
