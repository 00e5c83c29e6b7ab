//! Shared helpers for the integration tests: data paths, random problem
//! generators and an active-set enumeration oracle for small QPs.

#![allow(dead_code)]

use std::path::PathBuf;

use grasp_core::kinematics::ChainModel;
use grasp_core::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn chain(name: &str) -> ChainModel {
    ChainModel::load(data_dir().join("chains").join(name)).expect("shipped chain loads")
}

/// Uniform configuration strictly inside the joint range.
pub fn random_q(model: &ChainModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let (lo, hi) = (model.position_lower(), model.position_upper());
    DVector::from_fn(model.dof(), |j, _| rng.random_range(lo[j]..hi[j]))
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-r..r))
}

/// Strictly convex QP with `n ≤ n_max` variables and up to `p_max`
/// inequalities, a mix of variable bounds and general affine rows, all
/// strictly satisfied at some point.
pub fn random_qp(rng: &mut ChaCha8Rng, n_max: usize, p_max: usize) -> QpProblem {
    let n = rng.random_range(1..=n_max);
    let p = rng.random_range(0..=p_max);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = m.transpose() * &m + DMatrix::identity(n, n) * rng.random_range(0.05..1.0);
    let g = random_vec(rng, n, 3.0);
    let x0 = random_vec(rng, n, 0.5);
    let mut a = DMatrix::zeros(p, n);
    let mut b = DVector::zeros(p);
    for i in 0..p {
        if rng.random_bool(0.5) {
            let j = rng.random_range(0..n);
            let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            a[(i, j)] = s;
        } else {
            for j in 0..n {
                a[(i, j)] = rng.random_range(-1.0..1.0);
            }
        }
        let ax0 = (a.row(i) * &x0)[0];
        b[i] = ax0 + rng.random_range(0.05..1.0);
    }
    QpProblem::with_inequalities(h, g, a, b).expect("consistent dimensions")
}

/// Exact solution by enumerating active sets: for every subset of the
/// inequality rows, solve the equality-constrained KKT system with LU and keep
/// the primal- and dual-feasible candidate of least objective.
pub fn active_set_oracle(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let (n, m_eq, m) = p.dims();
    assert!(m <= 16, "enumeration is exponential");
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = m_eq + act.len();
        if k > n {
            continue;
        }
        let dim = n + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        rhs.rows_mut(0, n).copy_from(&(-&p.g));
        for r in 0..m_eq {
            for c in 0..n {
                kkt[(n + r, c)] = p.a_eq[(r, c)];
                kkt[(c, n + r)] = p.a_eq[(r, c)];
            }
            rhs[n + r] = p.b_eq[r];
        }
        for (t, &i) in act.iter().enumerate() {
            let r = m_eq + t;
            for c in 0..n {
                kkt[(n + r, c)] = p.a_ineq[(i, c)];
                kkt[(c, n + r)] = p.a_ineq[(i, c)];
            }
            rhs[n + r] = p.b_ineq[i];
        }
        let lu = kkt.lu();
        let Some(sol) = lu.solve(&rhs) else { continue };
        if !sol.iter().all(|v| v.is_finite()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let duals = sol.rows(n + m_eq, act.len());
        if duals.iter().any(|l| *l < -1e-10) {
            continue;
        }
        let slack = &p.b_ineq - &p.a_ineq * &x;
        if slack.iter().any(|s| *s < -1e-9) {
            continue;
        }
        let f = p.objective(&x);
        if best.as_ref().map_or(true, |(_, fb)| f < *fb) {
            best = Some((x, f));
        }
    }
    best
}

/// Random point with all inequality slacks at least `margin`, found by
/// shrinking a random direction toward a strictly feasible anchor.
pub fn feasible_probe(p: &QpProblem, anchor: &DVector<f64>, rng: &mut ChaCha8Rng, radius: f64) -> DVector<f64> {
    let n = anchor.len();
    let mut d = random_vec(rng, n, radius);
    for _ in 0..60 {
        let y = anchor + &d;
        if (&p.b_ineq - &p.a_ineq * &y).iter().all(|s| *s > 0.0) {
            return y;
        }
        d *= 0.5;
    }
    anchor.clone()
}
