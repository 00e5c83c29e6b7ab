//! Velocity-driven kinematic plant.
//!
//! Joint velocities follow the commanded ones through a first-order lag and
//! positions integrate them, clamped to the joint range. The PD torque law is
//! evaluated for logging; it does not drive the motion.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::kinematics::ChainModel;

pub const DEFAULT_DT: f64 = 0.002;
pub const DEFAULT_LAG: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
    /// Constant feedforward torque; stands in for gravity compensation.
    pub tau_ff: DVector<f64>,
}

impl PdGains {
    pub fn uniform(n: usize, kp: f64, kd: f64) -> Self {
        Self {
            kp: DVector::from_element(n, kp),
            kd: DVector::from_element(n, kd),
            tau_ff: DVector::zeros(n),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.kp.len() == self.kd.len()
            && self.kp.len() == self.tau_ff.len()
            && self.kp.iter().chain(self.kd.iter()).all(|g| *g >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub time: f64,
}

impl PlantState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
            time: 0.0,
        }
    }
}

/// `q + q̇_des·dt`.
pub fn integrate_desired(q: &DVector<f64>, qdot_des: &DVector<f64>, dt: f64) -> DVector<f64> {
    q + qdot_des * dt
}

/// `Kp(q_des − q) + Kd(q̇_des − q̇) + τ_ff`.
pub fn pd_torque(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    q_des: &DVector<f64>,
    qdot_des: &DVector<f64>,
    gains: &PdGains,
) -> DVector<f64> {
    gains.kp.component_mul(&(q_des - q)) + gains.kd.component_mul(&(qdot_des - qdot)) + &gains.tau_ff
}

/// Velocity after one lag step, before any joint stop acts. A non-positive
/// `lag` means the command is realized instantly.
pub fn lagged_velocity(state: &PlantState, qdot_des: &DVector<f64>, dt: f64, lag: f64) -> DVector<f64> {
    let blend = if lag > 0.0 { (dt / lag).min(1.0) } else { 1.0 };
    &state.qdot + (qdot_des - &state.qdot) * blend
}

/// Advances the plant by `dt`.
pub fn step(model: &ChainModel, state: &PlantState, qdot_des: &DVector<f64>, dt: f64, lag: f64) -> PlantState {
    debug_assert!(dt > 0.0);
    let mut qdot = lagged_velocity(state, qdot_des, dt, lag);
    let mut q = &state.q + &qdot * dt;
    for (j, joint) in model.joints().iter().enumerate() {
        let clamped = q[j].clamp(joint.position_lower, joint.position_upper);
        if clamped != q[j] {
            q[j] = clamped;
            // the joint stopped at its stop; report the velocity actually realized
            qdot[j] = (clamped - state.q[j]) / dt;
        }
    }
    PlantState {
        q,
        qdot,
        time: state.time + dt,
    }
}
