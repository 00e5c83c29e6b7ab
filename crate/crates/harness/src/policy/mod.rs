//! High-level policies producing a palm twist and fingertip velocities at
//! the command rate.

mod mlp;
mod scripted;

use std::sync::Arc;

use grasp_core::kinematics::{ChainState, Twist, TwistFrame};
use grasp_core::rewards::{LiftCommand, Mvbb, Observations};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{Scenario, Task};
use crate::HarnessError;

pub use mlp::{Activation, DenseLayer, MlpNet, MlpWeights, DEFAULT_HIDDEN};
pub use scripted::{ScriptedConfig, ScriptedPolicy};

/// What a policy sees at one command step.
///
/// `observations.hand` carries the current arm action only when passed to
/// [`Policy::hand_action`]; in [`Policy::arm_action`] that slot is zero.
pub struct PolicyInput<'a> {
    pub time: f64,
    pub task: Task,
    pub observations: &'a Observations,
    pub state: &'a ChainState<'a>,
    pub object: &'a Mvbb,
    pub target: &'a LiftCommand,
    pub n_contacts: usize,
    /// The harness has seen a grasp held long enough.
    pub grasp_latched: bool,
}

pub trait Policy: Send {
    /// Desired palm twist in the world frame.
    fn arm_action(&mut self, input: &PolicyInput<'_>) -> Twist;
    /// Desired palm-frame fingertip velocities, one per finger.
    fn hand_action(&mut self, input: &PolicyInput<'_>, arm_action: &Twist) -> Vec<Vector3<f64>>;
}

/// Always commands zero motion.
#[derive(Debug, Clone, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn arm_action(&mut self, _input: &PolicyInput<'_>) -> Twist {
        Twist::zero(TwistFrame::World)
    }

    fn hand_action(&mut self, input: &PolicyInput<'_>, _arm: &Twist) -> Vec<Vector3<f64>> {
        vec![Vector3::zeros(); input.state.model().fingers().len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomBounds {
    pub angular: f64,
    pub linear: f64,
    pub finger: f64,
}

impl Default for RandomBounds {
    fn default() -> Self {
        Self {
            angular: 1.0,
            linear: 0.5,
            finger: 0.2,
        }
    }
}

/// Componentwise uniform commands within fixed bounds.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    bounds: RandomBounds,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(bounds: RandomBounds, seed: u64) -> Self {
        Self {
            bounds,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn vec3(&mut self, bound: f64) -> Vector3<f64> {
        Vector3::from_fn(|_, _| self.rng.random_range(-bound..=bound))
    }
}

impl Policy for RandomPolicy {
    fn arm_action(&mut self, _input: &PolicyInput<'_>) -> Twist {
        let w = self.vec3(self.bounds.angular);
        let v = self.vec3(self.bounds.linear);
        Twist::new(w, v, TwistFrame::World)
    }

    fn hand_action(&mut self, input: &PolicyInput<'_>, _arm: &Twist) -> Vec<Vector3<f64>> {
        let b = self.bounds.finger;
        (0..input.state.model().fingers().len()).map(|_| self.vec3(b)).collect()
    }
}

/// Policy choice, instantiated fresh for every episode.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Zero,
    Random(RandomBounds),
    Scripted,
    Mlp(Arc<MlpWeights>),
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Zero => "zero",
            PolicySpec::Random(_) => "random",
            PolicySpec::Scripted => "scripted",
            PolicySpec::Mlp(_) => "mlp",
        }
    }

    pub fn build(&self, scenario: &Scenario, seed: u64) -> Result<Box<dyn Policy>, HarnessError> {
        Ok(match self {
            PolicySpec::Zero => Box::new(ZeroPolicy),
            // decorrelate from the episode sampler, which uses the same seed
            PolicySpec::Random(b) => Box::new(RandomPolicy::new(*b, seed ^ 0x9e37_79b9_7f4a_7c15)),
            PolicySpec::Scripted => Box::new(ScriptedPolicy::new(scenario.file.policy.clone())),
            PolicySpec::Mlp(w) => {
                w.check_shapes(&scenario.model)?;
                Box::new(mlp::MlpPolicy::new(Arc::clone(w)))
            }
        })
    }
}
