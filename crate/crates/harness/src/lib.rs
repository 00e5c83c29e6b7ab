//! Scenario loading, policies, the two-rate rollout loop, batch metrics and
//! log output for the grasp controller.

pub mod logs;
pub mod policy;
pub mod rollout;
pub mod scenario;

use grasp_core::ik::IkError;
use grasp_core::kinematics::KinematicsError;
use grasp_core::qp::QpError;
use grasp_core::rewards::RewardError;
use grasp_core::steer::SteerError;
use thiserror::Error;

pub use policy::{Policy, PolicySpec};
pub use rollout::{run_batch, run_episode, BatchSummary, EpisodeStatus, EpisodeSummary, RolloutRecord};
pub use scenario::{Scenario, Task};

/// Environment variable selecting the worker count of batch rollouts.
pub const WORKERS_ENV: &str = "GRASP_WORKERS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Io(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Ik(#[from] IkError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Steer(#[from] SteerError),
    #[error("log: {0}")]
    Log(String),
}
