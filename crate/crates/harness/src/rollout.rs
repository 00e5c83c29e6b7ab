//! The two-rate rollout: the policy runs once per command period and the
//! QP controller plus plant run `substeps` times in between.

use grasp_core::ik::{collision_distances, control_step, ControlCommand, IkConfig};
use grasp_core::kinematics::{ChainState, Twist};
use grasp_core::plant::{self, PlantState};
use grasp_core::qp::QpStatus;
use grasp_core::rewards::{
    arm_total, assemble_observations, contact_proxy, hand_total, illegal_collision, pose_errors,
    smoothness_penalties, task_rewards, termination_penalty, ActionHistory, Observations, Regularization,
    TaskRewards,
};
use grasp_core::steer::{apf_modulate, ACTIVE_SLACK};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::{Policy, PolicyInput, PolicySpec};
use crate::scenario::{sample_episode, EpisodeSetup, Scenario, Task};
use crate::HarnessError;

/// Velocity overshoot tolerated before a step counts as a violation (rad/s).
pub const VELOCITY_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    /// Ran to the configured length.
    Completed,
    /// An illegal pair penetrated; the episode ended early.
    IllegalCollision,
    /// The policy produced a non-finite action; the episode ended early.
    PolicyNonFinite,
}

/// Audit of one controller step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstepRecord {
    pub time: f64,
    pub status: QpStatus,
    pub newton_iterations: usize,
    pub kkt_residual: f64,
    pub tracking_error: f64,
    pub command_norm: f64,
    /// Minimum predicted slack per family: collision, position, velocity.
    pub qp_slack: [f64; 3],
    /// Rows within the activity threshold per family.
    pub active: [usize; 3],
    /// `min(Γ(q_next)) − ε` after the plant step; infinite with no pairs.
    pub collision_slack: f64,
    /// Smallest distance of the integrated (pre-stop) positions to the joint range.
    pub position_margin: f64,
    /// Largest excess of `|q̇_des|` over the scaled limit.
    pub velocity_excess: f64,
    /// Palm-to-obstacle separation, when a field is configured.
    pub obstacle_separation: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRewards {
    pub task: Option<TaskRewards>,
    pub regularization: Regularization,
    pub arm_total: f64,
    pub hand_total: f64,
}

/// One command period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    /// State at the start of the period.
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    /// Policy output, flat `[ω; v; v_1; …]`.
    pub command: Vec<f64>,
    /// Command after the potential field, at the first controller step.
    pub applied_command: Vec<f64>,
    pub substeps: Vec<SubstepRecord>,
    pub rewards: StepRewards,
    pub n_contacts: usize,
    pub grasp_latched: bool,
    /// Sums of the arm, hand and critic observation vectors.
    pub observation_checksums: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub status: EpisodeStatus,
    pub success: bool,
    pub time_to_success: Option<f64>,
    /// Palm pose errors to the lift command at the end of the episode.
    pub position_error: f64,
    pub orientation_error: f64,
    pub command_steps: usize,
    pub controller_steps: usize,
    pub min_collision_slack: f64,
    pub min_position_margin: f64,
    pub max_velocity_excess: f64,
    /// Controller steps whose velocity excess is above the tolerance.
    pub velocity_violations: usize,
    /// Controller steps whose integrated positions left the joint range.
    pub position_violations: usize,
    pub qp_failures: usize,
    pub qp_max_iters: usize,
    pub min_obstacle_separation: Option<f64>,
    pub return_arm: f64,
    pub return_hand: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub setup: EpisodeSetup,
    pub policy: String,
    pub steps: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

/// Aggregate metrics over a batch of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub scenario: String,
    pub policy: String,
    pub episodes: usize,
    pub success_rate: f64,
    /// Mean over the successful episodes; `None` without any.
    pub mean_time_to_success: Option<f64>,
    /// Means over all episodes.
    pub mean_position_error: f64,
    pub mean_orientation_error: f64,
    pub aborted: usize,
    pub position_violations: usize,
    pub velocity_violations: usize,
    pub min_collision_slack: f64,
    pub per_episode: Vec<EpisodeSummary>,
}

impl BatchSummary {
    pub fn from_summaries(scenario: &str, policy: &str, eps: Vec<EpisodeSummary>) -> Self {
        let n = eps.len().max(1) as f64;
        let times: Vec<f64> = eps.iter().filter_map(|e| e.time_to_success).collect();
        Self {
            scenario: scenario.to_string(),
            policy: policy.to_string(),
            episodes: eps.len(),
            success_rate: eps.iter().filter(|e| e.success).count() as f64 / n,
            mean_time_to_success: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
            mean_position_error: eps.iter().map(|e| e.position_error).sum::<f64>() / n,
            mean_orientation_error: eps.iter().map(|e| e.orientation_error).sum::<f64>() / n,
            aborted: eps.iter().filter(|e| e.status != EpisodeStatus::Completed).count(),
            position_violations: eps.iter().map(|e| e.position_violations).sum(),
            velocity_violations: eps.iter().map(|e| e.velocity_violations).sum(),
            min_collision_slack: eps.iter().map(|e| e.min_collision_slack).fold(f64::INFINITY, f64::min),
            per_episode: eps,
        }
    }
}

fn arm_vector(t: &Twist) -> DVector<f64> {
    DVector::from_column_slice(t.to_vector().as_slice())
}

/// Runs one episode with a fresh policy from `spec`.
pub fn run_episode(scenario: &Scenario, spec: &PolicySpec, seed: u64) -> Result<RolloutRecord, HarnessError> {
    let mut policy = spec.build(scenario, seed)?;
    let setup = sample_episode(scenario, seed);
    run_episode_with(scenario, policy.as_mut(), spec.name(), setup)
}

/// Runs one episode for a given setup and policy instance.
pub fn run_episode_with(
    scenario: &Scenario,
    policy: &mut dyn Policy,
    policy_name: &str,
    setup: EpisodeSetup,
) -> Result<RolloutRecord, HarnessError> {
    let f = &scenario.file;
    let model = &scenario.model;
    let cm = &scenario.collision;
    let k = model.fingers().len();
    let n = model.dof();
    let ik: &IkConfig = &f.ik;
    let dt = f.controller_dt;
    let period = f.command_period;
    let vmax: DVector<f64> = model.velocity_upper() * ik.velocity_limit_scale;
    let vmin: DVector<f64> = model.velocity_lower() * ik.velocity_limit_scale;
    let (qlo, qhi) = (model.position_lower(), model.position_upper());

    let mut plant_state = PlantState::at_rest(scenario.initial_q());
    let mut history = ActionHistory::zeros(k);
    let mut warm: Option<DVector<f64>> = None;
    let mut steps = Vec::with_capacity(scenario.command_steps);
    let mut status = EpisodeStatus::Completed;

    let mut contact_time = 0.0;
    let mut latched = false;
    let mut time_to_success = None;
    let mut s = EpisodeSummary {
        seed: setup.seed,
        status,
        success: false,
        time_to_success: None,
        position_error: f64::NAN,
        orientation_error: f64::NAN,
        command_steps: 0,
        controller_steps: 0,
        min_collision_slack: f64::INFINITY,
        min_position_margin: f64::INFINITY,
        max_velocity_excess: 0.0,
        velocity_violations: 0,
        position_violations: 0,
        qp_failures: 0,
        qp_max_iters: 0,
        min_obstacle_separation: f.apf.as_ref().map(|_| f64::INFINITY),
        return_arm: 0.0,
        return_hand: 0.0,
    };

    'episode: for step in 0..scenario.command_steps {
        let time = step as f64 * period;
        let state = ChainState::new(model, &plant_state.q)?;
        let n_contacts = contact_proxy(&state, &setup.object, f.rewards.contact_tolerance);
        let zero_arm = DVector::zeros(6);
        let obs0 = assemble_observations(&state, &plant_state.qdot, &setup.object, &setup.target, &history, &zero_arm)?;
        let mut input = PolicyInput {
            time,
            task: f.task,
            observations: &obs0,
            state: &state,
            object: &setup.object,
            target: &setup.target,
            n_contacts,
            grasp_latched: latched,
        };
        let arm = policy.arm_action(&input);
        let arm_vec = arm_vector(&arm);
        let obs: Observations =
            assemble_observations(&state, &plant_state.qdot, &setup.object, &setup.target, &history, &arm_vec)?;
        input.observations = &obs;
        let hand = policy.hand_action(&input, &arm);
        if hand.len() != k {
            return Err(HarnessError::Policy(format!("policy returned {} fingertip velocities for {k} fingers", hand.len())));
        }
        let command = ControlCommand {
            palm_twist: arm,
            fingertip_velocities: hand,
        };
        if !command.is_finite() {
            status = EpisodeStatus::PolicyNonFinite;
            break 'episode;
        }
        let hand_vec = command.to_vector().rows(6, 3 * k).into_owned();

        let mut rec = StepRecord {
            step,
            time,
            q: plant_state.q.iter().copied().collect(),
            qdot: plant_state.qdot.iter().copied().collect(),
            command: command.to_vector().iter().copied().collect(),
            applied_command: Vec::new(),
            substeps: Vec::with_capacity(scenario.substeps),
            rewards: StepRewards::default(),
            n_contacts,
            grasp_latched: latched,
            observation_checksums: [obs.arm.sum(), obs.hand.sum(), obs.critic.sum()],
        };

        let mut illegal = false;
        for sub in 0..scenario.substeps {
            let sub_time = (step * scenario.substeps + sub) as f64 * dt;
            let palm = ChainState::new(model, &plant_state.q)?.palm_pose().translation;
            let applied = match &f.apf {
                Some(apf) => apf_modulate(&palm, &command, apf),
                None => command.clone(),
            };
            if sub == 0 {
                rec.applied_command = applied.to_vector().iter().copied().collect();
            }
            let out = control_step(model, cm, &plant_state.q, &applied, ik, warm.as_ref())?;
            let d = &out.diagnostics;
            match d.status {
                QpStatus::NumericalFailure => s.qp_failures += 1,
                QpStatus::MaxIters => s.qp_max_iters += 1,
                QpStatus::Converged => {}
            }
            warm = (d.status != QpStatus::NumericalFailure).then(|| out.qdot.clone());

            let velocity_excess = (0..n)
                .map(|j| (out.qdot[j] - vmax[j]).max(vmin[j] - out.qdot[j]))
                .fold(0.0f64, f64::max);
            let lagged = plant::lagged_velocity(&plant_state, &out.qdot, dt, f.lag_time_constant);
            let integrated = &plant_state.q + lagged * dt;
            let position_margin = (0..n)
                .map(|j| (integrated[j] - qlo[j]).min(qhi[j] - integrated[j]))
                .fold(f64::INFINITY, f64::min);

            let mut next = plant::step(model, &plant_state, &out.qdot, dt, f.lag_time_constant);
            next.time = sub_time + dt;
            let next_state = ChainState::new(model, &next.q)?;
            let dist = collision_distances(&next_state, cm);
            let collision_slack = dist.distances.iter().copied().fold(f64::INFINITY, f64::min) - ik.safety_margin;
            illegal |= illegal_collision(cm, &dist);
            let obstacle_separation = f.apf.as_ref().map(|a| a.separation(&next_state.palm_pose().translation));

            s.controller_steps += 1;
            s.min_collision_slack = s.min_collision_slack.min(collision_slack);
            s.min_position_margin = s.min_position_margin.min(position_margin);
            s.max_velocity_excess = s.max_velocity_excess.max(velocity_excess);
            s.velocity_violations += usize::from(velocity_excess > VELOCITY_TOLERANCE);
            s.position_violations += usize::from(position_margin < 0.0);
            if let (Some(m), Some(o)) = (s.min_obstacle_separation.as_mut(), obstacle_separation) {
                *m = m.min(o);
            }
            rec.substeps.push(SubstepRecord {
                time: sub_time,
                status: d.status,
                newton_iterations: out.solution.newton_iterations,
                kkt_residual: out.solution.kkt_residual,
                tracking_error: d.tracking_error,
                command_norm: d.command_norm,
                qp_slack: [d.min_collision_slack(), d.min_position_slack(), d.min_velocity_slack()],
                active: d.active_counts(ACTIVE_SLACK),
                collision_slack,
                position_margin,
                velocity_excess,
                obstacle_separation,
            });
            plant_state = next;
            if illegal {
                break;
            }
        }

        // rewards on the state reached at the end of the period
        let end_state = ChainState::new(model, &plant_state.q)?;
        let end_time = (step + 1) as f64 * period;
        let palm = end_state.palm_pose();
        let contacts_end = contact_proxy(&end_state, &setup.object, f.rewards.contact_tolerance);
        let task = task_rewards(palm, &setup.object, &setup.target, contacts_end, &f.rewards);
        let (a1, a2) = smoothness_penalties(&arm_vec, &history.arm_prev, &history.arm_prev2, period);
        let (h1, h2) = smoothness_penalties(&hand_vec, &history.hand_prev, &history.hand_prev2, period);
        let reg = Regularization {
            arm_first: a1,
            arm_second: a2,
            hand_first: h1,
            hand_second: h2,
            termination: termination_penalty(illegal),
        };
        rec.rewards = StepRewards {
            task: Some(task),
            regularization: reg,
            arm_total: arm_total(&task, &reg, &f.rewards.arm),
            hand_total: hand_total(&task, &reg, &f.rewards.hand),
        };
        s.return_arm += rec.rewards.arm_total;
        s.return_hand += rec.rewards.hand_total;
        history.push(arm_vec, hand_vec);

        let arrived = task.e_pos <= f.success.position_tolerance;
        match f.task {
            Task::Reach => {
                if arrived && time_to_success.is_none() {
                    time_to_success = Some(end_time);
                }
            }
            Task::Grasp => {
                if !latched {
                    if contacts_end >= f.success.min_contacts {
                        contact_time += period;
                    } else {
                        contact_time = 0.0;
                    }
                    latched = contact_time >= f.success.hold_time - 1e-9;
                }
                if latched && arrived && time_to_success.is_none() {
                    time_to_success = Some(end_time);
                }
            }
        }
        steps.push(rec);
        if illegal {
            status = EpisodeStatus::IllegalCollision;
            break;
        }
    }

    let end = ChainState::new(model, &plant_state.q)?;
    let (e_pos, e_ori) = pose_errors(end.palm_pose(), &setup.target);
    s.status = status;
    s.success = status == EpisodeStatus::Completed && time_to_success.is_some();
    s.time_to_success = if s.success { time_to_success } else { None };
    s.position_error = e_pos;
    s.orientation_error = e_ori;
    s.command_steps = steps.len();
    Ok(RolloutRecord {
        setup,
        policy: policy_name.to_string(),
        steps,
        summary: s,
    })
}

/// Worker count from the environment, or the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(crate::WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|n: &usize| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Episodes `seed, seed + 1, …` on a pool of `workers` threads. When
/// `keep_records` is false the per-step records are dropped after
/// summarizing.
pub fn run_batch(
    scenario: &Scenario,
    spec: &PolicySpec,
    n_episodes: usize,
    workers: usize,
    keep_records: bool,
) -> Result<(BatchSummary, Vec<RolloutRecord>), HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Io(format!("worker pool: {e}")))?;
    let base = scenario.file.seed;
    let records: Vec<RolloutRecord> = pool.install(|| {
        (0..n_episodes as u64)
            .into_par_iter()
            .map(|i| {
                let mut r = run_episode(scenario, spec, base.wrapping_add(i))?;
                if !keep_records {
                    r.steps = Vec::new();
                }
                Ok(r)
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let summary = BatchSummary::from_summaries(
        &scenario.file.name,
        spec.name(),
        records.iter().map(|r| r.summary.clone()).collect(),
    );
    Ok((summary, records))
}
