//! Delimited step logs and the episode summary document.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use grasp_core::qp::QpStatus;
use grasp_core::steer::ProfileSample;
use serde::{Deserialize, Serialize};

use crate::rollout::{BatchSummary, RolloutRecord};
use crate::HarnessError;

/// One controller step, flattened for CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub seed: u64,
    pub step: usize,
    pub substep: usize,
    pub time: f64,
    pub status: QpStatus,
    pub newton_iterations: usize,
    pub kkt_residual: f64,
    pub command_norm: f64,
    pub tracking_error: f64,
    pub qp_collision_slack: f64,
    pub qp_position_slack: f64,
    pub qp_velocity_slack: f64,
    pub active_collision: usize,
    pub active_position: usize,
    pub active_velocity: usize,
    pub collision_slack: f64,
    pub position_margin: f64,
    pub velocity_excess: f64,
    pub obstacle_separation: Option<f64>,
    pub n_contacts: usize,
    pub grasp_latched: bool,
    pub r_distance: f64,
    pub r_alignment: f64,
    pub r_grasp: f64,
    pub r_lift: f64,
    pub arm_reward: f64,
    pub hand_reward: f64,
    pub position_error: f64,
    pub orientation_error: f64,
}

impl StepRow {
    pub fn profile_sample(&self) -> ProfileSample {
        ProfileSample {
            command_norm: self.command_norm,
            tracking_error: self.tracking_error,
            active: [self.active_collision, self.active_position, self.active_velocity],
        }
    }
}

pub fn rows(record: &RolloutRecord) -> impl Iterator<Item = StepRow> + '_ {
    let seed = record.setup.seed;
    record.steps.iter().flat_map(move |st| {
        let t = st.rewards.task;
        st.substeps.iter().enumerate().map(move |(i, sub)| StepRow {
            seed,
            step: st.step,
            substep: i,
            time: sub.time,
            status: sub.status,
            newton_iterations: sub.newton_iterations,
            kkt_residual: sub.kkt_residual,
            command_norm: sub.command_norm,
            tracking_error: sub.tracking_error,
            qp_collision_slack: sub.qp_slack[0],
            qp_position_slack: sub.qp_slack[1],
            qp_velocity_slack: sub.qp_slack[2],
            active_collision: sub.active[0],
            active_position: sub.active[1],
            active_velocity: sub.active[2],
            collision_slack: sub.collision_slack,
            position_margin: sub.position_margin,
            velocity_excess: sub.velocity_excess,
            obstacle_separation: sub.obstacle_separation,
            n_contacts: st.n_contacts,
            grasp_latched: st.grasp_latched,
            r_distance: t.map_or(0.0, |t| t.distance),
            r_alignment: t.map_or(0.0, |t| t.alignment),
            r_grasp: t.map_or(0.0, |t| t.grasp),
            r_lift: t.map_or(0.0, |t| t.lift),
            arm_reward: st.rewards.arm_total,
            hand_reward: st.rewards.hand_total,
            position_error: t.map_or(f64::NAN, |t| t.e_pos),
            orientation_error: t.map_or(f64::NAN, |t| t.e_ori),
        })
    })
}

fn io(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

pub fn write_step_log(path: &Path, records: &[RolloutRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    for r in records {
        for row in rows(r) {
            w.serialize(row).map_err(|e| io(path, e))?;
        }
    }
    w.flush().map_err(|e| io(path, e))
}

pub fn read_step_log(path: &Path) -> Result<Vec<StepRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<StepRow>, _>>()
        .map_err(|e| HarnessError::Log(format!("{}: {e}", path.display())))
}

pub fn write_summary(path: &Path, summary: &BatchSummary) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, summary).map_err(|e| io(path, e))?;
    writeln!(w).map_err(|e| io(path, e))
}

pub fn read_summary(path: &Path) -> Result<BatchSummary, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Log(format!("{}: {e}", path.display())))
}
