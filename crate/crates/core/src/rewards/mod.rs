//! Reward terms for the arm and hand agents, the bounding-box object model,
//! a geometric contact proxy and observation assembly.

mod observation;

use nalgebra::{DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ik::{CollisionDistances, CollisionModel};
use crate::kinematics::{axis_angle_magnitude, ChainState, FingerId, KinematicsError, RigidTransform};

pub use observation::{
    arm_observation_len, assemble_observations, hand_observation_len, ActionHistory, Observations,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid bounding box: {0}")]
    Mvbb(String),
    #[error("invalid reward configuration: {0}")]
    Config(String),
    #[error("{what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Oriented bounding box standing in for the object.
#[derive(Debug, Clone, PartialEq)]
pub struct Mvbb {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    /// Full edge lengths.
    pub dimensions: Vector3<f64>,
}

impl Mvbb {
    pub fn new(
        position: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
        dimensions: Vector3<f64>,
    ) -> Result<Self, RewardError> {
        if !dimensions.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(RewardError::Mvbb(format!("dimensions must be positive, got {dimensions:?}")));
        }
        if !position.iter().all(|p| p.is_finite()) {
            return Err(RewardError::Mvbb("position must be finite".into()));
        }
        Ok(Self {
            position,
            orientation,
            dimensions,
        })
    }

    /// Half the box diagonal.
    pub fn circumradius(&self) -> f64 {
        0.5 * self.dimensions.norm()
    }

    pub fn pose(&self) -> RigidTransform {
        RigidTransform::from_quaternion(&self.orientation, self.position)
    }

    /// Signed distance from `p` to the box surface; negative inside.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        let local = self.orientation.inverse_transform_vector(&(p - self.position));
        let q = local.abs() - 0.5 * self.dimensions;
        let outside = q.map(|v| v.max(0.0)).norm();
        let inside = q.max().min(0.0);
        outside + inside
    }

    /// Applies a rigid motion to the box.
    pub fn transformed(&self, t: &RigidTransform) -> Mvbb {
        Mvbb {
            position: t.transform_point(&self.position),
            orientation: t.quaternion() * self.orientation,
            dimensions: self.dimensions,
        }
    }
}

/// Target palm pose after a grasp.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftCommand {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl LiftCommand {
    pub fn transformed(&self, t: &RigidTransform) -> LiftCommand {
        LiftCommand {
            position: t.transform_point(&self.position),
            orientation: t.quaternion() * self.orientation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmWeights {
    pub distance: f64,
    pub alignment: f64,
    pub grasp: f64,
    pub lift: f64,
    pub smoothness_first: f64,
    pub smoothness_second: f64,
    pub termination: f64,
}

impl Default for ArmWeights {
    fn default() -> Self {
        Self {
            distance: 1.0,
            alignment: 1.0,
            grasp: 1.0,
            lift: 10.0,
            smoothness_first: 2e-5,
            smoothness_second: 2e-6,
            termination: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandWeights {
    pub grasp: f64,
    pub smoothness_first: f64,
    pub smoothness_second: f64,
    pub termination: f64,
}

impl Default for HandWeights {
    fn default() -> Self {
        Self {
            grasp: 2.0,
            smoothness_first: 1e-5,
            smoothness_second: 1e-6,
            termination: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Finger length (m).
    pub finger_length: f64,
    /// Gaussian widths; squared units (m² or rad²).
    pub sigma_dist: f64,
    pub sigma_align: f64,
    pub sigma_pos: f64,
    pub sigma_ori: f64,
    /// Angular deadband (rad).
    pub angle_deadband: f64,
    /// Fingertip-to-box distance counted as contact (m).
    pub contact_tolerance: f64,
    pub arm: ArmWeights,
    pub hand: HandWeights,
}

impl Default for RewardConfig {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            finger_length: 0.12,
            sigma_dist: 0.01,
            sigma_align: (PI / 3.0).powi(2),
            sigma_pos: 0.01,
            sigma_ori: (PI / 4.0).powi(2),
            angle_deadband: 30f64.to_radians(),
            contact_tolerance: 0.005,
            arm: ArmWeights::default(),
            hand: HandWeights::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let widths = [self.sigma_dist, self.sigma_align, self.sigma_pos, self.sigma_ori];
        if !widths.iter().all(|w| *w > 0.0) {
            return Err(RewardError::Config("gaussian widths must be positive".into()));
        }
        if !(self.finger_length > 0.0 && self.contact_tolerance > 0.0 && self.angle_deadband >= 0.0) {
            return Err(RewardError::Config(
                "finger_length and contact_tolerance must be positive, angle_deadband non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Radius of the zone around the object where the distance reward saturates.
    pub fn golden_radius(&self, mvbb: &Mvbb) -> f64 {
        mvbb.circumradius() + 0.5 * self.finger_length
    }
}

pub fn golden_zone_reward(p_palm: &Vector3<f64>, mvbb: &Mvbb, cfg: &RewardConfig) -> f64 {
    let d = (mvbb.position - p_palm).norm();
    let excess = (d - cfg.golden_radius(mvbb)).max(0.0);
    (-excess * excess / cfg.sigma_dist).exp()
}

/// Angle between the palm normal and the palm-to-object direction, or `None`
/// when the palm sits at the object center.
pub fn palm_object_angle(palm: &RigidTransform, mvbb: &Mvbb) -> Option<f64> {
    let p = mvbb.position - palm.translation;
    let d = p.norm();
    if d <= 0.0 {
        return None;
    }
    let z = palm.rotation.column(2).into_owned();
    Some((z.dot(&p) / d).clamp(-1.0, 1.0).acos())
}

pub fn alignment_reward(palm: &RigidTransform, mvbb: &Mvbb, r_dist: f64, cfg: &RewardConfig) -> f64 {
    match palm_object_angle(palm, mvbb) {
        None => r_dist,
        Some(theta) => {
            let excess = (theta - cfg.angle_deadband).max(0.0);
            r_dist * (-excess * excess / cfg.sigma_align).exp()
        }
    }
}

pub fn grasp_indicator(d_po: f64, golden_radius: f64, n_contacts: usize) -> bool {
    d_po < golden_radius && n_contacts > 2
}

pub fn grasp_reward(grasped: bool, n_contacts: usize) -> f64 {
    if grasped {
        n_contacts.min(7) as f64
    } else {
        0.0
    }
}

/// Position error and rotation angle between the palm and the command.
pub fn pose_errors(palm: &RigidTransform, cmd: &LiftCommand) -> (f64, f64) {
    let e_pos = (palm.translation - cmd.position).norm();
    let e_ori = axis_angle_magnitude(&(cmd.orientation * palm.quaternion().inverse()));
    (e_pos, e_ori)
}

pub fn lift_reward(palm: &RigidTransform, cmd: &LiftCommand, grasped: bool, cfg: &RewardConfig) -> f64 {
    if !grasped {
        return 0.0;
    }
    let (e_pos, e_ori) = pose_errors(palm, cmd);
    0.7 * (-e_pos * e_pos / cfg.sigma_pos).exp() + 0.3 * (-e_ori * e_ori / cfg.sigma_ori).exp()
}

/// First- and second-order action smoothness penalties (non-positive).
pub fn smoothness_penalties(
    a_t: &DVector<f64>,
    a_prev: &DVector<f64>,
    a_prev2: &DVector<f64>,
    dt: f64,
) -> (f64, f64) {
    let first = ((a_t - a_prev) / dt).norm_squared();
    let second = ((a_t - a_prev * 2.0 + a_prev2) / dt).norm_squared();
    (-first, -second)
}

pub fn termination_penalty(illegal: bool) -> f64 {
    if illegal {
        -1.0
    } else {
        0.0
    }
}

/// True when a pair flagged illegal has penetrated.
pub fn illegal_collision(cm: &CollisionModel, distances: &CollisionDistances) -> bool {
    cm.pairs
        .iter()
        .zip(distances.distances.iter())
        .any(|(p, d)| p.illegal && *d < 0.0)
}

/// Fingertips whose signed distance to the box is at most `tolerance`.
pub fn contact_proxy(state: &ChainState<'_>, mvbb: &Mvbb, tolerance: f64) -> usize {
    (0..state.model().fingers().len())
        .filter(|&i| {
            let tip = state
                .fingertip_pose(FingerId(i))
                .expect("finger index in range")
                .translation;
            mvbb.signed_distance(&tip) <= tolerance
        })
        .count()
}

/// Unweighted task terms at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskRewards {
    pub distance: f64,
    pub alignment: f64,
    pub grasp: f64,
    pub lift: f64,
    pub n_contacts: usize,
    pub grasped: bool,
    pub d_po: f64,
    pub e_pos: f64,
    pub e_ori: f64,
}

pub fn task_rewards(palm: &RigidTransform, mvbb: &Mvbb, cmd: &LiftCommand, n_contacts: usize, cfg: &RewardConfig) -> TaskRewards {
    let distance = golden_zone_reward(&palm.translation, mvbb, cfg);
    let alignment = alignment_reward(palm, mvbb, distance, cfg);
    let d_po = (mvbb.position - palm.translation).norm();
    let grasped = grasp_indicator(d_po, cfg.golden_radius(mvbb), n_contacts);
    let (e_pos, e_ori) = pose_errors(palm, cmd);
    TaskRewards {
        distance,
        alignment,
        grasp: grasp_reward(grasped, n_contacts),
        lift: lift_reward(palm, cmd, grasped, cfg),
        n_contacts,
        grasped,
        d_po,
        e_pos,
        e_ori,
    }
}

/// Penalty terms shared by both agents' totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub arm_first: f64,
    pub arm_second: f64,
    pub hand_first: f64,
    pub hand_second: f64,
    pub termination: f64,
}

pub fn arm_total(t: &TaskRewards, r: &Regularization, w: &ArmWeights) -> f64 {
    w.distance * t.distance
        + w.alignment * t.alignment
        + w.grasp * t.grasp
        + w.lift * t.lift
        + w.smoothness_first * r.arm_first
        + w.smoothness_second * r.arm_second
        + w.termination * r.termination
}

pub fn hand_total(t: &TaskRewards, r: &Regularization, w: &HandWeights) -> f64 {
    w.grasp * t.grasp
        + w.smoothness_first * r.hand_first
        + w.smoothness_second * r.hand_second
        + w.termination * r.termination
}
