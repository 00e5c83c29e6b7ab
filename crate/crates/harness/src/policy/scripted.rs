use std::f64::consts::{FRAC_PI_2, PI};

use grasp_core::kinematics::{FingerId, RigidTransform, Twist, TwistFrame};
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyInput};
use crate::scenario::{palm_down, Task};
use crate::HarnessError;

/// Gains and limits of the waypoint policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedConfig {
    pub linear_gain: f64,
    pub max_linear: f64,
    pub angular_gain: f64,
    pub max_angular: f64,
    pub finger_gain: f64,
    pub max_finger: f64,
    /// Height of the palm surface above the box top before closing (m).
    pub clearance: f64,
    /// Distance to the pre-grasp point at which the fingers start closing (m).
    pub arrive_tolerance: f64,
    /// A fingertip this close to the box surface stops moving (m).
    pub touch_distance: f64,
    /// Lowest palm height above the table for the pre-grasp pose, leaving
    /// room for the fingers below the palm (m).
    pub min_palm_height: f64,
}

impl Default for ScriptedConfig {
    fn default() -> Self {
        Self {
            linear_gain: 3.0,
            max_linear: 0.4,
            angular_gain: 2.0,
            max_angular: 1.0,
            finger_gain: 3.0,
            max_finger: 0.15,
            clearance: 0.02,
            arrive_tolerance: 0.01,
            touch_distance: 0.002,
            min_palm_height: 0.09,
        }
    }
}

impl ScriptedConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let all = [
            self.linear_gain,
            self.max_linear,
            self.angular_gain,
            self.max_angular,
            self.finger_gain,
            self.max_finger,
            self.arrive_tolerance,
            self.touch_distance,
        ];
        if !all.iter().all(|v| *v > 0.0 && v.is_finite())
            || !self.clearance.is_finite()
            || !self.min_palm_height.is_finite()
        {
            return Err(HarnessError::Scenario("policy gains and limits must be positive".into()));
        }
        Ok(())
    }
}

fn clip(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Reach, close, lift. Phases advance on geometric events; the lift starts
/// once the harness reports a latched grasp.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    cfg: ScriptedConfig,
    closing: bool,
}

impl ScriptedPolicy {
    pub fn new(cfg: ScriptedConfig) -> Self {
        Self { cfg, closing: false }
    }

    fn servo(&self, palm: &RigidTransform, p: &Vector3<f64>, q: &UnitQuaternion<f64>) -> Twist {
        let v = clip((p - palm.translation) * self.cfg.linear_gain, self.cfg.max_linear);
        let err = (q * palm.quaternion().inverse()).scaled_axis();
        let w = clip(err * self.cfg.angular_gain, self.cfg.max_angular);
        Twist::new(w, v, TwistFrame::World)
    }

    /// Palm pose above the box with the finger axis across the shorter
    /// horizontal edge.
    fn pregrasp(&self, input: &PolicyInput<'_>) -> (Vector3<f64>, UnitQuaternion<f64>) {
        let o = input.object;
        let (_, _, mut yaw) = o.orientation.euler_angles();
        if o.dimensions.x > o.dimensions.y {
            yaw += FRAC_PI_2;
        }
        // the palm is symmetric under a half turn; pick the smaller rotation
        let yaw = yaw - PI * (yaw / PI).round();
        let top = o.position.z + 0.5 * o.dimensions.z;
        let p = Vector3::new(o.position.x, o.position.y, (top + self.cfg.clearance).max(self.cfg.min_palm_height));
        (p, palm_down(yaw))
    }
}

impl Policy for ScriptedPolicy {
    fn arm_action(&mut self, input: &PolicyInput<'_>) -> Twist {
        let palm = input.state.palm_pose();
        match input.task {
            Task::Reach => self.servo(palm, &input.target.position, &input.target.orientation),
            Task::Grasp if input.grasp_latched => self.servo(palm, &input.target.position, &input.target.orientation),
            Task::Grasp => {
                let (p, q) = self.pregrasp(input);
                if (p - palm.translation).norm() <= self.cfg.arrive_tolerance {
                    self.closing = true;
                }
                self.servo(palm, &p, &q)
            }
        }
    }

    fn hand_action(&mut self, input: &PolicyInput<'_>, _arm: &Twist) -> Vec<Vector3<f64>> {
        let n = input.state.model().fingers().len();
        if input.task == Task::Reach || input.grasp_latched || !self.closing {
            return vec![Vector3::zeros(); n];
        }
        let palm_inv = input.state.palm_pose().inverse();
        let center = palm_inv.transform_point(&input.object.position);
        (0..n)
            .map(|i| {
                let tip = input.state.fingertip_pose(FingerId(i)).expect("finger index in range").translation;
                if input.object.signed_distance(&tip) <= self.cfg.touch_distance {
                    Vector3::zeros()
                } else {
                    clip((center - palm_inv.transform_point(&tip)) * self.cfg.finger_gain, self.cfg.max_finger)
                }
            })
            .collect()
    }
}
