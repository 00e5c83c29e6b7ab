use nalgebra::{DVector, UnitQuaternion};

use crate::kinematics::{quat_to_wxyz, twist_world_to_palm, ChainState, Twist, TwistFrame};

use super::{LiftCommand, Mvbb, RewardError};

/// Object pose, dimensions, lift command and one previous action.
const ARM_EXTRA: usize = 3 + 4 + 3 + 7 + 6;
/// Object pose and dimensions in the palm frame, palm twist, current arm action.
const HAND_EXTRA: usize = 3 + 4 + 3 + 6 + 6;

pub fn arm_observation_len(dof: usize) -> usize {
    2 * dof + ARM_EXTRA
}

pub fn hand_observation_len(hand_dof: usize, n_fingers: usize) -> usize {
    2 * hand_dof + 3 * n_fingers + HAND_EXTRA
}

/// Actions of the last two command periods for both agents.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionHistory {
    pub arm_prev: DVector<f64>,
    pub arm_prev2: DVector<f64>,
    pub hand_prev: DVector<f64>,
    pub hand_prev2: DVector<f64>,
}

impl ActionHistory {
    pub fn zeros(n_fingers: usize) -> Self {
        Self {
            arm_prev: DVector::zeros(6),
            arm_prev2: DVector::zeros(6),
            hand_prev: DVector::zeros(3 * n_fingers),
            hand_prev2: DVector::zeros(3 * n_fingers),
        }
    }

    /// Shifts in the actions applied this period.
    pub fn push(&mut self, arm: DVector<f64>, hand: DVector<f64>) {
        self.arm_prev2 = std::mem::replace(&mut self.arm_prev, arm);
        self.hand_prev2 = std::mem::replace(&mut self.hand_prev, hand);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub arm: DVector<f64>,
    pub hand: DVector<f64>,
    /// Global critic input: the arm observation followed by the previous hand action.
    pub critic: DVector<f64>,
}

/// `w ≥ 0` representative of `±q`.
fn canonical_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let c = quat_to_wxyz(q);
    if c[0] < 0.0 {
        c.map(|v| -v)
    } else {
        c
    }
}

fn check_len(what: &'static str, v: &DVector<f64>, expected: usize) -> Result<(), RewardError> {
    if v.len() != expected {
        return Err(RewardError::Dimension {
            what,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

/// Builds the arm, hand and critic observation vectors.
///
/// `arm_action` is the palm twist command issued this period; the hand
/// observation carries it so the fingers can anticipate the base motion.
pub fn assemble_observations(
    state: &ChainState<'_>,
    qdot: &DVector<f64>,
    mvbb: &Mvbb,
    cmd: &LiftCommand,
    history: &ActionHistory,
    arm_action: &DVector<f64>,
) -> Result<Observations, RewardError> {
    let model = state.model();
    let n = model.dof();
    let n_arm = model.arm_dof();
    let k = model.fingers().len();
    check_len("joint velocities", qdot, n)?;
    check_len("previous arm action", &history.arm_prev, 6)?;
    check_len("previous hand action", &history.hand_prev, 3 * k)?;
    check_len("current arm action", arm_action, 6)?;
    let q_ref = state.joint_positions();

    let mut arm = Vec::with_capacity(arm_observation_len(n));
    arm.extend(q_ref.iter());
    arm.extend(qdot.iter());
    arm.extend(mvbb.position.iter());
    arm.extend(canonical_wxyz(&mvbb.orientation));
    arm.extend(mvbb.dimensions.iter());
    arm.extend(cmd.position.iter());
    arm.extend(canonical_wxyz(&cmd.orientation));
    arm.extend(history.arm_prev.iter());

    let palm = state.palm_pose();
    let palm_inv = palm.inverse();
    let jp = state.palm_jacobian();
    let world_twist = jp * qdot;
    let palm_twist = twist_world_to_palm(
        palm,
        &Twist::from_vector(&world_twist.fixed_rows::<6>(0).into_owned(), TwistFrame::World),
    );
    let obj_in_palm = palm.quaternion().inverse() * mvbb.orientation;

    let mut hand = Vec::with_capacity(hand_observation_len(n - n_arm, k));
    hand.extend(q_ref.iter().skip(n_arm));
    hand.extend(qdot.iter().skip(n_arm));
    hand.extend(history.hand_prev.iter());
    hand.extend(palm_inv.transform_point(&mvbb.position).iter());
    hand.extend(canonical_wxyz(&obj_in_palm));
    hand.extend(mvbb.dimensions.iter());
    hand.extend(palm_twist.to_vector().iter());
    hand.extend(arm_action.iter());

    let mut critic = arm.clone();
    critic.extend(history.hand_prev.iter());

    Ok(Observations {
        arm: DVector::from_vec(arm),
        hand: DVector::from_vec(hand),
        critic: DVector::from_vec(critic),
    })
}
