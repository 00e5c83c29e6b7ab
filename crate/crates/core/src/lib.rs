//! Control stack below a learned grasping policy: serial-chain kinematics,
//! a relaxed-barrier interior-point QP solver, velocity IK, a kinematic
//! plant, reward and observation machinery, and steerability tools.

pub mod kinematics;
pub mod qp;
pub mod ik;
pub mod plant;
pub mod rewards;
pub mod steer;
