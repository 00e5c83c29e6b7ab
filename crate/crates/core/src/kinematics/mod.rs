//! Serial-chain forward kinematics and Jacobians.
//!
//! All Jacobians use the world-aligned convention: columns map joint rates to
//! `[ω; v]`, where `v` is the velocity of the frame origin. Under this
//! convention the fingertip twist splits as
//!
//! ```text
//! ᵂV_F = [I 0; −[p_F/P]× I] ᵂV_P + blkdiag(R, R) ᴾV_F/P
//! ```
//!
//! and the palm-relative fingertip Jacobian follows by solving for `ᴾV_F/P`.

mod chain;
mod transform;

use nalgebra::{DVector, Matrix3, Matrix3xX, Matrix6xX, Vector3};
use thiserror::Error;

pub use chain::{
    ChainDescription, ChainModel, Finger, FingerDescription, FingerId, Frame, FrameDescription,
    FrameId, Joint, JointDescription, Platform, BASE_FRAME,
};
pub use transform::{
    axis_angle_magnitude, polar_rotation, quat_from_wxyz, quat_to_wxyz, skew, RigidTransform,
    Twist, TwistFrame, ORTHONORMAL_DRIFT_LIMIT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("chain file parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("unknown frame {0}")]
    UnknownFrame(String),
    #[error("unknown finger {0}")]
    UnknownFinger(String),
    #[error("invalid joint {name}: {reason}")]
    InvalidJoint { name: String, reason: String },
    #[error("invalid chain structure: {0}")]
    Structure(String),
    #[error("platform mismatch: {0}")]
    PlatformMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// World poses of every frame of a model at one configuration.
#[derive(Debug, Clone)]
pub struct ChainState<'m> {
    model: &'m ChainModel,
    q: DVector<f64>,
    poses: Vec<RigidTransform>,
}

impl<'m> ChainState<'m> {
    pub fn new(model: &'m ChainModel, q: &DVector<f64>) -> Result<Self, KinematicsError> {
        Self::with_base(model, q, &RigidTransform::identity())
    }

    /// Poses with the chain base placed at `base` instead of the world origin.
    pub fn with_base(
        model: &'m ChainModel,
        q: &DVector<f64>,
        base: &RigidTransform,
    ) -> Result<Self, KinematicsError> {
        model.check_dimension(q)?;
        let mut poses: Vec<RigidTransform> = Vec::with_capacity(model.frames().len());
        for frame in model.frames() {
            let parent = match frame.parent {
                Some(p) => poses[p.0],
                None => *base,
            };
            let mut local = frame.origin;
            if let Some(j) = frame.joint {
                let joint = &model.joints()[j];
                local = local.compose(&RigidTransform::from_axis_angle(&joint.axis, q[j]));
            }
            poses.push(parent.compose(&local));
        }
        Ok(Self {
            model,
            q: q.clone(),
            poses,
        })
    }

    pub fn model(&self) -> &'m ChainModel {
        self.model
    }

    pub fn joint_positions(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn pose(&self, frame: FrameId) -> &RigidTransform {
        &self.poses[frame.0]
    }

    pub fn palm_pose(&self) -> &RigidTransform {
        &self.poses[self.model.palm().0]
    }

    pub fn fingertip_pose(&self, finger: FingerId) -> Result<&RigidTransform, KinematicsError> {
        Ok(&self.poses[self.model.finger(finger)?.tip.0])
    }

    /// World axis and anchor point of joint `j`.
    fn joint_axis_point(&self, j: usize) -> (Vector3<f64>, Vector3<f64>) {
        let joint = &self.model.joints()[j];
        let pose = &self.poses[joint.frame.0];
        (pose.rotation * joint.axis, pose.translation)
    }

    /// Linear-velocity Jacobian of a world point rigidly attached to `frame`.
    pub fn point_jacobian(&self, frame: FrameId, point_world: &Vector3<f64>) -> Matrix3xX<f64> {
        let mut jac = Matrix3xX::zeros(self.model.dof());
        for &j in self.model.path(frame) {
            let (axis, anchor) = self.joint_axis_point(j);
            jac.set_column(j, &axis.cross(&(point_world - anchor)));
        }
        jac
    }

    /// World-aligned `[ω; v]` Jacobian of a frame origin.
    pub fn frame_jacobian(&self, frame: FrameId) -> Matrix6xX<f64> {
        let p = self.poses[frame.0].translation;
        let mut jac = Matrix6xX::zeros(self.model.dof());
        for &j in self.model.path(frame) {
            let (axis, anchor) = self.joint_axis_point(j);
            let lin = axis.cross(&(p - anchor));
            let mut col = jac.column_mut(j);
            col[0] = axis.x;
            col[1] = axis.y;
            col[2] = axis.z;
            col[3] = lin.x;
            col[4] = lin.y;
            col[5] = lin.z;
        }
        jac
    }

    pub fn palm_jacobian(&self) -> Matrix6xX<f64> {
        self.frame_jacobian(self.model.palm())
    }

    /// Fingertip twist relative to the palm, expressed in the palm frame.
    pub fn fingertip_relative_jacobian(
        &self,
        finger: FingerId,
    ) -> Result<Matrix6xX<f64>, KinematicsError> {
        let tip = self.model.finger(finger)?.tip;
        let palm = self.palm_pose();
        let tip_pose = &self.poses[tip.0];
        let jac_f = self.frame_jacobian(tip);
        let jac_p = self.palm_jacobian();
        let shift = skew(&(tip_pose.translation - palm.translation));
        let rt = palm.rotation.transpose();

        let n = self.model.dof();
        let mut out = Matrix6xX::zeros(n);
        for c in 0..n {
            let wf = jac_f.fixed_view::<3, 1>(0, c);
            let vf = jac_f.fixed_view::<3, 1>(3, c);
            let wp = jac_p.fixed_view::<3, 1>(0, c);
            let vp = jac_p.fixed_view::<3, 1>(3, c);
            let dw = wf - wp;
            let dv = vf - (vp - shift * wp);
            out.fixed_view_mut::<3, 1>(0, c).copy_from(&(rt * dw));
            out.fixed_view_mut::<3, 1>(3, c).copy_from(&(rt * dv));
        }
        Ok(out)
    }

    /// Translational block (bottom three rows) of the relative fingertip Jacobian.
    pub fn fingertip_linear_jacobian(
        &self,
        finger: FingerId,
    ) -> Result<Matrix3xX<f64>, KinematicsError> {
        let full = self.fingertip_relative_jacobian(finger)?;
        Ok(full.fixed_rows::<3>(3).into_owned())
    }

    /// Fingertip position in the palm frame.
    pub fn fingertip_in_palm(&self, finger: FingerId) -> Result<Vector3<f64>, KinematicsError> {
        let tip = self.fingertip_pose(finger)?.translation;
        Ok(self.palm_pose().inverse().transform_point(&tip))
    }
}

pub fn forward_kinematics(
    model: &ChainModel,
    q: &DVector<f64>,
    frame: FrameId,
) -> Result<RigidTransform, KinematicsError> {
    model.frame(frame)?;
    Ok(*ChainState::new(model, q)?.pose(frame))
}

pub fn palm_jacobian_world(
    model: &ChainModel,
    q: &DVector<f64>,
) -> Result<Matrix6xX<f64>, KinematicsError> {
    Ok(ChainState::new(model, q)?.palm_jacobian())
}

pub fn fingertip_jacobian_relative(
    model: &ChainModel,
    q: &DVector<f64>,
    finger: FingerId,
) -> Result<Matrix6xX<f64>, KinematicsError> {
    model.finger(finger)?;
    ChainState::new(model, q)?.fingertip_relative_jacobian(finger)
}

pub fn fingertip_jacobian_linear(
    model: &ChainModel,
    q: &DVector<f64>,
    finger: FingerId,
) -> Result<Matrix3xX<f64>, KinematicsError> {
    model.finger(finger)?;
    ChainState::new(model, q)?.fingertip_linear_jacobian(finger)
}

/// `blkdiag(Rᵀ, Rᵀ)`-rotation of a world twist into the palm frame.
pub fn twist_world_to_palm(palm: &RigidTransform, twist: &Twist) -> Twist {
    let rt: Matrix3<f64> = palm.rotation.transpose();
    Twist::new(rt * twist.angular, rt * twist.linear, TwistFrame::Palm)
}
