//! Serial-chain model of an arm carrying a multi-fingered hand, and its
//! TOML description format.
//!
//! Frames are listed in topological order. A frame with a `joint` table is a
//! revolute joint frame (its pose is `parent ∘ origin ∘ Rot(axis, q)`); a frame
//! without one is rigidly attached to its parent. Joint indices follow the
//! order in which revolute frames appear.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::transform::RigidTransform;
use super::KinematicsError;

/// Reserved name of the fixed world/base frame.
pub const BASE_FRAME: &str = "base";

/// Supported manipulator platforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Platform {
    /// 7-DoF arm with a two-finger gripper (8 DoF).
    #[serde(rename = "2f")]
    TwoFinger,
    /// 7-DoF arm with a five-finger hand (20 DoF).
    #[serde(rename = "5f")]
    FiveFinger,
    /// Anything else; joint-count checks are skipped.
    #[serde(rename = "custom")]
    Custom,
}

impl Platform {
    /// Finger names in canonical order, if fixed by the platform.
    pub fn finger_names(&self) -> Option<&'static [&'static str]> {
        match self {
            Platform::TwoFinger => Some(&["left", "right"]),
            Platform::FiveFinger => Some(&["thumb", "index", "middle", "ring", "little"]),
            Platform::Custom => None,
        }
    }

    pub fn arm_dof(&self) -> Option<usize> {
        match self {
            Platform::TwoFinger | Platform::FiveFinger => Some(7),
            Platform::Custom => None,
        }
    }

    pub fn hand_dof(&self) -> Option<usize> {
        match self {
            Platform::TwoFinger => Some(8),
            Platform::FiveFinger => Some(20),
            Platform::Custom => None,
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Platform::TwoFinger => "2f",
            Platform::FiveFinger => "5f",
            Platform::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for Platform {
    type Err = KinematicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "2f" => Ok(Platform::TwoFinger),
            "5f" => Ok(Platform::FiveFinger),
            "custom" => Ok(Platform::Custom),
            other => Err(KinematicsError::Structure(format!("unknown platform {other:?}"))),
        }
    }
}

/// Index of a frame in a [`ChainModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameId(pub usize);

/// Index of a finger in a [`ChainModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FingerId(pub usize);

#[derive(Debug, Clone)]
pub struct Frame {
    pub name: String,
    /// `None` for frames attached to the base.
    pub parent: Option<FrameId>,
    pub origin: RigidTransform,
    pub joint: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub frame: FrameId,
    /// Unit rotation axis in the joint frame.
    pub axis: Vector3<f64>,
    pub position_lower: f64,
    pub position_upper: f64,
    pub velocity_lower: f64,
    pub velocity_upper: f64,
}

#[derive(Debug, Clone)]
pub struct Finger {
    pub name: String,
    pub tip: FrameId,
    /// Joint indices from the palm outwards.
    pub joints: Vec<usize>,
}

/// Immutable kinematic description of arm + hand.
#[derive(Debug, Clone)]
pub struct ChainModel {
    name: String,
    platform: Platform,
    frames: Vec<Frame>,
    joints: Vec<Joint>,
    palm: FrameId,
    fingers: Vec<Finger>,
    n_arm: usize,
    /// Joint indices on the path from the base to each frame, ascending.
    paths: Vec<Vec<usize>>,
    home: Option<DVector<f64>>,
}

// ----- file format -----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDescription {
    #[serde(default)]
    pub name: String,
    pub platform: Platform,
    pub palm: String,
    #[serde(default)]
    pub home: Option<Vec<f64>>,
    #[serde(rename = "frame")]
    pub frames: Vec<FrameDescription>,
    #[serde(rename = "finger", default)]
    pub fingers: Vec<FingerDescription>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameDescription {
    pub name: String,
    pub parent: String,
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    #[serde(default)]
    pub joint: Option<JointDescription>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointDescription {
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    /// Symmetric velocity limit |q̇| ≤ velocity (rad/s).
    pub velocity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FingerDescription {
    pub name: String,
    pub tip: String,
}

impl ChainModel {
    pub fn from_toml_str(text: &str) -> Result<Self, KinematicsError> {
        let desc: ChainDescription =
            toml::from_str(text).map_err(|e| KinematicsError::Parse(e.to_string()))?;
        Self::from_description(&desc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| KinematicsError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_description(desc: &ChainDescription) -> Result<Self, KinematicsError> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut frames = Vec::with_capacity(desc.frames.len());
        let mut joints = Vec::new();

        for fd in &desc.frames {
            if fd.name == BASE_FRAME {
                return Err(KinematicsError::Structure(format!(
                    "frame name {BASE_FRAME:?} is reserved"
                )));
            }
            if index.contains_key(fd.name.as_str()) {
                return Err(KinematicsError::Structure(format!(
                    "duplicate frame {:?}",
                    fd.name
                )));
            }
            let parent = if fd.parent == BASE_FRAME {
                None
            } else {
                match index.get(fd.parent.as_str()) {
                    Some(&i) => Some(FrameId(i)),
                    None => {
                        return Err(KinematicsError::Structure(format!(
                            "frame {:?} references parent {:?} that is not listed before it",
                            fd.name, fd.parent
                        )))
                    }
                }
            };
            let id = frames.len();
            let joint = match &fd.joint {
                Some(jd) => {
                    let axis = Vector3::from(jd.axis);
                    let norm = axis.norm();
                    if !(norm > 1e-9) || !norm.is_finite() {
                        return Err(KinematicsError::InvalidJoint {
                            name: fd.name.clone(),
                            reason: "axis must be non-zero".into(),
                        });
                    }
                    if !(jd.lower <= jd.upper) {
                        return Err(KinematicsError::InvalidJoint {
                            name: fd.name.clone(),
                            reason: format!("lower {} > upper {}", jd.lower, jd.upper),
                        });
                    }
                    if !(jd.velocity > 0.0) {
                        return Err(KinematicsError::InvalidJoint {
                            name: fd.name.clone(),
                            reason: "velocity limit must be positive".into(),
                        });
                    }
                    joints.push(Joint {
                        name: fd.name.clone(),
                        frame: FrameId(id),
                        axis: axis / norm,
                        position_lower: jd.lower,
                        position_upper: jd.upper,
                        velocity_lower: -jd.velocity,
                        velocity_upper: jd.velocity,
                    });
                    Some(joints.len() - 1)
                }
                None => None,
            };
            index.insert(fd.name.as_str(), id);
            frames.push(Frame {
                name: fd.name.clone(),
                parent,
                origin: RigidTransform::from_xyz_rpy(fd.xyz, fd.rpy),
                joint,
            });
        }

        let palm = *index
            .get(desc.palm.as_str())
            .ok_or_else(|| KinematicsError::UnknownFrame(desc.palm.clone()))?;

        let mut fingers = Vec::with_capacity(desc.fingers.len());
        for fd in &desc.fingers {
            let tip = *index
                .get(fd.tip.as_str())
                .ok_or_else(|| KinematicsError::UnknownFrame(fd.tip.clone()))?;
            fingers.push(Finger {
                name: fd.name.clone(),
                tip: FrameId(tip),
                joints: Vec::new(),
            });
        }

        let paths = compute_paths(&frames);
        let mut model = ChainModel {
            name: desc.name.clone(),
            platform: desc.platform,
            frames,
            joints,
            palm: FrameId(palm),
            fingers,
            n_arm: 0,
            paths,
            home: None,
        };
        model.validate_structure()?;
        model.validate_platform()?;
        if let Some(home) = &desc.home {
            if home.len() != model.dof() {
                return Err(KinematicsError::DimensionMismatch {
                    expected: model.dof(),
                    got: home.len(),
                });
            }
            model.home = Some(DVector::from_column_slice(home));
        }
        Ok(model)
    }

    fn validate_structure(&mut self) -> Result<(), KinematicsError> {
        let palm_path = self.paths[self.palm.0].clone();
        let n_arm = palm_path.len();
        if palm_path.iter().enumerate().any(|(k, &j)| k != j) {
            return Err(KinematicsError::Structure(
                "arm joints (those on the palm's path) must occupy the first indices".into(),
            ));
        }
        self.n_arm = n_arm;

        // every non-arm joint must sit below the palm
        for joint in self.joints.iter().skip(n_arm) {
            if !self.is_descendant(joint.frame, self.palm) {
                return Err(KinematicsError::Structure(format!(
                    "joint {:?} branches off outside the palm frame",
                    joint.name
                )));
            }
        }

        let mut owner: Vec<Option<usize>> = vec![None; self.joints.len()];
        for f in 0..self.fingers.len() {
            let tip = self.fingers[f].tip;
            if !self.is_descendant(tip, self.palm) || tip == self.palm {
                return Err(KinematicsError::Structure(format!(
                    "fingertip {:?} is not below the palm frame",
                    self.fingers[f].name
                )));
            }
            // the branch must start at the palm frame itself
            let mut cur = tip;
            let mut first_below_palm = tip;
            while let Some(p) = self.frames[cur.0].parent {
                if p == self.palm {
                    first_below_palm = cur;
                    break;
                }
                cur = p;
            }
            if self.frames[first_below_palm.0].parent != Some(self.palm) {
                return Err(KinematicsError::Structure(format!(
                    "finger {:?} must attach directly to the palm frame",
                    self.fingers[f].name
                )));
            }
            let finger_joints: Vec<usize> = self.paths[tip.0]
                .iter()
                .copied()
                .filter(|j| *j >= n_arm)
                .collect();
            for &j in &finger_joints {
                if let Some(other) = owner[j] {
                    return Err(KinematicsError::Structure(format!(
                        "joint {:?} is shared by fingers {:?} and {:?}",
                        self.joints[j].name, self.fingers[other].name, self.fingers[f].name
                    )));
                }
                owner[j] = Some(f);
            }
            self.fingers[f].joints = finger_joints;
        }
        Ok(())
    }

    fn validate_platform(&self) -> Result<(), KinematicsError> {
        let Some(names) = self.platform.finger_names() else {
            return Ok(());
        };
        let mismatch = |msg: String| Err(KinematicsError::PlatformMismatch(msg));
        let arm = self.platform.arm_dof().unwrap_or(0);
        let hand = self.platform.hand_dof().unwrap_or(0);
        if self.n_arm != arm {
            return mismatch(format!(
                "platform {} expects {arm} arm joints, chain has {}",
                self.platform, self.n_arm
            ));
        }
        if self.dof() != arm + hand {
            return mismatch(format!(
                "platform {} expects {} joints, chain has {}",
                self.platform,
                arm + hand,
                self.dof()
            ));
        }
        let got: Vec<&str> = self.fingers.iter().map(|f| f.name.as_str()).collect();
        if got != names {
            return mismatch(format!("platform {} expects fingers {names:?}, got {got:?}", self.platform));
        }
        let per_finger = hand / names.len();
        for f in &self.fingers {
            if f.joints.len() != per_finger {
                return mismatch(format!(
                    "finger {:?} has {} joints, expected {per_finger}",
                    f.name,
                    f.joints.len()
                ));
            }
        }
        let owned: usize = self.fingers.iter().map(|f| f.joints.len()).sum();
        if owned != hand {
            return mismatch("hand joints not all owned by a finger".into());
        }
        Ok(())
    }

    fn is_descendant(&self, frame: FrameId, ancestor: FrameId) -> bool {
        let mut cur = Some(frame);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.frames[c.0].parent;
        }
        false
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn platform(&self) -> Platform {
        self.platform
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn arm_dof(&self) -> usize {
        self.n_arm
    }

    pub fn hand_dof(&self) -> usize {
        self.joints.len() - self.n_arm
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn fingers(&self) -> &[Finger] {
        &self.fingers
    }

    pub fn finger(&self, id: FingerId) -> Result<&Finger, KinematicsError> {
        self.fingers
            .get(id.0)
            .ok_or_else(|| KinematicsError::UnknownFinger(format!("#{}", id.0)))
    }

    pub fn finger_id(&self, name: &str) -> Result<FingerId, KinematicsError> {
        self.fingers
            .iter()
            .position(|f| f.name == name)
            .map(FingerId)
            .ok_or_else(|| KinematicsError::UnknownFinger(name.to_string()))
    }

    pub fn palm(&self) -> FrameId {
        self.palm
    }

    pub fn frame_id(&self, name: &str) -> Result<FrameId, KinematicsError> {
        self.frames
            .iter()
            .position(|f| f.name == name)
            .map(FrameId)
            .ok_or_else(|| KinematicsError::UnknownFrame(name.to_string()))
    }

    pub fn frame(&self, id: FrameId) -> Result<&Frame, KinematicsError> {
        self.frames
            .get(id.0)
            .ok_or_else(|| KinematicsError::UnknownFrame(format!("#{}", id.0)))
    }

    /// Joint indices on the path from the base to `frame`, ascending.
    pub fn path(&self, frame: FrameId) -> &[usize] {
        &self.paths[frame.0]
    }

    /// Configured home configuration, or the clamped zero vector.
    pub fn home(&self) -> DVector<f64> {
        self.home.clone().unwrap_or_else(|| {
            DVector::from_iterator(
                self.dof(),
                self.joints
                    .iter()
                    .map(|j| 0.0f64.clamp(j.position_lower, j.position_upper)),
            )
        })
    }

    pub fn position_lower(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.position_lower))
    }

    pub fn position_upper(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.position_upper))
    }

    pub fn velocity_lower(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.velocity_lower))
    }

    pub fn velocity_upper(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.velocity_upper))
    }

    /// Returns a copy with every joint velocity limit multiplied by `factor`.
    pub fn with_velocity_limits_scaled(&self, factor: f64) -> ChainModel {
        let mut out = self.clone();
        for j in &mut out.joints {
            j.velocity_lower *= factor;
            j.velocity_upper *= factor;
        }
        out
    }

    pub fn check_dimension(&self, q: &DVector<f64>) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }
}

fn compute_paths(frames: &[Frame]) -> Vec<Vec<usize>> {
    let mut paths: Vec<Vec<usize>> = Vec::with_capacity(frames.len());
    for f in frames {
        let mut p = match f.parent {
            Some(parent) => paths[parent.0].clone(),
            None => Vec::new(),
        };
        if let Some(j) = f.joint {
            p.push(j);
        }
        paths.push(p);
    }
    paths
}
