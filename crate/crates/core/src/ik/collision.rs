use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{ChainModel, ChainState, FrameId};

use super::IkError;

/// Sphere rigidly attached to a chain frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereDescription {
    pub name: String,
    pub frame: String,
    #[serde(default)]
    pub offset: [f64; 3],
    pub radius: f64,
}

/// Environment half-space; the free side is where `normal` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceDescription {
    pub name: String,
    pub point: [f64; 3],
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDescription {
    pub a: String,
    pub b: String,
    /// Penetration of this pair ends an episode.
    #[serde(default)]
    pub illegal: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionDescription {
    #[serde(default, rename = "sphere")]
    pub spheres: Vec<SphereDescription>,
    #[serde(default, rename = "half_space")]
    pub half_spaces: Vec<HalfSpaceDescription>,
    #[serde(default, rename = "pair")]
    pub pairs: Vec<PairDescription>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sphere {
    pub name: String,
    pub frame: FrameId,
    pub offset: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub name: String,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Body {
    Sphere(usize),
    HalfSpace(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollisionPair {
    pub a: Body,
    pub b: Body,
    pub illegal: bool,
}

/// Spheres on the robot, half-spaces for the environment, and the distance
/// pairs that become collision rows of the IK problem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollisionModel {
    pub spheres: Vec<Sphere>,
    pub half_spaces: Vec<HalfSpace>,
    pub pairs: Vec<CollisionPair>,
}

impl CollisionModel {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_description(model: &ChainModel, desc: &CollisionDescription) -> Result<Self, IkError> {
        let bad = |m: String| Err(IkError::Collision(m));
        let mut spheres = Vec::with_capacity(desc.spheres.len());
        for s in &desc.spheres {
            if !(s.radius > 0.0 && s.radius.is_finite()) {
                return bad(format!("sphere {} needs a positive radius", s.name));
            }
            spheres.push(Sphere {
                name: s.name.clone(),
                frame: model.frame_id(&s.frame)?,
                offset: Vector3::from(s.offset),
                radius: s.radius,
            });
        }
        let mut half_spaces = Vec::with_capacity(desc.half_spaces.len());
        for h in &desc.half_spaces {
            let n = Vector3::from(h.normal);
            let len = n.norm();
            if !(len > 1e-12 && len.is_finite()) {
                return bad(format!("half-space {} has a degenerate normal", h.name));
            }
            half_spaces.push(HalfSpace {
                name: h.name.clone(),
                point: Vector3::from(h.point),
                normal: n / len,
            });
        }
        let mut out = Self {
            spheres,
            half_spaces,
            pairs: Vec::new(),
        };
        for p in &desc.pairs {
            let a = out.body(&p.a)?;
            let b = out.body(&p.b)?;
            if matches!((a, b), (Body::HalfSpace(_), Body::HalfSpace(_))) {
                return bad(format!("pair {}/{} joins two half-spaces", p.a, p.b));
            }
            if a == b {
                return bad(format!("pair {}/{} joins a body with itself", p.a, p.b));
            }
            out.pairs.push(CollisionPair {
                a,
                b,
                illegal: p.illegal,
            });
        }
        Ok(out)
    }

    fn body(&self, name: &str) -> Result<Body, IkError> {
        if let Some(i) = self.spheres.iter().position(|s| s.name == name) {
            return Ok(Body::Sphere(i));
        }
        if let Some(i) = self.half_spaces.iter().position(|h| h.name == name) {
            return Ok(Body::HalfSpace(i));
        }
        Err(IkError::Collision(format!("unknown collision body {name}")))
    }

    pub fn body_name(&self, b: Body) -> &str {
        match b {
            Body::Sphere(i) => &self.spheres[i].name,
            Body::HalfSpace(i) => &self.half_spaces[i].name,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Per-pair signed distances and their gradients (one row per pair).
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionDistances {
    pub distances: DVector<f64>,
    pub gradients: DMatrix<f64>,
}

pub fn sphere_center(state: &ChainState<'_>, s: &Sphere) -> Vector3<f64> {
    state.pose(s.frame).transform_point(&s.offset)
}

/// Signed surface distances for every pair of `cm`, with `dΓ/dq` via the
/// positional Jacobians of the sphere centers.
pub fn collision_distances(state: &ChainState<'_>, cm: &CollisionModel) -> CollisionDistances {
    let n = state.model().dof();
    let mut distances = DVector::zeros(cm.pairs.len());
    let mut gradients = DMatrix::zeros(cm.pairs.len(), n);
    for (k, pair) in cm.pairs.iter().enumerate() {
        let (d, grad) = match (pair.a, pair.b) {
            (Body::Sphere(i), Body::Sphere(j)) => {
                let (si, sj) = (&cm.spheres[i], &cm.spheres[j]);
                let (ci, cj) = (sphere_center(state, si), sphere_center(state, sj));
                let diff = ci - cj;
                let len = diff.norm();
                let dir = if len > 1e-12 { diff / len } else { Vector3::z() };
                let jac = state.point_jacobian(si.frame, &ci) - state.point_jacobian(sj.frame, &cj);
                (len - si.radius - sj.radius, dir.transpose() * jac)
            }
            (Body::Sphere(i), Body::HalfSpace(h)) | (Body::HalfSpace(h), Body::Sphere(i)) => {
                let (s, hs) = (&cm.spheres[i], &cm.half_spaces[h]);
                let c = sphere_center(state, s);
                let jac = state.point_jacobian(s.frame, &c);
                (hs.normal.dot(&(c - hs.point)) - s.radius, hs.normal.transpose() * jac)
            }
            (Body::HalfSpace(_), Body::HalfSpace(_)) => unreachable!("rejected at construction"),
        };
        distances[k] = d;
        gradients.row_mut(k).copy_from(&grad);
    }
    CollisionDistances {
        distances,
        gradients,
    }
}
