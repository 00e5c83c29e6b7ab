//! Post-hoc steering of a trained command stream and analysis of what the QP
//! layer can execute: potential-field obstacle repulsion, velocity-limit
//! scaling, operational-space velocity envelopes and tracking-error profiles.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ik::{ControlCommand, IkConfig};
use crate::kinematics::{ChainModel, ChainState, KinematicsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteerError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid steering configuration: {0}")]
    Config(String),
    #[error("no samples: {0}")]
    Empty(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApfConfig {
    /// Surface separation below which the field acts (m).
    pub influence_radius: f64,
    /// Cap on the added speed (m/s).
    pub max_speed: f64,
    /// Scale of the inverse-distance law, (m/s)·m.
    pub gain: f64,
    /// Separation floor that keeps the law finite (m).
    pub s_floor: f64,
    #[serde(rename = "obstacle")]
    pub obstacles: Vec<Obstacle>,
}

impl Default for ApfConfig {
    fn default() -> Self {
        Self {
            influence_radius: 0.10,
            max_speed: 10.0,
            gain: 0.05,
            s_floor: 1e-3,
            obstacles: Vec::new(),
        }
    }
}

impl ApfConfig {
    pub fn validate(&self) -> Result<(), SteerError> {
        if !(self.influence_radius > 0.0 && self.max_speed > 0.0 && self.gain >= 0.0 && self.s_floor > 0.0) {
            return Err(SteerError::Config(
                "influence_radius, max_speed and s_floor must be positive, gain non-negative".into(),
            ));
        }
        if self.obstacles.iter().any(|o| !(o.radius > 0.0)) {
            return Err(SteerError::Config("obstacle radii must be positive".into()));
        }
        Ok(())
    }

    /// Smallest surface separation between `p` and any obstacle.
    pub fn separation(&self, p: &Vector3<f64>) -> f64 {
        self.obstacles
            .iter()
            .map(|o| (p - Vector3::from(o.center)).norm() - o.radius)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Repulsive speed at separation `s` (zero outside the influence radius).
pub fn apf_speed(s: f64, cfg: &ApfConfig) -> f64 {
    if s > cfg.influence_radius {
        return 0.0;
    }
    let raw = cfg.gain * (1.0 / s.max(cfg.s_floor) - 1.0 / cfg.influence_radius);
    raw.clamp(0.0, cfg.max_speed)
}

/// Summed repulsive velocity at palm position `p`.
pub fn apf_velocity(p: &Vector3<f64>, cfg: &ApfConfig) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    for o in &cfg.obstacles {
        let d = p - Vector3::from(o.center);
        let len = d.norm();
        let s = len - o.radius;
        let speed = apf_speed(s, cfg);
        if speed == 0.0 {
            continue;
        }
        let dir = if len > 0.0 { d / len } else { Vector3::z() };
        v += dir * speed;
    }
    v
}

/// Adds the field to the linear part of the palm twist command.
pub fn apf_modulate(p_palm: &Vector3<f64>, cmd: &ControlCommand, cfg: &ApfConfig) -> ControlCommand {
    let mut out = cmd.clone();
    out.palm_twist.linear += apf_velocity(p_palm, cfg);
    out
}

pub fn scale_velocity_limits(cfg: &IkConfig, factor: f64) -> Result<IkConfig, SteerError> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(SteerError::Config(format!("velocity limit factor {factor} outside (0, 1]")));
    }
    Ok(IkConfig {
        velocity_limit_scale: factor,
        ..cfg.clone()
    })
}

/// Cartesian plane spanned by two linear-velocity axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    Yz,
    Zx,
}

impl Plane {
    /// Rows of the `[ω; v]` palm Jacobian forming the plane.
    pub fn rows(self) -> (usize, usize) {
        match self {
            Plane::Xy => (3, 4),
            Plane::Yz => (4, 5),
            Plane::Zx => (5, 3),
        }
    }
}

impl FromStr for Plane {
    type Err = SteerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xy" => Ok(Plane::Xy),
            "yz" => Ok(Plane::Yz),
            "zx" => Ok(Plane::Zx),
            other => Err(SteerError::Config(format!("unknown plane {other}, expected xy|yz|zx"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub angle: f64,
    pub x: f64,
    pub y: f64,
}

/// Largest speed along `u` allowed by the bottleneck joint, given the
/// minimum-norm joint direction `dq` for a unit move along `u`. Components
/// below `1e-12` do not bind; a direction nothing can produce yields 0.
pub fn bottleneck_speed(dq: &DVector<f64>, qdot_max: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for (d, m) in dq.iter().zip(qdot_max.iter()) {
        if d.abs() >= 1e-12 {
            alpha = alpha.min(m / d.abs());
        }
    }
    if alpha.is_finite() {
        alpha
    } else {
        0.0
    }
}

fn unit(theta: f64) -> Vector2<f64> {
    Vector2::new(theta.cos(), theta.sin())
}

/// Mean velocity envelope over several planar Jacobians (each `2×n`).
pub fn contour_from_jacobians(
    jacobians: &[DMatrix<f64>],
    qdot_max: &DVector<f64>,
    n_angles: usize,
) -> Result<Vec<ContourPoint>, SteerError> {
    if n_angles < 8 {
        return Err(SteerError::Config(format!("need at least 8 angles, got {n_angles}")));
    }
    let pinvs: Vec<DMatrix<f64>> = jacobians
        .iter()
        .filter_map(|j| {
            if j.amax() == 0.0 {
                log::warn!("skipping configuration with a zero planar jacobian");
                return None;
            }
            Some(j.clone().pseudo_inverse(1e-12).expect("non-negative epsilon"))
        })
        .collect();
    if pinvs.is_empty() {
        return Err(SteerError::Empty("every configuration had a zero planar jacobian".into()));
    }
    let s = pinvs.len() as f64;
    Ok((0..n_angles)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n_angles as f64;
            let u = unit(angle);
            let u = DVector::from_column_slice(u.as_slice());
            let mean = pinvs.iter().map(|p| bottleneck_speed(&(p * &u), qdot_max)).sum::<f64>() / s;
            ContourPoint {
                angle,
                x: mean * angle.cos(),
                y: mean * angle.sin(),
            }
        })
        .collect())
}

/// Planar rows of the palm Jacobian at `q`.
pub fn planar_jacobian(model: &ChainModel, q: &DVector<f64>, plane: Plane) -> Result<DMatrix<f64>, SteerError> {
    let jp = ChainState::new(model, q)?.palm_jacobian();
    let (a, b) = plane.rows();
    Ok(DMatrix::from_fn(2, model.dof(), |r, c| jp[(if r == 0 { a } else { b }, c)]))
}

/// Mean joint-velocity-limit contour of the palm in `plane`.
pub fn velocity_limit_contour(
    model: &ChainModel,
    q_samples: &[DVector<f64>],
    plane: Plane,
    qdot_max: &DVector<f64>,
    n_angles: usize,
) -> Result<Vec<ContourPoint>, SteerError> {
    if q_samples.is_empty() {
        return Err(SteerError::Empty("no configuration samples".into()));
    }
    if qdot_max.len() != model.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: model.dof(),
            got: qdot_max.len(),
        }
        .into());
    }
    let jacs = q_samples
        .iter()
        .map(|q| planar_jacobian(model, q, plane))
        .collect::<Result<Vec<_>, _>>()?;
    contour_from_jacobians(&jacs, qdot_max, n_angles)
}

pub fn contour_to_csv(points: &[ContourPoint]) -> String {
    let mut out = String::from("angle,x,y\n");
    for p in points {
        writeln!(out, "{},{},{}", p.angle, p.x, p.y).expect("writing to a String");
    }
    out
}

/// One controller step as seen by the profiler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub command_norm: f64,
    pub tracking_error: f64,
    /// Active rows per family: collision, position, velocity.
    pub active: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_error: f64,
    /// Steps in the bin with at least one active row, per family.
    pub activations: [usize; 3],
}

/// Slack at or below which a constraint row counts as active.
pub const ACTIVE_SLACK: f64 = 1e-5;

/// Bins samples by command magnitude over `[0, max]` into `n_bins` equal bins.
/// Empty bins report a zero count and NaN mean.
pub fn tracking_error_profile(samples: &[ProfileSample], n_bins: usize) -> Result<Vec<ProfileBin>, SteerError> {
    if samples.is_empty() {
        return Err(SteerError::Empty("profile needs at least one logged step".into()));
    }
    if n_bins == 0 {
        return Err(SteerError::Config("need at least one bin".into()));
    }
    let max = samples.iter().map(|s| s.command_norm).fold(0.0, f64::max);
    let width = if max > 0.0 { max / n_bins as f64 } else { 1.0 };
    let mut bins: Vec<ProfileBin> = (0..n_bins)
        .map(|i| ProfileBin {
            lower: i as f64 * width,
            upper: (i + 1) as f64 * width,
            count: 0,
            mean_error: 0.0,
            activations: [0; 3],
        })
        .collect();
    for s in samples {
        let i = ((s.command_norm / width) as usize).min(n_bins - 1);
        let b = &mut bins[i];
        b.count += 1;
        b.mean_error += s.tracking_error;
        for f in 0..3 {
            if s.active[f] > 0 {
                b.activations[f] += 1;
            }
        }
    }
    for b in &mut bins {
        b.mean_error = if b.count > 0 { b.mean_error / b.count as f64 } else { f64::NAN };
    }
    Ok(bins)
}

pub fn profile_to_csv(bins: &[ProfileBin]) -> String {
    let mut out = String::from("lower,upper,count,mean_error,collision,position,velocity\n");
    for b in bins {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            b.lower, b.upper, b.count, b.mean_error, b.activations[0], b.activations[1], b.activations[2]
        )
        .expect("writing to a String");
    }
    out
}
