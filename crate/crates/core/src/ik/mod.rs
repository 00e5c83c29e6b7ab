//! Velocity inverse kinematics as a QP.
//!
//! The decision variable is the joint velocity `q̇`. The objective tracks the
//! commanded palm twist (world frame) and fingertip velocities (palm frame)
//! with Tikhonov damping `λ‖q̇‖²`; inequality rows keep collision distances,
//! joint positions one horizon ahead, and joint velocities inside their
//! limits.

mod collision;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{ChainModel, ChainState, KinematicsError, Twist, TwistFrame};
use crate::qp::{self, BarrierConfig, QpError, QpProblem, QpSolution, QpStatus};

pub use collision::{
    collision_distances, sphere_center, Body, CollisionDescription, CollisionDistances,
    CollisionModel, CollisionPair, HalfSpace, HalfSpaceDescription, PairDescription, Sphere,
    SphereDescription,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("command has {got} fingertip velocities, model has {expected} fingers")]
    CommandMismatch { expected: usize, got: usize },
    #[error("palm twist must be expressed in the world frame")]
    TwistFrame,
    #[error("jacobian contains non-finite entries")]
    NonFiniteJacobian,
    #[error("invalid ik configuration: {0}")]
    Config(String),
    #[error("collision model: {0}")]
    Collision(String),
}

/// High-level action: palm twist in the world frame and one palm-frame
/// linear velocity per fingertip, ordered as the model's fingers.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCommand {
    pub palm_twist: Twist,
    pub fingertip_velocities: Vec<Vector3<f64>>,
}

impl ControlCommand {
    pub fn zero(model: &ChainModel) -> Self {
        Self {
            palm_twist: Twist::zero(TwistFrame::World),
            fingertip_velocities: vec![Vector3::zeros(); model.fingers().len()],
        }
    }

    /// Flat layout `[ω; v; v_1; …; v_k]` of length `6 + 3k`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = DVector::zeros(6 + 3 * self.fingertip_velocities.len());
        out.fixed_rows_mut::<6>(0).copy_from(&self.palm_twist.to_vector());
        for (i, v) in self.fingertip_velocities.iter().enumerate() {
            out.fixed_rows_mut::<3>(6 + 3 * i).copy_from(v);
        }
        out
    }

    pub fn from_vector(v: &DVector<f64>, n_fingers: usize) -> Result<Self, IkError> {
        if v.len() != 6 + 3 * n_fingers {
            return Err(IkError::CommandMismatch {
                expected: n_fingers,
                got: v.len().saturating_sub(6) / 3,
            });
        }
        Ok(Self {
            palm_twist: Twist::from_vector(&v.fixed_rows::<6>(0).into_owned(), TwistFrame::World),
            fingertip_velocities: (0..n_fingers)
                .map(|i| v.fixed_rows::<3>(6 + 3 * i).into_owned())
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.palm_twist.is_finite() && self.fingertip_velocities.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn check(&self, model: &ChainModel) -> Result<(), IkError> {
        if self.palm_twist.frame != TwistFrame::World {
            return Err(IkError::TwistFrame);
        }
        if self.fingertip_velocities.len() != model.fingers().len() {
            return Err(IkError::CommandMismatch {
                expected: model.fingers().len(),
                got: self.fingertip_velocities.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    /// Damping weight on `‖q̇‖²`.
    pub lambda: f64,
    /// Lookahead (s) multiplying `q̇` in the collision and position rows.
    pub horizon: f64,
    /// Minimum collision distance (m).
    pub safety_margin: f64,
    /// Multiplies the joint velocity limits, in `(0, 1]`.
    pub velocity_limit_scale: f64,
    pub barrier: BarrierConfig,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            horizon: 0.01,
            safety_margin: 0.01,
            velocity_limit_scale: 1.0,
            barrier: BarrierConfig::default(),
        }
    }
}

impl IkConfig {
    pub fn validate(&self) -> Result<(), IkError> {
        let bad = |m: &str| Err(IkError::Config(m.to_string()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be positive");
        }
        if !(self.safety_margin > 0.0) {
            return bad("safety_margin must be positive");
        }
        if !(self.velocity_limit_scale > 0.0 && self.velocity_limit_scale <= 1.0) {
            return bad("velocity_limit_scale must lie in (0, 1]");
        }
        self.barrier.validate()?;
        Ok(())
    }
}

/// Row offsets of the three constraint families inside `A_ineq`.
///
/// Rows are `[collision (c); position upper (n); position lower (n);
/// velocity upper (n); velocity lower (n)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLayout {
    pub collision: usize,
    pub dof: usize,
}

impl RowLayout {
    pub fn new(collision: usize, dof: usize) -> Self {
        Self { collision, dof }
    }

    pub fn rows(&self) -> usize {
        self.collision + 4 * self.dof
    }

    pub fn collision_range(&self) -> std::ops::Range<usize> {
        0..self.collision
    }

    pub fn position_range(&self) -> std::ops::Range<usize> {
        self.collision..self.collision + 2 * self.dof
    }

    pub fn velocity_range(&self) -> std::ops::Range<usize> {
        self.collision + 2 * self.dof..self.rows()
    }
}

/// Assembled IK problem plus the quantities needed to interpret its solution.
#[derive(Debug, Clone)]
pub struct IkProblem {
    pub qp: QpProblem,
    pub layout: RowLayout,
    pub palm_jacobian: DMatrix<f64>,
    pub collision: CollisionDistances,
}

/// Builds the IK QP at configuration `q`.
pub fn assemble_qp(
    model: &ChainModel,
    cm: &CollisionModel,
    q: &DVector<f64>,
    cmd: &ControlCommand,
    cfg: &IkConfig,
) -> Result<IkProblem, IkError> {
    cfg.validate()?;
    cmd.check(model)?;
    let state = ChainState::new(model, q)?;
    let n = model.dof();

    let jp = DMatrix::from_iterator(6, n, state.palm_jacobian().iter().copied());
    // stacked task Jacobian [J_P; J_v1; …; J_vk] against the flat command
    let rows = 6 + 3 * cmd.fingertip_velocities.len();
    let mut jt = DMatrix::zeros(rows, n);
    jt.rows_mut(0, 6).copy_from(&jp);
    for i in 0..cmd.fingertip_velocities.len() {
        let jv = state.fingertip_linear_jacobian(crate::kinematics::FingerId(i))?;
        jt.rows_mut(6 + 3 * i, 3).copy_from(&jv);
    }
    let jt_t = jt.transpose();
    let mut h = &jt_t * &jt;
    let g = -(&jt_t * cmd.to_vector());
    if h.iter().any(|v| !v.is_finite()) {
        return Err(IkError::NonFiniteJacobian);
    }
    for d in 0..n {
        h[(d, d)] += cfg.lambda;
    }

    let col = collision_distances(&state, cm);
    if col.gradients.iter().any(|v| !v.is_finite()) {
        return Err(IkError::NonFiniteJacobian);
    }
    let layout = RowLayout::new(cm.len(), n);
    let mut a = DMatrix::zeros(layout.rows(), n);
    let mut b = DVector::zeros(layout.rows());
    let hor = cfg.horizon;
    for k in 0..layout.collision {
        for j in 0..n {
            a[(k, j)] = -col.gradients[(k, j)] * hor;
        }
        b[k] = col.distances[k] - cfg.safety_margin;
    }
    let (lo, hi) = (model.position_lower(), model.position_upper());
    let (vlo, vhi) = (model.velocity_lower(), model.velocity_upper());
    let s = cfg.velocity_limit_scale;
    let base = layout.collision;
    for j in 0..n {
        a[(base + j, j)] = hor;
        b[base + j] = hi[j] - q[j];
        a[(base + n + j, j)] = -hor;
        b[base + n + j] = q[j] - lo[j];
        a[(base + 2 * n + j, j)] = 1.0;
        b[base + 2 * n + j] = s * vhi[j];
        a[(base + 3 * n + j, j)] = -1.0;
        b[base + 3 * n + j] = -s * vlo[j];
    }

    let qp = QpProblem::with_inequalities(h, g, a, b)?;
    Ok(IkProblem {
        qp,
        layout,
        palm_jacobian: jp,
        collision: col,
    })
}

/// Solution of one control step with its audit quantities.
#[derive(Debug, Clone)]
pub struct ControlOutput {
    /// Desired joint velocities; zero when the solver failed.
    pub qdot: DVector<f64>,
    pub solution: QpSolution,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `‖V_des − J_P q̇‖₂` of the palm twist.
    pub tracking_error: f64,
    pub command_norm: f64,
    /// `b − A q̇` per row, split by family.
    pub collision_slack: DVector<f64>,
    pub position_slack: DVector<f64>,
    pub velocity_slack: DVector<f64>,
    /// Collision distances at the current configuration.
    pub distances: DVector<f64>,
    pub status: QpStatus,
}

fn family_min(v: &DVector<f64>) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

impl Diagnostics {
    pub fn min_collision_slack(&self) -> f64 {
        family_min(&self.collision_slack)
    }

    pub fn min_position_slack(&self) -> f64 {
        family_min(&self.position_slack)
    }

    pub fn min_velocity_slack(&self) -> f64 {
        family_min(&self.velocity_slack)
    }

    /// Rows with slack at or below `tol` per family (collision, position, velocity).
    pub fn active_counts(&self, tol: f64) -> [usize; 3] {
        let count = |v: &DVector<f64>| v.iter().filter(|s| **s <= tol).count();
        [
            count(&self.collision_slack),
            count(&self.position_slack),
            count(&self.velocity_slack),
        ]
    }
}

fn interpret(problem: &IkProblem, cmd: &ControlCommand, solution: QpSolution) -> ControlOutput {
    let n = problem.qp.g.len();
    let qdot = if solution.status == QpStatus::NumericalFailure {
        DVector::zeros(n)
    } else {
        solution.x.clone()
    };
    let v_des = DVector::from_column_slice(cmd.palm_twist.to_vector().as_slice());
    let tracking_error = (&v_des - &problem.palm_jacobian * &qdot).norm();
    let slack = &problem.qp.b_ineq - &problem.qp.a_ineq * &qdot;
    let l = problem.layout;
    let take = |r: std::ops::Range<usize>| DVector::from_iterator(r.len(), r.map(|i| slack[i]));
    let diagnostics = Diagnostics {
        tracking_error,
        command_norm: v_des.norm(),
        collision_slack: take(l.collision_range()),
        position_slack: take(l.position_range()),
        velocity_slack: take(l.velocity_range()),
        distances: problem.collision.distances.clone(),
        status: solution.status,
    };
    ControlOutput {
        qdot,
        solution,
        diagnostics,
    }
}

/// Assembles and solves one IK step. A numerical failure yields `q̇ = 0`
/// with the status preserved in the diagnostics.
pub fn control_step(
    model: &ChainModel,
    cm: &CollisionModel,
    q: &DVector<f64>,
    cmd: &ControlCommand,
    cfg: &IkConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<ControlOutput, IkError> {
    let problem = assemble_qp(model, cm, q, cmd, cfg)?;
    let solution = qp::solve(&problem.qp, &cfg.barrier, warm_start)?;
    Ok(interpret(&problem, cmd, solution))
}

/// Batched [`control_step`] over many robots sharing one model.
pub fn control_step_batch(
    model: &ChainModel,
    cm: &CollisionModel,
    qs: &[DVector<f64>],
    cmds: &[ControlCommand],
    cfg: &IkConfig,
    warm: Option<&[DVector<f64>]>,
) -> Result<Vec<ControlOutput>, IkError> {
    if qs.len() != cmds.len() {
        return Err(IkError::Qp(QpError::Dimension {
            what: "command batch",
            expected: qs.len(),
            got: cmds.len(),
        }));
    }
    let problems = qs
        .iter()
        .zip(cmds)
        .map(|(q, c)| assemble_qp(model, cm, q, c, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let qps: Vec<QpProblem> = problems.iter().map(|p| p.qp.clone()).collect();
    let solutions = qp::solve_batch(&qps, &cfg.barrier, warm)?;
    Ok(problems
        .iter()
        .zip(cmds)
        .zip(solutions)
        .map(|((p, c), s)| interpret(p, c, s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_JOINT: &str = r#"
name = "one"
platform = "custom"
palm = "palm"

[[frame]]
name = "link"
parent = "base"
joint = { axis = [0, 0, 1], lower = -3, upper = 3, velocity = 1 }

[[frame]]
name = "palm"
parent = "link"
xyz = [0.5, 0, 0]
"#;

    /// Palm twist of the one-joint arm moving at tangential speed `vy`.
    fn command(vy: f64) -> ControlCommand {
        ControlCommand {
            palm_twist: Twist::new(Vector3::new(0.0, 0.0, vy / 0.5), Vector3::new(0.0, vy, 0.0), TwistFrame::World),
            fingertip_velocities: vec![],
        }
    }

    fn tiny_lambda() -> IkConfig {
        IkConfig {
            lambda: 1e-9,
            ..Default::default()
        }
    }

    #[test]
    fn zero_command_gives_zero_velocity() {
        let model = ChainModel::from_toml_str(ONE_JOINT).unwrap();
        let out = control_step(&model, &CollisionModel::empty(), &DVector::zeros(1), &command(0.0), &IkConfig::default(), None)
            .unwrap();
        assert!(out.qdot.norm() < 1e-6);
    }

    #[test]
    fn achievable_linear_speed_is_tracked() {
        // palm at radius 0.5; 0.25 m/s needs 0.5 rad/s, inside the 1 rad/s limit
        let model = ChainModel::from_toml_str(ONE_JOINT).unwrap();
        let cfg = tiny_lambda();
        let out = control_step(&model, &CollisionModel::empty(), &DVector::zeros(1), &command(0.25), &cfg, None).unwrap();
        // J = [0, 0, 1, 0, 0.5, 0]ᵀ, V = 0.5·J
        let closed_form = 0.5 * 1.25 / (1.25 + cfg.lambda);
        assert!((out.qdot[0] - closed_form).abs() < 1e-6);
        assert!(out.diagnostics.tracking_error < 1e-6);
    }

    #[test]
    fn saturated_command_clamps_at_limit() {
        let model = ChainModel::from_toml_str(ONE_JOINT).unwrap();
        let cfg = IkConfig {
            velocity_limit_scale: 0.5,
            ..tiny_lambda()
        };
        let out = control_step(&model, &CollisionModel::empty(), &DVector::zeros(1), &command(2.0), &cfg, None).unwrap();
        assert!((out.qdot[0] - 0.5).abs() < 1e-5);
        assert!(out.diagnostics.min_velocity_slack() > -1e-6);
        assert_eq!(out.diagnostics.active_counts(1e-4), [0, 0, 1]);
    }

    #[test]
    fn nan_command_is_a_safe_stop() {
        let model = ChainModel::from_toml_str(ONE_JOINT).unwrap();
        let out = control_step(&model, &CollisionModel::empty(), &DVector::zeros(1), &command(f64::NAN), &IkConfig::default(), None)
            .unwrap();
        assert_eq!(out.diagnostics.status, QpStatus::NumericalFailure);
        assert_eq!(out.qdot, DVector::zeros(1));
    }

    #[test]
    fn command_shape_is_checked() {
        let model = ChainModel::from_toml_str(ONE_JOINT).unwrap();
        let mut cmd = command(0.0);
        cmd.fingertip_velocities.push(Vector3::zeros());
        let err = assemble_qp(&model, &CollisionModel::empty(), &DVector::zeros(1), &cmd, &IkConfig::default()).unwrap_err();
        assert_eq!(err, IkError::CommandMismatch { expected: 0, got: 1 });
        let v = DVector::zeros(8);
        assert!(ControlCommand::from_vector(&v, 1).is_err());
        let v = DVector::from_fn(9, |i, _| i as f64);
        let c = ControlCommand::from_vector(&v, 1).unwrap();
        assert_eq!(c.to_vector(), v);
    }

    #[test]
    fn config_validation() {
        assert!(IkConfig::default().validate().is_ok());
        for bad in [
            IkConfig { lambda: 0.0, ..Default::default() },
            IkConfig { horizon: -1.0, ..Default::default() },
            IkConfig { velocity_limit_scale: 1.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn layout_ranges_partition_rows() {
        let l = RowLayout::new(3, 5);
        assert_eq!(l.rows(), 23);
        assert_eq!(l.collision_range(), 0..3);
        assert_eq!(l.position_range(), 3..13);
        assert_eq!(l.velocity_range(), 13..23);
    }
}
