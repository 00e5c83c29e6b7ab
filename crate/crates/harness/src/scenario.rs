//! Scenario files and per-episode sampling.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use grasp_core::ik::{CollisionDescription, CollisionModel, IkConfig};
use grasp_core::kinematics::{ChainModel, Platform, RigidTransform};
use grasp_core::plant::{PdGains, DEFAULT_DT, DEFAULT_LAG};
use grasp_core::rewards::{LiftCommand, Mvbb, RewardConfig};
use grasp_core::steer::ApfConfig;
use nalgebra::{DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::policy::ScriptedConfig;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Reach, close the fingers on the box, then carry the palm to the lift pose.
    Grasp,
    /// Carry the palm to the sampled pose; no grasp required.
    Reach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectSampler {
    /// Center of the spawn rectangle on the table (m).
    pub workspace_center: [f64; 2],
    /// Rectangle extent along x and y (m).
    pub workspace_size: [f64; 2],
    /// Allowed range of the shortest edge after randomization (m).
    pub shortest_edge: [f64; 2],
    /// Longer edges are the shortest edge times a factor from this range.
    pub aspect: [f64; 2],
    /// Per-axis scale randomization.
    pub scale: [f64; 2],
    pub yaw: [f64; 2],
    /// Nominal object mass (kg) and its randomization factor range.
    pub mass: f64,
    pub mass_factor: [f64; 2],
}

impl Default for ObjectSampler {
    fn default() -> Self {
        Self {
            workspace_center: [0.45, 0.0],
            workspace_size: [0.6, 0.9],
            shortest_edge: [0.03, 0.09],
            aspect: [1.0, 1.5],
            scale: [0.8, 1.2],
            yaw: [-PI, PI],
            mass: 0.1,
            mass_factor: [0.8, 1.2],
        }
    }
}

/// Box of target palm poses: uniform position, palm facing down with a
/// uniform yaw about world z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseSampler {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub yaw: [f64; 2],
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            min: [0.35, -0.15, 0.30],
            max: [0.55, 0.15, 0.40],
            yaw: [-0.3, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessConfig {
    /// Palm-to-target distance counted as arrived (m).
    pub position_tolerance: f64,
    /// Contacts required for a held grasp.
    pub min_contacts: usize,
    /// Time the grasp must be held before it latches (s).
    pub hold_time: f64,
}

impl Default for SuccessConfig {
    fn default() -> Self {
        Self {
            position_tolerance: 0.02,
            min_contacts: 3,
            hold_time: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdConfig {
    pub kp: f64,
    pub kd: f64,
    /// Constant feedforward torque per joint (empty means zero).
    pub tau_ff: Vec<f64>,
}

impl Default for PdConfig {
    fn default() -> Self {
        Self {
            kp: 100.0,
            kd: 5.0,
            tau_ff: Vec::new(),
        }
    }
}

fn default_chain() -> String {
    "../chains/arm_5f.toml".into()
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    /// Chain file, relative to the scenario file.
    #[serde(default = "default_chain")]
    pub chain: String,
    /// Expected platform of the chain; checked at load time when present.
    #[serde(default)]
    pub platform: Option<Platform>,
    pub task: Task,
    #[serde(default = "default_episode_length")]
    pub episode_length: f64,
    #[serde(default = "default_command_period")]
    pub command_period: f64,
    #[serde(default = "default_dt")]
    pub controller_dt: f64,
    #[serde(default = "default_lag")]
    pub lag_time_constant: f64,
    #[serde(default)]
    pub seed: u64,
    /// Initial configuration; defaults to the chain's home.
    #[serde(default)]
    pub initial_q: Option<Vec<f64>>,
    #[serde(default)]
    pub object: ObjectSampler,
    #[serde(default)]
    pub target: PoseSampler,
    #[serde(default)]
    pub success: SuccessConfig,
    #[serde(default)]
    pub ik: IkConfig,
    #[serde(default)]
    pub rewards: RewardConfig,
    #[serde(default)]
    pub apf: Option<ApfConfig>,
    #[serde(default)]
    pub collision: CollisionDescription,
    #[serde(default)]
    pub pd: PdConfig,
    #[serde(default)]
    pub policy: ScriptedConfig,
}

fn default_episode_length() -> f64 {
    5.0
}

fn default_command_period() -> f64 {
    0.01
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_lag() -> f64 {
    DEFAULT_LAG
}

/// A scenario with its chain and collision model resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub path: Option<PathBuf>,
    pub model: ChainModel,
    pub collision: CollisionModel,
    /// Controller steps per command.
    pub substeps: usize,
    /// Command steps per episode.
    pub command_steps: usize,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let file: ScenarioFile =
            toml::from_str(&text).map_err(|e| HarnessError::Scenario(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let model = ChainModel::load(base.join(&file.chain))?;
        let mut s = Self::from_parts(file, model)?;
        s.path = Some(path.to_path_buf());
        Ok(s)
    }

    pub fn from_parts(file: ScenarioFile, model: ChainModel) -> Result<Self, HarnessError> {
        let collision = CollisionModel::from_description(&model, &file.collision)?;
        let (substeps, command_steps) = validate(&file, &model)?;
        Ok(Self {
            file,
            path: None,
            model,
            collision,
            substeps,
            command_steps,
        })
    }

    pub fn initial_q(&self) -> DVector<f64> {
        match &self.file.initial_q {
            Some(q) => DVector::from_column_slice(q),
            None => self.model.home(),
        }
    }

    pub fn pd_gains(&self) -> PdGains {
        let n = self.model.dof();
        let mut g = PdGains::uniform(n, self.file.pd.kp, self.file.pd.kd);
        if !self.file.pd.tau_ff.is_empty() {
            g.tau_ff = DVector::from_column_slice(&self.file.pd.tau_ff);
        }
        g
    }
}

fn ratio(a: f64, b: f64, what: &str) -> Result<usize, HarnessError> {
    let r = a / b;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-9 {
        return Err(HarnessError::Scenario(format!("{what} must be a positive integer multiple, got {r}")));
    }
    Ok(n as usize)
}

fn ordered(r: [f64; 2], what: &str) -> Result<(), HarnessError> {
    if !(r[0] <= r[1]) || !r.iter().all(|v| v.is_finite()) {
        return Err(HarnessError::Scenario(format!("{what} range must be finite and ordered")));
    }
    Ok(())
}

fn validate(f: &ScenarioFile, model: &ChainModel) -> Result<(usize, usize), HarnessError> {
    if let Some(p) = f.platform {
        if p != model.platform() {
            return Err(HarnessError::Scenario(format!(
                "scenario expects platform {p}, chain declares {}",
                model.platform()
            )));
        }
    }
    if !(f.controller_dt > 0.0 && f.command_period > 0.0 && f.episode_length > 0.0) {
        return Err(HarnessError::Scenario("time steps and episode length must be positive".into()));
    }
    let substeps = ratio(f.command_period, f.controller_dt, "command_period / controller_dt")?;
    let steps = ratio(f.episode_length, f.command_period, "episode_length / command_period")?;
    f.ik.validate()?;
    f.rewards.validate()?;
    if let Some(apf) = &f.apf {
        apf.validate()?;
    }
    if let Some(q) = &f.initial_q {
        model.check_dimension(&DVector::from_column_slice(q))?;
    }
    if !f.pd.tau_ff.is_empty() && f.pd.tau_ff.len() != model.dof() {
        return Err(HarnessError::Scenario("pd.tau_ff length must match the joint count".into()));
    }
    if !(f.pd.kp >= 0.0 && f.pd.kd >= 0.0) {
        return Err(HarnessError::Scenario("pd gains must be non-negative".into()));
    }
    let o = &f.object;
    ordered(o.shortest_edge, "object.shortest_edge")?;
    ordered(o.aspect, "object.aspect")?;
    ordered(o.scale, "object.scale")?;
    ordered(o.yaw, "object.yaw")?;
    ordered(o.mass_factor, "object.mass_factor")?;
    if !(o.shortest_edge[0] > 0.0 && o.aspect[0] >= 1.0 && o.scale[0] > 0.0) {
        return Err(HarnessError::Scenario("object edge, aspect and scale ranges must be positive (aspect ≥ 1)".into()));
    }
    if !o.workspace_size.iter().all(|s| *s > 0.0) {
        return Err(HarnessError::Scenario("object.workspace_size must be positive".into()));
    }
    for i in 0..3 {
        ordered([f.target.min[i], f.target.max[i]], "target position")?;
    }
    ordered(f.target.yaw, "target.yaw")?;
    if !(f.success.position_tolerance > 0.0 && f.success.hold_time >= 0.0) {
        return Err(HarnessError::Scenario("success tolerances must be positive".into()));
    }
    f.policy.validate()?;
    Ok((substeps, steps))
}

/// Everything random about one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSetup {
    pub seed: u64,
    pub object: Mvbb,
    pub mass: f64,
    pub target: LiftCommand,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Palm-down orientation: palm normal along −z world, fingers along −x, then
/// a yaw about world z.
pub fn palm_down(yaw: f64) -> UnitQuaternion<f64> {
    let down = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), PI);
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * down
}

/// Samples edge lengths whose shortest edge lies in the configured range after
/// scale randomization; the mass follows the cube of the mean scale.
pub fn sample_dimensions(rng: &mut ChaCha8Rng, o: &ObjectSampler) -> (Vector3<f64>, f64) {
    loop {
        let s = uniform(rng, o.shortest_edge);
        let nominal = Vector3::new(s, s * uniform(rng, o.aspect), s * uniform(rng, o.aspect));
        let scale = Vector3::new(uniform(rng, o.scale), uniform(rng, o.scale), uniform(rng, o.scale));
        let d = nominal.component_mul(&scale);
        let shortest = d.min();
        let mean_scale = (scale.x * scale.y * scale.z).cbrt();
        let mass = o.mass * uniform(rng, o.mass_factor) * mean_scale.powi(3);
        if shortest >= o.shortest_edge[0] && shortest <= o.shortest_edge[1] {
            return (d, mass);
        }
    }
}

pub fn sample_episode(scenario: &Scenario, seed: u64) -> EpisodeSetup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let o = &scenario.file.object;
    let (dims, mass) = sample_dimensions(&mut rng, o);
    let half = [0.5 * o.workspace_size[0], 0.5 * o.workspace_size[1]];
    let x = o.workspace_center[0] + uniform(&mut rng, [-half[0], half[0]]);
    let y = o.workspace_center[1] + uniform(&mut rng, [-half[1], half[1]]);
    let orientation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), uniform(&mut rng, o.yaw));
    let object = Mvbb::new(Vector3::new(x, y, 0.5 * dims.z), orientation, dims).expect("sampled dimensions are positive");

    let t = &scenario.file.target;
    let p = Vector3::new(
        uniform(&mut rng, [t.min[0], t.max[0]]),
        uniform(&mut rng, [t.min[1], t.max[1]]),
        uniform(&mut rng, [t.min[2], t.max[2]]),
    );
    let target = LiftCommand {
        position: p,
        orientation: palm_down(uniform(&mut rng, t.yaw)),
    };
    EpisodeSetup {
        seed,
        object,
        mass,
        target,
    }
}

/// World pose helper for the target.
pub fn target_pose(t: &LiftCommand) -> RigidTransform {
    RigidTransform::from_quaternion(&t.orientation, t.position)
}
