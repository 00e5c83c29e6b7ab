use std::path::Path;
use std::sync::Arc;

use grasp_core::kinematics::{ChainModel, Twist, TwistFrame};
use grasp_core::rewards::{arm_observation_len, hand_observation_len};
use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyInput};
use crate::HarnessError;

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// `weight` is stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn shape(&self) -> Result<(usize, usize), HarnessError> {
        let out = self.weight.len();
        let inp = self.weight.first().map_or(0, Vec::len);
        if out == 0 || inp == 0 || self.weight.iter().any(|r| r.len() != inp) || self.bias.len() != out {
            return Err(HarnessError::Policy("dense layer has ragged or empty weights".into()));
        }
        if !self.weight.iter().flatten().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(HarnessError::Policy("dense layer has non-finite weights".into()));
        }
        Ok((out, inp))
    }
}

/// Dense feed-forward network; the activation is applied to every layer but
/// the last.
#[derive(Debug, Clone)]
pub struct MlpNet {
    layers: Vec<(DMatrix<f64>, DVector<f64>)>,
    activation: Activation,
}

impl MlpNet {
    pub fn from_layers(layers: &[DenseLayer], activation: Activation) -> Result<Self, HarnessError> {
        if layers.is_empty() {
            return Err(HarnessError::Policy("network has no layers".into()));
        }
        let mut out = Vec::with_capacity(layers.len());
        let mut prev: Option<usize> = None;
        for (i, l) in layers.iter().enumerate() {
            let (rows, cols) = l.shape()?;
            if let Some(p) = prev {
                if p != cols {
                    return Err(HarnessError::Policy(format!("layer {i} expects {cols} inputs, previous layer gives {p}")));
                }
            }
            prev = Some(rows);
            let w = DMatrix::from_fn(rows, cols, |r, c| l.weight[r][c]);
            out.push((w, DVector::from_column_slice(&l.bias)));
        }
        Ok(Self { layers: out, activation })
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].0.ncols()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("non-empty").0.nrows()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = w * h + b;
            if i < last {
                h.apply(|v| *v = self.activation.apply(*v));
            }
        }
        h
    }
}

/// Weight file for the two actors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    #[serde(default)]
    pub activation: Activation,
    pub arm: Vec<DenseLayer>,
    pub hand: Vec<DenseLayer>,
    /// Output multipliers; missing means one.
    #[serde(default)]
    pub arm_scale: Option<Vec<f64>>,
    #[serde(default)]
    pub hand_scale: Option<Vec<f64>>,
}

fn random_layers(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Vec<DenseLayer> {
    sizes
        .windows(2)
        .map(|w| {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            DenseLayer {
                weight: (0..w[1]).map(|_| (0..w[0]).map(|_| rng.random_range(-bound..bound)).collect()).collect(),
                bias: vec![0.0; w[1]],
            }
        })
        .collect()
}

impl MlpWeights {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Policy(format!("weights: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("weights serialize")
    }

    /// Glorot-uniform weights sized for `model`, zero biases.
    pub fn random(model: &ChainModel, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = model.fingers().len();
        let mut arm = vec![arm_observation_len(model.dof())];
        arm.extend_from_slice(hidden);
        arm.push(6);
        let mut hand = vec![hand_observation_len(model.hand_dof(), k)];
        hand.extend_from_slice(hidden);
        hand.push(3 * k);
        Self {
            activation: Activation::Elu,
            arm: random_layers(&mut rng, &arm),
            hand: random_layers(&mut rng, &hand),
            arm_scale: None,
            hand_scale: None,
        }
    }

    /// Checks input and output sizes against the observation and action
    /// layouts of `model`.
    pub fn check_shapes(&self, model: &ChainModel) -> Result<(), HarnessError> {
        let k = model.fingers().len();
        let arm = MlpNet::from_layers(&self.arm, self.activation)?;
        let hand = MlpNet::from_layers(&self.hand, self.activation)?;
        let want = [
            ("arm input", arm.input_len(), arm_observation_len(model.dof())),
            ("arm output", arm.output_len(), 6),
            ("hand input", hand.input_len(), hand_observation_len(model.hand_dof(), k)),
            ("hand output", hand.output_len(), 3 * k),
        ];
        for (what, got, expected) in want {
            if got != expected {
                return Err(HarnessError::Policy(format!("{what}: expected {expected}, got {got}")));
            }
        }
        if let Some(s) = &self.arm_scale {
            if s.len() != 6 {
                return Err(HarnessError::Policy("arm_scale must have 6 entries".into()));
            }
        }
        if let Some(s) = &self.hand_scale {
            if s.len() != 3 * k {
                return Err(HarnessError::Policy(format!("hand_scale must have {} entries", 3 * k)));
            }
        }
        Ok(())
    }
}

pub(crate) struct MlpPolicy {
    arm: MlpNet,
    hand: MlpNet,
    arm_scale: DVector<f64>,
    hand_scale: DVector<f64>,
}

impl MlpPolicy {
    /// Shapes must have been checked.
    pub(crate) fn new(w: Arc<MlpWeights>) -> Self {
        let arm = MlpNet::from_layers(&w.arm, w.activation).expect("checked shapes");
        let hand = MlpNet::from_layers(&w.hand, w.activation).expect("checked shapes");
        let scale = |s: &Option<Vec<f64>>, n: usize| match s {
            Some(v) => DVector::from_column_slice(v),
            None => DVector::from_element(n, 1.0),
        };
        let arm_scale = scale(&w.arm_scale, arm.output_len());
        let hand_scale = scale(&w.hand_scale, hand.output_len());
        Self {
            arm,
            hand,
            arm_scale,
            hand_scale,
        }
    }
}

impl Policy for MlpPolicy {
    fn arm_action(&mut self, input: &PolicyInput<'_>) -> Twist {
        let y = self.arm.forward(&input.observations.arm).component_mul(&self.arm_scale);
        Twist::from_vector(&Vector6::from_column_slice(y.as_slice()), TwistFrame::World)
    }

    fn hand_action(&mut self, input: &PolicyInput<'_>, _arm: &Twist) -> Vec<Vector3<f64>> {
        let y = self.hand.forward(&input.observations.hand).component_mul(&self.hand_scale);
        y.as_slice().chunks(3).map(Vector3::from_column_slice).collect()
    }
}
