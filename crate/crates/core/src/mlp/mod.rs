//! Feed-forward network mapping normalized loads to generator scaling
//! factors: ReLU hidden layers, sigmoid output.
//!
//! Training minimizes `w1 * L_PG + w2 * L_pen`, where `L_PG` is the mean
//! squared error on the scaling factors and `L_pen` penalizes reconstructed
//! line flows beyond their limits (see [`PenaltyContext`]).

mod model;
mod penalty;
mod train;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use model::{InferenceScratch, MlpModel, MODEL_VERSION};
pub use penalty::PenaltyContext;
pub use train::{
    backward, loss, train, write_training_log, EpochStats, LossValue, TrainedModel,
    TrainingConfig, TrainingExample,
};

/// One affine layer; `weights` is row-major, `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// `out = W x + b`
    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in self.weights.chunks_exact(self.inputs).enumerate() {
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out[o] = acc;
        }
    }
}

/// Weights and biases of every layer. The last layer is the output layer;
/// the ones before it are hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParameters {
    pub layers: Vec<Layer>,
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidInput(format!(
            "layer sizes {sizes:?} must list at least an input and an output width, all positive"
        )));
    }
    Ok(())
}

impl MlpParameters {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(MlpParameters {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn xavier(sizes: &[usize], rng: &mut impl rand::Rng) -> Result<Self> {
        let mut p = Self::zeros(sizes)?;
        for layer in &mut p.layers {
            let a = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a);
            for w in &mut layer.weights {
                *w = dist.sample(rng);
            }
        }
        Ok(p)
    }

    pub fn xavier_seeded(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::xavier(sizes, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// `[K_in, K_1, ..., K_out]`
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Widest hidden layer (0 without hidden layers).
    pub fn max_width(&self) -> usize {
        self.layers[..self.depth()]
            .iter()
            .map(|l| l.outputs)
            .max()
            .unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters in a fixed order: per layer, weights then biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::new(self);
        self.forward_with(x, &mut ws).to_vec()
    }

    /// Allocation-free forward pass; the result lives in `ws`.
    pub fn forward_with<'w>(&self, x: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        assert_eq!(x.len(), self.n_inputs(), "input length");
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.act.split_at_mut(i);
            let input: &[f64] = if i == 0 { x } else { &before[i - 1] };
            let pre = &mut ws.pre[i];
            layer.affine(input, pre);
            let out = &mut after[0];
            if i == last {
                for (o, z) in out.iter_mut().zip(pre.iter()) {
                    *o = sigmoid(*z);
                }
            } else {
                for (o, z) in out.iter_mut().zip(pre.iter()) {
                    *o = z.max(0.0);
                }
            }
        }
        &ws.act[last]
    }
}

/// Pre- and post-activation buffers of one forward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(params: &MlpParameters) -> Self {
        let pre: Vec<Vec<f64>> = params
            .layers
            .iter()
            .map(|l| vec![0.0; l.outputs])
            .collect();
        Workspace {
            act: pre.clone(),
            pre,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parses hidden widths written as `"32/16/8"`.
pub fn parse_architecture(s: &str) -> Result<Vec<usize>> {
    let widths: std::result::Result<Vec<usize>, _> =
        s.split('/').map(|w| w.trim().parse::<usize>()).collect();
    match widths {
        Ok(w) if !w.is_empty() && !w.contains(&0) => Ok(w),
        _ => Err(Error::InvalidInput(format!(
            "architecture {s:?} must be positive widths separated by '/'"
        ))),
    }
}

pub fn format_architecture(hidden: &[usize]) -> String {
    hidden
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join("/")
}

/// Hidden widths by network size, following common practice for the IEEE
/// test systems: three hidden layers that widen with the bus count.
pub fn default_architecture(n_buses: usize) -> Vec<usize> {
    match n_buses {
        0..=57 => vec![32, 16, 8],
        58..=118 => vec![128, 64, 32],
        _ => vec![256, 128, 64],
    }
}
