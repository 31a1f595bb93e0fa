//! Siamese pairwise ranking network.
//!
//! A stack of fully connected log-sigmoid layers followed by an affine ranking
//! layer that maps the last hidden activations to a scalar rank value. Both
//! members of a pair are scored by the same parameters; the pair probability is
//! the logistic function of the score difference and the loss is cross entropy
//! against the target probability.

mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RandomSource;
use crate::relarm::FeatureSet;

pub use train::{gradients, mean_loss, train, PairBatch, RpropState, TrainOutcome};

pub const CHECKPOINT_VERSION: u32 = 1;
const PROBABILITY_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpropConfig {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta_init: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for RpropConfig {
    fn default() -> Self {
        RpropConfig {
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta_init: 0.1,
            delta_min: 1e-6,
            delta_max: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Hidden layer widths; the ranking layer comes after these.
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub epochs: usize,
    /// Training stops once the epoch-to-epoch change in mean loss drops below this.
    pub loss_tolerance: f64,
    #[serde(default)]
    pub rprop: RpropConfig,
}

impl NetworkConfig {
    pub fn new(input_dim: usize) -> Self {
        NetworkConfig {
            input_dim,
            hidden: vec![10, 10, 10],
            seed: 0,
            epochs: 500,
            loss_tolerance: 1e-7,
            rprop: RpropConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("network input dimension must be >= 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        let r = &self.rprop;
        if !(r.eta_plus > 1.0 && r.eta_minus > 0.0 && r.eta_minus < 1.0) {
            return Err(Error::invalid("rprop needs eta_plus > 1 and 0 < eta_minus < 1"));
        }
        if !(r.delta_min > 0.0 && r.delta_min <= r.delta_init && r.delta_init <= r.delta_max) {
            return Err(Error::invalid("rprop needs 0 < delta_min <= delta_init <= delta_max"));
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Hidden layers followed by the single-output ranking layer (always last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    pub layers: Vec<Layer>,
}

impl RankModel {
    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn ranking_layer(&self) -> &Layer {
        self.layers.last().expect("model has a ranking layer")
    }

    pub fn zeros_like(&self) -> RankModel {
        RankModel {
            layers: self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Layer::params).copied().collect()
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Layer::params_mut)
    }

    pub fn set_parameters(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.parameter_count());
        for (p, v) in self.parameters_mut().zip(values) {
            *p = *v;
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::invalid("model has no layers"))?;
        if last.outputs != 1 {
            return Err(Error::invalid("ranking layer must have a single output"));
        }
        for w in self.layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::invalid("layer shapes do not chain"));
            }
        }
        for l in &self.layers {
            if l.inputs == 0 || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::invalid("layer parameter lengths do not match its shape"));
            }
        }
        if self.parameters().iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("model has non-finite parameters"));
        }
        Ok(())
    }

    /// Activations of every layer: `[input, hidden_1, ..., hidden_L, rank]`.
    fn forward(&self, a: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(a.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(acts.last().unwrap());
            if l < last {
                z.iter_mut().for_each(|x| *x = logistic(*x));
            }
            acts.push(z);
        }
        acts
    }
}

/// Uniform weights in ±1/√fan_in, zero biases.
pub fn init_model(cfg: &NetworkConfig) -> Result<RankModel> {
    cfg.validate()?;
    let mut rng = RandomSource::new(cfg.seed);
    let widths: Vec<usize> = std::iter::once(cfg.input_dim)
        .chain(cfg.hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let layers = widths
        .windows(2)
        .map(|w| {
            let (inputs, outputs) = (w[0], w[1]);
            let bound = 1.0 / (inputs as f64).sqrt();
            let mut layer = Layer::zeros(inputs, outputs);
            layer
                .weights
                .iter_mut()
                .for_each(|x| *x = rng.uniform(-bound, bound));
            layer
        })
        .collect();
    Ok(RankModel { layers })
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Rank value of a single feature vector.
pub fn score(m: &RankModel, a: &[f64]) -> Result<f64> {
    if a.len() != m.input_dim() {
        return Err(Error::invalid(format!(
            "feature vector has {} components, model expects {}",
            a.len(),
            m.input_dim()
        )));
    }
    Ok(m.forward(a).last().unwrap()[0])
}

pub fn score_all(m: &RankModel, features: &FeatureSet) -> Result<Vec<f64>> {
    features.vectors().iter().map(|a| score(m, a)).collect()
}

/// Probability that the first item outranks the second.
pub fn pair_probability(rank_i: f64, rank_j: f64) -> f64 {
    logistic(rank_i - rank_j)
}

/// Cross entropy of target `t` against predicted `p`, with `p` clamped away from 0 and 1.
pub fn pair_loss(t: f64, p: f64) -> f64 {
    let p = p.clamp(PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON);
    -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: NetworkConfig,
    model: RankModel,
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &RankModel, cfg: &NetworkConfig) -> Result<()> {
    let path = path.as_ref();
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        model: model.clone(),
    };
    let text = serde_json::to_string_pretty(&ck).expect("checkpoint serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RankModel, NetworkConfig)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    if ck.version > CHECKPOINT_VERSION {
        return Err(Error::Format {
            path: path.to_owned(),
            message: format!("checkpoint version {} is newer than supported {CHECKPOINT_VERSION}", ck.version),
        });
    }
    ck.model.check_shapes().map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    Ok((ck.model, ck.config))
}
