use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, FeatureSchema, Instance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Exponential,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub output: OutputActivation,
    /// Embedding dimension `b` of every categorical feature.
    pub embedding_dim: usize,
    /// Adds one fictitious level (index `K`) to every embedding table.
    #[serde(default)]
    pub extra_level: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![20, 15, 10],
            activation: Activation::Tanh,
            output: OutputActivation::Exponential,
            embedding_dim: 2,
            extra_level: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden_sizes must be a non-empty list of positive widths".into(),
            ));
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidArgument("embedding_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }
}

/// All trainable arrays. Gradients share this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// One `rows × embedding_dim` table per categorical feature, row-major.
    pub embeddings: Vec<Vec<f64>>,
    pub layers: Vec<Dense>,
}

impl Parameters {
    pub fn zeros_like(&self) -> Self {
        Self {
            embeddings: self.embeddings.iter().map(|e| vec![0.0; e.len()]).collect(),
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.embeddings
            .iter()
            .flatten()
            .chain(self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias)))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.embeddings.iter_mut().flatten().chain(
            self.layers
                .iter_mut()
                .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut())),
        )
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.embeddings.len() == other.embeddings.len()
            && self
                .embeddings
                .iter()
                .zip(&other.embeddings)
                .all(|(a, b)| a.len() == b.len())
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }
}

/// Feedforward network: entity embeddings concatenated after the continuous
/// inputs, tanh hidden layers and a scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    config: NetworkConfig,
    n_continuous: usize,
    level_counts: Vec<usize>,
    params: Parameters,
}

/// Per-sample forward state kept for backpropagation.
#[derive(Debug, Default, Clone)]
pub(crate) struct Activations {
    pub input: Vec<f64>,
    /// Post-activation outputs of every hidden layer.
    pub hidden: Vec<Vec<f64>>,
    pub prediction: f64,
}

fn uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    rng.random_range(-bound..=bound)
}

impl Network {
    /// Randomly initialized network: Glorot-uniform weights, zero biases,
    /// embeddings uniform on `[-0.1, 0.1]` and the fictitious level at zero.
    pub fn new(
        config: NetworkConfig,
        n_continuous: usize,
        level_counts: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::zeroed(config, n_continuous, level_counts)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = net.config.embedding_dim;
        for (k, table) in net.params.embeddings.iter_mut().enumerate() {
            let declared = net.level_counts[k] * dim;
            for v in &mut table[..declared] {
                *v = uniform(&mut rng, 0.1);
            }
        }
        for layer in &mut net.params.layers {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = uniform(&mut rng, bound);
            }
        }
        Ok(net)
    }

    pub fn for_schema(config: NetworkConfig, schema: &FeatureSchema, seed: u64) -> Result<Self> {
        Self::new(config, schema.n_continuous(), schema.level_counts(), seed)
    }

    /// Network with every parameter set to zero.
    pub fn zeroed(config: NetworkConfig, n_continuous: usize, level_counts: Vec<usize>) -> Result<Self> {
        config.validate()?;
        if let Some(k) = level_counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!("categorical input {k} has no levels")));
        }
        let extra = usize::from(config.extra_level);
        let embeddings = level_counts
            .iter()
            .map(|&k| vec![0.0; (k + extra) * config.embedding_dim])
            .collect();
        let input_width = n_continuous + level_counts.len() * config.embedding_dim;
        if input_width == 0 {
            return Err(Error::InvalidArgument("network has no inputs".into()));
        }
        let mut widths = vec![input_width];
        widths.extend(&config.hidden_sizes);
        widths.push(1);
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self {
            config,
            n_continuous,
            level_counts,
            params: Parameters { embeddings, layers },
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn n_continuous(&self) -> usize {
        self.n_continuous
    }

    /// Declared level counts (without the fictitious level).
    pub fn level_counts(&self) -> &[usize] {
        &self.level_counts
    }

    pub fn embedding_rows(&self, k: usize) -> usize {
        self.level_counts[k] + usize::from(self.config.extra_level)
    }

    pub fn input_width(&self) -> usize {
        self.n_continuous + self.level_counts.len() * self.config.embedding_dim
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    /// Sets the output bias so that a network with zero last-layer weights
    /// would predict `mean`, e.g. the portfolio frequency.
    pub fn init_output_bias(&mut self, mean: f64) -> Result<()> {
        let bias = match self.config.output {
            OutputActivation::Identity => mean,
            OutputActivation::Exponential if mean > 0.0 => mean.ln(),
            OutputActivation::Exponential => {
                return Err(Error::InvalidArgument("an exponential output needs a positive mean".into()))
            }
        };
        if !bias.is_finite() {
            return Err(Error::InvalidArgument("output bias must be finite".into()));
        }
        let last = self.params.layers.len() - 1;
        self.params.layers[last].bias[0] = bias;
        Ok(())
    }

    pub(crate) fn set_params(&mut self, params: Parameters) {
        debug_assert!(self.params.same_shape(&params));
        self.params = params;
    }

    pub fn same_shape(&self, other: &Network) -> bool {
        self.config == other.config
            && self.n_continuous == other.n_continuous
            && self.level_counts == other.level_counts
            && self.params.same_shape(&other.params)
    }

    /// Checks internal consistency, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        let reference = Self::zeroed(self.config.clone(), self.n_continuous, self.level_counts.clone())?;
        if !reference.params.same_shape(&self.params)
            || self.params.layers.iter().any(|l| {
                l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs
            })
        {
            return Err(Error::Shape("parameter arrays do not match the network configuration".into()));
        }
        if self.params.values().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("network holds non-finite parameters".into()));
        }
        Ok(())
    }

    fn check_inputs(&self, continuous: &[f64], categorical: &[usize]) -> Result<()> {
        if continuous.len() != self.n_continuous || categorical.len() != self.level_counts.len() {
            return Err(Error::Shape(format!(
                "network expects {} continuous and {} categorical inputs, got {} and {}",
                self.n_continuous,
                self.level_counts.len(),
                continuous.len(),
                categorical.len()
            )));
        }
        for (k, &idx) in categorical.iter().enumerate() {
            let allowed = self.embedding_rows(k);
            if idx >= allowed {
                return Err(Error::InvalidLevel {
                    feature: k,
                    index: idx,
                    allowed,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn forward_into(
        &self,
        continuous: &[f64],
        categorical: &[usize],
        act: &mut Activations,
    ) -> Result<f64> {
        self.check_inputs(continuous, categorical)?;
        let dim = self.config.embedding_dim;
        act.input.clear();
        act.input.extend_from_slice(continuous);
        for (table, &idx) in self.params.embeddings.iter().zip(categorical) {
            act.input.extend_from_slice(&table[idx * dim..(idx + 1) * dim]);
        }
        let n_hidden = self.params.layers.len() - 1;
        act.hidden.resize_with(n_hidden, Vec::new);
        for l in 0..n_hidden {
            let layer = &self.params.layers[l];
            let (before, rest) = act.hidden.split_at_mut(l);
            let prev: &[f64] = if l == 0 { &act.input } else { &before[l - 1] };
            let out = &mut rest[0];
            out.clear();
            out.extend((0..layer.outputs).map(|o| {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let z = layer.bias[o] + row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
                z.tanh()
            }));
        }
        let last = self.params.layers.last().expect("at least one layer");
        let prev: &[f64] = act.hidden.last().map_or(&act.input, |h| h.as_slice());
        let z = last.bias[0] + last.weights.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
        act.prediction = match self.config.output {
            OutputActivation::Exponential => z.exp(),
            OutputActivation::Identity => z,
        };
        Ok(act.prediction)
    }

    pub fn forward(&self, continuous: &[f64], categorical: &[usize]) -> Result<f64> {
        self.forward_into(continuous, categorical, &mut Activations::default())
    }

    pub fn predict(&self, x: &Instance) -> Result<f64> {
        self.forward(&x.continuous, &x.categorical)
    }

    /// Predictions for every row of `data`.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        (0..data.n())
            .into_par_iter()
            .map_init(Activations::default, |act, i| {
                self.forward_into(data.continuous_row(i), data.categorical_row(i), act)
            })
            .collect()
    }

    /// Hex digest of configuration and parameter bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        h.update((self.n_continuous as u64).to_le_bytes());
        for c in &self.level_counts {
            h.update((*c as u64).to_le_bytes());
        }
        for v in self.params.values() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
