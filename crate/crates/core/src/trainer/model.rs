//! Feed-forward embedding model mapping observations to feature vectors.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Topology of the embedding network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub activation: Activation,
    /// L2-normalise the output features.
    pub normalize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            feature_dim: 16,
            activation: Activation::Tanh,
            normalize: true,
        }
    }
}

/// Multi-layer perceptron. Hidden layers use the configured activation, the
/// output layer is affine, optionally followed by L2 normalisation.
///
/// Parameters live in one flat vector: for each layer, the row-major weight
/// matrix (`out × in`) followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    sizes: Vec<usize>,
    activation: Activation,
    normalize: bool,
    params: Vec<f64>,
}

/// Per-layer intermediate values kept for backpropagation.
struct Trace {
    /// Layer inputs; `inputs[0]` is the observation.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
    /// Output before normalisation.
    raw: Vec<f64>,
}

impl EmbeddingModel {
    /// Glorot-uniform weights and zero biases.
    pub fn new(input_dim: usize, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(config.feature_dim);
        let mut model = Self::zeros(sizes, config.activation, config.normalize)?;
        let mut offset = 0;
        for l in 0..model.layers() {
            let (fan_in, fan_out) = (model.sizes[l], model.sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut model.params[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(model)
    }

    pub fn zeros(sizes: Vec<usize>, activation: Activation, normalize: bool) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes,
            activation,
            normalize,
            params: vec![0.0; count],
        })
    }

    pub fn from_params(
        sizes: Vec<usize>,
        activation: Activation,
        normalize: bool,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::zeros(sizes, activation, normalize)?;
        if params.len() != m.params.len() {
            return Err(Error::DimensionMismatch {
                expected: m.params.len(),
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite model parameter"));
        }
        m.params = params;
        Ok(m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn trace(&self, observation: &[f64]) -> Result<Trace> {
        if observation.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: observation.len(),
            });
        }
        let mut inputs = vec![observation.to_vec()];
        let mut pre = Vec::with_capacity(self.layers());
        let mut offset = 0;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let x = &inputs[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l + 1 < self.layers() {
                inputs.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            }
            pre.push(z);
            offset += n_in * n_out + n_out;
        }
        let raw = pre.last().unwrap().clone();
        Ok(Trace { inputs, pre, raw })
    }

    /// Feature vector of one observation.
    pub fn forward(&self, observation: &[f64]) -> Result<Vec<f64>> {
        let t = self.trace(observation)?;
        Ok(self.finish(t.raw))
    }

    /// Features of many observations.
    pub fn embed<O: AsRef<[f64]>>(&self, observations: &[O]) -> Result<Vec<Vec<f64>>> {
        observations
            .iter()
            .map(|o| self.forward(o.as_ref()))
            .collect()
    }

    fn finish(&self, mut raw: Vec<f64>) -> Vec<f64> {
        if self.normalize {
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                raw.iter_mut().for_each(|v| *v /= norm);
            }
        }
        raw
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient with respect to each observation's feature vector. The
    /// result is summed over the batch.
    pub fn backward<O: AsRef<[f64]>, G: AsRef<[f64]>>(
        &self,
        observations: &[O],
        feature_grads: &[G],
    ) -> Result<Vec<f64>> {
        if observations.len() != feature_grads.len() {
            return Err(Error::DimensionMismatch {
                expected: observations.len(),
                found: feature_grads.len(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        for (obs, g) in observations.iter().zip(feature_grads) {
            self.backward_one(obs.as_ref(), g.as_ref(), &mut grads)?;
        }
        Ok(grads)
    }

    fn backward_one(
        &self,
        observation: &[f64],
        feature_grad: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        if feature_grad.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                found: feature_grad.len(),
            });
        }
        if feature_grad.iter().all(|&g| g == 0.0) {
            return Ok(());
        }
        let t = self.trace(observation)?;

        // through the normalisation: ∂L/∂z = (g − f (f·g)) / ‖z‖
        let mut delta: Vec<f64> = if self.normalize {
            let norm = t.raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                let f: Vec<f64> = t.raw.iter().map(|v| v / norm).collect();
                let fg: f64 = f.iter().zip(feature_grad).map(|(a, b)| a * b).sum();
                f.iter()
                    .zip(feature_grad)
                    .map(|(fi, gi)| (gi - fi * fg) / norm)
                    .collect()
            } else {
                feature_grad.to_vec()
            }
        } else {
            feature_grad.to_vec()
        };

        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |acc, w| {
                let o = *acc;
                *acc += w[0] * w[1] + w[1];
                Some(o)
            })
            .collect();
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &t.inputs[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grads[off + o * n_in..off + (o + 1) * n_in];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += d * xi;
                }
                grads[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            let z = &t.pre[l - 1];
            let y = x;
            delta = prev
                .iter()
                .enumerate()
                .map(|(i, p)| p * self.activation.derivative(z[i], y[i]))
                .collect();
        }
        Ok(())
    }
}

/// A trained model together with the proportionality constant it was trained
/// against.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: EmbeddingModel,
    pub lambda: f64,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut out = String::from("# mappable checkpoint v1\n");
        let sizes: Vec<String> = m.sizes.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "layers {}", sizes.join(" "));
        let _ = writeln!(out, "activation {}", m.activation.name());
        let _ = writeln!(out, "normalize {}", m.normalize);
        let _ = writeln!(out, "lambda {}", self.lambda);
        let _ = writeln!(out, "params {}", m.params.len());
        for p in &m.params {
            let _ = writeln!(out, "{p}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing `{key}`")))?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok((no, v.trim().to_owned())),
                _ => Err(err(no, format!("expected `{key}`"))),
            }
        };
        let (no, layers) = field("layers")?;
        let sizes = layers
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<Vec<usize>, _>>()
            .map_err(|e| err(no, e.to_string()))?;
        let (no, act) = field("activation")?;
        let activation = Activation::parse(&act)
            .ok_or_else(|| err(no, format!("unknown activation `{act}`")))?;
        let (no, norm) = field("normalize")?;
        let normalize: bool = norm
            .parse()
            .map_err(|_| err(no, format!("invalid flag `{norm}`")))?;
        let (no, lam) = field("lambda")?;
        let lambda: f64 = lam
            .parse()
            .map_err(|_| err(no, format!("invalid lambda `{lam}`")))?;
        let (no, count) = field("params")?;
        let count: usize = count
            .parse()
            .map_err(|_| err(no, "invalid parameter count".into()))?;
        let params = lines
            .map(|(no, l)| {
                l.parse::<f64>()
                    .map_err(|_| err(no, format!("invalid parameter `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if params.len() != count {
            return Err(err(
                0,
                format!("declared {count} parameters, found {}", params.len()),
            ));
        }
        let model = EmbeddingModel::from_params(sizes, activation, normalize, params)
            .map_err(|e| err(0, e.to_string()))?;
        Ok(Self { model, lambda })
    }
}
