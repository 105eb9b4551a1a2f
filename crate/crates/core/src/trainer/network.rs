//! Fully connected feature extractor with manual backpropagation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid("all network dimensions must be >= 1"));
        }
        Ok(())
    }

    /// `[input, hidden.., feature]`
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims
    }
}

/// Affine layer `z = W x + b`, `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: vec![vec![0.0; inputs]; outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.weights.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }
}

/// Parameter gradient with the same shape as the model's layers.
pub type Gradient = Vec<Layer>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

/// Forward-pass intermediates for one sample.
pub(crate) struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

impl Trace {
    /// Raw final-layer output.
    pub(crate) fn output(&self) -> &[f64] {
        self.pre.last().map_or(&[], Vec::as_slice)
    }
}

impl Model {
    /// Seed-determined initialization: weights uniform in
    /// `±1/sqrt(fan_in)`, biases zero.
    pub fn init(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let dims = spec.layer_dims();
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weights: (0..w[1])
                        .map(|_| (0..w[0]).map(|_| rng.random_range(-bound..bound)).collect())
                        .collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Checks that layer shapes agree with the spec.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let dims = self.spec.layer_dims();
        if self.layers.len() != dims.len() - 1 {
            return Err(Error::invalid(format!(
                "model has {} layers, spec implies {}",
                self.layers.len(),
                dims.len() - 1
            )));
        }
        for (k, (layer, w)) in self.layers.iter().zip(dims.windows(2)).enumerate() {
            if layer.outputs() != w[1]
                || layer.bias.len() != w[1]
                || layer.weights.iter().any(|r| r.len() != w[0])
            {
                return Err(Error::invalid(format!(
                    "layer {k} shape does not match {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub(crate) fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            let next = if k < last {
                z.iter().map(|&v| self.spec.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        Trace { inputs, pre }
    }

    /// Raw (un-normalized) feature vector.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).pre.pop().unwrap_or_default()
    }

    /// Unit feature vector, or `None` when the raw feature is zero.
    pub fn embed_one(&self, x: &[f64]) -> Option<Vec<f64>> {
        let h = self.features(x);
        let n = norm(&h);
        (n > 0.0 && n.is_finite()).then(|| h.into_iter().map(|v| v / n).collect())
    }

    pub fn zero_gradient(&self) -> Gradient {
        self.layers
            .iter()
            .map(|l| Layer::zeros(l.inputs(), l.outputs()))
            .collect()
    }

    /// Accumulates into `grad` the parameter gradient given `d_out`, the
    /// gradient with respect to the raw final-layer output.
    pub(crate) fn backward(&self, trace: &Trace, d_out: &[f64], grad: &mut Gradient) {
        let mut delta = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let input = &trace.inputs[k];
            let g = &mut grad[k];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += d;
                for (gw, x) in g.weights[o].iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if k == 0 {
                break;
            }
            let layer = &self.layers[k];
            let z_prev = &trace.pre[k - 1];
            delta = (0..layer.inputs())
                .map(|i| {
                    let back: f64 = layer
                        .weights
                        .iter()
                        .zip(&delta)
                        .map(|(w, d)| w[i] * d)
                        .sum();
                    back * self.spec.activation.derivative(z_prev[i])
                })
                .collect();
        }
    }

    /// Applies `f(param, grad_component)` to every parameter.
    pub(crate) fn update_with(&mut self, other: &Gradient, mut f: impl FnMut(&mut f64, f64)) {
        for (l, g) in self.layers.iter_mut().zip(other) {
            for (wr, gr) in l.weights.iter_mut().zip(&g.weights) {
                for (w, gv) in wr.iter_mut().zip(gr) {
                    f(w, *gv);
                }
            }
            for (b, gv) in l.bias.iter_mut().zip(&g.bias) {
                f(b, *gv);
            }
        }
    }
}

/// Backpropagates a gradient with respect to the unit feature `u = h/‖h‖`
/// to the raw output `h`.
pub(crate) fn normalize_backward(h: &[f64], grad_u: &[f64]) -> Vec<f64> {
    let n = norm(h);
    let u: Vec<f64> = h.iter().map(|x| x / n).collect();
    let radial = dot(&u, grad_u);
    grad_u
        .iter()
        .zip(&u)
        .map(|(g, ui)| (g - radial * ui) / n)
        .collect()
}
