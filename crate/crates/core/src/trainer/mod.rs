//! Training a small feature extractor against a fixed centroid frame.
//!
//! The forward pass is an MLP followed by L2 normalization; the classifier
//! head is the frame itself (`cos θ_j = f · a_j`) and is never updated.

mod data;
mod network;

pub use data::{
    blob_radius, make_synthetic, EmbeddingSet, OodKind, Role, SyntheticData, BLOB_SHIFT,
    CLASS_SEPARATION,
};
pub use network::{Activation, Gradient, Layer, Model, NetworkSpec};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::CentroidFrame;
use crate::geometry::argmax;
use crate::loss::{pedcc_loss, LossParams};
use crate::par::{self, Execution};
use network::normalize_backward;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            loss: LossParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Sample-weighted mean PEDCC-Loss of each epoch.
    pub history: Vec<f64>,
}

/// Loss and parameter gradient of one batch.
pub fn batch_gradient(
    model: &Model,
    frame: &CentroidFrame,
    inputs: &[&[f64]],
    labels: &[usize],
    params: &LossParams,
) -> Result<(f64, Gradient)> {
    let traces: Vec<_> = inputs.iter().map(|x| model.forward_trace(x)).collect();
    let mut units = Vec::with_capacity(traces.len());
    for (i, h) in traces.iter().map(|t| t.output()).enumerate() {
        let n = crate::linalg::norm(h);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::numerical(format!("degenerate feature norm {n}")).at_sample(i));
        }
        units.push(h.iter().map(|v| v / n).collect::<Vec<f64>>());
    }
    let value = pedcc_loss(&units, labels, frame, params)?;
    let mut grad = model.zero_gradient();
    for (trace, g_u) in traces.iter().zip(&value.grad_f) {
        let d_out = normalize_backward(trace.output(), g_u);
        model.backward(trace, &d_out, &mut grad);
    }
    Ok((value.total, grad))
}

/// Trains `network` with SGD + momentum on PEDCC-Loss against `frame`.
pub fn train(
    network: &NetworkSpec,
    frame: &CentroidFrame,
    data: &EmbeddingSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    network.validate()?;
    if network.feature_dim != frame.dim() {
        return Err(Error::DimensionMismatch {
            expected: frame.dim(),
            actual: network.feature_dim,
        });
    }
    if data.dim() != network.input_dim {
        return Err(Error::DimensionMismatch {
            expected: network.input_dim,
            actual: data.dim(),
        });
    }
    let labels = data.class_labels(frame.num_classes())?;
    let mut model = Model::init(network)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    if data.is_empty() {
        return if cfg.epochs == 0 {
            Ok(TrainOutcome { model, history })
        } else {
            Err(Error::invalid("training set is empty"))
        };
    }

    let mut velocity = model.zero_gradient();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| data.vectors()[i].as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = batch_gradient(&model, frame, &xs, &ys, &cfg.loss)
                .map_err(|e| Error::numerical(format!("epoch {epoch}, batch {b}: {e}")))?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!(
                    "epoch {epoch}, batch {b}: non-finite loss {loss}"
                )));
            }
            epoch_loss += loss * chunk.len() as f64;

            for (v, g) in velocity.iter_mut().zip(&grad) {
                for (vr, gr) in v.weights.iter_mut().zip(&g.weights) {
                    for (vv, gv) in vr.iter_mut().zip(gr) {
                        *vv = cfg.momentum * *vv + gv;
                    }
                }
                for (vv, gv) in v.bias.iter_mut().zip(&g.bias) {
                    *vv = cfg.momentum * *vv + gv;
                }
            }
            model.update_with(&velocity, |w, v| *w -= cfg.learning_rate * v);
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainOutcome { model, history })
}

/// Maps every input row to its unit feature vector. Rows whose raw feature
/// is zero are collected and reported together.
pub fn embed(model: &Model, data: &EmbeddingSet) -> Result<EmbeddingSet> {
    embed_with(Execution::default(), model, data)
}

pub fn embed_with(exec: Execution, model: &Model, data: &EmbeddingSet) -> Result<EmbeddingSet> {
    if data.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: data.dim(),
        });
    }
    let features = par::map(exec, data.vectors(), |x| model.embed_one(x));
    let zero: Vec<usize> = features
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.is_none().then_some(i))
        .collect();
    if !zero.is_empty() {
        return Err(Error::ZeroFeatures(zero));
    }
    let mut out = EmbeddingSet::new(model.feature_dim(), data.role());
    for (f, label) in features.into_iter().zip(data.labels()) {
        out.push(f.expect("checked above"), *label)?;
    }
    Ok(out)
}

/// Fraction of labeled rows whose largest `cos θ` is the true class.
pub fn accuracy(frame: &CentroidFrame, embedded: &EmbeddingSet) -> Result<f64> {
    let labels = embedded.class_labels(frame.num_classes())?;
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let correct = embedded
        .vectors()
        .iter()
        .zip(&labels)
        .filter(|(f, y)| argmax(&frame.dots(f)) == **y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Reads an embedding CSV written by this crate or by an external
/// feature extractor.
pub fn import_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    crate::io::read_embeddings(path).map(|t| t.value)
}
