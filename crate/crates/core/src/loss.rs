//! PEDCC-Loss: an additive-margin softmax term on the cosines to fixed
//! centroids plus the square root of the mean squared distance to the
//! labelled centroid.
//!
//! ```text
//! L = L_am + n * sqrt(L_mse)
//! L_am  = -(1/N) Σ_i log( e^{s(cos θ_y - m)} / (e^{s(cos θ_y - m)} + Σ_{j≠y} e^{s cos θ_j}) )
//! L_mse =  (1/N) Σ_i ‖f_i - a_{y_i}‖²
//! ```
//!
//! All functions work on the features exactly as given: `cos θ_j = f · a_j`,
//! which is a cosine only for unit `f`. Callers normalize (the trainer does
//! this as part of its forward pass).

use crate::error::{Error, Result};
use crate::frame::CentroidFrame;
use crate::linalg::dot;

/// Added under the square root on the gradient path so a perfectly fitted
/// batch has a finite gradient.
pub const SQRT_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub scale_s: f64,
    pub margin_m: f64,
    pub mse_weight_n: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            scale_s: 7.5,
            margin_m: 0.35,
            mse_weight_n: 1.0,
        }
    }
}

impl LossParams {
    pub fn new(scale_s: f64, margin_m: f64, mse_weight_n: f64) -> Result<Self> {
        let p = Self {
            scale_s,
            margin_m,
            mse_weight_n,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_s > 0.0) || !self.scale_s.is_finite() {
            return Err(Error::invalid(format!("scale s must be > 0, got {}", self.scale_s)));
        }
        if !(self.margin_m >= 0.0) || !self.margin_m.is_finite() {
            return Err(Error::invalid(format!("margin m must be >= 0, got {}", self.margin_m)));
        }
        if !(self.mse_weight_n >= 1.0) || !self.mse_weight_n.is_finite() {
            return Err(Error::invalid(format!(
                "mse weight n must be >= 1, got {}",
                self.mse_weight_n
            )));
        }
        Ok(())
    }
}

/// A batch-mean loss and its gradient with respect to each sample's input.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub am_term: f64,
    pub mse_term: f64,
    pub total: f64,
    /// Gradient of `total` with respect to each feature vector.
    pub grad_f: Vec<Vec<f64>>,
}

fn check_labels(labels: &[usize], n: usize, num_classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes,
            }
            .at_sample(i));
        }
    }
    Ok(())
}

/// Additive-margin softmax cross-entropy, mean over the batch, with the
/// gradient with respect to every cosine.
pub fn am_softmax_loss(
    cos_theta: &[Vec<f64>],
    labels: &[usize],
    params: &LossParams,
) -> Result<BatchLoss> {
    params.validate()?;
    let num_classes = cos_theta.first().map_or(0, Vec::len);
    check_labels(labels, cos_theta.len(), num_classes)?;
    let n = cos_theta.len() as f64;
    let s = params.scale_s;

    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(cos_theta.len());
    for (i, (cos, &y)) in cos_theta.iter().zip(labels).enumerate() {
        if cos.len() != num_classes {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                actual: cos.len(),
            }
            .at_sample(i));
        }
        if cos.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite cosine").at_sample(i));
        }
        let logits: Vec<f64> = cos
            .iter()
            .enumerate()
            .map(|(j, &c)| if j == y { s * (c - params.margin_m) } else { s * c })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - logits[y];

        let g = logits
            .iter()
            .enumerate()
            .map(|(j, z)| {
                let p = (z - log_z).exp();
                let target = if j == y { 1.0 } else { 0.0 };
                s * (p - target) / n
            })
            .collect();
        grad.push(g);
    }
    Ok(BatchLoss {
        loss: loss / n,
        grad,
    })
}

/// Mean squared distance of each feature to its labelled centroid.
pub fn mse_loss(features: &[Vec<f64>], labels: &[usize], frame: &CentroidFrame) -> Result<BatchLoss> {
    check_labels(labels, features.len(), frame.num_classes())?;
    let n = features.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(features.len());
    for (i, (f, &y)) in features.iter().zip(labels).enumerate() {
        if f.len() != frame.dim() {
            return Err(Error::DimensionMismatch {
                expected: frame.dim(),
                actual: f.len(),
            }
            .at_sample(i));
        }
        let a = frame.centroid(y);
        let diff: Vec<f64> = f.iter().zip(a).map(|(x, c)| x - c).collect();
        loss += dot(&diff, &diff);
        grad.push(diff.iter().map(|d| 2.0 * d / n).collect());
    }
    Ok(BatchLoss {
        loss: loss / n,
        grad,
    })
}

/// `am + n * sqrt(mse)`
#[inline]
pub fn combine_terms(am_term: f64, mse_term: f64, mse_weight_n: f64) -> f64 {
    am_term + mse_weight_n * mse_term.sqrt()
}

/// Full PEDCC-Loss with the chain rule assembled through both terms.
pub fn pedcc_loss(
    features: &[Vec<f64>],
    labels: &[usize],
    frame: &CentroidFrame,
    params: &LossParams,
) -> Result<LossValue> {
    params.validate()?;
    let cos_theta: Vec<Vec<f64>> = features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if f.len() != frame.dim() {
                Err(Error::DimensionMismatch {
                    expected: frame.dim(),
                    actual: f.len(),
                }
                .at_sample(i))
            } else {
                Ok(frame.dots(f))
            }
        })
        .collect::<Result<_>>()?;

    let am = am_softmax_loss(&cos_theta, labels, params)?;
    let mse = mse_loss(features, labels, frame)?;

    let total = combine_terms(am.loss, mse.loss, params.mse_weight_n);
    let sqrt_slope = params.mse_weight_n / (2.0 * (mse.loss + SQRT_GUARD).sqrt());

    let grad_f = am
        .grad
        .iter()
        .zip(&mse.grad)
        .map(|(g_cos, g_mse)| {
            // d cos_j / d f = a_j
            let mut g: Vec<f64> = g_mse.iter().map(|x| sqrt_slope * x).collect();
            for (gc, a) in g_cos.iter().zip(frame.centroids()) {
                crate::linalg::axpy(*gc, a, &mut g);
            }
            g
        })
        .collect();

    Ok(LossValue {
        am_term: am.loss,
        mse_term: mse.loss,
        total,
        grad_f,
    })
}
