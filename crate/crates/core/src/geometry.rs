//! Geometric decomposition of the cosine confidence score.
//!
//! For an embedding `f` with orthogonal projection `f_p` onto the centroid
//! span, the cosine to centroid `a_i` factors as
//! `cos θ_i = cos β_i · cos α`, where `α` is the angle between `f` and `f_p`
//! and `β_i` the angle between `f_p` and `a_i`. The detector score is
//! `S_α + ω · S_β` with `S_α = cos α` and `S_β = max_i cos β_i`.

use crate::error::{Error, Result};
use crate::frame::CentroidFrame;
use crate::linalg::{dot, norm, project};
use crate::par::{self, Execution};

/// Below `DEGENERATE_PROJECTION * ‖f‖` the projection is treated as zero and
/// every `cos β_i` is reported as 0.
pub const DEGENERATE_PROJECTION: f64 = 1e-12;

/// Per-sample decomposed scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub cos_alpha: f64,
    pub cos_beta: Vec<f64>,
    pub cos_theta: Vec<f64>,
    pub s_alpha: f64,
    pub s_beta: f64,
    pub s_pedcc: f64,
    pub s_d_pedcc: f64,
    pub omega: f64,
}

impl ScoreRecord {
    /// Recomputes `s_d_pedcc` for a different weight.
    pub fn reweight(&mut self, omega: f64) {
        self.omega = omega;
        self.s_d_pedcc = combined_score(self.s_alpha, self.s_beta, omega);
    }

    /// Index of the largest `cos θ_i` (the predicted class).
    pub fn predicted_class(&self) -> usize {
        argmax(&self.cos_theta)
    }
}

/// Anything carrying the three scalar scores needed for evaluation. Score
/// files keep only these, so evaluation does not need the full vectors.
pub trait Decomposed {
    fn s_alpha(&self) -> f64;
    fn s_beta(&self) -> f64;
    fn s_pedcc(&self) -> f64;
}

impl Decomposed for ScoreRecord {
    fn s_alpha(&self) -> f64 {
        self.s_alpha
    }
    fn s_beta(&self) -> f64 {
        self.s_beta
    }
    fn s_pedcc(&self) -> f64 {
        self.s_pedcc
    }
}

#[inline]
pub fn combined_score(s_alpha: f64, s_beta: f64, omega: f64) -> f64 {
    s_alpha + omega * s_beta
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Decomposes `f` against `frame`.
pub fn decompose(f: &[f64], frame: &CentroidFrame, omega: f64) -> Result<ScoreRecord> {
    if f.len() != frame.dim() {
        return Err(Error::DimensionMismatch {
            expected: frame.dim(),
            actual: f.len(),
        });
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("embedding has non-finite components"));
    }
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(Error::invalid(format!("omega must be finite and >= 0, got {omega}")));
    }
    let f_norm = norm(f);
    if f_norm == 0.0 {
        return Err(Error::invalid("embedding has zero norm"));
    }

    let fp = project(f, frame.span_basis());
    let fp_norm = norm(&fp);

    let cos_theta: Vec<f64> = frame
        .centroids()
        .iter()
        .map(|a| dot(f, a) / f_norm)
        .collect();
    let cos_alpha = (fp_norm / f_norm).clamp(0.0, 1.0);
    let cos_beta: Vec<f64> = if fp_norm >= DEGENERATE_PROJECTION * f_norm {
        frame
            .centroids()
            .iter()
            .map(|a| dot(&fp, a) / fp_norm)
            .collect()
    } else {
        vec![0.0; frame.num_classes()]
    };

    let s_alpha = cos_alpha;
    let s_beta = max_of(&cos_beta);
    let s_pedcc = max_of(&cos_theta);
    Ok(ScoreRecord {
        cos_alpha,
        s_alpha,
        s_beta,
        s_pedcc,
        s_d_pedcc: combined_score(s_alpha, s_beta, omega),
        omega,
        cos_beta,
        cos_theta,
    })
}

/// Scores every row in order. Errors carry the offending sample index.
pub fn score_batch<V>(embeddings: &[V], frame: &CentroidFrame, omega: f64) -> Result<Vec<ScoreRecord>>
where
    V: AsRef<[f64]> + Sync,
{
    score_batch_with(Execution::default(), embeddings, frame, omega)
}

pub fn score_batch_with<V>(
    exec: Execution,
    embeddings: &[V],
    frame: &CentroidFrame,
    omega: f64,
) -> Result<Vec<ScoreRecord>>
where
    V: AsRef<[f64]> + Sync,
{
    par::try_map_indexed(exec, embeddings, |i, f| {
        decompose(f.as_ref(), frame, omega).map_err(|e| e.at_sample(i))
    })
}
