//! Predefined evenly-distributed class centroids.
//!
//! For `C <= D + 1` the evenly distributed configuration of `C` unit vectors
//! is the regular `(C-1)`-simplex centered at the origin: every pair of
//! centroids has cosine `-1/(C-1)`. Frames are built from the closed form and
//! then rotated by a seed-determined random orthogonal map, so two seeds give
//! different orientations with identical Gram matrices.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, gram_schmidt, norm, project};

/// Tolerance applied to every frame invariant.
pub const FRAME_TOL: f64 = 1e-9;

/// Residual norms at or below this are treated as linear dependence when
/// building the span basis.
pub const SPAN_DROP_TOL: f64 = 1e-10;

/// `C` unit vectors in `R^D` plus an orthonormal basis of their span.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidFrame {
    dim: usize,
    seed: u64,
    centroids: Vec<Vec<f64>>,
    span_basis: Vec<Vec<f64>>,
}

impl CentroidFrame {
    /// Generates the regular-simplex frame for `num_classes` classes in
    /// `dim` dimensions.
    pub fn generate(num_classes: usize, dim: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if num_classes > dim + 1 {
            return Err(Error::invalid(format!(
                "{num_classes} classes cannot be evenly distributed in {dim} dimensions (requires C <= D + 1)"
            )));
        }
        let simplex = regular_simplex(num_classes);
        let rotation = random_orthonormal_columns(dim, num_classes - 1, seed);

        let centroids = simplex
            .iter()
            .map(|v| {
                let mut out = vec![0.0; dim];
                for (coef, col) in v.iter().zip(&rotation) {
                    crate::linalg::axpy(*coef, col, &mut out);
                }
                out
            })
            .collect();
        Self::from_centroids(centroids, seed)
    }

    /// Wraps an explicit centroid set. Only shapes are checked here; use
    /// [`validate_frame`] for the geometric invariants.
    pub fn from_centroids(centroids: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let dim = centroids
            .first()
            .map(|c| c.len())
            .ok_or_else(|| Error::invalid("frame has no centroids"))?;
        if dim == 0 {
            return Err(Error::invalid("frame dimension must be positive"));
        }
        if let Some(bad) = centroids.iter().find(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        if centroids.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("frame contains non-finite values"));
        }
        let span_basis = gram_schmidt(centroids.iter().map(|c| c.as_slice()), SPAN_DROP_TOL);
        Ok(Self {
            dim,
            seed,
            centroids,
            span_basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn centroid(&self, class: usize) -> &[f64] {
        &self.centroids[class]
    }

    /// Orthonormal basis of the centroid span.
    pub fn span_basis(&self) -> &[Vec<f64>] {
        &self.span_basis
    }

    pub fn rank(&self) -> usize {
        self.span_basis.len()
    }

    /// Matrix of all pairwise dot products.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        self.centroids
            .iter()
            .map(|a| self.centroids.iter().map(|b| dot(a, b)).collect())
            .collect()
    }

    /// `cos θ_j = f · a_j` for every centroid.
    pub fn dots(&self, f: &[f64]) -> Vec<f64> {
        self.centroids.iter().map(|a| dot(f, a)).collect()
    }
}

/// Free-function form of [`CentroidFrame::generate`].
pub fn generate_frame(num_classes: usize, dim: usize, seed: u64) -> Result<CentroidFrame> {
    CentroidFrame::generate(num_classes, dim, seed)
}

/// Vertices of a regular simplex with `c` vertices, unit norm, centered at
/// the origin, in `c - 1` coordinates.
///
/// Vertex `i` is `sqrt(c/(c-1))` times the coordinates of `e_i - 1/c` in the
/// Helmert basis `h_k = (1, .., 1, -k, 0, ..) / sqrt(k(k+1))`.
fn regular_simplex(c: usize) -> Vec<Vec<f64>> {
    let scale = (c as f64 / (c as f64 - 1.0)).sqrt();
    (0..c)
        .map(|i| {
            (1..c)
                .map(|k| {
                    let kf = k as f64;
                    let h = if i < k {
                        1.0
                    } else if i == k {
                        -kf
                    } else {
                        0.0
                    };
                    scale * h / (kf * (kf + 1.0)).sqrt()
                })
                .collect()
        })
        .collect()
}

/// First `cols` columns of a Haar-distributed orthogonal `dim x dim` matrix.
/// Applying them to a vector supported on the first `cols` coordinates is the
/// same as applying the full rotation.
fn random_orthonormal_columns(dim: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let gaussian: Vec<Vec<f64>> = (0..cols)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let q = gram_schmidt(gaussian.iter().map(|v| v.as_slice()), 1e-8);
        // rank deficiency has probability zero; redraw if it happens anyway
        if q.len() == cols {
            return q;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameInvariant {
    SimplexBound,
    UnitNorm,
    PairwiseCosine,
    ZeroSum,
    BasisOrthonormal,
    SpanCoverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub invariant: FrameInvariant,
    /// Largest measured deviation from the invariant.
    pub residual: f64,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {} (residual {:.3e})", self.invariant, self.detail, self.residual)
    }
}

/// Checks every frame invariant at [`FRAME_TOL`]. Returns one entry per
/// violated invariant, empty when the frame is well formed.
///
/// Evenness and zero-sum are measured on the normalized directions so that a
/// scaled centroid shows up only as a norm violation.
pub fn validate_frame(frame: &CentroidFrame) -> Vec<Violation> {
    let mut out = Vec::new();
    let c = frame.num_classes();
    let d = frame.dim();

    if c > d + 1 {
        out.push(Violation {
            invariant: FrameInvariant::SimplexBound,
            residual: (c - (d + 1)) as f64,
            detail: format!("C = {c} exceeds D + 1 = {}", d + 1),
        });
    }

    let norms: Vec<f64> = frame.centroids.iter().map(|a| norm(a)).collect();
    let (worst, resid) = argmax_abs(norms.iter().map(|n| n - 1.0));
    if resid > FRAME_TOL {
        out.push(Violation {
            invariant: FrameInvariant::UnitNorm,
            residual: resid,
            detail: format!("centroid {worst} has norm {}", norms[worst]),
        });
    }

    let unit: Vec<Vec<f64>> = frame
        .centroids
        .iter()
        .zip(&norms)
        .map(|(a, &n)| {
            if n > 0.0 {
                a.iter().map(|x| x / n).collect()
            } else {
                a.clone()
            }
        })
        .collect();

    if c >= 2 {
        let target = -1.0 / (c as f64 - 1.0);
        let mut worst = (0, 0, 0.0_f64, target);
        for i in 0..c {
            for j in i + 1..c {
                let cos = dot(&unit[i], &unit[j]);
                let r = (cos - target).abs();
                if r > worst.2 || r.is_nan() {
                    worst = (i, j, r, cos);
                }
            }
        }
        if !(worst.2 <= FRAME_TOL) {
            out.push(Violation {
                invariant: FrameInvariant::PairwiseCosine,
                residual: worst.2,
                detail: format!(
                    "centroids {} and {} have cosine {}, expected {target}",
                    worst.0, worst.1, worst.3
                ),
            });
        }
    }

    let mut sum = vec![0.0; d];
    for a in &unit {
        crate::linalg::axpy(1.0, a, &mut sum);
    }
    let sum_norm = norm(&sum);
    if !(sum_norm <= FRAME_TOL) {
        out.push(Violation {
            invariant: FrameInvariant::ZeroSum,
            residual: sum_norm,
            detail: "centroid directions do not sum to zero".into(),
        });
    }

    let basis = frame.span_basis();
    let mut ortho = 0.0_f64;
    for (k, bk) in basis.iter().enumerate() {
        for (l, bl) in basis.iter().enumerate().skip(k) {
            let expected = if k == l { 1.0 } else { 0.0 };
            ortho = ortho.max((dot(bk, bl) - expected).abs());
        }
    }
    if !(ortho <= FRAME_TOL) {
        out.push(Violation {
            invariant: FrameInvariant::BasisOrthonormal,
            residual: ortho,
            detail: "span basis is not orthonormal".into(),
        });
    }

    let (worst, resid) = argmax_abs(frame.centroids.iter().map(|a| {
        let p = project(a, basis);
        let diff: Vec<f64> = a.iter().zip(&p).map(|(x, y)| x - y).collect();
        norm(&diff)
    }));
    if resid > FRAME_TOL {
        out.push(Violation {
            invariant: FrameInvariant::SpanCoverage,
            residual: resid,
            detail: format!("centroid {worst} lies outside the span basis"),
        });
    }

    out
}

fn argmax_abs(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .map(f64::abs)
        .enumerate()
        .fold((0, 0.0), |best, (i, v)| {
            if v > best.1 || v.is_nan() {
                (i, v)
            } else {
                best
            }
        })
}
