use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::trainer::EmbeddingSet;

/// Ridge added to the tied covariance diagonal, relative to `trace / D`.
pub const RIDGE_FRACTION: f64 = 1e-6;

/// Class means and a shared precision matrix (inverse of the ridge-regularized
/// tied within-class covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisModel {
    means: Vec<DVector<f64>>,
    precision: DMatrix<f64>,
}

impl MahalanobisModel {
    /// Builds a model from explicit parts. The precision must be square,
    /// symmetric within 1e-9 and match the mean dimension.
    pub fn from_parts(means: Vec<Vec<f64>>, precision: Vec<Vec<f64>>) -> Result<Self> {
        let d = means.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::invalid("model needs at least one non-empty mean"));
        }
        if means.iter().any(|m| m.len() != d) || precision.len() != d || precision.iter().any(|r| r.len() != d)
        {
            return Err(Error::invalid("inconsistent mean / precision dimensions"));
        }
        let p = DMatrix::from_fn(d, d, |i, j| precision[i][j]);
        if (&p - p.transpose()).amax() > 1e-9 {
            return Err(Error::invalid("precision matrix is not symmetric"));
        }
        Ok(Self {
            means: means.into_iter().map(DVector::from_vec).collect(),
            precision: p,
        })
    }

    /// Fits per-class means and the tied covariance on labeled rows.
    pub fn fit(train: &EmbeddingSet, num_classes: usize) -> Result<Self> {
        let d = train.dim();
        let labels = train.class_labels(num_classes)?;
        if train.len() < d + 1 {
            return Err(Error::invalid(format!(
                "need at least D + 1 = {} samples, got {}",
                d + 1,
                train.len()
            )));
        }
        let mut sums = vec![DVector::<f64>::zeros(d); num_classes];
        let mut counts = vec![0usize; num_classes];
        for (x, &y) in train.vectors().iter().zip(&labels) {
            sums[y] += DVector::from_column_slice(x);
            counts[y] += 1;
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("class {missing} has no training samples")));
        }
        let means: Vec<DVector<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s / c as f64)
            .collect();

        let mut cov = DMatrix::<f64>::zeros(d, d);
        for (x, &y) in train.vectors().iter().zip(&labels) {
            let r = DVector::from_column_slice(x) - &means[y];
            cov.ger(1.0, &r, &r, 1.0);
        }
        cov /= train.len() as f64;

        let mut ridge = RIDGE_FRACTION * cov.trace() / d as f64;
        if !(ridge > 0.0) {
            // all features identical: fall back to an absolute ridge
            ridge = RIDGE_FRACTION;
        }
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::numerical("regularized covariance is not positive definite"))?;
        let inv = chol.inverse();
        let precision = (&inv + inv.transpose()) * 0.5;
        Ok(Self { means, precision })
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// `max_i -(f - μ_i)ᵀ Σ⁻¹ (f - μ_i)`
    pub fn score(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: f.len(),
            });
        }
        let x = DVector::from_column_slice(f);
        Ok(self
            .means
            .iter()
            .map(|mu| {
                let r = &x - mu;
                -(r.transpose() * &self.precision * &r)[(0, 0)]
            })
            .fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn score_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.score_batch_with(Execution::default(), rows)
    }

    pub fn score_batch_with(&self, exec: Execution, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        par::try_map_indexed(exec, rows, |i, f| self.score(f).map_err(|e| e.at_sample(i)))
    }
}

pub fn mahalanobis_fit(train: &EmbeddingSet, num_classes: usize) -> Result<MahalanobisModel> {
    MahalanobisModel::fit(train, num_classes)
}

pub fn mahalanobis_score(model: &MahalanobisModel, f: &[f64]) -> Result<f64> {
    model.score(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::auroc;
    use crate::trainer::Role;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_example() {
        let m = MahalanobisModel::from_parts(
            vec![vec![0.0, 0.0], vec![2.0, 0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        assert!((m.score(&[0.5, 0.0]).unwrap() + 0.25).abs() < 1e-15);
        assert_eq!(m.score(&[2.0, 0.0]).unwrap(), 0.0);
        assert!(m.score(&[1.0]).is_err());
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize, scale: f64) -> EmbeddingSet {
        let mut set = EmbeddingSet::new(d, Role::Train);
        for i in 0..n {
            let y = i % c;
            let v = (0..d)
                .map(|k| scale * (rng.random_range(-1.0..1.0) + if k == y { 3.0 } else { 0.0 }))
                .collect();
            set.push(v, Some(y)).unwrap();
        }
        set
    }

    #[test]
    fn fitted_precision_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = random_set(&mut rng, 60, 5, 3, 1.0);
        let m = MahalanobisModel::fit(&set, 3).unwrap();
        let p = m.precision();
        assert!((p - p.transpose()).amax() <= 1e-9);
        let eig = p.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-9));
        // the class mean scores zero
        let mu0: Vec<f64> = m.means()[0].iter().copied().collect();
        assert!(m.score(&mu0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn singular_covariance_is_regularized() {
        // every sample of a class is identical: within-class covariance is zero
        let mut set = EmbeddingSet::new(3, Role::Train);
        for i in 0..8 {
            let y = i % 2;
            set.push(vec![y as f64, 0.0, 1.0], Some(y)).unwrap();
        }
        let m = MahalanobisModel::fit(&set, 2).unwrap();
        assert!(m.score(&[0.0, 0.0, 1.0]).unwrap().is_finite());
    }

    #[test]
    fn fit_errors() {
        let mut set = EmbeddingSet::new(2, Role::Train);
        for _ in 0..5 {
            set.push(vec![1.0, 2.0], Some(0)).unwrap();
        }
        assert!(MahalanobisModel::fit(&set, 2).is_err());
        let mut small = EmbeddingSet::new(4, Role::Train);
        small.push(vec![0.0; 4], Some(0)).unwrap();
        small.push(vec![1.0; 4], Some(1)).unwrap();
        assert!(MahalanobisModel::fit(&small, 2).is_err());
    }

    #[test]
    fn isotropic_scaling_preserves_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = 4.0;
        let train = random_set(&mut rng, 80, 4, 3, 1.0);
        let scaled_train = {
            let mut s = EmbeddingSet::new(4, Role::Train);
            for (v, y) in train.vectors().iter().zip(train.labels()) {
                s.push(v.iter().map(|x| x * c).collect(), *y).unwrap();
            }
            s
        };
        let probe_id: Vec<Vec<f64>> = random_set(&mut rng, 40, 4, 3, 1.0).vectors().to_vec();
        let probe_ood: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let scale = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter().map(|r| r.iter().map(|x| x * c).collect()).collect()
        };

        let m = MahalanobisModel::fit(&train, 3).unwrap();
        let ms = MahalanobisModel::fit(&scaled_train, 3).unwrap();
        let a = auroc(&m.score_batch(&probe_id).unwrap(), &m.score_batch(&probe_ood).unwrap()).unwrap();
        let b = auroc(
            &ms.score_batch(&scale(&probe_id)).unwrap(),
            &ms.score_batch(&scale(&probe_ood)).unwrap(),
        )
        .unwrap();
        assert_eq!(a, b);
        // c² from the features over c² from the covariance
        let s1 = m.score(&probe_id[0]).unwrap();
        let s2 = ms.score(&scale(&probe_id[..1])[0]).unwrap();
        assert!((s1 - s2).abs() < 1e-9 * s1.abs().max(1.0));
    }
}
