//! Labeled vector sets and the synthetic blob task.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::frame::CentroidFrame;
use crate::linalg::{axpy, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    IdTest,
    Ood,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::IdTest => "id-test",
            Role::Ood => "ood",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "id-test" => Ok(Role::IdTest),
            "ood" => Ok(Role::Ood),
            other => Err(Error::invalid(format!("unknown role '{other}'"))),
        }
    }
}

/// A set of equal-length vectors with optional class labels. Used both for
/// raw inputs and for network embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    role: Role,
    vectors: Vec<Vec<f64>>,
    labels: Vec<Option<usize>>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, role: Role) -> Self {
        Self {
            dim,
            role,
            vectors: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, vector: Vec<f64>, label: Option<usize>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.vectors.push(vector);
        self.labels.push(label);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Labels as written to files: `-1` for unlabeled rows.
    pub fn signed_labels(&self) -> impl Iterator<Item = i64> + '_ {
        self.labels.iter().map(|l| l.map_or(-1, |y| y as i64))
    }

    /// All labels, failing if any row is unlabeled or out of range.
    pub fn class_labels(&self, num_classes: usize) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| match l {
                Some(y) if *y < num_classes => Ok(*y),
                Some(y) => Err(Error::LabelOutOfRange {
                    label: *y,
                    num_classes,
                }
                .at_sample(i)),
                None => Err(Error::invalid("row is unlabeled").at_sample(i)),
            })
            .collect()
    }
}

/// How out-of-distribution samples are drawn for the synthetic task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OodKind {
    /// Uniform over the blobs' bounding box, rejecting points inside any blob.
    UniformBox,
    /// A thin shell at three times the radius of the in-distribution region.
    Ring,
    /// The class blobs translated by 8σ in a seed-determined direction.
    ShiftedBlobs,
}

impl OodKind {
    pub const ALL: [OodKind; 3] = [OodKind::UniformBox, OodKind::Ring, OodKind::ShiftedBlobs];

    pub fn as_str(self) -> &'static str {
        match self {
            OodKind::UniformBox => "uniform-box",
            OodKind::Ring => "ring",
            OodKind::ShiftedBlobs => "shifted-blobs",
        }
    }
}

impl fmt::Display for OodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OodKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ood kind '{s}'")))
    }
}

/// Distance between neighbouring class means, in units of the blob σ.
pub const CLASS_SEPARATION: f64 = 6.0;
/// Translation applied to the blobs for [`OodKind::ShiftedBlobs`].
pub const BLOB_SHIFT: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: EmbeddingSet,
    pub id_test: EmbeddingSet,
    pub ood: EmbeddingSet,
    pub means: Vec<Vec<f64>>,
}

/// Radius around a class mean that holds almost all of a unit-covariance
/// Gaussian's mass (about the chi quantile plus 2σ).
pub fn blob_radius(input_dim: usize) -> f64 {
    (input_dim as f64).sqrt() + 2.0
}

// independent ChaCha streams so each split is unaffected by the others
const STREAM_MEANS: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_OOD: u64 = 3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn class_means(num_classes: usize, input_dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if num_classes <= input_dim + 1 {
        // regular simplex: every pair of means exactly CLASS_SEPARATION apart
        let frame = CentroidFrame::generate(num_classes, input_dim, seed)?;
        let c = num_classes as f64;
        let r = CLASS_SEPARATION / (2.0 * c / (c - 1.0)).sqrt();
        return Ok(frame
            .centroids()
            .iter()
            .map(|a| a.iter().map(|x| x * r).collect())
            .collect());
    }
    let mut rng = rng_for(seed, STREAM_MEANS);
    let dirs: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&v);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..num_classes {
        for j in i + 1..num_classes {
            let d: f64 = dirs[i]
                .iter()
                .zip(&dirs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    if !(min_dist > 1e-6) {
        return Err(Error::numerical("class directions collapsed"));
    }
    let r = CLASS_SEPARATION / min_dist;
    Ok(dirs
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * r).collect())
        .collect())
}

fn gaussian_around(mean: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    mean.iter()
        .map(|m| m + Distribution::<f64>::sample(&StandardNormal, rng))
        .collect()
}

fn unit_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn blob_set(means: &[Vec<f64>], per_class: usize, role: Role, rng: &mut ChaCha8Rng) -> EmbeddingSet {
    let dim = means[0].len();
    let mut set = EmbeddingSet::new(dim, role);
    for (y, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            set.push(gaussian_around(mean, rng), Some(y))
                .expect("dimension matches by construction");
        }
    }
    set
}

/// Builds the synthetic task: `num_classes` unit-covariance Gaussian blobs
/// whose means sit `CLASS_SEPARATION` apart along seed-determined
/// directions, plus an unlabeled OOD set of `per_class * num_classes`
/// samples. The train and in-distribution test splits do not depend on
/// `ood_kind`.
pub fn make_synthetic(
    num_classes: usize,
    input_dim: usize,
    per_class: usize,
    ood_kind: OodKind,
    seed: u64,
) -> Result<SyntheticData> {
    if num_classes < 2 {
        return Err(Error::invalid("synthetic task needs at least 2 classes"));
    }
    if input_dim == 0 {
        return Err(Error::invalid("input dimension must be positive"));
    }
    let means = class_means(num_classes, input_dim, seed)?;
    let train = blob_set(&means, per_class, Role::Train, &mut rng_for(seed, STREAM_TRAIN));
    let id_test = blob_set(&means, per_class, Role::IdTest, &mut rng_for(seed, STREAM_TEST));

    let mut rng = rng_for(seed, STREAM_OOD);
    let n_ood = per_class * num_classes;
    let r_blob = blob_radius(input_dim);
    let mut ood = EmbeddingSet::new(input_dim, Role::Ood);
    match ood_kind {
        OodKind::UniformBox => {
            let lo: Vec<f64> = (0..input_dim)
                .map(|k| means.iter().map(|m| m[k]).fold(f64::INFINITY, f64::min) - 2.0 * r_blob)
                .collect();
            let hi: Vec<f64> = (0..input_dim)
                .map(|k| means.iter().map(|m| m[k]).fold(f64::NEG_INFINITY, f64::max) + 2.0 * r_blob)
                .collect();
            while ood.len() < n_ood {
                let x: Vec<f64> = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| rng.random_range(*l..*h))
                    .collect();
                let inside = means.iter().any(|m| {
                    let d: Vec<f64> = x.iter().zip(m).map(|(a, b)| a - b).collect();
                    norm(&d) <= r_blob
                });
                if !inside {
                    ood.push(x, None)?;
                }
            }
        }
        OodKind::Ring => {
            let region = means.iter().map(|m| norm(m)).fold(0.0, f64::max) + r_blob;
            let radius = 3.0 * region;
            for _ in 0..n_ood {
                let u = unit_direction(input_dim, &mut rng);
                let r = radius * rng.random_range(0.95..1.05);
                ood.push(u.into_iter().map(|x| x * r).collect(), None)?;
            }
        }
        OodKind::ShiftedBlobs => {
            let shift = unit_direction(input_dim, &mut rng);
            for k in 0..n_ood {
                let mut mean = means[k % num_classes].clone();
                axpy(BLOB_SHIFT, &shift, &mut mean);
                ood.push(gaussian_around(&mean, &mut rng), None)?;
            }
        }
    }

    Ok(SyntheticData {
        train,
        id_test,
        ood,
        means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_mean_accuracy(set: &EmbeddingSet, means: &[Vec<f64>]) -> f64 {
        let correct = set
            .vectors()
            .iter()
            .zip(set.labels())
            .filter(|(x, y)| {
                let best = (0..means.len())
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(&means[a]).map(|(p, q)| (p - q).powi(2)).sum();
                        let db: f64 = x.iter().zip(&means[b]).map(|(p, q)| (p - q).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                Some(best) == **y
            })
            .count();
        correct as f64 / set.len() as f64
    }

    #[test]
    fn empty_split_is_valid() {
        let d = make_synthetic(3, 2, 0, OodKind::UniformBox, 1).unwrap();
        assert!(d.train.is_empty() && d.id_test.is_empty() && d.ood.is_empty());
        assert_eq!(d.train.dim(), 2);
        assert_eq!(d.means.len(), 3);
    }

    #[test]
    fn blobs_are_separable_by_nearest_mean() {
        let d = make_synthetic(3, 2, 500, OodKind::UniformBox, 1).unwrap();
        assert_eq!(d.train.len(), 1500);
        assert_eq!(d.ood.len(), 1500);
        // oracle: empirical class means, then nearest-mean classification
        let mut emp = vec![vec![0.0; 2]; 3];
        for (x, y) in d.train.vectors().iter().zip(d.train.labels()) {
            axpy(1.0 / 500.0, x, &mut emp[y.unwrap()]);
        }
        assert!(nearest_mean_accuracy(&d.train, &emp) > 0.99);
    }

    #[test]
    fn means_are_separated() {
        for (c, dim) in [(3, 2), (5, 2), (4, 8)] {
            let d = make_synthetic(c, dim, 1, OodKind::Ring, 9).unwrap();
            for i in 0..c {
                for j in i + 1..c {
                    let dist: f64 = d.means[i]
                        .iter()
                        .zip(&d.means[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(dist >= CLASS_SEPARATION - 1e-9, "{c} {dim}: {dist}");
                }
            }
        }
    }

    #[test]
    fn ood_sets_avoid_blobs() {
        for kind in OodKind::ALL {
            let d = make_synthetic(3, 2, 200, kind, 4).unwrap();
            assert!(d.ood.labels().iter().all(Option::is_none));
            if kind != OodKind::ShiftedBlobs {
                for x in d.ood.vectors() {
                    for m in &d.means {
                        let dd: Vec<f64> = x.iter().zip(m).map(|(a, b)| a - b).collect();
                        assert!(norm(&dd) > blob_radius(2));
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_and_split_independent() {
        let a = make_synthetic(3, 2, 50, OodKind::Ring, 11).unwrap();
        let b = make_synthetic(3, 2, 50, OodKind::Ring, 11).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic(3, 2, 50, OodKind::UniformBox, 11).unwrap();
        assert_eq!(a.train, c.train);
        assert_eq!(a.id_test, c.id_test);
        assert_ne!(a.ood, c.ood);
    }

    #[test]
    fn parse_kinds_and_roles() {
        for k in OodKind::ALL {
            assert_eq!(k.as_str().parse::<OodKind>().unwrap(), k);
        }
        assert_eq!("id-test".parse::<Role>().unwrap(), Role::IdTest);
        assert!("banana".parse::<OodKind>().is_err());
    }
}
