use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::Decomposed;

/// Default acceptance rate on in-distribution data.
pub const TPR_TARGET: f64 = 0.95;

fn check_scores(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::invalid(format!("{name} scores are empty")));
    }
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{name} score is not finite")).at_sample(i));
    }
    Ok(())
}

fn cmp_finite(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).expect("scores checked finite")
}

/// Area under the ROC curve with in-distribution as the positive class:
/// `P(id > ood) + ½ P(id = ood)`.
///
/// Computed from mid-ranks (Mann-Whitney U). All intermediate counts are
/// kept as integers, so the result is bit-identical to the pairwise
/// definition.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores("id", id_scores)?;
    check_scores("ood", ood_scores)?;
    let n = id_scores.len() as u128;
    let m = ood_scores.len() as u128;

    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| cmp_finite(&a.0, &b.0));

    // twice the rank sum of the positives; a tie block over 0-based positions
    // [start, end) has mid-rank (start + 1 + end) / 2
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        let positives = all[start..end].iter().filter(|(_, pos)| *pos).count() as u128;
        twice_rank_sum += positives * (start as u128 + 1 + end as u128);
        start = end;
    }
    let twice_u = twice_rank_sum - n * (n + 1);
    Ok(twice_u as f64 / (2 * n * m) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TnrAtTpr {
    pub tnr: f64,
    pub threshold: f64,
    /// Fraction of in-distribution scores `>= threshold`.
    pub tpr: f64,
}

/// True-negative rate on OOD data at the largest in-distribution score `t`
/// that still accepts at least `tpr_target` of the in-distribution data
/// (`score >= t` means accepted). OOD samples strictly below `t` count as
/// true negatives.
pub fn tnr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<TnrAtTpr> {
    check_scores("id", id_scores)?;
    check_scores("ood", ood_scores)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::invalid(format!("tpr target must be in (0, 1], got {tpr_target}")));
    }
    let n = id_scores.len();
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| cmp_finite(b, a));

    // smallest k with k/n >= target; the k-th largest score then accepts at
    // least k samples and any larger score accepts fewer
    let k = (1..=n)
        .find(|&k| k as f64 / n as f64 >= tpr_target)
        .unwrap_or(n);
    let threshold = sorted[k - 1];
    let accepted = sorted.iter().filter(|&&s| s >= threshold).count();
    let rejected = ood_scores.iter().filter(|&&s| s < threshold).count();
    Ok(TnrAtTpr {
        tnr: rejected as f64 / ood_scores.len() as f64,
        threshold,
        tpr: accepted as f64 / n as f64,
    })
}

/// Maximum softmax probability of `values / temperature` per row.
pub fn baseline_max_softmax(values: &[Vec<f64>], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.is_empty() {
                return Err(Error::invalid("empty logit vector").at_sample(i));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("non-finite logit").at_sample(i));
            }
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // max probability = 1 / Σ exp((v_j - max) / T)
            let denom: f64 = v.iter().map(|x| ((x - max) / temperature).exp()).sum();
            Ok(1.0 / denom)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    pub var_s_alpha: f64,
    pub var_s_beta: f64,
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::invalid("variance needs at least 2 values"));
    }
    // shifted by the first value so constant input gives exactly 0
    let n = xs.len() as f64;
    let k = xs[0];
    let (s, s2) = xs
        .iter()
        .fold((0.0, 0.0), |(s, s2), x| (s + (x - k), s2 + (x - k) * (x - k)));
    Ok(((s2 - s * s / n) / (n - 1.0)).max(0.0))
}

pub fn variance_report<R: Decomposed>(records: &[R]) -> Result<VarianceReport> {
    let a: Vec<f64> = records.iter().map(Decomposed::s_alpha).collect();
    let b: Vec<f64> = records.iter().map(Decomposed::s_beta).collect();
    Ok(VarianceReport {
        var_s_alpha: sample_variance(&a)?,
        var_s_beta: sample_variance(&b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[1.0, 2.0, 3.0], &[0.0]).unwrap(), 1.0);
        let xs = [0.3, 0.1, 0.3, 0.9];
        assert_eq!(auroc(&xs, &xs).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.8, 0.7], &[0.6, 0.75]).unwrap(), 5.0 / 6.0);
        assert_eq!(auroc(&[0.0], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn auroc_rejects_empty_and_nan() {
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn tnr_examples() {
        let id: Vec<f64> = (1..=20).map(f64::from).collect();
        let r = tnr_at_tpr(&id, &[0.5, 1.5, 2.5, 3.5], 0.95).unwrap();
        assert_eq!(r.threshold, 2.0);
        assert_eq!(r.tnr, 0.5);
        assert_eq!(r.tpr, 0.95);

        let r = tnr_at_tpr(&id, &[-3.0, 0.0, 0.99], 0.95).unwrap();
        assert_eq!(r.tnr, 1.0);

        let r = tnr_at_tpr(&id, &id, 0.95).unwrap();
        assert!(r.tnr <= 1.0 - 0.95 + 1.0 / 20.0 + 1e-12);
    }

    #[test]
    fn tnr_with_ties_keeps_tpr() {
        let id = [1.0, 1.0, 1.0, 1.0, 0.2];
        let r = tnr_at_tpr(&id, &[1.0, 0.5], 0.5).unwrap();
        assert_eq!(r.threshold, 1.0);
        assert_eq!(r.tpr, 0.8);
        assert_eq!(r.tnr, 0.5);
        assert!(tnr_at_tpr(&id, &[0.1], 0.0).is_err());
        assert!(tnr_at_tpr(&id, &[0.1], 1.5).is_err());
    }

    #[test]
    fn max_softmax_examples() {
        let s = baseline_max_softmax(&[vec![0.0, 0.0, 0.0], vec![10.0, 0.0, 0.0]], 1.0).unwrap();
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-15);
        let direct = 10f64.exp() / (10f64.exp() + 2.0);
        assert!((s[1] - direct).abs() < 1e-15);
        assert!((s[1] - 0.99991).abs() < 1e-5);
        let hot = baseline_max_softmax(&[vec![10.0, 0.0, -3.0]], 1e9).unwrap();
        assert!((hot[0] - 1.0 / 3.0).abs() < 1e-6);
        assert!(baseline_max_softmax(&[vec![f64::INFINITY]], 1.0).is_err());
        assert!(baseline_max_softmax(&[vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn variance_examples() {
        assert_eq!(sample_variance(&[0.4, 0.4, 0.4]).unwrap(), 0.0);
        assert_eq!(sample_variance(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(sample_variance(&[1.0]).is_err());
    }
}
