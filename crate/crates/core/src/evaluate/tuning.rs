use crate::error::{Error, Result};
use crate::geometry::{combined_score, Decomposed};
use crate::par::{self, Execution};

use super::metrics::{tnr_at_tpr, TPR_TARGET};
use super::MethodRow;

/// Smallest value the largest grid entry may take.
pub const GRID_UPPER_ENDPOINT: f64 = 1e3;

/// `{0}` plus 25 log-spaced points from `1e-3` to `1e3`.
pub fn default_omega_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend((0..25).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)));
    // pin the endpoint exactly
    *grid.last_mut().unwrap() = GRID_UPPER_ENDPOINT;
    grid
}

/// Checks the endpoint rule: the grid contains `0` (pure `S_α`) and a value
/// `>= 1e3` (dominated by `S_β`).
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("omega grid is empty"));
    }
    if grid.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("omega grid values must be finite and >= 0"));
    }
    if !grid.contains(&0.0) {
        return Err(Error::invalid("omega grid must contain 0"));
    }
    if !grid.iter().any(|&w| w >= GRID_UPPER_ENDPOINT) {
        return Err(Error::invalid(format!(
            "omega grid must contain a value >= {GRID_UPPER_ENDPOINT}"
        )));
    }
    Ok(())
}

fn combined<R: Decomposed>(records: &[R], omega: f64) -> Vec<f64> {
    records
        .iter()
        .map(|r| combined_score(r.s_alpha(), r.s_beta(), omega))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunedOmega {
    pub omega: f64,
    /// Evaluation of `S_α + ω S_β` at the chosen `ω` on the tuning pair.
    pub row: MethodRow,
    /// `(ω, TNR@TPR95)` for every grid value, in ascending `ω`.
    pub trace: Vec<(f64, f64)>,
}

/// Picks the grid `ω` maximizing TNR@TPR95 of `S_α + ω S_β` on one
/// in-distribution / OOD validation pair. Ties go to the smaller `ω`.
pub fn tune_omega<R: Decomposed + Sync>(id_val: &[R], ood_val: &[R], grid: &[f64]) -> Result<TunedOmega> {
    tune_omega_with(Execution::default(), id_val, ood_val, grid)
}

pub fn tune_omega_with<R: Decomposed + Sync>(
    exec: Execution,
    id_val: &[R],
    ood_val: &[R],
    grid: &[f64],
) -> Result<TunedOmega> {
    validate_grid(grid)?;
    if id_val.is_empty() || ood_val.is_empty() {
        return Err(Error::invalid("omega tuning needs non-empty id and ood scores"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let tnrs = par::map(exec, &sorted, |&w| {
        tnr_at_tpr(&combined(id_val, w), &combined(ood_val, w), TPR_TARGET).map(|r| r.tnr)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    let mut best = 0;
    for (i, &t) in tnrs.iter().enumerate() {
        if t > tnrs[best] {
            best = i;
        }
    }
    let omega = sorted[best];
    let row = MethodRow::evaluate(
        "s_d_pedcc",
        &combined(id_val, omega),
        &combined(ood_val, omega),
        Some(omega),
    )?;
    Ok(TunedOmega {
        omega,
        row,
        trace: sorted.into_iter().zip(tnrs).collect(),
    })
}

/// Rows for each pure and combined score, in a fixed order.
pub fn ablation_grid<R: Decomposed + Sync>(id: &[R], ood: &[R], omega: f64) -> Result<Vec<MethodRow>> {
    ablation_grid_with(Execution::default(), id, ood, omega)
}

type ScoreFn = fn(f64, f64, f64, f64) -> f64;

pub fn ablation_grid_with<R: Decomposed + Sync>(
    exec: Execution,
    id: &[R],
    ood: &[R],
    omega: f64,
) -> Result<Vec<MethodRow>> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::invalid("ablation needs non-empty id and ood scores"));
    }
    // (name, score(s_alpha, s_beta, s_pedcc, omega), uses omega)
    let methods: [(&str, ScoreFn, bool); 6] = [
        ("s_alpha", |a, _, _, _| a, false),
        ("s_beta", |_, b, _, _| b, false),
        ("s_alpha_times_s_beta", |a, b, _, _| a * b, false),
        ("s_alpha_plus_s_beta", |a, b, _, _| a + b, false),
        ("s_pedcc", |_, _, p, _| p, false),
        ("s_d_pedcc", |a, b, _, w| combined_score(a, b, w), true),
    ];
    let eval = |recs: &[R], f: ScoreFn| -> Vec<f64> {
        recs.iter()
            .map(|r| f(r.s_alpha(), r.s_beta(), r.s_pedcc(), omega))
            .collect()
    };
    par::map(exec, &methods, |(name, f, uses_omega)| {
        MethodRow::evaluate(name, &eval(id, *f), &eval(ood, *f), uses_omega.then_some(omega))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Copy)]
    struct P(f64, f64);

    impl Decomposed for P {
        fn s_alpha(&self) -> f64 {
            self.0
        }
        fn s_beta(&self) -> f64 {
            self.1
        }
        fn s_pedcc(&self) -> f64 {
            self.0 * self.1
        }
    }

    #[test]
    fn default_grid_shape() {
        let g = default_omega_grid();
        assert_eq!(g.len(), 26);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1e-3).abs() < 1e-18);
        assert_eq!(*g.last().unwrap(), 1e3);
        assert!((g[13] - 1.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        validate_grid(&g).unwrap();
    }

    #[test]
    fn grid_rule() {
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[0.1, 1e3]).is_err());
        assert!(validate_grid(&[0.0, 10.0]).is_err());
        assert!(validate_grid(&[0.0, -1.0, 1e3]).is_err());
        assert!(validate_grid(&[0.0, 5e3]).is_ok());
    }

    #[test]
    fn identical_sets_pick_zero() {
        let recs: Vec<P> = (0..40).map(|i| P((i as f64 * 0.37).fract(), (i as f64 * 0.61).fract())).collect();
        let t = tune_omega(&recs, &recs, &default_omega_grid()).unwrap();
        assert_eq!(t.omega, 0.0);
    }

    #[test]
    fn beta_separable_reaches_full_tnr() {
        let id: Vec<P> = (0..50).map(|i| P(0.9, 0.8 + 0.002 * i as f64)).collect();
        let ood: Vec<P> = (0..50).map(|i| P(0.9, 0.1 + 0.005 * i as f64)).collect();
        let t = tune_omega(&id, &ood, &default_omega_grid()).unwrap();
        assert_eq!(t.row.tnr_at_tpr95, 1.0);
        // S_α is constant, so every positive ω separates; ties go to the smallest
        assert_eq!(t.omega, default_omega_grid()[1]);
        let pure_alpha = t.trace[0].1;
        assert!(pure_alpha < 1.0);
    }

    #[test]
    fn ablation_rows() {
        let id: Vec<P> = (0..30).map(|i| P(0.95 + 0.001 * i as f64, 0.7 + 0.01 * i as f64)).collect();
        let ood: Vec<P> = (0..30).map(|i| P(0.5 + 0.001 * i as f64, 0.1 + 0.01 * i as f64)).collect();
        let rows = ablation_grid(&id, &ood, 2.0).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(
            names,
            ["s_alpha", "s_beta", "s_alpha_times_s_beta", "s_alpha_plus_s_beta", "s_pedcc", "s_d_pedcc"]
        );
        assert!(rows.iter().all(|r| r.tnr_at_tpr95 == 1.0 && r.auroc == 1.0));
        assert_eq!(rows[5].omega, Some(2.0));
        assert_eq!(rows[0].omega, None);
    }
}
