//! Percentile matching of a bivariate normal on `theta` to the animal-implied
//! marginal priors.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use super::{BvnParams, MarginalPrior, PseudoArm};
use crate::dose_model::DoseGrid;
use crate::error::{Error, Result};
use crate::math::{expit, halton, norm_ppf};
use crate::optimize::{nelder_mead, NelderMeadOptions};

/// Median plus the central 95% limits.
pub const DEFAULT_LEVELS: [f64; 3] = [0.025, 0.5, 0.975];

const LO: [f64; 5] = [-10.0, -5.0, 1e-3, 1e-3, -0.999];
const HI: [f64; 5] = [10.0, 5.0, 10.0, 10.0, 0.999];

/// Moments of `z = theta1 + exp(theta2) L` with `L = ln(d / d_ref)`:
/// second-order Taylor for the mean, Stein's lemma for the cross term and the
/// log-normal variance of `exp(theta2)`.
pub fn implied_moments(bvn: &BvnParams, log_ratio: f64) -> (f64, f64) {
    let l = log_ratio;
    let e_slope = (bvn.mu2 + 0.5 * bvn.s22).exp();
    let var_slope = (2.0 * bvn.mu2 + bvn.s22).exp() * bvn.s22.exp_m1();
    let mean = bvn.mu1 + l * e_slope;
    let var = bvn.s11 + 2.0 * l * e_slope * bvn.s12 + l * l * var_slope;
    (mean, var)
}

/// Percentile `q'` of the risk at `dose` implied by a normal approximation of `z`.
pub fn implied_percentile(bvn: &BvnParams, dose: f64, d_ref: f64, level: f64) -> Result<f64> {
    if !(dose > 0.0 && d_ref > 0.0) {
        return Err(Error::Domain(format!("doses must be positive ({dose}, {d_ref})")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("percentile level must be in (0, 1), got {level}")));
    }
    let (m, v) = implied_moments(bvn, (dose / d_ref).ln());
    debug_assert!(v > 0.0, "implied variance must be positive for a valid covariance");
    Ok(expit(m + norm_ppf(level) * v.max(0.0).sqrt()))
}

/// Target percentiles per dose; rows are kept sorted by dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileTable {
    pub levels: Vec<f64>,
    /// `(dose, values per level)`.
    pub rows: Vec<(f64, Vec<f64>)>,
    /// Mass of the un-normalized marginal (`Pr(p_0 > p_-1)`), when the
    /// two-arm construction was used.
    pub image_mass: Option<f64>,
}

impl PercentileTable {
    pub fn new(levels: Vec<f64>, mut rows: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let t = PercentileTable { levels, rows, image_mass: None };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.len() < 3 {
            return Err(Error::Domain("a percentile table needs at least three levels".into()));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) || self.levels.iter().any(|k| !(*k > 0.0 && *k < 1.0)) {
            return Err(Error::Domain("levels must be strictly increasing in (0, 1)".into()));
        }
        if self.rows.is_empty() {
            return Err(Error::Domain("percentile table has no doses".into()));
        }
        for (dose, vals) in &self.rows {
            if vals.len() != self.levels.len() {
                return Err(Error::Domain(format!("dose {dose}: wrong number of percentiles")));
            }
            if vals.iter().any(|q| !(*q > 0.0 && *q < 1.0)) || vals.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Domain(format!(
                    "dose {dose}: percentiles must be strictly increasing in (0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, dose: f64, level: f64) -> Option<f64> {
        let j = self.levels.iter().position(|k| (k - level).abs() < 1e-12)?;
        self.rows.iter().find(|(d, _)| (d - dose).abs() < 1e-9).map(|(_, v)| v[j])
    }
}

/// Target percentiles for the fit.
///
/// With two pseudo-arms every grid dose gets the percentiles of its
/// normalized marginal prior. With more arms the Jacobian construction is not
/// available and the beta percentiles at the arm doses are used directly.
pub fn percentile_table(grid: &DoseGrid, arms: &[PseudoArm], levels: &[f64]) -> Result<PercentileTable> {
    if arms.len() == 2 {
        let rows = grid
            .doses
            .par_iter()
            .map(|&d| {
                let m = MarginalPrior::new(d, arms)?;
                let vals = levels.iter().map(|&k| m.percentile(k)).collect::<Result<Vec<_>>>()?;
                Ok((d, vals, m.total_mass()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mass = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
        let mut t = PercentileTable::new(
            levels.to_vec(),
            rows.into_iter().map(|(d, v, _)| (d, v)).collect(),
        )?;
        t.image_mass = Some(mass);
        Ok(t)
    } else if arms.len() > 2 {
        let rows = arms
            .iter()
            .map(|a| {
                let beta = Beta::new(a.a, a.b).map_err(|e| Error::Domain(e.to_string()))?;
                Ok((a.human_dose, levels.iter().map(|&k| beta.inverse_cdf(k)).collect()))
            })
            .collect::<Result<Vec<_>>>()?;
        PercentileTable::new(levels.to_vec(), rows)
    } else {
        Err(Error::AnimalData("at least two pseudo-arms are required".into()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Number of multi-starts (at least 8 are always used).
    pub starts: usize,
    /// Offset into the Halton sequence that orders the starts.
    pub seed: u64,
    /// Fresh-simplex restarts from each local optimum.
    pub restarts: usize,
    pub nelder_mead: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { starts: 12, seed: 0, restarts: 2, nelder_mead: NelderMeadOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: BvnParams,
    pub delta: f64,
    pub d_ref: f64,
    pub converged_starts: usize,
}

fn to_bvn(x: &[f64]) -> BvnParams {
    let (s1, s2, rho) = (x[2], x[3], x[4]);
    BvnParams { mu1: x[0], mu2: x[1], s11: s1 * s1, s12: rho * s1 * s2, s22: s2 * s2 }
}

/// Total absolute percentile distance `delta`.
pub fn fit_objective(bvn: &BvnParams, table: &PercentileTable, d_ref: f64) -> f64 {
    let z: Vec<f64> = table.levels.iter().map(|&k| norm_ppf(k)).collect();
    let mut delta = 0.0;
    for (dose, vals) in &table.rows {
        let (m, v) = implied_moments(bvn, (dose / d_ref).ln());
        let sd = v.max(0.0).sqrt();
        for (q, zk) in vals.iter().zip(&z) {
            delta += (q - expit(m + zk * sd)).abs();
        }
    }
    delta
}

/// Minimizes the percentile distance over `(mu1, mu2, sd1, sd2, rho)`.
pub fn fit_bvn(table: &PercentileTable, grid: &DoseGrid, opts: &FitOptions) -> Result<FitResult> {
    table.validate()?;
    let d_ref = grid.d_ref;
    let objective = |x: &[f64]| fit_objective(&to_bvn(x), table, d_ref);
    let starts = opts.starts.max(8);
    let step = [0.5, 0.3, 0.2, 0.1, 0.3];

    let results: Vec<_> = (0..starts)
        .into_par_iter()
        .map(|s| {
            let u = halton(opts.seed.wrapping_mul(starts as u64) + s as u64 + 1, 5);
            let x0 = [
                -3.0 + 6.0 * u[0],
                -2.0 + 4.0 * u[1],
                0.05 + 1.5 * u[2],
                0.02 + 0.8 * u[3],
                -0.9 + 1.8 * u[4],
            ];
            let mut best = nelder_mead(objective, &x0, &step, &LO, &HI, opts.nelder_mead);
            let mut any_converged = best.converged;
            for _ in 0..opts.restarts {
                let small: Vec<f64> = step.iter().map(|s| s * 0.2).collect();
                let again = nelder_mead(objective, &best.x, &small, &LO, &HI, opts.nelder_mead);
                any_converged |= again.converged;
                if again.f <= best.f {
                    best = again;
                }
            }
            (best, any_converged)
        })
        .collect();

    let converged_starts = results.iter().filter(|r| r.1).count();
    let (best, _) = results
        .into_iter()
        .min_by(|a, b| a.0.f.total_cmp(&b.0.f))
        .expect("at least one start");
    let x: [f64; 5] = [best.x[0], best.x[1], best.x[2], best.x[3], best.x[4]];
    if converged_starts == 0 {
        return Err(Error::FitFailure { best_delta: best.f, best: x });
    }
    Ok(FitResult { params: to_bvn(&x), delta: best.f, d_ref, converged_starts })
}

/// Self-describing record of a fitted prior component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub mu1: f64,
    pub mu2: f64,
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
    pub d_ref: f64,
    pub delta: f64,
}

impl PriorRecord {
    pub fn from_fit(fit: &FitResult) -> Self {
        let p = fit.params;
        PriorRecord { mu1: p.mu1, mu2: p.mu2, s11: p.s11, s12: p.s12, s22: p.s22, d_ref: fit.d_ref, delta: fit.delta }
    }

    pub fn params(&self) -> Result<BvnParams> {
        BvnParams::new(self.mu1, self.mu2, self.s11, self.s12, self.s22)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: PriorRecord = serde_json::from_str(s)?;
        r.params()?;
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::animal_prior::weakly_informative_prior;
    use crate::math::logit;

    fn published() -> BvnParams {
        BvnParams::new(-0.524, 0.147, 0.151, -0.008, 0.001).unwrap()
    }

    #[test]
    fn degenerate_slope_variance() {
        let b = BvnParams { mu1: -0.3, mu2: 0.2, s11: 0.4, s12: 0.0, s22: 0.0 };
        let l = (54.0f64 / 28.0).ln();
        let (m, v) = implied_moments(&b, l);
        assert!((m - (-0.3 + 0.2f64.exp() * l)).abs() < 1e-14);
        assert!((v - 0.4).abs() < 1e-14);
    }

    #[test]
    fn median_at_reference_dose() {
        let q = implied_percentile(&published(), 28.0, 28.0, 0.5).unwrap();
        // hand evaluation: expit(-0.524)
        assert!((q - 0.37192).abs() < 1e-4);
    }

    #[test]
    fn weak_prior_interval_at_reference() {
        let grid = DoseGrid::auy922();
        let w = weakly_informative_prior(&grid);
        let lo = implied_percentile(&w, 28.0, 28.0, 0.025).unwrap();
        let hi = implied_percentile(&w, 28.0, 28.0, 0.975).unwrap();
        assert!((implied_percentile(&w, 28.0, 28.0, 0.5).unwrap() - 0.25).abs() < 1e-12);
        assert!((lo - expit(logit(0.25) - 1.959964 * 2.0)).abs() < 1e-5);
        assert!((lo - 0.0066).abs() < 1e-3 && (hi - 0.94).abs() < 5e-3);
    }

    #[test]
    fn symmetric_on_logit_scale() {
        let b = published();
        for &d in &[2.0, 16.0, 70.0] {
            let (m, _) = implied_moments(&b, (d / 28.0f64).ln());
            let lo = logit(implied_percentile(&b, d, 28.0, 0.1).unwrap());
            let hi = logit(implied_percentile(&b, d, 28.0, 0.9).unwrap());
            assert!(((lo + hi) / 2.0 - m).abs() < 1e-9);
        }
    }

    fn synthetic_table(b: &BvnParams, grid: &DoseGrid) -> PercentileTable {
        let rows = grid
            .doses
            .iter()
            .map(|&d| {
                (d, DEFAULT_LEVELS.iter().map(|&k| implied_percentile(b, d, grid.d_ref, k).unwrap()).collect())
            })
            .collect();
        PercentileTable::new(DEFAULT_LEVELS.to_vec(), rows).unwrap()
    }

    #[test]
    fn recovers_generating_params() {
        let grid = DoseGrid::auy922();
        let truth = BvnParams::new(-0.6, 0.25, 0.2, -0.03, 0.05).unwrap();
        let table = synthetic_table(&truth, &grid);
        let fit = fit_bvn(&table, &grid, &FitOptions::default()).unwrap();
        assert!(fit.delta < 1e-4, "delta {}", fit.delta);
        assert!((fit.params.mu1 - truth.mu1).abs() < 1e-3);
        assert!((fit.params.mu2 - truth.mu2).abs() < 1e-3);
    }

    #[test]
    fn dose_order_does_not_matter() {
        let grid = DoseGrid::auy922();
        let table = synthetic_table(&published(), &grid);
        let mut rows = table.rows.clone();
        rows.reverse();
        let shuffled = PercentileTable::new(table.levels.clone(), rows).unwrap();
        assert_eq!(shuffled, table);
        let b = published();
        assert_eq!(fit_objective(&b, &table, 28.0), fit_objective(&b, &shuffled, 28.0));
    }

    #[test]
    fn prior_record_roundtrip() {
        let r = PriorRecord { mu1: -0.5, mu2: 0.1, s11: 0.2, s12: -0.01, s22: 0.05, d_ref: 28.0, delta: 0.1 };
        let s = r.to_json().unwrap();
        for key in ["mu1", "mu2", "s11", "s12", "s22", "d_ref", "delta"] {
            assert!(s.contains(key));
        }
        assert_eq!(PriorRecord::from_json(&s).unwrap(), r);
    }
}
