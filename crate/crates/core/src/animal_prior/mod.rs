//! Animal toxicity data turned into an informative bivariate-normal prior.
//!
//! Each animal arm is scaled onto the human dose scale and represented as an
//! independent beta prior on the human DLT risk at that dose. Under the
//! logistic model the two pseudo-arms induce a joint prior on `(p_i, theta2)`
//! at every grid dose; its percentiles are matched by a bivariate normal on
//! `theta`.

mod bvn;
mod fit;
mod marginal;

pub use bvn::BvnParams;
pub use fit::{
    fit_bvn, implied_moments, implied_percentile, percentile_table, FitOptions, FitResult,
    PercentileTable, PriorRecord, DEFAULT_LEVELS,
};
pub use marginal::{joint_density, marginal_density, marginal_percentile, MarginalPrior, ThetaRule};

use serde::{Deserialize, Serialize};

use crate::dose_model::DoseGrid;
use crate::error::{Error, Result};
use crate::math::logit;

/// One animal dose group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnimalArm {
    /// Animal dose in mg/kg.
    pub animal_dose: f64,
    pub n_toxic: u32,
    pub n_nontoxic: u32,
}

/// A single-species animal study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimalStudy {
    /// Body-weight / body-surface-area translation factor for the species.
    pub species_factor: f64,
    pub arms: Vec<AnimalArm>,
}

impl AnimalStudy {
    /// The 60-dog example: 0.1 and 2.7 mg/kg in 30 dogs each, with dog factor 10/0.5.
    pub fn dog_example() -> Self {
        AnimalStudy {
            species_factor: 20.0,
            arms: vec![
                AnimalArm { animal_dose: 0.1, n_toxic: 1, n_nontoxic: 29 },
                AnimalArm { animal_dose: 2.7, n_toxic: 17, n_nontoxic: 13 },
            ],
        }
    }

    /// Checks the study invariants; arms are taken in increasing dose order.
    pub fn validate(&self) -> Result<()> {
        if !(self.species_factor.is_finite() && self.species_factor > 0.0) {
            return Err(Error::AnimalData("species factor must be positive".into()));
        }
        if self.arms.len() < 2 {
            return Err(Error::AnimalData("at least two animal dose groups are required".into()));
        }
        let mut arms = self.arms.clone();
        arms.sort_by(|a, b| a.animal_dose.total_cmp(&b.animal_dose));
        for (i, arm) in arms.iter().enumerate() {
            if !(arm.animal_dose.is_finite() && arm.animal_dose > 0.0) {
                return Err(Error::AnimalData(format!("arm {i}: dose must be positive")));
            }
        }
        if arms.windows(2).any(|w| w[0].animal_dose == w[1].animal_dose) {
            return Err(Error::DegenerateGeometry("two arms share the same dose".into()));
        }
        let top = arms.last().expect("non-empty");
        if top.n_toxic == 0 {
            return Err(Error::AnimalData(
                "at least one toxicity is required on the highest dose".into(),
            ));
        }
        for w in arms.windows(2) {
            let rate = |a: &AnimalArm| a.n_toxic as f64 / (a.n_toxic + a.n_nontoxic).max(1) as f64;
            if rate(&w[0]) > rate(&w[1]) {
                return Err(Error::AnimalData(format!(
                    "crude toxicity rate decreases between {} and {} mg/kg",
                    w[0].animal_dose, w[1].animal_dose
                )));
            }
        }
        for (i, arm) in arms.iter().enumerate() {
            if arm.n_toxic == 0 || arm.n_nontoxic == 0 {
                return Err(Error::ImproperPrior { arm: i, t: arm.n_toxic, v: arm.n_nontoxic });
            }
        }
        Ok(())
    }
}

/// Human-equivalent dose (mg/m²) of an animal dose (mg/kg).
pub fn allometric_scale(animal_dose: f64, species_factor: f64) -> Result<f64> {
    if !(animal_dose > 0.0 && species_factor > 0.0) {
        return Err(Error::Domain(format!(
            "allometric scaling needs positive inputs (dose={animal_dose}, factor={species_factor})"
        )));
    }
    Ok(animal_dose * species_factor)
}

/// Beta prior on the human DLT risk at a human-equivalent dose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoArm {
    pub human_dose: f64,
    pub a: f64,
    pub b: f64,
}

/// Maps each arm `(d, t, v)` to `(scaled d, Beta(t, v))`, sorted by dose.
pub fn beta_pseudo_priors(study: &AnimalStudy) -> Result<Vec<PseudoArm>> {
    study.validate()?;
    let mut out = study
        .arms
        .iter()
        .map(|arm| {
            Ok(PseudoArm {
                human_dose: allometric_scale(arm.animal_dose, study.species_factor)?,
                a: arm.n_toxic as f64,
                b: arm.n_nontoxic as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|x, y| x.human_dose.total_cmp(&y.human_dose));
    Ok(out)
}

/// Reference bivariate-normal summary of the 60-dog study on the AUY922 grid
/// (`d_ref = 28`), used for the worked examples and the simulation study.
pub const DOG_REFERENCE_PRIOR: BvnParams =
    BvnParams { mu1: -0.524, mu2: 0.147, s11: 0.151, s12: -0.008, s22: 0.001 };

/// Covariance multiplier applied to the informative component by default.
///
/// The reference summary describes the population mean of `theta`; trial
/// conduct draws `theta` around that mean with the same covariance, so the
/// effective prior on `theta` has twice the covariance.
pub const DEFAULT_COVARIANCE_INFLATION: f64 = 2.0;

/// The weakly-informative component: `theta1 ~ N(logit(gamma), 2²)`,
/// `theta2 ~ N(0, 1)`, independent. `theta1` is the log-odds at the
/// component's own reference dose (see [`weak_reference_dose`]).
pub fn weakly_informative_prior(grid: &DoseGrid) -> BvnParams {
    BvnParams { mu1: logit(grid.gamma), mu2: 0.0, s11: 4.0, s12: 0.0, s22: 1.0 }
}

/// Reference dose of the weakly-informative component: the grid dose the
/// informative prior deems closest to the target risk.
pub fn weak_reference_dose(grid: &DoseGrid, informative: &BvnParams) -> f64 {
    grid.doses[dose_closest_to_target(grid, informative)]
}

/// Grid dose whose risk under `prior` (at its mean) is closest to `gamma`.
pub fn dose_closest_to_target(grid: &DoseGrid, prior: &BvnParams) -> usize {
    let target = logit(grid.gamma);
    let slope = prior.mu2.exp();
    grid.log_ratios()
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (prior.mu1 + slope * a.1 - target).abs();
            let db = (prior.mu1 + slope * b.1 - target).abs();
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::expit;

    #[test]
    fn dog_doses_scale_to_grid() {
        assert!((allometric_scale(0.1, 20.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((allometric_scale(2.7, 20.0).unwrap() - 54.0).abs() < 1e-12);
        assert_eq!(allometric_scale(1.0, 1.0).unwrap(), 1.0);
        assert!(allometric_scale(0.0, 20.0).is_err());
        assert!(allometric_scale(1.0, -2.0).is_err());
    }

    #[test]
    fn dog_pseudo_priors() {
        let arms = beta_pseudo_priors(&AnimalStudy::dog_example()).unwrap();
        assert_eq!(arms.len(), 2);
        assert!((arms[0].human_dose - 2.0).abs() < 1e-12);
        assert_eq!((arms[0].a, arms[0].b), (1.0, 29.0));
        assert!((arms[1].human_dose - 54.0).abs() < 1e-12);
        assert_eq!((arms[1].a, arms[1].b), (17.0, 13.0));
    }

    #[test]
    fn no_toxicity_on_top_dose_is_rejected() {
        let mut s = AnimalStudy::dog_example();
        s.arms[1].n_toxic = 0;
        assert!(matches!(beta_pseudo_priors(&s), Err(Error::AnimalData(_))));
    }

    #[test]
    fn zero_count_arm_is_improper() {
        let mut s = AnimalStudy::dog_example();
        s.arms[0].n_toxic = 0;
        assert!(matches!(beta_pseudo_priors(&s), Err(Error::ImproperPrior { .. })));
    }

    #[test]
    fn non_monotone_rates_rejected() {
        let mut s = AnimalStudy::dog_example();
        s.arms[0].n_toxic = 25;
        s.arms[0].n_nontoxic = 5;
        assert!(matches!(beta_pseudo_priors(&s), Err(Error::AnimalData(_))));
    }

    #[test]
    fn duplicate_doses_are_degenerate() {
        let mut s = AnimalStudy::dog_example();
        s.arms[0].animal_dose = 2.7;
        assert!(matches!(s.validate(), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn weak_prior_is_centered_on_target() {
        let grid = DoseGrid::auy922();
        let m = weakly_informative_prior(&grid);
        assert!((m.mu1 - (-1.0986)).abs() < 1e-4);
        assert!((expit(m.mu1) - 0.25).abs() < 1e-12);
        // 95% interval at d_ref: expit(-1.0986 -+ 1.96 * 2)
        let lo = expit(m.mu1 - 1.959964 * m.sd1());
        let hi = expit(m.mu1 + 1.959964 * m.sd1());
        assert!((lo - 0.0063).abs() < 5e-4, "{lo}");
        assert!((hi - 0.94).abs() < 5e-3, "{hi}");
        assert_eq!(m.rho(), 0.0);
    }

    #[test]
    fn weak_reference_for_dog_prior() {
        let grid = DoseGrid::auy922();
        assert_eq!(weak_reference_dose(&grid, &DOG_REFERENCE_PRIOR), 16.0);
    }
}
