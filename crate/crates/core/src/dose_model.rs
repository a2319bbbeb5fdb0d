//! Doses, DLT risks and the two-parameter logistic dose-toxicity model.
//!
//! The model is `logit(p) = theta1 + exp(theta2) * ln(dose / d_ref)`, so
//! `theta1` is the log-odds of toxicity at the reference dose and
//! `exp(theta2)` is a strictly positive slope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{expit, log_expit};

/// Ordered candidate doses (mg/m²) with the reference dose and target risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseGrid {
    pub doses: Vec<f64>,
    pub d_ref: f64,
    pub gamma: f64,
}

impl DoseGrid {
    pub fn new(doses: Vec<f64>, d_ref: f64, gamma: f64) -> Result<Self> {
        let grid = DoseGrid { doses, d_ref, gamma };
        grid.validate()?;
        Ok(grid)
    }

    /// The nine-dose AUY922 grid with `d_ref = 28` and a 25% target.
    pub fn auy922() -> Self {
        DoseGrid {
            doses: vec![2.0, 4.0, 8.0, 16.0, 22.0, 28.0, 40.0, 54.0, 70.0],
            d_ref: 28.0,
            gamma: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.doses.is_empty() {
            return Err(Error::Config("dose grid is empty".into()));
        }
        if self.doses.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Config("doses must be positive and finite".into()));
        }
        if self.doses.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("doses must be strictly increasing".into()));
        }
        if !(self.d_ref.is_finite() && self.d_ref > 0.0) {
            return Err(Error::Config("d_ref must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.doses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doses.is_empty()
    }

    /// `ln(d_i / d_ref)` for every grid dose.
    pub fn log_ratios(&self) -> Vec<f64> {
        self.doses.iter().map(|d| (d / self.d_ref).ln()).collect()
    }

    /// Index of an exact grid dose value.
    pub fn index_of(&self, dose: f64) -> Option<usize> {
        self.doses
            .iter()
            .position(|d| (d - dose).abs() <= 1e-9 * d.max(1.0))
    }
}

/// A point in parameter space: `theta1` is the log-odds at `d_ref`, `theta2` the log slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    pub theta1: f64,
    pub theta2: f64,
}

impl ThetaPoint {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        if !(theta1.is_finite() && theta2.is_finite()) {
            return Err(Error::Domain("theta must be finite".into()));
        }
        Ok(ThetaPoint { theta1, theta2 })
    }

    /// Linear predictor (log-odds) at a dose.
    #[inline]
    pub fn log_odds(&self, log_ratio: f64) -> f64 {
        self.theta1 + self.theta2.exp() * log_ratio
    }
}

/// DLT risk at `dose` under the logistic model.
pub fn dlt_risk(theta: ThetaPoint, dose: f64, d_ref: f64) -> Result<f64> {
    Ok(expit(dlt_log_odds(theta, dose, d_ref)?))
}

/// Log-odds of DLT at `dose`; the risk is `expit` of this.
pub fn dlt_log_odds(theta: ThetaPoint, dose: f64, d_ref: f64) -> Result<f64> {
    if !(dose > 0.0) || !(d_ref > 0.0) {
        return Err(Error::Domain(format!(
            "doses must be positive (dose={dose}, d_ref={d_ref})"
        )));
    }
    Ok(theta.log_odds((dose / d_ref).ln()))
}

/// `ln p` and `ln(1 - p)` at a given log-odds.
#[inline]
pub fn log_risks(log_odds: f64) -> (f64, f64) {
    (log_expit(log_odds), log_expit(-log_odds))
}

/// A true dose-toxicity scenario for simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub true_risks: Vec<f64>,
    pub mtd_index: usize,
}

impl Scenario {
    /// Builds a scenario; the MTD is the dose whose risk is closest to `gamma`
    /// (lower dose on ties).
    pub fn new(name: impl Into<String>, true_risks: Vec<f64>, gamma: f64) -> Result<Self> {
        if true_risks.is_empty() {
            return Err(Error::Config("scenario has no risks".into()));
        }
        if true_risks.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("scenario risks must lie in [0, 1]".into()));
        }
        if true_risks.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("scenario risks must be non-decreasing".into()));
        }
        let mut mtd_index = 0;
        for (i, p) in true_risks.iter().enumerate() {
            if (p - gamma).abs() < (true_risks[mtd_index] - gamma).abs() - 1e-12 {
                mtd_index = i;
            }
        }
        Ok(Scenario { name: name.into(), true_risks, mtd_index })
    }
}

/// The eight human toxicity scenarios on the AUY922 grid.
pub fn scenario_table() -> Vec<Scenario> {
    const ROWS: [[f64; 9]; 8] = [
        [0.11, 0.25, 0.35, 0.41, 0.47, 0.52, 0.58, 0.63, 0.70],
        [0.08, 0.16, 0.25, 0.35, 0.42, 0.45, 0.53, 0.60, 0.70],
        [0.02, 0.05, 0.14, 0.25, 0.35, 0.42, 0.51, 0.60, 0.68],
        [0.03, 0.05, 0.10, 0.16, 0.25, 0.32, 0.40, 0.48, 0.55],
        [0.001, 0.005, 0.03, 0.10, 0.16, 0.25, 0.38, 0.50, 0.60],
        [0.01, 0.02, 0.05, 0.08, 0.11, 0.14, 0.25, 0.37, 0.47],
        [0.35, 0.42, 0.60, 0.75, 0.82, 0.88, 0.91, 0.94, 0.97],
        [0.001, 0.005, 0.01, 0.02, 0.04, 0.05, 0.10, 0.16, 0.25],
    ];
    ROWS.iter()
        .enumerate()
        .map(|(i, row)| {
            Scenario::new(format!("Scenario {}", i + 1), row.to_vec(), 0.25)
                .expect("built-in scenarios are valid")
        })
        .collect()
}

/// Outcome of one treated cohort. Every patient at a dose shares the same
/// frozen prior prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortOutcome {
    pub dose_index: usize,
    /// Per-patient DLT indicators.
    pub outcomes: Vec<bool>,
    /// Per-patient predicted outcome (true = DLT predicted).
    pub predictions: Vec<bool>,
}

impl CohortOutcome {
    pub fn new(dose_index: usize, outcomes: Vec<bool>, prediction: bool) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidCohort("a cohort needs at least one patient".into()));
        }
        let predictions = vec![prediction; outcomes.len()];
        Ok(CohortOutcome { dose_index, outcomes, predictions })
    }

    /// Cohort from counts: the first `n_dlt` patients carry the DLTs.
    pub fn from_counts(dose_index: usize, n_patients: usize, n_dlt: usize, prediction: bool) -> Result<Self> {
        if n_dlt > n_patients {
            return Err(Error::InvalidCohort(format!(
                "{n_dlt} DLTs among {n_patients} patients"
            )));
        }
        let outcomes = (0..n_patients).map(|i| i < n_dlt).collect();
        Self::new(dose_index, outcomes, prediction)
    }

    pub fn n_patients(&self) -> usize {
        self.outcomes.len()
    }

    pub fn n_dlt(&self) -> usize {
        self.outcomes.iter().filter(|&&y| y).count()
    }

    /// True when any patient's outcome disagrees with the prediction.
    pub fn has_disagreement(&self) -> bool {
        self.outcomes.iter().zip(&self.predictions).any(|(y, eta)| y != eta)
    }
}

/// Per-dose `(n, r)` totals over a cohort history.
pub fn dose_counts(n_doses: usize, history: &[CohortOutcome]) -> Vec<(u32, u32)> {
    let mut counts = vec![(0u32, 0u32); n_doses];
    for c in history {
        counts[c.dose_index].0 += c.n_patients() as u32;
        counts[c.dose_index].1 += c.n_dlt() as u32;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logit;
    use proptest::prelude::*;

    #[test]
    fn risk_at_reference_dose() {
        let t = ThetaPoint::new(0.0, 0.0).unwrap();
        assert_eq!(dlt_risk(t, 28.0, 28.0).unwrap(), 0.5);
        let t = ThetaPoint::new(logit(0.25), 3.7).unwrap();
        assert!((dlt_risk(t, 28.0, 28.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn risk_at_54_under_reference_means() {
        // hand calculation: -0.524 + exp(0.147) * ln(54/28) = 0.236794..., expit = 0.558923...
        let t = ThetaPoint::new(-0.524, 0.147).unwrap();
        let z: f64 = -0.524 + 0.147f64.exp() * (54.0f64 / 28.0).ln();
        let expected = 1.0 / (1.0 + (-z).exp());
        let p = dlt_risk(t, 54.0, 28.0).unwrap();
        assert!((p - expected).abs() < 1e-15);
        assert!((p - 0.559).abs() < 5e-4);
    }

    #[test]
    fn nonpositive_dose_is_rejected() {
        let t = ThetaPoint::new(0.0, 0.0).unwrap();
        assert!(matches!(dlt_risk(t, 0.0, 28.0), Err(Error::Domain(_))));
        assert!(matches!(dlt_risk(t, -1.0, 28.0), Err(Error::Domain(_))));
    }

    #[test]
    fn scenarios_match_table() {
        let s = scenario_table();
        assert_eq!(s.len(), 8);
        let grid = DoseGrid::auy922();
        let i16 = grid.index_of(16.0).unwrap();
        assert_eq!(s[2].true_risks[i16], 0.25);
        assert_eq!(s[7].true_risks[8], 0.25);
        assert_eq!(grid.doses[s[6].mtd_index], 2.0);
        assert_eq!(grid.doses[s[0].mtd_index], 4.0);
        assert_eq!(grid.doses[s[2].mtd_index], 16.0);
        assert_eq!(grid.doses[s[7].mtd_index], 70.0);
        for sc in &s {
            assert!(sc.true_risks.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn grid_validation() {
        assert!(DoseGrid::new(vec![1.0, 1.0], 1.0, 0.3).is_err());
        assert!(DoseGrid::new(vec![1.0, 2.0], 1.0, 1.0).is_err());
        assert!(DoseGrid::new(vec![0.0, 2.0], 1.0, 0.3).is_err());
        assert!(DoseGrid::new(vec![1.0, 2.0], 3.0, 0.3).is_ok());
    }

    #[test]
    fn cohort_counts() {
        let c = CohortOutcome::from_counts(3, 3, 1, false).unwrap();
        assert_eq!(c.n_patients(), 3);
        assert_eq!(c.n_dlt(), 1);
        assert!(c.has_disagreement());
        assert!(CohortOutcome::from_counts(0, 3, 4, false).is_err());
    }

    proptest! {
        #[test]
        fn risk_strictly_increasing_in_dose(
            t1 in -6.0f64..6.0, t2 in -3.0f64..2.5, d in 0.5f64..100.0, f in 1.01f64..3.0
        ) {
            let t = ThetaPoint::new(t1, t2).unwrap();
            let lo = dlt_log_odds(t, d, 28.0).unwrap();
            let hi = dlt_log_odds(t, d * f, 28.0).unwrap();
            prop_assert!(lo < hi);
            prop_assert!(dlt_risk(t, d, 28.0).unwrap() <= dlt_risk(t, d * f, 28.0).unwrap());
        }

        #[test]
        fn reference_identity(t1 in -10.0f64..10.0, t2 in -5.0f64..5.0) {
            let t = ThetaPoint::new(t1, t2).unwrap();
            prop_assert_eq!(dlt_risk(t, 28.0, 28.0).unwrap(), expit(t1));
        }
    }
}
