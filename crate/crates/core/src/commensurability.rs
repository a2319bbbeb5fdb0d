//! Prediction utilities, commensurability and the dynamic mixture weight.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::dose_model::CohortOutcome;
use crate::error::{Error, Result};
use crate::math::splitmix64;

/// Utilities `u_{ys}` of prediction `s` given observation `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    pub u00: f64,
    pub u01: f64,
    pub u10: f64,
    pub u11: f64,
}

impl UtilityTable {
    /// Correct predictions score 1, a missed DLT scores 0, a false alarm `u01`.
    pub fn with_false_alarm(u01: f64) -> Result<Self> {
        let u = UtilityTable { u00: 1.0, u01, u10: 0.0, u11: 1.0 };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.u00, self.u01, self.u10, self.u11];
        if all.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("utilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn get(&self, y: bool, eta: bool) -> f64 {
        match (y, eta) {
            (false, false) => self.u00,
            (false, true) => self.u01,
            (true, false) => self.u10,
            (true, true) => self.u11,
        }
    }

    /// Probability above which a DLT prediction is optimal, for the
    /// `u00 = u11 = 1, u10 = 0` scheme.
    pub fn threshold(&self) -> f64 {
        let gain_dlt = self.u11 - self.u10;
        let gain_none = self.u00 - self.u01;
        gain_none / (gain_dlt + gain_none)
    }
}

impl Default for UtilityTable {
    fn default() -> Self {
        UtilityTable { u00: 1.0, u01: 0.6, u10: 0.0, u11: 1.0 }
    }
}

/// Expected-utility-maximizing prediction; `true` = DLT. Ties keep the
/// no-DLT prediction.
pub fn optimal_prediction(prob_dlt: f64, u: &UtilityTable) -> bool {
    let eu_dlt = prob_dlt * u.u11 + (1.0 - prob_dlt) * u.u01;
    let eu_none = prob_dlt * u.u10 + (1.0 - prob_dlt) * u.u00;
    eu_dlt > eu_none
}

/// Frozen per-dose predictions and the prediction/observation tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub predictions: Vec<bool>,
    /// `counts[i][y][s]`.
    pub counts: Vec<[[u32; 2]; 2]>,
}

impl PredictionRecord {
    pub fn new(predictions: Vec<bool>) -> Self {
        let counts = vec![[[0; 2]; 2]; predictions.len()];
        PredictionRecord { predictions, counts }
    }

    pub fn from_history(predictions: Vec<bool>, history: &[CohortOutcome]) -> Self {
        let mut r = Self::new(predictions);
        for c in history {
            r.add(c);
        }
        r
    }

    pub fn add(&mut self, cohort: &CohortOutcome) {
        for (y, s) in cohort.outcomes.iter().zip(&cohort.predictions) {
            self.counts[cohort.dose_index][*y as usize][*s as usize] += 1;
        }
    }

    pub fn n_treated(&self, i: usize) -> u32 {
        self.counts[i].iter().flatten().sum()
    }
}

/// Average utility of the predictions made at dose `i`.
pub fn per_dose_utility(record: &PredictionRecord, i: usize, u: &UtilityTable) -> Result<f64> {
    let n = record.n_treated(i);
    if n == 0 {
        return Err(Error::UndefinedDose(i));
    }
    let c = &record.counts[i];
    let total = u.u00 * c[0][0] as f64 + u.u01 * c[0][1] as f64 + u.u10 * c[1][0] as f64 + u.u11 * c[1][1] as f64;
    Ok(total / n as f64)
}

/// Administered doses no more than one level below the current dose.
pub fn interesting_doses(history: &[CohortOutcome], current_index: usize) -> Vec<usize> {
    let floor = current_index.saturating_sub(1);
    let mut t: Vec<usize> = history.iter().map(|c| c.dose_index).filter(|&i| i >= floor).collect();
    t.sort_unstable();
    t.dedup();
    t
}

/// Mean per-dose utility over `t`.
pub fn kappa(record: &PredictionRecord, t: &[usize], u: &UtilityTable) -> Result<f64> {
    if t.is_empty() {
        return Err(Error::Domain("the interesting-dose set is empty".into()));
    }
    let sum = t.iter().map(|&i| per_dose_utility(record, i, u)).sum::<Result<f64>>()?;
    Ok(sum / t.len() as f64)
}

/// `sqrt(n_max / n_so_far)`.
pub fn lambda_info_time(n_so_far: u32, n_max: u32) -> Result<f64> {
    if n_so_far == 0 || n_so_far > n_max {
        return Err(Error::Domain(format!("need 0 < n ({n_so_far}) <= n_max ({n_max})")));
    }
    Ok((n_max as f64 / n_so_far as f64).sqrt())
}

/// Inputs of the sd-ratio tuning parameter at the current dose.
#[derive(Debug, Clone, Copy)]
pub struct SdRatioInput {
    /// Patients treated at the dose before the current cohort.
    pub n_before: u32,
    /// Patients in the current cohort.
    pub cohort_size: u32,
    /// Cohorts still to come after the current one.
    pub remaining_cohorts: u32,
    /// Frozen prediction at the dose.
    pub prediction: bool,
    /// Modal DLT probability at the dose.
    pub prob_dlt: f64,
    pub sims: usize,
    pub seed: u64,
}

/// Ratio of the sd of the dose's average utility after the current cohort
/// to its simulated sd had every remaining cohort received the dose.
///
/// Patients treated before the current cohort are fixed; only the current
/// cohort is random in the numerator. Clamped below at 1.
pub fn lambda_sd_ratio(input: &SdRatioInput, u: &UtilityTable) -> f64 {
    let p = input.prob_dlt;
    if !(p > 0.0 && p < 1.0) || input.cohort_size == 0 || input.remaining_cohorts == 0 {
        return 1.0;
    }
    // utility of a DLT minus utility of a non-DLT under the frozen prediction
    let du = u.get(true, input.prediction) - u.get(false, input.prediction);
    if du == 0.0 {
        return 1.0;
    }
    let n_h = (input.n_before + input.cohort_size) as f64;
    let sigma_h = du.abs() * (input.cohort_size as f64 * p * (1.0 - p)).sqrt() / n_h;

    let random = input.cohort_size * (input.remaining_cohorts + 1);
    let n_end = (input.n_before + random) as f64;
    let binom = match Binomial::new(random as u64, p) {
        Ok(b) => b,
        Err(_) => return 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
    let sims = input.sims.max(2);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..sims {
        let c = du * binom.sample(&mut rng) as f64 / n_end;
        s1 += c;
        s2 += c * c;
    }
    let mean = s1 / sims as f64;
    let var = (s2 - sims as f64 * mean * mean) / (sims - 1) as f64;
    if !(var > 0.0) {
        return 1.0;
    }
    (sigma_h / var.sqrt()).max(1.0)
}

/// Seed of the sd-ratio simulation for cohort `h` of a trial.
pub fn lambda_seed(trial_seed: u64, h: usize) -> u64 {
    splitmix64(trial_seed ^ splitmix64(h as u64 + 0x9e37))
}

/// `kappa^lambda`.
pub fn dynamic_weight(kappa: f64, lambda: f64) -> f64 {
    kappa.clamp(0.0, 1.0).powf(lambda)
}

/// True until some cohort has a prediction/observation disagreement.
pub fn in_run_in(history: &[CohortOutcome]) -> bool {
    !history.iter().any(CohortOutcome::has_disagreement)
}

/// How the tuning exponent is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    InfoTime,
    SdRatio,
}

/// One row of the weight trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub cohort: usize,
    pub dose_index: usize,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    /// Prior mixture weight used for the analysis after this cohort.
    pub weight: f64,
    pub posterior_weight: f64,
    pub run_in: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightTrace {
    pub entries: Vec<TraceEntry>,
}

impl WeightTrace {
    pub fn push(&mut self, e: TraceEntry) {
        self.entries.push(e);
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut s = String::from("cohort,dose_index,kappa,lambda,weight,posterior_weight,run_in\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{}",
                e.cohort,
                e.dose_index,
                fmt(e.kappa),
                fmt(e.lambda),
                e.weight,
                e.posterior_weight,
                e.run_in
            );
        }
        s
    }
}
