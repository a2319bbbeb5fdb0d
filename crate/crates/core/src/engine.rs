//! Sequential trial conduct: recommendation, cohort recording, stopping and
//! MTD selection, plus session persistence.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::animal_prior::BvnParams;
use crate::commensurability::{
    dynamic_weight, in_run_in, interesting_doses, kappa, lambda_info_time, lambda_sd_ratio,
    lambda_seed, optimal_prediction, LambdaMode, PredictionRecord, SdRatioInput, TraceEntry,
    UtilityTable, WeightTrace,
};
use crate::dose_model::{dlt_risk, dose_counts, CohortOutcome, DoseGrid, ThetaPoint};
use crate::error::{Error, Result};
use crate::inference::{GridSpec, MixturePosterior, MixtureModel, PosteriorSummary};
use crate::io::write_atomic;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightPolicy {
    /// `w = kappa^lambda` after every cohort.
    Dynamic,
    Fixed { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub cohort_size: usize,
    pub max_cohorts: usize,
    pub utilities: UtilityTable,
    pub lambda_mode: LambdaMode,
    pub lambda_sims: usize,
    pub weight_policy: WeightPolicy,
    pub run_in: bool,
    /// Largest tolerated `Pr(p >= overdose_cut)`.
    pub feasibility_bound: f64,
    pub overdose_cut: f64,
    /// Maximum fold increase over the most recent dose.
    pub escalation_cap: f64,
    /// First-cohort dose in mg/m²; defaults to the highest dose whose
    /// informative-prior `Pr(p < 0.1)` is at least 0.8.
    pub start_dose: Option<f64>,
    pub seed: u64,
    pub grid_spec: GridSpec,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            cohort_size: 3,
            max_cohorts: 7,
            utilities: UtilityTable::default(),
            lambda_mode: LambdaMode::SdRatio,
            lambda_sims: 5000,
            weight_policy: WeightPolicy::Dynamic,
            run_in: false,
            feasibility_bound: 0.25,
            overdose_cut: 0.33,
            escalation_cap: 2.0,
            start_dose: None,
            seed: 0,
            grid_spec: GridSpec::default(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cohort_size == 0 || self.max_cohorts == 0 {
            return Err(Error::Config("cohort_size and max_cohorts must be positive".into()));
        }
        self.utilities.validate()?;
        if let WeightPolicy::Fixed { weight } = self.weight_policy {
            if !(0.0..=1.0).contains(&weight) {
                return Err(Error::Config(format!("fixed weight {weight} outside [0, 1]")));
            }
        }
        if !(self.feasibility_bound > 0.0 && self.feasibility_bound < 1.0) {
            return Err(Error::Config("feasibility_bound must be in (0, 1)".into()));
        }
        if !(self.overdose_cut > 0.0 && self.overdose_cut < 1.0) {
            return Err(Error::Config("overdose_cut must be in (0, 1)".into()));
        }
        if !(self.escalation_cap >= 1.0) {
            return Err(Error::Config("escalation_cap must be at least 1".into()));
        }
        self.grid_spec.validate()
    }

    pub fn max_patients(&self) -> u32 {
        (self.cohort_size * self.max_cohorts) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Enrolling,
    StoppedEarly,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recommendation {
    Dose { dose_index: usize },
    Stop,
}

/// Everything needed to resume a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub grid: DoseGrid,
    pub informative: BvnParams,
    pub weak: BvnParams,
    /// Reference dose of the weak component (the informative one uses `grid.d_ref`).
    pub weak_d_ref: f64,
    pub config: TrialConfig,
    /// Informative-prior predictive DLT probability per dose.
    pub prior_pr_dlt: Vec<f64>,
    /// Frozen per-dose predictions (true = DLT).
    pub predictions: Vec<bool>,
    pub history: Vec<CohortOutcome>,
    pub trace: WeightTrace,
    /// Prior mixture weight of the current analysis.
    pub weight: f64,
    pub status: TrialStatus,
    pub next_dose: Option<usize>,
}

/// A trial together with its quadrature model and current posterior.
#[derive(Debug, Clone)]
pub struct Trial {
    pub state: TrialState,
    model: Arc<MixtureModel>,
    posterior: MixturePosterior,
}

fn initial_weight(config: &TrialConfig) -> f64 {
    match config.weight_policy {
        WeightPolicy::Dynamic if config.run_in => 0.0,
        WeightPolicy::Dynamic => 1.0,
        WeightPolicy::Fixed { weight } => weight,
    }
}

impl Trial {
    pub fn build_model(
        grid: &DoseGrid,
        informative: &BvnParams,
        weak: &BvnParams,
        weak_d_ref: f64,
        spec: &GridSpec,
    ) -> Result<Arc<MixtureModel>> {
        Ok(Arc::new(MixtureModel::new(grid, informative, weak, weak_d_ref, spec)?))
    }

    pub fn new(model: Arc<MixtureModel>, config: TrialConfig) -> Result<Self> {
        config.validate()?;
        let grid = model.dose_grid.clone();
        let zeros = vec![(0, 0); grid.len()];
        let prior = model.posterior(1.0, &zeros)?;
        let prior_pr_dlt = prior.informative.mean_risk();
        let predictions = prior_pr_dlt.iter().map(|p| optimal_prediction(*p, &config.utilities)).collect();
        let start = match config.start_dose {
            Some(d) => grid
                .index_of(d)
                .ok_or_else(|| Error::Config(format!("start dose {d} is not on the grid")))?,
            None => (0..grid.len())
                .rev()
                .find(|&i| prior.prob_risk_below(i, 0.1) >= 0.8)
                .unwrap_or(0),
        };
        let weight = initial_weight(&config);
        let posterior = model.posterior(weight, &zeros)?;
        let state = TrialState {
            informative: model.informative.prior,
            weak: model.weak.prior,
            weak_d_ref: model.weak.d_ref,
            grid,
            config,
            prior_pr_dlt,
            predictions,
            history: Vec::new(),
            trace: WeightTrace::default(),
            weight,
            status: TrialStatus::Enrolling,
            next_dose: Some(start),
        };
        Ok(Trial { state, model, posterior })
    }

    /// Rebuilds a trial from saved state, reusing `model` when it matches.
    pub fn from_state(state: TrialState, model: Option<Arc<MixtureModel>>) -> Result<Self> {
        state.config.validate()?;
        let model = match model {
            Some(m)
                if m.dose_grid == state.grid
                    && m.informative.prior == state.informative
                    && m.weak.prior == state.weak
                    && m.weak.d_ref == state.weak_d_ref
                    && m.spec == state.config.grid_spec =>
            {
                m
            }
            _ => Self::build_model(
                &state.grid,
                &state.informative,
                &state.weak,
                state.weak_d_ref,
                &state.config.grid_spec,
            )?,
        };
        if state.history.iter().any(|c| c.dose_index >= state.grid.len()) {
            return Err(Error::State("history refers to a dose outside the grid".into()));
        }
        let counts = dose_counts(state.grid.len(), &state.history);
        let posterior = model.posterior(state.weight, &counts)?;
        Ok(Trial { state, model, posterior })
    }

    pub fn model(&self) -> &Arc<MixtureModel> {
        &self.model
    }

    pub fn posterior(&self) -> &MixturePosterior {
        &self.posterior
    }

    pub fn summary(&self) -> PosteriorSummary {
        self.posterior.summarize(&self.state.grid)
    }

    pub fn recommend_next(&self) -> Result<Recommendation> {
        if self.state.status != TrialStatus::Enrolling {
            return Err(Error::State(format!("trial is {:?}", self.state.status)));
        }
        Ok(match self.state.next_dose {
            Some(i) => Recommendation::Dose { dose_index: i },
            None => Recommendation::Stop,
        })
    }

    /// Records a cohort treated at the recommended dose.
    pub fn record_cohort(&mut self, dose_index: usize, outcomes: Vec<bool>) -> Result<TraceEntry> {
        self.ensure_enrolling()?;
        if let Some(expected) = self.state.next_dose {
            if expected != dose_index {
                return Err(Error::ProtocolViolation { expected, got: dose_index });
            }
        }
        if outcomes.len() != self.state.config.cohort_size {
            return Err(Error::InvalidCohort(format!(
                "expected {} outcomes, got {}",
                self.state.config.cohort_size,
                outcomes.len()
            )));
        }
        self.apply(dose_index, outcomes)
    }

    /// Records a cohort at any dose, bypassing the recommendation check; used
    /// to replay externally specified outcome sequences.
    pub fn replay_cohort(&mut self, dose_index: usize, outcomes: Vec<bool>) -> Result<TraceEntry> {
        self.ensure_enrolling()?;
        self.apply(dose_index, outcomes)
    }

    /// Summary and weight after a hypothetical cohort; `self` is unchanged.
    pub fn whatif(&self, dose_index: usize, n_patients: usize, n_dlt: usize) -> Result<WhatIf> {
        self.ensure_enrolling()?;
        if n_patients == 0 {
            return Ok(WhatIf {
                summary: self.summary(),
                entry: self.state.trace.last().copied(),
                recommendation: self.recommend_next()?,
                status: self.state.status,
            });
        }
        let mut t = self.clone();
        let c = CohortOutcome::from_counts(dose_index, n_patients, n_dlt, false)?;
        let entry = t.replay_cohort(dose_index, c.outcomes)?;
        let recommendation = match t.state.status {
            TrialStatus::Enrolling => t.recommend_next()?,
            _ => Recommendation::Stop,
        };
        Ok(WhatIf { summary: t.summary(), entry: Some(entry), recommendation, status: t.state.status })
    }

    fn ensure_enrolling(&self) -> Result<()> {
        if self.state.status != TrialStatus::Enrolling {
            return Err(Error::State(format!("trial is no longer enrolling ({:?})", self.state.status)));
        }
        Ok(())
    }

    fn apply(&mut self, dose_index: usize, outcomes: Vec<bool>) -> Result<TraceEntry> {
        let st = &self.state;
        let nd = st.grid.len();
        if dose_index >= nd {
            return Err(Error::InvalidCohort(format!("dose index {dose_index} outside the grid")));
        }
        if st.history.len() >= st.config.max_cohorts {
            return Err(Error::State("all cohorts have been recorded".into()));
        }
        let cohort = CohortOutcome::new(dose_index, outcomes, st.predictions[dose_index])?;
        let h = st.history.len() + 1;
        let n_before: u32 = st.history.iter().filter(|c| c.dose_index == dose_index).map(|c| c.n_patients() as u32).sum();

        let mut history = st.history.clone();
        history.push(cohort.clone());
        let (kappa_h, lambda_h, weight, run_in) = match st.config.weight_policy {
            WeightPolicy::Fixed { weight } => (None, None, weight, false),
            WeightPolicy::Dynamic => {
                let record = PredictionRecord::from_history(st.predictions.clone(), &history);
                let t = interesting_doses(&history, dose_index);
                let k = kappa(&record, &t, &st.config.utilities)?;
                let lam = self.lambda(h, dose_index, n_before, cohort.n_patients() as u32, &history)?;
                let gated = st.config.run_in && in_run_in(&history[..h - 1]);
                let w = if gated { 0.0 } else { dynamic_weight(k, lam) };
                (Some(k), Some(lam), w, gated)
            }
        };

        let counts = dose_counts(nd, &history);
        let posterior = self.model.posterior(weight, &counts)?;
        let entry = TraceEntry {
            cohort: h,
            dose_index,
            kappa: kappa_h,
            lambda: lambda_h,
            weight,
            posterior_weight: posterior.posterior_weight,
            run_in,
        };

        let cfg = &self.state.config;
        let over = posterior.pr_at_least(cfg.overdose_cut);
        let (status, next) = if over[0] > cfg.feasibility_bound {
            (TrialStatus::StoppedEarly, None)
        } else if h == cfg.max_cohorts {
            (TrialStatus::Completed, None)
        } else {
            (TrialStatus::Enrolling, recommend(&self.state.grid, &over, dose_index, cfg))
        };

        let st = &mut self.state;
        st.history = history;
        st.trace.push(entry);
        st.weight = weight;
        st.status = if status == TrialStatus::Enrolling && next.is_none() { TrialStatus::StoppedEarly } else { status };
        st.next_dose = next;
        self.posterior = posterior;
        Ok(entry)
    }

    fn lambda(&self, h: usize, dose_index: usize, n_before: u32, cohort_n: u32, history: &[CohortOutcome]) -> Result<f64> {
        let st = &self.state;
        match st.config.lambda_mode {
            LambdaMode::InfoTime => {
                let n: u32 = history.iter().map(|c| c.n_patients() as u32).sum();
                lambda_info_time(n.min(st.config.max_patients()), st.config.max_patients())
            }
            LambdaMode::SdRatio => {
                // modal estimate from the analysis before this cohort; the
                // first cohort uses the informative prior alone
                let (mode, d_ref) = if h == 1 {
                    (ThetaPoint { theta1: st.informative.mu1, theta2: st.informative.mu2 }, st.grid.d_ref)
                } else {
                    self.posterior.mode(&st.grid)
                };
                let p = dlt_risk(mode, st.grid.doses[dose_index], d_ref)?;
                let input = SdRatioInput {
                    n_before,
                    cohort_size: cohort_n,
                    remaining_cohorts: st.config.max_cohorts.saturating_sub(h) as u32,
                    prediction: st.predictions[dose_index],
                    prob_dlt: p,
                    sims: st.config.lambda_sims,
                    seed: lambda_seed(st.config.seed, h),
                };
                Ok(lambda_sd_ratio(&input, &st.config.utilities))
            }
        }
    }

    /// Administered, safe dose whose posterior median is closest to the target.
    pub fn select_mtd(&self) -> Result<Option<usize>> {
        match self.state.status {
            TrialStatus::Enrolling => Err(Error::State("the trial has not completed".into())),
            TrialStatus::StoppedEarly => Ok(None),
            TrialStatus::Completed => {
                let s = self.summary();
                let over = self.posterior.pr_at_least(self.state.config.overdose_cut);
                Ok(select_from(&self.state, &s.median, &over))
            }
        }
    }
}

fn select_from(state: &TrialState, median: &[f64], over: &[f64]) -> Option<usize> {
    let mut administered: Vec<usize> = state.history.iter().map(|c| c.dose_index).collect();
    administered.sort_unstable();
    administered.dedup();
    let mut best: Option<(usize, f64)> = None;
    for i in administered {
        if over[i] > state.config.feasibility_bound {
            continue;
        }
        let gap = (median[i] - state.grid.gamma).abs();
        if best.is_none_or(|(_, g)| gap < g) {
            best = Some((i, gap));
        }
    }
    best.map(|(i, _)| i)
}

/// Highest dose meeting the overdose criterion and the escalation cap.
pub fn recommend(grid: &DoseGrid, pr_over: &[f64], current: usize, cfg: &TrialConfig) -> Option<usize> {
    let limit = grid.doses[current] * cfg.escalation_cap * (1.0 + 1e-12);
    (0..grid.len())
        .rev()
        .find(|&i| grid.doses[i] <= limit && pr_over[i] <= cfg.feasibility_bound)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub summary: PosteriorSummary,
    pub entry: Option<TraceEntry>,
    pub recommendation: Recommendation,
    pub status: TrialStatus,
}

#[derive(Serialize)]
struct SessionOut<'a> {
    schema_version: u32,
    state: &'a TrialState,
}

#[derive(Deserialize)]
struct SessionIn {
    state: TrialState,
}

pub fn session_to_json(state: &TrialState) -> Result<String> {
    Ok(serde_json::to_string_pretty(&SessionOut { schema_version: SCHEMA_VERSION, state })?)
}

pub fn session_from_json(text: &str) -> Result<TrialState> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::State("session record has no schema_version".into()))? as u32;
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found, expected: SCHEMA_VERSION });
    }
    let s: SessionIn = serde_json::from_value(value)?;
    Ok(s.state)
}

pub fn save_session(state: &TrialState, path: &Path) -> Result<()> {
    write_atomic(path, session_to_json(state)?.as_bytes())
}

pub fn load_session(path: &Path) -> Result<TrialState> {
    session_from_json(&std::fs::read_to_string(path)?)
}
