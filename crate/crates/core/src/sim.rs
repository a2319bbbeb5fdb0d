//! Monte Carlo operating characteristics of the escalation procedures.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commensurability::{LambdaMode, UtilityTable};
use crate::dose_model::Scenario;
use crate::engine::{Recommendation, Trial, TrialConfig, TrialStatus, WeightPolicy};
use crate::error::{Error, Result};
use crate::inference::MixtureModel;
use crate::io::write_atomic;
use crate::math::splitmix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcedureId {
    A,
    B,
    C,
    D,
    E,
}

impl ProcedureId {
    pub const ALL: [ProcedureId; 5] = [ProcedureId::A, ProcedureId::B, ProcedureId::C, ProcedureId::D, ProcedureId::E];

    pub fn label(self) -> &'static str {
        match self {
            ProcedureId::A => "A",
            ProcedureId::B => "B",
            ProcedureId::C => "C",
            ProcedureId::D => "D",
            ProcedureId::E => "E",
        }
    }
}

impl FromStr for ProcedureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(ProcedureId::A),
            "B" => Ok(ProcedureId::B),
            "C" => Ok(ProcedureId::C),
            "D" => Ok(ProcedureId::D),
            "E" => Ok(ProcedureId::E),
            other => Err(Error::Config(format!("unknown procedure {other:?}"))),
        }
    }
}

/// Parses a comma-separated procedure list such as `A,B,E`.
pub fn parse_procedures(list: &str) -> Result<Vec<ProcedureId>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcedureSpec {
    pub id: ProcedureId,
    pub weight_policy: WeightPolicy,
    pub run_in: bool,
    pub lambda_mode: LambdaMode,
    pub utilities: UtilityTable,
}

impl ProcedureSpec {
    /// A: dynamic; B: dynamic with run-in; C: w = 0.5; D: w = 1; E: w = 0.
    pub fn standard(id: ProcedureId, utilities: UtilityTable) -> Self {
        let (weight_policy, run_in) = match id {
            ProcedureId::A => (WeightPolicy::Dynamic, false),
            ProcedureId::B => (WeightPolicy::Dynamic, true),
            ProcedureId::C => (WeightPolicy::Fixed { weight: 0.5 }, false),
            ProcedureId::D => (WeightPolicy::Fixed { weight: 1.0 }, false),
            ProcedureId::E => (WeightPolicy::Fixed { weight: 0.0 }, false),
        };
        ProcedureSpec { id, weight_policy, run_in, lambda_mode: LambdaMode::SdRatio, utilities }
    }

    pub fn configure(&self, base: &TrialConfig, seed: u64) -> TrialConfig {
        TrialConfig {
            weight_policy: self.weight_policy,
            run_in: self.run_in,
            lambda_mode: self.lambda_mode,
            utilities: self.utilities,
            seed,
            ..base.clone()
        }
    }
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub selected: Option<usize>,
    pub stopped_early: bool,
    pub patients: Vec<u32>,
    pub dlts: Vec<u32>,
}

/// Seed of replicate `rep` of scenario `scenario`; shared by all procedures so
/// that they see common random numbers.
pub fn replicate_seed(master: u64, scenario: usize, rep: usize) -> u64 {
    splitmix64(master ^ splitmix64(splitmix64(scenario as u64) ^ rep as u64))
}

/// Per-dose patient outcome streams: the k-th patient treated at dose i gets
/// the k-th uniform of stream i, whatever the procedure.
struct OutcomeStreams {
    rngs: Vec<ChaCha8Rng>,
}

impl OutcomeStreams {
    fn new(seed: u64, n_doses: usize) -> Self {
        let rngs = (0..n_doses)
            .map(|i| ChaCha8Rng::seed_from_u64(splitmix64(seed.wrapping_add(0xD1B5_4A32_D192_ED03u64.wrapping_mul(i as u64 + 1)))))
            .collect();
        OutcomeStreams { rngs }
    }

    fn draw(&mut self, dose: usize, risk: f64) -> bool {
        self.rngs[dose].random::<f64>() < risk
    }
}

pub fn simulate_trial(
    model: &Arc<MixtureModel>,
    scenario: &Scenario,
    procedure: &ProcedureSpec,
    base: &TrialConfig,
    seed: u64,
) -> Result<(Trial, TrialResult)> {
    let nd = model.dose_grid.len();
    if scenario.true_risks.len() != nd {
        return Err(Error::Config(format!(
            "{}: {} risks for {} doses",
            scenario.name,
            scenario.true_risks.len(),
            nd
        )));
    }
    let mut trial = Trial::new(model.clone(), procedure.configure(base, seed))?;
    let mut streams = OutcomeStreams::new(seed, nd);
    while trial.state.status == TrialStatus::Enrolling {
        let dose = match trial.recommend_next()? {
            Recommendation::Dose { dose_index } => dose_index,
            Recommendation::Stop => break,
        };
        let outcomes = (0..base.cohort_size)
            .map(|_| streams.draw(dose, scenario.true_risks[dose]))
            .collect();
        trial.record_cohort(dose, outcomes)?;
    }
    let mut patients = vec![0; nd];
    let mut dlts = vec![0; nd];
    for c in &trial.state.history {
        patients[c.dose_index] += c.n_patients() as u32;
        dlts[c.dose_index] += c.n_dlt() as u32;
    }
    let selected = trial.select_mtd()?;
    let stopped_early = trial.state.status == TrialStatus::StoppedEarly;
    Ok((trial, TrialResult { selected, stopped_early, patients, dlts }))
}

/// Integer tallies for one scenario × procedure cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTally {
    pub scenario: String,
    pub mtd_index: usize,
    pub procedure: ProcedureId,
    pub n_replicates: u64,
    pub stopped_early: u64,
    /// Completed trials with no administered dose meeting the safety rule.
    pub no_selection: u64,
    pub selections: Vec<u64>,
    pub patients: Vec<u64>,
    pub dlts: Vec<u64>,
}

impl CellTally {
    fn empty(scenario: &Scenario, procedure: ProcedureId, nd: usize) -> Self {
        CellTally {
            scenario: scenario.name.clone(),
            mtd_index: scenario.mtd_index,
            procedure,
            n_replicates: 0,
            stopped_early: 0,
            no_selection: 0,
            selections: vec![0; nd],
            patients: vec![0; nd],
            dlts: vec![0; nd],
        }
    }

    fn add(&mut self, r: &TrialResult) {
        self.n_replicates += 1;
        if r.stopped_early {
            self.stopped_early += 1;
        } else if let Some(i) = r.selected {
            self.selections[i] += 1;
        } else {
            self.no_selection += 1;
        }
        for i in 0..self.patients.len() {
            self.patients[i] += r.patients[i] as u64;
            self.dlts[i] += r.dlts[i] as u64;
        }
    }

    fn pct(&self, k: u64) -> f64 {
        100.0 * k as f64 / self.n_replicates.max(1) as f64
    }

    pub fn pct_stopped_early(&self) -> f64 {
        self.pct(self.stopped_early)
    }

    pub fn pct_no_selection(&self) -> f64 {
        self.pct(self.no_selection)
    }

    pub fn pct_selecting(&self) -> Vec<f64> {
        self.selections.iter().map(|k| self.pct(*k)).collect()
    }

    /// Percentage of correct selection.
    pub fn pcs(&self) -> f64 {
        self.pct(self.selections[self.mtd_index])
    }

    pub fn mean_patients(&self) -> Vec<f64> {
        let n = self.n_replicates.max(1) as f64;
        self.patients.iter().map(|k| *k as f64 / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub doses: Vec<f64>,
    pub cells: Vec<CellTally>,
}

impl OperatingCharacteristics {
    pub fn cell(&self, scenario: &str, procedure: ProcedureId) -> Option<&CellTally> {
        self.cells.iter().find(|c| c.scenario == scenario && c.procedure == procedure)
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub base: TrialConfig,
    pub utilities: UtilityTable,
    pub n_replicates: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// Runs every scenario × procedure × replicate. Tallies are integer sums, so
/// the result does not depend on the number of threads.
pub fn run_study(
    model: &Arc<MixtureModel>,
    scenarios: &[Scenario],
    procedures: &[ProcedureId],
    cfg: &StudyConfig,
) -> Result<OperatingCharacteristics> {
    if cfg.n_replicates == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    let nd = model.dose_grid.len();
    let tasks: Vec<(usize, usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..procedures.len()).flat_map(move |p| (0..cfg.n_replicates).map(move |r| (s, p, r))))
        .collect();
    let work = || -> Result<Vec<((usize, usize), TrialResult)>> {
        tasks
            .par_iter()
            .map(|&(s, p, r)| {
                let spec = ProcedureSpec::standard(procedures[p], cfg.utilities);
                let seed = replicate_seed(cfg.seed, s, r);
                simulate_trial(model, &scenarios[s], &spec, &cfg.base, seed).map(|(_, res)| ((s, p), res))
            })
            .collect()
    };
    let results = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let mut cells: BTreeMap<(usize, usize), CellTally> = BTreeMap::new();
    for ((s, p), r) in &results {
        cells
            .entry((*s, *p))
            .or_insert_with(|| CellTally::empty(&scenarios[*s], procedures[*p], nd))
            .add(r);
    }
    Ok(OperatingCharacteristics { doses: model.dose_grid.doses.clone(), cells: cells.into_values().collect() })
}

fn dose_label(d: f64) -> String {
    if d.fract() == 0.0 {
        format!("{}", d as i64)
    } else {
        format!("{d}")
    }
}

/// One row of `oc.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcRow {
    pub scenario: String,
    pub procedure: String,
    pub n_replicates: u64,
    pub pct_stopped_early: f64,
    pub pct_no_selection: f64,
    pub pct_selecting: Vec<f64>,
}

fn oc_header(doses: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = ["scenario", "procedure", "n_replicates", "pct_stopped_early", "pct_no_selection"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(doses.iter().map(|d| format!("pct_select_{}", dose_label(*d))));
    h
}

pub fn oc_csv(oc: &OperatingCharacteristics) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(oc_header(&oc.doses)).map_err(csv_err)?;
    for c in &oc.cells {
        let mut rec = vec![
            c.scenario.clone(),
            c.procedure.label().to_string(),
            c.n_replicates.to_string(),
            format!("{:.1}", c.pct_stopped_early()),
            format!("{:.1}", c.pct_no_selection()),
        ];
        rec.extend(c.pct_selecting().iter().map(|v| format!("{v:.1}")));
        w.write_record(rec).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).map_err(|e| Error::Io(e.to_string()))
}

pub fn alloc_csv(oc: &OperatingCharacteristics) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["scenario".to_string(), "procedure".to_string(), "mean_patients_total".to_string()];
    header.extend(oc.doses.iter().map(|d| format!("mean_patients_{}", dose_label(*d))));
    w.write_record(&header).map_err(csv_err)?;
    for c in &oc.cells {
        let m = c.mean_patients();
        let mut rec = vec![c.scenario.clone(), c.procedure.label().to_string(), format!("{:.2}", m.iter().sum::<f64>())];
        rec.extend(m.iter().map(|v| format!("{v:.2}")));
        w.write_record(rec).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).map_err(|e| Error::Io(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn parse_oc_csv(text: &str) -> Result<(Vec<f64>, Vec<OcRow>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    let doses = header
        .iter()
        .filter_map(|h| h.strip_prefix("pct_select_"))
        .map(|d| d.parse::<f64>().map_err(|e| Error::Io(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Io(format!("{s:?}: {e}")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(OcRow {
            scenario: rec[0].to_string(),
            procedure: rec[1].to_string(),
            n_replicates: rec[2].parse().map_err(|e| Error::Io(format!("{e}")))?,
            pct_stopped_early: num(&rec[3])?,
            pct_no_selection: num(&rec[4])?,
            pct_selecting: rec.iter().skip(5).map(num).collect::<Result<_>>()?,
        });
    }
    Ok((doses, rows))
}

#[derive(Serialize)]
struct PlotPanel<'a> {
    scenario: &'a str,
    procedure: &'a str,
    true_mtd_dose: f64,
    stopped_early_pct: f64,
    no_selection_pct: f64,
    selection_pct: Vec<f64>,
    mean_patients: Vec<f64>,
}

pub fn plot_data(oc: &OperatingCharacteristics) -> Result<String> {
    let panels: Vec<PlotPanel> = oc
        .cells
        .iter()
        .map(|c| PlotPanel {
            scenario: &c.scenario,
            procedure: c.procedure.label(),
            true_mtd_dose: oc.doses[c.mtd_index],
            stopped_early_pct: c.pct_stopped_early(),
            no_selection_pct: c.pct_no_selection(),
            selection_pct: c.pct_selecting(),
            mean_patients: c.mean_patients(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&serde_json::json!({ "doses": oc.doses, "panels": panels }))?)
}

/// Writes `oc.csv`, `alloc.csv` and `plotdata.json` into `dir`.
pub fn write_report(oc: &OperatingCharacteristics, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("oc.csv"), oc_csv(oc)?.as_bytes())?;
    write_atomic(&dir.join("alloc.csv"), alloc_csv(oc)?.as_bytes())?;
    write_atomic(&dir.join("plotdata.json"), plot_data(oc)?.as_bytes())
}
