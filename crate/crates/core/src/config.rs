//! Declarative study files (TOML).
//!
//! ```toml
//! [grid]
//! doses = [2, 4, 8, 16, 22, 28, 40, 54, 70]
//! d_ref = 28
//! gamma = 0.25
//!
//! [animal]
//! species_factor = 20
//! arms = [
//!   { animal_dose = 0.1, n_toxic = 1, n_nontoxic = 29 },
//!   { animal_dose = 2.7, n_toxic = 17, n_nontoxic = 13 },
//! ]
//!
//! [prior]
//! source = "fit"            # fit | reference | params | record
//!
//! [trial]
//! start_dose = 4
//!
//! [[scenarios]]
//! name = "flat"
//! true_risks = [0.01, 0.02, 0.03, 0.05, 0.08, 0.1, 0.15, 0.2, 0.25]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::animal_prior::{
    beta_pseudo_priors, fit_bvn, percentile_table, weak_reference_dose, weakly_informative_prior,
    AnimalStudy, BvnParams, FitOptions, FitResult, PriorRecord, DEFAULT_COVARIANCE_INFLATION,
    DEFAULT_LEVELS, DOG_REFERENCE_PRIOR,
};
use crate::dose_model::{DoseGrid, Scenario};
use crate::engine::{Trial, TrialConfig};
use crate::error::{Error, Result};
use crate::inference::MixtureModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// Percentile-match the animal study.
    #[default]
    Fit,
    /// The published dog-study summary (AUY922 grid only).
    Reference,
    /// Explicit `params`.
    Params,
    /// A saved prior record at `record`.
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub source: PriorSource,
    pub params: Option<BvnParams>,
    pub record: Option<PathBuf>,
    /// Covariance multiplier for the informative component.
    pub covariance_inflation: f64,
    /// Reference dose of the weak component; defaults to the grid dose the
    /// informative prior deems closest to the target.
    pub weak_d_ref: Option<f64>,
    pub weak_covariance_inflation: f64,
    pub fit_starts: usize,
    pub fit_seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            source: PriorSource::Fit,
            params: None,
            record: None,
            covariance_inflation: DEFAULT_COVARIANCE_INFLATION,
            weak_d_ref: None,
            weak_covariance_inflation: 1.0,
            fit_starts: FitOptions::default().starts,
            fit_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub true_risks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub grid: DoseGrid,
    #[serde(default)]
    pub animal: Option<AnimalStudy>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub trial: TrialConfig,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
}

/// Informative prior as resolved from a [`PriorConfig`], before inflation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPrior {
    pub params: BvnParams,
    pub fit: Option<FitResult>,
}

impl StudyFile {
    /// The 60-dog study on the AUY922 grid with the published prior summary,
    /// starting at 4 mg/m².
    pub fn dog_reference() -> Self {
        StudyFile {
            grid: DoseGrid::auy922(),
            animal: Some(AnimalStudy::dog_example()),
            prior: PriorConfig { source: PriorSource::Reference, ..PriorConfig::default() },
            trial: TrialConfig { start_dose: Some(4.0), ..TrialConfig::default() },
            scenarios: Vec::new(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: StudyFile = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.trial.validate()?;
        let p = &self.prior;
        for (name, v) in [("covariance_inflation", p.covariance_inflation), ("weak_covariance_inflation", p.weak_covariance_inflation)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(d) = p.weak_d_ref {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Config("weak_d_ref must be a positive dose".into()));
            }
        }
        match p.source {
            PriorSource::Fit => {
                let animal = self.animal.as_ref().ok_or_else(|| Error::Config("prior.source = \"fit\" needs an [animal] table".into()))?;
                animal.validate()?;
            }
            PriorSource::Reference => {
                if self.grid != DoseGrid::auy922() {
                    return Err(Error::Config("the reference prior is only defined on the AUY922 grid".into()));
                }
            }
            PriorSource::Params => {
                p.params.ok_or_else(|| Error::Config("prior.source = \"params\" needs prior.params".into()))?.validate()?;
            }
            PriorSource::Record => {
                if p.record.is_none() {
                    return Err(Error::Config("prior.source = \"record\" needs prior.record".into()));
                }
            }
        }
        if let Some(d) = self.trial.start_dose {
            if self.grid.index_of(d).is_none() {
                return Err(Error::Config(format!("start dose {d} is not on the grid")));
            }
        }
        self.scenarios()?;
        Ok(())
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        build_scenarios(&self.scenarios, &self.grid)
    }

    /// Resolves the informative prior, running the percentile fit if asked to.
    pub fn resolve_prior(&self) -> Result<ResolvedPrior> {
        match self.prior.source {
            PriorSource::Fit => {
                let animal = self.animal.as_ref().ok_or_else(|| Error::Config("missing [animal] table".into()))?;
                let fit = fit_animal_prior(animal, &self.grid, &self.fit_options())?;
                Ok(ResolvedPrior { params: fit.params, fit: Some(fit) })
            }
            PriorSource::Reference => Ok(ResolvedPrior { params: DOG_REFERENCE_PRIOR, fit: None }),
            PriorSource::Params => Ok(ResolvedPrior {
                params: self.prior.params.ok_or_else(|| Error::Config("missing prior.params".into()))?,
                fit: None,
            }),
            PriorSource::Record => {
                let path = self.prior.record.as_ref().ok_or_else(|| Error::Config("missing prior.record".into()))?;
                let rec = PriorRecord::load(path)?;
                if rec.d_ref != self.grid.d_ref {
                    return Err(Error::Config(format!(
                        "prior record uses d_ref {} but the grid uses {}",
                        rec.d_ref, self.grid.d_ref
                    )));
                }
                Ok(ResolvedPrior { params: rec.params()?, fit: None })
            }
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { starts: self.prior.fit_starts, seed: self.prior.fit_seed, ..FitOptions::default() }
    }

    /// Builds the two-component model from an already resolved prior.
    pub fn build_model(&self, prior: &BvnParams) -> Result<Arc<MixtureModel>> {
        let p = &self.prior;
        let weak_d_ref = p.weak_d_ref.unwrap_or_else(|| weak_reference_dose(&self.grid, prior));
        Trial::build_model(
            &self.grid,
            &prior.inflated(p.covariance_inflation),
            &weakly_informative_prior(&self.grid).inflated(p.weak_covariance_inflation),
            weak_d_ref,
            &self.trial.grid_spec,
        )
    }
}

/// Percentile-matches the animal study on `grid`.
pub fn fit_animal_prior(animal: &AnimalStudy, grid: &DoseGrid, opts: &FitOptions) -> Result<FitResult> {
    let arms = beta_pseudo_priors(animal)?;
    let table = percentile_table(grid, &arms, &DEFAULT_LEVELS)?;
    fit_bvn(&table, grid, opts)
}

pub fn build_scenarios(specs: &[ScenarioSpec], grid: &DoseGrid) -> Result<Vec<Scenario>> {
    specs
        .iter()
        .map(|s| {
            if s.true_risks.len() != grid.len() {
                return Err(Error::Config(format!(
                    "scenario {:?} has {} risks for {} doses",
                    s.name,
                    s.true_risks.len(),
                    grid.len()
                )));
            }
            Scenario::new(s.name.clone(), s.true_risks.clone(), grid.gamma)
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenarios: Vec<ScenarioSpec>,
}

/// Reads a file holding only `[[scenarios]]` tables.
pub fn load_scenarios(path: &Path, grid: &DoseGrid) -> Result<Vec<Scenario>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    build_scenarios(&file.scenarios, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOG: &str = r#"
[grid]
doses = [2, 4, 8, 16, 22, 28, 40, 54, 70]
d_ref = 28
gamma = 0.25

[animal]
species_factor = 20
arms = [
  { animal_dose = 0.1, n_toxic = 1, n_nontoxic = 29 },
  { animal_dose = 2.7, n_toxic = 17, n_nontoxic = 13 },
]

[prior]
source = "reference"

[trial]
start_dose = 4
max_cohorts = 11

[[scenarios]]
name = "safe"
true_risks = [0.01, 0.02, 0.03, 0.05, 0.08, 0.1, 0.15, 0.2, 0.25]
"#;

    #[test]
    fn parses_dog_file() {
        let f = StudyFile::from_toml_str(DOG).unwrap();
        assert_eq!(f.grid, DoseGrid::auy922());
        assert_eq!(f.animal.as_ref().unwrap().arms.len(), 2);
        assert_eq!(f.trial.max_cohorts, 11);
        assert_eq!(f.trial.cohort_size, 3);
        assert_eq!(f.scenarios().unwrap()[0].mtd_index, 8);
        assert_eq!(f.resolve_prior().unwrap().params, DOG_REFERENCE_PRIOR);
    }

    #[test]
    fn round_trips_through_toml() {
        let f = StudyFile::from_toml_str(DOG).unwrap();
        let back = StudyFile::from_toml_str(&f.to_toml_string().unwrap()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn rejects_bad_files() {
        let bad = DOG.replace("source = \"reference\"", "source = \"params\"");
        assert!(matches!(StudyFile::from_toml_str(&bad), Err(Error::Config(_))));
        let bad = DOG.replace("start_dose = 4", "start_dose = 5");
        assert!(StudyFile::from_toml_str(&bad).is_err());
        let bad = DOG.replace("0.2, 0.25]", "0.2]");
        assert!(StudyFile::from_toml_str(&bad).is_err());
        let bad = DOG.replace("[trial]", "[trial]\nbogus = 1");
        assert!(StudyFile::from_toml_str(&bad).is_err());
    }

    #[test]
    fn default_weak_reference_is_sixteen() {
        let f = StudyFile::from_toml_str(DOG).unwrap();
        let m = f.build_model(&DOG_REFERENCE_PRIOR).unwrap();
        assert_eq!(m.weak.d_ref, 16.0);
        assert_eq!(m.informative.d_ref, 28.0);
        assert!((m.informative.prior.s11 - 0.302).abs() < 1e-12);
    }
}
