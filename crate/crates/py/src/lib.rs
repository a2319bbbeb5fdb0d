//! Python bindings. Structured results cross the boundary as plain
//! dicts/lists (via JSON), so they mirror the service and CLI outputs.

use std::path::PathBuf;
use std::sync::Arc;

use preclin_core::animal_prior::PriorRecord;
use preclin_core::config::{fit_animal_prior, load_scenarios, StudyFile};
use preclin_core::dose_model::scenario_table;
use preclin_core::engine::{load_session, save_session, session_from_json, session_to_json, Recommendation, Trial, TrialStatus};
use preclin_core::inference::MixtureModel;
use preclin_core::sim::{oc_csv, parse_procedures, run_study, StudyConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(preclin, PreclinError, PyValueError, "Raised for invalid studies, cohorts and trial states.");

fn err(e: preclin_core::Error) -> PyErr {
    PreclinError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PreclinError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A study definition: dose grid, animal data, prior and trial settings.
#[pyclass(name = "Study", module = "preclin", skip_from_py_object)]
#[derive(Clone)]
struct PyStudy {
    inner: StudyFile,
}

#[pymethods]
impl PyStudy {
    /// The 60-dog study on the AUY922 grid with the published prior summary.
    #[staticmethod]
    fn dog_reference() -> Self {
        PyStudy { inner: StudyFile::dog_reference() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyStudy { inner: StudyFile::from_toml_str(text).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyStudy { inner: StudyFile::load(&path).map_err(err)? })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(err)
    }

    #[getter]
    fn doses(&self) -> Vec<f64> {
        self.inner.grid.doses.clone()
    }

    /// Percentile-matches the animal study; returns the prior record as a dict.
    fn fit_prior<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let study = &self.inner;
        let animal = study.animal.clone().ok_or_else(|| PreclinError::new_err("the study has no animal data"))?;
        let grid = study.grid.clone();
        let opts = study.fit_options();
        let fit = py.detach(move || fit_animal_prior(&animal, &grid, &opts)).map_err(err)?;
        to_py(py, &PriorRecord::from_fit(&fit))
    }

    /// Operating characteristics as `oc.csv` text. Uses the study's
    /// scenarios, a scenarios file, or the built-in AUY922 table.
    #[pyo3(signature = (procedures = "A,B,C,D,E", reps = 1000, seed = 0, threads = None, scenarios = None))]
    fn simulate(
        &self,
        py: Python<'_>,
        procedures: &str,
        reps: usize,
        seed: u64,
        threads: Option<usize>,
        scenarios: Option<PathBuf>,
    ) -> PyResult<String> {
        let study = self.inner.clone();
        let procs = parse_procedures(procedures).map_err(err)?;
        py.detach(move || {
            let scen = match scenarios {
                Some(p) => load_scenarios(&p, &study.grid)?,
                None if !study.scenarios.is_empty() => study.scenarios()?,
                None => scenario_table(),
            };
            let prior = study.resolve_prior()?;
            let model = study.build_model(&prior.params)?;
            let cfg = StudyConfig {
                base: study.trial.clone(),
                utilities: study.trial.utilities,
                n_replicates: reps,
                seed,
                threads,
            };
            oc_csv(&run_study(&model, &scen, &procs, &cfg)?)
        })
        .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Study(doses={:?}, prior={:?})", self.inner.grid.doses, self.inner.prior.source)
    }
}

/// A live trial session.
#[pyclass(name = "Trial", module = "preclin")]
struct PyTrial {
    inner: Trial,
}

fn recommendation(trial: &Trial) -> Option<f64> {
    match (trial.state.status, trial.recommend_next()) {
        (TrialStatus::Enrolling, Ok(Recommendation::Dose { dose_index })) => Some(trial.state.grid.doses[dose_index]),
        _ => None,
    }
}

impl PyTrial {
    fn index(&self, dose: f64) -> PyResult<usize> {
        self.inner.state.grid.index_of(dose).ok_or_else(|| PreclinError::new_err(format!("{dose} mg/m² is not on the dose grid")))
    }
}

#[pymethods]
impl PyTrial {
    #[new]
    fn new(py: Python<'_>, study: &PyStudy) -> PyResult<Self> {
        let study = study.inner.clone();
        let trial = py
            .detach(move || {
                let prior = study.resolve_prior()?;
                let model: Arc<MixtureModel> = study.build_model(&prior.params)?;
                Trial::new(model, study.trial)
            })
            .map_err(err)?;
        Ok(PyTrial { inner: trial })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let state = session_from_json(text).map_err(err)?;
        Ok(PyTrial { inner: Trial::from_state(state, None).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let state = load_session(&path).map_err(err)?;
        Ok(PyTrial { inner: Trial::from_state(state, None).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        session_to_json(&self.inner.state).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_session(&self.inner.state, &path).map_err(err)
    }

    /// `"enrolling"`, `"stopped_early"` or `"completed"`.
    #[getter]
    fn status(&self) -> PyResult<String> {
        serde_json::to_value(self.inner.state.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .ok_or_else(|| PreclinError::new_err("unserializable status"))
    }

    /// Current prior mixture weight.
    #[getter]
    fn weight(&self) -> f64 {
        self.inner.state.weight
    }

    #[getter]
    fn cohorts(&self) -> usize {
        self.inner.state.history.len()
    }

    /// Dose for the next cohort, or `None` once the trial has stopped or completed.
    fn recommend(&self) -> Option<f64> {
        recommendation(&self.inner)
    }

    /// Records a cohort (outcomes 1 = DLT) and returns its weight-trace entry.
    #[pyo3(signature = (dose, outcomes, replay = false))]
    fn record<'py>(&mut self, py: Python<'py>, dose: f64, outcomes: Vec<u8>, replay: bool) -> PyResult<Bound<'py, PyAny>> {
        let idx = self.index(dose)?;
        if outcomes.iter().any(|&o| o > 1) {
            return Err(PreclinError::new_err("outcomes must be 0 or 1"));
        }
        let outcomes: Vec<bool> = outcomes.into_iter().map(|o| o == 1).collect();
        let trial = &mut self.inner;
        let entry = py
            .detach(|| if replay { trial.replay_cohort(idx, outcomes) } else { trial.record_cohort(idx, outcomes) })
            .map_err(err)?;
        to_py(py, &entry)
    }

    /// Hypothetical result of one more cohort; the trial is not changed.
    #[pyo3(signature = (dose, dlts, patients = None))]
    fn whatif<'py>(&self, py: Python<'py>, dose: f64, dlts: usize, patients: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
        let idx = self.index(dose)?;
        let n = patients.unwrap_or(self.inner.state.config.cohort_size);
        let trial = &self.inner;
        let w = py.detach(|| trial.whatif(idx, n, dlts)).map_err(err)?;
        to_py(py, &w)
    }

    /// Per-dose posterior summary.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.summary())
    }

    fn trace<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.state.trace.entries)
    }

    /// Selected MTD in mg/m², `None` if none qualifies or the trial stopped early.
    fn mtd(&self) -> PyResult<Option<f64>> {
        Ok(self.inner.select_mtd().map_err(err)?.map(|i| self.inner.state.grid.doses[i]))
    }

    fn __repr__(&self) -> String {
        format!("Trial(cohorts={}, status={:?}, weight={:.3})", self.inner.state.history.len(), self.inner.state.status, self.inner.state.weight)
    }
}

#[pymodule]
fn preclin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStudy>()?;
    m.add_class::<PyTrial>()?;
    m.add("PreclinError", m.py().get_type::<PreclinError>())?;
    Ok(())
}
