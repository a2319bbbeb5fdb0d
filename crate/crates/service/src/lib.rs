//! HTTP conduct service.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/trials` | study document → session id, prior summary, first dose |
//! | POST | `/trials/{id}/cohorts` | `{dose, outcomes, replay?}` → trace entry, next dose |
//! | GET | `/trials/{id}/whatif?dose=&dlts=&patients=` | hypothetical summary, never stored |
//! | GET | `/trials/{id}` | full session record |
//! | GET | `/trials/{id}/trace` | weight trace |
//! | GET | `/health` | liveness |
//!
//! `POST` requests honour an `Idempotency-Key` header: a retried request
//! with the same key gets the original reply.

pub mod error;
pub mod store;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use preclin_core::animal_prior::BvnParams;
use preclin_core::commensurability::{TraceEntry, WeightTrace};
use preclin_core::config::{PriorSource, ResolvedPrior, StudyFile};
use preclin_core::engine::{Recommendation, Trial, TrialState, TrialStatus};
use preclin_core::inference::{GridSpec, MixtureModel, PosteriorSummary};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::ApiError;
use crate::store::{AuditEntry, SessionRecord, SessionStore, StoredReply};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Upper bound on the synchronous prior fit of `POST /trials`.
    pub fit_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { fit_timeout: Duration::from_secs(120) }
    }
}

pub struct AppState {
    pub store: SessionStore,
    pub config: ServiceConfig,
    /// Resolved priors keyed by the hash of the inputs that determine them.
    fits: Mutex<HashMap<String, ResolvedPrior>>,
    models: Mutex<HashMap<String, Arc<MixtureModel>>>,
}

impl AppState {
    pub fn new(store: SessionStore, config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState { store, config, fits: Mutex::default(), models: Mutex::default() })
    }

    fn model_for(&self, state: &TrialState) -> Result<Arc<MixtureModel>, ApiError> {
        let key = digest(&(&state.grid, &state.informative, &state.weak, state.weak_d_ref, &state.config.grid_spec));
        if let Some(m) = self.models.lock().unwrap().get(&key) {
            return Ok(m.clone());
        }
        let m = Trial::build_model(&state.grid, &state.informative, &state.weak, state.weak_d_ref, &state.config.grid_spec)?;
        self.models.lock().unwrap().insert(key, m.clone());
        Ok(m)
    }

    fn cache_model(&self, m: &Arc<MixtureModel>, informative: &BvnParams, weak: &BvnParams, weak_d_ref: f64, spec: &GridSpec) {
        let key = digest(&(&m.dose_grid, informative, weak, weak_d_ref, spec));
        self.models.lock().unwrap().entry(key).or_insert_with(|| m.clone());
    }

    fn trial(&self, state: TrialState) -> Result<Trial, ApiError> {
        let model = self.model_for(&state)?;
        Ok(Trial::from_state(state, Some(model))?)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/trials", post(create_trial))
        .route("/trials/{id}", get(get_trial))
        .route("/trials/{id}/trace", get(get_trace))
        .route("/trials/{id}/cohorts", post(post_cohort))
        .route("/trials/{id}/whatif", get(whatif))
        .with_state(state)
}

fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(&bytes))
}

fn idempotency_key(headers: &HeaderMap) -> Result<Option<String>, ApiError> {
    match headers.get(IDEMPOTENCY_HEADER) {
        None => Ok(None),
        Some(v) => {
            let k = v.to_str().map_err(|_| ApiError::unprocessable("Idempotency-Key", "must be visible ASCII"))?;
            if k.is_empty() || k.len() > 200 {
                return Err(ApiError::unprocessable("Idempotency-Key", "must be 1-200 characters"));
            }
            Ok(Some(k.to_owned()))
        }
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            ApiError::new(StatusCode::BAD_REQUEST, format!("malformed JSON: {inner}"))
        } else {
            ApiError::unprocessable(if path == "." { "body" } else { &path }, &inner.to_string())
        }
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NextStep {
    Dose { dose_index: usize, dose: f64 },
    Stop,
    Complete { mtd: Option<f64> },
}

fn next_step(trial: &Trial) -> Result<NextStep, ApiError> {
    let grid = &trial.state.grid;
    Ok(match trial.state.status {
        TrialStatus::Enrolling => match trial.recommend_next()? {
            Recommendation::Dose { dose_index } => NextStep::Dose { dose_index, dose: grid.doses[dose_index] },
            Recommendation::Stop => NextStep::Stop,
        },
        TrialStatus::StoppedEarly => NextStep::Stop,
        TrialStatus::Completed => NextStep::Complete { mtd: trial.select_mtd()?.map(|i| grid.doses[i]) },
    })
}

/// Per-dose rows keyed by dose value, alongside the array form.
fn summary_view(s: &PosteriorSummary) -> Value {
    let by_dose: serde_json::Map<String, Value> = s
        .doses
        .iter()
        .enumerate()
        .map(|(i, d)| {
            (
                d.to_string(),
                json!({
                    "median": s.median[i],
                    "pr_under": s.pr_under[i],
                    "pr_target": s.pr_target[i],
                    "pr_over": s.pr_over[i],
                    "pr_dlt": s.pr_dlt[i],
                }),
            )
        })
        .collect();
    json!({ "arrays": s, "by_dose": by_dose, "posterior_weight": s.posterior_weight })
}

/// Validates section by section so 422s name the offending field.
fn validate_study(study: &StudyFile) -> Result<(), ApiError> {
    if study.prior.source == PriorSource::Record {
        return Err(ApiError::unprocessable(
            "prior.source",
            "\"record\" reads a server-side file and is not accepted over HTTP; send the parameters with source \"params\"",
        ));
    }
    study.grid.validate().map_err(|e| ApiError::field("grid", e))?;
    study.trial.validate().map_err(|e| ApiError::field("trial", e))?;
    if let Some(animal) = &study.animal {
        animal.validate().map_err(|e| ApiError::field("animal.arms", e))?;
    }
    study.validate().map_err(|e| ApiError::field("study", e))
}

fn create_reply(rec: &SessionRecord, trial: &Trial, fit_delta: Option<f64>) -> Result<Value, ApiError> {
    let s = &trial.state;
    // Start-dose evidence: Pr(p_i < 0.1) under the animal-informed component.
    let animal = trial.model().posterior(1.0, &vec![(0, 0); s.grid.len()])?;
    let below: Vec<f64> = animal.pr_at_least(0.1).iter().map(|q| 1.0 - q).collect();
    Ok(json!({
        "session_id": rec.session_id,
        "status": s.status,
        "next": next_step(trial)?,
        "prior": {
            "informative": s.informative,
            "weak": s.weak,
            "d_ref": s.grid.d_ref,
            "weak_d_ref": s.weak_d_ref,
            "fit_delta": fit_delta,
            "predictive_pr_dlt": s.prior_pr_dlt,
            "pr_risk_below_0_1": below,
        },
        "summary": summary_view(&trial.summary()),
    }))
}

async fn create_trial(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let key = idempotency_key(&headers)?;
    let study: StudyFile = parse_body(&body)?;
    validate_study(&study)?;

    // Serialize creates that share a key so a retry racing the original waits for it.
    let _guard = match &key {
        Some(k) => Some(app.store.lock(&format!("create:{k}")).lock_owned().await),
        None => None,
    };
    let request = digest(&study);
    if let Some(k) = &key {
        if let Some(id) = app.store.session_for_key(k) {
            let rec = app.store.load(&id)?.ok_or_else(|| ApiError::internal(format!("session {id} vanished")))?;
            let reply = rec.replies.get(&format!("create:{k}")).cloned().ok_or_else(|| ApiError::internal("missing stored reply"))?;
            if reply.request != request {
                return Err(ApiError::unprocessable("Idempotency-Key", "already used for a different request"));
            }
            return Ok((StatusCode::OK, Json(reply.body)).into_response());
        }
    }

    let fit_key = digest(&(&study.grid, &study.animal, &study.prior));
    let cached = app.fits.lock().unwrap().get(&fit_key).cloned();
    let prior = match cached {
        Some(p) => p,
        None => {
            let s = study.clone();
            let job = blocking(move || s.resolve_prior().map_err(|e| ApiError::field("animal", e)));
            let p = tokio::time::timeout(app.config.fit_timeout, job)
                .await
                .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "prior fit timed out"))??;
            app.fits.lock().unwrap().insert(fit_key, p.clone());
            p
        }
    };

    let app2 = app.clone();
    let key2 = key.clone();
    let body = blocking(move || {
        let model = study.build_model(&prior.params)?;
        let trial = Trial::new(model.clone(), study.trial.clone()).map_err(|e| ApiError::field("trial", e))?;
        let s = &trial.state;
        app2.cache_model(&model, &s.informative, &s.weak, s.weak_d_ref, &s.config.grid_spec);

        let mut rec = SessionRecord::new(uuid::Uuid::new_v4().to_string(), study, trial.state.clone());
        let fit_delta = prior.fit.as_ref().map(|f| f.delta);
        let body = create_reply(&rec, &trial, fit_delta)?;
        rec.log("create", key2.as_deref(), json!({ "prior_fit_delta": fit_delta, "next": body["next"] }));
        if let Some(k) = &key2 {
            rec.replies.insert(format!("create:{k}"), StoredReply { request, status: 201, body: body.clone() });
        }
        app2.store.save(&rec)?;
        if let Some(k) = &key2 {
            app2.store.remember_key(k, &rec.session_id);
        }
        tracing::info!(session = %rec.session_id, "created trial");
        Ok(body)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn load(app: &AppState, id: &str) -> Result<SessionRecord, ApiError> {
    app.store.load(id)?.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
}

fn ensure_enrolling(trial: &Trial) -> Result<(), ApiError> {
    match trial.state.status {
        TrialStatus::Enrolling => Ok(()),
        status => Err(ApiError::new(StatusCode::GONE, format!("trial is no longer enrolling ({status:?})"))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortRequest {
    /// Administered dose (mg/m²).
    pub dose: f64,
    /// Per-patient outcomes, 1 = DLT.
    pub outcomes: Vec<u8>,
    /// Accept a dose other than the recommended one.
    #[serde(default)]
    pub replay: bool,
}

#[derive(Debug, Serialize)]
struct CohortReply<'a> {
    session_id: &'a str,
    entry: TraceEntry,
    status: TrialStatus,
    next: NextStep,
    summary: Value,
}

async fn post_cohort(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let key = idempotency_key(&headers)?;
    let req: CohortRequest = parse_body(&body)?;
    let _guard = app.store.lock(&id).lock_owned().await;
    let app2 = app.clone();
    let (status, body) = blocking(move || {
        let mut rec = load(&app2, &id)?;
        let request = digest(&req);
        if let Some(k) = &key {
            if let Some(r) = rec.replies.get(k) {
                if r.request != request {
                    return Err(ApiError::unprocessable("Idempotency-Key", "already used for a different request"));
                }
                return Ok((r.status, r.body.clone()));
            }
        }
        let mut trial = app2.trial(rec.trial.clone())?;
        ensure_enrolling(&trial)?;
        let idx = trial
            .state
            .grid
            .index_of(req.dose)
            .ok_or_else(|| ApiError::unprocessable("dose", &format!("{} mg/m² is not on the dose grid", req.dose)))?;
        if req.outcomes.iter().any(|&o| o > 1) {
            return Err(ApiError::unprocessable("outcomes", "each outcome must be 0 or 1"));
        }
        let outcomes: Vec<bool> = req.outcomes.iter().map(|&o| o == 1).collect();
        let entry = if req.replay { trial.replay_cohort(idx, outcomes) } else { trial.record_cohort(idx, outcomes) }
            .map_err(|e| ApiError::field("outcomes", e))?;

        let reply = CohortReply {
            session_id: &rec.session_id,
            entry,
            status: trial.state.status,
            next: next_step(&trial)?,
            summary: summary_view(&trial.summary()),
        };
        let body = serde_json::to_value(&reply).map_err(|e| ApiError::internal(e.to_string()))?;
        rec.trial = trial.state;
        rec.log("record_cohort", key.as_deref(), json!({ "request": req, "entry": entry, "next": body["next"] }));
        if let Some(k) = &key {
            rec.replies.insert(k.clone(), StoredReply { request, status: 200, body: body.clone() });
        }
        // Persisted before anyone hears about it.
        app2.store.save(&rec)?;
        Ok((200, body))
    })
    .await?;
    Ok((StatusCode::from_u16(status).unwrap_or(StatusCode::OK), Json(body)).into_response())
}

#[derive(Debug, Deserialize)]
pub struct WhatIfQuery {
    pub dose: f64,
    pub dlts: usize,
    /// Defaults to the cohort size.
    pub patients: Option<usize>,
}

async fn whatif(State(app): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<WhatIfQuery>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let rec = load(&app, &id)?;
        let trial = app.trial(rec.trial)?;
        ensure_enrolling(&trial)?;
        let idx = trial
            .state
            .grid
            .index_of(q.dose)
            .ok_or_else(|| ApiError::unprocessable("dose", &format!("{} mg/m² is not on the dose grid", q.dose)))?;
        let patients = q.patients.unwrap_or(trial.state.config.cohort_size);
        if q.dlts > patients {
            return Err(ApiError::unprocessable("dlts", "cannot exceed the number of patients"));
        }
        let w = trial.whatif(idx, patients, q.dlts).map_err(|e| ApiError::field("dlts", e))?;
        let next = match w.recommendation {
            Recommendation::Dose { dose_index } => NextStep::Dose { dose_index, dose: trial.state.grid.doses[dose_index] },
            Recommendation::Stop => NextStep::Stop,
        };
        Ok(Json(json!({
            "non_binding": true,
            "session_id": id,
            "dose": q.dose,
            "patients": patients,
            "dlts": q.dlts,
            "entry": w.entry,
            "status": w.status,
            "next": next,
            "summary": summary_view(&w.summary),
        })))
    })
    .await
}

#[derive(Debug, Serialize)]
struct TrialView<'a> {
    session_id: &'a str,
    created_at_ms: u64,
    updated_at_ms: u64,
    status: TrialStatus,
    next: NextStep,
    summary: Value,
    study: &'a StudyFile,
    state: &'a TrialState,
    audit: &'a [AuditEntry],
}

async fn get_trial(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let rec = load(&app, &id)?;
        let trial = app.trial(rec.trial.clone())?;
        let view = TrialView {
            session_id: &rec.session_id,
            created_at_ms: rec.created_at_ms,
            updated_at_ms: rec.updated_at_ms,
            status: trial.state.status,
            next: next_step(&trial)?,
            summary: summary_view(&trial.summary()),
            study: &rec.study,
            state: &rec.trial,
            audit: &rec.audit,
        };
        Ok(Json(serde_json::to_value(&view).map_err(|e| ApiError::internal(e.to_string()))?))
    })
    .await
}

async fn get_trace(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<WeightTrace>, ApiError> {
    let rec = load(&app, &id)?;
    Ok(Json(rec.trial.trace))
}
