//! HTTP service for elicitation experiments and batch annotation.
//!
//! Each experiment shows a participant its scenes one by one. A submission is
//! annotated, checked against the current scene, and the participant either
//! moves on (unique verdict, or an override after two failed attempts) or is
//! asked to rephrase. Everything that changes a session is appended to
//! `<data_dir>/<experiment>/sessions.jsonl`; accepted responses go to
//! `responses.jsonl`. Both logs are replayed on startup.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::load_corpus;
use crate::domain::{DomainSchema, Property, Scene, SceneObject};
use crate::feedback::{check, FeedbackVerdict, Status};
use crate::lexicon::{Language, MappingTable};
use crate::parser::{annotate_text, AnnotationResult};

pub const DEFAULT_PORT: u16 = 8080;
/// Attempts a participant must make on a scene before an override is honoured.
pub const OVERRIDE_AFTER: usize = 2;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown lexicon `{0}`")]
    UnknownLexicon(String),
    #[error("session `{0}` is closed")]
    Closed(String),
    #[error("session `{0}` has no trials left")]
    Finished(String),
    #[error("empty submission")]
    EmptySubmission,
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Store { path: PathBuf, message: String },
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownExperiment(_) | ServiceError::UnknownSession(_) | ServiceError::UnknownLexicon(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::Closed(_) => StatusCode::GONE,
            ServiceError::Finished(_) => StatusCode::CONFLICT,
            ServiceError::EmptySubmission => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Config(_) | ServiceError::Store { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn retryable(&self) -> bool {
        matches!(self, ServiceError::EmptySubmission)
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    retryable: bool,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.to_string(),
            retryable: self.retryable(),
        };
        (self.status(), Json(body)).into_response()
    }
}

fn store_err(path: &Path) -> impl Fn(std::io::Error) -> ServiceError + '_ {
    move |e| ServiceError::Store {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconConfig {
    pub path: PathBuf,
    /// JSON file holding the domain schema the lexicon is written for.
    pub schema: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: String,
    /// Corpus file whose scenes are shown.
    pub scenes: PathBuf,
    /// Scene ids to show; all scenes of the corpus when absent.
    #[serde(default)]
    pub trials: Option<Vec<String>>,
    pub lexicon: String,
    pub language: Language,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_idle_timeout")]
    pub idle_timeout_secs: u64,
}

fn default_idle_timeout() -> u64 {
    1800
}

fn default_host() -> String {
    "127.0.0.1".to_string()
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    pub data_dir: PathBuf,
    #[serde(default)]
    pub lexicons: BTreeMap<String, LexiconConfig>,
    #[serde(default)]
    pub experiments: Vec<ExperimentConfig>,
}

impl ServiceConfig {
    /// Reads a config file. Relative paths are taken from the file's directory;
    /// `REFANNO_PORT` and `REFANNO_DATA_DIR` override the file.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ServiceConfig =
            serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.data_dir);
        for l in cfg.lexicons.values_mut() {
            rebase(&mut l.path);
            rebase(&mut l.schema);
        }
        for e in &mut cfg.experiments {
            rebase(&mut e.scenes);
        }
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(port) = var("REFANNO_PORT") {
            self.port = port
                .parse()
                .map_err(|_| ServiceError::Config(format!("REFANNO_PORT: not a port number: `{port}`")))?;
        }
        if let Some(dir) = var("REFANNO_DATA_DIR") {
            self.data_dir = PathBuf::from(dir);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub scene_id: String,
    pub text: String,
    pub verdict: FeedbackVerdict,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub experiment_id: String,
    pub session_id: String,
    pub participant_id: String,
    pub scene_id: String,
    pub language: Language,
    pub text: String,
    pub annotation: AnnotationResult,
    pub verdict: FeedbackVerdict,
    pub attempts: usize,
    pub overridden: bool,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum SessionEvent {
    Started {
        session_id: String,
        participant_id: String,
        trial_order: Vec<String>,
        at: DateTime<Utc>,
    },
    Attempted {
        session_id: String,
        attempt: Attempt,
    },
    Expired {
        session_id: String,
        at: DateTime<Utc>,
    },
}

/// One participant's run through an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSession {
    pub session_id: String,
    pub experiment_id: String,
    pub participant_id: String,
    pub trial_order: Vec<String>,
    pub cursor: usize,
    pub attempts: Vec<Attempt>,
    pub closed: bool,
    #[serde(skip)]
    last_active: DateTime<Utc>,
}

impl ExperimentSession {
    pub fn current_scene_id(&self) -> Option<&str> {
        self.trial_order.get(self.cursor).map(String::as_str)
    }

    /// Attempts made on the current scene.
    pub fn current_attempts(&self) -> usize {
        match self.current_scene_id() {
            Some(id) => self.attempts.iter().filter(|a| a.scene_id == id).count(),
            None => 0,
        }
    }

    pub fn done(&self) -> bool {
        self.cursor >= self.trial_order.len()
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(store_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(store_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            // A torn final line from a crash mid-append is dropped.
            Err(e) => tracing::warn!(path = %path.display(), line = i + 1, "skipping unreadable record: {e}"),
        }
    }
    Ok(out)
}

/// Append-only record logs of one experiment.
struct Store {
    sessions_log: PathBuf,
    responses_log: PathBuf,
    persisted: HashSet<(String, String)>,
}

impl Store {
    fn append(path: &Path, record: &impl Serialize) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(store_err(path))?;
        f.write_all(line.as_bytes()).map_err(store_err(path))?;
        f.sync_data().map_err(store_err(path))
    }

    fn log_event(&self, event: &SessionEvent) -> Result<(), ServiceError> {
        Self::append(&self.sessions_log, event)
    }

    /// Writes `response` unless one already exists for its session and scene.
    fn persist(&mut self, response: &StoredResponse) -> Result<bool, ServiceError> {
        let key = (response.session_id.clone(), response.scene_id.clone());
        if self.persisted.contains(&key) {
            return Ok(false);
        }
        Self::append(&self.responses_log, response)?;
        self.persisted.insert(key);
        Ok(true)
    }
}

// ---------------------------------------------------------------------------
// Service

struct Experiment {
    config: ExperimentConfig,
    schema: DomainSchema,
    scenes: HashMap<String, Scene>,
    trials: Vec<String>,
    lexicon: Arc<MappingTable>,
    store: Mutex<Store>,
}

struct LoadedLexicon {
    table: Arc<MappingTable>,
    schema: DomainSchema,
}

pub struct Service {
    experiments: HashMap<String, Experiment>,
    lexicons: HashMap<String, LoadedLexicon>,
    sessions: RwLock<HashMap<String, Arc<Mutex<ExperimentSession>>>>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Presentation order of `trials` for one participant.
pub fn trial_order(trials: &[String], seed: u64, participant_id: &str) -> Vec<String> {
    let mut order = trials.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ fnv1a(participant_id)));
    order
}

fn load_schema(path: &Path) -> Result<DomainSchema, ServiceError> {
    let text = fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
    let schema: DomainSchema =
        serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
    let violations = schema.validate();
    if let Some(v) = violations.first() {
        return Err(ServiceError::Config(format!("{}: {v}", path.display())));
    }
    Ok(schema)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub colour: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPayload {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    pub is_target: bool,
    pub properties: Vec<Property>,
    pub geometry: Geometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePayload {
    pub id: String,
    pub target_id: String,
    pub objects: Vec<ObjectPayload>,
}

const VERTICAL: [&str; 4] = ["above", "on", "on-top-of", "on_top_of"];

/// Scene with drawing hints. Objects stand on one row; an object that is
/// above or on another is drawn over it.
pub fn scene_payload(scene: &Scene, schema: &DomainSchema) -> ScenePayload {
    let value = |o: &SceneObject, attr: &str| o.properties.values_of(attr).next().map(str::to_string);
    let mut positions: HashMap<&str, (f64, f64)> = scene
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.id.as_str(), (1.0 + 2.0 * i as f64, 1.0)))
        .collect();
    for o in &scene.objects {
        let support = o
            .properties
            .iter()
            .filter(|p| VERTICAL.contains(&p.attribute.as_str()))
            .find_map(|p| scene.resolve(&p.value))
            .filter(|s| s.id != o.id);
        if let Some(s) = support {
            let (x, y) = positions[s.id.as_str()];
            positions.insert(&o.id, (x, y + 1.5));
        }
    }
    ScenePayload {
        id: scene.id.clone(),
        target_id: scene.target_id.clone(),
        objects: scene
            .objects
            .iter()
            .map(|o| {
                let (x, y) = positions[o.id.as_str()];
                ObjectPayload {
                    id: o.id.clone(),
                    role: o.role.clone(),
                    is_target: o.id == scene.target_id,
                    properties: o.properties.iter().cloned().collect(),
                    geometry: Geometry {
                        shape: value(o, &schema.type_attribute),
                        colour: value(o, "colour").or_else(|| value(o, "color")),
                        size: value(o, "size"),
                        x,
                        y,
                    },
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartRequest {
    pub experiment_id: String,
    pub participant_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub text: String,
    #[serde(default, rename = "override")]
    pub override_: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub text: String,
    pub language: Language,
    pub lexicon_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentScene {
    pub session_id: String,
    pub cursor: usize,
    pub trials: usize,
    pub attempts: usize,
    pub done: bool,
    pub scene: Option<ScenePayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub verdict: FeedbackVerdict,
    pub annotation: AnnotationResult,
    /// Attempts on this scene, this one included.
    pub attempts: usize,
    pub advanced: bool,
    pub overridden: bool,
    pub cursor: usize,
    pub done: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsesExport {
    pub experiment_id: String,
    pub responses: Vec<StoredResponse>,
}

/// Participant-facing feedback. Names counts and attributes, never the
/// target's properties.
pub fn feedback_message(verdict: &FeedbackVerdict) -> String {
    match verdict.status {
        Status::Unique => "Thanks, that identifies the object.".to_string(),
        Status::Ambiguous => format!("Your description matches {} objects.", verdict.matching_ids.len()),
        Status::IllFormed => {
            let mut attrs: Vec<&str> = verdict.conflicts.iter().map(|c| c.attribute.as_str()).collect();
            attrs.extend(verdict.false_properties.iter().map(|p| p.attribute.as_str()));
            attrs.dedup();
            format!("Please check what you said about: {}.", attrs.join(", "))
        }
        Status::Empty if verdict.unknown_tokens.is_empty() => "Please describe the highlighted object.".to_string(),
        Status::Empty => format!("These words were not understood: {}.", verdict.unknown_tokens.join(", ")),
    }
}

impl Service {
    /// Loads lexicons and scenes and rebuilds sessions from the record logs.
    pub fn open(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let mut lexicons = HashMap::new();
        for (id, l) in &config.lexicons {
            let schema = load_schema(&l.schema)?;
            let table = MappingTable::load(&l.path, &schema.type_attribute)
                .map_err(|e| ServiceError::Config(format!("lexicon `{id}` ({}): {e}", l.path.display())))?;
            lexicons.insert(
                id.clone(),
                LoadedLexicon {
                    table: Arc::new(table),
                    schema,
                },
            );
        }
        let mut experiments = HashMap::new();
        let mut sessions = HashMap::new();
        for cfg in &config.experiments {
            let corpus = load_corpus(&cfg.scenes)
                .map_err(|e| ServiceError::Config(format!("experiment `{}`: {e}", cfg.id)))?;
            let lexicon = lexicons
                .get(&cfg.lexicon)
                .ok_or_else(|| ServiceError::Config(format!("experiment `{}`: unknown lexicon `{}`", cfg.id, cfg.lexicon)))?
                .table
                .clone();
            let scenes: HashMap<String, Scene> = corpus.scenes.iter().map(|s| (s.id.clone(), s.clone())).collect();
            let trials = match &cfg.trials {
                Some(t) => t.clone(),
                None => corpus.scenes.iter().map(|s| s.id.clone()).collect(),
            };
            if let Some(missing) = trials.iter().find(|t| !scenes.contains_key(*t)) {
                return Err(ServiceError::Config(format!("experiment `{}`: unknown scene `{missing}`", cfg.id)));
            }
            let dir = config.data_dir.join(&cfg.id);
            fs::create_dir_all(&dir).map_err(store_err(&dir))?;
            let store = Store {
                sessions_log: dir.join("sessions.jsonl"),
                responses_log: dir.join("responses.jsonl"),
                persisted: HashSet::new(),
            };
            let mut store = store;
            let restored = restore(cfg, &mut store)?;
            tracing::info!(experiment = %cfg.id, sessions = restored.len(), "experiment loaded");
            sessions.extend(restored.into_iter().map(|(k, v)| (k, Arc::new(Mutex::new(v)))));
            experiments.insert(
                cfg.id.clone(),
                Experiment {
                    config: cfg.clone(),
                    schema: corpus.schema.clone(),
                    scenes,
                    trials,
                    lexicon,
                    store: Mutex::new(store),
                },
            );
        }
        Ok(Service {
            experiments,
            lexicons,
            sessions: RwLock::new(sessions),
        })
    }

    fn experiment(&self, id: &str) -> Result<&Experiment, ServiceError> {
        self.experiments
            .get(id)
            .ok_or_else(|| ServiceError::UnknownExperiment(id.to_string()))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<ExperimentSession>>, ServiceError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn start_session(&self, experiment_id: &str, participant_id: &str) -> Result<ExperimentSession, ServiceError> {
        let exp = self.experiment(experiment_id)?;
        let session_id = format!("{experiment_id}-{:016x}", rand::thread_rng().gen::<u64>());
        let now = Utc::now();
        let session = ExperimentSession {
            session_id: session_id.clone(),
            experiment_id: experiment_id.to_string(),
            participant_id: participant_id.to_string(),
            trial_order: trial_order(&exp.trials, exp.config.seed, participant_id),
            cursor: 0,
            attempts: Vec::new(),
            closed: false,
            last_active: now,
        };
        exp.store.lock().unwrap().log_event(&SessionEvent::Started {
            session_id: session_id.clone(),
            participant_id: participant_id.to_string(),
            trial_order: session.trial_order.clone(),
            at: now,
        })?;
        tracing::info!(session = %session_id, experiment = %experiment_id, "session started");
        self.sessions
            .write()
            .unwrap()
            .insert(session_id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    /// Closes the session if it has been idle too long.
    fn touch(&self, exp: &Experiment, s: &mut ExperimentSession, now: DateTime<Utc>) -> Result<(), ServiceError> {
        if s.closed {
            return Err(ServiceError::Closed(s.session_id.clone()));
        }
        let idle = now.signed_duration_since(s.last_active);
        if idle > chrono::Duration::seconds(exp.config.idle_timeout_secs as i64) {
            s.closed = true;
            exp.store.lock().unwrap().log_event(&SessionEvent::Expired {
                session_id: s.session_id.clone(),
                at: now,
            })?;
            tracing::info!(session = %s.session_id, idle_secs = idle.num_seconds(), "session expired");
            return Err(ServiceError::Closed(s.session_id.clone()));
        }
        Ok(())
    }

    /// Expires every idle session; returns how many were closed.
    pub fn expire_idle(&self, now: DateTime<Utc>) -> usize {
        let sessions: Vec<_> = self.sessions.read().unwrap().values().cloned().collect();
        let mut closed = 0;
        for s in sessions {
            let mut s = s.lock().unwrap();
            if s.closed {
                continue;
            }
            let Ok(exp) = self.experiment(&s.experiment_id) else {
                continue;
            };
            if matches!(self.touch(exp, &mut s, now), Err(ServiceError::Closed(_))) {
                closed += 1;
            }
        }
        closed
    }

    pub fn session_snapshot(&self, session_id: &str) -> Result<ExperimentSession, ServiceError> {
        Ok(self.session(session_id)?.lock().unwrap().clone())
    }

    pub fn current_scene(&self, session_id: &str) -> Result<CurrentScene, ServiceError> {
        let handle = self.session(session_id)?;
        let mut s = handle.lock().unwrap();
        let exp = self.experiment(&s.experiment_id)?;
        let now = Utc::now();
        self.touch(exp, &mut s, now)?;
        s.last_active = now;
        let scene = s
            .current_scene_id()
            .map(|id| scene_payload(&exp.scenes[id], &exp.schema));
        Ok(CurrentScene {
            session_id: s.session_id.clone(),
            cursor: s.cursor,
            trials: s.trial_order.len(),
            attempts: s.current_attempts(),
            done: s.done(),
            scene,
        })
    }

    pub fn submit(&self, session_id: &str, text: &str, override_: bool) -> Result<SubmitResponse, ServiceError> {
        let handle = self.session(session_id)?;
        let mut s = handle.lock().unwrap();
        let exp = self.experiment(&s.experiment_id)?;
        let now = Utc::now();
        self.touch(exp, &mut s, now)?;
        let Some(scene_id) = s.current_scene_id().map(str::to_string) else {
            return Err(ServiceError::Finished(session_id.to_string()));
        };
        if text.trim().is_empty() {
            return Err(ServiceError::EmptySubmission);
        }
        s.last_active = now;
        let scene = &exp.scenes[&scene_id];
        let language = exp.config.language;
        let annotation = annotate_text(text, language, &exp.lexicon, &exp.schema);
        let verdict = check(&annotation, scene, &exp.schema);
        let attempt = Attempt {
            scene_id: scene_id.clone(),
            text: text.to_string(),
            verdict: verdict.clone(),
            at: now,
        };
        let mut store = exp.store.lock().unwrap();
        store.log_event(&SessionEvent::Attempted {
            session_id: session_id.to_string(),
            attempt: attempt.clone(),
        })?;
        let previous = s.current_attempts();
        s.attempts.push(attempt);
        let attempts = previous + 1;
        let overridden = verdict.status != Status::Unique && override_ && previous >= OVERRIDE_AFTER;
        let advanced = verdict.status == Status::Unique || overridden;
        if advanced {
            store.persist(&StoredResponse {
                experiment_id: s.experiment_id.clone(),
                session_id: session_id.to_string(),
                participant_id: s.participant_id.clone(),
                scene_id,
                language,
                text: text.to_string(),
                annotation: annotation.clone(),
                verdict: verdict.clone(),
                attempts,
                overridden,
                at: now,
            })?;
            s.cursor += 1;
        }
        drop(store);
        Ok(SubmitResponse {
            message: feedback_message(&verdict),
            verdict,
            annotation,
            attempts,
            advanced,
            overridden,
            cursor: s.cursor,
            done: s.done(),
        })
    }

    pub fn annotate(&self, text: &str, language: Language, lexicon_id: &str) -> Result<AnnotationResult, ServiceError> {
        let lex = self
            .lexicons
            .get(lexicon_id)
            .ok_or_else(|| ServiceError::UnknownLexicon(lexicon_id.to_string()))?;
        Ok(annotate_text(text, language, &lex.table, &lex.schema))
    }

    pub fn responses(&self, experiment_id: &str) -> Result<ResponsesExport, ServiceError> {
        let exp = self.experiment(experiment_id)?;
        let store = exp.store.lock().unwrap();
        Ok(ResponsesExport {
            experiment_id: experiment_id.to_string(),
            responses: read_jsonl(&store.responses_log)?,
        })
    }

    /// Re-derives every stored verdict with the library and returns the
    /// responses whose annotation or verdict differ.
    pub fn replay(&self, experiment_id: &str) -> Result<Vec<StoredResponse>, ServiceError> {
        let exp = self.experiment(experiment_id)?;
        let export = self.responses(experiment_id)?;
        Ok(export
            .responses
            .into_iter()
            .filter(|r| {
                let Some(scene) = exp.scenes.get(&r.scene_id) else {
                    return true;
                };
                let annotation = annotate_text(&r.text, r.language, &exp.lexicon, &exp.schema);
                let verdict = check(&annotation, scene, &exp.schema);
                annotation != r.annotation || verdict != r.verdict
            })
            .collect())
    }
}

/// Rebuilds the sessions of one experiment from its logs.
fn restore(cfg: &ExperimentConfig, store: &mut Store) -> Result<HashMap<String, ExperimentSession>, ServiceError> {
    let mut sessions: HashMap<String, ExperimentSession> = HashMap::new();
    for event in read_jsonl::<SessionEvent>(&store.sessions_log)? {
        match event {
            SessionEvent::Started {
                session_id,
                participant_id,
                trial_order,
                at,
            } => {
                sessions.insert(
                    session_id.clone(),
                    ExperimentSession {
                        session_id,
                        experiment_id: cfg.id.clone(),
                        participant_id,
                        trial_order,
                        cursor: 0,
                        attempts: Vec::new(),
                        closed: false,
                        last_active: at,
                    },
                );
            }
            SessionEvent::Attempted { session_id, attempt } => {
                if let Some(s) = sessions.get_mut(&session_id) {
                    s.last_active = attempt.at;
                    s.attempts.push(attempt);
                }
            }
            SessionEvent::Expired { session_id, .. } => {
                if let Some(s) = sessions.get_mut(&session_id) {
                    s.closed = true;
                }
            }
        }
    }
    let mut done: HashMap<String, HashSet<String>> = HashMap::new();
    for r in read_jsonl::<StoredResponse>(&store.responses_log)? {
        store.persisted.insert((r.session_id.clone(), r.scene_id.clone()));
        done.entry(r.session_id).or_default().insert(r.scene_id);
    }
    for s in sessions.values_mut() {
        let finished = done.get(&s.session_id);
        s.cursor = s
            .trial_order
            .iter()
            .take_while(|id| finished.is_some_and(|f| f.contains(*id)))
            .count();
    }
    Ok(sessions)
}

// ---------------------------------------------------------------------------
// HTTP

type Shared = Arc<Service>;

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
}

async fn healthz() -> Json<Health> {
    Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
    })
}

async fn start_session(
    State(svc): State<Shared>,
    Json(req): Json<StartRequest>,
) -> Result<(StatusCode, Json<ExperimentSession>), ServiceError> {
    let s = svc.start_session(&req.experiment_id, &req.participant_id)?;
    Ok((StatusCode::CREATED, Json(s)))
}

async fn current_scene(State(svc): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<CurrentScene>, ServiceError> {
    svc.current_scene(&id).map(Json)
}

async fn submit(
    State(svc): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SubmitRequest>,
) -> Result<Json<SubmitResponse>, ServiceError> {
    svc.submit(&id, &req.text, req.override_).map(Json)
}

async fn annotate(State(svc): State<Shared>, Json(req): Json<AnnotateRequest>) -> Result<Json<AnnotationResult>, ServiceError> {
    svc.annotate(&req.text, req.language, &req.lexicon_id).map(Json)
}

async fn responses(
    State(svc): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ResponsesExport>, ServiceError> {
    svc.responses(&id).map(Json)
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(start_session))
        .route("/sessions/{id}/current-scene", get(current_scene))
        .route("/sessions/{id}/submissions", post(submit))
        .route("/annotate", post(annotate))
        .route("/experiments/{id}/responses", get(responses))
        .with_state(service)
}

/// Serves until the process is stopped. Prints `listening on <addr>` once bound.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let service = Arc::new(Service::open(&config)?);
    let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port)).await?;
    let addr: SocketAddr = listener.local_addr()?;
    println!("listening on {addr}");
    std::io::stdout().flush()?;
    tracing::info!(%addr, "service started");
    let sweeper = service.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(30));
        loop {
            tick.tick().await;
            sweeper.expire_idle(Utc::now());
        }
    });
    axum::serve(listener, router(service)).await?;
    Ok(())
}
