//! Live annotation sessions.
//!
//! A session wraps an [`ActiveLearner`] whose oracle is a human. Its state is
//! persisted as an append-only JSONL event log: the creation event followed
//! by every accepted label submission. The engine is deterministic, so
//! replaying the log rebuilds the exact session state. A model snapshot is
//! written next to the log after every completed round for inspection.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use hast_core::engine::Phase;
use hast_core::{ActiveLearner, Dataset, ExperimentConfig, LearningCurve, ProbModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::DatasetRegistry;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("session is {0:?}, not awaiting labels")]
    WrongPhase(Phase),
    #[error("instance {0} is not in the pending batch")]
    NotPending(usize),
    #[error("instance {0} was already labeled in this batch")]
    AlreadySubmitted(usize),
    #[error("label {label} is out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("corrupt event log: {0}")]
    CorruptLog(String),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] hast_core::Error),
}

pub type SessionResult<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        dataset: String,
        config: ExperimentConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
    LabelsSubmitted {
        batch_index: usize,
        labels: Vec<(usize, usize)>,
    },
}

/// Read-only snapshot served to clients.
#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub dataset: String,
    pub phase: Phase,
    pub batch_index: usize,
    pub pending_ids: Vec<usize>,
    pub submitted: usize,
    pub config: ExperimentConfig,
    pub curve: LearningCurve,
    #[serde(skip)]
    pub data: Arc<Dataset>,
    #[serde(skip)]
    pub model: Option<ProbModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SubmitAck {
    pub accepted: usize,
    pub remaining: usize,
    #[serde(skip)]
    pub batch_complete: bool,
}

pub struct Session {
    id: String,
    dataset_name: String,
    learner: ActiveLearner,
    submitted: BTreeMap<usize, usize>,
    events: Vec<SessionEvent>,
    log_dir: Option<PathBuf>,
}

impl Session {
    pub fn create(
        id: String,
        dataset: Arc<Dataset>,
        config: ExperimentConfig,
        idempotency_key: Option<String>,
        log_dir: Option<PathBuf>,
    ) -> SessionResult<Self> {
        let learner = ActiveLearner::new(dataset.clone(), config.clone())
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        let mut session = Self {
            id: id.clone(),
            dataset_name: dataset.name.clone(),
            learner,
            submitted: BTreeMap::new(),
            events: Vec::new(),
            log_dir,
        };
        if let Some(dir) = &session.log_dir {
            fs::create_dir_all(dir)?;
            // A fresh log; creation never appends to an old one.
            File::create(dir.join("events.jsonl"))?;
        }
        session.record(SessionEvent::Created {
            session_id: id,
            dataset: dataset.name.clone(),
            config,
            idempotency_key,
        })?;
        Ok(session)
    }

    /// Rebuilds a session from its events. Completed batches are retrained
    /// synchronously, so the result is never mid-round.
    pub fn replay(
        events: &[SessionEvent],
        registry: &DatasetRegistry,
        log_dir: Option<PathBuf>,
    ) -> SessionResult<Self> {
        let Some(SessionEvent::Created {
            session_id,
            dataset,
            config,
            idempotency_key,
        }) = events.first()
        else {
            return Err(SessionError::CorruptLog("log does not start with a creation event".into()));
        };
        let ds = registry
            .get(dataset)?
            .ok_or_else(|| SessionError::UnknownDataset(dataset.clone()))?;
        let learner = ActiveLearner::new(ds, config.clone())
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        let mut session = Self {
            id: session_id.clone(),
            dataset_name: dataset.clone(),
            learner,
            submitted: BTreeMap::new(),
            events: vec![SessionEvent::Created {
                session_id: session_id.clone(),
                dataset: dataset.clone(),
                config: config.clone(),
                idempotency_key: idempotency_key.clone(),
            }],
            log_dir: None,
        };
        for event in &events[1..] {
            match event {
                SessionEvent::LabelsSubmitted { batch_index, labels } => {
                    if *batch_index != session.learner.batch_index() {
                        return Err(SessionError::CorruptLog(format!(
                            "labels for batch {batch_index} while batch {} is pending",
                            session.learner.batch_index()
                        )));
                    }
                    let ack = session.submit(labels)?;
                    if ack.batch_complete {
                        session.advance()?;
                    }
                }
                SessionEvent::Created { .. } => {
                    return Err(SessionError::CorruptLog("second creation event".into()));
                }
            }
        }
        session.log_dir = log_dir;
        Ok(session)
    }

    pub fn read_log(path: &Path) -> SessionResult<Vec<SessionEvent>> {
        let file = File::open(path)?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(
                serde_json::from_str(&line)
                    .map_err(|e| SessionError::CorruptLog(format!("line {}: {e}", i + 1)))?,
            );
        }
        Ok(events)
    }

    fn record(&mut self, event: SessionEvent) -> SessionResult<()> {
        if let Some(dir) = &self.log_dir {
            let mut f = OpenOptions::new().append(true).create(true).open(dir.join("events.jsonl"))?;
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.events.push(event);
        Ok(())
    }

    fn write_snapshot(&self) -> SessionResult<()> {
        if let (Some(dir), Some(model)) = (&self.log_dir, self.learner.current_model()) {
            let snapshot = ModelSnapshot {
                batch_index: self.learner.batch_index(),
                labeled_count: self.learner.pool().human_count(),
                model: model.clone(),
            };
            let tmp = dir.join("model.json.tmp");
            fs::write(&tmp, serde_json::to_vec(&snapshot).expect("snapshot serializes"))?;
            fs::rename(tmp, dir.join("model.json"))?;
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn learner(&self) -> &ActiveLearner {
        &self.learner
    }

    pub fn phase(&self) -> Phase {
        self.learner.phase()
    }

    pub fn curve(&self) -> &LearningCurve {
        self.learner.curve()
    }

    pub fn remaining(&self) -> usize {
        self.learner
            .pending()
            .map(|q| q.len() - self.submitted.len())
            .unwrap_or(0)
    }

    /// Accepts some or all labels of the pending batch. The whole submission
    /// is rejected if any entry is invalid. Once every pending id has a
    /// label the learner moves to `Training`; call [`Session::advance`] or
    /// [`Session::step`] to run the round.
    pub fn submit(&mut self, labels: &[(usize, usize)]) -> SessionResult<SubmitAck> {
        let phase = self.learner.phase();
        let Some(pending) = self.learner.pending() else {
            return Err(SessionError::WrongPhase(phase));
        };
        let num_classes = self.learner.dataset().num_classes;
        let mut fresh = BTreeMap::new();
        for &(id, label) in labels {
            if !pending.ids.contains(&id) {
                return Err(SessionError::NotPending(id));
            }
            if self.submitted.contains_key(&id) || fresh.contains_key(&id) {
                return Err(SessionError::AlreadySubmitted(id));
            }
            if label >= num_classes {
                return Err(SessionError::LabelOutOfRange { label, num_classes });
            }
            fresh.insert(id, label);
        }
        let batch_index = self.learner.batch_index();
        self.record(SessionEvent::LabelsSubmitted {
            batch_index,
            labels: labels.to_vec(),
        })?;
        self.submitted.extend(fresh);
        let remaining = self.remaining();
        let batch_complete = remaining == 0;
        if batch_complete {
            let pairs: Vec<(usize, usize)> = self.submitted.iter().map(|(&i, &l)| (i, l)).collect();
            self.learner.accept_labels(&pairs)?;
            self.submitted.clear();
        }
        Ok(SubmitAck {
            accepted: labels.len(),
            remaining,
            batch_complete,
        })
    }

    /// Runs one engine stage and returns the new phase.
    pub fn step(&mut self) -> SessionResult<Phase> {
        let before = self.learner.phase();
        let after = self.learner.step()?;
        if before == Phase::Evaluating {
            self.write_snapshot()?;
        }
        Ok(after)
    }

    /// Runs stages until labels are needed again or the session is done.
    pub fn advance(&mut self) -> SessionResult<Phase> {
        while matches!(self.phase(), Phase::Training | Phase::SelfTraining | Phase::Evaluating) {
            self.step()?;
        }
        Ok(self.phase())
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            dataset: self.dataset_name.clone(),
            phase: self.learner.phase(),
            batch_index: self.learner.batch_index(),
            pending_ids: self.learner.pending().map(|q| q.ids.clone()).unwrap_or_default(),
            submitted: self.submitted.len(),
            config: self.learner.config().clone(),
            curve: self.learner.curve().clone(),
            data: self.learner.dataset().clone(),
            model: self.learner.current_model().cloned(),
        }
    }

    pub fn current_model(&self) -> Option<&ProbModel> {
        self.learner.current_model()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub batch_index: usize,
    pub labeled_count: usize,
    pub model: ProbModel,
}

/// A session plus a cheaply readable snapshot of it. Writers serialize on
/// `core`; readers only touch `view`.
pub struct SessionHandle {
    pub core: tokio::sync::Mutex<Session>,
    view: RwLock<SessionView>,
}

impl SessionHandle {
    fn new(session: Session) -> Self {
        let view = RwLock::new(session.view());
        Self {
            core: tokio::sync::Mutex::new(session),
            view,
        }
    }

    pub fn view(&self) -> SessionView {
        self.view.read().unwrap().clone()
    }

    pub fn publish(&self, view: SessionView) {
        *self.view.write().unwrap() = view;
    }
}

pub struct SessionStore {
    registry: Arc<DatasetRegistry>,
    data_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    idempotency: Mutex<HashMap<String, String>>,
    /// Labels applied automatically to seed batches, for demos.
    seed_labels: Option<HashMap<usize, usize>>,
}

impl SessionStore {
    pub fn new(registry: Arc<DatasetRegistry>, data_dir: Option<PathBuf>) -> Self {
        Self {
            registry,
            data_dir,
            sessions: RwLock::default(),
            idempotency: Mutex::default(),
            seed_labels: None,
        }
    }

    pub fn with_seed_labels(mut self, labels: HashMap<usize, usize>) -> Self {
        self.seed_labels = Some(labels);
        self
    }

    pub fn registry(&self) -> &DatasetRegistry {
        &self.registry
    }

    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join("sessions").join(id))
    }

    /// Replays every session log found under the data directory.
    pub fn load_persisted(&self) -> SessionResult<usize> {
        let Some(root) = self.data_dir.as_ref().map(|d| d.join("sessions")) else {
            return Ok(0);
        };
        if !root.exists() {
            return Ok(0);
        }
        let mut loaded = 0;
        for entry in fs::read_dir(&root)? {
            let dir = entry?.path();
            let log = dir.join("events.jsonl");
            if !log.exists() {
                continue;
            }
            let events = Session::read_log(&log)?;
            let session = Session::replay(&events, &self.registry, Some(dir))?;
            if let Some(SessionEvent::Created {
                idempotency_key: Some(key),
                ..
            }) = events.first()
            {
                self.idempotency
                    .lock()
                    .unwrap()
                    .insert(key.clone(), session.id().to_string());
            }
            self.sessions
                .write()
                .unwrap()
                .insert(session.id().to_string(), Arc::new(SessionHandle::new(session)));
            loaded += 1;
        }
        Ok(loaded)
    }

    /// Creates a session, or returns the existing one for a repeated
    /// idempotency key. The flag is true when a new session was made.
    pub fn create(
        &self,
        dataset: &str,
        config: ExperimentConfig,
        idempotency_key: Option<String>,
        seed_labels: Option<&HashMap<usize, usize>>,
    ) -> SessionResult<(Arc<SessionHandle>, bool)> {
        let mut keys = self.idempotency.lock().unwrap();
        if let Some(key) = &idempotency_key {
            if let Some(existing) = keys.get(key) {
                return Ok((self.get(existing)?, false));
            }
        }
        let ds = self
            .registry
            .get(dataset)?
            .ok_or_else(|| SessionError::UnknownDataset(dataset.to_string()))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut session = Session::create(
            id.clone(),
            ds,
            config,
            idempotency_key.clone(),
            self.session_dir(&id),
        )?;
        if let Some(map) = seed_labels.or(self.seed_labels.as_ref()) {
            let seed_ids = session.view().pending_ids;
            if let Some(labels) = seed_ids
                .iter()
                .map(|id| map.get(id).map(|&l| (*id, l)))
                .collect::<Option<Vec<_>>>()
            {
                if session.submit(&labels)?.batch_complete {
                    session.advance()?;
                }
            }
        }
        let handle = Arc::new(SessionHandle::new(session));
        self.sessions.write().unwrap().insert(id.clone(), handle.clone());
        if let Some(key) = idempotency_key {
            keys.insert(key, id);
        }
        Ok((handle, true))
    }

    pub fn get(&self, id: &str) -> SessionResult<Arc<SessionHandle>> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    /// Validates and records a submission. When it completes the batch, the
    /// round runs on a blocking worker; poll the view's phase to follow it.
    pub async fn submit(&self, id: &str, labels: &[(usize, usize)]) -> SessionResult<SubmitAck> {
        let handle = self.get(id)?;
        let mut core = handle.core.lock().await;
        let ack = core.submit(labels)?;
        handle.publish(core.view());
        drop(core);
        if ack.batch_complete {
            let worker = handle.clone();
            tokio::task::spawn_blocking(move || run_round(&worker));
        }
        Ok(ack)
    }
}

fn run_round(handle: &SessionHandle) {
    let mut core = handle.core.blocking_lock();
    loop {
        handle.publish(core.view());
        if !matches!(core.phase(), Phase::Training | Phase::SelfTraining | Phase::Evaluating) {
            break;
        }
        if let Err(e) = core.step() {
            tracing::error!(session = core.id(), error = %e, "round failed");
            break;
        }
    }
}
