//! Interactive prototyping sessions. A session is a chain of model versions:
//! each step grounds one instruction against the previous version only,
//! compiles the result and measures it. Sessions are rebuilt from their event
//! logs, so a restarted service sees exactly what was persisted.

mod alt;
mod store;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alt::{AltRequest, AltResponse, AltTranslator};
pub use store::{Event, IndexEntry, Store};

use crate::catalog::Catalog;
use crate::construct::{Construct, DomainInterface, DslProgram};
use crate::metrics::{MetricsError, StepRanking};
use crate::translator::{compile, evaluate_csg_seeded, ground_instruction, GroundError, ModelingProgram, SceneExport, SceneStats};

pub const DEFAULT_MAX_STEPS: usize = 10;
/// Method id of this engine's own candidate in rankings.
pub const OURS: &str = "ours";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("no adapted interface for domain `{0}`")]
    UnknownDomain(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{session_id}` has used all {max_steps} steps")]
    SessionComplete { session_id: String, max_steps: usize },
    #[error("session has no step {0}")]
    UnknownStep(u32),
    #[error("invalid ranking: {0}")]
    InvalidRank(String),
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("loading domains: {0}")]
    Registry(String),
    #[error("session storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt session log: {0}")]
    Corrupt(String),
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownDomain(_) => "unknown_domain",
            SessionError::UnknownSession(_) => "unknown_session",
            SessionError::SessionComplete { .. } => "session_complete",
            SessionError::UnknownStep(_) => "unknown_step",
            SessionError::InvalidRank(_) => "invalid_rank",
            SessionError::EmptyInstruction => "empty_instruction",
            SessionError::Registry(_) => "registry",
            SessionError::Io(_) => "io",
            SessionError::Corrupt(_) => "corrupt",
        }
    }
}

impl From<MetricsError> for SessionError {
    fn from(e: MetricsError) -> Self {
        SessionError::InvalidRank(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Grounding,
    Compile,
    Geometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFailure {
    pub stage: FailureStage,
    pub message: String,
}

/// One method's result for a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<ModelingProgram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based, dense over every attempted step.
    pub index: u32,
    pub instruction: String,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StepFailure>,
    pub delta: Vec<Construct>,
    /// The DSL program after the step; unchanged from the previous one when the step failed.
    pub program: DslProgram,
    pub modeling: ModelingProgram,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<SceneStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_prob: Option<f64>,
    #[serde(default)]
    pub alternatives: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<StepRanking>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

impl StepRecord {
    /// Method ids that produced a candidate for this step, ours first.
    pub fn methods(&self) -> Vec<&str> {
        std::iter::once(OURS).chain(self.alternatives.iter().map(|c| c.method.as_str())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub domain: String,
    pub max_steps: usize,
    pub created_at_ms: u64,
    pub status: SessionStatus,
    pub steps: Vec<StepRecord>,
    pub current: DslProgram,
}

impl Session {
    /// Rebuilds a session from its event log.
    pub fn from_events(events: &[Event]) -> Result<Self, SessionError> {
        let Some(Event::Created { session_id, domain, max_steps, created_at_ms }) = events.first() else {
            return Err(SessionError::Corrupt("log does not start with a creation event".into()));
        };
        let mut s = Session {
            session_id: session_id.clone(),
            domain: domain.clone(),
            max_steps: *max_steps,
            created_at_ms: *created_at_ms,
            status: SessionStatus::Active,
            steps: Vec::new(),
            current: DslProgram::new(),
        };
        for e in &events[1..] {
            s.apply(e)?;
        }
        Ok(s)
    }

    /// Folds one persisted event into the in-memory state. Live updates go
    /// through here too, so a reload reproduces the same state.
    fn apply(&mut self, e: &Event) -> Result<(), SessionError> {
        match e {
            Event::Created { .. } => return Err(SessionError::Corrupt("duplicate creation event".into())),
            Event::Step { record } => {
                if record.index as usize != self.steps.len() + 1 {
                    return Err(SessionError::Corrupt(format!("step {} out of order", record.index)));
                }
                self.current = record.program.clone();
                self.steps.push((**record).clone());
            }
            Event::Ranking { step, ranking } => {
                let rec = self
                    .steps
                    .get_mut((*step as usize).wrapping_sub(1))
                    .ok_or_else(|| SessionError::Corrupt(format!("ranking for missing step {step}")))?;
                rec.ranking = Some(ranking.clone());
            }
        }
        self.status = if self.steps.len() >= self.max_steps { SessionStatus::Complete } else { SessionStatus::Active };
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.max_steps.saturating_sub(self.steps.len())
    }

    /// Modeling program of the latest step, or empty.
    pub fn modeling(&self) -> ModelingProgram {
        self.steps.last().map(|r| r.modeling.clone()).unwrap_or_default()
    }

    /// Rankings stored so far, in step order.
    pub fn rankings(&self) -> Vec<StepRanking> {
        self.steps.iter().filter_map(|r| r.ranking.clone()).collect()
    }
}

/// Session metadata without the step records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub domain: String,
    pub status: SessionStatus,
    pub max_steps: usize,
    pub steps: usize,
    pub remaining: usize,
}

impl From<&Session> for SessionSummary {
    fn from(s: &Session) -> Self {
        SessionSummary {
            session_id: s.session_id.clone(),
            domain: s.domain.clone(),
            status: s.status,
            max_steps: s.max_steps,
            steps: s.steps.len(),
            remaining: s.remaining(),
        }
    }
}

/// Adapted interfaces available to sessions, by domain.
#[derive(Debug, Clone, Default)]
pub struct DomainRegistry {
    domains: IndexMap<String, Arc<DomainInterface>>,
}

/// File suffix of interface documents in a registry directory.
pub const INTERFACE_SUFFIX: &str = ".interface.json";

impl DomainRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, d: DomainInterface) {
        self.domains.insert(d.domain.clone(), Arc::new(d));
    }

    /// Loads every `*.interface.json` in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, SessionError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| SessionError::Registry(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_str().is_some_and(|s| s.ends_with(INTERFACE_SUFFIX)))
            .collect();
        paths.sort();
        let mut r = DomainRegistry::new();
        for p in paths {
            let text = std::fs::read_to_string(&p)?;
            let d = DomainInterface::from_json(&text)
                .map_err(|e| SessionError::Registry(format!("{}: {e}", p.display())))?;
            r.insert(d);
        }
        Ok(r)
    }

    /// Domains that have at least one maintained construct.
    pub fn names(&self) -> Vec<&str> {
        self.domains.iter().filter(|(_, d)| Self::usable(d)).map(|(k, _)| k.as_str()).collect()
    }

    fn usable(d: &DomainInterface) -> bool {
        d.maintained_parts().next().is_some()
    }

    pub fn get(&self, domain: &str) -> Result<Arc<DomainInterface>, SessionError> {
        self.domains
            .get(domain)
            .filter(|d| Self::usable(d))
            .cloned()
            .ok_or_else(|| SessionError::UnknownDomain(domain.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub max_steps: usize,
    /// Monte Carlo samples per step evaluation.
    pub csg_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub alternatives: Vec<AltTranslator>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { max_steps: DEFAULT_MAX_STEPS, csg_samples: 20_000, seed: 0, alternatives: Vec::new() }
    }
}

/// Outcome of translating one instruction against a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub delta: Vec<Construct>,
    pub log_prob: Option<f64>,
    pub program: DslProgram,
    pub modeling: ModelingProgram,
    pub stats: SceneStats,
}

/// Grounds, compiles and evaluates one instruction against `state`.
pub fn translate_step(
    text: &str,
    d: &DomainInterface,
    state: &DslProgram,
    c: &Catalog,
    samples: usize,
    seed: u64,
) -> Result<Translation, StepFailure> {
    let fail = |stage, e: &dyn std::fmt::Display| StepFailure { stage, message: e.to_string() };
    let g = ground_instruction(text, d, state, c).map_err(|e| match e {
        GroundError::Compile(ref c) => fail(FailureStage::Compile, c),
        ref other => fail(FailureStage::Grounding, other),
    })?;
    let mut program = state.clone();
    program.apply(&g.delta);
    let modeling = compile(&program, d, c).map_err(|e| fail(FailureStage::Compile, &e))?;
    let stats = evaluate_csg_seeded(&modeling, samples, seed).map_err(|e| fail(FailureStage::Geometry, &e))?;
    Ok(Translation { delta: g.delta, log_prob: g.log_prob, program, modeling, stats })
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

type Handle = Arc<Mutex<Session>>;

pub struct SessionService {
    store: Store,
    registry: DomainRegistry,
    catalog: Arc<Catalog>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Handle>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    // A panic while holding a session lock cannot leave persisted state
    // inconsistent, because state only changes after the event is on disk.
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl SessionService {
    pub fn open(
        data_dir: impl AsRef<Path>,
        registry: DomainRegistry,
        catalog: Arc<Catalog>,
        config: ServiceConfig,
    ) -> Result<Self, SessionError> {
        Ok(SessionService {
            store: Store::open(data_dir.as_ref())?,
            registry,
            catalog,
            config,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn registry(&self) -> &DomainRegistry {
        &self.registry
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn domains(&self) -> Vec<String> {
        self.registry.names().into_iter().map(str::to_string).collect()
    }

    /// Sessions known to the data directory, in creation order.
    pub fn list(&self) -> Result<Vec<IndexEntry>, SessionError> {
        self.store.index()
    }

    fn handle(&self, id: &str) -> Result<Handle, SessionError> {
        let mut map = lock(&self.sessions);
        if let Some(h) = map.get(id) {
            return Ok(h.clone());
        }
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(SessionError::UnknownSession(id.to_string()));
        }
        let s = Session::from_events(&self.store.events(id)?)?;
        let h = Arc::new(Mutex::new(s));
        map.insert(id.to_string(), h.clone());
        Ok(h)
    }

    pub fn create_session(&self, domain: &str) -> Result<String, SessionError> {
        self.registry.get(domain)?;
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let created = Event::Created {
            session_id: session_id.clone(),
            domain: domain.to_string(),
            max_steps: self.config.max_steps,
            created_at_ms: now_ms(),
        };
        self.store.create(&created)?;
        let s = Session::from_events(&[created])?;
        lock(&self.sessions).insert(session_id.clone(), Arc::new(Mutex::new(s)));
        Ok(session_id)
    }

    pub fn session(&self, id: &str) -> Result<Session, SessionError> {
        let h = self.handle(id)?;
        let s = lock(&h).clone();
        Ok(s)
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary, SessionError> {
        let h = self.handle(id)?;
        let s = SessionSummary::from(&*lock(&h));
        Ok(s)
    }

    pub fn history(&self, id: &str) -> Result<Vec<StepRecord>, SessionError> {
        let h = self.handle(id)?;
        let steps = lock(&h).steps.clone();
        Ok(steps)
    }

    /// Runs one step. Translation failures are recorded as failed steps and
    /// returned as records; they do not change the model.
    pub fn step(&self, id: &str, instruction: &str) -> Result<StepRecord, SessionError> {
        if instruction.trim().is_empty() {
            return Err(SessionError::EmptyInstruction);
        }
        let h = self.handle(id)?;
        let mut s = lock(&h);
        if s.status == SessionStatus::Complete {
            return Err(SessionError::SessionComplete { session_id: s.session_id.clone(), max_steps: s.max_steps });
        }
        let d = self.registry.get(&s.domain)?;
        let index = s.steps.len() as u32 + 1;
        let started_at_ms = now_ms();
        let previous = s.steps.last();
        let outcome = translate_step(instruction, &d, &s.current, &self.catalog, self.config.csg_samples, self.config.seed);
        let alternatives = self
            .config
            .alternatives
            .iter()
            .map(|a| {
                let prev = previous
                    .and_then(|r| r.alternatives.iter().find(|c| c.method == a.id))
                    .and_then(|c| c.program.clone())
                    .unwrap_or_default();
                let req = AltRequest { domain: s.domain.clone(), step: index, instruction: instruction.to_string(), previous: prev };
                match a.run(&req) {
                    Ok(p) => Candidate { method: a.id.clone(), program: Some(p), error: None },
                    Err(e) => Candidate { method: a.id.clone(), program: None, error: Some(e) },
                }
            })
            .collect();
        let base = StepRecord {
            index,
            instruction: instruction.to_string(),
            status: StepStatus::Ok,
            error: None,
            delta: Vec::new(),
            program: s.current.clone(),
            modeling: s.modeling(),
            stats: None,
            log_prob: None,
            alternatives,
            ranking: None,
            started_at_ms,
            finished_at_ms: 0,
        };
        let mut record = match outcome {
            Ok(t) => StepRecord {
                delta: t.delta,
                program: t.program,
                modeling: t.modeling,
                stats: Some(t.stats),
                log_prob: t.log_prob,
                ..base
            },
            Err(f) => {
                log::info!("step {index} of {id} failed: {}", f.message);
                StepRecord { status: StepStatus::Failed, error: Some(f), ..base }
            }
        };
        record.finished_at_ms = now_ms();
        let event = Event::Step { record: Box::new(record.clone()) };
        self.store.append(id, &event)?;
        s.apply(&event)?;
        Ok(record)
    }

    /// Stores a ranking over the candidates of step `n`.
    pub fn rank_step(&self, id: &str, n: u32, ranks: IndexMap<String, u32>, partial: bool) -> Result<StepRanking, SessionError> {
        let h = self.handle(id)?;
        let mut s = lock(&h);
        let rec = n
            .checked_sub(1)
            .and_then(|i| s.steps.get(i as usize))
            .ok_or(SessionError::UnknownStep(n))?;
        let methods = rec.methods();
        if let Some(m) = ranks.keys().find(|m| !methods.contains(&m.as_str())) {
            return Err(SessionError::InvalidRank(format!("`{m}` produced no candidate for step {n}")));
        }
        let ranking = StepRanking { step: n, ranks, partial };
        ranking.check(Some(methods.len()))?;
        let event = Event::Ranking { step: n, ranking: ranking.clone() };
        self.store.append(id, &event)?;
        s.apply(&event)?;
        Ok(ranking)
    }

    /// Scene of the model after step `n`; step 0 is the empty model.
    pub fn scene(&self, id: &str, n: u32) -> Result<SceneExport, SessionError> {
        let s = self.session(id)?;
        if n == 0 {
            return Ok(SceneExport::default());
        }
        let rec = s.steps.get(n as usize - 1).ok_or(SessionError::UnknownStep(n))?;
        SceneExport::from_program(&rec.modeling).map_err(|e| SessionError::Corrupt(format!("step {n} scene: {e}")))
    }
}
