//! The commonsense knowledge oracle: seed sampling, perturbation proposals,
//! plausibility scores and feasibility opinions about constructs.
//!
//! Two providers implement [`KnowledgeSource`]: a table-driven stub that is a
//! pure function of its fixture and RNG, and a chat-completion client whose
//! traffic can be recorded to and replayed from a transcript.

pub mod live;
pub mod stub;
pub mod transcript;

use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::CatalogChunk;
use crate::construct::{CommandBinding, Construct, ConstructKey, Feasibility};

pub use live::{HttpTransport, LiveClient, LiveConfig, Transport};
pub use stub::{StubFixture, StubKnowledge};
pub use transcript::{RecordingTransport, ReplayTransport, TranscriptRecord};

/// Scores are clamped into `[SCORE_FLOOR, 1]` so acceptance ratios stay finite.
pub const SCORE_FLOOR: f64 = 1e-6;

pub fn clamp_score(s: f64) -> f64 {
    if s.is_nan() {
        SCORE_FLOOR
    } else {
        s.clamp(SCORE_FLOOR, 1.0)
    }
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("knowledge provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed provider output after retries: {0}")]
    MalformedProviderOutput(String),
    #[error("sample count must be at least 1")]
    InvalidCount,
    #[error("judging needs at least one retrieved document")]
    NoDocuments,
    #[error("no proposal available from `{0}`")]
    NoProposal(String),
    #[error("knowledge fixture: {0}")]
    Fixture(String),
    #[error("transcript has no response for request {0}")]
    ReplayMiss(String),
    #[error("transcript I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QueryKind {
    SeedSample,
    Perturb,
    Score,
    Judge,
}

/// Conditioning for knowledge queries: the interface's current state as seen
/// by the adaptation loop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryContext {
    /// Constructs already judged.
    #[serde(default)]
    pub known: Vec<ConstructKey>,
    /// Constructs pruned for good; never to be offered again.
    #[serde(default)]
    pub blacklist: Vec<ConstructKey>,
    /// Constructs to regenerate at a finer granularity.
    #[serde(default)]
    pub focus: Vec<Construct>,
    #[serde(default)]
    pub breadth_hint: u32,
    #[serde(default)]
    pub depth_hint: u32,
}

impl QueryContext {
    pub fn is_blacklisted(&self, k: &ConstructKey) -> bool {
        self.blacklist.contains(k)
    }

    pub fn is_known(&self, k: &ConstructKey) -> bool {
        self.known.contains(k)
    }
}

/// Serialized form of one query, used as the request payload for live
/// providers and as the transcript key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeQuery {
    pub kind: QueryKind,
    pub domain: String,
    pub context: serde_json::Value,
    pub breadth_hint: u32,
    pub depth_hint: u32,
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub chain: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructSample {
    pub construct: Construct,
    /// Unnormalized plausibility in (0, 1].
    pub score: f64,
    pub origin: SampleOrigin,
}

impl ConstructSample {
    pub fn key(&self) -> ConstructKey {
        self.construct.key()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityOpinion {
    pub verdict: Feasibility,
    pub rationale: String,
    pub confidence: f64,
    /// Catalog parameter realizing the construct, for point-to-point verdicts on parts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<CommandBinding>,
    /// Suggested finer decomposition, for decompose verdicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative: Option<String>,
}

pub trait KnowledgeSource: Send + Sync {
    /// Exactly `m` seed constructs for `domain`.
    fn sample_seeds(
        &self,
        domain: &str,
        m: usize,
        ctx: &QueryContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ConstructSample>, KnowledgeError>;

    /// A neighbour of `current` differing in at least one field, freshly scored.
    fn propose(
        &self,
        domain: &str,
        current: &ConstructSample,
        ctx: &QueryContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<ConstructSample, KnowledgeError>;

    /// Plausibility of a construct, clamped to `[1e-6, 1]`.
    fn score(&self, domain: &str, c: &Construct) -> Result<f64, KnowledgeError>;

    /// Feasibility of a construct given retrieved catalog documentation.
    fn judge(
        &self,
        domain: &str,
        c: &Construct,
        docs: &[CatalogChunk],
    ) -> Result<FeasibilityOpinion, KnowledgeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeMode {
    Live,
    Stub,
}

impl std::str::FromStr for KnowledgeMode {
    type Err = KnowledgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(KnowledgeMode::Live),
            "stub" => Ok(KnowledgeMode::Stub),
            other => Err(KnowledgeError::Fixture(format!("unknown knowledge mode `{other}`"))),
        }
    }
}

/// Provider selection from flags and the `KNOWLEDGE_*` environment.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeConfig {
    pub mode: KnowledgeMode,
    pub stub_path: Option<PathBuf>,
    pub live: LiveConfig,
    /// Record live traffic here; replay from it when no URL is configured.
    pub transcript: Option<PathBuf>,
}

impl KnowledgeConfig {
    /// Reads `KNOWLEDGE_MODE`, `KNOWLEDGE_STUB_PATH`, `KNOWLEDGE_API_URL`,
    /// `KNOWLEDGE_API_KEY` and `KNOWLEDGE_MODEL`. Defaults to stub mode.
    pub fn from_env() -> Result<Self, KnowledgeError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let mode = match var("KNOWLEDGE_MODE") {
            Some(m) => m.parse()?,
            None => KnowledgeMode::Stub,
        };
        Ok(KnowledgeConfig {
            mode,
            stub_path: var("KNOWLEDGE_STUB_PATH").map(PathBuf::from),
            live: LiveConfig::from_env(),
            transcript: None,
        })
    }

    /// Builds the provider. `domain_stub` is used when no stub path is configured.
    pub fn build(&self, domain_stub: Option<PathBuf>) -> Result<Box<dyn KnowledgeSource>, KnowledgeError> {
        match self.mode {
            KnowledgeMode::Stub => {
                let path = self
                    .stub_path
                    .clone()
                    .or(domain_stub)
                    .ok_or_else(|| KnowledgeError::Fixture("no stub fixture configured".into()))?;
                Ok(Box::new(StubKnowledge::load(&path)?))
            }
            KnowledgeMode::Live => match (&self.live.url, &self.transcript) {
                (Some(_), Some(t)) => Ok(Box::new(LiveClient::new(
                    self.live.clone(),
                    RecordingTransport::create(HttpTransport::new(&self.live)?, t)?,
                ))),
                (Some(_), None) => Ok(Box::new(LiveClient::new(self.live.clone(), HttpTransport::new(&self.live)?))),
                (None, Some(t)) => Ok(Box::new(LiveClient::new(self.live.clone(), ReplayTransport::load(t)?))),
                (None, None) => Err(KnowledgeError::ProviderUnavailable("KNOWLEDGE_API_URL is not set".into())),
            },
        }
    }
}
