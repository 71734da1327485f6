//! The reciprocative adaptation loop. The expectation step samples new
//! constructs conditioned on the interface so far; the maximization step
//! retrieves catalog documentation for each and sorts it into maintained,
//! regenerate-finer and pruned.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::crp::{cluster, features, Likelihood};
use super::mcmc::{run_mcmc, McmcConfig, McmcError};
use super::metrics::{convergence_metrics, ConvergenceMetrics};
use super::tables::estimate_tables;
use super::tree::{build_concept_tree, ConceptTree};
use crate::catalog::Catalog;
use crate::construct::interface::INTERFACE_VERSION;
use crate::construct::{
    Construct, ConstructKey, DomainInterface, Feasibility, PartBinding, RelationBinding, Value,
};
use crate::knowledge::{ConstructSample, FeasibilityOpinion, KnowledgeError, KnowledgeSource, QueryContext, SCORE_FLOOR};
use crate::translator::pose::realization;
use crate::translator::quantifier::QuantifierTable;
use crate::translator::shapes::{primitive_for_shape, property_binding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub m_chains: usize,
    pub n_steps: usize,
    pub alpha: f64,
    pub max_iterations: usize,
    /// Relative change in the maintained count, in percent, that counts as flat.
    pub convergence_pct: f64,
    /// Consecutive flat iterations required.
    pub window: usize,
    pub seed: u64,
    pub top_k: usize,
    pub buffer_capacity: usize,
    pub stall_limit: usize,
    pub gibbs_sweeps: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            m_chains: 16,
            n_steps: 8,
            alpha: 1.0,
            max_iterations: 20,
            convergence_pct: 2.0,
            window: 2,
            seed: 0,
            top_k: 5,
            buffer_capacity: 32,
            stall_limit: 5,
            gibbs_sweeps: 2,
        }
    }
}

impl AdaptConfig {
    pub fn from_json(text: &str) -> Result<Self, AdaptError> {
        let c: AdaptConfig = serde_json::from_str(text).map_err(|e| AdaptError::Config(e.to_string()))?;
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<(), AdaptError> {
        if self.m_chains == 0 {
            return Err(AdaptError::Config("m_chains must be at least 1".into()));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(AdaptError::Config("alpha must be positive".into()));
        }
        if self.max_iterations == 0 || self.window == 0 || self.top_k == 0 {
            return Err(AdaptError::Config("max_iterations, window and top_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("invalid adaptation config: {0}")]
    Config(String),
    #[error("the catalog has no entries")]
    CatalogEmpty,
    #[error(transparent)]
    Sampling(#[from] McmcError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

/// Exploration controls adjusted between iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Hints {
    pub breadth: u32,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judged {
    pub sample: ConstructSample,
    pub opinion: FeasibilityOpinion,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Validation {
    pub maintained: Vec<Judged>,
    pub regenerate: Vec<Judged>,
    pub pruned: Vec<Judged>,
}

impl Validation {
    pub fn len(&self) -> usize {
        self.maintained.len() + self.regenerate.len() + self.pruned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Novel constructs judged this iteration.
    pub candidates: usize,
    /// Running totals.
    pub maintained: usize,
    pub decomposed: usize,
    pub pruned: usize,
    pub soundness: f64,
    pub completeness: f64,
    pub granularity: f64,
    /// Sum over maintained constructs of `ln(score / 1e-6)`.
    pub likelihood_proxy: f64,
    pub hints: Hints,
    /// Pruned keys so far, in pruning order.
    #[serde(default)]
    pub blacklist: Vec<ConstructKey>,
    /// Keys of this iteration's candidates; kept in memory only.
    #[serde(skip)]
    pub candidate_keys: Vec<ConstructKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub domain: String,
    pub iterations: Vec<IterationRecord>,
    pub soundness: f64,
    pub completeness: f64,
    pub granularity_alignment: f64,
    pub converged: bool,
    pub iterations_used: usize,
    pub blacklist: Vec<ConstructKey>,
}

impl AdaptationReport {
    /// One row per iteration: iteration, maintained, decomposed, pruned and the three metrics.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "maintained", "decomposed", "pruned", "soundness", "completeness", "granularity"])
            .expect("in-memory write");
        for r in &self.iterations {
            w.write_record([
                r.iteration.to_string(),
                r.maintained.to_string(),
                r.decomposed.to_string(),
                r.pruned.to_string(),
                format!("{:.6}", r.soundness),
                format!("{:.6}", r.completeness),
                format!("{:.6}", r.granularity),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
    }
}

/// Everything the loop knows between iterations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptState {
    pub domain: String,
    pub judged: IndexMap<ConstructKey, Judged>,
    /// Every sample drawn, for frequency estimates.
    pub observed: Vec<ConstructSample>,
    pub pending: Vec<Construct>,
    pub blacklist: Vec<ConstructKey>,
    pub hints: Hints,
}

impl AdaptState {
    pub fn new(domain: &str) -> Self {
        AdaptState { domain: domain.into(), ..Default::default() }
    }

    pub fn count(&self, f: Feasibility) -> usize {
        self.judged.values().filter(|j| j.opinion.verdict == f).count()
    }

    pub fn likelihood_proxy(&self) -> f64 {
        self.judged
            .values()
            .filter(|j| j.opinion.verdict == Feasibility::PointToPoint)
            .map(|j| (j.sample.score / SCORE_FLOOR).ln())
            .sum()
    }

    fn context(&mut self) -> QueryContext {
        QueryContext {
            known: self.judged.keys().cloned().collect(),
            blacklist: self.blacklist.clone(),
            focus: std::mem::take(&mut self.pending),
            breadth_hint: self.hints.breadth,
            depth_hint: self.hints.depth,
        }
    }

    fn apply(&mut self, v: Validation) {
        for j in v.maintained {
            self.judged.insert(j.sample.key(), j);
        }
        for j in v.regenerate {
            self.pending.push(j.sample.construct.clone());
            self.judged.insert(j.sample.key(), j);
        }
        for j in v.pruned {
            let k = j.sample.key();
            if !self.blacklist.contains(&k) {
                self.blacklist.push(k.clone());
            }
            self.judged.insert(k, j);
        }
    }
}

fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed.wrapping_add((iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Samples candidates conditioned on the current state and returns the novel
/// ones: not yet judged, not blacklisted, first occurrence only.
pub fn expectation_expand(
    state: &mut AdaptState,
    ks: &dyn KnowledgeSource,
    cfg: &AdaptConfig,
    iteration: usize,
) -> Result<Vec<ConstructSample>, AdaptError> {
    let ctx = state.context();
    let mcmc = McmcConfig {
        m_chains: cfg.m_chains * (1 + ctx.breadth_hint as usize),
        n_steps: cfg.n_steps,
        buffer_capacity: cfg.buffer_capacity,
        stall_limit: cfg.stall_limit,
        seed: iteration_seed(cfg.seed, iteration),
    };
    let run = run_mcmc(ks, &state.domain, &ctx, &mcmc)?;
    let mut novel: Vec<ConstructSample> = Vec::new();
    for s in &run.samples {
        let k = s.key();
        if state.judged.contains_key(&k) || ctx.is_blacklisted(&k) || novel.iter().any(|n| n.key() == k) {
            continue;
        }
        novel.push(s.clone());
    }
    state.observed.extend(run.samples);
    Ok(novel)
}

/// Retrieval query for a construct: its words plus the commands it would need.
pub fn retrieval_query(c: &Construct) -> String {
    let mut words: Vec<String> = Vec::new();
    match c {
        Construct::Part(p) => {
            let shape = p.subpart_id().map(|s| s.shape).unwrap_or_else(|_| p.subpart.clone());
            words.push(p.part.replace('_', " "));
            words.push(shape.replace('_', " "));
            words.push(p.property.clone());
            if let Some(prim) = primitive_for_shape(&shape) {
                words.push(prim.command().into());
                if let Some(b) = property_binding(prim, &p.property) {
                    words.push(b.command);
                    words.push(b.param.replace('.', " "));
                }
            }
        }
        Construct::Relation(r) => {
            words.push(r.descriptor.replace('_', " "));
            if let Ok(cmds) = realization(&r.descriptor) {
                words.extend(cmds.into_iter().map(String::from));
            }
        }
    }
    words.join(" ")
}

/// Judges every candidate against its top-`k` retrieved chunks. A candidate
/// with no retrievable documentation is sent back for a finer breakdown.
pub fn maximization_validate(
    domain: &str,
    candidates: &[ConstructSample],
    catalog: &Catalog,
    ks: &dyn KnowledgeSource,
    top_k: usize,
) -> Result<Validation, AdaptError> {
    if catalog.is_empty() {
        return Err(AdaptError::CatalogEmpty);
    }
    let mut v = Validation::default();
    for s in candidates {
        let docs: Vec<_> = catalog
            .retrieve(&retrieval_query(&s.construct), top_k)
            .into_iter()
            .map(|h| h.chunk)
            .collect();
        let opinion = if docs.is_empty() {
            FeasibilityOpinion {
                verdict: Feasibility::Decompose,
                rationale: "no catalog documentation matched".into(),
                confidence: 1.0,
                binding: None,
                alternative: None,
            }
        } else {
            ks.judge(domain, &s.construct, &docs)?
        };
        let j = Judged { sample: s.clone(), opinion };
        match j.opinion.verdict {
            Feasibility::PointToPoint => v.maintained.push(j),
            Feasibility::Decompose => v.regenerate.push(j),
            Feasibility::Prune => v.pruned.push(j),
        }
    }
    Ok(v)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn merge(a: Feasibility, b: Feasibility) -> Feasibility {
    use Feasibility::*;
    match (a, b) {
        (PointToPoint, _) | (_, PointToPoint) => PointToPoint,
        (Decompose, _) | (_, Decompose) => Decompose,
        _ => Prune,
    }
}

/// Interface implied by the state: one template per judged attribute or
/// relation descriptor, the concept tree and the estimated tables.
pub fn assemble_interface(state: &AdaptState, cfg: &AdaptConfig) -> DomainInterface {
    let mut parts: IndexMap<String, PartBinding> = IndexMap::new();
    let mut relations: IndexMap<String, RelationBinding> = IndexMap::new();
    for j in state.judged.values() {
        let f = j.opinion.verdict;
        let p2p = f == Feasibility::PointToPoint;
        match &j.sample.construct {
            Construct::Part(p) => {
                let b = parts.entry(p.attribute_path()).or_insert_with(|| PartBinding {
                    part: p.part.clone(),
                    subpart: p.subpart.clone(),
                    property: p.property.clone(),
                    operations: Vec::new(),
                    feasibility: f,
                    binding: None,
                    default: None,
                    p25: None,
                    p75: None,
                    score: j.sample.score,
                });
                b.feasibility = merge(b.feasibility, f);
                b.score = b.score.max(j.sample.score);
                if p2p {
                    b.operations.push(p.operation.clone());
                    if b.binding.is_none() {
                        b.binding = j.opinion.binding.clone();
                    }
                }
            }
            Construct::Relation(r) => {
                let b = relations.entry(format!("{}/{}", r.relation, r.descriptor)).or_insert_with(|| {
                    RelationBinding {
                        relation: r.relation.clone(),
                        descriptor: r.descriptor.clone(),
                        operations: Vec::new(),
                        feasibility: f,
                        score: j.sample.score,
                    }
                });
                b.feasibility = merge(b.feasibility, f);
                b.score = b.score.max(j.sample.score);
                if p2p {
                    b.operations.push(r.operation.clone());
                }
            }
        }
    }
    for (path, b) in parts.iter_mut() {
        let mut values: Vec<f64> = state
            .observed
            .iter()
            .filter_map(|s| match &s.construct {
                Construct::Part(p) if &p.attribute_path() == path => match p.value {
                    Some(Value::Number(v)) => Some(v),
                    _ => None,
                },
                _ => None,
            })
            .collect();
        if !values.is_empty() && b.feasibility == Feasibility::PointToPoint {
            values.sort_by(f64::total_cmp);
            b.default = Some(percentile(&values, 0.5));
            b.p25 = Some(percentile(&values, 0.25));
            b.p75 = Some(percentile(&values, 0.75));
        }
    }

    let judged: Vec<Construct> = state.judged.values().map(|j| j.sample.construct.clone()).collect();
    let concept_tree = match build_concept_tree(&state.domain, &judged) {
        Ok(mut t) => {
            for j in state.judged.values() {
                t.mark(&j.sample.construct, j.opinion.verdict);
            }
            let data: Vec<_> = judged.iter().map(features).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let cs = cluster(&data, cfg.alpha, Likelihood::default(), cfg.gibbs_sweeps, &mut rng);
            t.attach_clusters(&judged, &cs.labels());
            t
        }
        Err(_) => ConceptTree::new(&state.domain),
    };

    let maintained_keys: Vec<&ConstructKey> = state
        .judged
        .iter()
        .filter(|(_, j)| j.opinion.verdict == Feasibility::PointToPoint)
        .map(|(k, _)| k)
        .collect();
    let vocabulary: Vec<Construct> = maintained_keys.iter().map(|k| state.judged[*k].sample.construct.clone()).collect();
    let maintained: Vec<Construct> = state
        .observed
        .iter()
        .filter(|s| maintained_keys.contains(&&s.key()))
        .map(|s| s.construct.clone())
        .collect();

    DomainInterface {
        version: INTERFACE_VERSION.into(),
        domain: state.domain.clone(),
        part_constructs: parts.into_values().collect(),
        relation_constructs: relations.into_values().collect(),
        concept_tree,
        tables: estimate_tables(&maintained, &vocabulary),
        quantifiers: Some(QuantifierTable::default()),
    }
}

/// Hint update after an iteration.
pub fn next_hints(h: Hints, top_level: usize, novel: usize, judged: &Validation) -> Hints {
    let mut out = h;
    if top_level <= 2 {
        out.breadth += 1;
    }
    if novel == 0 {
        out.breadth = out.breadth.saturating_sub(1);
    }
    if !judged.is_empty() {
        let bad = (judged.regenerate.len() + judged.pruned.len()) as f64 / judged.len() as f64;
        if bad > 0.5 {
            out.depth += 1;
        } else if bad < 0.1 {
            out.depth = out.depth.saturating_sub(1);
        }
    }
    out
}

fn flat(counts: &[usize], pct: f64, window: usize) -> bool {
    if counts.len() < window + 1 {
        return false;
    }
    counts.windows(2).rev().take(window).all(|w| {
        let (prev, now) = (w[0] as f64, w[1] as f64);
        (now - prev).abs() / prev.max(1.0) < pct / 100.0
    })
}

/// Alternates expansion and validation until the maintained count flattens or
/// the iteration budget runs out. Not converging is reported, not an error.
pub fn adapt_domain(
    domain: &str,
    cfg: &AdaptConfig,
    ks: &dyn KnowledgeSource,
    catalog: &Catalog,
) -> Result<(DomainInterface, AdaptationReport), AdaptError> {
    cfg.check()?;
    if catalog.is_empty() {
        return Err(AdaptError::CatalogEmpty);
    }
    let mut state = AdaptState::new(domain);
    let mut records = Vec::new();
    let mut counts = vec![0usize];
    let mut converged = false;
    let mut metrics = ConvergenceMetrics::default();
    for iteration in 1..=cfg.max_iterations {
        let candidates = expectation_expand(&mut state, ks, cfg, iteration)?;
        let v = maximization_validate(domain, &candidates, catalog, ks, cfg.top_k)?;
        let novel = candidates.len();
        let hints = state.hints;
        state.apply(v.clone());

        let d = assemble_interface(&state, cfg);
        metrics = convergence_metrics(&d, catalog);
        let maintained = state.count(Feasibility::PointToPoint);
        counts.push(maintained);
        records.push(IterationRecord {
            iteration,
            candidates: novel,
            maintained,
            decomposed: state.count(Feasibility::Decompose),
            pruned: state.count(Feasibility::Prune),
            soundness: metrics.soundness,
            completeness: metrics.completeness,
            granularity: metrics.granularity_alignment,
            likelihood_proxy: state.likelihood_proxy(),
            hints,
            blacklist: state.blacklist.clone(),
            candidate_keys: candidates.iter().map(|c| c.key()).collect(),
        });
        log::info!(
            "iteration {iteration}: {novel} candidates, {maintained} maintained, {} pruned",
            state.blacklist.len()
        );
        if flat(&counts, cfg.convergence_pct, cfg.window) {
            converged = true;
            break;
        }
        state.hints = next_hints(state.hints, d.concept_tree.top_level().len(), novel, &v);
    }
    let d = assemble_interface(&state, cfg);
    let report = AdaptationReport {
        domain: domain.into(),
        iterations_used: records.len(),
        iterations: records,
        soundness: metrics.soundness,
        completeness: metrics.completeness,
        granularity_alignment: metrics.granularity_alignment,
        converged,
        blacklist: state.blacklist,
    };
    Ok((d, report))
}
