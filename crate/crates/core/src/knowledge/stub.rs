//! Table-driven knowledge source. Every answer is a pure function of the
//! fixture and the caller's RNG, so runs and transcripts are reproducible.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    clamp_score, ConstructSample, FeasibilityOpinion, KnowledgeError, KnowledgeSource, QueryContext,
    SampleOrigin, SCORE_FLOOR,
};
use crate::catalog::CatalogChunk;
use crate::construct::{
    Construct, ConstructKey, Feasibility, OperationOrder, PartConstruct, RelationConstruct, RelationKey,
    Value,
};
use crate::translator::pose::{pose_rule, realization};
use crate::translator::shapes::{composite_alternative, primitive_for_shape, property_binding};

/// Properties with no geometric counterpart in the command dialect.
pub const INCOMPATIBLE_PROPERTIES: &[&str] = &[
    "material", "color", "colour", "texture", "weight", "finish", "price", "brand", "temperature",
    "smell", "sound", "durability",
];

pub const PART_OPERATIONS: &[&str] = &["set", "increase", "decrease"];
pub const RELATION_OPERATIONS: &[&str] = &["assign", "closer", "farther"];

/// Novel constructs are favoured this much per unit of breadth when seeding.
const NOVELTY_BOOST: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartFact {
    pub part: String,
    pub subpart: String,
    pub property: String,
    pub score: f64,
    /// Operation → relative weight.
    pub operations: IndexMap<String, f64>,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationFact {
    pub relation: RelationKey,
    pub descriptor: String,
    pub score: f64,
    pub operations: IndexMap<String, f64>,
    #[serde(default)]
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StubFixture {
    pub domain: String,
    #[serde(default)]
    pub parts: Vec<PartFact>,
    #[serde(default)]
    pub relations: Vec<RelationFact>,
    /// Construct key → weighted neighbour keys.
    #[serde(default)]
    pub proposals: IndexMap<String, Vec<(String, f64)>>,
    /// Attribute path (`part/subpart/property`) or relation `key/descriptor`
    /// → finer attribute paths offered when the former is being regenerated.
    #[serde(default)]
    pub decompositions: IndexMap<String, Vec<String>>,
    /// Construct key → fixed opinion, overriding the built-in rules.
    #[serde(default)]
    pub judgments: IndexMap<String, FeasibilityOpinion>,
}

#[derive(Debug, Clone, Copy)]
enum FactRef {
    Part(usize),
    Relation(usize),
}

#[derive(Debug, Clone)]
struct Candidate {
    key: ConstructKey,
    path: Vec<String>,
    fact: FactRef,
    op: String,
    weight: f64,
}

#[derive(Debug, Clone)]
pub struct StubKnowledge {
    fixture: StubFixture,
    candidates: Vec<Candidate>,
    by_key: HashMap<String, usize>,
}

impl StubKnowledge {
    pub fn new(fixture: StubFixture) -> Result<Self, KnowledgeError> {
        let mut candidates = Vec::new();
        for (i, f) in fixture.parts.iter().enumerate() {
            for (op, w) in &f.operations {
                let c = PartConstruct {
                    part: f.part.clone(),
                    subpart: f.subpart.clone(),
                    property: f.property.clone(),
                    operation: op.clone(),
                    value: None,
                    delta: None,
                };
                candidates.push(Candidate {
                    key: c.key(),
                    path: vec![f.part.clone(), f.subpart.clone(), f.property.clone(), op.clone()],
                    fact: FactRef::Part(i),
                    op: op.clone(),
                    weight: f.score * w,
                });
            }
        }
        for (i, f) in fixture.relations.iter().enumerate() {
            for (op, w) in &f.operations {
                let c = RelationConstruct {
                    relation: f.relation.clone(),
                    descriptor: f.descriptor.clone(),
                    operation: op.clone(),
                    value: None,
                    delta: None,
                };
                candidates.push(Candidate {
                    key: c.key(),
                    path: vec![f.relation.to_string(), f.descriptor.clone(), op.clone()],
                    fact: FactRef::Relation(i),
                    op: op.clone(),
                    weight: f.score * w,
                });
            }
        }
        let mut by_key = HashMap::new();
        for (i, c) in candidates.iter().enumerate() {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(KnowledgeError::Fixture(format!("`{}` has a bad weight", c.key)));
            }
            if by_key.insert(c.key.0.clone(), i).is_some() {
                return Err(KnowledgeError::Fixture(format!("`{}` is listed twice", c.key)));
            }
        }
        for (from, to) in &fixture.proposals {
            for (k, w) in to {
                if !by_key.contains_key(k) || !(w.is_finite() && *w >= 0.0) {
                    return Err(KnowledgeError::Fixture(format!("bad proposal `{from}` → `{k}`")));
                }
            }
        }
        Ok(StubKnowledge { fixture, candidates, by_key })
    }

    pub fn from_json(text: &str) -> Result<Self, KnowledgeError> {
        let f: StubFixture = serde_json::from_str(text).map_err(|e| KnowledgeError::Fixture(e.to_string()))?;
        Self::new(f)
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KnowledgeError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn fixture(&self) -> &StubFixture {
        &self.fixture
    }

    /// Every construct key the fixture can produce.
    pub fn keys(&self) -> impl Iterator<Item = &ConstructKey> {
        self.candidates.iter().map(|c| &c.key)
    }

    fn instantiate(&self, c: &Candidate, rng: &mut ChaCha8Rng) -> Construct {
        let first = OperationOrder::of(&c.op) == OperationOrder::First;
        let pick = |xs: &[f64], default: f64, rng: &mut ChaCha8Rng| {
            if xs.is_empty() {
                default
            } else {
                xs[rng.gen_range(0..xs.len())]
            }
        };
        match c.fact {
            FactRef::Part(i) => {
                let f = &self.fixture.parts[i];
                let mut p = PartConstruct {
                    part: f.part.clone(),
                    subpart: f.subpart.clone(),
                    property: f.property.clone(),
                    operation: c.op.clone(),
                    value: None,
                    delta: None,
                };
                if first {
                    p.value = Some(Value::Number(pick(&f.values, 1.0, rng)));
                } else {
                    let d = pick(&f.deltas, 0.1, rng);
                    p.delta = Some(if c.op == "decrease" { -d.abs() } else { d });
                }
                Construct::Part(p)
            }
            FactRef::Relation(i) => {
                let f = &self.fixture.relations[i];
                let mut r = RelationConstruct {
                    relation: f.relation.clone(),
                    descriptor: f.descriptor.clone(),
                    operation: c.op.clone(),
                    value: None,
                    delta: None,
                };
                if first {
                    r.value = Some("on".into());
                } else {
                    let d = pick(&f.deltas, 0.1, rng);
                    r.delta = Some([d, d]);
                }
                Construct::Relation(r)
            }
        }
    }

    fn weight_of(&self, key: &ConstructKey) -> Option<f64> {
        self.by_key.get(&key.0).map(|&i| self.candidates[i].weight)
    }

    /// Candidates refining the constructs the caller wants regenerated.
    fn focus_candidates(&self, ctx: &QueryContext) -> Vec<usize> {
        let mut out = Vec::new();
        for c in &ctx.focus {
            let attr = match c {
                Construct::Part(p) => p.attribute_path(),
                Construct::Relation(r) => format!("{}/{}", r.relation, r.descriptor),
            };
            let Some(finer) = self.fixture.decompositions.get(&attr) else { continue };
            for path in finer {
                for (i, cand) in self.candidates.iter().enumerate() {
                    let prefix = cand.path[..cand.path.len() - 1].join("/");
                    if &prefix == path && !ctx.is_blacklisted(&cand.key) && !out.contains(&i) {
                        out.push(i);
                    }
                }
            }
        }
        out
    }

    fn sample(&self, i: usize, rng: &mut ChaCha8Rng, origin: SampleOrigin) -> ConstructSample {
        let cand = &self.candidates[i];
        ConstructSample {
            construct: self.instantiate(cand, rng),
            score: clamp_score(cand.weight),
            origin,
        }
    }
}

fn hamming(a: &[String], b: &[String]) -> Option<usize> {
    (a.len() == b.len()).then(|| a.iter().zip(b).filter(|(x, y)| x != y).count())
}

fn opinion(verdict: Feasibility, rationale: impl Into<String>) -> FeasibilityOpinion {
    FeasibilityOpinion {
        verdict,
        rationale: rationale.into(),
        confidence: 0.9,
        binding: None,
        alternative: None,
    }
}

/// The rule set the stub judges by. Exposed so live providers' verdicts can be
/// compared against it in tests.
pub fn rule_judgment(c: &Construct, docs: &[CatalogChunk]) -> FeasibilityOpinion {
    let documented = |cmd: &str| docs.iter().any(|d| d.entry_id == cmd);
    match c {
        Construct::Part(p) => {
            let prop = p.property.to_lowercase();
            if INCOMPATIBLE_PROPERTIES.contains(&prop.as_str()) {
                return opinion(Feasibility::Prune, format!("`{prop}` is not a geometric property"));
            }
            if !PART_OPERATIONS.contains(&p.operation.as_str()) {
                return opinion(Feasibility::Prune, format!("no command performs `{}`", p.operation));
            }
            let shape = p.subpart_id().map(|s| s.shape).unwrap_or_else(|_| p.subpart.clone());
            if let Some(alt) = composite_alternative(&shape) {
                let mut o = opinion(Feasibility::Decompose, format!("`{shape}` has no single primitive"));
                o.alternative = Some(alt.to_string());
                return o;
            }
            let Some(prim) = primitive_for_shape(&shape) else {
                return opinion(Feasibility::Decompose, format!("`{shape}` needs a primitive breakdown"));
            };
            let Some(binding) = property_binding(prim, &prop) else {
                return opinion(
                    Feasibility::Prune,
                    format!("no {} parameter controls `{prop}`", prim.command()),
                );
            };
            if documented(prim.command()) && documented(&binding.command) {
                let mut o = opinion(
                    Feasibility::PointToPoint,
                    format!("`{}.{}` sets `{prop}` directly", binding.command, binding.param),
                );
                o.binding = Some(binding);
                o
            } else {
                opinion(
                    Feasibility::Decompose,
                    format!("retrieved documentation lacks `{}`", binding.command),
                )
            }
        }
        Construct::Relation(r) => {
            if !RELATION_OPERATIONS.contains(&r.operation.as_str()) {
                return opinion(Feasibility::Prune, format!("no command performs `{}`", r.operation));
            }
            if pose_rule(&r.descriptor).is_err() {
                return opinion(Feasibility::Prune, format!("`{}` has no spatial meaning", r.descriptor));
            }
            let cmds = realization(&r.descriptor).unwrap_or_default();
            if cmds.iter().all(|c| documented(c)) {
                opinion(Feasibility::PointToPoint, format!("realized by {}", cmds.join(" + ")))
            } else {
                opinion(Feasibility::Decompose, "retrieved documentation lacks the placement commands")
            }
        }
    }
}

impl KnowledgeSource for StubKnowledge {
    fn sample_seeds(
        &self,
        _domain: &str,
        m: usize,
        ctx: &QueryContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ConstructSample>, KnowledgeError> {
        if m == 0 {
            return Err(KnowledgeError::InvalidCount);
        }
        let mut out = Vec::with_capacity(m);
        for i in self.focus_candidates(ctx).into_iter().take(m) {
            out.push(self.sample(i, rng, SampleOrigin { chain: out.len(), step: 0 }));
        }
        let boost = NOVELTY_BOOST * (1.0 + f64::from(ctx.breadth_hint));
        let depth = 1.0 + f64::from(ctx.depth_hint);
        let weights: Vec<f64> = self
            .candidates
            .iter()
            .map(|c| {
                if ctx.is_blacklisted(&c.key) {
                    return 0.0;
                }
                let mut w = c.weight;
                if !ctx.is_known(&c.key) {
                    w *= boost;
                }
                if OperationOrder::of(&c.op) == OperationOrder::Second {
                    w *= depth;
                }
                w
            })
            .collect();
        if out.len() < m {
            let dist = WeightedIndex::new(&weights)
                .map_err(|_| KnowledgeError::ProviderUnavailable("no admissible constructs left".into()))?;
            while out.len() < m {
                let i = dist.sample(rng);
                out.push(self.sample(i, rng, SampleOrigin { chain: out.len(), step: 0 }));
            }
        }
        Ok(out)
    }

    fn propose(
        &self,
        _domain: &str,
        current: &ConstructSample,
        ctx: &QueryContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<ConstructSample, KnowledgeError> {
        let key = current.key();
        let next = if let Some(table) = self.fixture.proposals.get(&key.0) {
            let table: Vec<&(String, f64)> = table
                .iter()
                .filter(|(k, _)| !ctx.blacklist.iter().any(|b| &b.0 == k))
                .collect();
            let dist = WeightedIndex::new(table.iter().map(|(_, w)| *w))
                .map_err(|_| KnowledgeError::NoProposal(key.0.clone()))?;
            self.by_key[&table[dist.sample(rng)].0]
        } else {
            // Nearest non-empty shell around the current construct: Hamming-1
            // neighbours when there are any, otherwise the next closest ones.
            let here = current.construct.tree_path();
            let dists: Vec<(usize, usize)> = self
                .candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| !ctx.is_blacklisted(&c.key))
                .filter_map(|(i, c)| hamming(&c.path, &here).filter(|&d| d > 0).map(|d| (i, d)))
                .collect();
            let Some(nearest) = dists.iter().map(|&(_, d)| d).min() else {
                // An isolated construct proposes itself, which MH always accepts.
                return Ok(current.clone());
            };
            let shell: Vec<usize> = dists.iter().filter(|&&(_, d)| d == nearest).map(|&(i, _)| i).collect();
            shell[rng.gen_range(0..shell.len())]
        };
        Ok(self.sample(next, rng, current.origin))
    }

    fn score(&self, _domain: &str, c: &Construct) -> Result<f64, KnowledgeError> {
        Ok(self.weight_of(&c.key()).map_or(SCORE_FLOOR, clamp_score))
    }

    fn judge(
        &self,
        _domain: &str,
        c: &Construct,
        docs: &[CatalogChunk],
    ) -> Result<FeasibilityOpinion, KnowledgeError> {
        if docs.is_empty() {
            return Err(KnowledgeError::NoDocuments);
        }
        if let Some(o) = self.fixture.judgments.get(&c.key().0) {
            return Ok(o.clone());
        }
        Ok(rule_judgment(c, docs))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn stub() -> StubKnowledge {
        StubKnowledge::from_json(
            r#"{
              "domain": "teapot",
              "parts": [
                {"part": "handle", "subpart": "torus_0", "property": "radius", "score": 0.6,
                 "operations": {"set": 1.0}, "values": [0.2]},
                {"part": "handle", "subpart": "torus_0", "property": "length", "score": 0.5,
                 "operations": {"set": 1.0}, "values": [1.5]},
                {"part": "body", "subpart": "sphere_0", "property": "material", "score": 0.4,
                 "operations": {"set": 1.0}}
              ],
              "proposals": {"body/sphere_0/material/set": [["handle/torus_0/length/set", 1.0]]}
            }"#,
        )
        .unwrap()
    }

    fn chunk(entry: &str) -> CatalogChunk {
        CatalogChunk { chunk_id: format!("{entry}#0"), entry_id: entry.into(), text: entry.into() }
    }

    #[test]
    fn zero_seeds_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            stub().sample_seeds("teapot", 0, &QueryContext::default(), &mut rng),
            Err(KnowledgeError::InvalidCount)
        ));
    }

    #[test]
    fn field_level_neighbour() {
        let s = stub();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cur = ConstructSample {
            construct: Construct::Part(PartConstruct::set("handle", "torus_0", "radius", 0.2)),
            score: 0.6,
            origin: SampleOrigin { chain: 0, step: 0 },
        };
        let next = s.propose("teapot", &cur, &QueryContext::default(), &mut rng).unwrap();
        assert_eq!(next.key().0, "handle/torus_0/length/set");
        assert_eq!(next.score, 0.5);
    }

    #[test]
    fn blacklisted_constructs_are_never_seeded() {
        let s = stub();
        let ctx = QueryContext {
            blacklist: vec![ConstructKey("body/sphere_0/material/set".into())],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seeds = s.sample_seeds("teapot", 50, &ctx, &mut rng).unwrap();
        assert!(seeds.iter().all(|c| c.key().0 != "body/sphere_0/material/set"));
    }

    #[test]
    fn judge_rules() {
        let s = stub();
        let docs = [chunk("torus"), chunk("sphere"), chunk("cylinder")];
        let material = Construct::Part(PartConstruct::set("body", "sphere_0", "material", 1.0));
        assert_eq!(s.judge("teapot", &material, &docs).unwrap().verdict, Feasibility::Prune);
        let radius = Construct::Part(PartConstruct::set("spout", "cylinder_0", "radius", 1.0));
        let o = s.judge("teapot", &radius, &docs).unwrap();
        assert_eq!(o.verdict, Feasibility::PointToPoint);
        assert_eq!(o.binding.unwrap().param, "radius");
        let ring = Construct::Part(PartConstruct::set("body", "ring_0", "radius", 1.0));
        let o = s.judge("teapot", &ring, &docs).unwrap();
        assert_eq!(o.verdict, Feasibility::Decompose);
        assert_eq!(o.alternative.as_deref(), Some("torus segments"));
        assert!(matches!(s.judge("teapot", &radius, &[]), Err(KnowledgeError::NoDocuments)));
    }
}
