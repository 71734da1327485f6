//! Grounding of a designer instruction into a program delta.
//!
//! Part references are resolved against the interface's part labels with a
//! normalized edit distance, shape words pick subparts, degree words become
//! value edits through the quantifier table, and relation descriptors are
//! switched on when the instruction speaks about them. Where several edits
//! would fit, the one the interface finds most probable wins.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::compile::{current_value, resolve_subpart, CompileError};
use super::quantifier::{apply_quantifier, QuantifierContext, QuantifierError, RuleKind};
use super::shapes::{primitive_for_shape, primitive_for_word, Primitive};
use crate::catalog::{tokenize, Catalog};
use crate::construct::{
    construct_log_prob, joint_log_prob, Construct, DomainInterface, DslProgram, Instruction,
    PartBinding, PartConstruct, RelationConstruct, RelationKey,
};

/// Largest normalized edit distance accepted for a fuzzy part reference.
pub const MATCH_THRESHOLD: f64 = 0.34;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("cannot resolve `{0}` to a concept of this domain")]
    UnresolvableReference(String),
    #[error("unbound operation `{0}`")]
    UnboundOperation(String),
    #[error("nothing to change for `{0}`")]
    Ungroundable(String),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Quantifier(#[from] QuantifierError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub instruction: Instruction,
    pub delta: Vec<Construct>,
    /// Joint log-probability of the delta, when every factor is tabulated.
    pub log_prob: Option<f64>,
}

const CREATION_VERBS: &[&str] = &[
    "create", "attach", "extend", "add", "place", "position", "construct", "insert", "put", "build",
    "form",
];

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "of", "to", "at", "on", "in", "into", "onto", "and", "with", "from", "for",
    "by", "its", "it", "each", "all", "both", "make", "keep", "let", "more", "less", "toward",
    "towards", "along", "between", "some", "one", "two", "three", "four", "five", "six", "pair",
    "pairs", "shape", "shaped", "form", "forms", "main", "so", "that", "is", "be", "should", "too",
    "very", "design", "arrange", "leave", "set", "give", "them", "their", "this", "these", "same",
    "axis", "surface", "edge", "edges", "corner", "corners", "tip", "end", "up", "out", "upward",
    "outward", "downward", "smoothly", "rounded", "round", "smooth", "form", "forms", "space",
];

/// Words that point at the far end of a tapered subpart.
const DISTAL_CUES: &[&str] = &["tip", "toward", "towards", "end", "point"];

const PROPERTY_WORDS: &[&str] = &["radius", "diameter", "height", "length", "width", "angle", "size"];

fn normalized_distance(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        return 0.0;
    }
    strsim::osa_distance(a, b) as f64 / n as f64
}

/// Words of a part id with any trailing index dropped: `leg_2` → `leg`.
fn part_label(part: &str) -> String {
    let mut words: Vec<&str> = part.split('_').filter(|w| !w.is_empty()).collect();
    while words.len() > 1 && words.last().is_some_and(|w| w.bytes().all(|b| b.is_ascii_digit())) {
        words.pop();
    }
    words.join(" ")
}

fn singular(word: &str) -> Option<&str> {
    word.strip_suffix("es")
        .filter(|w| w.ends_with('s') || w.ends_with('x') || w.ends_with("sh") || w.ends_with("ch"))
        .or_else(|| word.strip_suffix('s'))
        .filter(|w| !w.is_empty())
}

/// Exact match, or a shared prefix of at least four characters.
fn stem_eq(a: &str, b: &str) -> bool {
    a == b || (a.len().min(b.len()) >= 4 && (a.starts_with(b) || b.starts_with(a)))
}

struct Mention {
    start: usize,
    len: usize,
    parts: Vec<String>,
}

/// Finds part references, longest n-grams first; exact labels beat fuzzy ones.
fn find_mentions(tokens: &[String], parts: &[String]) -> Vec<Mention> {
    let labels: Vec<(String, &String)> = parts.iter().map(|p| (part_label(p), p)).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut found = None;
        'grams: for n in (1..=3).rev() {
            if i + n > tokens.len() {
                continue;
            }
            let gram = tokens[i..i + n].join(" ");
            let mut forms = vec![gram.clone()];
            if let Some(s) = singular(&gram) {
                forms.push(s.to_string());
            }
            let exact: Vec<String> = labels
                .iter()
                .filter(|(l, p)| forms.iter().any(|f| f == l || f == p.as_str()))
                .map(|(_, p)| (*p).clone())
                .collect();
            if !exact.is_empty() {
                found = Some(Mention { start: i, len: n, parts: exact });
                break 'grams;
            }
            let content = tokens[i..i + n]
                .iter()
                .all(|t| !FUNCTION_WORDS.contains(&t.as_str()) && t.len() >= 3);
            if !content {
                continue;
            }
            let mut best: Option<(f64, &str)> = None;
            for (label, _) in &labels {
                let dist = forms
                    .iter()
                    .map(|f| normalized_distance(f, label))
                    .fold(f64::INFINITY, f64::min);
                if dist <= MATCH_THRESHOLD && best.is_none_or(|(b, _)| dist < b) {
                    best = Some((dist, label));
                }
            }
            if let Some((_, label)) = best {
                let hits = labels.iter().filter(|(l, _)| l == label).map(|(_, p)| (*p).clone()).collect();
                found = Some(Mention { start: i, len: n, parts: hits });
                break 'grams;
            }
        }
        match found {
            Some(m) => {
                i += m.len;
                out.push(m);
            }
            None => i += 1,
        }
    }
    out
}

struct Builder<'a> {
    d: &'a DomainInterface,
    c: &'a Catalog,
    state: &'a DslProgram,
    instruction: &'a Instruction,
    delta: Vec<Construct>,
}

impl Builder<'_> {
    fn working(&self) -> DslProgram {
        let mut w = self.state.clone();
        w.apply(&self.delta);
        w
    }

    fn present(&self) -> HashSet<String> {
        self.working().parts.keys().cloned().collect()
    }

    fn log_prob(&self, c: &Construct) -> f64 {
        construct_log_prob(self.instruction.kind, c, &self.d.tables).unwrap_or(f64::NEG_INFINITY)
    }

    /// Adds first-order settings for the maintained properties of a subpart.
    fn create_subpart(&mut self, part: &str, subpart: &str) -> Result<(), GroundError> {
        let props: Vec<String> = self
            .d
            .maintained_parts()
            .filter(|b| b.part == part && b.subpart == subpart && b.permits("set"))
            .map(|b| b.property.clone())
            .collect();
        if props.is_empty() {
            return Ok(());
        }
        let model = resolve_subpart(&DslProgram::new(), self.d, self.c, part, subpart, &props)?;
        for prop in &props {
            let v = model.values[prop].max(0.0);
            self.delta.push(Construct::Part(PartConstruct::set(part, subpart, prop, v)));
        }
        Ok(())
    }

    fn create_part(&mut self, part: &str, shapes: &[Primitive]) -> Result<(), GroundError> {
        let subs: Vec<String> = self.d.subparts_of(part).iter().map(|s| s.to_string()).collect();
        let matching: Vec<&String> = subs
            .iter()
            .filter(|s| shape_of(s).is_some_and(|p| shapes.contains(&p)))
            .collect();
        let chosen: Vec<&String> = if matching.is_empty() { subs.iter().collect() } else { matching };
        if chosen.is_empty() {
            return Err(GroundError::UnboundOperation(part.to_string()));
        }
        for s in chosen {
            self.create_subpart(part, s)?;
        }
        Ok(())
    }

    /// Replaces an earlier setting of the same attribute within this delta, or appends.
    fn put(&mut self, c: PartConstruct) {
        let same = |x: &Construct| match x {
            Construct::Part(p) => {
                p.attribute_path() == c.attribute_path() && p.operation == "set" && c.operation == "set"
            }
            Construct::Relation(_) => false,
        };
        match self.delta.iter().position(same) {
            Some(i) => self.delta[i] = Construct::Part(c),
            None => self.delta.push(Construct::Part(c)),
        }
    }

    fn has_relation(&self, part: &str) -> bool {
        self.working().relationships.keys().any(|k| k.involves(part))
    }

    fn assign(&mut self, key: &RelationKey, descriptor: &str) {
        let w = self.working();
        let existing = w.relation_key_for(key).and_then(|k| w.relationships.get(&k).cloned());
        if existing.is_some_and(|list| list.iter().any(|d| d == descriptor)) {
            return;
        }
        self.delta.push(Construct::Relation(RelationConstruct::assign(key.clone(), descriptor)));
    }
}

fn shape_of(subpart: &str) -> Option<Primitive> {
    subpart
        .rsplit_once('_')
        .and_then(|(shape, _)| primitive_for_shape(shape))
}

/// Maps `text` to a delta against `state` under the interface `d`.
pub fn ground_instruction(
    text: &str,
    d: &DomainInterface,
    state: &DslProgram,
    c: &Catalog,
) -> Result<Grounding, GroundError> {
    let instruction = Instruction::new(text).ok_or(GroundError::EmptyInstruction)?;
    let tokens = tokenize(text);
    let qt = d.quantifier_table();

    let mut known: Vec<String> = d.parts().iter().map(|s| s.to_string()).collect();
    for p in state.parts.keys() {
        if !known.contains(p) {
            known.push(p.clone());
        }
    }
    let mentions = find_mentions(&tokens, &known);
    let consumed: HashSet<usize> = mentions.iter().flat_map(|m| m.start..m.start + m.len).collect();
    let mut mentioned: Vec<String> = Vec::new();
    for m in &mentions {
        for p in &m.parts {
            if !mentioned.contains(p) {
                mentioned.push(p.clone());
            }
        }
    }
    let free: Vec<(usize, &str)> = tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| !consumed.contains(i))
        .map(|(i, t)| (i, t.as_str()))
        .collect();
    let shapes: Vec<Primitive> = free.iter().filter_map(|(_, t)| primitive_for_word(t)).collect();
    let descriptor_words: HashSet<String> = d
        .relation_constructs
        .iter()
        .flat_map(|b| descriptor_tokens(&b.descriptor))
        .collect();
    let is_known_word = |t: &str| {
        FUNCTION_WORDS.contains(&t)
            || CREATION_VERBS.contains(&t)
            || PROPERTY_WORDS.contains(&t)
            || DISTAL_CUES.contains(&t)
            || qt.rule(t).is_some()
            || qt.modifier(t).is_some()
            || primitive_for_word(t).is_some()
            || descriptor_words.iter().any(|w| stem_eq(w, t))
            || t.bytes().all(|b| b.is_ascii_digit())
    };
    let first_unknown = || {
        free.iter()
            .find(|(_, t)| !is_known_word(t))
            .or_else(|| free.iter().find(|(_, t)| !FUNCTION_WORDS.contains(t)))
            .map(|(_, t)| t.to_string())
            .unwrap_or_else(|| text.trim().to_string())
    };

    // A creation verb must be followed by a resolvable head noun.
    if let Some(v) = tokens.iter().position(|t| CREATION_VERBS.contains(&t.as_str())) {
        if !mentions.iter().any(|m| m.start > v) {
            let head = free
                .iter()
                .filter(|(i, _)| *i > v)
                .find(|(_, t)| !is_known_word(t))
                .map(|(_, t)| t.to_string())
                .unwrap_or_else(first_unknown);
            return Err(GroundError::UnresolvableReference(head));
        }
    }
    if mentioned.is_empty() && shapes.is_empty() {
        return Err(GroundError::UnresolvableReference(first_unknown()));
    }

    let mut b = Builder { d, c, state, instruction: &instruction, delta: Vec::new() };

    // New parts, then parts that can only hang off a new one.
    let mut created: Vec<String> = Vec::new();
    for p in &mentioned {
        if !state.declares(p) {
            if !d.declares_part(p) {
                return Err(GroundError::UnresolvableReference(p.clone()));
            }
            b.create_part(p, &shapes)?;
            created.push(p.clone());
        }
    }
    let mut companions = Vec::new();
    for p in &created {
        for key in d.relation_keys_of(p) {
            let other = if key.from == *p { &key.to } else { &key.from };
            if state.declares(other) || created.contains(other) || companions.contains(other) {
                continue;
            }
            if d.relation_keys_of(other).iter().all(|k| k.involves(p)) {
                companions.push(other.clone());
            }
        }
    }
    for p in &companions {
        b.create_part(p, &[])?;
    }
    // Existing parts named with a shape they do not have yet gain that subpart.
    for p in mentioned.iter().filter(|p| state.declares(p)) {
        for s in d.subparts_of(p) {
            let has = state.parts[p].contains_key(s);
            if !has && shape_of(s).is_some_and(|prim| shapes.contains(&prim)) {
                let s = s.to_string();
                b.create_subpart(p, &s)?;
            }
        }
    }

    // Degree words.
    let degree: f64 = free.iter().filter_map(|(_, t)| qt.modifier(t)).product();
    let modifiers: Vec<&str> = free.iter().filter(|(_, t)| qt.modifier(t).is_some()).map(|(_, t)| *t).collect();
    let distal = tokens.iter().any(|t| DISTAL_CUES.contains(&t.as_str()));
    let shape_targets: Vec<(String, String)> = if mentioned.is_empty() {
        let w = b.working();
        w.parts
            .iter()
            .flat_map(|(p, subs)| subs.keys().map(move |s| (p.clone(), s.clone())))
            .filter(|(_, s)| shape_of(s).is_some_and(|prim| shapes.contains(&prim)))
            .collect()
    } else {
        Vec::new()
    };
    if mentioned.is_empty() && shape_targets.is_empty() {
        return Err(GroundError::UnresolvableReference(
            free.iter()
                .find(|(_, t)| primitive_for_word(t).is_some())
                .map(|(_, t)| t.to_string())
                .unwrap_or_else(first_unknown),
        ));
    }
    for (_, word) in free.iter().filter(|(_, t)| qt.rule(t).is_some()) {
        let rule = qt.rule(word).expect("filtered on presence");
        if rule.kind == RuleKind::Identity {
            continue;
        }
        if rule.properties.iter().any(|p| p == "gap") {
            ground_gap(&mut b, word, rule_factor(&rule.kind), degree, &mentioned)?;
            continue;
        }
        let phrase = modifiers.iter().copied().chain([*word]).collect::<Vec<_>>().join(" ");
        let groups: Vec<Vec<(String, String)>> = if mentioned.is_empty() {
            vec![shape_targets.clone()]
        } else {
            let w = b.working();
            mentioned
                .iter()
                .map(|p| {
                    w.parts
                        .get(p)
                        .map(|subs| subs.keys().map(|s| (p.clone(), s.clone())).collect())
                        .unwrap_or_default()
                })
                .collect()
        };
        let mut any = false;
        for group in groups {
            let mut candidates: Vec<(&PartBinding, String)> = Vec::new();
            for (p, s) in &group {
                for pb in d.maintained_parts().filter(|x| &x.part == p && &x.subpart == s) {
                    if rule.applies_to(&pb.property) {
                        candidates.push((pb, s.clone()));
                    }
                }
            }
            if distal {
                let tip: Vec<_> = candidates
                    .iter()
                    .filter(|(pb, _)| pb.binding.as_ref().is_some_and(|cb| cb.param == "radius2"))
                    .cloned()
                    .collect();
                if !tip.is_empty() {
                    candidates = tip;
                }
            }
            let mut best: Option<(f64, PartConstruct)> = None;
            for (pb, s) in candidates {
                let Some(pc) = quantified(&b, pb, &s, &rule.kind, degree, &phrase, &qt)? else {
                    continue;
                };
                let lp = b.log_prob(&Construct::Part(pc.clone()));
                if best.as_ref().is_none_or(|(bl, _)| lp > *bl) {
                    best = Some((lp, pc));
                }
            }
            if let Some((_, pc)) = best {
                b.put(pc);
                any = true;
            }
        }
        if !any {
            return Err(GroundError::UnboundOperation(word.to_string()));
        }
    }

    // Relation descriptors spoken about in the instruction.
    let present = b.present();
    let new_parts: Vec<&String> = created.iter().chain(companions.iter()).collect();
    let mut keys: Vec<RelationKey> = Vec::new();
    for rb in d.maintained_relations() {
        if !keys.contains(&rb.relation) {
            keys.push(rb.relation.clone());
        }
    }
    let instruction_words: Vec<&str> = tokens.iter().map(String::as_str).collect();
    for key in &keys {
        if !present.contains(&key.from) || !present.contains(&key.to) {
            continue;
        }
        let touches_new = new_parts.iter().any(|p| key.involves(p));
        let both_named = mentioned.contains(&key.from) && mentioned.contains(&key.to);
        if !touches_new && !both_named {
            continue;
        }
        let endpoint_words = [part_label(&key.from), part_label(&key.to)];
        for rb in d.maintained_relations().filter(|rb| rb.relation == *key && rb.permits("assign")) {
            let spoken = descriptor_tokens(&rb.descriptor)
                .into_iter()
                .filter(|t| !endpoint_words.iter().any(|l| l.split(' ').any(|w| w == t)))
                .any(|t| instruction_words.iter().any(|w| stem_eq(w, &t)));
            if spoken {
                b.assign(key, &rb.descriptor);
            }
        }
    }
    // A new part with no placement hangs off the neighbour the instruction names, else the first one.
    for p in &new_parts {
        if b.has_relation(p) {
            continue;
        }
        let present = b.present();
        let usable: Vec<&RelationKey> = keys
            .iter()
            .filter(|k| k.involves(p) && present.contains(&k.from) && present.contains(&k.to))
            .collect();
        let other = |k: &RelationKey| if k.from == **p { k.to.clone() } else { k.from.clone() };
        let preferred = usable
            .iter()
            .find(|k| mentioned.contains(&other(k)))
            .or_else(|| usable.first())
            .copied()
            .cloned();
        if let Some(key) = preferred {
            if let Some(rb) = d.maintained_relations().find(|rb| rb.relation == key && rb.permits("assign")) {
                let desc = rb.descriptor.clone();
                b.assign(&key, &desc);
            }
        }
    }

    if b.delta.is_empty() {
        return Err(GroundError::Ungroundable(text.trim().to_string()));
    }
    let log_prob = joint_log_prob(
        &instruction,
        &DslProgram { deltas: b.delta.clone(), ..DslProgram::default() },
        d,
    )
    .ok();
    let delta = b.delta;
    Ok(Grounding { instruction, delta, log_prob })
}

fn descriptor_tokens(descriptor: &str) -> Vec<String> {
    tokenize(descriptor)
}

fn rule_factor(kind: &RuleKind) -> f64 {
    match kind {
        RuleKind::Multiplicative { factor } => *factor,
        _ => 1.0,
    }
}

/// One candidate edit of a property for a degree word, or `None` when the
/// binding permits no fitting operation.
fn quantified(
    b: &Builder<'_>,
    pb: &PartBinding,
    subpart: &str,
    kind: &RuleKind,
    degree: f64,
    phrase: &str,
    qt: &super::quantifier::QuantifierTable,
) -> Result<Option<PartConstruct>, GroundError> {
    let part = pb.part.as_str();
    let current = current_value(&b.working(), b.d, b.c, part, subpart, &pb.property)?;
    let ctx = QuantifierContext {
        p25: Some(pb.p25.unwrap_or(current * 0.75)),
        p75: Some(pb.p75.unwrap_or(current * 1.25)),
        range: Some((0.0, f64::MAX)),
    };
    let set = |v: f64| PartConstruct::set(part, subpart, &pb.property, v.max(0.0));
    Ok(match kind {
        RuleKind::Multiplicative { factor } => {
            let delta = (factor - 1.0) * degree;
            let op = if delta < 0.0 { "decrease" } else { "increase" };
            if pb.permits(op) {
                Some(PartConstruct::adjust(part, subpart, &pb.property, op, delta))
            } else if pb.permits("set") {
                Some(set(apply_quantifier(current, phrase, qt, &ctx)?))
            } else {
                None
            }
        }
        RuleKind::Additive { .. } | RuleKind::Percentile { .. } => {
            pb.permits("set").then(|| apply_quantifier(current, phrase, qt, &ctx)).transpose()?.map(set)
        }
        RuleKind::Identity => None,
    })
}

/// "closer" / "farther" between two named parts adjust the spacing of their relationship.
fn ground_gap(
    b: &mut Builder<'_>,
    word: &str,
    factor: f64,
    degree: f64,
    mentioned: &[String],
) -> Result<(), GroundError> {
    let w = b.working();
    let delta = (factor - 1.0) * degree;
    for (i, x) in mentioned.iter().enumerate() {
        for y in &mentioned[i + 1..] {
            let Some(key) = w.relation_key_for(&RelationKey::new(x.as_str(), y.as_str())) else {
                continue;
            };
            for desc in &w.relationships[&key] {
                if b.d.relation_binding(&key, desc).is_some_and(|rb| rb.permits(word)) {
                    b.delta.push(Construct::Relation(RelationConstruct {
                        relation: key.clone(),
                        descriptor: desc.clone(),
                        operation: word.to_string(),
                        value: None,
                        delta: Some([delta, delta]),
                    }));
                    return Ok(());
                }
            }
        }
    }
    Err(GroundError::UnboundOperation(word.to_string()))
}
