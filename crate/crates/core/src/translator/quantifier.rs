//! Grounding of subjective degree words ("narrower", "slightly", "short") into
//! concrete value changes.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::construct::{DomainInterface, OperationOrder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantifierError {
    #[error("unknown quantifier `{0}`")]
    UnknownQuantifier(String),
    #[error("quantifier `{0}` needs domain percentiles for this property")]
    MissingPercentiles(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleKind {
    /// new = old · factor
    Multiplicative { factor: f64 },
    /// new = old + amount
    Additive { amount: f64 },
    /// new = the domain value at this percentile (25 = p25, 75 = p75)
    Percentile { percentile: f64 },
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantifierRule {
    #[serde(flatten)]
    pub kind: RuleKind,
    /// Properties the word speaks about; empty means any.
    #[serde(default)]
    pub properties: Vec<String>,
}

impl QuantifierRule {
    pub fn applies_to(&self, property: &str) -> bool {
        self.properties.is_empty() || self.properties.iter().any(|p| p == property)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantifierTable {
    pub version: String,
    pub rules: IndexMap<String, QuantifierRule>,
    /// Degree modifiers scale the deviation of a rule: 0.5 halves it, 2 doubles it.
    pub modifiers: IndexMap<String, f64>,
}

/// What the table needs to know about the property being changed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuantifierContext {
    pub p25: Option<f64>,
    pub p75: Option<f64>,
    pub range: Option<(f64, f64)>,
}

fn mult(factor: f64, props: &[&str]) -> QuantifierRule {
    QuantifierRule {
        kind: RuleKind::Multiplicative { factor },
        properties: props.iter().map(|s| s.to_string()).collect(),
    }
}

fn pct(percentile: f64, props: &[&str]) -> QuantifierRule {
    QuantifierRule {
        kind: RuleKind::Percentile { percentile },
        properties: props.iter().map(|s| s.to_string()).collect(),
    }
}

const THICKNESS: &[&str] = &["radius", "diameter", "width"];
const EXTENT: &[&str] = &["length", "height"];
const SIZE: &[&str] = &["radius", "diameter", "width", "length", "height"];

impl Default for QuantifierTable {
    fn default() -> Self {
        let mut rules = IndexMap::new();
        for w in ["narrower", "thinner", "slimmer"] {
            rules.insert(w.to_string(), mult(0.8, THICKNESS));
        }
        for w in ["wider", "thicker", "broader"] {
            rules.insert(w.to_string(), mult(1.2, THICKNESS));
        }
        rules.insert("shorter".into(), mult(0.8, EXTENT));
        rules.insert("longer".into(), mult(1.2, EXTENT));
        rules.insert("taller".into(), mult(1.2, &["height"]));
        rules.insert("lower".into(), mult(0.8, &["height"]));
        for w in ["flatten", "flatter", "flattened"] {
            rules.insert(w.to_string(), mult(0.8, &["height"]));
        }
        for w in ["bigger", "larger"] {
            rules.insert(w.to_string(), mult(1.2, SIZE));
        }
        rules.insert("smaller".into(), mult(0.8, SIZE));
        rules.insert("increase".into(), mult(1.2, &[]));
        rules.insert("decrease".into(), mult(0.8, &[]));
        rules.insert("farther".into(), mult(1.2, &["gap"]));
        rules.insert("closer".into(), mult(0.8, &["gap"]));
        for w in ["curved", "bent", "curve"] {
            rules.insert(
                w.to_string(),
                QuantifierRule {
                    kind: RuleKind::Additive { amount: 15.0 },
                    properties: vec!["angle".into()],
                },
            );
        }
        rules.insert("short".into(), pct(25.0, EXTENT));
        rules.insert("small".into(), pct(25.0, SIZE));
        rules.insert("tall".into(), pct(75.0, &["height"]));
        rules.insert("long".into(), pct(75.0, EXTENT));
        for w in ["large", "big"] {
            rules.insert(w.to_string(), pct(75.0, SIZE));
        }
        rules.insert(
            "same".into(),
            QuantifierRule { kind: RuleKind::Identity, properties: vec![] },
        );
        let modifiers = [("slightly", 0.5), ("somewhat", 0.5), ("bit", 0.5), ("much", 2.0), ("far", 2.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        QuantifierTable { version: "v1".into(), rules, modifiers }
    }
}

impl QuantifierTable {
    pub fn rule(&self, token: &str) -> Option<&QuantifierRule> {
        self.rules.get(token)
    }

    pub fn modifier(&self, token: &str) -> Option<f64> {
        self.modifiers.get(token).copied()
    }

    /// Splits a phrase such as "slightly wider" into the combined modifier and the rule word.
    pub fn parse_phrase<'a>(&self, phrase: &'a str) -> Result<(f64, &'a str), QuantifierError> {
        let mut degree = 1.0;
        let mut word = None;
        for tok in phrase.split_whitespace() {
            if let Some(m) = self.modifier(tok) {
                degree *= m;
            } else {
                word = Some(tok);
            }
        }
        let word = word.ok_or_else(|| QuantifierError::UnknownQuantifier(phrase.to_string()))?;
        if !self.rules.contains_key(word) {
            return Err(QuantifierError::UnknownQuantifier(word.to_string()));
        }
        Ok((degree, word))
    }

    /// Second-order operations used by the interface that have no rule here.
    pub fn missing_rules(&self, d: &DomainInterface) -> Vec<String> {
        let ops = d
            .part_constructs
            .iter()
            .flat_map(|b| b.operations.iter())
            .chain(d.relation_constructs.iter().flat_map(|b| b.operations.iter()));
        let mut missing: Vec<String> = Vec::new();
        for op in ops {
            if OperationOrder::of(op) == OperationOrder::Second
                && !self.rules.contains_key(op.as_str())
                && !missing.contains(op)
            {
                missing.push(op.clone());
            }
        }
        missing
    }
}

/// Value at a percentile, interpolated linearly through the p25 and p75 anchors.
fn percentile_value(p: f64, ctx: &QuantifierContext, word: &str) -> Result<f64, QuantifierError> {
    match (ctx.p25, ctx.p75) {
        (Some(lo), Some(hi)) => Ok(lo + (p - 25.0) / 50.0 * (hi - lo)),
        _ => Err(QuantifierError::MissingPercentiles(word.to_string())),
    }
}

/// Applies a quantifier phrase to a value and clamps the result to the context range.
pub fn apply_quantifier(
    value: f64,
    phrase: &str,
    qt: &QuantifierTable,
    ctx: &QuantifierContext,
) -> Result<f64, QuantifierError> {
    let (degree, word) = qt.parse_phrase(phrase)?;
    let rule = &qt.rules[word];
    let out = match rule.kind {
        RuleKind::Multiplicative { factor } => value * (1.0 + (factor - 1.0) * degree),
        RuleKind::Additive { amount } => value + amount * degree,
        RuleKind::Percentile { percentile } => {
            percentile_value(50.0 + (percentile - 50.0) * degree, ctx, word)?
        }
        RuleKind::Identity => value,
    };
    Ok(match ctx.range {
        Some((lo, hi)) => out.clamp(lo, hi),
        None => out,
    })
}
