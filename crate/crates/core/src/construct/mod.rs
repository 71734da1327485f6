//! Typed constructs of the interface DSL.
//!
//! A part construct names a part, one of its primitive subparts, a physical
//! property of that subpart, the operation applied to it and either a
//! first-order value or a second-order adjustment. Relation constructs do the
//! same for a pair of parts and one joint descriptor.

pub mod interface;
pub mod probability;
pub mod program;
pub mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use interface::{
    CommandBinding, CondTables, DomainInterface, Factor, Feasibility, InterfaceError, PartBinding,
    RelationBinding,
};
pub use probability::{construct_log_prob, joint_log_prob, ProbabilityError};
pub use program::{
    canonical_json, canonicalize, parse_program, parse_program_with, serialize_program, DslProgram,
    ProgramError,
};
pub use validate::{validate_bindings, ValidationError, ValidationReport, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructError {
    #[error("subpart identifier `{0}` does not follow the name_index pattern")]
    BadSubpart(String),
    #[error("relation key `{0}` is not of the form `A <-> B`")]
    BadRelationKey(String),
    #[error("construct `{0}`: first-order operations need a value and no delta")]
    FirstOrderShape(String),
    #[error("construct `{0}`: second-order operations need a delta and no value")]
    SecondOrderShape(String),
    #[error("construct `{0}`: numeric value must be finite and non-negative")]
    NegativeValue(String),
    #[error("construct `{0}`: empty identifier")]
    EmptyField(String),
}

/// Whether an operation assigns a value or adjusts an existing one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperationOrder {
    First,
    Second,
}

impl OperationOrder {
    pub fn of(operation: &str) -> Self {
        match operation {
            "set" | "assign" => OperationOrder::First,
            _ => OperationOrder::Second,
        }
    }
}

/// First-order value of a property: a magnitude in scene units or a categorical token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Token(String),
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Token(_) => None,
        }
    }
}

/// `name_index` identifier of a primitive subpart, e.g. `cylinder_1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubpartId {
    pub shape: String,
    pub index: u32,
}

impl SubpartId {
    pub fn new(shape: impl Into<String>, index: u32) -> Self {
        Self { shape: shape.into(), index }
    }
}

impl FromStr for SubpartId {
    type Err = ConstructError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (shape, index) = s
            .rsplit_once('_')
            .ok_or_else(|| ConstructError::BadSubpart(s.to_string()))?;
        if shape.is_empty() || index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ConstructError::BadSubpart(s.to_string()));
        }
        let index = index
            .parse()
            .map_err(|_| ConstructError::BadSubpart(s.to_string()))?;
        Ok(SubpartId { shape: shape.to_string(), index })
    }
}

impl fmt::Display for SubpartId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.shape, self.index)
    }
}

/// Key of a relationship between two parts, rendered as `A <-> B`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationKey {
    pub from: String,
    pub to: String,
}

impl RelationKey {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self { from: from.into(), to: to.into() }
    }

    pub fn involves(&self, part: &str) -> bool {
        self.from == part || self.to == part
    }

    pub fn reversed(&self) -> Self {
        Self { from: self.to.clone(), to: self.from.clone() }
    }
}

impl FromStr for RelationKey {
    type Err = ConstructError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (from, to) = s
            .split_once(" <-> ")
            .ok_or_else(|| ConstructError::BadRelationKey(s.to_string()))?;
        let valid = |p: &str| !p.is_empty() && p.trim() == p && !p.contains(" <-> ");
        if !valid(from) || !valid(to) {
            return Err(ConstructError::BadRelationKey(s.to_string()));
        }
        Ok(RelationKey::new(from, to))
    }
}

impl fmt::Display for RelationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} <-> {}", self.from, self.to)
    }
}

impl Serialize for RelationKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RelationKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartConstruct {
    pub part: String,
    pub subpart: String,
    pub property: String,
    pub operation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl PartConstruct {
    pub fn set(part: &str, subpart: &str, property: &str, value: f64) -> Self {
        Self {
            part: part.into(),
            subpart: subpart.into(),
            property: property.into(),
            operation: "set".into(),
            value: Some(Value::Number(value)),
            delta: None,
        }
    }

    pub fn adjust(part: &str, subpart: &str, property: &str, operation: &str, delta: f64) -> Self {
        Self {
            part: part.into(),
            subpart: subpart.into(),
            property: property.into(),
            operation: operation.into(),
            value: None,
            delta: Some(delta),
        }
    }

    pub fn subpart_id(&self) -> Result<SubpartId, ConstructError> {
        self.subpart.parse()
    }

    /// `part/subpart/property`
    pub fn attribute_path(&self) -> String {
        format!("{}/{}/{}", self.part, self.subpart, self.property)
    }

    pub fn check(&self) -> Result<(), ConstructError> {
        let key = self.key().0;
        if self.part.is_empty() || self.property.is_empty() || self.operation.is_empty() {
            return Err(ConstructError::EmptyField(key));
        }
        self.subpart_id()?;
        match OperationOrder::of(&self.operation) {
            OperationOrder::First => {
                if self.value.is_none() || self.delta.is_some() {
                    return Err(ConstructError::FirstOrderShape(key));
                }
            }
            OperationOrder::Second => {
                if self.delta.is_none() || self.value.is_some() {
                    return Err(ConstructError::SecondOrderShape(key));
                }
            }
        }
        if let Some(Value::Number(v)) = &self.value {
            if !v.is_finite() || *v < 0.0 {
                return Err(ConstructError::NegativeValue(key));
            }
        }
        if let Some(d) = self.delta {
            if !d.is_finite() {
                return Err(ConstructError::SecondOrderShape(key));
            }
        }
        Ok(())
    }

    pub fn key(&self) -> ConstructKey {
        ConstructKey(format!(
            "{}/{}/{}/{}",
            self.part, self.subpart, self.property, self.operation
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationConstruct {
    pub relation: RelationKey,
    pub descriptor: String,
    pub operation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<[f64; 2]>,
}

impl RelationConstruct {
    pub fn assign(relation: RelationKey, descriptor: &str) -> Self {
        Self {
            relation,
            descriptor: descriptor.into(),
            operation: "assign".into(),
            value: Some("on".into()),
            delta: None,
        }
    }

    pub fn check(&self) -> Result<(), ConstructError> {
        let key = self.key().0;
        if self.descriptor.is_empty() || self.operation.is_empty() {
            return Err(ConstructError::EmptyField(key));
        }
        match OperationOrder::of(&self.operation) {
            OperationOrder::First => {
                if self.value.is_none() || self.delta.is_some() {
                    return Err(ConstructError::FirstOrderShape(key));
                }
            }
            OperationOrder::Second => match self.delta {
                Some([a, b]) if a.is_finite() && b.is_finite() && self.value.is_none() => {}
                _ => return Err(ConstructError::SecondOrderShape(key)),
            },
        }
        Ok(())
    }

    pub fn key(&self) -> ConstructKey {
        ConstructKey(format!("{}/{}/{}", self.relation, self.descriptor, self.operation))
    }
}

/// Identity of a construct irrespective of its values: the path down the concept tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConstructKey(pub String);

impl fmt::Display for ConstructKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Construct {
    Part(PartConstruct),
    Relation(RelationConstruct),
}

impl Construct {
    pub fn key(&self) -> ConstructKey {
        match self {
            Construct::Part(p) => p.key(),
            Construct::Relation(r) => r.key(),
        }
    }

    pub fn check(&self) -> Result<(), ConstructError> {
        match self {
            Construct::Part(p) => p.check(),
            Construct::Relation(r) => r.check(),
        }
    }

    pub fn operation(&self) -> &str {
        match self {
            Construct::Part(p) => &p.operation,
            Construct::Relation(r) => &r.operation,
        }
    }

    /// Path from the domain root: `[part, subpart, property, operation]` or
    /// `[relation, descriptor, operation]`.
    pub fn tree_path(&self) -> Vec<String> {
        match self {
            Construct::Part(p) => vec![
                p.part.clone(),
                p.subpart.clone(),
                p.property.clone(),
                p.operation.clone(),
            ],
            Construct::Relation(r) => vec![
                r.relation.to_string(),
                r.descriptor.clone(),
                r.operation.clone(),
            ],
        }
    }

    /// Parts whose state this construct touches.
    pub fn parts(&self) -> Vec<&str> {
        match self {
            Construct::Part(p) => vec![p.part.as_str()],
            Construct::Relation(r) => vec![r.relation.from.as_str(), r.relation.to.as_str()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InstructionKind {
    Global,
    Part,
    Mixed,
}

impl InstructionKind {
    pub fn label(self) -> &'static str {
        match self {
            InstructionKind::Global => "global",
            InstructionKind::Part => "part",
            InstructionKind::Mixed => "mixed",
        }
    }
}

// Words that speak about layout between parts rather than about one part.
const LAYOUT_WORDS: &[&str] = &[
    "align", "aligned", "arrange", "opposite", "symmetrical", "symmetric", "position",
    "beneath", "under", "underneath", "above", "attach", "between", "beside", "parallel",
    "perpendicular", "axis", "pairs", "side", "top", "front", "rear", "behind", "space",
];
const PART_WORDS: &[&str] = &[
    "make", "shape", "form", "round", "rounded", "flatten", "narrower", "wider", "shorter",
    "longer", "taller", "short", "tall", "curved", "sphere", "cylinder", "cylindrical", "torus",
    "cone", "box", "rectangular", "dome", "radius", "height", "length", "width", "diameter",
    "thinner", "thicker", "bigger", "smaller", "larger", "create", "extend",
];

/// A designer instruction with its inferred scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub kind: InstructionKind,
}

impl Instruction {
    pub fn new(text: &str) -> Option<Self> {
        let text = text.trim();
        if text.is_empty() {
            return None;
        }
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let layout = words.iter().any(|w| LAYOUT_WORDS.contains(&w.as_str()));
        let part = words.iter().any(|w| PART_WORDS.contains(&w.as_str()));
        let kind = match (layout, part) {
            (true, true) => InstructionKind::Mixed,
            (true, false) => InstructionKind::Global,
            _ => InstructionKind::Part,
        };
        Some(Instruction { text: text.to_string(), kind })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subpart_ids_follow_name_index() {
        let id: SubpartId = "cylinder_1".parse().unwrap();
        assert_eq!(id, SubpartId::new("cylinder", 1));
        let id: SubpartId = "u_shape_frame_0".parse().unwrap();
        assert_eq!(id.shape, "u_shape_frame");
        assert!("cylinder".parse::<SubpartId>().is_err());
        assert!("cylinder_".parse::<SubpartId>().is_err());
        assert!("_3".parse::<SubpartId>().is_err());
        assert!("cyl_-1".parse::<SubpartId>().is_err());
    }

    #[test]
    fn relation_keys_need_single_spaces() {
        let key: RelationKey = "body <-> handle".parse().unwrap();
        assert_eq!(key, RelationKey::new("body", "handle"));
        assert_eq!(key.to_string(), "body <-> handle");
        assert!("body<->handle".parse::<RelationKey>().is_err());
        assert!("body  <-> handle".parse::<RelationKey>().is_err());
        assert!(" <-> handle".parse::<RelationKey>().is_err());
    }

    #[test]
    fn value_presence_follows_operation_order() {
        let ok = PartConstruct::set("body", "sphere_0", "radius", 4.0);
        assert!(ok.check().is_ok());
        let mut bad = ok.clone();
        bad.delta = Some(0.1);
        assert!(matches!(bad.check(), Err(ConstructError::FirstOrderShape(_))));
        let adj = PartConstruct::adjust("spout", "cone_0", "radius", "decrease", -0.2);
        assert!(adj.check().is_ok());
        let mut bad = adj.clone();
        bad.delta = None;
        assert!(matches!(bad.check(), Err(ConstructError::SecondOrderShape(_))));
        let neg = PartConstruct::set("body", "sphere_0", "radius", -1.0);
        assert!(matches!(neg.check(), Err(ConstructError::NegativeValue(_))));
    }

    #[test]
    fn relation_construct_shapes() {
        let key = RelationKey::new("body", "handle");
        assert!(RelationConstruct::assign(key.clone(), "opposite_spout").check().is_ok());
        let closer = RelationConstruct {
            relation: key,
            descriptor: "side".into(),
            operation: "closer".into(),
            value: None,
            delta: Some([-0.1, -0.1]),
        };
        assert!(closer.check().is_ok());
    }

    #[test]
    fn construct_json_is_tagged() {
        let c = Construct::Part(PartConstruct::adjust("spout", "cone_0", "radius", "decrease", -0.2));
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"part","part":"spout","subpart":"cone_0","property":"radius","operation":"decrease","delta":-0.2}"#
        );
        let back: Construct = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.key().0, "spout/cone_0/radius/decrease");
    }

    #[test]
    fn instruction_kind_is_inferred() {
        let i = Instruction::new("Make the spout narrower toward the tip.").unwrap();
        assert_eq!(i.kind, InstructionKind::Part);
        let i = Instruction::new("Keep the handle and the spout symmetrical.").unwrap();
        assert_eq!(i.kind, InstructionKind::Global);
        let i = Instruction::new("Attach a torus handle to the opposite side of the spout.").unwrap();
        assert_eq!(i.kind, InstructionKind::Mixed);
        assert!(Instruction::new("   ").is_none());
    }
}
