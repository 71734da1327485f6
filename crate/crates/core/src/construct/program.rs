//! Designer-side DSL programs: the `Parts` / `Relationships` JSON document plus
//! the ordered list of per-step edits that produced it.

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use super::{Construct, ConstructError, DomainInterface, RelationKey, SubpartId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("malformed program JSON: {0}")]
    MalformedJson(String),
    #[error("missing section `{0}`")]
    MissingSection(&'static str),
    #[error("relationship references undeclared part `{0}`")]
    DanglingRelationEndpoint(String),
    #[error(transparent)]
    Construct(#[from] ConstructError),
}

/// Parts map each part id to its subparts, and each subpart to the property
/// names it exposes. Relationship descriptors are kept per `A <-> B` key.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DslProgram {
    pub parts: IndexMap<String, IndexMap<String, Vec<String>>>,
    pub relationships: IndexMap<RelationKey, Vec<String>>,
    pub deltas: Vec<Construct>,
}

impl DslProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty() && self.relationships.is_empty() && self.deltas.is_empty()
    }

    pub fn declares(&self, part: &str) -> bool {
        self.parts.contains_key(part)
    }

    /// Existing key for the unordered pair, in whichever orientation it was declared.
    pub fn relation_key_for(&self, key: &RelationKey) -> Option<RelationKey> {
        if self.relationships.contains_key(key) {
            Some(key.clone())
        } else {
            let rev = key.reversed();
            self.relationships.contains_key(&rev).then_some(rev)
        }
    }

    /// Applies a delta in order; the resulting program is the previous one plus the delta.
    pub fn apply(&mut self, delta: &[Construct]) {
        for c in delta {
            self.apply_construct(c.clone());
        }
    }

    pub fn apply_construct(&mut self, c: Construct) {
        match &c {
            Construct::Part(p) => {
                let props = self
                    .parts
                    .entry(p.part.clone())
                    .or_default()
                    .entry(p.subpart.clone())
                    .or_default();
                if !props.contains(&p.property) {
                    props.push(p.property.clone());
                }
            }
            Construct::Relation(r) => {
                let key = self
                    .relation_key_for(&r.relation)
                    .unwrap_or_else(|| r.relation.clone());
                let switching_off = r.operation == "assign" && r.value.as_deref() == Some("off");
                if switching_off {
                    if let Some(list) = self.relationships.get_mut(&key) {
                        list.retain(|d| d != &r.descriptor);
                        if list.is_empty() {
                            self.relationships.shift_remove(&key);
                        }
                    }
                } else {
                    let list = self.relationships.entry(key).or_default();
                    if !list.contains(&r.descriptor) {
                        list.push(r.descriptor.clone());
                    }
                }
            }
        }
        self.deltas.push(c);
    }

    /// Replays only the deltas onto an empty program.
    pub fn replay(deltas: &[Construct]) -> Self {
        let mut p = DslProgram::new();
        p.apply(deltas);
        p
    }

    pub fn to_json_value(&self) -> Json {
        let mut root = Map::new();
        let mut parts = Map::new();
        for (part, subparts) in &self.parts {
            let mut sub = Map::new();
            for (id, props) in subparts {
                sub.insert(
                    id.clone(),
                    Json::Array(props.iter().cloned().map(Json::String).collect()),
                );
            }
            parts.insert(part.clone(), Json::Object(sub));
        }
        root.insert("Parts".into(), Json::Object(parts));
        let mut rels = Map::new();
        for (key, descs) in &self.relationships {
            rels.insert(
                key.to_string(),
                Json::Array(descs.iter().cloned().map(Json::String).collect()),
            );
        }
        root.insert("Relationships".into(), Json::Object(rels));
        if !self.deltas.is_empty() {
            let deltas = self
                .deltas
                .iter()
                .map(|c| serde_json::to_value(c).expect("constructs always serialize"))
                .collect();
            root.insert("Deltas".into(), Json::Array(deltas));
        }
        Json::Object(root)
    }

    fn from_json_value(root: &Json, known: &dyn Fn(&str) -> bool) -> Result<Self, ProgramError> {
        let obj = root
            .as_object()
            .ok_or_else(|| ProgramError::MalformedJson("top level must be an object".into()))?;
        if let Some(k) = obj
            .keys()
            .find(|k| !matches!(k.as_str(), "Parts" | "Relationships" | "Deltas"))
        {
            return Err(ProgramError::MalformedJson(format!("unknown key `{k}`")));
        }
        let parts_json = obj.get("Parts").ok_or(ProgramError::MissingSection("Parts"))?;
        let rels_json = obj
            .get("Relationships")
            .ok_or(ProgramError::MissingSection("Relationships"))?;

        let mut program = DslProgram::new();
        let parts_obj = parts_json
            .as_object()
            .ok_or_else(|| ProgramError::MalformedJson("`Parts` must be an object".into()))?;
        for (part, subparts) in parts_obj {
            let subparts = subparts.as_object().ok_or_else(|| {
                ProgramError::MalformedJson(format!("part `{part}` must map subparts to lists"))
            })?;
            let mut map = IndexMap::new();
            for (id, props) in subparts {
                id.parse::<SubpartId>()?;
                map.insert(id.clone(), string_list(props, &format!("{part}.{id}"))?);
            }
            program.parts.insert(part.clone(), map);
        }

        let rels_obj = rels_json.as_object().ok_or_else(|| {
            ProgramError::MalformedJson("`Relationships` must be an object".into())
        })?;
        for (key, descs) in rels_obj {
            let rk: RelationKey = key.parse()?;
            for end in [&rk.from, &rk.to] {
                if !program.parts.contains_key(end.as_str()) && !known(end) {
                    return Err(ProgramError::DanglingRelationEndpoint(end.clone()));
                }
            }
            program.relationships.insert(rk, string_list(descs, key)?);
        }

        if let Some(deltas) = obj.get("Deltas") {
            let list = deltas
                .as_array()
                .ok_or_else(|| ProgramError::MalformedJson("`Deltas` must be an array".into()))?;
            for d in list {
                let c: Construct = serde_json::from_value(d.clone())
                    .map_err(|e| ProgramError::MalformedJson(format!("delta: {e}")))?;
                c.check()?;
                program.deltas.push(c);
            }
        }
        Ok(program)
    }
}

fn string_list(v: &Json, ctx: &str) -> Result<Vec<String>, ProgramError> {
    let arr = v
        .as_array()
        .ok_or_else(|| ProgramError::MalformedJson(format!("`{ctx}` must be a list of strings")))?;
    arr.iter()
        .map(|s| {
            s.as_str().map(str::to_string).ok_or_else(|| {
                ProgramError::MalformedJson(format!("`{ctx}` must contain only strings"))
            })
        })
        .collect()
}

/// Parses a program, requiring every relationship endpoint to be a declared part.
pub fn parse_program(json_text: &str) -> Result<DslProgram, ProgramError> {
    parse_program_with(json_text, None)
}

/// Parses a program; relationship endpoints may also be parts declared by the interface.
pub fn parse_program_with(
    json_text: &str,
    interface: Option<&DomainInterface>,
) -> Result<DslProgram, ProgramError> {
    let root: Json =
        serde_json::from_str(json_text).map_err(|e| ProgramError::MalformedJson(e.to_string()))?;
    let known = |p: &str| interface.is_some_and(|d| d.declares_part(p));
    DslProgram::from_json_value(&root, &known)
}

pub fn serialize_program(p: &DslProgram) -> String {
    canonical_json(&p.to_json_value())
}

/// Re-renders arbitrary JSON text in canonical layout.
pub fn canonicalize(json_text: &str) -> Result<String, ProgramError> {
    let v: Json =
        serde_json::from_str(json_text).map_err(|e| ProgramError::MalformedJson(e.to_string()))?;
    Ok(canonical_json(&v))
}

/// Two-space indentation, keys in document order, and lists of scalars kept on
/// one line, which is the layout the hand-written program listings use.
pub fn canonical_json(v: &Json) -> String {
    let mut out = String::new();
    write_value(v, 0, &mut out);
    out
}

fn is_scalar(v: &Json) -> bool {
    !matches!(v, Json::Array(_) | Json::Object(_))
}

fn write_value(v: &Json, indent: usize, out: &mut String) {
    match v {
        Json::Object(map) if map.is_empty() => out.push_str("{}"),
        Json::Object(map) => {
            out.push_str("{\n");
            for (i, (k, val)) in map.iter().enumerate() {
                pad(out, indent + 2);
                out.push_str(&Json::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(val, indent + 2, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
        Json::Array(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "{item}");
            }
            out.push(']');
        }
        Json::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, indent + 2);
                write_value(item, indent + 2, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        scalar => {
            let _ = write!(out, "{scalar}");
        }
    }
}

fn pad(out: &mut String, n: usize) {
    out.extend(std::iter::repeat_n(' ', n));
}

impl Serialize for DslProgram {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DslProgram {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Json::deserialize(deserializer)?;
        DslProgram::from_json_value(&v, &|_| true).map_err(serde::de::Error::custom)
    }
}
