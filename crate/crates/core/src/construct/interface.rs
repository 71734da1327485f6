//! The adapted interface DSL for one product domain: construct templates with
//! their permissible operations and command bindings, the concept tree, and the
//! conditional tables of the hierarchical probability model.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::RelationKey;
use crate::adapt::tree::ConceptTree;
use crate::translator::quantifier::QuantifierTable;

pub const INTERFACE_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum InterfaceError {
    #[error("interface JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported interface version `{0}`")]
    Version(String),
    #[error("table `{factor}` row `{row}` sums to {sum}")]
    RowSum { factor: String, row: String, sum: f64 },
    #[error("template `{0}` has no permissible operations")]
    EmptyOperations(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Feasibility {
    PointToPoint,
    Decompose,
    Prune,
}

/// Where a part property lands in the command dialect. `param` is either a
/// primitive parameter (`radius`), a post-transform component (`scale.z`,
/// `rotate.y`) or a modifier parameter (`fillet.radius`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandBinding {
    pub command: String,
    pub param: String,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartBinding {
    pub part: String,
    pub subpart: String,
    pub property: String,
    pub operations: Vec<String>,
    pub feasibility: Feasibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<CommandBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p25: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p75: Option<f64>,
    pub score: f64,
}

impl PartBinding {
    pub fn attribute_path(&self) -> String {
        format!("{}/{}/{}", self.part, self.subpart, self.property)
    }

    pub fn permits(&self, operation: &str) -> bool {
        self.feasibility == Feasibility::PointToPoint && self.operations.iter().any(|o| o == operation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationBinding {
    pub relation: RelationKey,
    pub descriptor: String,
    pub operations: Vec<String>,
    pub feasibility: Feasibility,
    pub score: f64,
}

impl RelationBinding {
    pub fn permits(&self, operation: &str) -> bool {
        self.feasibility == Feasibility::PointToPoint && self.operations.iter().any(|o| o == operation)
    }
}

/// Conditional table: row label → outcome label → probability.
pub type Factor = IndexMap<String, IndexMap<String, f64>>;

/// One table per factor of the hierarchical model. Rows are keyed as follows:
///
/// * `concept`: instruction kind (`global`, `part`, `mixed`) → part id or relation key
/// * `attribute`: part id → `subpart/property`; relation key → descriptor
/// * `part_operation`: `part/subpart/property` → operation
/// * `relation_operation`: `A <-> B/descriptor` → operation
/// * `part_value`: `part/subpart/property` → value bin (`v{i}`) or categorical token
/// * `relation_value`: `A <-> B/descriptor` → `on` / `off`
/// * `part_delta`: operation → delta bin (`d{i}`)
/// * `relation_delta`: operation → `d{i}|d{j}`
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CondTables {
    pub concept: Factor,
    pub attribute: Factor,
    pub part_operation: Factor,
    pub relation_operation: Factor,
    pub part_value: Factor,
    pub relation_value: Factor,
    pub part_delta: Factor,
    pub relation_delta: Factor,
    pub value_edges: Vec<f64>,
    pub delta_edges: Vec<f64>,
}

pub const DEFAULT_VALUE_EDGES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_DELTA_EDGES: [f64; 6] = [-0.35, -0.15, -0.05, 0.05, 0.15, 0.35];

fn bin(edges: &[f64], x: f64) -> usize {
    edges.iter().take_while(|&&e| e <= x).count()
}

impl CondTables {
    pub fn factors(&self) -> [(&'static str, &Factor); 8] {
        [
            ("concept", &self.concept),
            ("attribute", &self.attribute),
            ("part_operation", &self.part_operation),
            ("relation_operation", &self.relation_operation),
            ("part_value", &self.part_value),
            ("relation_value", &self.relation_value),
            ("part_delta", &self.part_delta),
            ("relation_delta", &self.relation_delta),
        ]
    }

    pub fn check(&self) -> Result<(), InterfaceError> {
        for (name, factor) in self.factors() {
            for (row, outcomes) in factor {
                let sum: f64 = outcomes.values().sum();
                if (sum - 1.0).abs() > 1e-9 || outcomes.values().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(InterfaceError::RowSum {
                        factor: name.to_string(),
                        row: row.clone(),
                        sum,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn value_bin(&self, v: f64) -> String {
        format!("v{}", bin(&self.value_edges, v))
    }

    pub fn delta_bin(&self, d: f64) -> String {
        format!("d{}", bin(&self.delta_edges, d))
    }

    pub fn value_bin_count(&self) -> usize {
        self.value_edges.len() + 1
    }

    pub fn delta_bin_count(&self) -> usize {
        self.delta_edges.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainInterface {
    pub version: String,
    pub domain: String,
    pub part_constructs: Vec<PartBinding>,
    pub relation_constructs: Vec<RelationBinding>,
    #[serde(default)]
    pub concept_tree: ConceptTree,
    pub tables: CondTables,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantifiers: Option<QuantifierTable>,
}

impl DomainInterface {
    pub fn from_json(text: &str) -> Result<Self, InterfaceError> {
        let d: DomainInterface = serde_json::from_str(text)?;
        if d.version != INTERFACE_VERSION {
            return Err(InterfaceError::Version(d.version));
        }
        d.tables.check()?;
        for b in &d.part_constructs {
            if b.feasibility == Feasibility::PointToPoint && b.operations.is_empty() {
                return Err(InterfaceError::EmptyOperations(b.attribute_path()));
            }
        }
        for b in &d.relation_constructs {
            if b.feasibility == Feasibility::PointToPoint && b.operations.is_empty() {
                return Err(InterfaceError::EmptyOperations(format!(
                    "{}/{}",
                    b.relation, b.descriptor
                )));
            }
        }
        Ok(d)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("interface always serializes");
        s.push('\n');
        s
    }

    /// Part ids in first-declaration order, including parts that appear only as
    /// relation endpoints.
    pub fn parts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        let names = self.part_constructs.iter().map(|b| b.part.as_str()).chain(
            self.relation_constructs
                .iter()
                .flat_map(|r| [r.relation.from.as_str(), r.relation.to.as_str()]),
        );
        for p in names {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    pub fn declares_part(&self, part: &str) -> bool {
        self.part_constructs.iter().any(|b| b.part == part)
            || self.relation_constructs.iter().any(|r| r.relation.involves(part))
    }

    /// Maintained subparts of a part, in declaration order.
    pub fn subparts_of(&self, part: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for b in self.maintained_parts().filter(|b| b.part == part) {
            if !out.contains(&b.subpart.as_str()) {
                out.push(&b.subpart);
            }
        }
        out
    }

    pub fn maintained_parts(&self) -> impl Iterator<Item = &PartBinding> {
        self.part_constructs
            .iter()
            .filter(|b| b.feasibility == Feasibility::PointToPoint)
    }

    pub fn maintained_relations(&self) -> impl Iterator<Item = &RelationBinding> {
        self.relation_constructs
            .iter()
            .filter(|b| b.feasibility == Feasibility::PointToPoint)
    }

    pub fn part_binding(&self, part: &str, subpart: &str, property: &str) -> Option<&PartBinding> {
        self.part_constructs
            .iter()
            .find(|b| b.part == part && b.subpart == subpart && b.property == property)
    }

    /// Relation template for the unordered pair, regardless of key orientation.
    pub fn relation_binding(&self, key: &RelationKey, descriptor: &str) -> Option<&RelationBinding> {
        let rev = key.reversed();
        self.relation_constructs
            .iter()
            .find(|b| (b.relation == *key || b.relation == rev) && b.descriptor == descriptor)
    }

    /// Distinct relation keys touching `part`, in declaration order.
    pub fn relation_keys_of(&self, part: &str) -> Vec<&RelationKey> {
        let mut out: Vec<&RelationKey> = Vec::new();
        for b in self.maintained_relations().filter(|b| b.relation.involves(part)) {
            if !out.contains(&&b.relation) {
                out.push(&b.relation);
            }
        }
        out
    }

    pub fn quantifier_table(&self) -> QuantifierTable {
        self.quantifiers.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pairs: &[(&str, f64)]) -> IndexMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn toy() -> DomainInterface {
        let mut tables = CondTables {
            value_edges: DEFAULT_VALUE_EDGES.to_vec(),
            delta_edges: DEFAULT_DELTA_EDGES.to_vec(),
            ..Default::default()
        };
        tables
            .concept
            .insert("part".into(), row(&[("body", 0.75), ("spout", 0.25)]));
        DomainInterface {
            version: INTERFACE_VERSION.into(),
            domain: "toy".into(),
            part_constructs: vec![PartBinding {
                part: "body".into(),
                subpart: "sphere_0".into(),
                property: "radius".into(),
                operations: vec!["set".into()],
                feasibility: Feasibility::PointToPoint,
                binding: None,
                default: Some(1.0),
                p25: None,
                p75: None,
                score: 0.5,
            }],
            relation_constructs: vec![RelationBinding {
                relation: RelationKey::new("body", "spout"),
                descriptor: "side".into(),
                operations: vec!["assign".into()],
                feasibility: Feasibility::PointToPoint,
                score: 0.5,
            }],
            concept_tree: ConceptTree::default(),
            tables,
            quantifiers: None,
        }
    }

    #[test]
    fn json_round_trip_checks_rows() {
        let d = toy();
        let back = DomainInterface::from_json(&d.to_json()).unwrap();
        assert_eq!(back, d);

        let mut bad = toy();
        bad.tables
            .concept
            .insert("global".into(), row(&[("body", 0.5), ("spout", 0.4)]));
        assert!(matches!(
            DomainInterface::from_json(&bad.to_json()),
            Err(InterfaceError::RowSum { .. })
        ));

        let mut bad = toy();
        bad.version = "v0".into();
        assert!(matches!(
            DomainInterface::from_json(&bad.to_json()),
            Err(InterfaceError::Version(_))
        ));
    }

    #[test]
    fn relation_lookup_ignores_orientation() {
        let d = toy();
        assert!(d.relation_binding(&RelationKey::new("spout", "body"), "side").is_some());
        assert!(d.declares_part("spout"));
        assert_eq!(d.parts(), ["body", "spout"]);
    }

    #[test]
    fn bins() {
        let t = toy().tables;
        assert_eq!(t.value_bin(0.1), "v0");
        assert_eq!(t.value_bin(1.0), "v3");
        assert_eq!(t.value_bin(100.0), "v6");
        assert_eq!(t.delta_bin(-0.2), "d1");
        assert_eq!(t.delta_bin(0.2), "d5");
    }
}
