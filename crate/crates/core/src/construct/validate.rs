//! Checks that a program only uses concepts and operations the interface binds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Construct, DomainInterface, DslProgram, Feasibility};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("no adapted interface for domain `{0}`")]
    UnknownDomain(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownConcept { concept: String },
    InfeasibleConcept { concept: String, feasibility: Feasibility },
    UnboundOperation { concept: String, operation: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, v: Violation) {
        if !self.violations.contains(&v) {
            self.violations.push(v);
        }
    }
}

fn check_concept(report: &mut ValidationReport, concept: String, feasibility: Option<Feasibility>) -> bool {
    match feasibility {
        None => {
            report.push(Violation::UnknownConcept { concept });
            false
        }
        Some(Feasibility::PointToPoint) => true,
        Some(f) => {
            report.push(Violation::InfeasibleConcept { concept, feasibility: f });
            false
        }
    }
}

/// Lists every concept or (concept, operation) pair in `p` that `d` does not permit.
pub fn validate_bindings(p: &DslProgram, d: &DomainInterface) -> Result<ValidationReport, ValidationError> {
    if d.part_constructs.is_empty() && d.relation_constructs.is_empty() {
        return Err(ValidationError::UnknownDomain(d.domain.clone()));
    }
    let mut report = ValidationReport::default();
    for (part, subparts) in &p.parts {
        for (subpart, props) in subparts {
            for prop in props {
                let b = d.part_binding(part, subpart, prop);
                check_concept(&mut report, format!("{part}/{subpart}/{prop}"), b.map(|b| b.feasibility));
            }
        }
    }
    for (key, descs) in &p.relationships {
        for desc in descs {
            let b = d.relation_binding(key, desc);
            check_concept(&mut report, format!("{key}/{desc}"), b.map(|b| b.feasibility));
        }
    }
    for c in &p.deltas {
        match c {
            Construct::Part(pc) => {
                let concept = pc.attribute_path();
                let b = d.part_binding(&pc.part, &pc.subpart, &pc.property);
                if check_concept(&mut report, concept.clone(), b.map(|b| b.feasibility))
                    && !b.is_some_and(|b| b.permits(&pc.operation))
                {
                    report.push(Violation::UnboundOperation { concept, operation: pc.operation.clone() });
                }
            }
            Construct::Relation(rc) => {
                let concept = format!("{}/{}", rc.relation, rc.descriptor);
                let b = d.relation_binding(&rc.relation, &rc.descriptor);
                if check_concept(&mut report, concept.clone(), b.map(|b| b.feasibility))
                    && !b.is_some_and(|b| b.permits(&rc.operation))
                {
                    report.push(Violation::UnboundOperation { concept, operation: rc.operation.clone() });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::{CondTables, PartBinding, PartConstruct};

    fn teapot_fragment() -> DomainInterface {
        let binding = |sub: &str, prop: &str, ops: &[&str]| PartBinding {
            part: "spout".into(),
            subpart: sub.into(),
            property: prop.into(),
            operations: ops.iter().map(|s| s.to_string()).collect(),
            feasibility: Feasibility::PointToPoint,
            binding: None,
            default: None,
            p25: None,
            p75: None,
            score: 0.5,
        };
        DomainInterface {
            version: "v1".into(),
            domain: "teapot".into(),
            part_constructs: vec![
                binding("cone_0", "radius", &["set", "increase", "decrease"]),
                binding("cylinder_1", "length", &["set", "increase", "decrease"]),
            ],
            relation_constructs: vec![],
            concept_tree: Default::default(),
            tables: CondTables::default(),
            quantifiers: None,
        }
    }

    #[test]
    fn bound_operation_passes() {
        let d = teapot_fragment();
        let p = DslProgram::replay(&[Construct::Part(PartConstruct::adjust(
            "spout", "cone_0", "radius", "decrease", -0.2,
        ))]);
        assert!(validate_bindings(&p, &d).unwrap().is_empty());
    }

    #[test]
    fn twist_is_not_bound() {
        let d = teapot_fragment();
        let p = DslProgram::replay(&[Construct::Part(PartConstruct::adjust(
            "spout", "cylinder_1", "length", "twist", 0.3,
        ))]);
        let report = validate_bindings(&p, &d).unwrap();
        assert_eq!(
            report.violations,
            vec![Violation::UnboundOperation {
                concept: "spout/cylinder_1/length".into(),
                operation: "twist".into()
            }]
        );
    }

    #[test]
    fn empty_program_and_unknown_domain() {
        let d = teapot_fragment();
        assert!(validate_bindings(&DslProgram::new(), &d).unwrap().is_empty());
        let mut empty = d.clone();
        empty.part_constructs.clear();
        assert_eq!(
            validate_bindings(&DslProgram::new(), &empty),
            Err(ValidationError::UnknownDomain("teapot".into()))
        );
    }

    #[test]
    fn pruned_concepts_are_reported() {
        let mut d = teapot_fragment();
        d.part_constructs[1].feasibility = Feasibility::Prune;
        let p = DslProgram::replay(&[Construct::Part(PartConstruct::adjust(
            "spout", "cylinder_1", "length", "increase", 0.2,
        ))]);
        let report = validate_bindings(&p, &d).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], Violation::InfeasibleConcept { .. }));
    }
}
