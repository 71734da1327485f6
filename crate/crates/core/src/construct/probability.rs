//! Joint log-probability of a program under an adapted interface.
//!
//! Each construct contributes the log of its chain of factors: the concept
//! given the instruction kind, the attribute given the concept, the operation
//! given the attribute, and finally the first-order value or the second-order
//! adjustment. Lookups are exact; a missing row or outcome is an error.

use thiserror::Error;

use super::{
    CondTables, Construct, DomainInterface, DslProgram, Instruction, InstructionKind,
    OperationOrder, Value,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbabilityError {
    #[error("missing factor {0}")]
    MissingFactor(String),
}

fn lookup(tables: &CondTables, factor: &str, row: &str, outcome: &str) -> Result<f64, ProbabilityError> {
    let table = tables
        .factors()
        .into_iter()
        .find(|(name, _)| *name == factor)
        .map(|(_, t)| t)
        .expect("factor names are fixed");
    table
        .get(row)
        .and_then(|r| r.get(outcome))
        .map(|p| p.ln())
        .ok_or_else(|| ProbabilityError::MissingFactor(format!("{factor}[{row}][{outcome}]")))
}

/// Log-probability of one construct's factor chain.
pub fn construct_log_prob(
    kind: InstructionKind,
    c: &Construct,
    tables: &CondTables,
) -> Result<f64, ProbabilityError> {
    let kind = kind.label();
    match c {
        Construct::Part(p) => {
            let attr = format!("{}/{}", p.subpart, p.property);
            let path = p.attribute_path();
            let mut lp = lookup(tables, "concept", kind, &p.part)?
                + lookup(tables, "attribute", &p.part, &attr)?
                + lookup(tables, "part_operation", &path, &p.operation)?;
            lp += match OperationOrder::of(&p.operation) {
                OperationOrder::First => {
                    let outcome = match p.value.as_ref() {
                        Some(Value::Number(v)) => tables.value_bin(*v),
                        Some(Value::Token(t)) => t.clone(),
                        None => return Err(ProbabilityError::MissingFactor(format!("part_value[{path}]"))),
                    };
                    lookup(tables, "part_value", &path, &outcome)?
                }
                OperationOrder::Second => {
                    let d = p.delta.unwrap_or(0.0);
                    lookup(tables, "part_delta", &p.operation, &tables.delta_bin(d))?
                }
            };
            Ok(lp)
        }
        Construct::Relation(r) => {
            let key = r.relation.to_string();
            let row = format!("{key}/{}", r.descriptor);
            let mut lp = lookup(tables, "concept", kind, &key)?
                + lookup(tables, "attribute", &key, &r.descriptor)?
                + lookup(tables, "relation_operation", &row, &r.operation)?;
            lp += match OperationOrder::of(&r.operation) {
                OperationOrder::First => {
                    lookup(tables, "relation_value", &row, r.value.as_deref().unwrap_or("on"))?
                }
                OperationOrder::Second => {
                    let [a, b] = r.delta.unwrap_or([0.0, 0.0]);
                    let outcome = format!("{}|{}", tables.delta_bin(a), tables.delta_bin(b));
                    lookup(tables, "relation_delta", &r.operation, &outcome)?
                }
            };
            Ok(lp)
        }
    }
}

/// Sum of construct log-probabilities over the program's edits. Always ≤ 0.
pub fn joint_log_prob(
    i: &Instruction,
    p: &DslProgram,
    d: &DomainInterface,
) -> Result<f64, ProbabilityError> {
    p.deltas
        .iter()
        .map(|c| construct_log_prob(i.kind, c, &d.tables))
        .sum()
}
