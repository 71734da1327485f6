//! Intermediate adaptation metrics: how much of the interface is realizable,
//! how much of the catalog it reaches, and whether its finest constructs land
//! on the catalog's coarsest commands.

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::construct::{DomainInterface, Feasibility, PartBinding, RelationBinding};
use crate::translator::pose::realization;
use crate::translator::shapes::primitive_for_shape;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvergenceMetrics {
    pub soundness: f64,
    pub completeness: f64,
    pub granularity_alignment: f64,
}

/// Commands a part template compiles to: its primitive and the bound command.
pub fn part_realization(b: &PartBinding) -> Vec<String> {
    let shape = b.subpart.rsplit_once('_').map_or(b.subpart.as_str(), |(s, _)| s);
    let mut out = Vec::new();
    if let Some(p) = primitive_for_shape(shape) {
        out.push(p.command().to_string());
    }
    if let Some(cb) = &b.binding {
        if !out.contains(&cb.command) {
            out.push(cb.command.clone());
        }
    }
    out
}

pub fn relation_realization(b: &RelationBinding) -> Vec<String> {
    realization(&b.descriptor).map(|v| v.into_iter().map(str::to_string).collect()).unwrap_or_default()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn convergence_metrics(d: &DomainInterface, c: &Catalog) -> ConvergenceMetrics {
    let mut all: Vec<(Feasibility, Vec<String>)> = Vec::new();
    all.extend(d.part_constructs.iter().map(|b| (b.feasibility, part_realization(b))));
    all.extend(d.relation_constructs.iter().map(|b| (b.feasibility, relation_realization(b))));

    let realizable = |cmds: &[String]| !cmds.is_empty() && cmds.iter().all(|x| c.contains(x));
    let sound = all
        .iter()
        .filter(|(f, cmds)| *f == Feasibility::PointToPoint && realizable(cmds))
        .count();

    let maintained: Vec<&Vec<String>> =
        all.iter().filter(|(f, _)| *f == Feasibility::PointToPoint).map(|(_, cmds)| cmds).collect();
    let reached = c
        .entries()
        .iter()
        .filter(|e| maintained.iter().any(|cmds| cmds.contains(&e.command_id)))
        .count();

    let coarsest = c.min_depth();
    let aligned = maintained
        .iter()
        .filter(|cmds| cmds.iter().any(|x| c.entry(x).is_ok_and(|e| e.depth() == coarsest)))
        .count();

    ConvergenceMetrics {
        soundness: ratio(sound, all.len()),
        completeness: ratio(reached, c.len()),
        granularity_alignment: ratio(aligned, maintained.len()),
    }
}
