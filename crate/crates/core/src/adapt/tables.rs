//! Conditional tables of the hierarchical model, estimated from maintained
//! constructs by smoothed frequency counts. Every row covers its full outcome
//! vocabulary so that lookups for any maintained construct succeed.

use indexmap::IndexMap;

use crate::construct::interface::{DEFAULT_DELTA_EDGES, DEFAULT_VALUE_EDGES};
use crate::construct::{CondTables, Construct, Factor, OperationOrder, Value};

/// Pseudo-count added to every outcome.
pub const SMOOTHING: f64 = 0.01;

#[derive(Default)]
struct Counts(IndexMap<String, IndexMap<String, f64>>);

impl Counts {
    fn vocab(&mut self, row: &str, outcomes: impl IntoIterator<Item = String>) {
        let r = self.0.entry(row.to_string()).or_default();
        for o in outcomes {
            r.entry(o).or_insert(0.0);
        }
    }

    fn add(&mut self, row: &str, outcome: &str) {
        *self.0.entry(row.to_string()).or_default().entry(outcome.to_string()).or_insert(0.0) += 1.0;
    }

    fn normalize(self) -> Factor {
        self.0
            .into_iter()
            .map(|(row, outcomes)| {
                let z: f64 = outcomes.values().map(|c| c + SMOOTHING).sum();
                let mut probs: IndexMap<String, f64> =
                    outcomes.into_iter().map(|(o, c)| (o, (c + SMOOTHING) / z)).collect();
                // Put rounding residue on the largest outcome so rows sum to one.
                let residue = 1.0 - probs.values().sum::<f64>();
                if let Some((_, p)) = probs.iter_mut().max_by(|a, b| a.1.total_cmp(b.1)) {
                    *p += residue;
                }
                (row, probs)
            })
            .collect()
    }
}

const KINDS: [&str; 3] = ["global", "part", "mixed"];

/// Estimates every table from `maintained` (one entry per maintained sample,
/// repeats allowed). `vocabulary` lists every maintained construct template
/// so that rows exist even for templates with no samples.
pub fn estimate_tables(maintained: &[Construct], vocabulary: &[Construct]) -> CondTables {
    let mut t = CondTables {
        value_edges: DEFAULT_VALUE_EDGES.to_vec(),
        delta_edges: DEFAULT_DELTA_EDGES.to_vec(),
        ..Default::default()
    };
    let value_bins: Vec<String> = (0..t.value_bin_count()).map(|i| format!("v{i}")).collect();
    let delta_bins: Vec<String> = (0..t.delta_bin_count()).map(|i| format!("d{i}")).collect();
    let pair_bins: Vec<String> =
        delta_bins.iter().flat_map(|a| delta_bins.iter().map(move |b| format!("{a}|{b}"))).collect();

    let mut concepts: Vec<String> = Vec::new();
    let (mut concept, mut attribute, mut part_op, mut rel_op) =
        (Counts::default(), Counts::default(), Counts::default(), Counts::default());
    let (mut part_value, mut rel_value, mut part_delta, mut rel_delta) =
        (Counts::default(), Counts::default(), Counts::default(), Counts::default());

    for c in vocabulary.iter().chain(maintained) {
        let label = match c {
            Construct::Part(p) => p.part.clone(),
            Construct::Relation(r) => r.relation.to_string(),
        };
        if !concepts.contains(&label) {
            concepts.push(label);
        }
    }
    for k in KINDS {
        concept.vocab(k, concepts.iter().cloned());
    }
    for c in vocabulary.iter().chain(maintained) {
        match c {
            Construct::Part(p) => {
                let path = p.attribute_path();
                attribute.vocab(&p.part, [format!("{}/{}", p.subpart, p.property)]);
                part_op.vocab(&path, [p.operation.clone()]);
                match OperationOrder::of(&p.operation) {
                    OperationOrder::First => part_value.vocab(&path, value_bins.iter().cloned()),
                    OperationOrder::Second => part_delta.vocab(&p.operation, delta_bins.iter().cloned()),
                }
            }
            Construct::Relation(r) => {
                let key = r.relation.to_string();
                let row = format!("{key}/{}", r.descriptor);
                attribute.vocab(&key, [r.descriptor.clone()]);
                rel_op.vocab(&row, [r.operation.clone()]);
                match OperationOrder::of(&r.operation) {
                    OperationOrder::First => rel_value.vocab(&row, ["on".to_string(), "off".to_string()]),
                    OperationOrder::Second => rel_delta.vocab(&r.operation, pair_bins.iter().cloned()),
                }
            }
        }
    }
    for c in maintained {
        match c {
            Construct::Part(p) => {
                let path = p.attribute_path();
                // Instructions about one part favour part constructs; global ones
                // favour arrangement; mixed ones take both.
                concept.add("part", &p.part);
                concept.add("mixed", &p.part);
                attribute.add(&p.part, &format!("{}/{}", p.subpart, p.property));
                part_op.add(&path, &p.operation);
                match (&p.value, p.delta) {
                    (Some(Value::Number(v)), _) => part_value.add(&path, &t.value_bin(*v)),
                    (Some(Value::Token(tok)), _) => part_value.add(&path, tok),
                    (None, Some(d)) => part_delta.add(&p.operation, &t.delta_bin(d)),
                    (None, None) => {}
                }
            }
            Construct::Relation(r) => {
                let key = r.relation.to_string();
                let row = format!("{key}/{}", r.descriptor);
                concept.add("global", &key);
                concept.add("mixed", &key);
                attribute.add(&key, &r.descriptor);
                rel_op.add(&row, &r.operation);
                match (&r.value, r.delta) {
                    (Some(v), _) => rel_value.add(&row, v),
                    (None, Some([a, b])) => {
                        rel_delta.add(&r.operation, &format!("{}|{}", t.delta_bin(a), t.delta_bin(b)))
                    }
                    (None, None) => {}
                }
            }
        }
    }
    t.concept = concept.normalize();
    t.attribute = attribute.normalize();
    t.part_operation = part_op.normalize();
    t.relation_operation = rel_op.normalize();
    t.part_value = part_value.normalize();
    t.relation_value = rel_value.normalize();
    t.part_delta = part_delta.normalize();
    t.relation_delta = rel_delta.normalize();
    t
}
