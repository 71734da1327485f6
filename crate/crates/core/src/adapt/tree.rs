//! The concept tree: macro concepts near the root, operations at the leaves.
//!
//! A part construct sits on the chain part → subpart → property → operation,
//! a relation construct on relation → descriptor → operation. Clusters from
//! the concept mixture hang off the deepest node their members all share.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::construct::{Construct, Feasibility};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("a concept tree needs at least one sample")]
    EmptySampleSet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConceptNode {
    pub label: String,
    pub depth: usize,
    /// Number of samples at or below this node.
    pub members: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility: Option<Feasibility>,
    /// Clusters whose members all fall under this node and no deeper one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clusters: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ConceptNode>,
}

impl ConceptNode {
    fn child_mut(&mut self, label: &str) -> &mut ConceptNode {
        let i = match self.children.iter().position(|c| c.label == label) {
            Some(i) => i,
            None => {
                self.children.push(ConceptNode {
                    label: label.to_string(),
                    depth: self.depth + 1,
                    ..Default::default()
                });
                self.children.len() - 1
            }
        };
        &mut self.children[i]
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a ConceptNode>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConceptTree {
    pub root: ConceptNode,
}

impl ConceptTree {
    pub fn new(domain: &str) -> Self {
        ConceptTree { root: ConceptNode { label: domain.to_string(), ..Default::default() } }
    }

    pub fn insert(&mut self, c: &Construct) {
        let mut node = &mut self.root;
        node.members += 1;
        for label in c.tree_path() {
            node = node.child_mut(&label);
            node.members += 1;
        }
    }

    pub fn node(&self, path: &[&str]) -> Option<&ConceptNode> {
        let mut node = &self.root;
        for label in path {
            node = node.children.iter().find(|c| c.label == *label)?;
        }
        Some(node)
    }

    fn node_mut(&mut self, path: &[String]) -> Option<&mut ConceptNode> {
        let mut node = &mut self.root;
        for label in path {
            node = node.children.iter_mut().find(|c| &c.label == label)?;
        }
        Some(node)
    }

    /// Marks the leaf of `c`. Returns false when `c` is not in the tree.
    pub fn mark(&mut self, c: &Construct, f: Feasibility) -> bool {
        match self.node_mut(&c.tree_path()) {
            Some(n) => {
                n.feasibility = Some(f);
                true
            }
            None => false,
        }
    }

    /// Hangs each cluster off the deepest node shared by all of its members.
    /// `assignment[i]` is the cluster of `constructs[i]`.
    pub fn attach_clusters(&mut self, constructs: &[Construct], assignment: &[usize]) {
        let mut prefixes: Vec<(usize, Vec<String>)> = Vec::new();
        for (c, &k) in constructs.iter().zip(assignment) {
            let path = c.tree_path();
            match prefixes.iter_mut().find(|(id, _)| *id == k) {
                Some((_, p)) => {
                    let keep = p.iter().zip(&path).take_while(|(a, b)| a == b).count();
                    p.truncate(keep);
                }
                None => prefixes.push((k, path)),
            }
        }
        prefixes.sort();
        for (k, p) in prefixes {
            if let Some(n) = self.node_mut(&p) {
                n.clusters.push(k);
            }
        }
    }

    pub fn nodes(&self) -> Vec<&ConceptNode> {
        let mut out = Vec::new();
        self.root.walk(&mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes().iter().filter(|n| n.children.is_empty() && n.depth > 0).count()
    }

    /// Labels of the macro concepts: parts and relations.
    pub fn top_level(&self) -> Vec<&str> {
        self.root.children.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn depth(&self) -> usize {
        self.nodes().iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

/// Tree over every sample; each is reachable from the root along its path.
pub fn build_concept_tree<'a>(
    domain: &str,
    samples: impl IntoIterator<Item = &'a Construct>,
) -> Result<ConceptTree, TreeError> {
    let mut t = ConceptTree::new(domain);
    for c in samples {
        t.insert(c);
    }
    if t.root.members == 0 {
        return Err(TreeError::EmptySampleSet);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::{PartConstruct, RelationConstruct, RelationKey};

    #[test]
    fn singleton_is_a_four_node_chain() {
        let c = Construct::Part(PartConstruct::adjust("spout", "cone_0", "radius", "decrease", -0.1));
        let t = build_concept_tree("teapot", [&c]).unwrap();
        assert_eq!(t.nodes().len(), 5);
        assert_eq!(t.depth(), 4);
        assert_eq!(t.node(&["spout", "cone_0", "radius", "decrease"]).unwrap().members, 1);
        assert_eq!(t.leaf_count(), 1);
    }

    #[test]
    fn empty_is_rejected() {
        assert_eq!(build_concept_tree("teapot", []).unwrap_err(), TreeError::EmptySampleSet);
    }

    #[test]
    fn clusters_attach_at_shared_prefix() {
        let a = Construct::Part(PartConstruct::set("spout", "cone_0", "radius", 1.0));
        let b = Construct::Part(PartConstruct::set("spout", "cone_0", "height", 1.0));
        let r = Construct::Relation(RelationConstruct::assign(RelationKey::new("body", "spout"), "side"));
        let cs = [a, b, r];
        let mut t = build_concept_tree("teapot", &cs).unwrap();
        t.attach_clusters(&cs, &[0, 0, 1]);
        t.mark(&cs[2], Feasibility::PointToPoint);
        assert_eq!(t.node(&["spout", "cone_0"]).unwrap().clusters, vec![0]);
        assert_eq!(t.node(&["body <-> spout", "side", "assign"]).unwrap().clusters, vec![1]);
        assert_eq!(
            t.node(&["body <-> spout", "side", "assign"]).unwrap().feasibility,
            Some(Feasibility::PointToPoint)
        );
        assert_eq!(t.top_level(), ["spout", "body <-> spout"]);
    }
}
