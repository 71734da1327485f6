//! Chinese-restaurant-process mixture over construct field vectors.
//!
//! Each construct is reduced to five categorical fields. A cluster keeps
//! per-field counts; with the multinomial likelihood its predictive is a
//! symmetric Dirichlet-multinomial, and the base measure for a new cluster is
//! uniform over each field's vocabulary.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::construct::Construct;

pub const FIELDS: usize = 5;

pub type Features = [String; FIELDS];

/// `[kind, concept, shape or descriptor, property, operation]`.
pub fn features(c: &Construct) -> Features {
    match c {
        Construct::Part(p) => {
            let shape = p.subpart_id().map(|s| s.shape).unwrap_or_else(|_| p.subpart.clone());
            ["part".into(), p.part.clone(), shape, p.property.clone(), p.operation.clone()]
        }
        Construct::Relation(r) => [
            "relation".into(),
            r.relation.to_string(),
            r.descriptor.clone(),
            "-".into(),
            r.operation.clone(),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Likelihood {
    /// Every sample is equally likely under every cluster: the bare CRP.
    Uniform,
    Multinomial { beta: f64 },
}

impl Default for Likelihood {
    fn default() -> Self {
        Likelihood::Multinomial { beta: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cluster {
    pub members: Vec<usize>,
    counts: Vec<HashMap<String, usize>>,
}

impl Cluster {
    fn add(&mut self, i: usize, f: &Features) {
        if self.counts.is_empty() {
            self.counts = vec![HashMap::new(); FIELDS];
        }
        self.members.push(i);
        for (c, v) in self.counts.iter_mut().zip(f) {
            *c.entry(v.clone()).or_default() += 1;
        }
    }

    fn remove(&mut self, i: usize, f: &Features) {
        self.members.retain(|&m| m != i);
        for (c, v) in self.counts.iter_mut().zip(f) {
            if let Some(n) = c.get_mut(v) {
                *n -= 1;
                if *n == 0 {
                    c.remove(v);
                }
            }
        }
    }

    /// Fraction of members sharing the most common value of `field`.
    pub fn purity(&self, field: usize) -> f64 {
        if self.members.is_empty() {
            return 0.0;
        }
        let top = self.counts[field].values().copied().max().unwrap_or(0);
        top as f64 / self.members.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub alpha: f64,
    pub likelihood: Likelihood,
    pub clusters: Vec<Cluster>,
    /// Cluster of each seated sample; `None` while unseated.
    pub assignment: Vec<Option<usize>>,
    /// Distinct values per field over all samples, for the base measure.
    vocab: [usize; FIELDS],
}

/// Prior seating weights: existing table sizes followed by `alpha` for a new table.
pub fn crp_prior_weights(sizes: &[usize], alpha: f64) -> Vec<f64> {
    sizes.iter().map(|&n| n as f64).chain(std::iter::once(alpha)).collect()
}

impl ClusterState {
    pub fn new(alpha: f64, likelihood: Likelihood, data: &[Features]) -> Self {
        assert!(alpha > 0.0, "CRP concentration must be positive");
        let mut vocab = [0; FIELDS];
        for (f, v) in vocab.iter_mut().enumerate() {
            let mut seen: Vec<&str> = data.iter().map(|x| x[f].as_str()).collect();
            seen.sort_unstable();
            seen.dedup();
            *v = seen.len().max(1);
        }
        ClusterState { alpha, likelihood, clusters: Vec::new(), assignment: vec![None; data.len()], vocab }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.members.len()).collect()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    fn predictive(&self, k: Option<&Cluster>, f: &Features) -> f64 {
        match self.likelihood {
            Likelihood::Uniform => 1.0,
            Likelihood::Multinomial { beta } => (0..FIELDS)
                .map(|j| {
                    let v = self.vocab[j] as f64;
                    match k {
                        Some(c) => {
                            let n = c.members.len() as f64;
                            let m = c.counts[j].get(&f[j]).copied().unwrap_or(0) as f64;
                            (m + beta) / (n + beta * v)
                        }
                        None => 1.0 / v,
                    }
                })
                .product(),
        }
    }

    /// Normalized seating probabilities for `f`: one per existing cluster, then a new one.
    pub fn probabilities(&self, f: &Features) -> Vec<f64> {
        let prior = crp_prior_weights(&self.sizes(), self.alpha);
        let mut w: Vec<f64> = prior
            .iter()
            .enumerate()
            .map(|(k, p)| p * self.predictive(self.clusters.get(k), f))
            .collect();
        let z: f64 = w.iter().sum();
        for x in &mut w {
            *x /= z;
        }
        w
    }

    /// Seats sample `i`, sampling its cluster from [`Self::probabilities`].
    pub fn assign(&mut self, i: usize, f: &Features, rng: &mut ChaCha8Rng) -> usize {
        let p = self.probabilities(f);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = p.len() - 1;
        for (j, pj) in p.iter().enumerate() {
            acc += pj;
            if u < acc {
                k = j;
                break;
            }
        }
        if k == self.clusters.len() {
            self.clusters.push(Cluster::default());
        }
        self.clusters[k].add(i, f);
        self.assignment[i] = Some(k);
        k
    }

    fn unseat(&mut self, i: usize, f: &Features) {
        let Some(k) = self.assignment[i].take() else { return };
        self.clusters[k].remove(i, f);
        if self.clusters[k].members.is_empty() {
            self.clusters.remove(k);
            for a in self.assignment.iter_mut().flatten() {
                if *a > k {
                    *a -= 1;
                }
            }
        }
    }

    /// One collapsed Gibbs sweep: every sample is unseated and reseated in order.
    pub fn gibbs_sweep(&mut self, data: &[Features], rng: &mut ChaCha8Rng) {
        for (i, f) in data.iter().enumerate() {
            self.unseat(i, f);
            self.assign(i, f, rng);
        }
    }

    /// Cluster id per sample. Panics if any sample is unseated.
    pub fn labels(&self) -> Vec<usize> {
        self.assignment.iter().map(|a| a.expect("every sample is seated")).collect()
    }
}

/// Sequential seating followed by `sweeps` Gibbs sweeps.
pub fn cluster(data: &[Features], alpha: f64, likelihood: Likelihood, sweeps: usize, rng: &mut ChaCha8Rng) -> ClusterState {
    let mut cs = ClusterState::new(alpha, likelihood, data);
    for (i, f) in data.iter().enumerate() {
        cs.assign(i, f, rng);
    }
    for _ in 0..sweeps {
        cs.gibbs_sweep(data, rng);
    }
    cs
}
