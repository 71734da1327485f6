//! Evaluation measures over sessions: rendering consistency from per-step
//! rankings and information clarity from the cumulative depth of a program.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ast_depth, Catalog, CatalogError};
use crate::translator::ModelingProgram;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("invalid ranking: {0}")]
    InvalidRank(String),
    #[error("k must be at least 2, got {0}")]
    InvalidK(u32),
    #[error("no rankings to score")]
    NoRankings,
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
}

impl From<CatalogError> for MetricsError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::UnknownCommand(c) => MetricsError::UnknownCommand(c),
            other => MetricsError::UnknownCommand(other.to_string()),
        }
    }
}

/// Ranks given to the candidates of one step; rank 1 is best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRanking {
    pub step: u32,
    pub ranks: IndexMap<String, u32>,
    /// Set when only a prefix of the order was given.
    #[serde(default)]
    pub partial: bool,
}

impl StepRanking {
    pub fn new(step: u32, ranks: impl IntoIterator<Item = (impl Into<String>, u32)>) -> Self {
        StepRanking { step, ranks: ranks.into_iter().map(|(m, r)| (m.into(), r)).collect(), partial: false }
    }

    /// Checks that the ranks are distinct, start at 1 and leave no gaps. A
    /// complete ranking must also cover `methods` candidates when given.
    pub fn check(&self, methods: Option<usize>) -> Result<(), MetricsError> {
        if self.ranks.is_empty() {
            return Err(MetricsError::InvalidRank("no ranks given".into()));
        }
        let mut seen = HashSet::new();
        for (m, &r) in &self.ranks {
            if r == 0 {
                return Err(MetricsError::InvalidRank(format!("rank of `{m}` must be at least 1")));
            }
            if !seen.insert(r) {
                return Err(MetricsError::InvalidRank(format!("rank {r} given twice")));
            }
        }
        let n = self.ranks.len() as u32;
        if (1..=n).any(|r| !seen.contains(&r)) {
            return Err(MetricsError::InvalidRank("ranks must be 1..n without gaps".into()));
        }
        if let Some(k) = methods {
            if self.ranks.len() > k {
                return Err(MetricsError::InvalidRank(format!("{} ranks for {k} candidates", self.ranks.len())));
            }
            if !self.partial && self.ranks.len() != k {
                return Err(MetricsError::InvalidRank(format!(
                    "complete ranking needs {k} ranks, got {}",
                    self.ranks.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore {
    pub value: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClarityScore {
    pub raw: u64,
    pub normalized: f64,
    pub n_commands: usize,
}

/// Mean over steps of `(k - rank) / (k - 1)` for `method`. A step where the
/// method holds no rank scores 0.
pub fn rendering_consistency(rankings: &[StepRanking], method: &str, k: u32) -> Result<ConsistencyScore, MetricsError> {
    if k < 2 {
        return Err(MetricsError::InvalidK(k));
    }
    if rankings.is_empty() {
        return Err(MetricsError::NoRankings);
    }
    let mut total = 0.0;
    for r in rankings {
        r.check(None)?;
        if let Some(&rank) = r.ranks.get(method) {
            if rank > k {
                return Err(MetricsError::InvalidRank(format!("rank {rank} exceeds k = {k}")));
            }
            total += f64::from(k - rank) / f64::from(k - 1);
        }
    }
    Ok(ConsistencyScore { value: total / rankings.len() as f64, n_steps: rankings.len() })
}

/// Raw cumulative depth plus a normalization into `[0, 1)` against the
/// catalog's median entry depth.
pub fn information_clarity(m: &ModelingProgram, c: &Catalog) -> Result<ClarityScore, MetricsError> {
    let raw = ast_depth(m, c)?;
    let denom = raw as f64 + m.len() as f64 * c.median_depth();
    let normalized = if raw == 0 { 0.0 } else { raw as f64 / denom };
    Ok(ClarityScore { raw, normalized, n_commands: m.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub domain: String,
    pub session_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyScore>,
    pub clarity: ClarityScore,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "domain",
            "session_id",
            "consistency",
            "n_steps",
            "clarity_raw",
            "clarity_normalized",
            "n_commands",
        ])
        .expect("writing to memory");
        let (value, steps) = match self.consistency {
            Some(c) => (c.value.to_string(), c.n_steps.to_string()),
            None => (String::new(), "0".into()),
        };
        w.write_record([
            self.domain.clone(),
            self.session_id.clone().unwrap_or_default(),
            value,
            steps,
            self.clarity.raw.to_string(),
            self.clarity.normalized.to_string(),
            self.clarity.n_commands.to_string(),
        ])
        .expect("writing to memory");
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(step: u32, ranks: &[(&str, u32)]) -> StepRanking {
        StepRanking::new(step, ranks.iter().map(|&(m, r)| (m, r)))
    }

    #[test]
    fn extremes() {
        let best: Vec<_> = (1..=4).map(|s| r(s, &[("ours", 1), ("a", 2), ("b", 3)])).collect();
        assert_eq!(rendering_consistency(&best, "ours", 3).unwrap().value, 1.0);
        assert_eq!(rendering_consistency(&best, "b", 3).unwrap().value, 0.0);
    }

    #[test]
    fn partial_missing_scores_zero() {
        let mut s = r(1, &[("alt", 1)]);
        s.partial = true;
        assert_eq!(rendering_consistency(&[s], "ours", 2).unwrap().value, 0.0);
    }

    #[test]
    fn rejects_bad_rankings() {
        assert!(matches!(rendering_consistency(&[], "x", 3), Err(MetricsError::NoRankings)));
        assert!(matches!(rendering_consistency(&[r(1, &[("x", 1)])], "x", 1), Err(MetricsError::InvalidK(1))));
        for bad in [&[("x", 1), ("y", 1)][..], &[("x", 2)][..], &[("x", 1), ("y", 3)][..], &[("x", 0)][..]] {
            assert!(matches!(r(1, bad).check(None), Err(MetricsError::InvalidRank(_))));
        }
        assert!(r(1, &[("x", 1)]).check(Some(2)).is_err());
        let mut p = r(1, &[("x", 1)]);
        p.partial = true;
        assert!(p.check(Some(2)).is_ok());
    }

    #[test]
    fn empty_program_is_zero() {
        let c = Catalog::from_json(include_str!("../fixtures/catalog/mini.json")).unwrap();
        let s = information_clarity(&ModelingProgram::default(), &c).unwrap();
        assert_eq!((s.raw, s.normalized, s.n_commands), (0, 0.0, 0));
    }

    #[test]
    fn csv_has_header_and_row() {
        let rep = MetricsReport {
            domain: "teapot".into(),
            session_id: Some("s".into()),
            consistency: None,
            clarity: ClarityScore { raw: 10, normalized: 0.5, n_commands: 2 },
        };
        let text = rep.to_csv();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("teapot,s,,0,10,0.5,2"));
    }
}
