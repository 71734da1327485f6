use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::CatalogChunk;

const K1: f64 = 1.2;
const B: f64 = 0.75;

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: CatalogChunk,
    pub score: f64,
}

/// Inverted index with Okapi BM25 scoring.
#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<u32>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut index = Bm25Index::default();
        for (id, text) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            index.doc_len.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, n) in tf {
                index.postings.entry(term).or_default().push((id, n));
            }
        }
        let total: u64 = index.doc_len.iter().map(|&l| u64::from(l)).sum();
        index.avg_len = if index.doc_len.is_empty() {
            0.0
        } else {
            total as f64 / index.doc_len.len() as f64
        };
        index
    }

    pub fn len(&self) -> usize {
        self.doc_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_len.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_len.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Score of every document for the query, indexed by document position.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_len.len()];
        for term in tokenize(query) {
            let Some(postings) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(doc, tf) in postings {
                let tf = f64::from(tf);
                let norm = 1.0 - B + B * f64::from(self.doc_len[doc]) / self.avg_len;
                scores[doc] += idf * tf * (K1 + 1.0) / (tf + K1 * norm);
            }
        }
        scores
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct evaluation of the scoring formula, independent of the postings layout.
    fn oracle(docs: &[&str], query: &str) -> Vec<f64> {
        let toks: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
        let n = docs.len() as f64;
        let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
        toks.iter()
            .map(|doc| {
                tokenize(query)
                    .iter()
                    .map(|q| {
                        let df = toks.iter().filter(|d| d.contains(q)).count() as f64;
                        let tf = doc.iter().filter(|t| *t == q).count() as f64;
                        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                        idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * doc.len() as f64 / avg))
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumerics() {
        assert_eq!(tokenize("Cone-radius2, top_face!"), ["cone", "radius2", "top", "face"]);
    }

    #[test]
    fn matches_formula() {
        let docs = [
            "cylinder with a radius and a height",
            "sphere radius radius",
            "box with length width height",
            "torus ring with major and minor radius",
        ];
        let index = Bm25Index::build(docs.iter().copied());
        for q in ["radius", "cylinder height", "ring radius radius", "nothing"] {
            let got = index.scores(q);
            let want = oracle(&docs, q);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{q}: {got:?} vs {want:?}");
            }
        }
    }
}
