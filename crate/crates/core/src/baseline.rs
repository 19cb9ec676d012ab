//! Nearest-neighbour name retrieval over TF-IDF vectors of statement sub-tokens.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LemmaRecord;
use crate::subtok::statement_texts;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed retrieval index: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    /// TF-IDF weight per sub-token.
    weights: BTreeMap<String, f64>,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    documents: usize,
    idf: BTreeMap<String, f64>,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub name: String,
    pub similarity: f64,
}

fn term_counts(record: &LemmaRecord) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for tok in record.statement_tokens.iter().flat_map(|t| statement_texts(t)) {
        *counts.entry(tok).or_insert(0.0) += 1.0;
    }
    counts
}

fn norm(weights: &BTreeMap<String, f64>) -> f64 {
    weights.values().map(|w| w * w).sum::<f64>().sqrt()
}

impl RetrievalIndex {
    /// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, weights are raw count × idf.
    pub fn build(records: &[&LemmaRecord]) -> Result<Self, BaselineError> {
        if records.is_empty() {
            return Err(BaselineError::EmptyTrainingSet);
        }
        let counts: Vec<BTreeMap<String, f64>> = records.iter().map(|r| term_counts(r)).collect();
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &counts {
            for t in c.keys() {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = records.len();
        let idf: BTreeMap<String, f64> = df.into_iter().map(|(t, d)| (t.to_string(), Self::idf_for(n, d))).collect();
        let entries = records
            .iter()
            .zip(counts)
            .map(|(r, c)| {
                let weights: BTreeMap<String, f64> = c.into_iter().map(|(t, tf)| {
                    let w = tf * idf[&t];
                    (t, w)
                }).collect();
                Entry {
                    name: r.name.clone(),
                    norm: norm(&weights),
                    weights,
                }
            })
            .collect();
        Ok(RetrievalIndex {
            documents: n,
            idf,
            entries,
        })
    }

    fn idf_for(n: usize, df: usize) -> f64 {
        ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    pub fn idf(&self, token: &str) -> f64 {
        self.idf
            .get(token)
            .copied()
            .unwrap_or_else(|| Self::idf_for(self.documents, 0))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cosine similarity of the query against every indexed lemma, in corpus order.
    pub fn similarities(&self, record: &LemmaRecord) -> Vec<f64> {
        let query: BTreeMap<String, f64> = term_counts(record)
            .into_iter()
            .map(|(t, tf)| {
                let w = tf * self.idf(&t);
                (t, w)
            })
            .collect();
        let qn = norm(&query);
        self.entries
            .iter()
            .map(|e| {
                if qn == 0.0 || e.norm == 0.0 {
                    return 0.0;
                }
                let dot = query
                    .iter()
                    .filter_map(|(t, w)| e.weights.get(t).map(|v| v * w))
                    .fold(0.0, |acc, x| acc + x);
                dot / (qn * e.norm)
            })
            .collect()
    }

    /// The `k` most similar distinct names; ties keep corpus order.
    pub fn retrieve(&self, record: &LemmaRecord, k: usize) -> Vec<RetrievalHit> {
        let sims = self.similarities(record);
        let mut order: Vec<usize> = (0..sims.len()).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
        let mut seen = HashSet::new();
        order
            .into_iter()
            .filter(|&i| seen.insert(self.entries[i].name.as_str()))
            .take(k)
            .map(|i| RetrievalHit {
                name: self.entries[i].name.clone(),
                similarity: sims[i],
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|source| BaselineError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let bytes = fs::read(path).map_err(|source| BaselineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
