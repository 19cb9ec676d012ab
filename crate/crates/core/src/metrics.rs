//! BLEU-4, fragment accuracy and top-k accuracy, plus test-set evaluation.

use std::collections::HashMap;
use std::error::Error;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::RetrievalIndex;
use crate::corpus::LemmaRecord;
use crate::model::Model;
use crate::subtok::{name_texts, SubtokError, SuffixLexicon};

pub const BLEU_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("name is empty")]
    EmptyName,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error(transparent)]
    Subtok(#[from] SubtokError),
    #[error("suggester failed on `{lemma}`: {source}")]
    Suggester {
        lemma: String,
        #[source]
        source: Box<dyn Error + Send + Sync>,
    },
}

fn ngram_counts<S: AsRef<str>>(seq: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level BLEU over n-grams 1..=4 with clipped precisions.
///
/// A zero numerator at order n ≥ 2 is smoothed to (m + 1) / (c + 1). A zero
/// unigram precision, or an empty candidate, scores 0. Brevity penalty is
/// `exp(1 - |ref| / |cand|)` for candidates shorter than the reference.
pub fn bleu4<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_ORDER {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let matched: usize = cand.iter().map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0))).sum();
        let total = (candidate.len() + 1).saturating_sub(n);
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(bp * (log_sum / BLEU_ORDER as f64).exp())
}

fn fragments(name: &str) -> Vec<&str> {
    name.split('_').filter(|f| !f.is_empty()).collect()
}

/// Fraction of positions whose underscore-delimited fragments agree, over the
/// longer fragment list.
pub fn fragment_accuracy(candidate: &str, reference: &str) -> Result<f64, MetricsError> {
    let (c, r) = (fragments(candidate), fragments(reference));
    if c.is_empty() || r.is_empty() {
        return Err(MetricsError::EmptyName);
    }
    let same = c.iter().zip(&r).filter(|(a, b)| a == b).count();
    Ok(same as f64 / c.len().max(r.len()) as f64)
}

/// 1 if `reference` is among the first `k` suggestions, else 0.
pub fn topk_accuracy<S: AsRef<str>>(suggestions: &[S], reference: &str, k: usize) -> f64 {
    if suggestions.iter().take(k).any(|s| s.as_ref() == reference) {
        1.0
    } else {
        0.0
    }
}

/// Anything that proposes ranked names for a lemma.
pub trait Suggester {
    fn label(&self) -> String;
    fn suggest_names(&self, record: &LemmaRecord, k: usize) -> Result<Vec<String>, Box<dyn Error + Send + Sync>>;
}

impl Suggester for Model {
    fn label(&self) -> String {
        format!("model[{}]", self.config.config_name())
    }

    fn suggest_names(&self, record: &LemmaRecord, k: usize) -> Result<Vec<String>, Box<dyn Error + Send + Sync>> {
        Ok(self.suggest(record, k)?.into_iter().map(|s| s.name).collect())
    }
}

impl Suggester for RetrievalIndex {
    fn label(&self) -> String {
        "retrieval".into()
    }

    fn suggest_names(&self, record: &LemmaRecord, k: usize) -> Result<Vec<String>, Box<dyn Error + Send + Sync>> {
        Ok(self.retrieve(record, k).into_iter().map(|h| h.name).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub file: PathBuf,
    pub line: u32,
    pub suggestions: Vec<String>,
    pub bleu4: f64,
    pub fragment_accuracy: f64,
    pub top1: f64,
    pub top5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub suggester: String,
    pub k: usize,
    pub rows: Vec<EvalRow>,
    pub bleu4: f64,
    pub fragment_accuracy: f64,
    pub top1: f64,
    pub top5: f64,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum JsonLine<'a> {
    Lemma(&'a EvalRow),
    Aggregate {
        suggester: &'a str,
        k: usize,
        lemmas: usize,
        bleu4: f64,
        fragment_accuracy: f64,
        top1: f64,
        top5: f64,
    },
}

/// Scores one lemma given its ranked suggestions.
pub fn score_row(record: &LemmaRecord, suggestions: Vec<String>, lex: &SuffixLexicon) -> Result<EvalRow, MetricsError> {
    let reference = name_texts(&record.name, lex)?;
    let (bleu, frag) = match suggestions.first() {
        Some(top) if !fragments(top).is_empty() => (
            bleu4(&name_texts(top, lex)?, &reference)?,
            fragment_accuracy(top, &record.name)?,
        ),
        _ => (0.0, 0.0),
    };
    Ok(EvalRow {
        name: record.name.clone(),
        file: record.source.file.clone(),
        line: record.source.line,
        top1: topk_accuracy(&suggestions, &record.name, 1),
        top5: topk_accuracy(&suggestions, &record.name, 5),
        suggestions,
        bleu4: bleu,
        fragment_accuracy: frag,
    })
}

impl EvalReport {
    pub fn from_rows(suggester: String, k: usize, rows: Vec<EvalRow>) -> Result<Self, MetricsError> {
        if rows.is_empty() {
            return Err(MetricsError::EmptyTestSet);
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Ok(EvalReport {
            bleu4: mean(|r| r.bleu4),
            fragment_accuracy: mean(|r| r.fragment_accuracy),
            top1: mean(|r| r.top1),
            top5: mean(|r| r.top5),
            suggester,
            k,
            rows,
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<24} {:>8} {:>8} {:>8} {:>8}", "suggester", "BLEU-4", "frag-acc", "top-1", "top-5").unwrap();
        writeln!(
            s,
            "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            self.suggester, self.bleu4, self.fragment_accuracy, self.top1, self.top5
        )
        .unwrap();
        writeln!(s, "({} lemmas, k = {})", self.rows.len(), self.k).unwrap();
        s
    }

    /// One JSON object per lemma, then one aggregate object.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for row in &self.rows {
            s.push_str(&serde_json::to_string(&JsonLine::Lemma(row)).expect("row serializes"));
            s.push('\n');
        }
        let agg = JsonLine::Aggregate {
            suggester: &self.suggester,
            k: self.k,
            lemmas: self.rows.len(),
            bleu4: self.bleu4,
            fragment_accuracy: self.fragment_accuracy,
            top1: self.top1,
            top5: self.top5,
        };
        s.push_str(&serde_json::to_string(&agg).expect("aggregate serializes"));
        s.push('\n');
        s
    }
}

/// Asks `suggester` for `k` names per record and averages the four metrics.
/// Names are split into sub-tokens with `lex` for BLEU.
pub fn evaluate(
    suggester: &dyn Suggester,
    records: &[&LemmaRecord],
    k: usize,
    lex: &SuffixLexicon,
) -> Result<EvalReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let rows = records
        .iter()
        .map(|r| {
            let names = suggester.suggest_names(r, k).map_err(|source| MetricsError::Suggester {
                lemma: r.name.clone(),
                source,
            })?;
            score_row(r, names, lex)
        })
        .collect::<Result<Vec<_>, _>>()?;
    EvalReport::from_rows(suggester.label(), k, rows)
}
