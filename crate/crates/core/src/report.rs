//! Per-file naming report: does each lemma's own name appear among the
//! model's top-k suggestions for its statement?

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::LemmaRecord;
use crate::model::{Model, ModelError, Suggestion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub file: PathBuf,
    pub line: u32,
    pub name: String,
    pub conforming: bool,
    pub suggestions: Vec<Suggestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionReport {
    pub k: usize,
    /// File order.
    pub entries: Vec<ReportEntry>,
}

impl SuggestionReport {
    pub fn build(model: &Model, records: &[LemmaRecord], k: usize) -> Result<Self, ModelError> {
        let entries = records
            .iter()
            .map(|r| {
                let suggestions = model.suggest(r, k)?;
                Ok(ReportEntry {
                    file: r.source.file.clone(),
                    line: r.source.line,
                    conforming: suggestions.iter().any(|s| s.name == r.name),
                    name: r.name.clone(),
                    suggestions,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(SuggestionReport { k, entries })
    }

    pub fn all_conform(&self) -> bool {
        self.entries.iter().all(|e| e.conforming)
    }

    pub fn non_conforming(&self) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(|e| !e.conforming)
    }

    /// Human-readable report: non-conforming lemmas first, then the rest,
    /// each group in file order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let bad: Vec<&ReportEntry> = self.non_conforming().collect();
        let n = self.entries.len();
        if bad.is_empty() {
            writeln!(s, "all {n} lemma names conform").unwrap();
        } else {
            writeln!(s, "{} of {n} lemma names do not conform", bad.len()).unwrap();
        }
        let good = self.entries.iter().filter(|e| e.conforming);
        for e in bad.iter().copied().chain(good) {
            let tag = if e.conforming { "ok" } else { "RENAME?" };
            writeln!(s, "{}:{}: {} [{tag}]", e.file.display(), e.line, e.name).unwrap();
            for (i, sug) in e.suggestions.iter().enumerate() {
                writeln!(s, "    {}. {} ({:.4})", i + 1, sug.name, sug.score).unwrap();
            }
        }
        s
    }

    /// One JSON object per lemma, in file order.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str, k: usize) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(SuggestionReport { k, entries })
    }
}
