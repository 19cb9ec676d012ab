//! Lemma datasets: ingest, document-level splits, vocabularies.
//!
//! A lemma-dataset file (`*.lemmas.sexp`) is a sequence of records
//!
//! ```text
//! (lemma (name <atom>) (path (<atoms>)) (line <int>) (stmt (<atoms>)) (cst <sexp>) (ckt <sexp>))
//! ```
//!
//! with the fields in exactly that order. Records that are incomplete or
//! carry unknown fields are skipped with a warning; syntax errors abort the
//! whole file.

pub mod synth;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chop::{chop, ChopConfig, ChopError};
use crate::sexp::{self, linearize, ParseError, Position, SExp};
use crate::subtok::{name_texts, statement_texts, SubtokError, SuffixLexicon};

pub const DATASET_EXTENSION: &str = "lemmas.sexp";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{position}: {reason}")]
    Format {
        path: PathBuf,
        position: Position,
        reason: String,
    },
    #[error("need at least 3 documents to split, got {0}")]
    TooFewDocuments(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios((f64, f64, f64)),
    #[error(transparent)]
    Chop(#[from] ChopError),
    #[error(transparent)]
    Subtok(#[from] SubtokError),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLocation {
    pub file: PathBuf,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LemmaRecord {
    pub name: String,
    pub module_path: Vec<String>,
    pub statement_tokens: Vec<String>,
    pub syntax_tree: SExp,
    pub kernel_tree: SExp,
    pub source: SourceLocation,
}

/// Coq identifier: a letter or `_` followed by letters, digits, `_` or `'`.
pub fn is_valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    name != "_" && chars.all(|c| c.is_alphanumeric() || c == '_' || c == '\'')
}

/// The input and output streams a record offers to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Statement,
    SyntaxTree,
    KernelTree,
    Name,
}

impl Stream {
    pub fn label(self) -> &'static str {
        match self {
            Stream::Statement => "stmt",
            Stream::SyntaxTree => "cst",
            Stream::KernelTree => "ckt",
            Stream::Name => "name",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl LemmaRecord {
    /// Sub-token texts of one stream; trees are chopped and linearized first.
    pub fn stream_texts(
        &self,
        stream: Stream,
        chop_cfg: &ChopConfig,
        lex: &SuffixLexicon,
    ) -> Result<Vec<String>, CorpusError> {
        let tree_texts = |t: &SExp| -> Result<Vec<String>, CorpusError> {
            let chopped = chop(t, chop_cfg)?;
            Ok(linearize(&chopped)
                .iter()
                .flat_map(|tok| statement_texts(tok))
                .collect())
        };
        match stream {
            Stream::Statement => Ok(self
                .statement_tokens
                .iter()
                .flat_map(|tok| statement_texts(tok))
                .collect()),
            Stream::SyntaxTree => tree_texts(&self.syntax_tree),
            Stream::KernelTree => tree_texts(&self.kernel_tree),
            Stream::Name => Ok(name_texts(&self.name, lex)?),
        }
    }

    pub fn to_sexp(&self) -> SExp {
        let atoms = |xs: &[String]| SExp::List(xs.iter().map(SExp::atom).collect());
        let field = |tag: &str, value: SExp| SExp::list([SExp::atom(tag), value]);
        SExp::list([
            SExp::atom("lemma"),
            field("name", SExp::atom(&self.name)),
            field("path", atoms(&self.module_path)),
            field("line", SExp::atom(self.source.line.to_string())),
            field("stmt", atoms(&self.statement_tokens)),
            field("cst", self.syntax_tree.clone()),
            field("ckt", self.kernel_tree.clone()),
        ])
    }
}

const FIELDS: [&str; 6] = ["name", "path", "line", "stmt", "cst", "ckt"];

fn record_from_sexp(t: &SExp, file: &Path) -> Result<LemmaRecord, String> {
    let items = t.as_list().ok_or("record is not a list")?;
    let mut values: Vec<&SExp> = Vec::with_capacity(FIELDS.len());
    for (i, item) in items.iter().enumerate().skip(1) {
        let tag = item.head().ok_or_else(|| format!("field {i} is not a tagged list"))?;
        let expected = FIELDS.get(values.len()).copied();
        if !FIELDS.contains(&tag) {
            return Err(format!("unknown field `{tag}`"));
        }
        if expected != Some(tag) {
            return match expected {
                Some(e) => Err(format!("missing field `{e}` (found `{tag}`)")),
                None => Err(format!("duplicate field `{tag}`")),
            };
        }
        let field = item.as_list().unwrap();
        if field.len() != 2 {
            return Err(format!("field `{tag}` must hold exactly one value"));
        }
        values.push(&field[1]);
    }
    if values.len() < FIELDS.len() {
        return Err(format!("missing field `{}`", FIELDS[values.len()]));
    }

    let name = values[0]
        .as_atom()
        .filter(|n| is_valid_identifier(n))
        .ok_or("name is not a valid identifier")?
        .to_string();
    let atom_list = |v: &SExp, what: &str| -> Result<Vec<String>, String> {
        v.as_list()
            .ok_or_else(|| format!("{what} is not a list"))?
            .iter()
            .map(|x| x.as_atom().map(String::from).ok_or_else(|| format!("{what} holds a non-atom")))
            .collect()
    };
    let module_path = atom_list(values[1], "path")?;
    let line: u32 = values[2]
        .as_atom()
        .and_then(|l| l.parse().ok())
        .filter(|&l| l > 0)
        .ok_or("line is not a positive integer")?;
    let statement_tokens = atom_list(values[3], "stmt")?;
    if statement_tokens.is_empty() {
        return Err("statement has no tokens".into());
    }
    Ok(LemmaRecord {
        name,
        module_path,
        statement_tokens,
        syntax_tree: values[4].clone(),
        kernel_tree: values[5].clone(),
        source: SourceLocation {
            file: file.to_path_buf(),
            line,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRecord {
    pub position: Position,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Document {
    pub path: PathBuf,
    pub records: Vec<LemmaRecord>,
    pub skipped: Vec<SkippedRecord>,
}

impl Document {
    /// Identifier used by the splitter: the file name.
    pub fn id(&self) -> String {
        self.path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.display().to_string())
    }
}

pub fn parse_document(text: &str, path: &Path) -> Result<Document, CorpusError> {
    let forms = sexp::parse_spanned(text).map_err(|e| {
        let position = match e {
            ParseError::UnbalancedParen(p)
            | ParseError::UnterminatedString(p)
            | ParseError::InvalidEscape(p)
            | ParseError::EmptyAtom(p) => p,
            ParseError::EmptyInput => Position { line: 1, column: 1 },
        };
        CorpusError::Format {
            path: path.to_path_buf(),
            position,
            reason: e.to_string(),
        }
    })?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (position, form) in forms {
        if form.head() != Some("lemma") {
            return Err(CorpusError::Format {
                path: path.to_path_buf(),
                position,
                reason: "expected a `(lemma ...)` record".into(),
            });
        }
        match record_from_sexp(&form, path) {
            Ok(r) => records.push(r),
            Err(reason) => {
                log::warn!("{}:{position}: skipping record: {reason}", path.display());
                skipped.push(SkippedRecord { position, reason });
            }
        }
    }
    Ok(Document {
        path: path.to_path_buf(),
        records,
        skipped,
    })
}

pub fn load_document(path: &Path) -> Result<Document, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_document(&text, path)
}

/// Loads every `*.lemmas.sexp` file directly under `dir`, sorted by path.
pub fn load_corpus(dir: &Path) -> Result<Vec<Document>, CorpusError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CorpusError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|f| f.to_str())
                .is_some_and(|f| f.ends_with(&format!(".{DATASET_EXTENSION}")))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| load_document(p)).collect()
}

/// Renders records in the dataset format, one field per line.
pub fn render_document(records: &[LemmaRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let items = match r.to_sexp() {
            SExp::List(items) => items,
            SExp::Atom(_) => unreachable!(),
        };
        out.push_str("(lemma");
        for field in &items[1..] {
            out.push_str("\n  ");
            out.push_str(&sexp::print(field));
        }
        out.push_str(")\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Splits documents (never individual lemmas) into train/validation/test.
///
/// Documents are sorted, shuffled with a seeded ChaCha8 stream, then the first
/// ⌊r_train·n⌋ go to train, the next ⌊r_val·n⌋ to validation and the rest to test.
pub fn split_corpus<S: AsRef<str>>(
    docs: &[S],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatios(ratios));
    }
    let mut ids: Vec<String> = docs.iter().map(|d| d.as_ref().to_string()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() < 3 {
        return Err(CorpusError::TooFewDocuments(ids.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len() as f64;
    // The epsilon absorbs representation error such as 0.1 * 30 = 3.0000000000000004.
    let n_train = (rt * n + 1e-9).floor() as usize;
    let n_val = (rv * n + 1e-9).floor() as usize;
    let test = ids.split_off((n_train + n_val).min(ids.len()));
    let validation = ids.split_off(n_train.min(ids.len()));
    Ok(DatasetSplit {
        train: ids.into_iter().collect(),
        validation: validation.into_iter().collect(),
        test: test.into_iter().collect(),
        ratios,
        seed,
    })
}

impl DatasetSplit {
    pub fn records_in<'a>(
        &self,
        part: &BTreeSet<String>,
        docs: &'a [Document],
    ) -> Vec<&'a LemmaRecord> {
        docs.iter()
            .filter(|d| part.contains(&d.id()))
            .flat_map(|d| d.records.iter())
            .collect()
    }
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Sub-token vocabulary. Ids 0..=3 are reserved; corpus tokens start at 4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, usize>,
    min_frequency: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    min_frequency: usize,
    tokens: Vec<String>,
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        VocabularyRepr {
            min_frequency: self.min_frequency,
            tokens: self.tokens[RESERVED.len()..].to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = VocabularyRepr::deserialize(d)?;
        Vocabulary::from_tokens(repr.tokens, repr.min_frequency).map_err(serde::de::Error::custom)
    }
}

impl Vocabulary {
    /// Builds from token sequences: descending frequency, ties lexicographic.
    pub fn build<'a, I>(sequences: I, min_frequency: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for tok in seq {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let min_frequency = min_frequency.max(1);
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_frequency)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect(), min_frequency)
            .expect("counted tokens are distinct")
    }

    fn from_tokens(corpus_tokens: Vec<String>, min_frequency: usize) -> Result<Self, String> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut id_of = HashMap::with_capacity(corpus_tokens.len());
        for tok in corpus_tokens {
            if tok.is_empty() {
                return Err("vocabulary holds an empty token".into());
            }
            if id_of.insert(tok.clone(), tokens.len()).is_some() {
                return Err(format!("duplicate vocabulary token `{tok}`"));
            }
            tokens.push(tok);
        }
        Ok(Vocabulary {
            tokens,
            id_of,
            min_frequency,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    /// Id of a corpus token, if present. Reserved ids are never returned.
    pub fn get(&self, token: &str) -> Option<usize> {
        self.id_of.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn encode(&self, texts: &[String]) -> Vec<usize> {
        texts.iter().map(|t| self.id_or_unk(t)).collect()
    }
}

/// Vocabulary of one stream over the given (training) records.
pub fn build_vocabulary(
    records: &[&LemmaRecord],
    stream: Stream,
    min_frequency: usize,
    chop_cfg: &ChopConfig,
    lex: &SuffixLexicon,
) -> Result<Vocabulary, CorpusError> {
    let seqs = records
        .iter()
        .map(|r| r.stream_texts(stream, chop_cfg, lex))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Vocabulary::build(seqs.iter().map(Vec::as_slice), min_frequency))
}
