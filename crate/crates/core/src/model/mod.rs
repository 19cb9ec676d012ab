//! Multi-input encoder-decoder for lemma names.
//!
//! One bidirectional GRU encoder per enabled input stream, a fully connected
//! layer that fuses their final states into the decoder's initial state, and a
//! GRU decoder with general (bilinear) attention over all encoder positions
//! and a pointer-generator copy gate.

mod beam;
mod checkpoint;
mod net;
mod train;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, FORMAT_VERSION, MAGIC};
pub use train::{train, EpochMetrics, TrainConfig, TrainOutcome};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chop::ChopConfig;
use crate::corpus::{CorpusError, LemmaRecord, Stream, Vocabulary, EOS, RESERVED, UNK};
use crate::nn::check::{check_gradients, GradCheckReport};
use crate::nn::{Gradients, Graph, NnError, ParamRng, ParamStore};
use crate::subtok::{detokenize, SuffixLexicon};

use net::NetIds;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input stream `{0}` is empty after sub-tokenization")]
    EmptyInput(Stream),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// The five input configurations, by name.
pub const CONFIG_NAMES: [&str; 5] = ["stmt", "stmt+cst", "stmt+ckt", "cst+ckt", "stmt+cst+ckt"];

/// Shipping default: statement plus chopped kernel tree.
pub const DEFAULT_CONFIG_NAME: &str = "stmt+ckt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub inputs: Vec<Stream>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub bidirectional: bool,
    pub use_attention: bool,
    pub use_copy: bool,
    pub max_input_len: usize,
    pub max_output_len: usize,
    pub beam_width: usize,
    pub min_frequency: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            inputs: vec![Stream::Statement, Stream::KernelTree],
            embed_dim: 64,
            hidden_dim: 128,
            bidirectional: true,
            use_attention: true,
            use_copy: true,
            max_input_len: 512,
            max_output_len: 16,
            beam_width: 5,
            min_frequency: 1,
        }
    }
}

impl ModelConfig {
    /// Default configuration with the inputs named by `name` (e.g. `stmt+ckt`).
    pub fn from_name(name: &str) -> Result<Self, ModelError> {
        if !CONFIG_NAMES.contains(&name) {
            return Err(ModelError::InvalidConfig(format!(
                "unknown input configuration `{name}`; expected one of: {}",
                CONFIG_NAMES.join(", ")
            )));
        }
        let inputs = name
            .split('+')
            .map(|part| match part {
                "stmt" => Stream::Statement,
                "cst" => Stream::SyntaxTree,
                _ => Stream::KernelTree,
            })
            .collect();
        Ok(ModelConfig {
            inputs,
            ..ModelConfig::default()
        })
    }

    pub fn config_name(&self) -> String {
        self.inputs.iter().map(|s| s.label()).collect::<Vec<_>>().join("+")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.inputs.is_empty() {
            return bad("at least one input stream is required");
        }
        let order = [Stream::Statement, Stream::SyntaxTree, Stream::KernelTree];
        let mut last = None;
        for s in &self.inputs {
            let Some(pos) = order.iter().position(|o| o == s) else {
                return bad("the name stream cannot be a model input");
            };
            if last.is_some_and(|l| pos <= l) {
                return bad("inputs must be distinct and listed as stmt, cst, ckt");
            }
            last = Some(pos);
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.bidirectional && self.hidden_dim % 2 != 0 {
            return bad("a bidirectional encoder needs an even hidden_dim");
        }
        if self.max_input_len == 0 || self.max_output_len == 0 {
            return bad("length limits must be positive");
        }
        if self.beam_width == 0 {
            return bad("beam width k must be at least 1");
        }
        if self.use_copy && !self.use_attention {
            return bad("the copy mechanism needs attention");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub name: String,
    pub score: f64,
    pub sub_tokens: Vec<String>,
}

/// A trained (or freshly initialized) model with everything needed to
/// reproduce its inputs: chopping, lexicon, vocabularies and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub chop: ChopConfig,
    pub lexicon: SuffixLexicon,
    /// Aligned with `config.inputs`.
    pub input_vocabs: Vec<Vocabulary>,
    pub output_vocab: Vocabulary,
    pub training: Option<TrainConfig>,
    params: ParamStore,
    ids: NetIds,
}

/// Model-ready view of one record.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Prepared {
    /// Vocabulary ids per enabled input, truncated.
    pub inputs: Vec<Vec<usize>>,
    /// Extended-vocabulary id of every source position, inputs concatenated.
    pub source_ext: Vec<usize>,
    /// Source texts outside the output vocabulary, in first-seen order;
    /// extended id `V + i` names `oov[i]`.
    pub oov: Vec<String>,
    /// Extended ids of the name sub-tokens followed by EOS.
    pub targets: Vec<usize>,
}

/// Decoder internals at one step, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProbe {
    /// Probability of every extended-vocabulary entry.
    pub probs: Vec<f64>,
    /// Text of every extended-vocabulary entry.
    pub ext_tokens: Vec<String>,
    pub attention: Vec<f64>,
    pub source_tokens: Vec<String>,
    pub p_gen: Option<f64>,
    /// Raw vocabulary logits.
    pub logits: Vec<f64>,
}

impl Model {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(
        config: ModelConfig,
        chop: ChopConfig,
        lexicon: SuffixLexicon,
        input_vocabs: Vec<Vocabulary>,
        output_vocab: Vocabulary,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        chop.validate().map_err(CorpusError::from)?;
        lexicon.validate().map_err(CorpusError::from)?;
        if input_vocabs.len() != config.inputs.len() {
            return Err(ModelError::InvalidConfig(
                "one vocabulary per input stream is required".into(),
            ));
        }
        let mut params = ParamStore::new();
        let sizes: Vec<usize> = input_vocabs.iter().map(Vocabulary::len).collect();
        let ids = net::register(&config, &sizes, output_vocab.len(), &mut params, Some(ParamRng::new(seed)));
        Ok(Model {
            config,
            chop,
            lexicon,
            input_vocabs,
            output_vocab,
            training: None,
            params,
            ids,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub(crate) fn prepare(&self, record: &LemmaRecord, with_target: bool) -> Result<Prepared, ModelError> {
        let v = self.output_vocab.len();
        let mut inputs = Vec::with_capacity(self.config.inputs.len());
        let mut source_ext = Vec::new();
        let mut oov: Vec<String> = Vec::new();
        for (stream, vocab) in self.config.inputs.iter().zip(&self.input_vocabs) {
            let mut texts = record.stream_texts(*stream, &self.chop, &self.lexicon)?;
            texts.truncate(self.config.max_input_len);
            if texts.is_empty() {
                return Err(ModelError::EmptyInput(*stream));
            }
            inputs.push(vocab.encode(&texts));
            for t in texts {
                let ext = match self.output_vocab.get(&t) {
                    Some(id) => id,
                    None => match oov.iter().position(|o| *o == t) {
                        Some(i) => v + i,
                        None => {
                            oov.push(t);
                            v + oov.len() - 1
                        }
                    },
                };
                source_ext.push(ext);
            }
        }
        let mut targets = Vec::new();
        if with_target {
            for t in record.stream_texts(Stream::Name, &self.chop, &self.lexicon)? {
                let id = match self.output_vocab.get(&t) {
                    Some(id) => id,
                    None if self.config.use_copy => oov.iter().position(|o| *o == t).map_or(UNK, |i| v + i),
                    None => UNK,
                };
                targets.push(id);
            }
            targets.push(EOS);
        }
        Ok(Prepared {
            inputs,
            source_ext,
            oov,
            targets,
        })
    }

    pub(crate) fn ext_token<'a>(&'a self, prepared: &'a Prepared, id: usize) -> &'a str {
        let v = self.output_vocab.len();
        if id < v {
            self.output_vocab.token(id).unwrap_or(RESERVED[1])
        } else {
            &prepared.oov[id - v]
        }
    }

    /// Summed teacher-forced loss and its gradient over `records`, plus the
    /// number of predicted sub-tokens (name sub-tokens + EOS).
    pub fn loss_and_gradients(&self, records: &[&LemmaRecord]) -> Result<(f64, Gradients, usize), ModelError> {
        let prepared = records
            .iter()
            .map(|r| self.prepare(r, true))
            .collect::<Result<Vec<_>, _>>()?;
        let mut total = Gradients::zeros_like(&self.params);
        let mut loss = 0.0;
        let mut tokens = 0;
        for p in &prepared {
            let (l, g) = net::example_loss_and_grads(&self.ids, &self.config, &self.params, p)?;
            loss += l;
            total.accumulate(&g);
            tokens += p.targets.len();
        }
        Ok((loss, total, tokens))
    }

    /// Mean per-sub-token loss over `records` under this model's parameters.
    pub fn mean_loss(&self, records: &[&LemmaRecord]) -> Result<f64, ModelError> {
        self.mean_loss_with(&self.params, records)
    }

    fn mean_loss_with(&self, params: &ParamStore, records: &[&LemmaRecord]) -> Result<f64, ModelError> {
        let mut loss = 0.0;
        let mut tokens = 0;
        for r in records {
            let p = self.prepare(r, true)?;
            let mut g = Graph::new(params);
            let l = net::example_loss(&self.ids, &self.config, &mut g, &p)?;
            loss += g.value(l).item();
            tokens += p.targets.len();
        }
        Ok(loss / tokens as f64)
    }

    /// Finite-difference check of the full batch loss (mean over sub-tokens).
    pub fn gradient_check(&self, records: &[&LemmaRecord], coords: usize, seed: u64) -> Result<GradCheckReport, ModelError> {
        let (_, mut grads, tokens) = self.loss_and_gradients(records)?;
        grads.scale(1.0 / tokens as f64);
        let report = check_gradients(&self.params, &grads, coords, seed, |p| {
            self.mean_loss_with(p, records).map_err(|e| match e {
                ModelError::Nn(n) => n,
                _ => NnError::NonFiniteValue { op: "model loss" },
            })
        })?;
        Ok(report)
    }

    /// Top-k names by beam search with length-normalized scores.
    pub fn suggest(&self, record: &LemmaRecord, k: usize) -> Result<Vec<Suggestion>, ModelError> {
        let prepared = self.prepare(record, false)?;
        beam::search(self, &prepared, k.max(1))
    }

    /// Greedy decoding: the arg-max sub-token at every step.
    pub fn greedy(&self, record: &LemmaRecord) -> Result<Suggestion, ModelError> {
        let prepared = self.prepare(record, false)?;
        beam::greedy(self, &prepared)
    }

    /// Decoder distribution after feeding `prefix` (sub-token texts) with
    /// teacher forcing.
    pub fn probe(&self, record: &LemmaRecord, prefix: &[&str]) -> Result<StepProbe, ModelError> {
        let p = self.prepare(record, false)?;
        let v = self.output_vocab.len();
        let to_ext = |t: &str| {
            self.output_vocab
                .get(t)
                .or_else(|| p.oov.iter().position(|o| o == t).map(|i| v + i))
                .unwrap_or(UNK)
        };
        let mut g = Graph::new(&self.params);
        let session = net::start(&self.ids, &self.config, &mut g, &p)?;
        let mut state = session.init;
        let mut prev = crate::corpus::BOS;
        let mut out = None;
        for t in prefix.iter().map(|t| to_ext(t)).chain(std::iter::once(usize::MAX)) {
            let step = net::step(&self.ids, &mut g, &session, prev, state)?;
            state = step.state;
            if t == usize::MAX {
                out = Some(step);
                break;
            }
            prev = t;
        }
        let step = out.expect("final step");
        let probs = net::step_probs(&mut g, &step)?;
        let ext_tokens = (0..probs.len()).map(|i| self.ext_token(&p, i).to_string()).collect();
        let source_tokens = p.source_ext.iter().map(|&i| self.ext_token(&p, i).to_string()).collect();
        Ok(StepProbe {
            probs,
            ext_tokens,
            attention: step.attention.map(|a| g.value(a).data().to_vec()).unwrap_or_default(),
            source_tokens,
            p_gen: step.p_gen.map(|x| g.value(x).item()),
            logits: g.value(step.logits).data().to_vec(),
        })
    }
}

pub(crate) fn name_of(sub_tokens: &[String]) -> String {
    detokenize(sub_tokens)
}

#[cfg(test)]
mod tests;
