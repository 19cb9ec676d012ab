use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chop::ChopConfig;
use crate::corpus::{build_vocabulary, LemmaRecord, Stream};
use crate::nn::{adam_step, AdamConfig, AdamState, Gradients};
use crate::subtok::SuffixLexicon;

use super::{net, Model, ModelConfig, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-sub-token cross-entropy over the epoch's batches.
    pub train_loss: f64,
    /// Greedy top-1 exact match on the validation records; `None` without
    /// validation data.
    pub validation_top1: Option<f64>,
}

impl EpochMetrics {
    /// `epoch<TAB>train_loss<TAB>validation_top1`, with `-` for a missing value.
    pub fn to_line(&self) -> String {
        let val = self.validation_top1.map_or("-".to_string(), |v| format!("{v:.6}"));
        format!("{}\t{:.6}\t{}", self.epoch, self.train_loss, val)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept; 0 is the initialization.
    pub best_epoch: usize,
}

/// Stream id for the data-order RNG, far away from the per-parameter streams.
const ORDER_STREAM: u64 = u64::MAX;

fn greedy_top1(model: &Model, records: &[&LemmaRecord]) -> Result<f64, ModelError> {
    let mut hits = 0;
    for r in records {
        if model.greedy(r)?.name == r.name {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

/// Trains with teacher forcing and Adam. Vocabularies come from the training
/// records only. After every epoch the validation records are decoded
/// greedily; the parameters of the best epoch are kept (later epochs win
/// ties). Without validation records the last epoch is kept.
pub fn train(
    train_records: &[&LemmaRecord],
    validation: &[&LemmaRecord],
    config: ModelConfig,
    chop: ChopConfig,
    lexicon: SuffixLexicon,
    tc: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    if train_records.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if tc.batch_size == 0 {
        return Err(ModelError::InvalidConfig("batch size must be positive".into()));
    }
    config.validate()?;
    let input_vocabs = config
        .inputs
        .iter()
        .map(|&s| build_vocabulary(train_records, s, config.min_frequency, &chop, &lexicon))
        .collect::<Result<Vec<_>, _>>()?;
    let output_vocab = build_vocabulary(train_records, Stream::Name, config.min_frequency, &chop, &lexicon)?;
    let mut model = Model::new(config, chop, lexicon, input_vocabs, output_vocab, tc.seed)?;
    model.training = Some(tc.clone());

    let prepared = train_records
        .iter()
        .map(|r| model.prepare(r, true))
        .collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(ORDER_STREAM);
    let adam = tc.adam();
    let mut state = AdamState::new(model.params());

    let mut log = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, crate::nn::ParamStore)> = None;
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_tokens) = (0.0, 0usize);
        for batch in order.chunks(tc.batch_size) {
            let mut grads = Gradients::zeros_like(model.params());
            let mut tokens = 0;
            for &i in batch {
                let p = &prepared[i];
                let (loss, g) = net::example_loss_and_grads(&model.ids, &model.config, model.params(), p)?;
                grads.accumulate(&g);
                epoch_loss += loss;
                tokens += p.targets.len();
            }
            epoch_tokens += tokens;
            grads.scale(1.0 / tokens as f64);
            adam_step(model.params_mut(), &grads, &mut state, &adam)?;
        }
        let train_loss = epoch_loss / epoch_tokens as f64;
        let validation_top1 = if validation.is_empty() {
            None
        } else {
            Some(greedy_top1(&model, validation)?)
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4}, validation top-1 {}",
            validation_top1.map_or("n/a".into(), |v| format!("{v:.3}"))
        );
        log.push(EpochMetrics {
            epoch,
            train_loss,
            validation_top1,
        });
        if let Some(v) = validation_top1 {
            if best.as_ref().map_or(true, |(b, _, _)| v >= *b) {
                best = Some((v, epoch, model.params().clone()));
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            *model.params_mut() = params;
            epoch
        }
        None => tc.epochs,
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}
