use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_ids, net, ModelConfig, ModelMasks, ModelParams};
use crate::corpus::StreamingSample;
use crate::error::{invalid, Error, Result};
use crate::masks::AttentionMask;
use crate::nn::{Adam, AdamConfig, Graph, Matrix};
use crate::policy::WaitKPolicy;
use crate::text::{Gamma, TokenId};

/// Which target positions contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossScope {
    /// History sentences included.
    #[default]
    AllPositions,
    /// Only the current sentence and its tail marker.
    CurrentSentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub label_smoothing: f64,
    pub scope: LossScope,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            label_smoothing: 0.1,
            scope: LossScope::AllPositions,
        }
    }
}

/// A sentence inside a marker-annotated sequence: `first` is the 0-based index
/// of its first token and its closing marker sits at `first + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Span {
    pub first: usize,
    pub len: usize,
}

/// Parsed `lead s1 <SEP> … sN tail` sequence pair.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Sample {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
    pub src_spans: Vec<Span>,
    pub tgt_spans: Vec<Span>,
}

fn spans(ids: &[TokenId]) -> Result<Vec<Span>> {
    if !matches!(ids.first(), Some(&TokenId::DOC) | Some(&TokenId::CONT)) {
        return Err(invalid("sample must open with <DOC> or <CONT>"));
    }
    let mut out = Vec::new();
    let mut first = 1;
    for (i, &id) in ids.iter().enumerate().skip(1) {
        if id == TokenId::DOC || id == TokenId::CONT {
            return Err(invalid("lead marker inside a sample"));
        }
        if id.closes_sentence() {
            let tail = id == TokenId::BRK || id == TokenId::END;
            if tail != (i + 1 == ids.len()) {
                return Err(invalid("sample must end with exactly one <BRK> or <END>"));
            }
            out.push(Span { first, len: i - first });
            first = i + 1;
        }
    }
    if first != ids.len() {
        return Err(invalid("sample must end with <BRK> or <END>"));
    }
    Ok(out)
}

impl Sample {
    pub fn new(src: Vec<TokenId>, tgt: Vec<TokenId>) -> Result<Self> {
        let src_spans = spans(&src)?;
        let tgt_spans = spans(&tgt)?;
        if src_spans.len() != tgt_spans.len() {
            return Err(invalid("source and target hold different sentence counts"));
        }
        Ok(Sample {
            src,
            tgt,
            src_spans,
            tgt_spans,
        })
    }

    /// Source positions visible when predicting target index `q` (0-based,
    /// `q ≥ 1`) under wait-k with the sentence's own length ratio.
    pub fn visible_source(&self, k: usize, q: usize) -> usize {
        let m = self
            .tgt_spans
            .iter()
            .position(|s| q <= s.first + s.len)
            .expect("target index inside the sample");
        let (x, y) = (self.src_spans[m], self.tgt_spans[m]);
        let closed = x.first + x.len + 1;
        if q == y.first + y.len || x.len == 0 {
            return closed;
        }
        let r = q - y.first + 1;
        let gamma = Gamma::new(y.len as u64, x.len as u64).expect("non-empty sentence");
        let g = WaitKPolicy { k, gamma }.local_delay(r);
        if g >= x.len {
            closed
        } else {
            x.first + g
        }
    }

    /// Training masks for wait-`k`.
    pub fn masks(&self, config: &ModelConfig, k: usize) -> Result<ModelMasks> {
        let n = self.src.len();
        let t = self.tgt.len() - 1;
        let limits: Vec<usize> = (1..=t).map(|q| self.visible_source(k, q)).collect();
        Ok(ModelMasks {
            encoder: ModelMasks::training_encoder(config.encoder_kind, k, n)?,
            decoder_self: AttentionMask::causal(t),
            cross: AttentionMask::prefix_limits(&limits, n),
        })
    }

    /// Label for each decoder input position, `None` where the loss skips it.
    pub fn labels(&self, scope: LossScope) -> Vec<Option<usize>> {
        let current = self.tgt_spans.last().map_or(0, |s| s.first);
        (1..self.tgt.len())
            .map(|q| match scope {
                LossScope::CurrentSentence if q < current => None,
                _ => Some(self.tgt[q].index()),
            })
            .collect()
    }
}

/// Samples sharing one wait-k lag.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub(crate) samples: Vec<Sample>,
    pub k: usize,
}

impl TrainingBatch {
    pub fn new(config: &ModelConfig, samples: &[StreamingSample], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("wait-k needs k >= 1"));
        }
        let samples = samples
            .iter()
            .map(|s| {
                Sample::new(config.vocab.encode(&s.source), config.vocab.encode(&s.target))
            })
            .collect::<Result<_>>()?;
        Ok(TrainingBatch { samples, k })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Label-smoothed cross-entropy averaged over the labelled target tokens of
/// the batch, and its gradient for every parameter.
pub fn loss_and_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &TrainingBatch,
    options: LossOptions,
) -> Result<(f64, Vec<Matrix>)> {
    config.validate()?;
    let n = net(config);
    let labels: Vec<Vec<Option<usize>>> = batch.samples.iter().map(|s| s.labels(options.scope)).collect();
    let total: usize = labels.iter().map(|l| l.iter().flatten().count()).sum();
    if total == 0 {
        return Ok((0.0, params.store.zeros_like()));
    }
    let mut g = Graph::new(&params.store);
    let mut loss = None;
    for (sample, labels) in batch.samples.iter().zip(&labels) {
        if labels.iter().all(Option::is_none) {
            continue;
        }
        let masks = sample.masks(config, batch.k)?;
        let src = check_ids(config, &sample.src)?;
        let tgt = check_ids(config, &sample.tgt[..sample.tgt.len() - 1])?;
        let enc = n.encode(&mut g, &src, &masks.encoder);
        let logits = n.decode_logits(&mut g, enc, &tgt, &masks);
        let l = g.cross_entropy(logits, labels, options.label_smoothing, total as f64);
        loss = Some(match loss {
            None => l,
            Some(acc) => g.add(acc, l),
        });
    }
    let loss = loss.expect("at least one labelled sample");
    let value = g.value(loss).data[0];
    Ok((value, g.backward(loss)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Inclusive range k is drawn from, once per batch.
    pub k_min: usize,
    pub k_max: usize,
    pub adam: AdamConfig,
    pub loss: LossOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            k_min: 1,
            k_max: 32,
            adam: AdamConfig::default(),
            loss: LossOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub params: ModelParams,
    /// Batch loss before each update.
    pub losses: Vec<f64>,
    /// k used for each batch.
    pub ks: Vec<usize>,
}

/// Multi-k training: each batch draws k uniformly from `[k_min, k_max]`.
/// Batches walk a seeded shuffle of the corpus, reshuffled every epoch.
pub fn train_multi_k(
    corpus: &[StreamingSample],
    config: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<TrainingRun> {
    if corpus.is_empty() {
        return Err(invalid("training corpus is empty"));
    }
    if train.k_min == 0 || train.k_min > train.k_max {
        return Err(invalid(format!("bad k range {}..={}", train.k_min, train.k_max)));
    }
    if train.batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let mut params = ModelParams::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut adam = Adam::new(&params.store, train.adam);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(train.steps);
    let mut ks = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let mut picked = Vec::with_capacity(train.batch_size);
        for _ in 0..train.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(corpus[order[cursor]].clone());
            cursor += 1;
        }
        let k = rng.gen_range(train.k_min..=train.k_max);
        let batch = TrainingBatch::new(config, &picked, k)?;
        let (loss, grads) = loss_and_gradients(&params, config, &batch, train.loss)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        adam.update(&mut params.store, &grads);
        losses.push(loss);
        ks.push(k);
    }
    Ok(TrainingRun { params, losses, ks })
}
