//! Sliding-window sentence segmenter.
//!
//! For token t the classifier sees `history_len` past tokens, t itself and
//! `window` future tokens (pad embeddings outside the stream). Embeddings are
//! concatenated and fed through feed-forward layers to a split / no-split
//! output. The decision for token t is available once token t + w is read.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::graph::masked_softmax;
use crate::nn::{Adam, AdamConfig, Graph, Matrix, ParamStore};
use crate::text::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub history_len: usize,
    pub window: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub ff_layers: usize,
    pub threshold: f64,
    pub vocab: Vocabulary,
}

impl SegmenterConfig {
    pub fn new(vocab: Vocabulary, window: usize) -> Self {
        SegmenterConfig {
            history_len: 10,
            window,
            embedding_dim: 8,
            hidden_dim: 32,
            ff_layers: 2,
            threshold: 0.5,
            vocab,
        }
    }

    pub fn slots(&self) -> usize {
        self.history_len + 1 + self.window
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.ff_layers == 0 {
            return Err(invalid("segmenter sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid("split threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A sentence ends after stream position `position` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundaryEvent {
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterModel {
    pub config: SegmenterConfig,
    pub params: ParamStore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Minimum share of split samples in every batch.
    pub min_split_ratio: f64,
    pub adam: AdamConfig,
}

impl Default for SegmenterTrainConfig {
    fn default() -> Self {
        SegmenterTrainConfig {
            steps: 400,
            batch_size: 32,
            min_split_ratio: 0.3,
            adam: AdamConfig {
                lr: 1e-2,
                warmup: 20,
                ..AdamConfig::default()
            },
        }
    }
}

/// Token ids of the window around 0-based index `t`.
fn window_ids(config: &SegmenterConfig, ids: &[TokenId], t: usize, available: usize) -> Vec<usize> {
    let from = t as isize - config.history_len as isize;
    (0..config.slots())
        .map(|s| {
            let p = from + s as isize;
            if p < 0 || p as usize >= available {
                TokenId::PAD.index()
            } else {
                ids[p as usize].index()
            }
        })
        .collect()
}

fn init(config: &SegmenterConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize, a: f64| {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
    };
    let mut store = ParamStore::new();
    store.add("embed", uniform(config.vocab.len(), config.embedding_dim, 0.5));
    let mut width = config.slots() * config.embedding_dim;
    for l in 0..config.ff_layers {
        let a = (6.0 / (width + config.hidden_dim) as f64).sqrt();
        store.add(format!("ff{l}.w"), uniform(width, config.hidden_dim, a));
        store.add(format!("ff{l}.b"), Matrix::zeros(1, config.hidden_dim));
        width = config.hidden_dim;
    }
    let a = (6.0 / (width + 2) as f64).sqrt();
    store.add("out.w", uniform(width, 2, a));
    store.add("out.b", Matrix::zeros(1, 2));
    store
}

fn logits(g: &mut Graph, config: &SegmenterConfig, windows: &[Vec<usize>]) -> crate::nn::Var {
    let flat: Vec<usize> = windows.concat();
    let table = g.param(0);
    let e = g.gather(table, &flat);
    let mut x = g.reshape(e, windows.len(), config.slots() * config.embedding_dim);
    for l in 0..config.ff_layers {
        let (w, b) = (g.param(1 + 2 * l), g.param(2 + 2 * l));
        let h = g.matmul(x, w);
        let h = g.add_row(h, b);
        x = g.gelu(h);
    }
    let o = 1 + 2 * config.ff_layers;
    let (w, b) = (g.param(o), g.param(o + 1));
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

impl SegmenterModel {
    /// Split probability for each window.
    pub fn split_probabilities(&self, windows: &[Vec<usize>]) -> Vec<f64> {
        if windows.is_empty() {
            return Vec::new();
        }
        let mut g = Graph::new(&self.params);
        let l = logits(&mut g, &self.config, windows);
        let p = masked_softmax(g.value(l), &|_, _| true);
        (0..p.rows).map(|r| p.get(r, 1)).collect()
    }

    /// Split probability of every token of a complete stream.
    pub fn stream_probabilities(&self, ids: &[TokenId]) -> Vec<f64> {
        let windows: Vec<Vec<usize>> = (0..ids.len())
            .map(|t| window_ids(&self.config, ids, t, ids.len()))
            .collect();
        self.split_probabilities(&windows)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let model: SegmenterModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        model.config.validate()?;
        init(&model.config, 0).check_compatible(&model.params)?;
        Ok(model)
    }
}

/// Labelled stream: ids plus a split flag per token.
fn labelled_stream(vocab: &Vocabulary, sentences: &[Vec<String>]) -> (Vec<TokenId>, Vec<bool>) {
    let mut ids = Vec::new();
    let mut split = Vec::new();
    for s in sentences {
        ids.extend(vocab.encode(s));
        split.extend((0..s.len()).map(|i| i + 1 == s.len()));
    }
    (ids, split)
}

/// Trains the classifier on consecutive sentences of one stream.
pub fn train_segmenter(
    sentences: &[Vec<String>],
    config: SegmenterConfig,
    train: &SegmenterTrainConfig,
    seed: u64,
) -> Result<SegmenterModel> {
    config.validate()?;
    let sentences: Vec<Vec<String>> = sentences.iter().filter(|s| !s.is_empty()).cloned().collect();
    if sentences.len() < 2 {
        return Err(Error::Data("segmenter training needs at least two sentences".into()));
    }
    if train.batch_size == 0 || !(0.0..=1.0).contains(&train.min_split_ratio) {
        return Err(invalid("bad segmenter batch settings"));
    }
    let (ids, split) = labelled_stream(&config.vocab, &sentences);
    let positives: Vec<usize> = (0..ids.len()).filter(|&t| split[t]).collect();
    let mut model = SegmenterModel {
        params: init(&config, seed),
        config,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5e9));
    let mut adam = Adam::new(&model.params, train.adam);
    let min_pos = (train.min_split_ratio * train.batch_size as f64).ceil() as usize;
    for step in 0..train.steps {
        let mut picked: Vec<usize> = (0..min_pos).map(|_| *positives.choose(&mut rng).expect("two sentences")).collect();
        while picked.len() < train.batch_size {
            picked.push(rng.gen_range(0..ids.len()));
        }
        let windows: Vec<Vec<usize>> = picked
            .iter()
            .map(|&t| window_ids(&model.config, &ids, t, ids.len()))
            .collect();
        let targets: Vec<Option<usize>> = picked.iter().map(|&t| Some(usize::from(split[t]))).collect();
        let (loss, grads) = {
            let mut g = Graph::new(&model.params);
            let l = logits(&mut g, &model.config, &windows);
            let loss = g.cross_entropy(l, &targets, 0.0, targets.len() as f64);
            (g.value(loss).data[0], g.backward(loss))
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        adam.update(&mut model.params, &grads);
    }
    Ok(model)
}

/// Decisions emitted so far by a streaming fold over the source.
#[derive(Debug, Clone)]
pub struct StreamingSegmenter<'m> {
    model: &'m SegmenterModel,
    ids: Vec<TokenId>,
    decided: usize,
}

/// One emitted decision: token `position` was classified after `read` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub position: usize,
    pub read: usize,
    pub split: bool,
}

impl<'m> StreamingSegmenter<'m> {
    pub fn new(model: &'m SegmenterModel) -> Self {
        StreamingSegmenter {
            model,
            ids: Vec::new(),
            decided: 0,
        }
    }

    fn decide(&mut self, available: usize) -> Decision {
        let t = self.decided;
        let w = window_ids(&self.model.config, &self.ids, t, available);
        let p = self.model.split_probabilities(&[w])[0];
        self.decided += 1;
        Decision {
            position: t + 1,
            read: self.ids.len(),
            split: p >= self.model.config.threshold,
        }
    }

    /// Reads one token; returns the decision it completes, if any.
    pub fn push(&mut self, token: TokenId) -> Option<Decision> {
        self.ids.push(token);
        if self.ids.len() > self.decided + self.model.config.window {
            Some(self.decide(self.ids.len()))
        } else {
            None
        }
    }

    /// Decides the remaining tokens with padded windows.
    pub fn finish(&mut self) -> Vec<Decision> {
        let n = self.ids.len();
        let mut out = Vec::new();
        while self.decided < n {
            out.push(self.decide(n));
        }
        out
    }
}

/// Boundary events of a whole stream.
pub fn segment_stream(model: &SegmenterModel, stream: &[String]) -> Vec<BoundaryEvent> {
    let ids = model.config.vocab.encode(stream);
    let mut seg = StreamingSegmenter::new(model);
    let mut decisions: Vec<Decision> = ids.iter().filter_map(|&t| seg.push(t)).collect();
    decisions.extend(seg.finish());
    decisions
        .into_iter()
        .filter(|d| d.split)
        .map(|d| BoundaryEvent { position: d.position })
        .collect()
}

/// Reference boundaries served as segmenter output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleSegmenter {
    boundaries: Vec<BoundaryEvent>,
}

impl OracleSegmenter {
    /// From sentence lengths of the reference segmentation.
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut at = 0;
        let boundaries = lengths
            .iter()
            .filter(|&&l| l > 0)
            .map(|&l| {
                at += l;
                BoundaryEvent { position: at }
            })
            .collect();
        OracleSegmenter { boundaries }
    }

    pub fn segment(&self) -> Vec<BoundaryEvent> {
        self.boundaries.clone()
    }
}

/// Boundary F1 of `predicted` against `reference`; 1.0 when both are empty.
pub fn boundary_f1(predicted: &[BoundaryEvent], reference: &[BoundaryEvent]) -> f64 {
    if predicted.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let hits = predicted.iter().filter(|p| reference.binary_search(p).is_ok()).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / predicted.len() as f64;
    let recall = hits / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Checks events increase strictly and stay within the stream.
pub fn validate_events(events: &[BoundaryEvent], stream_len: usize) -> Result<()> {
    let mut prev = 0;
    for e in events {
        if e.position <= prev || e.position > stream_len {
            return Err(Error::Data(format!(
                "boundary {} must follow {prev} and lie within a {stream_len}-token stream",
                e.position
            )));
        }
        prev = e.position;
    }
    Ok(())
}

/// One position per line.
pub fn parse_events(text: &str) -> Result<Vec<BoundaryEvent>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse()
                .map(|position| BoundaryEvent { position })
                .map_err(|_| Error::Data(format!("bad boundary position {l:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    /// Sentences of random words; `terminated` appends a terminator word,
    /// otherwise every sentence opens with `<s>` so only the next token tells.
    fn corpus(seed: u64, n: usize, terminated: bool) -> Vec<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = words(8);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(1..5);
                let mut s: Vec<String> = (0..len).map(|_| vocab.choose(&mut rng).unwrap().clone()).collect();
                if terminated {
                    s.push(".".into());
                } else {
                    s.insert(0, "<s>".into());
                }
                s
            })
            .collect()
    }

    fn reference(sentences: &[Vec<String>]) -> Vec<BoundaryEvent> {
        OracleSegmenter::from_lengths(&sentences.iter().map(Vec::len).collect::<Vec<_>>()).segment()
    }

    fn vocab() -> Vocabulary {
        let mut w = words(8);
        w.extend([".".to_string(), "<s>".to_string()]);
        Vocabulary::from_surfaces(w).unwrap()
    }

    fn f1_after_training(terminated: bool, window: usize) -> f64 {
        let train = corpus(1, 300, terminated);
        let test = corpus(2, 60, terminated);
        let model = train_segmenter(&train, SegmenterConfig::new(vocab(), window), &SegmenterTrainConfig::default(), 5).unwrap();
        let stream: Vec<String> = test.concat();
        let events = segment_stream(&model, &stream);
        validate_events(&events, stream.len()).unwrap();
        boundary_f1(&events, &reference(&test))
    }

    #[test]
    fn terminators_are_learned_exactly() {
        assert_eq!(f1_after_training(true, 0), 1.0);
    }

    #[test]
    fn future_context_resolves_ambiguous_ends() {
        let w0 = f1_after_training(false, 0);
        let w2 = f1_after_training(false, 2);
        assert!(w2 >= w0, "w=2 {w2} < w=0 {w0}");
        assert!(w2 > 0.95 && w0 < 0.9, "w=0 {w0} w=2 {w2}");
    }

    #[test]
    fn training_is_deterministic() {
        let train = corpus(1, 50, true);
        let cfg = SegmenterConfig::new(vocab(), 1);
        let t = SegmenterTrainConfig { steps: 20, ..Default::default() };
        assert_eq!(
            train_segmenter(&train, cfg.clone(), &t, 3).unwrap(),
            train_segmenter(&train, cfg, &t, 3).unwrap()
        );
    }

    #[test]
    fn decisions_wait_for_the_window() {
        let cfg = SegmenterConfig::new(vocab(), 2);
        let model = SegmenterModel { params: init(&cfg, 0), config: cfg };
        let mut seg = StreamingSegmenter::new(&model);
        let ids = model.config.vocab.encode(&words(4));
        assert!(seg.push(ids[0]).is_none());
        assert!(seg.push(ids[1]).is_none());
        let d = seg.push(ids[2]).unwrap();
        assert_eq!((d.position, d.read), (1, 3));
        seg.push(ids[3]);
        let rest = seg.finish();
        assert_eq!(rest.iter().map(|d| d.position).collect::<Vec<_>>(), vec![3, 4]);
        assert!(rest.iter().all(|d| d.read == 4));
    }

    #[test]
    fn decisions_ignore_tokens_past_the_window() {
        let cfg = SegmenterConfig::new(vocab(), 1);
        let model = SegmenterModel { params: init(&cfg, 4), config: cfg };
        let ids = model.config.vocab.encode(&words(8));
        let mut other = ids.clone();
        other[5] = TokenId(ids[5].0 + 1);
        let a = model.stream_probabilities(&ids);
        let b = model.stream_probabilities(&other);
        // token 4 (index 3) sees up to index 4 with w = 1
        assert_eq!(a[..4], b[..4]);
        assert_ne!(a[4], b[4]);
    }

    #[test]
    fn degenerate_corpus_rejected() {
        let cfg = SegmenterConfig::new(vocab(), 0);
        assert!(train_segmenter(&[words(3)], cfg, &SegmenterTrainConfig::default(), 0).is_err());
    }

    #[test]
    fn f1_and_parsing() {
        let e = |p| BoundaryEvent { position: p };
        assert_eq!(boundary_f1(&[e(2), e(5)], &[e(2), e(5)]), 1.0);
        assert_eq!(boundary_f1(&[e(2)], &[e(2), e(5)]), 2.0 * (1.0 * 0.5) / 1.5);
        assert_eq!(parse_events("2\n5\n").unwrap(), vec![e(2), e(5)]);
        assert!(validate_events(&[e(3), e(3)], 5).is_err());
        assert_eq!(OracleSegmenter::from_lengths(&[2, 3]).segment(), vec![e(2), e(5)]);
    }
}
