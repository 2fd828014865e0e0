//! Small pre-norm Transformer encoder-decoder trained on wait-k prefixes.
//!
//! Sequences are marker-annotated streaming samples: a lead marker, history
//! sentences joined by `<SEP>`, the current sentence and a tail marker. The
//! decoder reads the target shifted by one, so the lead marker acts as BOS.

mod decode;
mod incremental;
mod layout;
pub mod tasks;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::masks::{encoder_mask, AttentionMask, EncoderKind, MaskSpec};
use crate::nn::{Graph, Matrix, ParamStore, Var};
use crate::text::{TokenId, Vocabulary};

pub use decode::{greedy_decode_offline, greedy_stream_decode, DecodeOptions, StreamDecode};
pub use incremental::{incremental_encode, EncoderCache};
pub use layout::Layout;
pub use train::{
    loss_and_gradients, train_multi_k, LossOptions, LossScope, TrainConfig, TrainingBatch, TrainingRun,
};

/// Version written into checkpoints.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab: Vocabulary,
    pub encoder_kind: EncoderKind,
    /// Streaming history in tokens per side.
    pub history: usize,
}

impl ModelConfig {
    pub fn new(vocab: Vocabulary, encoder_kind: EncoderKind) -> Self {
        ModelConfig {
            layers: 1,
            model_dim: 32,
            heads: 2,
            ffn_dim: 64,
            vocab,
            encoder_kind,
            history: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(invalid("model sizes must be positive"));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.vocab.is_empty() {
            return Err(invalid("empty vocabulary"));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub store: ParamStore,
}

impl ModelParams {
    /// Xavier-uniform weights, unit layer-norm gains, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.model_dim as f64;
        Layout::build(config, |name, rows, cols| {
            let value = if name.ends_with(".g") {
                Matrix::filled(rows, cols, 1.0)
            } else if name.ends_with(".b") || name.ends_with("_b") {
                Matrix::zeros(rows, cols)
            } else if name == "embed" {
                let a = (3.0 / d).sqrt();
                Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
            } else {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
            };
            store.add(name, value)
        });
        Ok(ModelParams { store })
    }

    pub fn is_finite(&self) -> bool {
        self.store.all_finite()
    }

    /// Checks names and shapes against `config`.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let reference = ModelParams::init(config, 0)?;
        reference.store.check_compatible(&self.store)
    }
}

/// Attention masks of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMasks {
    /// `|src| × |src|`.
    pub encoder: AttentionMask,
    /// `|tgt| × |tgt|`.
    pub decoder_self: AttentionMask,
    /// `|tgt| × |src|`.
    pub cross: AttentionMask,
}

impl ModelMasks {
    /// Inference masks over a visible source prefix: full cross attention, a
    /// causal decoder and, for the encoder, causal attention when
    /// unidirectional and full attention otherwise (PBE falls back to
    /// bidirectional once the prefix is fixed).
    pub fn for_prefix(kind: EncoderKind, src_len: usize, tgt_len: usize) -> Self {
        ModelMasks {
            encoder: match kind {
                EncoderKind::Unidirectional => AttentionMask::causal(src_len),
                EncoderKind::Bidirectional | EncoderKind::Pbe => AttentionMask::full(src_len, src_len),
            },
            decoder_self: AttentionMask::causal(tgt_len),
            cross: AttentionMask::full(tgt_len, src_len),
        }
    }

    /// Training encoder mask for wait-`k` over a whole sample, anchored at its
    /// first position.
    pub fn training_encoder(kind: EncoderKind, k: usize, src_len: usize) -> Result<AttentionMask> {
        encoder_mask(&MaskSpec::new(kind, k), src_len)
    }

    fn check(&self, src_len: usize, tgt_len: usize) -> Result<()> {
        let shape = |m: &AttentionMask| (m.rows(), m.cols());
        if shape(&self.encoder) != (src_len, src_len)
            || shape(&self.decoder_self) != (tgt_len, tgt_len)
            || shape(&self.cross) != (tgt_len, src_len)
        {
            return Err(invalid(format!(
                "masks do not fit a {src_len}-token source and {tgt_len}-token target"
            )));
        }
        if !self.encoder.every_row_nonempty()
            || !self.decoder_self.every_row_nonempty()
            || !self.cross.every_row_nonempty()
        {
            return Err(invalid("every mask row must allow at least one key"));
        }
        Ok(())
    }
}

/// Sinusoidal encodings of positions `0..len`.
pub fn positional_encoding(len: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

fn check_ids(config: &ModelConfig, ids: &[TokenId]) -> Result<Vec<usize>> {
    let v = config.vocab_size();
    ids.iter()
        .map(|id| {
            let i = id.index();
            if i < v {
                Ok(i)
            } else {
                Err(invalid(format!("token id {i} outside a {v}-word vocabulary")))
            }
        })
        .collect()
}

struct Net<'a> {
    cfg: &'a ModelConfig,
    lay: Layout,
}

impl Net<'_> {
    fn embed(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let table = g.param(self.lay.embed);
        let e = g.gather(table, ids);
        let e = g.scale(e, (self.cfg.model_dim as f64).sqrt());
        let pe = g.input(positional_encoding(ids.len(), self.cfg.model_dim));
        g.add(e, pe)
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, ln: layout::Norm) -> Var {
        let (gain, bias) = (g.param(ln.g), g.param(ln.b));
        g.layer_norm(x, gain, bias)
    }

    fn attention(&self, g: &mut Graph, q_in: Var, kv_in: Var, a: layout::Attention, mask: &AttentionMask) -> Var {
        let (wq, wk, wv, wo) = (g.param(a.wq), g.param(a.wk), g.param(a.wv), g.param(a.wo));
        let q = g.matmul(q_in, wq);
        let k = g.matmul(kv_in, wk);
        let v = g.matmul(kv_in, wv);
        let dh = self.cfg.model_dim / self.cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (qh, kh, vh) = (
                g.slice_cols(q, h * dh, dh),
                g.slice_cols(k, h * dh, dh),
                g.slice_cols(v, h * dh, dh),
            );
            let s = g.matmul_t(qh, kh);
            let s = g.scale(s, scale);
            let p = g.masked_softmax(s, mask.as_slice());
            heads.push(g.matmul(p, vh));
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        g.matmul(cat, wo)
    }

    fn ffn(&self, g: &mut Graph, x: Var, f: layout::FeedForward) -> Var {
        let (w1, b1, w2, b2) = (g.param(f.w1), g.param(f.b1), g.param(f.w2), g.param(f.b2));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.gelu(h);
        let o = g.matmul(h, w2);
        g.add_row(o, b2)
    }

    fn encode(&self, g: &mut Graph, src: &[usize], mask: &AttentionMask) -> Var {
        let mut x = self.embed(g, src);
        for layer in &self.lay.encoder {
            let n = self.layer_norm(g, x, layer.norm1);
            let a = self.attention(g, n, n, layer.attn, mask);
            x = g.add(x, a);
            let n = self.layer_norm(g, x, layer.norm2);
            let f = self.ffn(g, n, layer.ffn);
            x = g.add(x, f);
        }
        self.layer_norm(g, x, self.lay.encoder_norm)
    }

    fn decode_logits(&self, g: &mut Graph, enc: Var, tgt: &[usize], masks: &ModelMasks) -> Var {
        let mut y = self.embed(g, tgt);
        for layer in &self.lay.decoder {
            let n = self.layer_norm(g, y, layer.norm1);
            let a = self.attention(g, n, n, layer.self_attn, &masks.decoder_self);
            y = g.add(y, a);
            let n = self.layer_norm(g, y, layer.norm2);
            let c = self.attention(g, n, enc, layer.cross_attn, &masks.cross);
            y = g.add(y, c);
            let n = self.layer_norm(g, y, layer.norm3);
            let f = self.ffn(g, n, layer.ffn);
            y = g.add(y, f);
        }
        let y = self.layer_norm(g, y, self.lay.decoder_norm);
        let (w, b) = (g.param(self.lay.out_w), g.param(self.lay.out_b));
        let logits = g.matmul(y, w);
        g.add_row(logits, b)
    }
}

fn net(config: &ModelConfig) -> Net<'_> {
    Net {
        cfg: config,
        lay: Layout::of(config),
    }
}

/// Final encoder states (`|src| × model_dim`) under `mask`.
pub fn encode(params: &ModelParams, config: &ModelConfig, src: &[TokenId], mask: &AttentionMask) -> Result<Matrix> {
    config.validate()?;
    let src = check_ids(config, src)?;
    if src.is_empty() || mask.rows() != src.len() || mask.cols() != src.len() {
        return Err(invalid("encoder mask does not fit the source"));
    }
    let mut g = Graph::new(&params.store);
    let out = net(config).encode(&mut g, &src, mask);
    Ok(g.value(out).clone())
}

/// Next-token distributions, one row per target input position.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    src: &[TokenId],
    tgt: &[TokenId],
    masks: &ModelMasks,
) -> Result<Matrix> {
    let logits = forward_logits(params, config, src, tgt, masks)?;
    let all = |_: usize, _: usize| true;
    Ok(crate::nn::graph::masked_softmax(&logits, &all))
}

pub(crate) fn forward_logits(
    params: &ModelParams,
    config: &ModelConfig,
    src: &[TokenId],
    tgt: &[TokenId],
    masks: &ModelMasks,
) -> Result<Matrix> {
    config.validate()?;
    let src = check_ids(config, src)?;
    let tgt = check_ids(config, tgt)?;
    if src.is_empty() || tgt.is_empty() {
        return Err(invalid("forward needs a non-empty source and target prefix"));
    }
    masks.check(src.len(), tgt.len())?;
    if params.store.len() != Layout::of(config).len() {
        return Err(invalid("parameters do not match the model config"));
    }
    let mut g = Graph::new(&params.store);
    let n = net(config);
    let enc = n.encode(&mut g, &src, &masks.encoder);
    let logits = n.decode_logits(&mut g, enc, &tgt, masks);
    Ok(g.value(logits).clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        ck.config.validate()?;
        ck.params.check(&ck.config)?;
        if !ck.params.is_finite() {
            return Err(Error::Data("checkpoint holds non-finite parameters".into()));
        }
        Ok(ck)
    }
}
