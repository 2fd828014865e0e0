use super::layout::{Attention, FeedForward, Norm};
use super::{check_ids, positional_encoding, Layout, ModelConfig, ModelParams};
use crate::error::{invalid, Result};
use crate::masks::EncoderKind;
use crate::nn::graph::{gelu, masked_softmax, normalize_rows};
use crate::nn::tensor::dot;
use crate::nn::Matrix;
use crate::text::TokenId;

/// Keys and values of every encoder layer plus the final states, one row per
/// position encoded so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncoderCache {
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
    states: Vec<Vec<f64>>,
}

impl EncoderCache {
    pub fn new() -> Self {
        EncoderCache::default()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Final encoder states, `len × model_dim`.
    pub fn states(&self) -> Matrix {
        let cols = self.states.first().map_or(0, Vec::len);
        Matrix::from_vec(self.len(), cols, self.states.concat())
    }
}

fn norm(params: &ModelParams, n: Norm, x: &[f64]) -> Vec<f64> {
    let (xhat, _) = normalize_rows(&Matrix::from_vec(1, x.len(), x.to_vec()));
    let g = &params.store.values[n.g].data;
    let b = &params.store.values[n.b].data;
    xhat.data.iter().zip(g).zip(b).map(|((v, g), b)| v * g + b).collect()
}

fn project(params: &ModelParams, w: usize, x: &[f64]) -> Vec<f64> {
    Matrix::from_vec(1, x.len(), x.to_vec()).matmul(&params.store.values[w]).data
}

fn feed_forward(params: &ModelParams, f: FeedForward, x: &[f64]) -> Vec<f64> {
    let mut h = project(params, f.w1, x);
    for (v, b) in h.iter_mut().zip(&params.store.values[f.b1].data) {
        *v = gelu(*v + b);
    }
    let mut o = project(params, f.w2, &h);
    for (v, b) in o.iter_mut().zip(&params.store.values[f.b2].data) {
        *v += b;
    }
    o
}

fn attend(params: &ModelParams, heads: usize, a: Attention, q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let d = q.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = vec![0.0; d];
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        let scores = Matrix::from_vec(
            1,
            keys.len(),
            keys.iter().map(|k| dot(&q[r.clone()], &k[r.clone()]) * scale).collect(),
        );
        let p = masked_softmax(&scores, &|_, _| true);
        for (t, v) in values.iter().enumerate() {
            for (c, &vv) in ctx[r.clone()].iter_mut().zip(&v[r.clone()]) {
                *c += p.data[t] * vv;
            }
        }
    }
    project(params, a.wo, &ctx)
}

/// Encodes `new_token` at the next position of a unidirectional encoder,
/// reusing cached keys and values. Earlier states are left untouched.
pub fn incremental_encode(
    params: &ModelParams,
    config: &ModelConfig,
    prior: &EncoderCache,
    new_token: TokenId,
) -> Result<EncoderCache> {
    if config.encoder_kind != EncoderKind::Unidirectional {
        return Err(invalid(format!(
            "incremental encoding needs a unidirectional encoder, not {}",
            config.encoder_kind
        )));
    }
    config.validate()?;
    let id = check_ids(config, &[new_token])?[0];
    let lay = Layout::of(config);
    if params.store.len() != lay.len() {
        return Err(invalid("parameters do not match the model config"));
    }
    let d = config.model_dim;
    let pos = prior.len();
    let pe = positional_encoding(pos + 1, d);
    let scale = (d as f64).sqrt();
    let mut x: Vec<f64> = params.store.values[lay.embed]
        .row(id)
        .iter()
        .zip(pe.row(pos))
        .map(|(e, p)| e * scale + p)
        .collect();
    let mut next = prior.clone();
    next.keys.resize(lay.encoder.len(), Vec::new());
    next.values.resize(lay.encoder.len(), Vec::new());
    for (l, layer) in lay.encoder.iter().enumerate() {
        let n = norm(params, layer.norm1, &x);
        let q = project(params, layer.attn.wq, &n);
        next.keys[l].push(project(params, layer.attn.wk, &n));
        next.values[l].push(project(params, layer.attn.wv, &n));
        let a = attend(params, config.heads, layer.attn, &q, &next.keys[l], &next.values[l]);
        x.iter_mut().zip(&a).for_each(|(x, a)| *x += a);
        let n = norm(params, layer.norm2, &x);
        let f = feed_forward(params, layer.ffn, &n);
        x.iter_mut().zip(&f).for_each(|(x, f)| *x += f);
    }
    next.states.push(norm(params, lay.encoder_norm, &x));
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::AttentionMask;
    use crate::model::encode;
    use crate::model::tests::tiny_config;

    #[test]
    fn matches_full_encoding() {
        let mut cfg = tiny_config(EncoderKind::Unidirectional);
        cfg.layers = 2;
        let p = ModelParams::init(&cfg, 11).unwrap();
        let tokens: Vec<TokenId> = [7u32, 8, 12, 9, 7, 10, 11, 2, 8, 9].iter().map(|&i| TokenId(i)).collect();
        let mut cache = EncoderCache::new();
        for (i, &t) in tokens.iter().enumerate() {
            let before = cache.clone();
            cache = incremental_encode(&p, &cfg, &cache, t).unwrap();
            assert_eq!(cache.states[..i], before.states[..]);
            let full = encode(&p, &cfg, &tokens[..=i], &AttentionMask::causal(i + 1)).unwrap();
            assert!(cache.states().max_abs_diff(&full) < 1e-9);
        }
    }

    #[test]
    fn rejects_other_encoders() {
        let cfg = tiny_config(EncoderKind::Pbe);
        let p = ModelParams::init(&cfg, 1).unwrap();
        assert!(incremental_encode(&p, &cfg, &EncoderCache::new(), TokenId(7)).is_err());
    }
}
