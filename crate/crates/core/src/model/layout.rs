use super::ModelConfig;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attention {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FeedForward {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderLayer {
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecoderLayer {
    pub norm1: Norm,
    pub self_attn: Attention,
    pub norm2: Norm,
    pub cross_attn: Attention,
    pub norm3: Norm,
    pub ffn: FeedForward,
}

/// Indices of every parameter tensor in the store, in creation order.
#[derive(Debug, Clone)]
pub struct Layout {
    pub(crate) embed: usize,
    pub(crate) encoder: Vec<EncoderLayer>,
    pub(crate) encoder_norm: Norm,
    pub(crate) decoder: Vec<DecoderLayer>,
    pub(crate) decoder_norm: Norm,
    pub(crate) out_w: usize,
    pub(crate) out_b: usize,
    count: usize,
}

impl Layout {
    /// Walks the parameter list, calling `add(name, rows, cols)` for each tensor.
    pub(crate) fn build(cfg: &ModelConfig, mut add: impl FnMut(&str, usize, usize) -> usize) -> Layout {
        let d = cfg.model_dim;
        let f = cfg.ffn_dim;
        let v = cfg.vocab_size();
        let mut count = 0;
        let mut add = |name: String, r: usize, c: usize| {
            count += 1;
            add(&name, r, c)
        };
        let embed = add("embed".into(), v, d);
        let norm = |add: &mut dyn FnMut(String, usize, usize) -> usize, p: &str| Norm {
            g: add(format!("{p}.g"), 1, d),
            b: add(format!("{p}.b"), 1, d),
        };
        let attn = |add: &mut dyn FnMut(String, usize, usize) -> usize, p: &str| Attention {
            wq: add(format!("{p}.wq"), d, d),
            wk: add(format!("{p}.wk"), d, d),
            wv: add(format!("{p}.wv"), d, d),
            wo: add(format!("{p}.wo"), d, d),
        };
        let ffn = |add: &mut dyn FnMut(String, usize, usize) -> usize, p: &str| FeedForward {
            w1: add(format!("{p}.w1"), d, f),
            b1: add(format!("{p}.w1_b"), 1, f),
            w2: add(format!("{p}.w2"), f, d),
            b2: add(format!("{p}.w2_b"), 1, d),
        };
        let mut encoder = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("enc{l}");
            encoder.push(EncoderLayer {
                norm1: norm(&mut add, &format!("{p}.norm1")),
                attn: attn(&mut add, &format!("{p}.attn")),
                norm2: norm(&mut add, &format!("{p}.norm2")),
                ffn: ffn(&mut add, &format!("{p}.ffn")),
            });
        }
        let encoder_norm = norm(&mut add, "enc.norm");
        let mut decoder = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("dec{l}");
            decoder.push(DecoderLayer {
                norm1: norm(&mut add, &format!("{p}.norm1")),
                self_attn: attn(&mut add, &format!("{p}.self")),
                norm2: norm(&mut add, &format!("{p}.norm2")),
                cross_attn: attn(&mut add, &format!("{p}.cross")),
                norm3: norm(&mut add, &format!("{p}.norm3")),
                ffn: ffn(&mut add, &format!("{p}.ffn")),
            });
        }
        let decoder_norm = norm(&mut add, "dec.norm");
        let out_w = add("out.w".into(), d, v);
        let out_b = add("out.b".into(), 1, v);
        Layout {
            embed,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            out_w,
            out_b,
            count,
        }
    }

    /// Layout of a store filled in creation order.
    pub fn of(cfg: &ModelConfig) -> Layout {
        let mut next = 0;
        Layout::build(cfg, |_, _, _| {
            next += 1;
            next - 1
        })
    }

    /// Number of parameter tensors.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}
