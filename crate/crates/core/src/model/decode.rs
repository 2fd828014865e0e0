use serde::{Deserialize, Serialize};

use super::{forward_logits, ModelConfig, ModelMasks, ModelParams};
use crate::corpus::history_start;
use crate::error::{invalid, Result};
use crate::policy::{ActionTrace, WaitKPolicy};
use crate::text::{Segmentation, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub policy: WaitKPolicy,
    /// History budget H in tokens per side; 0 decodes sentence by sentence.
    pub history: usize,
    /// A sentence stops after `ceil(max_len_ratio · |x|) + 2` target tokens.
    pub max_len_ratio: f64,
}

impl DecodeOptions {
    pub fn new(policy: WaitKPolicy, history: usize) -> Self {
        DecodeOptions {
            policy,
            history,
            max_len_ratio: 2.0,
        }
    }

    fn cap(&self, src_len: usize) -> usize {
        (self.max_len_ratio * src_len as f64).ceil() as usize + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDecode {
    /// Target stream without markers.
    pub tokens: Vec<TokenId>,
    pub src_lengths: Vec<usize>,
    pub tgt_lengths: Vec<usize>,
    pub trace: ActionTrace,
}

impl StreamDecode {
    /// Sentence starts on both streams.
    pub fn segmentation(&self) -> Result<Segmentation> {
        Segmentation::from_lengths(&self.src_lengths, &self.tgt_lengths)
    }

    /// Target tokens split per sentence.
    pub fn sentences(&self) -> Vec<&[TokenId]> {
        let mut out = Vec::with_capacity(self.tgt_lengths.len());
        let mut at = 0;
        for &l in &self.tgt_lengths {
            out.push(&self.tokens[at..at + l]);
            at += l;
        }
        out
    }
}

/// Splits `len` tokens into sentences ending at the 1-based `boundaries`; a
/// final sentence is closed at the stream end when the last boundary is short.
pub fn sentence_lengths(len: usize, boundaries: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(boundaries.len() + 1);
    let mut prev = 0;
    for &b in boundaries {
        if b <= prev || b > len {
            return Err(invalid(format!(
                "boundary {b} must follow {prev} and lie within a {len}-token stream"
            )));
        }
        out.push(b - prev);
        prev = b;
    }
    if prev < len {
        out.push(len - prev);
    }
    Ok(out)
}

fn argmax(row: &[f64], allow_markers: bool) -> TokenId {
    let mut best = (f64::NEG_INFINITY, TokenId::END);
    for (i, &v) in row.iter().enumerate() {
        let id = TokenId(i as u32);
        let ok = match id {
            TokenId::SEP | TokenId::BRK | TokenId::END => allow_markers,
            TokenId::DOC | TokenId::CONT | TokenId::UNK | TokenId::PAD => false,
            _ => true,
        };
        if ok && v > best.0 {
            best = (v, id);
        }
    }
    best.1
}

struct Context {
    src: Vec<TokenId>,
    tgt: Vec<TokenId>,
}

fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    ctx: &Context,
    current: &[TokenId],
    written: &[TokenId],
    tail: Option<TokenId>,
    allow_markers: bool,
) -> Result<TokenId> {
    let mut src = ctx.src.clone();
    src.extend_from_slice(current);
    src.extend(tail);
    let mut tgt = ctx.tgt.clone();
    tgt.extend_from_slice(written);
    let masks = ModelMasks::for_prefix(config.encoder_kind, src.len(), tgt.len());
    let logits = forward_logits(params, config, &src, &tgt, &masks)?;
    Ok(argmax(logits.row(logits.rows - 1), allow_markers))
}

/// Greedy wait-k decoding of a source stream with sentence ends at `boundaries`.
///
/// Target token r of sentence n is written once `g(r)` of its source tokens are
/// read; when the sentence's last token arrives the tail marker is appended and
/// the rest of the sentence is flushed until the model closes it. Earlier
/// sentences are prepended as history while both sides fit in `history` tokens.
pub fn greedy_stream_decode(
    params: &ModelParams,
    config: &ModelConfig,
    src_stream: &[TokenId],
    boundaries: &[usize],
    options: &DecodeOptions,
) -> Result<StreamDecode> {
    if src_stream.is_empty() {
        return Err(invalid("empty source stream"));
    }
    let src_lengths = sentence_lengths(src_stream.len(), boundaries)?;
    let policy = options.policy;
    let mut trace = ActionTrace::new();
    let mut tgt_sents: Vec<Vec<TokenId>> = Vec::with_capacity(src_lengths.len());
    let mut src_sents: Vec<&[TokenId]> = Vec::with_capacity(src_lengths.len());
    let mut at = 0;
    for (n0, &len) in src_lengths.iter().enumerate() {
        let x = &src_stream[at..at + len];
        at += len;
        let h = options.history;
        let start = history_start(n0, h, |m| {
            if tgt_sents[m].len() <= h {
                src_sents[m].len()
            } else {
                h + 1
            }
        });
        let lead = if start == 0 || start == n0 { TokenId::DOC } else { TokenId::CONT };
        let tail = if n0 + 1 == src_lengths.len() { TokenId::END } else { TokenId::BRK };
        let mut ctx = Context {
            src: vec![lead],
            tgt: vec![lead],
        };
        for m in start..n0 {
            ctx.src.extend_from_slice(src_sents[m]);
            ctx.src.push(TokenId::SEP);
            ctx.tgt.extend_from_slice(&tgt_sents[m]);
            ctx.tgt.push(TokenId::SEP);
        }

        let n = n0 + 1;
        let cap = options.cap(len);
        let mut read = 0;
        let mut out: Vec<TokenId> = Vec::new();
        while read < len {
            if read < policy.local_delay(out.len() + 1) {
                trace.push_read(n);
                read += 1;
                continue;
            }
            let y = predict(params, config, &ctx, &x[..read], &out, None, false)?;
            out.push(y);
            trace.push_write(n);
        }
        while out.len() < cap {
            let y = predict(params, config, &ctx, x, &out, Some(tail), !out.is_empty())?;
            if y.closes_sentence() {
                break;
            }
            out.push(y);
            trace.push_write(n);
        }
        src_sents.push(x);
        tgt_sents.push(out);
    }
    let tgt_lengths = tgt_sents.iter().map(Vec::len).collect();
    Ok(StreamDecode {
        tokens: tgt_sents.concat(),
        src_lengths,
        tgt_lengths,
        trace,
    })
}

/// Greedy decoding of one complete sentence with no history.
pub fn greedy_decode_offline(
    params: &ModelParams,
    config: &ModelConfig,
    src: &[TokenId],
    max_len_ratio: f64,
) -> Result<Vec<TokenId>> {
    if src.is_empty() {
        return Err(invalid("empty source sentence"));
    }
    let options = DecodeOptions {
        policy: WaitKPolicy::wait(src.len())?,
        history: 0,
        max_len_ratio,
    };
    let ctx = Context {
        src: vec![TokenId::DOC],
        tgt: vec![TokenId::DOC],
    };
    let mut out = Vec::new();
    while out.len() < options.cap(src.len()) {
        let y = predict(params, config, &ctx, src, &out, Some(TokenId::END), !out.is_empty())?;
        if y.closes_sentence() {
            break;
        }
        out.push(y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::EncoderKind;
    use crate::model::tests::tiny_config;
    use crate::policy::{cap_delay, stream_delay};

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn boundary_lengths() {
        assert_eq!(sentence_lengths(5, &[2, 5]).unwrap(), vec![2, 3]);
        assert_eq!(sentence_lengths(5, &[2]).unwrap(), vec![2, 3]);
        assert_eq!(sentence_lengths(5, &[]).unwrap(), vec![5]);
        assert!(sentence_lengths(5, &[3, 3]).is_err());
        assert!(sentence_lengths(5, &[6]).is_err());
    }

    #[test]
    fn large_k_is_offline() {
        let cfg = tiny_config(EncoderKind::Pbe);
        let p = ModelParams::init(&cfg, 4).unwrap();
        let src = ids(&[7, 8, 9]);
        let opts = DecodeOptions::new(WaitKPolicy::wait(5).unwrap(), 0);
        let out = greedy_stream_decode(&p, &cfg, &src, &[], &opts).unwrap();
        let m = out.tokens.len();
        assert!(m >= 1);
        assert_eq!(out.trace.pattern(), format!("{}{}", "R".repeat(3), "W".repeat(m)));
        assert_eq!(out.tokens, greedy_decode_offline(&p, &cfg, &src, 2.0).unwrap());
    }

    #[test]
    fn trace_delays_follow_the_policy() {
        for kind in EncoderKind::ALL {
            let cfg = tiny_config(kind);
            let p = ModelParams::init(&cfg, 7).unwrap();
            let src = ids(&[7, 8, 9, 10, 11, 7, 8]);
            for k in 1..=3 {
                let policy = WaitKPolicy::wait(k).unwrap();
                let out = greedy_stream_decode(&p, &cfg, &src, &[4], &DecodeOptions::new(policy, 6)).unwrap();
                let seg = out.segmentation().unwrap();
                let ends: Vec<usize> = seg.a()[1..].iter().map(|a| a - 1).chain([src.len()]).collect();
                for (i, &g) in out.trace.delays().iter().enumerate() {
                    let n = seg.sentence_of(crate::text::Side::Target, i + 1).unwrap();
                    let expect = cap_delay(stream_delay(&policy, &seg, i + 1).unwrap(), ends[n - 1]);
                    assert_eq!(g, expect, "{kind} k={k} i={}", i + 1);
                }
                assert_eq!(out.trace.num_reads(), src.len());
            }
        }
    }

    #[test]
    fn without_history_repeated_sentences_decode_alike() {
        let cfg = tiny_config(EncoderKind::Unidirectional);
        let p = ModelParams::init(&cfg, 3).unwrap();
        let src = ids(&[7, 8, 9, 7, 8, 9, 10]);
        let opts = DecodeOptions::new(WaitKPolicy::wait(2).unwrap(), 0);
        let out = greedy_stream_decode(&p, &cfg, &src, &[3, 6], &opts).unwrap();
        let s = out.sentences();
        assert_eq!(s[0], s[1]);
    }
}
