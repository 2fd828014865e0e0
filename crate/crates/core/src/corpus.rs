//! Streaming training samples built from document-ordered sentence pairs.
//!
//! Each pair becomes one sample whose history is the longest run of directly
//! preceding pairs of the same document whose source side fits in `h` tokens.
//! Whole sentences only, nearest first, contiguous. Markers are not counted:
//!
//! ```text
//! <DOC> x1 <SEP> x2 <BRK>      history reaches the document start
//! <CONT> x3 <SEP> x4 <END>     history does not; x4 ends the document
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{data, invalid, Result};
use crate::text::{tokenize, BRK, CONT, DOC, END, SEP};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl SentencePair {
    pub fn new(source: Vec<String>, target: Vec<String>) -> Self {
        SentencePair { source, target }
    }

    pub fn parse(source: &str, target: &str) -> Self {
        SentencePair::new(tokenize(source), tokenize(target))
    }
}

/// Ordered documents of aligned sentence pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentCorpus {
    pub documents: Vec<Vec<SentencePair>>,
}

impl DocumentCorpus {
    pub fn new(documents: Vec<Vec<SentencePair>>) -> Result<Self> {
        if documents.iter().any(Vec::is_empty) {
            return Err(invalid("documents must contain at least one sentence pair"));
        }
        Ok(DocumentCorpus { documents })
    }

    /// Builds a corpus from line-aligned texts and a document index with one
    /// `start<TAB>end` line (1-based, inclusive line numbers) per document.
    /// Without an index the whole text is one document.
    pub fn from_texts(source: &str, target: &str, index: Option<&str>) -> Result<Self> {
        let src: Vec<&str> = source.lines().collect();
        let tgt: Vec<&str> = target.lines().collect();
        if src.len() != tgt.len() {
            return Err(data(format!(
                "{} source lines but {} target lines",
                src.len(),
                tgt.len()
            )));
        }
        let ranges = match index {
            None => vec![(1, src.len())],
            Some(text) => parse_index(text)?,
        };
        let mut documents = Vec::with_capacity(ranges.len());
        for (start, end) in ranges {
            if start < 1 || end < start || end > src.len() {
                return Err(data(format!("document range {start}-{end} outside 1..={}", src.len())));
            }
            documents.push(
                (start - 1..end)
                    .map(|l| SentencePair::parse(src[l], tgt[l]))
                    .collect(),
            );
        }
        DocumentCorpus::new(documents).map_err(|e| data(e.to_string()))
    }

    pub fn read(source: &Path, target: &Path, index: Option<&Path>) -> Result<Self> {
        let src = std::fs::read_to_string(source)?;
        let tgt = std::fs::read_to_string(target)?;
        let idx = index.map(std::fs::read_to_string).transpose()?;
        DocumentCorpus::from_texts(&src, &tgt, idx.as_deref())
    }

    pub fn num_pairs(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }
}

fn parse_index(text: &str) -> Result<Vec<(usize, usize)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let mut f = l.split_whitespace().map(str::parse::<usize>);
            match (f.next(), f.next(), f.next()) {
                (Some(Ok(s)), Some(Ok(e)), None) => Ok((s, e)),
                _ => Err(data(format!("document index line {}: expected `start<TAB>end`", i + 1))),
            }
        })
        .collect()
}

/// One training sample with its streaming history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamingSample {
    pub source: Vec<String>,
    pub target: Vec<String>,
    /// Non-marker history tokens on the source side.
    pub history_src_tokens: usize,
    pub history_tgt_tokens: usize,
    /// Number of history sentences prepended.
    pub history_sentences: usize,
    pub document: usize,
    /// 0-based index of the current pair within its document.
    pub current_pair_index: usize,
}

impl StreamingSample {
    /// Marker-free sentences of the source side.
    pub fn source_sentences(&self) -> Vec<Vec<String>> {
        split_sentences(&self.source)
    }

    pub fn target_sentences(&self) -> Vec<Vec<String>> {
        split_sentences(&self.target)
    }
}

pub fn is_marker(token: &str) -> bool {
    matches!(token, DOC | CONT | SEP | BRK | END)
}

/// Splits a marker-annotated sequence at its markers, dropping them.
pub fn split_sentences(tokens: &[String]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut cur: Option<Vec<String>> = None;
    for t in tokens {
        match t.as_str() {
            DOC | CONT | SEP => {
                if let Some(s) = cur.take() {
                    out.push(s);
                }
                cur = Some(Vec::new());
            }
            BRK | END => {
                if let Some(s) = cur.take() {
                    out.push(s);
                }
            }
            _ => cur.get_or_insert_with(Vec::new).push(t.clone()),
        }
    }
    if let Some(s) = cur {
        out.push(s);
    }
    out
}

/// Index of the first pair of the history of pair `p`, admitting whole pairs
/// nearest-first while the summed lengths given by `len` stay within `limit`.
pub fn history_start<F>(p: usize, limit: usize, len: F) -> usize
where
    F: Fn(usize) -> usize,
{
    let mut start = p;
    let mut used = 0;
    while start > 0 {
        let l = len(start - 1);
        if used + l > limit {
            break;
        }
        used += l;
        start -= 1;
    }
    start
}

/// Joins sentences with markers: `lead s1 <SEP> s2 ... <SEP> sN tail`.
pub fn annotate<'a, I>(lead: &str, sentences: I, tail: &str) -> Vec<String>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut out = vec![lead.to_string()];
    for (i, s) in sentences.into_iter().enumerate() {
        if i > 0 {
            out.push(SEP.to_string());
        }
        out.extend(s.iter().cloned());
    }
    out.push(tail.to_string());
    out
}

/// One sample per sentence pair with up to `h` source history tokens.
pub fn build_streaming_samples(corpus: &DocumentCorpus, h: usize) -> Vec<StreamingSample> {
    let mut out = Vec::with_capacity(corpus.num_pairs());
    for (d, doc) in corpus.documents.iter().enumerate() {
        for p in 0..doc.len() {
            let start = history_start(p, h, |q| doc[q].source.len());
            // an empty history counts as sentence-level: <DOC>
            let lead = if start == 0 || start == p { DOC } else { CONT };
            let tail = if p + 1 == doc.len() { END } else { BRK };
            let pairs = &doc[start..=p];
            let history = &doc[start..p];
            out.push(StreamingSample {
                source: annotate(lead, pairs.iter().map(|x| x.source.as_slice()), tail),
                target: annotate(lead, pairs.iter().map(|x| x.target.as_slice()), tail),
                history_src_tokens: history.iter().map(|x| x.source.len()).sum(),
                history_tgt_tokens: history.iter().map(|x| x.target.len()).sum(),
                history_sentences: history.len(),
                document: d,
                current_pair_index: p,
            });
        }
    }
    out
}

/// Desired minimum count ratio `streaming : sentence_level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixRatio {
    pub streaming: usize,
    pub sentence_level: usize,
}

impl Default for MixRatio {
    fn default() -> Self {
        MixRatio {
            streaming: 1,
            sentence_level: 3,
        }
    }
}

/// Repeats the streaming samples until `streaming : sentence_level ≥ ratio`,
/// then appends the sentence-level samples. With a seed the result is shuffled.
pub fn upsample_mix<T: Clone>(
    streaming: &[T],
    sentence_level: &[T],
    ratio: MixRatio,
    seed: Option<u64>,
) -> Result<Vec<T>> {
    if ratio.streaming == 0 || ratio.sentence_level == 0 {
        return Err(invalid("mix ratio terms must be positive"));
    }
    let repeats = if streaming.is_empty() {
        0
    } else {
        // smallest r with r·|S|·sentence_level ≥ |L|·streaming, at least 1
        let need = sentence_level.len() * ratio.streaming;
        let have = streaming.len() * ratio.sentence_level;
        need.div_ceil(have).max(1)
    };
    let mut out = Vec::with_capacity(streaming.len() * repeats + sentence_level.len());
    for _ in 0..repeats {
        out.extend_from_slice(streaming);
    }
    out.extend_from_slice(sentence_level);
    if let Some(seed) = seed {
        out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(out)
}
