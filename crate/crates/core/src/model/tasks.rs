//! Seeded synthetic translation tasks.
//!
//! Source words are `s0 … s{n−1}`.
//! * `copy`: the target repeats the source.
//! * `substitute`: each `s{i}` becomes `t{(7i + 3) mod n}` and adjacent pairs
//!   are swapped, so target r depends on source r + 1.
//! * `agreement`: the target is the source prefixed with `agr0` or `agr1`, the
//!   parity of the previous sentence's last source word (`agr0` for a
//!   document's first sentence). Only history reveals it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentCorpus, SentencePair};
use crate::error::{invalid, Error, Result};
use crate::text::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Copy,
    Substitute,
    Agreement,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Copy => "copy",
            Task::Substitute => "substitute",
            Task::Agreement => "agreement",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" | "a" => Ok(Task::Copy),
            "substitute" | "b" => Ok(Task::Substitute),
            "agreement" | "c" => Ok(Task::Agreement),
            _ => Err(invalid(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: Task,
    /// Distinct source words.
    pub words: usize,
    pub documents: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl TaskConfig {
    pub fn new(task: Task) -> Self {
        TaskConfig {
            task,
            words: 16,
            documents: 200,
            min_sentences: 2,
            max_sentences: 5,
            min_len: 2,
            max_len: 6,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.words < 2
            || self.documents == 0
            || self.min_sentences == 0
            || self.min_sentences > self.max_sentences
            || self.min_len == 0
            || self.min_len > self.max_len
        {
            return Err(invalid("task sizes must be positive with min <= max"));
        }
        Ok(())
    }
}

fn source_word(i: usize) -> String {
    format!("s{i}")
}

/// Every word the task can produce, markers first.
pub fn vocabulary(config: &TaskConfig) -> Result<Vocabulary> {
    let mut words: Vec<String> = (0..config.words).map(source_word).collect();
    match config.task {
        Task::Copy => {}
        Task::Substitute => words.extend((0..config.words).map(|i| format!("t{i}"))),
        Task::Agreement => words.extend(["agr0".to_string(), "agr1".to_string()]),
    }
    Vocabulary::from_surfaces(words)
}

/// Target for source word indices `src` given the previous sentence's last word.
pub fn translate(config: &TaskConfig, src: &[usize], previous_last: Option<usize>) -> Vec<String> {
    match config.task {
        Task::Copy => src.iter().map(|&i| source_word(i)).collect(),
        Task::Substitute => {
            let mut out: Vec<String> = src
                .iter()
                .map(|&i| format!("t{}", (7 * i + 3) % config.words))
                .collect();
            for pair in out.chunks_mut(2) {
                pair.reverse();
            }
            out
        }
        Task::Agreement => {
            let parity = previous_last.map_or(0, |i| i % 2);
            std::iter::once(format!("agr{parity}"))
                .chain(src.iter().map(|&i| source_word(i)))
                .collect()
        }
    }
}

/// Seeded documents of the task.
pub fn generate(config: &TaskConfig, seed: u64) -> Result<DocumentCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(config.documents);
    for _ in 0..config.documents {
        let n = rng.gen_range(config.min_sentences..=config.max_sentences);
        let mut previous_last = None;
        let mut doc = Vec::with_capacity(n);
        for _ in 0..n {
            let len = rng.gen_range(config.min_len..=config.max_len);
            let src: Vec<usize> = (0..len).map(|_| rng.gen_range(0..config.words)).collect();
            let tgt = translate(config, &src, previous_last);
            previous_last = src.last().copied();
            doc.push(SentencePair::new(src.into_iter().map(source_word).collect(), tgt));
        }
        docs.push(doc);
    }
    DocumentCorpus::new(docs)
}

/// Fraction of sentences reproduced exactly.
pub fn sequence_accuracy<S: AsRef<[String]>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    if hyps.len() != refs.len() || refs.is_empty() {
        return Err(invalid(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    let hits = hyps.iter().zip(refs).filter(|(h, r)| h.as_ref() == r.as_ref()).count();
    Ok(hits as f64 / refs.len() as f64)
}
