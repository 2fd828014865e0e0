//! Corpus-level BLEU with clipped n-gram counts pooled over the corpus.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// In `[0, 1]`.
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuScore {
    /// Score in BLEU points (×100).
    pub fn points(&self) -> f64 {
        self.score * 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BleuOptions {
    pub max_n: usize,
    /// Add-one smoothing of the n ≥ 2 precisions.
    pub smooth: bool,
}

impl Default for BleuOptions {
    fn default() -> Self {
        BleuOptions {
            max_n: 4,
            smooth: false,
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over line-aligned hypotheses and references.
pub fn corpus_bleu<T, S>(hyps: &[S], refs: &[S], options: BleuOptions) -> Result<BleuScore>
where
    T: Eq + Hash,
    S: AsRef<[T]>,
{
    if hyps.len() != refs.len() {
        return Err(invalid(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if options.max_n == 0 {
        return Err(invalid("max_n must be positive"));
    }
    let mut matches = vec![0usize; options.max_n];
    let mut totals = vec![0usize; options.max_n];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=options.max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (gram, c) in &hc {
                matches[n - 1] += (*c).min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let precisions: Vec<f64> = matches
        .iter()
        .zip(&totals)
        .enumerate()
        .map(|(i, (&m, &t))| {
            if options.smooth && i > 0 {
                (m as f64 + 1.0) / (t as f64 + 1.0)
            } else if t == 0 {
                0.0
            } else {
                m as f64 / t as f64
            }
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean =
            precisions.iter().map(|p| p.ln()).sum::<f64>() / options.max_n as f64;
        brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    #[test]
    fn identity_scores_one() {
        let c = corpus(&["the cat sat on the mat", "a b c d e"]);
        let s = corpus_bleu(&c, &c, BleuOptions::default()).unwrap();
        assert!((s.score - 1.0).abs() < 1e-12);
        assert_eq!(s.brevity_penalty, 1.0);
    }

    #[test]
    fn disjoint_scores_zero() {
        let s = corpus_bleu(&corpus(&["x y z w"]), &corpus(&["a b c d"]), BleuOptions::default()).unwrap();
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn clipped_unigrams() {
        let s = corpus_bleu(&corpus(&["the the the"]), &corpus(&["the cat"]), BleuOptions::default()).unwrap();
        assert_eq!(s.precisions[0], 1.0 / 3.0);
        assert_eq!(s.precisions[1], 0.0);
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn brevity_penalty_applies_to_short_output() {
        let s = corpus_bleu(&corpus(&["a b c d"]), &corpus(&["a b c d e f"]), BleuOptions::default()).unwrap();
        assert!((s.brevity_penalty - (1.0f64 - 6.0 / 4.0).exp()).abs() < 1e-12);
        assert!((s.score - s.brevity_penalty).abs() < 1e-12);
    }

    #[test]
    fn smoothing_keeps_short_matches_nonzero() {
        let s = corpus_bleu(&corpus(&["a b"]), &corpus(&["a b"]), BleuOptions { max_n: 4, smooth: true }).unwrap();
        assert!(s.score > 0.0);
        let plain = corpus_bleu(&corpus(&["a b"]), &corpus(&["a b"]), BleuOptions::default()).unwrap();
        assert_eq!(plain.score, 0.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(corpus_bleu(&corpus(&["a"]), &corpus(&["a", "b"]), BleuOptions::default()).is_err());
    }
}
