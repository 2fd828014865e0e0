//! Average Proportion, Average Lagging and Differentiable Average Lagging, at
//! sentence level and adapted to segmented streams.
//!
//! A stream is evaluated sentence by sentence on relative delays
//! `g_n(i) = G(i + b_n − 1) − a_n + 1`, so that a single-sentence stream gives
//! back `g = G`. DAL's lower envelope `g′` is carried across sentence boundaries:
//! the first target of sentence n cannot be credited earlier than the last
//! `g′` of sentence n−1 plus one catch-up step, expressed in sentence n's
//! coordinates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::text::{Gamma, Segmentation, Side};

/// Relative delays of one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayVector {
    pub g: Vec<i64>,
    pub gamma: Gamma,
    pub src_len: usize,
}

impl DelayVector {
    pub fn new(g: Vec<i64>, gamma: Gamma, src_len: usize) -> Result<Self> {
        if g.is_empty() || src_len == 0 {
            return Err(invalid("delay vectors need at least one source and one target token"));
        }
        Ok(DelayVector { g, gamma, src_len })
    }

    /// Delays with γ = |y|/|x|.
    pub fn with_oracle_gamma(g: Vec<i64>, src_len: usize) -> Result<Self> {
        let gamma = crate::text::catch_up_factor(src_len, g.len())?;
        DelayVector::new(g, gamma, src_len)
    }

    pub fn tgt_len(&self) -> usize {
        self.g.len()
    }
}

/// Σ g(i) / (|x|·|y|).
pub fn ap(d: &DelayVector) -> f64 {
    let sum: i64 = d.g.iter().sum();
    sum as f64 / (d.src_len as f64 * d.tgt_len() as f64)
}

/// (1/τ) Σ_{i≤τ} [g(i) − (i−1)/γ], τ the first target written with the whole source read.
///
/// If no delay reaches |x| (possible for stream-derived delays), τ = |y|.
pub fn al(d: &DelayVector) -> f64 {
    let src = d.src_len as i64;
    let tau = d
        .g
        .iter()
        .position(|&g| g >= src)
        .map_or(d.tgt_len(), |p| p + 1);
    let inv = d.gamma.inverse_f64();
    let sum: f64 = d.g[..tau]
        .iter()
        .enumerate()
        .map(|(i, &g)| g as f64 - i as f64 * inv)
        .sum();
    sum / tau as f64
}

/// Sentence-level DAL with catch-up term `scale/γ`.
pub fn dal(d: &DelayVector, scale: f64) -> f64 {
    dal_with_carry(d, scale, None).0
}

/// DAL whose `g′(1)` is bounded below by `carry`; also returns the final `g′`.
pub fn dal_with_carry(d: &DelayVector, scale: f64, carry: Option<f64>) -> (f64, f64) {
    let inv = d.gamma.inverse_f64();
    let step = scale * inv;
    let mut prev: Option<f64> = None;
    let mut sum = 0.0;
    for (i, &g) in d.g.iter().enumerate() {
        let g = g as f64;
        let lower = match prev {
            Some(p) => Some(p + step),
            None => carry,
        };
        let gp = lower.map_or(g, |l| g.max(l));
        sum += gp - i as f64 * inv;
        prev = Some(gp);
    }
    (sum / d.tgt_len() as f64, prev.unwrap_or(0.0))
}

/// The lower envelope `g′` itself (no carry).
pub fn dal_envelope(d: &DelayVector, scale: f64) -> Vec<f64> {
    let step = scale * d.gamma.inverse_f64();
    let mut out: Vec<f64> = Vec::with_capacity(d.g.len());
    for &g in &d.g {
        let g = g as f64;
        let v = out.last().map_or(g, |&p| g.max(p + step));
        out.push(v);
    }
    out
}

/// Maps global delays onto each sentence: `g_n(i) = G(i + b_n − 1) − (a_n − 1)`.
pub fn relative_delays(delays: &[usize], seg: &Segmentation) -> Result<Vec<Vec<i64>>> {
    let lens = seg.lengths(Side::Target, delays.len())?;
    let mut out = Vec::with_capacity(lens.len());
    for ((&a, &b), len) in seg.a().iter().zip(seg.b()).zip(lens) {
        let g = delays[b - 1..b - 1 + len]
            .iter()
            .map(|&big_g| big_g as i64 - (a as i64 - 1))
            .collect();
        out.push(g);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyScores {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "AL")]
    pub al: f64,
    #[serde(rename = "DAL")]
    pub dal: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sentence,
    #[default]
    Stream,
}

/// How per-sentence scores are combined into the aggregate row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Mean,
    TokenWeighted,
}

impl std::str::FromStr for Aggregation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "token-weighted" => Ok(Aggregation::TokenWeighted),
            _ => Err(invalid(format!("unknown aggregation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyConfig {
    pub mode: Mode,
    /// Multiplier on the `1/γ` catch-up step of DAL's envelope.
    pub dal_scale: f64,
    pub aggregation: Aggregation,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            mode: Mode::Stream,
            dal_scale: 1.0,
            aggregation: Aggregation::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub per_sentence: Vec<LatencyScores>,
    pub aggregate: LatencyScores,
    pub config: LatencyConfig,
}

impl LatencyReport {
    /// `n,AP,AL,DAL` rows followed by an aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,AP,AL,DAL\n");
        for (n, s) in self.per_sentence.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", n + 1, s.ap, s.al, s.dal);
        }
        let a = &self.aggregate;
        let name = match self.config.aggregation {
            Aggregation::Mean => "mean",
            Aggregation::TokenWeighted => "token-weighted",
        };
        let _ = writeln!(out, "{name},{},{},{}", a.ap, a.al, a.dal);
        out
    }
}

fn aggregate(scores: &[LatencyScores], weights: &[usize], how: Aggregation) -> LatencyScores {
    let w: Vec<f64> = match how {
        Aggregation::Mean => vec![1.0; scores.len()],
        Aggregation::TokenWeighted => weights.iter().map(|&w| w as f64).collect(),
    };
    let total: f64 = w.iter().sum();
    let avg = |f: fn(&LatencyScores) -> f64| {
        scores.iter().zip(&w).map(|(s, w)| f(s) * w).sum::<f64>() / total
    };
    LatencyScores {
        ap: avg(|s| s.ap),
        al: avg(|s| s.al),
        dal: avg(|s| s.dal),
    }
}

/// Independent sentence-level scores for each delay vector.
pub fn sentence_metrics(sentences: &[DelayVector], config: LatencyConfig) -> Result<LatencyReport> {
    if sentences.is_empty() {
        return Err(invalid("no sentences to evaluate"));
    }
    let per_sentence: Vec<LatencyScores> = sentences
        .iter()
        .map(|d| LatencyScores {
            ap: ap(d),
            al: al(d),
            dal: dal(d, config.dal_scale),
        })
        .collect();
    let weights: Vec<usize> = sentences.iter().map(DelayVector::tgt_len).collect();
    Ok(LatencyReport {
        aggregate: aggregate(&per_sentence, &weights, config.aggregation),
        per_sentence,
        config: LatencyConfig {
            mode: Mode::Sentence,
            ..config
        },
    })
}

/// Stream-adapted AP/AL/DAL from global delays `G` (one per target token).
///
/// `gammas` gives γ_n per sentence (a single value applies to all sentences);
/// `src_total` is the length of the source stream.
pub fn stream_metrics(
    delays: &[usize],
    seg: &Segmentation,
    src_total: usize,
    gammas: &[Gamma],
    config: LatencyConfig,
) -> Result<LatencyReport> {
    if delays.is_empty() || src_total == 0 {
        return Err(invalid("empty stream"));
    }
    let src_lens = seg.lengths(Side::Source, src_total)?;
    let rel = relative_delays(delays, seg)?;
    if gammas.len() != 1 && gammas.len() != rel.len() {
        return Err(invalid(format!(
            "{} catch-up factors for {} sentences",
            gammas.len(),
            rel.len()
        )));
    }
    let mut per_sentence = Vec::with_capacity(rel.len());
    let mut weights = Vec::with_capacity(rel.len());
    let mut carry: Option<f64> = None;
    for (n, (g, src_len)) in rel.into_iter().zip(src_lens).enumerate() {
        let gamma = gammas[if gammas.len() == 1 { 0 } else { n }];
        let d = DelayVector::new(g, gamma, src_len)?;
        let (dal, last) = dal_with_carry(&d, config.dal_scale, carry);
        // next sentence's coordinates are shifted by |x_n|
        carry = Some(last + config.dal_scale * gamma.inverse_f64() - src_len as f64);
        weights.push(d.tgt_len());
        per_sentence.push(LatencyScores {
            ap: ap(&d),
            al: al(&d),
            dal,
        });
    }
    Ok(LatencyReport {
        aggregate: aggregate(&per_sentence, &weights, config.aggregation),
        per_sentence,
        config: LatencyConfig {
            mode: Mode::Stream,
            ..config
        },
    })
}

/// γ_n = |y_n| / |x_n| for every sentence of a segmentation.
pub fn oracle_gammas(seg: &Segmentation, src_total: usize, tgt_total: usize) -> Result<Vec<Gamma>> {
    let src = seg.lengths(Side::Source, src_total)?;
    let tgt = seg.lengths(Side::Target, tgt_total)?;
    src.iter()
        .zip(&tgt)
        .map(|(&x, &y)| crate::text::catch_up_factor(x, y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(g: &[i64], src: usize) -> DelayVector {
        DelayVector::new(g.to_vec(), Gamma::ONE, src).unwrap()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(ap(&dv(&[3, 3, 3], 3)), 1.0);
        assert_eq!(ap(&dv(&[1, 2, 3], 3)), 6.0 / 9.0);
        assert_eq!(ap(&dv(&[2, 3], 3)), 5.0 / 6.0);
    }

    #[test]
    fn al_examples() {
        assert_eq!(al(&dv(&[1, 2, 3, 4, 5], 5)), 1.0);
        assert_eq!(al(&dv(&[3, 4, 5, 5, 5], 5)), 3.0);
        assert_eq!(al(&dv(&[5, 5, 5, 5, 5], 5)), 5.0);
    }

    #[test]
    fn dal_examples() {
        assert_eq!(dal_envelope(&dv(&[1, 2, 3], 3), 1.0), vec![1.0, 2.0, 3.0]);
        assert_eq!(dal(&dv(&[1, 2, 3], 3), 1.0), 1.0);
        assert_eq!(dal_envelope(&dv(&[3, 3, 3], 3), 1.0), vec![3.0, 4.0, 5.0]);
        assert_eq!(dal(&dv(&[3, 3, 3], 3), 1.0), 3.0);
        assert_eq!(dal_envelope(&dv(&[1, 1, 3], 3), 1.0), vec![1.0, 2.0, 3.0]);
        assert_eq!(dal(&dv(&[1, 1, 3], 3), 1.0), 1.0);
    }

    #[test]
    fn dal_scale_shrinks_the_catch_up_step() {
        let d = dv(&[3, 3, 3], 3);
        assert_eq!(dal_envelope(&d, 0.5), vec![3.0, 3.5, 4.0]);
        assert!(dal(&d, 0.85) < dal(&d, 1.0));
    }

    #[test]
    fn relative_delay_examples() {
        let one = Segmentation::new(vec![1], vec![1]).unwrap();
        assert_eq!(relative_delays(&[2, 3, 3], &one).unwrap(), vec![vec![2, 3, 3]]);
        let seg = Segmentation::new(vec![1, 4], vec![1, 4]).unwrap();
        let rel = relative_delays(&[1, 2, 3, 4, 5, 6], &seg).unwrap();
        assert_eq!(rel[1], vec![1, 2, 3]);
        let seg = Segmentation::new(vec![1, 3], vec![1, 2]).unwrap();
        let rel = relative_delays(&[2, 4, 5], &seg).unwrap();
        assert_eq!(rel[1], vec![2, 3]);
        let seg = Segmentation::new(vec![1, 3], vec![1, 5]).unwrap();
        assert!(relative_delays(&[2, 4, 5], &seg).is_err());
    }

    #[test]
    fn single_sentence_stream_matches_sentence_level() {
        let seg = Segmentation::new(vec![1], vec![1]).unwrap();
        let g = [2usize, 3, 4, 4];
        let report = stream_metrics(&g, &seg, 4, &[Gamma::ONE], LatencyConfig::default()).unwrap();
        let d = dv(&[2, 3, 4, 4], 4);
        assert_eq!(report.per_sentence[0].ap, ap(&d));
        assert_eq!(report.per_sentence[0].al, al(&d));
        assert_eq!(report.per_sentence[0].dal, dal(&d, 1.0));
        assert!(stream_metrics(&[], &seg, 4, &[Gamma::ONE], LatencyConfig::default()).is_err());
    }

    #[test]
    fn stalled_stream_carries_dal_lag() {
        // sentence 2's targets are only written after sentence 3's source was read
        let seg = Segmentation::new(vec![1, 4, 7], vec![1, 4, 7]).unwrap();
        let g = [1usize, 2, 3, 9, 9, 9, 9, 9, 9];
        let report = stream_metrics(&g, &seg, 9, &[Gamma::ONE], LatencyConfig::default()).unwrap();
        // g_2 = (6, 6, 6): AL stops at τ = 1
        assert_eq!(report.per_sentence[1].al, 6.0);
        assert_eq!(report.per_sentence[1].dal, (6.0 + 6.0 + 6.0) / 3.0);
        // g_3 = (3,3,3) but the envelope enters at g′_2(3) + 1 − 3 = 6
        let s3 = report.per_sentence[2];
        assert_eq!(s3.al, 3.0);
        assert_eq!(s3.dal, 6.0);
        assert!(s3.dal > s3.al);
    }

    #[test]
    fn csv_layout() {
        let seg = Segmentation::new(vec![1, 3], vec![1, 3]).unwrap();
        let r = stream_metrics(&[1, 2, 3, 4], &seg, 4, &[Gamma::ONE], LatencyConfig::default()).unwrap();
        assert_eq!(r.to_csv(), "n,AP,AL,DAL\n1,0.75,1,1\n2,0.75,1,1\nmean,0.75,1,1\n");
    }

    #[test]
    fn token_weighted_aggregation() {
        let seg = Segmentation::new(vec![1, 2], vec![1, 2]).unwrap();
        let cfg = LatencyConfig {
            aggregation: Aggregation::TokenWeighted,
            ..LatencyConfig::default()
        };
        let r = stream_metrics(&[1, 2, 3, 4], &seg, 4, &[Gamma::new(1, 1).unwrap()], cfg).unwrap();
        let m = stream_metrics(&[1, 2, 3, 4], &seg, 4, &[Gamma::ONE], LatencyConfig::default()).unwrap();
        assert!(r.aggregate.ap != m.aggregate.ap);
    }
}
