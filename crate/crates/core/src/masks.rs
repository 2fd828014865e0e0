//! Boolean attention visibility for the three encoder kinds and the decoder,
//! with and without streaming history.
//!
//! Encoder row j of sentence n, with `G` source tokens available:
//!
//! * bidirectional: `[a_n, G]`
//! * unidirectional: `[a_n, j]`
//! * partial bidirectional (PBE): `[a_n, max(a_n + k − 1, j)] ∩ [a_n, G]`
//!
//! Rows outside `[a_n, G]` attend to themselves only. With streaming history,
//! `a_n` is replaced by the window start `max(1, G − H + 1)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderKind {
    #[serde(rename = "bidir")]
    Bidirectional,
    #[serde(rename = "unidir")]
    Unidirectional,
    #[serde(rename = "pbe")]
    Pbe,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [
        EncoderKind::Bidirectional,
        EncoderKind::Unidirectional,
        EncoderKind::Pbe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Bidirectional => "bidir",
            EncoderKind::Unidirectional => "unidir",
            EncoderKind::Pbe => "pbe",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidir" | "bidirectional" => Ok(EncoderKind::Bidirectional),
            "unidir" | "unidirectional" => Ok(EncoderKind::Unidirectional),
            "pbe" => Ok(EncoderKind::Pbe),
            _ => Err(invalid(format!("unknown encoder kind {s:?}"))),
        }
    }
}

/// Parameters of one encoder mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpec {
    pub kind: EncoderKind,
    /// Wait-k lag; only read for PBE.
    pub k: usize,
    /// First position of the current sentence (or window), 1-based.
    pub sentence_start: usize,
    /// Source positions available, `G(i)`. `None` means the whole input.
    pub available: Option<usize>,
}

impl MaskSpec {
    pub fn new(kind: EncoderKind, k: usize) -> Self {
        MaskSpec {
            kind,
            k,
            sentence_start: 1,
            available: None,
        }
    }

    pub fn starting_at(mut self, a_n: usize) -> Self {
        self.sentence_start = a_n;
        self
    }

    pub fn with_available(mut self, g: usize) -> Self {
        self.available = Some(g);
        self
    }
}

/// Row-major boolean matrix; rows are queries, columns keys (0-based storage).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        AttentionMask {
            rows,
            cols,
            allow: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask {
            rows,
            cols,
            allow: vec![true; rows * cols],
        }
    }

    /// Lower-triangular mask: row r sees columns `0..=r`.
    pub fn causal(n: usize) -> Self {
        let mut m = AttentionMask::empty(n, n);
        for r in 0..n {
            m.allow_span(r, 0, r);
        }
        m
    }

    /// Row r sees columns `0..limits[r]` (exclusive upper bound, at least 1).
    pub fn prefix_limits(limits: &[usize], cols: usize) -> Self {
        let mut m = AttentionMask::empty(limits.len(), cols);
        for (r, &l) in limits.iter().enumerate() {
            m.allow_span(r, 0, l.clamp(1, cols) - 1);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// 0-based lookup.
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.allow[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.allow[row * self.cols + col] = value;
    }

    /// Allows the 0-based inclusive column span `[from, to]` of `row`.
    pub fn allow_span(&mut self, row: usize, from: usize, to: usize) {
        for c in from..=to.min(self.cols - 1) {
            self.set(row, c, true);
        }
    }

    /// Row-major flags.
    pub fn as_slice(&self) -> &[bool] {
        &self.allow
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.allow[row * self.cols..(row + 1) * self.cols]
    }

    /// 1-based columns allowed for 1-based `row`.
    pub fn allowed(&self, row: usize) -> Vec<usize> {
        self.row(row - 1)
            .iter()
            .enumerate()
            .filter_map(|(c, &a)| a.then_some(c + 1))
            .collect()
    }

    /// Element-wise inclusion.
    pub fn is_subset_of(&self, other: &AttentionMask) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.allow.iter().zip(&other.allow).all(|(&a, &b)| !a || b)
    }

    pub fn every_row_nonempty(&self) -> bool {
        (0..self.rows).all(|r| self.row(r).iter().any(|&a| a))
    }

    /// `0`/`1` grid, one row per line.
    pub fn to_grid(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            out.extend(self.row(r).iter().map(|&a| if a { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }
}

/// Encoder self-attention over positions `1..=len`.
pub fn encoder_mask(spec: &MaskSpec, len: usize) -> Result<AttentionMask> {
    let a = spec.sentence_start;
    if len == 0 || a < 1 || a > len {
        return Err(invalid(format!("sentence start {a} outside 1..={len}")));
    }
    let g = spec.available.unwrap_or(len);
    if g < a || g > len {
        return Err(invalid(format!("available source {g} outside {a}..={len}")));
    }
    if spec.kind == EncoderKind::Pbe && spec.k == 0 {
        return Err(invalid("PBE masks need k >= 1"));
    }
    let mut m = AttentionMask::empty(len, len);
    for j in 1..=len {
        if j < a || j > g {
            m.set(j - 1, j - 1, true);
            continue;
        }
        let end = match spec.kind {
            EncoderKind::Bidirectional => g,
            EncoderKind::Unidirectional => j,
            EncoderKind::Pbe => (a + spec.k - 1).max(j).min(g),
        };
        m.allow_span(j - 1, a - 1, end - 1);
    }
    Ok(m)
}

/// Start of the history window, `max(1, G − H + 1)`.
pub fn window_start(available: usize, history: usize) -> usize {
    (available + 1).saturating_sub(history).max(1)
}

/// Encoder mask over positions `1..=G` restricted to the last `H` of them.
pub fn encoder_mask_streaming(spec: &MaskSpec, available: usize, history: usize) -> Result<AttentionMask> {
    if available == 0 || history == 0 {
        return Err(invalid("streaming masks need G >= 1 and H >= 1"));
    }
    let spec = MaskSpec {
        sentence_start: window_start(available, history),
        available: Some(available),
        ..*spec
    };
    encoder_mask(&spec, available)
}

/// Inclusive 1-based span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos <= self.end
    }

    pub fn positions(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// What target position `i` may attend to in the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderVisibility {
    /// Past targets plus `i` itself.
    pub self_allow: Span,
    /// Encoder window.
    pub cross_allow: Span,
}

/// Decoder spans for target `i` of the sentence starting at (`a_n`, `b_n`).
///
/// With `history = Some(H)` the sentence starts are replaced by the windows
/// `[i − H, i]` and `[G − H + 1, G]`, clamped to the stream start.
pub fn decoder_mask(
    i: usize,
    a_n: usize,
    b_n: usize,
    available: usize,
    history: Option<usize>,
) -> Result<DecoderVisibility> {
    if i < 1 || available < 1 {
        return Err(invalid("decoder positions are 1-based"));
    }
    let (self_start, cross_start) = match history {
        Some(h) => (i.saturating_sub(h).max(1), window_start(available, h)),
        None => {
            if b_n > i || a_n > available {
                return Err(invalid("sentence start beyond the current position"));
            }
            (b_n, a_n)
        }
    };
    Ok(DecoderVisibility {
        self_allow: Span {
            start: self_start,
            end: i,
        },
        cross_allow: Span {
            start: cross_start,
            end: available,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use EncoderKind::*;

    #[test]
    fn figure_one_rows() {
        let bi = encoder_mask(&MaskSpec::new(Bidirectional, 4).with_available(5), 5).unwrap();
        assert_eq!(bi.allowed(3), vec![1, 2, 3, 4, 5]);
        let uni = encoder_mask(&MaskSpec::new(Unidirectional, 4), 5).unwrap();
        assert_eq!(uni.allowed(3), vec![1, 2, 3]);
        let pbe = encoder_mask(&MaskSpec::new(Pbe, 4), 5).unwrap();
        assert_eq!(pbe.allowed(3), vec![1, 2, 3, 4]);
    }

    #[test]
    fn streaming_window_examples() {
        let m = encoder_mask_streaming(&MaskSpec::new(Bidirectional, 1), 10, 4).unwrap();
        for j in 7..=10 {
            assert_eq!(m.allowed(j), vec![7, 8, 9, 10]);
        }
        let m = encoder_mask_streaming(&MaskSpec::new(Pbe, 2), 10, 4).unwrap();
        assert_eq!(m.allowed(7), vec![7, 8]);
        let m = encoder_mask_streaming(&MaskSpec::new(Bidirectional, 1), 3, 10).unwrap();
        assert_eq!(m.allowed(1), vec![1, 2, 3]);
    }

    #[test]
    fn decoder_examples() {
        let v = decoder_mask(1, 1, 1, 1, None).unwrap();
        assert_eq!(v.self_allow.positions().collect::<Vec<_>>(), vec![1]);
        let v = decoder_mask(4, 1, 1, 5, None).unwrap();
        assert_eq!(v.self_allow, Span { start: 1, end: 4 });
        assert_eq!(v.cross_allow, Span { start: 1, end: 5 });
        let v = decoder_mask(12, 1, 1, 20, Some(5)).unwrap();
        assert_eq!(v.self_allow, Span { start: 7, end: 12 });
        assert_eq!(v.cross_allow, Span { start: 16, end: 20 });
        assert!(decoder_mask(0, 1, 1, 1, None).is_err());
    }

    #[test]
    fn rejects_bad_spans() {
        assert!(encoder_mask(&MaskSpec::new(Bidirectional, 1).starting_at(4), 3).is_err());
        assert!(encoder_mask(&MaskSpec::new(Bidirectional, 1).with_available(7), 5).is_err());
        assert!(encoder_mask(&MaskSpec::new(Pbe, 0), 5).is_err());
    }

    #[test]
    fn rows_outside_the_sentence_see_only_themselves() {
        let m = encoder_mask(&MaskSpec::new(Pbe, 3).starting_at(3).with_available(5), 7).unwrap();
        assert_eq!(m.allowed(1), vec![1]);
        assert_eq!(m.allowed(3), vec![3, 4, 5]);
        assert_eq!(m.allowed(6), vec![6]);
        assert!(m.every_row_nonempty());
    }

    #[test]
    fn pbe_rows_past_k_ignore_availability() {
        for j in 4..=8 {
            let rows: Vec<_> = (j..=8)
                .map(|g| {
                    encoder_mask(&MaskSpec::new(Pbe, 4).with_available(g), 8)
                        .unwrap()
                        .allowed(j)
                })
                .collect();
            assert!(rows.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn grid_rendering() {
        assert_eq!(AttentionMask::causal(3).to_grid(), "100\n110\n111\n");
        assert_eq!(AttentionMask::prefix_limits(&[0, 2], 3).to_grid(), "100\n110\n");
    }
}
