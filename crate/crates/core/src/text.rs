//! Tokens, vocabularies, streams and sentence segmentations.
//!
//! Stream positions and sentence indices are 1-based throughout the crate.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{data, invalid, Error, Result};

/// Start of a document.
pub const DOC: &str = "<DOC>";
/// History that does not reach the start of its document.
pub const CONT: &str = "<CONT>";
/// Separator between sentences of a sample.
pub const SEP: &str = "<SEP>";
/// End of a sample whose document continues.
pub const BRK: &str = "<BRK>";
/// End of the document.
pub const END: &str = "<END>";
pub const UNK: &str = "<UNK>";
pub const PAD: &str = "<PAD>";

/// Reserved surfaces in index order.
pub const RESERVED: [&str; 7] = [DOC, CONT, SEP, BRK, END, UNK, PAD];

/// Index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const DOC: TokenId = TokenId(0);
    pub const CONT: TokenId = TokenId(1);
    pub const SEP: TokenId = TokenId(2);
    pub const BRK: TokenId = TokenId(3);
    pub const END: TokenId = TokenId(4);
    pub const UNK: TokenId = TokenId(5);
    pub const PAD: TokenId = TokenId(6);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// One of the five stream markers (`<DOC>`, `<CONT>`, `<SEP>`, `<BRK>`, `<END>`).
    pub fn is_marker(self) -> bool {
        self.0 <= 4
    }

    /// Markers that close a sentence when emitted by a decoder.
    pub fn closes_sentence(self) -> bool {
        matches!(self, TokenId::SEP | TokenId::BRK | TokenId::END)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub id: TokenId,
}

/// Ordered set of unique surfaces; the reserved markers occupy ids 0..=6.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// A vocabulary containing only the reserved surfaces.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            entries: Vec::new(),
            index: HashMap::new(),
        };
        for s in RESERVED {
            v.insert(s);
        }
        v
    }

    /// Reserved surfaces followed by the given surfaces (duplicates ignored).
    pub fn from_surfaces<I, S>(surfaces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary::new();
        for s in surfaces {
            let s = s.as_ref();
            check_surface(s)?;
            v.insert(s);
        }
        Ok(v)
    }

    /// Collects every token of the given lines.
    pub fn from_lines<I, S>(lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut surfaces = Vec::new();
        for line in lines {
            surfaces.extend(tokenize(line.as_ref()));
        }
        Vocabulary::from_surfaces(surfaces)
    }

    /// Adds a surface and returns its id.
    pub fn insert(&mut self, surface: &str) -> TokenId {
        if let Some(&id) = self.index.get(surface) {
            return id;
        }
        let id = TokenId(self.entries.len() as u32);
        self.entries.push(surface.to_string());
        self.index.insert(surface.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    /// Id of `surface`, or `<UNK>` when it is out of vocabulary.
    pub fn lookup(&self, surface: &str) -> TokenId {
        self.get(surface).unwrap_or(TokenId::UNK)
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.entries[id.index()]
    }

    pub fn token(&self, id: TokenId) -> Token {
        Token {
            surface: self.surface(id).to_string(),
            id,
        }
    }

    pub fn encode<S: AsRef<str>>(&self, surfaces: &[S]) -> Vec<TokenId> {
        surfaces.iter().map(|s| self.lookup(s.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&id| self.surface(id).to_string()).collect()
    }

    pub fn surfaces(&self) -> &[String] {
        &self.entries
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(entries: Vec<String>) -> Result<Self> {
        if entries.len() < RESERVED.len()
            || entries.iter().zip(RESERVED).any(|(e, r)| e != r)
        {
            return Err(data("vocabulary does not start with the reserved surfaces"));
        }
        let mut v = Vocabulary::new();
        for e in &entries[RESERVED.len()..] {
            check_surface(e)?;
            if v.get(e).is_some() {
                return Err(data(format!("duplicate vocabulary entry {e:?}")));
            }
            v.insert(e);
        }
        Ok(v)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.entries
    }
}

fn check_surface(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(invalid(format!("token surface {s:?} is empty or has whitespace")));
    }
    Ok(())
}

/// Splits a line on runs of whitespace.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

/// A finite window onto a token stream. Positions are 1-based.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    tokens: Vec<String>,
}

impl TokenStream {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenStream { tokens }
    }

    /// Concatenates tokenized lines into one stream.
    pub fn from_lines<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tokens = lines
            .into_iter()
            .flat_map(|l| tokenize(l.as_ref()))
            .collect();
        TokenStream { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token at 1-based `pos`.
    pub fn at(&self, pos: usize) -> Option<&str> {
        pos.checked_sub(1)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Sentence start positions on both sides of a stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    a: Vec<usize>,
    b: Vec<usize>,
}

impl Segmentation {
    pub fn new(a: Vec<usize>, b: Vec<usize>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(invalid(format!(
                "segmentation vectors must be non-empty and equal length ({} vs {})",
                a.len(),
                b.len()
            )));
        }
        for (name, v) in [("a", &a), ("b", &b)] {
            if v[0] != 1 {
                return Err(invalid(format!("{name}_1 must be 1, got {}", v[0])));
            }
            if v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid(format!("{name} is not strictly increasing")));
            }
        }
        Ok(Segmentation { a, b })
    }

    /// Segmentation whose sentences have the given lengths (all ≥ 1).
    pub fn from_lengths(src_lens: &[usize], tgt_lens: &[usize]) -> Result<Self> {
        if src_lens.contains(&0) || tgt_lens.contains(&0) {
            return Err(invalid("sentence lengths must be positive"));
        }
        Segmentation::new(starts(src_lens), starts(tgt_lens))
    }

    pub fn a(&self) -> &[usize] {
        &self.a
    }

    pub fn b(&self) -> &[usize] {
        &self.b
    }

    pub fn starts(&self, side: Side) -> &[usize] {
        match side {
            Side::Source => &self.a,
            Side::Target => &self.b,
        }
    }

    pub fn num_sentences(&self) -> usize {
        self.a.len()
    }

    /// Sentence `n` (1-based) containing position `pos` on `side`.
    pub fn sentence_of(&self, side: Side, pos: usize) -> Result<usize> {
        if pos < 1 {
            return Err(invalid("positions are 1-based"));
        }
        let starts = self.starts(side);
        Ok(starts.partition_point(|&s| s <= pos))
    }

    /// Per-sentence lengths given the total length of the side.
    pub fn lengths(&self, side: Side, total: usize) -> Result<Vec<usize>> {
        let starts = self.starts(side);
        let last = *starts.last().unwrap();
        if total < last {
            return Err(invalid(format!(
                "stream of length {total} ends before the last sentence start {last}"
            )));
        }
        let mut lens: Vec<usize> = starts.windows(2).map(|w| w[1] - w[0]).collect();
        lens.push(total + 1 - last);
        Ok(lens)
    }

    /// Reads `a_n<TAB>b_n` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(x), Some(y), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(data(format!("segmentation line {}: expected two tab-separated fields", lineno + 1)));
            };
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| data(format!("segmentation line {}: {e}", lineno + 1)))
            };
            a.push(parse(x)?);
            b.push(parse(y)?);
        }
        Segmentation::new(a, b).map_err(|e| data(e.to_string()))
    }

    pub fn to_tsv(&self) -> String {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(x, y)| format!("{x}\t{y}\n"))
            .collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Segmentation::parse(&std::fs::read_to_string(path)?)
    }
}

fn starts(lens: &[usize]) -> Vec<usize> {
    let mut pos = 1;
    lens.iter()
        .map(|&l| {
            let s = pos;
            pos += l;
            s
        })
        .collect()
}

/// History bounds: `h` for building training samples, `inference` (H) for decoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryConfig {
    pub h: usize,
    pub inference: usize,
}

impl HistoryConfig {
    pub fn sentence_level() -> Self {
        HistoryConfig::default()
    }

    pub fn is_sentence_level(&self) -> bool {
        self.h == 0
    }
}

/// Exact positive rational, used for the catch-up factor γ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Gamma {
    num: u64,
    den: u64,
}

impl Gamma {
    pub const ONE: Gamma = Gamma { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(invalid(format!("catch-up factor {num}/{den} must be positive")));
        }
        let g = num.gcd(&den);
        Ok(Gamma {
            num: num / g,
            den: den / g,
        })
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `1/γ` as a float.
    pub fn inverse_f64(&self) -> f64 {
        self.den as f64 / self.num as f64
    }

    /// ⌊steps / γ⌋ computed exactly.
    pub fn floor_div(&self, steps: u64) -> u64 {
        steps * self.den / self.num
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Gamma {
    type Err = Error;

    /// Accepts `p/q`, integers and finite decimals (`0.85` is read as 85/100).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || invalid(format!("cannot parse catch-up factor {s:?}"));
        if let Some((p, q)) = s.split_once('/') {
            let p = p.trim().parse().map_err(|_| bad())?;
            let q = q.trim().parse().map_err(|_| bad())?;
            return Gamma::new(p, q);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let den = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Gamma::new(int * den + frac, den)
    }
}

impl TryFrom<String> for Gamma {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Gamma> for String {
    fn from(g: Gamma) -> Self {
        g.to_string()
    }
}

/// γ = target length / source length.
pub fn catch_up_factor(src_len: usize, tgt_len: usize) -> Result<Gamma> {
    if src_len == 0 || tgt_len == 0 {
        return Err(invalid("catch-up factor needs non-empty source and target"));
    }
    Gamma::new(tgt_len as u64, src_len as u64)
}

/// Tokenized lines of a text file, one segment per line.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(tokenize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("a b  c"), vec!["a", "b", "c"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("<SEP> x"), vec!["<SEP>", "x"]);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::from_surfaces(["x", "y"]).unwrap();
        for (i, s) in RESERVED.iter().enumerate() {
            assert_eq!(v.get(s), Some(TokenId(i as u32)));
        }
        assert_eq!(v.lookup("x"), TokenId(7));
        assert_eq!(v.lookup("zzz"), TokenId::UNK);
        assert!(Vocabulary::from_surfaces(["a b"]).is_err());
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let v = Vocabulary::from_surfaces(["x", "y"]).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
        assert!(serde_json::from_str::<Vocabulary>(r#"["x"]"#).is_err());
    }

    #[test]
    fn sentence_of_examples() {
        let seg = Segmentation::new(vec![1, 6], vec![1, 2]).unwrap();
        assert_eq!(seg.sentence_of(Side::Source, 5).unwrap(), 1);
        assert_eq!(seg.sentence_of(Side::Source, 6).unwrap(), 2);
        let one = Segmentation::new(vec![1], vec![1]).unwrap();
        assert_eq!(one.sentence_of(Side::Source, 100).unwrap(), 1);
        assert!(one.sentence_of(Side::Source, 0).is_err());
    }

    #[test]
    fn segmentation_validation() {
        assert!(Segmentation::new(vec![1, 3], vec![1]).is_err());
        assert!(Segmentation::new(vec![2], vec![1]).is_err());
        assert!(Segmentation::new(vec![1, 1], vec![1, 2]).is_err());
        let seg = Segmentation::from_lengths(&[3, 2], &[2, 2]).unwrap();
        assert_eq!(seg.a(), &[1, 4]);
        assert_eq!(seg.b(), &[1, 3]);
        assert_eq!(seg.lengths(Side::Source, 5).unwrap(), vec![3, 2]);
        assert_eq!(Segmentation::parse(&seg.to_tsv()).unwrap(), seg);
        assert!(Segmentation::parse("1 1\n").is_err());
    }

    #[test]
    fn catch_up_factor_examples() {
        assert_eq!(catch_up_factor(10, 10).unwrap().as_f64(), 1.0);
        assert_eq!(catch_up_factor(10, 5).unwrap().as_f64(), 0.5);
        assert_eq!(catch_up_factor(4, 6).unwrap().as_f64(), 1.5);
        assert!(catch_up_factor(0, 3).is_err());
    }

    #[test]
    fn gamma_parsing() {
        assert_eq!("3/2".parse::<Gamma>().unwrap(), Gamma::new(3, 2).unwrap());
        assert_eq!("0.5".parse::<Gamma>().unwrap(), Gamma::new(1, 2).unwrap());
        assert_eq!("2".parse::<Gamma>().unwrap(), Gamma::new(2, 1).unwrap());
        assert!("0".parse::<Gamma>().is_err());
        assert!("x".parse::<Gamma>().is_err());
        assert_eq!(Gamma::new(1, 2).unwrap().floor_div(3), 6);
    }

    proptest! {
        #[test]
        fn sentence_of_brackets(lens in prop::collection::vec(1usize..6, 1..6), probe in 1usize..40) {
            let seg = Segmentation::from_lengths(&lens, &lens).unwrap();
            let n = seg.sentence_of(Side::Source, probe).unwrap();
            let a = seg.a();
            prop_assert!(n >= 1 && n <= a.len());
            prop_assert!(a[n - 1] <= probe);
            if n < a.len() {
                prop_assert!(probe < a[n]);
            }
        }

        #[test]
        fn vocabulary_round_trip(words in prop::collection::vec("[a-z]{1,4}", 0..20)) {
            let v = Vocabulary::from_surfaces(&words).unwrap();
            for id in 0..v.len() as u32 {
                let id = TokenId(id);
                prop_assert_eq!(v.lookup(v.surface(id)), id);
            }
        }
    }
}
