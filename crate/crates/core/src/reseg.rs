//! Minimum word-error-rate re-segmentation of an unsegmented hypothesis.
//!
//! Splits the hypothesis into as many contiguous (possibly empty) segments as
//! there are reference sentences so that the summed token-level Levenshtein
//! distance is minimal. Among optimal splits, the one with the earliest
//! boundaries (lexicographically) is returned.
//!
//! The search runs a suffix table `best[n][j]` (cost of aligning references
//! `n..` with hypothesis tokens `j..`) built by one joint edit-distance sweep per
//! reference, then walks forward choosing each boundary as early as possible.
//! Time is O(|hyp| · Σ|ref_n|).

use serde::{Deserialize, Serialize};

const INF: u64 = u64::MAX / 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResegmentationResult {
    /// 1-based hypothesis start of each segment; segment n ends where n+1 starts.
    pub boundaries: Vec<usize>,
    pub total_cost: u64,
}

impl ResegmentationResult {
    /// Splits `hyp` along the boundaries.
    pub fn segments<'a, T>(&self, hyp: &'a [T]) -> Vec<&'a [T]> {
        let mut out = Vec::with_capacity(self.boundaries.len());
        for (n, &start) in self.boundaries.iter().enumerate() {
            let end = self.boundaries.get(n + 1).map_or(hyp.len() + 1, |&e| e);
            out.push(&hyp[start - 1..end - 1]);
        }
        out
    }
}

/// Token-level edit distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> u64 {
    let mut prev: Vec<u64> = (0..=b.len() as u64).collect();
    let mut cur = vec![0u64; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i as u64 + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + u64::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Re-segments `hyp` against `refs`. An empty reference list yields no boundaries.
pub fn mwer_resegment<T: PartialEq, R: AsRef<[T]>>(hyp: &[T], refs: &[R]) -> ResegmentationResult {
    let n_refs = refs.len();
    if n_refs == 0 {
        return ResegmentationResult {
            boundaries: Vec::new(),
            total_cost: levenshtein::<T>(hyp, &[]),
        };
    }
    let h = hyp.len();

    // best[n][j]: align refs[n..] with hyp[j..]
    let mut best = vec![vec![INF; h + 1]; n_refs + 1];
    best[n_refs][h] = 0;
    for n in (0..n_refs).rev() {
        let r = refs[n].as_ref();
        let m = r.len();
        // row[mm][j]: align r[mm..] with hyp[j..e) then refs[n+1..] with hyp[e..]
        let mut below = vec![INF; h + 1];
        below[h] = best[n + 1][h];
        for j in (0..h).rev() {
            below[j] = best[n + 1][j].min(below[j + 1].saturating_add(1));
        }
        for mm in (0..m).rev() {
            let mut row = vec![INF; h + 1];
            row[h] = below[h].saturating_add(1);
            for j in (0..h).rev() {
                let sub = below[j + 1].saturating_add(u64::from(hyp[j] != r[mm]));
                let del = below[j].saturating_add(1);
                let ins = row[j + 1].saturating_add(1);
                row[j] = sub.min(del).min(ins);
            }
            below = row;
        }
        best[n] = below;
    }

    let mut boundaries = Vec::with_capacity(n_refs);
    let mut start = 0;
    boundaries.push(1);
    for n in 0..n_refs - 1 {
        let r = refs[n].as_ref();
        let target = best[n][start];
        let costs = prefix_distances(&hyp[start..], r);
        let end = (start..=h)
            .find(|&e| costs[e - start].saturating_add(best[n + 1][e]) == target)
            .expect("suffix table is consistent");
        boundaries.push(end + 1);
        start = end;
    }
    ResegmentationResult {
        boundaries,
        total_cost: best[0][0],
    }
}

/// `out[e] = levenshtein(hyp[..e], r)` for every e.
fn prefix_distances<T: PartialEq>(hyp: &[T], r: &[T]) -> Vec<u64> {
    // columns over hyp prefixes, rows over r
    let mut prev: Vec<u64> = (0..=hyp.len() as u64).collect();
    let mut cur = vec![0u64; hyp.len() + 1];
    for (i, y) in r.iter().enumerate() {
        cur[0] = i as u64 + 1;
        for (e, x) in hyp.iter().enumerate() {
            let sub = prev[e] + u64::from(x != y);
            cur[e + 1] = sub.min(prev[e + 1] + 1).min(cur[e] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn run(hyp: &str, refs: &[&str]) -> ResegmentationResult {
        let refs: Vec<Vec<String>> = refs.iter().map(|r| tokenize(r)).collect();
        mwer_resegment(&tokenize(hyp), &refs)
    }

    #[test]
    fn examples() {
        let r = run("a b c d", &["a b", "c d"]);
        assert_eq!((r.boundaries, r.total_cost), (vec![1, 3], 0));
        let r = run("a x c d", &["a b", "c d"]);
        assert_eq!((r.boundaries, r.total_cost), (vec![1, 3], 1));
        let r = run("", &["a b", "c"]);
        assert_eq!((r.boundaries, r.total_cost), (vec![1, 1], 3));
    }

    #[test]
    fn ties_take_the_earliest_boundary() {
        // "x" can join either segment at equal cost
        let r = run("a x b", &["a", "b"]);
        assert_eq!(r.total_cost, 1);
        assert_eq!(r.boundaries, vec![1, 2]);
    }

    #[test]
    fn segments_cover_the_hypothesis() {
        let hyp = tokenize("a b c d e");
        let r = mwer_resegment(&hyp, &[tokenize("a b"), tokenize("c"), tokenize("d e")]);
        let segs = r.segments(&hyp);
        assert_eq!(segs.concat(), hyp);
        assert_eq!(segs[1], ["c".to_string()]);
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(levenshtein::<u8>(&[], &[1, 2]), 2);
        assert_eq!(levenshtein(&[1, 2], &[2, 1]), 2);
    }

    proptest! {
        #[test]
        fn triangle_inequality(
            a in prop::collection::vec(0u8..4, 0..8),
            b in prop::collection::vec(0u8..4, 0..8),
            c in prop::collection::vec(0u8..4, 0..8),
        ) {
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }

        #[test]
        fn perfect_hypotheses_are_recovered(refs in prop::collection::vec(prop::collection::vec(0u8..5, 1..5), 1..4)) {
            let hyp: Vec<u8> = refs.concat();
            let r = mwer_resegment(&hyp, &refs);
            prop_assert_eq!(r.total_cost, 0);
            let lens: Vec<usize> = r.segments(&hyp).iter().map(|s| s.len()).collect();
            let expected: Vec<usize> = refs.iter().map(Vec::len).collect();
            prop_assert_eq!(lens, expected);
        }
    }
}
