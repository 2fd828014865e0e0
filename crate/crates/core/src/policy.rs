//! Wait-k delay functions and READ/WRITE scheduling over segmented streams.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{data, invalid, Result};
use crate::text::{Gamma, Segmentation, Side};

/// Read `k` source tokens, then write `γ` target tokens per source token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaitKPolicy {
    pub k: usize,
    pub gamma: Gamma,
}

impl WaitKPolicy {
    pub fn new(k: usize, gamma: Gamma) -> Result<Self> {
        if k == 0 {
            return Err(invalid("wait-k needs k >= 1"));
        }
        Ok(WaitKPolicy { k, gamma })
    }

    pub fn wait(k: usize) -> Result<Self> {
        WaitKPolicy::new(k, Gamma::ONE)
    }

    /// g(i) = ⌊k + (i−1)/γ⌋ for a sentence-relative target index `i ≥ 1`.
    pub fn local_delay(&self, i: usize) -> usize {
        debug_assert!(i >= 1);
        self.k + self.gamma.floor_div(i.saturating_sub(1) as u64) as usize
    }
}

/// Free-function form of [`WaitKPolicy::local_delay`].
pub fn local_delay(policy: &WaitKPolicy, i: usize) -> Result<usize> {
    if i == 0 {
        return Err(invalid("target indices are 1-based"));
    }
    Ok(policy.local_delay(i))
}

/// G(i) = ⌊k + (i − b_n)/γ⌋ + a_n − 1 for the sentence n holding target position `i`.
pub fn stream_delay(policy: &WaitKPolicy, seg: &Segmentation, i: usize) -> Result<usize> {
    stream_delay_per_sentence(std::slice::from_ref(policy), seg, i)
}

/// As [`stream_delay`], with one policy per sentence (a single policy applies to all).
pub fn stream_delay_per_sentence(
    policies: &[WaitKPolicy],
    seg: &Segmentation,
    i: usize,
) -> Result<usize> {
    let n = seg.sentence_of(Side::Target, i)?;
    let policy = policy_for(policies, n)?;
    let b_n = seg.b()[n - 1];
    let a_n = seg.a()[n - 1];
    Ok(policy.local_delay(i - b_n + 1) + a_n - 1)
}

fn policy_for(policies: &[WaitKPolicy], n: usize) -> Result<&WaitKPolicy> {
    match policies {
        [] => Err(invalid("no policy given")),
        [p] => Ok(p),
        ps => ps
            .get(n - 1)
            .ok_or_else(|| invalid(format!("no policy for sentence {n}"))),
    }
}

/// Clamps a delay to the source available so far.
pub fn cap_delay(raw: usize, available_src: usize) -> usize {
    raw.min(available_src)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Read,
    Write,
}

/// One step of an [`ActionTrace`]. Times are 0-based, positions and sentences 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: usize,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_pos: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt_pos: Option<usize>,
    pub sentence: usize,
}

/// Time-ordered READ/WRITE log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TraceEvent>", into = "Vec<TraceEvent>")]
pub struct ActionTrace {
    events: Vec<TraceEvent>,
    reads: usize,
}

impl TryFrom<Vec<TraceEvent>> for ActionTrace {
    type Error = crate::error::Error;

    fn try_from(events: Vec<TraceEvent>) -> Result<Self> {
        ActionTrace::from_events(events)
    }
}

impl From<ActionTrace> for Vec<TraceEvent> {
    fn from(t: ActionTrace) -> Self {
        t.events
    }
}

impl ActionTrace {
    pub fn new() -> Self {
        ActionTrace::default()
    }

    /// Builds a trace from events, checking the ordering invariants.
    pub fn from_events(events: Vec<TraceEvent>) -> Result<Self> {
        let reads = events.iter().filter(|e| e.action == Action::Read).count();
        let trace = ActionTrace { events, reads };
        trace.validate()?;
        Ok(trace)
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_reads(&self) -> usize {
        self.reads
    }

    pub fn num_writes(&self) -> usize {
        self.events.len() - self.num_reads()
    }

    pub fn push_read(&mut self, sentence: usize) -> usize {
        self.reads += 1;
        let src_pos = self.reads;
        self.events.push(TraceEvent {
            time: self.events.len(),
            action: Action::Read,
            src_pos: Some(src_pos),
            tgt_pos: None,
            sentence,
        });
        src_pos
    }

    pub fn push_write(&mut self, sentence: usize) -> usize {
        let tgt_pos = self.num_writes() + 1;
        self.events.push(TraceEvent {
            time: self.events.len(),
            action: Action::Write,
            src_pos: None,
            tgt_pos: Some(tgt_pos),
            sentence,
        });
        tgt_pos
    }

    pub fn validate(&self) -> Result<()> {
        let mut last_src = 0;
        let mut last_tgt = 0;
        for (t, e) in self.events.iter().enumerate() {
            if e.time != t {
                return Err(data(format!("event {t} has time {}", e.time)));
            }
            match (e.action, e.src_pos, e.tgt_pos) {
                (Action::Read, Some(p), None) if p > last_src => last_src = p,
                (Action::Write, None, Some(p)) if p > last_tgt => last_tgt = p,
                _ => return Err(data(format!("malformed or out-of-order event at time {t}"))),
            }
            if e.sentence == 0 {
                return Err(data(format!("event at time {t} has sentence 0")));
            }
        }
        Ok(())
    }

    /// G(i) for every written target position: READs strictly before the WRITE of i.
    pub fn delays(&self) -> Vec<usize> {
        let mut reads = 0;
        let mut out = Vec::new();
        for e in &self.events {
            match e.action {
                Action::Read => reads += 1,
                Action::Write => out.push(reads),
            }
        }
        out
    }

    /// Compact `R`/`W` rendering, e.g. `RWRW`.
    pub fn pattern(&self) -> String {
        self.events
            .iter()
            .map(|e| match e.action {
                Action::Read => 'R',
                Action::Write => 'W',
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            // serializing a plain struct cannot fail
            let _ = writeln!(out, "{}", serde_json::to_string(e).unwrap());
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent = serde_json::from_str(line)
                .map_err(|e| data(format!("trace line {}: {e}", lineno + 1)))?;
            events.push(e);
        }
        ActionTrace::from_events(events)
    }
}

/// Wait-k schedule with end-of-sentence flush for a single policy.
pub fn schedule_actions(
    policy: &WaitKPolicy,
    seg: &Segmentation,
    src_lens: &[usize],
    tgt_lens: &[usize],
) -> Result<ActionTrace> {
    schedule_actions_per_sentence(std::slice::from_ref(policy), seg, src_lens, tgt_lens)
}

/// Wait-k schedule where sentence n uses `policies[n-1]` (or the single policy given).
///
/// Target i of sentence n is written once `min(g(i), |x_n|)` of its source tokens
/// have been read; every target of sentence n is written before sentence n+1 is read.
pub fn schedule_actions_per_sentence(
    policies: &[WaitKPolicy],
    seg: &Segmentation,
    src_lens: &[usize],
    tgt_lens: &[usize],
) -> Result<ActionTrace> {
    let expected = Segmentation::from_lengths(src_lens, tgt_lens)?;
    if &expected != seg {
        return Err(invalid("segmentation does not match the sentence lengths"));
    }
    let mut trace = ActionTrace::new();
    for (n0, (&src_len, &tgt_len)) in src_lens.iter().zip(tgt_lens).enumerate() {
        let n = n0 + 1;
        let policy = policy_for(policies, n)?;
        let mut read = 0;
        for i in 1..=tgt_len {
            let need = cap_delay(policy.local_delay(i), src_len);
            while read < need {
                trace.push_read(n);
                read += 1;
            }
            trace.push_write(n);
        }
        while read < src_len {
            trace.push_read(n);
            read += 1;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(num: u64, den: u64) -> Gamma {
        Gamma::new(num, den).unwrap()
    }

    #[test]
    fn local_delay_examples() {
        let p = WaitKPolicy::wait(4).unwrap();
        assert_eq!(p.local_delay(1), 4);
        assert_eq!(p.local_delay(2), 5);
        let p = WaitKPolicy::new(2, g(1, 2)).unwrap();
        assert_eq!(p.local_delay(3), 6);
        assert!(local_delay(&p, 0).is_err());
        assert!(WaitKPolicy::wait(0).is_err());
    }

    #[test]
    fn stream_delay_examples() {
        let one = Segmentation::new(vec![1], vec![1]).unwrap();
        assert_eq!(stream_delay(&WaitKPolicy::wait(4).unwrap(), &one, 1).unwrap(), 4);
        assert_eq!(stream_delay(&WaitKPolicy::wait(1).unwrap(), &one, 5).unwrap(), 5);
        let two = Segmentation::new(vec![1, 6], vec![1, 4]).unwrap();
        assert_eq!(stream_delay(&WaitKPolicy::wait(2).unwrap(), &two, 4).unwrap(), 7);
    }

    #[test]
    fn cap_delay_examples() {
        assert_eq!(cap_delay(9, 5), 5);
        assert_eq!(cap_delay(3, 5), 3);
        assert_eq!(cap_delay(5, 5), 5);
    }

    #[test]
    fn schedule_examples() {
        let trace = |k, src: &[usize], tgt: &[usize]| {
            let seg = Segmentation::from_lengths(src, tgt).unwrap();
            schedule_actions(&WaitKPolicy::wait(k).unwrap(), &seg, src, tgt)
                .unwrap()
                .pattern()
        };
        assert_eq!(trace(1, &[3], &[3]), "RWRWRW");
        assert_eq!(trace(3, &[3], &[3]), "RRRWWW");
        assert_eq!(trace(2, &[2, 2], &[2, 2]), "RRWWRRWW");
        // short target: remaining source is read after the flush
        assert_eq!(trace(1, &[3, 1], &[1, 1]), "RWRRRW");
    }

    #[test]
    fn schedule_rejects_inconsistent_segmentation() {
        let seg = Segmentation::from_lengths(&[2, 2], &[2, 2]).unwrap();
        let p = WaitKPolicy::wait(1).unwrap();
        assert!(schedule_actions(&p, &seg, &[3, 1], &[2, 2]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let seg = Segmentation::from_lengths(&[2, 3], &[3, 1]).unwrap();
        let trace = schedule_actions(&WaitKPolicy::wait(2).unwrap(), &seg, &[2, 3], &[3, 1]).unwrap();
        let text = trace.to_jsonl();
        assert!(text.starts_with(r#"{"time":0,"action":"READ","src_pos":1,"sentence":1}"#));
        assert_eq!(ActionTrace::from_jsonl(&text).unwrap(), trace);
        assert!(ActionTrace::from_jsonl(r#"{"time":1,"action":"READ","src_pos":1,"sentence":1}"#).is_err());
    }

    #[test]
    fn per_sentence_policies() {
        let seg = Segmentation::from_lengths(&[2, 2], &[2, 2]).unwrap();
        let ps = [WaitKPolicy::wait(2).unwrap(), WaitKPolicy::wait(1).unwrap()];
        let t = schedule_actions_per_sentence(&ps, &seg, &[2, 2], &[2, 2]).unwrap();
        assert_eq!(t.pattern(), "RRWWRWRW");
        assert_eq!(stream_delay_per_sentence(&ps, &seg, 3).unwrap(), 3);
    }
}
