//! Segmenter → wait-k decoder composition, evaluation and reports.
//!
//! The segmenter fills its future window with `w` READs at the start of the
//! stream; afterwards every READ of the translation model pulls one token
//! through the segmenter, which reads one more source token. The joint trace
//! is therefore the decoder's trace with `w` reads moved to the front.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bleu::{corpus_bleu, BleuOptions, BleuScore};
use crate::error::{data, invalid, Result};
use crate::latency::{oracle_gammas, stream_metrics, Aggregation, LatencyConfig, LatencyReport, LatencyScores, Mode};
use crate::masks::EncoderKind;
use crate::model::{greedy_stream_decode, Checkpoint, DecodeOptions, ModelConfig};
use crate::policy::{Action, ActionTrace, WaitKPolicy};
use crate::reseg::mwer_resegment;
use crate::segmenter::{segment_stream, validate_events, OracleSegmenter, SegmenterModel};
use crate::text::{Gamma, Segmentation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub k: usize,
    pub gamma: Gamma,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterKind {
    #[default]
    Oracle,
    Trained,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterChoice {
    #[serde(default)]
    pub kind: SegmenterKind,
    /// Parameters file of a trained segmenter.
    #[serde(default)]
    pub params: Option<PathBuf>,
    /// Future window w.
    #[serde(default)]
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub checkpoint: PathBuf,
    /// Overrides the checkpoint's encoder kind at decoding time.
    #[serde(default)]
    pub encoder_kind: Option<EncoderKind>,
    /// Inference history H.
    #[serde(default)]
    pub history: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    #[serde(default = "one")]
    pub dal_scale: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
}

fn one() -> f64 {
    1.0
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            dal_scale: 1.0,
            aggregation: Aggregation::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub policy: PolicyConfig,
    #[serde(default)]
    pub segmenter: SegmenterChoice,
    pub model: ModelChoice,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        WaitKPolicy::new(self.policy.k, self.policy.gamma)?;
        if !(self.metrics.dal_scale.is_finite() && self.metrics.dal_scale > 0.0) {
            return Err(invalid("dal_scale must be positive"));
        }
        if self.segmenter.kind == SegmenterKind::Trained && self.segmenter.params.is_none() {
            return Err(invalid("a trained segmenter needs a params file"));
        }
        Ok(())
    }

    fn latency(&self) -> LatencyConfig {
        LatencyConfig {
            mode: Mode::Stream,
            dal_scale: self.metrics.dal_scale,
            aggregation: self.metrics.aggregation,
        }
    }
}

/// Joint trace of a segmenter with future window `w` feeding `mt_trace`.
pub fn compose_pipeline_trace(mt_trace: &ActionTrace, window: usize, stream_len: usize) -> Result<ActionTrace> {
    let labels: Vec<usize> = mt_trace
        .events()
        .iter()
        .filter(|e| e.action == Action::Read)
        .map(|e| e.sentence)
        .collect();
    if labels.len() != stream_len {
        return Err(data(format!(
            "decoder read {} of {stream_len} source tokens",
            labels.len()
        )));
    }
    let mut joint = ActionTrace::new();
    for &label in labels.iter().take(window) {
        joint.push_read(label);
    }
    for e in mt_trace.events() {
        match e.action {
            Action::Read if joint.num_reads() < stream_len => {
                joint.push_read(labels[joint.num_reads()]);
            }
            Action::Read => {}
            Action::Write => {
                joint.push_write(e.sentence);
            }
        }
    }
    Ok(joint)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub bleu: BleuScore,
    pub latency: LatencyReport,
    /// Joint segmenter + decoder trace.
    pub trace: ActionTrace,
    /// Output stream.
    pub hypothesis: Vec<String>,
    /// Segmenter decisions (sentence ends in the source stream).
    pub boundaries: Vec<usize>,
    /// Resegmented target sentence lengths.
    pub segment_lengths: Vec<usize>,
    pub wall_clock_ms: u64,
}

/// Merges sentences whose target side is empty into a neighbour so that
/// every sentence has at least one target token.
fn merge_empty(src: &[usize], tgt: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut s_out: Vec<usize> = Vec::new();
    let mut t_out: Vec<usize> = Vec::new();
    let mut pending = 0;
    for (&s, &t) in src.iter().zip(tgt) {
        if t == 0 {
            match s_out.last_mut() {
                Some(last) => *last += s,
                None => pending += s,
            }
        } else {
            s_out.push(s + pending);
            t_out.push(t);
            pending = 0;
        }
    }
    (s_out, t_out)
}

/// BLEU and stream latency of an output stream against references.
///
/// `src_lengths` is the reference segmentation of the source stream; the
/// hypothesis is split by MWER against `refs`, and delays come from `trace`.
pub fn evaluate(
    hypothesis: &[String],
    trace: &ActionTrace,
    src_lengths: &[usize],
    refs: &[Vec<String>],
    latency: LatencyConfig,
) -> Result<(BleuScore, LatencyReport, Vec<usize>)> {
    if src_lengths.len() != refs.len() {
        return Err(data(format!(
            "{} source sentences for {} references",
            src_lengths.len(),
            refs.len()
        )));
    }
    if hypothesis.len() != trace.num_writes() {
        return Err(data("trace and hypothesis lengths differ"));
    }
    let reseg = mwer_resegment(hypothesis, refs);
    let segments: Vec<Vec<String>> = reseg.segments(hypothesis).iter().map(|s| s.to_vec()).collect();
    let lengths: Vec<usize> = segments.iter().map(Vec::len).collect();
    let bleu = corpus_bleu(&segments, refs, BleuOptions::default())?;
    if hypothesis.is_empty() {
        return Err(data("the decoder produced no output"));
    }
    let (src, tgt) = merge_empty(src_lengths, &lengths);
    let seg = Segmentation::from_lengths(&src, &tgt)?;
    let src_total: usize = src.iter().sum();
    let gammas = oracle_gammas(&seg, src_total, hypothesis.len())?;
    let report = stream_metrics(&trace.delays(), &seg, src_total, &gammas, latency)?;
    Ok((bleu, report, lengths))
}

/// Loaded components of a pipeline run.
pub struct Components<'a> {
    pub checkpoint: &'a Checkpoint,
    pub segmenter: Option<&'a SegmenterModel>,
}

/// Decodes `sources` as one stream and evaluates it against `refs`.
pub fn run_pipeline(
    config: &PipelineConfig,
    parts: &Components<'_>,
    sources: &[Vec<String>],
    refs: &[Vec<String>],
) -> Result<RunReport> {
    let started = Instant::now();
    config.validate()?;
    let stream: Vec<String> = sources.concat();
    if stream.is_empty() {
        return Err(data("empty source stream"));
    }
    let src_lengths: Vec<usize> = sources.iter().map(Vec::len).collect();
    let window = config.segmenter.window;
    let boundaries: Vec<usize> = match (config.segmenter.kind, parts.segmenter) {
        (SegmenterKind::Oracle, _) => OracleSegmenter::from_lengths(&src_lengths).segment(),
        (SegmenterKind::Trained, Some(model)) => {
            if model.config.window != window {
                return Err(invalid(format!(
                    "segmenter window {} differs from the configured {window}",
                    model.config.window
                )));
            }
            segment_stream(model, &stream)
        }
        (SegmenterKind::Trained, None) => return Err(invalid("trained segmenter not loaded")),
    }
    .into_iter()
    .map(|e| e.position)
    .collect();
    validate_events(
        &boundaries.iter().map(|&position| crate::segmenter::BoundaryEvent { position }).collect::<Vec<_>>(),
        stream.len(),
    )?;

    let ck = parts.checkpoint;
    let model_config = ModelConfig {
        encoder_kind: config.model.encoder_kind.unwrap_or(ck.config.encoder_kind),
        ..ck.config.clone()
    };
    let policy = WaitKPolicy::new(config.policy.k, config.policy.gamma)?;
    let ids = model_config.vocab.encode(&stream);
    let decoded = greedy_stream_decode(
        &ck.params,
        &model_config,
        &ids,
        &boundaries,
        &DecodeOptions::new(policy, config.model.history),
    )?;
    let hypothesis = model_config.vocab.decode(&decoded.tokens);
    let trace = compose_pipeline_trace(&decoded.trace, window, stream.len())?;
    let (bleu, latency, segment_lengths) = evaluate(&hypothesis, &trace, &src_lengths, refs, config.latency())?;
    Ok(RunReport {
        config: config.clone(),
        bleu,
        latency,
        trace,
        hypothesis,
        boundaries,
        segment_lengths,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    })
}

/// Recomputes BLEU and latency from the persisted trace and output.
pub fn recompute(report: &RunReport, src_lengths: &[usize], refs: &[Vec<String>]) -> Result<(BleuScore, LatencyReport)> {
    let (bleu, latency, _) = evaluate(&report.hypothesis, &report.trace, src_lengths, refs, report.config.latency())?;
    Ok((bleu, latency))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Json,
    PlotData,
}

impl std::str::FromStr for ReportFormat {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "plot-data" => Ok(ReportFormat::PlotData),
            _ => Err(invalid(format!("unknown report format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LatencyAxis {
    Al,
    Dal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub k: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub window: usize,
    pub points: Vec<PlotPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub x_axis: LatencyAxis,
    pub y_axis: String,
    pub series: Vec<PlotSeries>,
}

/// Latency against BLEU, one series per window, points ordered by k.
pub fn plot_data(reports: &[RunReport], axis: LatencyAxis) -> PlotData {
    let mut windows: Vec<usize> = reports.iter().map(|r| r.config.segmenter.window).collect();
    windows.sort_unstable();
    windows.dedup();
    let pick = |s: &LatencyScores| match axis {
        LatencyAxis::Al => s.al,
        LatencyAxis::Dal => s.dal,
    };
    let series = windows
        .into_iter()
        .map(|w| {
            let mut points: Vec<PlotPoint> = reports
                .iter()
                .filter(|r| r.config.segmenter.window == w)
                .map(|r| PlotPoint {
                    k: r.config.policy.k,
                    x: pick(&r.latency.aggregate),
                    y: r.bleu.points(),
                })
                .collect();
            points.sort_by_key(|p| p.k);
            PlotSeries { window: w, points }
        })
        .collect();
    PlotData {
        x_axis: axis,
        y_axis: "BLEU".into(),
        series,
    }
}

/// One row per report: settings, BLEU and aggregate latency.
pub fn reports_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("k,gamma,window,history,BLEU,AP,AL,DAL\n");
    for r in reports {
        let c = &r.config;
        let a = &r.latency.aggregate;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.policy.k,
            c.policy.gamma,
            c.segmenter.window,
            c.model.history,
            r.bleu.points(),
            a.ap,
            a.al,
            a.dal
        );
    }
    out
}

/// Serializes reports. CSV and plot data exclude wall-clock time, so equal
/// runs give identical bytes.
pub fn emit_report(reports: &[RunReport], format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Csv => reports_csv(reports),
        ReportFormat::Json => serde_json::to_string_pretty(reports)? + "\n",
        ReportFormat::PlotData => serde_json::to_string_pretty(&plot_data(reports, LatencyAxis::Al))? + "\n",
    })
}

/// The k values of the standard latency-quality sweep.
pub const SWEEP_KS: [usize; 5] = [1, 2, 4, 8, 16];
/// The segmenter windows of the standard sweep.
pub const SWEEP_WINDOWS: [usize; 5] = [0, 1, 2, 3, 4];

/// Runs every (k, w) point in parallel; results are ordered by w, then k.
/// `segmenters` supplies a trained segmenter per window when the base config
/// asks for one.
pub fn sweep(
    base: &PipelineConfig,
    checkpoint: &Checkpoint,
    segmenters: &[(usize, SegmenterModel)],
    ks: &[usize],
    windows: &[usize],
    sources: &[Vec<String>],
    refs: &[Vec<String>],
) -> Result<Vec<RunReport>> {
    let grid: Vec<(usize, usize)> = windows.iter().flat_map(|&w| ks.iter().map(move |&k| (w, k))).collect();
    grid.par_iter()
        .map(|&(w, k)| {
            let mut config = base.clone();
            config.policy.k = k;
            config.segmenter.window = w;
            let segmenter = segmenters.iter().find(|(sw, _)| *sw == w).map(|(_, m)| m);
            let parts = Components { checkpoint, segmenter };
            run_pipeline(&config, &parts, sources, refs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::schedule_actions;

    fn mt_trace(k: usize, src: &[usize], tgt: &[usize]) -> ActionTrace {
        let seg = Segmentation::from_lengths(src, tgt).unwrap();
        schedule_actions(&WaitKPolicy::wait(k).unwrap(), &seg, src, tgt).unwrap()
    }

    #[test]
    fn window_reads_move_to_the_front() {
        let mt = mt_trace(1, &[2, 2], &[2, 2]);
        assert_eq!(mt.pattern(), "RWRWRWRW");
        let joint = compose_pipeline_trace(&mt, 2, 4).unwrap();
        assert_eq!(joint.pattern(), "RRRWRWWW");
        assert_eq!(joint.delays(), vec![3, 4, 4, 4]);
        assert_eq!(compose_pipeline_trace(&mt, 0, 4).unwrap(), mt);
        assert!(compose_pipeline_trace(&mt, 1, 5).is_err());
    }

    #[test]
    fn empty_segments_merge_into_neighbours() {
        assert_eq!(merge_empty(&[2, 3, 4], &[1, 0, 2]), (vec![5, 4], vec![1, 2]));
        assert_eq!(merge_empty(&[2, 3], &[0, 2]), (vec![5], vec![2]));
    }

    #[test]
    fn plot_data_groups_by_window() {
        let mk = |k, w| RunReport {
            config: PipelineConfig {
                policy: PolicyConfig { k, gamma: Gamma::ONE },
                segmenter: SegmenterChoice { window: w, ..Default::default() },
                model: ModelChoice {
                    checkpoint: "m.json".into(),
                    encoder_kind: None,
                    history: 0,
                },
                metrics: MetricsConfig::default(),
                seed: 0,
            },
            bleu: corpus_bleu(&[vec!["a"]], &[vec!["a"]], BleuOptions { max_n: 1, smooth: false }).unwrap(),
            latency: LatencyReport {
                per_sentence: vec![],
                aggregate: LatencyScores { ap: 1.0, al: k as f64, dal: k as f64 },
                config: LatencyConfig::default(),
            },
            trace: ActionTrace::new(),
            hypothesis: vec![],
            boundaries: vec![],
            segment_lengths: vec![],
            wall_clock_ms: 0,
        };
        let reports: Vec<RunReport> = [0, 1].iter().flat_map(|&w| [4, 1, 2].map(|k| mk(k, w))).collect();
        let p = plot_data(&reports, LatencyAxis::Al);
        assert_eq!(p.series.len(), 2);
        assert!(p.series.iter().all(|s| s.points.iter().map(|p| p.k).eq([1, 2, 4])));
        let csv = emit_report(&reports, ReportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 7);
    }
}
