use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Deserialize;

use streamwait::bleu::{corpus_bleu, BleuOptions};
use streamwait::corpus::{build_streaming_samples, split_sentences, upsample_mix, DocumentCorpus, MixRatio, StreamingSample};
use streamwait::latency::{
    oracle_gammas, relative_delays, sentence_metrics, stream_metrics, Aggregation, DelayVector, LatencyConfig, Mode,
};
use streamwait::masks::{encoder_mask, encoder_mask_streaming, MaskSpec};
use streamwait::model::tasks::{self, TaskConfig};
use streamwait::model::{
    greedy_stream_decode, train_multi_k, Checkpoint, DecodeOptions, LossOptions, LossScope, ModelConfig, TrainConfig,
};
use streamwait::nn::AdamConfig;
use streamwait::pipeline::{
    emit_report, plot_data, run_pipeline, sweep, Components, LatencyAxis, MetricsConfig, ModelChoice, PipelineConfig,
    PolicyConfig, ReportFormat, RunReport, SegmenterChoice, SegmenterKind, SWEEP_KS, SWEEP_WINDOWS,
};
use streamwait::reseg::mwer_resegment;
use streamwait::segmenter::{
    boundary_f1, parse_events, segment_stream, train_segmenter as fit_segmenter, validate_events, OracleSegmenter,
    SegmenterConfig, SegmenterModel, SegmenterTrainConfig,
};
use streamwait::text::{read_lines, Side};
use streamwait::{ActionTrace, EncoderKind, Gamma, Segmentation, Vocabulary, WaitKPolicy};

use crate::*;

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    read_lines(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn lines_text<S: AsRef<[String]>>(lines: &[S]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l.as_ref().join(" "));
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes to `path`, or stdout without one.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Loads a checkpoint named in the configuration; a missing file is a config problem.
fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(config_error(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_segmenter(path: &Path) -> Result<SegmenterModel> {
    if !path.exists() {
        return Err(config_error(format!("segmenter {} does not exist", path.display())));
    }
    SegmenterModel::load(path).with_context(|| format!("loading segmenter {}", path.display()))
}

fn sentence_ends(lengths: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut at = 0;
    lengths
        .into_iter()
        .filter(|&l| l > 0)
        .map(|l| {
            at += l;
            at
        })
        .collect()
}

pub fn generate_task(a: GenerateTaskArgs) -> Result<()> {
    let cfg = TaskConfig {
        documents: a.documents,
        words: a.words,
        ..TaskConfig::new(a.task)
    };
    let corpus = tasks::generate(&cfg, a.seed)?;
    let pairs: Vec<_> = corpus.documents.iter().flatten().collect();
    write_file(&a.out_source, &lines_text(&pairs.iter().map(|p| &p.source).collect::<Vec<_>>()))?;
    write_file(&a.out_target, &lines_text(&pairs.iter().map(|p| &p.target).collect::<Vec<_>>()))?;
    let mut index = String::new();
    let mut line = 1;
    for doc in &corpus.documents {
        let _ = writeln!(index, "{line}\t{}", line + doc.len() - 1);
        line += doc.len();
    }
    write_file(&a.out_index, &index)?;
    eprintln!("{} documents, {} sentence pairs", corpus.documents.len(), pairs.len());
    Ok(())
}

pub fn build_corpus(a: BuildCorpusArgs) -> Result<()> {
    let corpus = DocumentCorpus::read(&a.source, &a.target, a.index.as_deref())
        .with_context(|| format!("reading {} and {}", a.source.display(), a.target.display()))?;
    let mut samples = build_streaming_samples(&corpus, a.history);
    if a.mix {
        let sentence_level = build_streaming_samples(&corpus, 0);
        samples = upsample_mix(&samples, &sentence_level, MixRatio::default(), Some(a.seed))?;
    }
    write_file(&a.out_source, &lines_text(&samples.iter().map(|s| &s.source).collect::<Vec<_>>()))?;
    write_file(&a.out_target, &lines_text(&samples.iter().map(|s| &s.target).collect::<Vec<_>>()))?;
    eprintln!("{} samples from {} documents", samples.len(), corpus.documents.len());
    Ok(())
}

fn sample_from_lines(source: Vec<String>, target: Vec<String>) -> StreamingSample {
    let count = |t: &[String]| -> (usize, usize) {
        let sentences = split_sentences(t);
        let history = sentences.len().saturating_sub(1);
        (history, sentences[..history].iter().map(Vec::len).sum())
    };
    let (history_sentences, history_src_tokens) = count(&source);
    let (_, history_tgt_tokens) = count(&target);
    StreamingSample {
        source,
        target,
        history_src_tokens,
        history_tgt_tokens,
        history_sentences,
        document: 0,
        current_pair_index: 0,
    }
}

pub fn train_toy(a: TrainToyArgs) -> Result<()> {
    let src = read_sentences(&a.source)?;
    let tgt = read_sentences(&a.target)?;
    if src.len() != tgt.len() {
        return Err(streamwait::Error::Data(format!("{} source samples but {} target samples", src.len(), tgt.len())).into());
    }
    let vocab = Vocabulary::from_surfaces(src.iter().chain(&tgt).flatten())?;
    let samples: Vec<StreamingSample> = src.into_iter().zip(tgt).map(|(s, t)| sample_from_lines(s, t)).collect();
    let config = ModelConfig {
        layers: a.layers,
        model_dim: a.dim,
        heads: a.heads,
        ffn_dim: a.ffn,
        history: a.history,
        ..ModelConfig::new(vocab, a.encoder)
    };
    let train = TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        k_min: a.k_min,
        k_max: a.k_max,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        loss: LossOptions {
            scope: if a.current_sentence_loss { LossScope::CurrentSentence } else { LossScope::AllPositions },
            ..LossOptions::default()
        },
    };
    let run = train_multi_k(&samples, &config, &train, a.seed)?;
    let mean = |l: &[f64]| l.iter().sum::<f64>() / l.len().max(1) as f64;
    let n = run.losses.len().min(50);
    eprintln!(
        "{} steps on {} samples: loss {:.4} -> {:.4}",
        run.losses.len(),
        samples.len(),
        mean(&run.losses[..n]),
        mean(&run.losses[run.losses.len() - n..])
    );
    Checkpoint::new(config, run.params).save(&a.out)?;
    Ok(())
}

pub fn train_segmenter(a: TrainSegmenterArgs) -> Result<()> {
    let sentences: Vec<Vec<String>> = read_sentences(&a.sentences)?.into_iter().filter(|s| !s.is_empty()).collect();
    let vocab = Vocabulary::from_surfaces(sentences.iter().flatten())?;
    let config = SegmenterConfig {
        threshold: a.threshold,
        ..SegmenterConfig::new(vocab, a.window)
    };
    let train = SegmenterTrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        ..SegmenterTrainConfig::default()
    };
    let model = fit_segmenter(&sentences, config, &train, a.seed)?;
    model.save(&a.out)?;
    Ok(())
}

pub fn segment(a: SegmentArgs) -> Result<()> {
    let model = load_segmenter(&a.params)?;
    let stream = read_sentences(&a.input)?.concat();
    let events = segment_stream(&model, &stream);
    let text: String = events.iter().map(|e| format!("{}\n", e.position)).collect();
    emit(a.out.as_deref(), &text)?;
    if let Some(r) = a.reference {
        let lens: Vec<usize> = read_sentences(&r)?.iter().map(Vec::len).collect();
        let f1 = boundary_f1(&events, &OracleSegmenter::from_lengths(&lens).segment());
        eprintln!("boundary F1 {f1:.4}");
    }
    Ok(())
}

pub fn decode(a: DecodeArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let config = ModelConfig {
        encoder_kind: a.encoder.unwrap_or(ck.config.encoder_kind),
        ..ck.config.clone()
    };
    let lines = read_sentences(&a.source)?;
    let stream = lines.concat();
    let boundaries = match &a.boundaries {
        Some(p) => {
            let events = parse_events(&read_text(p)?)?;
            validate_events(&events, stream.len())?;
            events.iter().map(|e| e.position).collect()
        }
        None => sentence_ends(lines.iter().map(Vec::len)),
    };
    let policy = WaitKPolicy::new(a.policy.k, a.policy.gamma)?;
    let options = DecodeOptions::new(policy, a.history.unwrap_or(config.history));
    let out = greedy_stream_decode(&ck.params, &config, &config.vocab.encode(&stream), &boundaries, &options)?;
    let sentences: Vec<Vec<String>> = out.sentences().iter().map(|s| config.vocab.decode(s)).collect();
    emit(a.out.as_deref(), &lines_text(&sentences))?;
    if let Some(p) = &a.trace {
        write_file(p, &out.trace.to_jsonl())?;
    }
    if let Some(p) = &a.segmentation {
        write_file(p, &out.segmentation()?.to_tsv())?;
    }
    Ok(())
}

pub fn resegment(a: ResegmentArgs) -> Result<()> {
    let hyp = read_sentences(&a.hyp)?.concat();
    let refs = read_sentences(&a.refs)?;
    if refs.is_empty() {
        return Err(streamwait::Error::Data("no reference sentences".into()).into());
    }
    let result = mwer_resegment(&hyp, &refs);
    emit(a.out.as_deref(), &lines_text(&result.segments(&hyp)))?;
    eprintln!("edit distance {}", result.total_cost);
    Ok(())
}

pub fn bleu(a: BleuArgs) -> Result<()> {
    let hyps = read_sentences(&a.hyp)?;
    let refs = read_sentences(&a.refs)?;
    let options = BleuOptions {
        smooth: a.smooth,
        ..BleuOptions::default()
    };
    let score = corpus_bleu(&hyps, &refs, options).map_err(|e| streamwait::Error::Data(e.to_string()))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&score)?);
    } else {
        let p: Vec<String> = score.precisions.iter().map(|p| format!("{:.1}", p * 100.0)).collect();
        println!(
            "BLEU = {:.2} {} (BP = {:.3}, hyp_len = {}, ref_len = {})",
            score.points(),
            p.join("/"),
            score.brevity_penalty,
            score.hyp_len,
            score.ref_len
        );
    }
    Ok(())
}

pub fn latency(a: LatencyArgs) -> Result<()> {
    let trace = ActionTrace::from_jsonl(&read_text(&a.trace)?)?;
    let seg = Segmentation::parse(&read_text(&a.segmentation)?)?;
    let delays = trace.delays();
    let (src_total, tgt_total) = (trace.num_reads(), trace.num_writes());
    let gammas = match a.gamma {
        Some(g) => vec![g; seg.num_sentences()],
        None => oracle_gammas(&seg, src_total, tgt_total)?,
    };
    let config = LatencyConfig {
        mode: Mode::Stream,
        dal_scale: a.dal_scale,
        aggregation: a.aggregation.into(),
    };
    if !(a.dal_scale.is_finite() && a.dal_scale > 0.0) {
        return Err(config_error("--dal-scale must be positive"));
    }
    let report = match a.mode {
        ModeArg::Stream => stream_metrics(&delays, &seg, src_total, &gammas, config)?,
        ModeArg::Sentence => {
            let src_lens = seg.lengths(Side::Source, src_total)?;
            let vectors = relative_delays(&delays, &seg)?
                .into_iter()
                .zip(src_lens)
                .zip(&gammas)
                .map(|((g, x), &gamma)| DelayVector::new(g, gamma, x))
                .collect::<streamwait::Result<Vec<_>>>()?;
            sentence_metrics(&vectors, config)?
        }
    };
    emit(a.out.as_deref(), &report.to_csv())
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct PolicySection {
    k: Option<usize>,
    gamma: Option<Gamma>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct SegmenterSection {
    kind: Option<SegmenterKind>,
    params: Option<PathBuf>,
    window: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ModelSection {
    checkpoint: Option<PathBuf>,
    encoder_kind: Option<EncoderKind>,
    history: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct MetricsSection {
    dal_scale: Option<f64>,
    aggregation: Option<Aggregation>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct DataSection {
    source: Option<PathBuf>,
    refs: Option<PathBuf>,
}

/// The run configuration file. Relative paths are taken from the file's directory.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RunFile {
    seed: Option<u64>,
    policy: PolicySection,
    segmenter: SegmenterSection,
    model: ModelSection,
    metrics: MetricsSection,
    data: DataSection,
}

impl RunFile {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        let mut file: RunFile =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut file.segmenter.params,
            &mut file.model.checkpoint,
            &mut file.data.source,
            &mut file.data.refs,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(file)
    }
}

fn required<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| config_error(format!("{what} is required (flag or config file)")))
}

fn pipeline_config(a: &RunArgs, file: RunFile) -> Result<(PipelineConfig, PathBuf, PathBuf)> {
    let params = a.segmenter_params.clone().or(file.segmenter.params);
    let kind = match (file.segmenter.kind, &params) {
        (_, Some(_)) if a.segmenter_params.is_some() => SegmenterKind::Trained,
        (Some(kind), _) => kind,
        (None, Some(_)) => SegmenterKind::Trained,
        (None, None) => SegmenterKind::Oracle,
    };
    let config = PipelineConfig {
        policy: PolicyConfig {
            k: required(a.k.or(file.policy.k), "k")?,
            gamma: a.gamma.or(file.policy.gamma).unwrap_or(Gamma::ONE),
        },
        segmenter: SegmenterChoice {
            kind,
            params,
            window: a.window.or(file.segmenter.window).unwrap_or(0),
        },
        model: ModelChoice {
            checkpoint: required(a.checkpoint.clone().or(file.model.checkpoint), "checkpoint")?,
            encoder_kind: a.encoder.or(file.model.encoder_kind),
            history: a.history.or(file.model.history).unwrap_or(0),
        },
        metrics: MetricsConfig {
            dal_scale: a.dal_scale.or(file.metrics.dal_scale).unwrap_or(1.0),
            aggregation: a.aggregation.map(Into::into).or(file.metrics.aggregation).unwrap_or_default(),
        },
        seed: a.seed.or(file.seed).unwrap_or(0),
    };
    config.validate()?;
    let source = required(a.source.clone().or(file.data.source), "source")?;
    let refs = required(a.refs.clone().or(file.data.refs), "refs")?;
    Ok((config, source, refs))
}

fn sweep_segmenters(specs: &[String]) -> Result<Vec<(usize, SegmenterModel)>> {
    specs
        .iter()
        .map(|s| {
            let (w, path) = s
                .split_once('=')
                .ok_or_else(|| config_error(format!("--sweep-segmenter expects W=PATH, got {s:?}")))?;
            let w: usize = w
                .trim()
                .parse()
                .map_err(|_| config_error(format!("bad window in --sweep-segmenter {s:?}")))?;
            let model = load_segmenter(Path::new(path))?;
            if model.config.window != w {
                return Err(config_error(format!("{path} was trained with window {}, not {w}", model.config.window)));
            }
            Ok((w, model))
        })
        .collect()
}

pub fn run(a: RunArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => RunFile::load(p)?,
        None => RunFile::default(),
    };
    let (config, source, refs_path) = pipeline_config(&a, file)?;
    let checkpoint = load_checkpoint(&config.model.checkpoint)?;
    let sources = read_sentences(&source)?;
    let refs = read_sentences(&refs_path)?;
    let reports = if a.sweep {
        let segmenters = if config.segmenter.kind == SegmenterKind::Trained {
            let mut found = sweep_segmenters(&a.sweep_segmenters)?;
            if let Some(missing) = SWEEP_WINDOWS.iter().find(|w| found.iter().all(|(fw, _)| fw != *w)) {
                match &config.segmenter.params {
                    Some(p) if load_segmenter(p)?.config.window == *missing => found.push((*missing, load_segmenter(p)?)),
                    _ => return Err(config_error(format!("no trained segmenter for window {missing}"))),
                }
            }
            found
        } else {
            Vec::new()
        };
        sweep(&config, &checkpoint, &segmenters, &SWEEP_KS, &SWEEP_WINDOWS, &sources, &refs)?
    } else {
        let segmenter = match (&config.segmenter.kind, &config.segmenter.params) {
            (SegmenterKind::Trained, Some(p)) => Some(load_segmenter(p)?),
            _ => None,
        };
        let parts = Components {
            checkpoint: &checkpoint,
            segmenter: segmenter.as_ref(),
        };
        vec![run_pipeline(&config, &parts, &sources, &refs)?]
    };
    if let Some(p) = &a.out {
        write_file(p, &emit_report(&reports, ReportFormat::Json)?)?;
    }
    print!("{}", emit_report(&reports, a.format)?);
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let reports: Vec<RunReport> = serde_json::from_str(&read_text(&a.input)?)
        .map_err(|e| streamwait::Error::Data(format!("{}: {e}", a.input.display())))?;
    if reports.is_empty() {
        return Err(anyhow!(streamwait::Error::Data("no reports to emit".into())));
    }
    let text = match (a.format, a.axis) {
        (ReportFormat::PlotData, AxisArg::Dal) => serde_json::to_string_pretty(&plot_data(&reports, LatencyAxis::Dal))? + "\n",
        (format, _) => emit_report(&reports, format)?,
    };
    emit(a.out.as_deref(), &text)
}

pub fn masks(a: MasksArgs) -> Result<()> {
    let spec = MaskSpec::new(a.encoder, a.k).starting_at(a.start);
    let mask = match a.history {
        Some(h) => encoder_mask_streaming(&spec, a.available.unwrap_or(a.len), h)?,
        None => {
            let spec = match a.available {
                Some(g) => spec.with_available(g),
                None => spec,
            };
            encoder_mask(&spec, a.len)?
        }
    };
    print!("{}", mask.to_grid());
    Ok(())
}
