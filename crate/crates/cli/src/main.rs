//! `streamwait` command-line interface.
//!
//! Exit codes: 0 on success, 2 for configuration errors (bad flags, config
//! files, incompatible checkpoints), 3 for data errors (malformed or
//! inconsistent input files).

mod commands;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use streamwait::model::tasks::Task;
use streamwait::pipeline::ReportFormat;
use streamwait::{EncoderKind, Gamma};

#[derive(Parser)]
#[command(name = "streamwait", version, about = "Streaming simultaneous translation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic document corpus (source, target and document index).
    GenerateTask(GenerateTaskArgs),
    /// Turn document-ordered sentence pairs into streaming samples with history.
    BuildCorpus(BuildCorpusArgs),
    /// Train the toy encoder-decoder with multi-k wait-k training.
    TrainToy(TrainToyArgs),
    /// Train the sliding-window sentence segmenter.
    TrainSegmenter(TrainSegmenterArgs),
    /// Segment a token stream with a trained segmenter.
    Segment(SegmentArgs),
    /// Translate a source stream with a wait-k policy.
    Decode(DecodeArgs),
    /// Split a hypothesis stream into sentences aligned with references.
    Resegment(ResegmentArgs),
    /// Corpus BLEU of line-aligned hypotheses.
    Bleu(BleuArgs),
    /// AP, AL and DAL of an action trace.
    Latency(LatencyArgs),
    /// Segmenter, decoder and evaluation in one go, optionally as a k × w sweep.
    Run(RunArgs),
    /// Re-emit saved run reports as CSV, JSON or plot data.
    Report(ReportArgs),
    /// Print an encoder attention mask.
    Masks(MasksArgs),
}

#[derive(Args)]
struct GenerateTaskArgs {
    /// copy, substitute or agreement.
    #[arg(long)]
    task: Task,
    #[arg(long, default_value_t = 200)]
    documents: usize,
    #[arg(long, default_value_t = 16)]
    words: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_source: PathBuf,
    #[arg(long)]
    out_target: PathBuf,
    #[arg(long)]
    out_index: PathBuf,
}

#[derive(Args)]
struct BuildCorpusArgs {
    /// One source sentence per line.
    #[arg(long)]
    source: PathBuf,
    /// One target sentence per line, aligned with the source.
    #[arg(long)]
    target: PathBuf,
    /// `start<TAB>end` line ranges per document; the whole file is one document without it.
    #[arg(long)]
    index: Option<PathBuf>,
    /// History threshold h in source tokens.
    #[arg(long, default_value_t = 0)]
    history: usize,
    /// Also add sentence-level samples, upsampling the streaming ones to 1:3.
    #[arg(long)]
    mix: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_source: PathBuf,
    #[arg(long)]
    out_target: PathBuf,
}

#[derive(Args)]
struct TrainToyArgs {
    /// Source samples from build-corpus.
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value = "pbe")]
    encoder: EncoderKind,
    /// History the samples were built with; the default for decoding.
    #[arg(long, default_value_t = 0)]
    history: usize,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 32)]
    k_max: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    ffn: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    /// Only the current sentence contributes to the loss.
    #[arg(long)]
    current_sentence_loss: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainSegmenterArgs {
    /// Consecutive sentences, one per line.
    #[arg(long)]
    sentences: PathBuf,
    /// Future window w.
    #[arg(long, default_value_t = 0)]
    window: usize,
    #[arg(long, default_value_t = 400)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    params: PathBuf,
    /// Token stream; line breaks are ignored.
    #[arg(long)]
    input: PathBuf,
    /// Reference sentences, one per line, to report boundary F1 against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Boundary positions, one per line; stdout without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long)]
    k: usize,
    /// Catch-up factor γ, as `p/q` or a decimal.
    #[arg(long, default_value = "1")]
    gamma: Gamma,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One source sentence per line, or a token stream when --boundaries is given.
    #[arg(long)]
    source: PathBuf,
    /// Sentence-end positions from `segment`.
    #[arg(long)]
    boundaries: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
    /// History budget H; defaults to the checkpoint's.
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    encoder: Option<EncoderKind>,
    /// Translations, one sentence per line; stdout without it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Action trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Sentence starts `a_n<TAB>b_n` of the decoded stream.
    #[arg(long)]
    segmentation: Option<PathBuf>,
}

#[derive(Args)]
struct ResegmentArgs {
    /// Hypothesis stream; line breaks are ignored.
    #[arg(long)]
    hyp: PathBuf,
    /// Reference sentences, one per line.
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BleuArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    /// Add-one smoothing of the higher-order precisions.
    #[arg(long)]
    smooth: bool,
    /// Print the full score as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Stream,
    Sentence,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Mean,
    TokenWeighted,
}

impl From<AggregationArg> for streamwait::latency::Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Mean => Self::Mean,
            AggregationArg::TokenWeighted => Self::TokenWeighted,
        }
    }
}

#[derive(Args)]
struct LatencyArgs {
    /// Action trace as JSON lines.
    #[arg(long)]
    trace: PathBuf,
    /// `a_n<TAB>b_n` sentence starts.
    #[arg(long)]
    segmentation: PathBuf,
    /// One γ for every sentence; per-sentence |y|/|x| without it.
    #[arg(long)]
    gamma: Option<Gamma>,
    #[arg(long, default_value_t = 1.0)]
    dal_scale: f64,
    #[arg(long, value_enum, default_value = "stream")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "mean")]
    aggregation: AggregationArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Source sentences, one per line.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Reference translations, one per line.
    #[arg(long)]
    refs: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    gamma: Option<Gamma>,
    /// Segmenter future window w.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    encoder: Option<EncoderKind>,
    /// Trained segmenter parameters; the oracle segmentation is used without them.
    #[arg(long)]
    segmenter_params: Option<PathBuf>,
    #[arg(long)]
    dal_scale: Option<f64>,
    #[arg(long, value_enum)]
    aggregation: Option<AggregationArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run every k in {1,2,4,8,16} for every w in {0..4}.
    #[arg(long)]
    sweep: bool,
    /// Trained segmenter for one window of a sweep, as `W=PATH`.
    #[arg(long = "sweep-segmenter", value_name = "W=PATH")]
    sweep_segmenters: Vec<String>,
    /// Saved reports (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Al,
    Dal,
}

#[derive(Args)]
struct ReportArgs {
    /// Reports saved by `run --out`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Latency axis of plot data.
    #[arg(long, value_enum, default_value = "al")]
    axis: AxisArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MasksArgs {
    #[arg(long, default_value = "pbe")]
    encoder: EncoderKind,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Number of source positions J.
    #[arg(long)]
    len: usize,
    /// Positions read so far, G; all of them without it.
    #[arg(long)]
    available: Option<usize>,
    /// First position of the current sentence.
    #[arg(long, default_value_t = 1)]
    start: usize,
    /// Streaming history H; replaces --start by the window start.
    #[arg(long)]
    history: Option<usize>,
}

/// A problem with flags or configuration files (exit code 2).
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use streamwait::Error;
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidInput(_) | Error::Config(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateTask(a) => commands::generate_task(a),
        Command::BuildCorpus(a) => commands::build_corpus(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::TrainSegmenter(a) => commands::train_segmenter(a),
        Command::Segment(a) => commands::segment(a),
        Command::Decode(a) => commands::decode(a),
        Command::Resegment(a) => commands::resegment(a),
        Command::Bleu(a) => commands::bleu(a),
        Command::Latency(a) => commands::latency(a),
        Command::Run(a) => commands::run(a),
        Command::Report(a) => commands::report(a),
        Command::Masks(a) => commands::masks(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
