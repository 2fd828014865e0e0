use std::sync::OnceLock;

use streamwait::corpus::build_streaming_samples;
use streamwait::model::tasks::{self, Task, TaskConfig};
use streamwait::model::{train_multi_k, Checkpoint, ModelConfig, TrainConfig};
use streamwait::pipeline::{
    emit_report, plot_data, recompute, reports_csv, run_pipeline, sweep, Components, LatencyAxis, ModelChoice,
    PipelineConfig, PolicyConfig, ReportFormat, RunReport, SegmenterChoice, SegmenterKind, SWEEP_KS,
    SWEEP_WINDOWS,
};
use streamwait::segmenter::{train_segmenter, SegmenterConfig, SegmenterTrainConfig};
use streamwait::{EncoderKind, Gamma};

fn checkpoint() -> &'static Checkpoint {
    static CK: OnceLock<Checkpoint> = OnceLock::new();
    CK.get_or_init(|| {
        let tc = TaskConfig::new(Task::Copy);
        let vocab = tasks::vocabulary(&tc).unwrap();
        let corpus = tasks::generate(&tc, 3).unwrap();
        let config = ModelConfig {
            history: 10,
            ..ModelConfig::new(vocab, EncoderKind::Unidirectional)
        };
        let train = TrainConfig {
            steps: 2000,
            ..TrainConfig::default()
        };
        let run = train_multi_k(&build_streaming_samples(&corpus, 10), &config, &train, 3).unwrap();
        Checkpoint::new(config, run.params)
    })
}

/// Held-out documents as (sources, references).
fn test_doc() -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let tc = TaskConfig {
        documents: 1,
        min_sentences: 4,
        max_sentences: 4,
        ..TaskConfig::new(Task::Copy)
    };
    let doc = &tasks::generate(&tc, 99).unwrap().documents[0];
    (doc.iter().map(|p| p.source.clone()).collect(), doc.iter().map(|p| p.target.clone()).collect())
}

fn config(k: usize, window: usize) -> PipelineConfig {
    PipelineConfig {
        policy: PolicyConfig { k, gamma: Gamma::ONE },
        segmenter: SegmenterChoice {
            kind: SegmenterKind::Oracle,
            params: None,
            window,
        },
        model: ModelChoice {
            checkpoint: "copy.json".into(),
            encoder_kind: None,
            history: 10,
        },
        metrics: Default::default(),
        seed: 0,
    }
}

fn run(k: usize, window: usize) -> RunReport {
    let (src, refs) = test_doc();
    let parts = Components {
        checkpoint: checkpoint(),
        segmenter: None,
    };
    run_pipeline(&config(k, window), &parts, &src, &refs).unwrap()
}

#[test]
fn offline_composition_reads_whole_sentences() {
    let report = run(8, 0);
    assert!(report.bleu.points() > 90.0, "copy model BLEU {}", report.bleu.points());
    let (src, _) = test_doc();
    assert_eq!(report.segment_lengths, src.iter().map(Vec::len).collect::<Vec<_>>());
    for s in &report.latency.per_sentence {
        assert_eq!(s.ap, 1.0);
    }
}

#[test]
fn window_delays_every_write_at_stream_start() {
    let base = run(2, 0);
    let joint = run(2, 2);
    let total: usize = test_doc().0.iter().map(Vec::len).sum();
    assert_eq!(base.hypothesis, joint.hypothesis);
    let (b, j) = (base.trace.delays(), joint.trace.delays());
    assert_eq!(b.len(), j.len());
    for (x, y) in b.iter().zip(&j) {
        assert_eq!(*y, (x + 2).min(total));
    }
    assert_eq!(j[0], b[0] + 2);
}

#[test]
fn reports_are_deterministic_and_recomputable() {
    let (a, b) = (run(3, 1), run(3, 1));
    assert_eq!(reports_csv(std::slice::from_ref(&a)), reports_csv(std::slice::from_ref(&b)));

    let json = emit_report(std::slice::from_ref(&a), ReportFormat::Json).unwrap();
    let back: Vec<RunReport> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, vec![a.clone()]);

    let (src, refs) = test_doc();
    let lens: Vec<usize> = src.iter().map(Vec::len).collect();
    let (bleu, latency) = recompute(&a, &lens, &refs).unwrap();
    assert_eq!(bleu, a.bleu);
    assert_eq!(latency, a.latency);
}

#[test]
fn sweep_emits_the_full_grid() {
    let (src, refs) = test_doc();
    let reports = sweep(&config(1, 0), checkpoint(), &[], &SWEEP_KS, &SWEEP_WINDOWS, &src, &refs).unwrap();
    assert_eq!(reports.len(), 25);
    let plot = plot_data(&reports, LatencyAxis::Dal);
    assert_eq!(plot.series.len(), SWEEP_WINDOWS.len());
    assert!(plot.series.iter().all(|s| s.points.len() == SWEEP_KS.len()));
    assert_eq!(reports_csv(&reports).lines().count(), 26);
    // wider windows never lower latency
    for k in 0..SWEEP_KS.len() {
        let al: Vec<f64> = (0..SWEEP_WINDOWS.len()).map(|w| reports[w * SWEEP_KS.len() + k].latency.aggregate.al).collect();
        assert!(al.windows(2).all(|p| p[1] >= p[0]), "{al:?}");
    }
}

#[test]
fn trained_segmenter_feeds_the_decoder() {
    let tc = TaskConfig::new(Task::Copy);
    let corpus = tasks::generate(&tc, 5).unwrap();
    let sentences: Vec<Vec<String>> = corpus.documents.iter().flatten().map(|p| p.source.clone()).collect();
    let seg_cfg = SegmenterConfig::new(tasks::vocabulary(&tc).unwrap(), 1);
    let train = SegmenterTrainConfig {
        steps: 50,
        ..SegmenterTrainConfig::default()
    };
    let model = train_segmenter(&sentences, seg_cfg, &train, 1).unwrap();
    let (src, refs) = test_doc();
    let mut cfg = config(2, 1);
    cfg.segmenter.kind = SegmenterKind::Trained;
    cfg.segmenter.params = Some("seg.json".into());
    let parts = Components {
        checkpoint: checkpoint(),
        segmenter: Some(&model),
    };
    let report = run_pipeline(&cfg, &parts, &src, &refs).unwrap();
    assert_eq!(report.trace.num_reads(), src.iter().map(Vec::len).sum::<usize>());
    assert_eq!(report.trace.num_writes(), report.hypothesis.len());

    cfg.segmenter.window = 3;
    assert!(run_pipeline(&cfg, &parts, &src, &refs).is_err());
}

#[test]
fn empty_stream_is_rejected() {
    let parts = Components {
        checkpoint: checkpoint(),
        segmenter: None,
    };
    assert!(run_pipeline(&config(1, 0), &parts, &[vec![]], &[vec!["s1".into()]]).is_err());
}
