//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamwait::model::{ModelConfig, ModelParams};
use streamwait::policy::schedule_actions;
use streamwait::{ActionTrace, EncoderKind, Segmentation, TokenId, Vocabulary, WaitKPolicy};

/// Hypothesis stream and reference sentences over a small alphabet.
pub fn mwer_instance(sentences: usize, seed: u64) -> (Vec<u32>, Vec<Vec<u32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<Vec<u32>> = (0..sentences)
        .map(|_| (0..rng.gen_range(5..20)).map(|_| rng.gen_range(0..50)).collect())
        .collect();
    // the hypothesis is the references with some noise
    let mut hyp = Vec::new();
    for &t in refs.iter().flatten() {
        if rng.gen_bool(0.9) {
            hyp.push(if rng.gen_bool(0.1) { rng.gen_range(0..50) } else { t });
        }
    }
    (hyp, refs)
}

/// Wait-k trace and segmentation of a random stream of `sentences` sentences.
pub fn wait_k_stream(sentences: usize, k: usize, seed: u64) -> (ActionTrace, Segmentation, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src: Vec<usize> = (0..sentences).map(|_| rng.gen_range(5..30)).collect();
    let tgt: Vec<usize> = (0..sentences).map(|_| rng.gen_range(5..30)).collect();
    let seg = Segmentation::from_lengths(&src, &tgt).expect("positive lengths");
    let trace = schedule_actions(&WaitKPolicy::wait(k).expect("k >= 1"), &seg, &src, &tgt).expect("consistent");
    (trace, seg, src.iter().sum())
}

/// Default-size toy model over a 32-word vocabulary.
pub fn toy_model(kind: EncoderKind) -> (ModelConfig, ModelParams) {
    let vocab = Vocabulary::from_surfaces((0..32).map(|i| format!("w{i}"))).expect("plain words");
    let config = ModelConfig::new(vocab, kind);
    let params = ModelParams::init(&config, 0).expect("valid config");
    (config, params)
}

/// `len` word ids of the toy vocabulary.
pub fn token_ids(len: usize, seed: u64) -> Vec<TokenId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = streamwait::text::RESERVED.len() as u32;
    (0..len).map(|_| TokenId(base + rng.gen_range(0..32))).collect()
}
