//! Dataset → decomposition → training → sampling, on the toy corpus.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use lgtm_core::diffusion::SampleRequest;
use lgtm_core::exec::Execution;
use lgtm_core::harness::{
    end_to_end_sample, ingest, smoothed, train, write_toy_corpus, DatasetIndex, Generator, TextEncoderKind,
    TrainConfig, FINAL_CHECKPOINT, LOSS_LOG, OVERRIDES_FILE, ROUTINGS_FILE, STATS_FILE,
};
use lgtm_core::motion::{validate, write_motion_file, MotionSequence, MotionSidecar, PARTS};
use lgtm_core::text::{
    DecomposeOptions, Decomposer, DecompositionCache, FnClient, PartTexts, PromptSpec, TextSource,
};
use lgtm_core::Error;

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        text_encoder: TextEncoderKind::Stub,
        max_clips: Some(4),
        batch_size: 4,
        crop_frames: 24,
        learning_rate: 2e-3,
        weight_decay: 0.0,
        max_steps: 20,
        ..Default::default()
    };
    cfg.model.text_dim = 16;
    cfg.model.num_steps = 100;
    cfg.model.part.latent_dim = 8;
    cfg.model.part.layers = 1;
    cfg.model.part.heads = 2;
    cfg.model.part.ff_dim = 16;
    cfg.model.part.dropout = 0.0;
    cfg.model.optimizer.blocks = 1;
    cfg.model.optimizer.heads = 2;
    cfg.model.optimizer.ff_dim = 32;
    cfg.model.optimizer.dropout = 0.0;
    cfg.model.optimizer.smooth_hidden = 8;
    cfg
}

fn decomposed_corpus(root: &Path) -> DatasetIndex {
    write_toy_corpus(root, 0).unwrap();
    let mut index = ingest(root, Execution::Parallel).unwrap();
    index
        .precompute_decompositions(&Decomposer::offline(), false, Execution::Parallel)
        .unwrap();
    index
}

const REPLY: &str = r#"```json
{"head": "does nothing", "left arm": "does nothing", "right arm": "waves",
 "torso": "does nothing", "left leg": "steps", "right leg": "steps"}
```"#;

fn counting_decomposer(cache: &Path, calls: Arc<AtomicUsize>) -> Decomposer {
    let client = FnClient(move |_: &str| {
        calls.fetch_add(1, Ordering::SeqCst);
        Ok(REPLY.to_string())
    });
    Decomposer::new(
        PromptSpec::bundled(),
        Some(Box::new(client)),
        Some(DecompositionCache::open(cache).unwrap()),
        DecomposeOptions::default(),
    )
}

#[test]
fn ingest_indexes_the_toy_corpus() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_corpus(dir.path(), 0).unwrap();
    let index = ingest(dir.path(), Execution::Sequential).unwrap();
    assert_eq!(index.clips.len(), 16);
    assert_eq!(index.caption_count(), 32);
    assert!(dir.path().join(STATS_FILE).exists());
    assert!(index.stats.std.iter().all(|&s| s > 0.0));
    let reloaded = DatasetIndex::load(dir.path()).unwrap();
    assert_eq!(reloaded.clips, index.clips);
}

#[test]
fn ingest_paths_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_toy_corpus(a.path(), 3).unwrap();
    write_toy_corpus(b.path(), 3).unwrap();
    let seq = ingest(a.path(), Execution::Sequential).unwrap();
    let par = ingest(b.path(), Execution::Parallel).unwrap();
    assert_eq!(seq.stats, par.stats);
}

#[test]
fn ingest_names_the_malformed_file() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_corpus(dir.path(), 0).unwrap();
    let bad = MotionSequence::from_vec(3, 262, vec![0.0; 3 * 262]).unwrap();
    write_motion_file(&dir.path().join("motions"), &bad, &MotionSidecar::new("99_narrow", &bad)).unwrap();
    fs::write(dir.path().join("texts/99_narrow.txt"), "a person stands#a person stands#0.0#0.0\n").unwrap();
    let err = ingest(dir.path(), Execution::Parallel).unwrap_err().to_string();
    assert!(err.contains("99_narrow"), "{err}");
    assert!(err.contains("262"), "{err}");
}

#[test]
fn ingest_rejects_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("motions")).unwrap();
    assert!(matches!(ingest(dir.path(), Execution::Parallel), Err(Error::Dataset { .. })));
}

#[test]
fn offline_decomposition_is_tagged_fallback() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_corpus(dir.path(), 0).unwrap();
    let mut index = ingest(dir.path(), Execution::Parallel).unwrap();
    let summary = index
        .precompute_decompositions(&Decomposer::offline(), false, Execution::Parallel)
        .unwrap();
    assert_eq!(summary.fallback, 32);
    let all_fallback = index
        .clips
        .iter()
        .flat_map(|c| &c.captions)
        .all(|c| c.parts.as_ref().is_some_and(|p| p.source == TextSource::Fallback));
    assert!(all_fallback);
    assert!(index.prompt_version.is_some());
}

#[test]
fn second_decomposition_is_served_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    write_toy_corpus(dir.path(), 0).unwrap();
    let calls = Arc::new(AtomicUsize::new(0));

    let mut index = ingest(dir.path(), Execution::Parallel).unwrap();
    let first = index
        .precompute_decompositions(&counting_decomposer(&cache, calls.clone()), false, Execution::Parallel)
        .unwrap();
    assert_eq!(first.llm, 32);
    let after_first = calls.load(Ordering::SeqCst);
    assert_eq!(after_first, 32);

    // A fresh index has no decompositions; all of them come from the cache.
    let mut index = ingest(dir.path(), Execution::Parallel).unwrap();
    let second = index
        .precompute_decompositions(&counting_decomposer(&cache, calls.clone()), false, Execution::Parallel)
        .unwrap();
    assert_eq!(second.cache, 32);
    assert_eq!(calls.load(Ordering::SeqCst), after_first);

    // And a third pass over the saved index has nothing left to do.
    let third = index
        .precompute_decompositions(&counting_decomposer(&cache, calls.clone()), false, Execution::Parallel)
        .unwrap();
    assert_eq!(third.skipped, 32);
    assert_eq!(calls.load(Ordering::SeqCst), after_first);
}

#[test]
fn manual_overrides_win() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_corpus(dir.path(), 0).unwrap();
    fs::copy(dir.path().join(ROUTINGS_FILE), dir.path().join(OVERRIDES_FILE)).unwrap();
    let mut index = ingest(dir.path(), Execution::Parallel).unwrap();
    let summary = index
        .precompute_decompositions(&Decomposer::offline(), true, Execution::Parallel)
        .unwrap();
    assert_eq!(summary.manual, 32);
    assert_eq!(summary.fallback, 0);
    let wave = index
        .clips
        .iter()
        .flat_map(|c| &c.captions)
        .find(|c| c.text.contains("waves"))
        .and_then(|c| c.parts.clone())
        .unwrap();
    assert_eq!(wave.source, TextSource::Manual);
}

#[test]
fn training_requires_decompositions() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_corpus(dir.path(), 0).unwrap();
    let index = ingest(dir.path(), Execution::Parallel).unwrap();
    assert!(train(&tiny_config(), &index, None).is_err());
}

#[test]
fn overfitting_four_clips_lowers_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let index = decomposed_corpus(dir.path());
    let mut cfg = tiny_config();
    cfg.max_steps = 200;
    let out = train(&cfg, &index, None).unwrap();
    let losses: Vec<f64> = out.losses.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 200);
    let curve = smoothed(&losses, 20);
    assert!(curve[199] < curve[0], "{} -> {}", curve[0], curve[199]);
}

#[test]
fn single_threaded_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let index = decomposed_corpus(dir.path());
    let mut cfg = tiny_config();
    cfg.parallel_data = false;
    let a: Vec<f64> = train(&cfg, &index, None).unwrap().losses.iter().map(|r| r.loss).collect();
    let b: Vec<f64> = train(&cfg, &index, None).unwrap().losses.iter().map(|r| r.loss).collect();
    assert_eq!(a, b);
}

#[test]
fn batch_assembly_paths_agree() {
    let dir = tempfile::tempdir().unwrap();
    let index = decomposed_corpus(dir.path());
    let mut cfg = tiny_config();
    cfg.max_steps = 5;
    let par: Vec<f64> = train(&cfg, &index, None).unwrap().losses.iter().map(|r| r.loss).collect();
    cfg.parallel_data = false;
    let seq: Vec<f64> = train(&cfg, &index, None).unwrap().losses.iter().map(|r| r.loss).collect();
    assert_eq!(par, seq);
}

#[test]
fn training_without_the_optimizer_completes() {
    let dir = tempfile::tempdir().unwrap();
    let index = decomposed_corpus(dir.path());
    let mut cfg = tiny_config();
    cfg.model.optimizer.enable_optimizer = false;
    let out = train(&cfg, &index, None).unwrap();
    assert_eq!(out.losses.len(), 20);
    assert!(out.losses.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn training_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let index = decomposed_corpus(&dir.path().join("data"));
    let mut cfg = tiny_config();
    cfg.checkpoint_every = 10;
    let run = dir.path().join("run");
    let out = train(&cfg, &index, Some(&run)).unwrap();
    assert_eq!(out.checkpoints.len(), 3);
    let log = fs::read_to_string(run.join(LOSS_LOG)).unwrap();
    assert_eq!(log.lines().count(), 20);
    let restored = Generator::load(&run.join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(restored.step, 20);
    assert_eq!(restored.prompt_version(), index.prompt_version.as_deref());
}

fn trained_generator(root: &Path) -> Generator {
    let index = decomposed_corpus(root);
    train(&tiny_config(), &index, None).unwrap().generator
}

#[test]
fn sampling_writes_a_valid_clip() {
    let dir = tempfile::tempdir().unwrap();
    let g = trained_generator(&dir.path().join("data"));
    let req = SampleRequest::new("a person walks forward", 48, 10, 3);
    let out = end_to_end_sample(&g, &Decomposer::offline(), &req, &dir.path().join("out"), true).unwrap();
    assert_eq!(out.motion.frames(), 48);
    assert!(validate(&out.motion).into_result().is_ok());
    assert!(out.path.exists());
    assert!(out.plot.unwrap().exists());
    let walking: &PartTexts = &out.parts;
    assert!(PARTS.iter().any(|&p| !walking.is_idle(p)));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let g = trained_generator(&dir.path().join("data"));
    let req = SampleRequest::new("a person waves", 32, 10, 11);
    let a = end_to_end_sample(&g, &Decomposer::offline(), &req, &dir.path().join("a"), false).unwrap();
    let b = end_to_end_sample(&g, &Decomposer::offline(), &req, &dir.path().join("b"), false).unwrap();
    assert_eq!(fs::read(a.path).unwrap(), fs::read(b.path).unwrap());
    let other = SampleRequest::new("a person waves", 32, 10, 12);
    let c = end_to_end_sample(&g, &Decomposer::offline(), &other, &dir.path().join("c"), false).unwrap();
    assert_ne!(a.motion, c.motion);
}

#[test]
fn prompt_version_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let g = trained_generator(&dir.path().join("data"));
    let mut spec = PromptSpec::bundled();
    spec.version = format!("{}-edited", spec.version);
    let decomposer = Decomposer::new(
        spec,
        None,
        None,
        DecomposeOptions {
            offline: true,
            ..Default::default()
        },
    );
    let req = SampleRequest::new("a person walks forward", 16, 2, 0);
    let err = end_to_end_sample(&g, &decomposer, &req, dir.path(), false);
    assert!(matches!(err, Err(Error::Checkpoint(_))));
}
