//! End-to-end driver: dataset ingestion, decomposition, training,
//! sampling and evaluation.

mod config;
mod dataset;
mod evaluate;
mod generator;
mod sample;
mod toycorpus;
mod train;

pub use config::{apply_override, TextEncoderKind, TrainConfig};
pub use dataset::{
    describe, ingest, read_overrides, CaptionRecord, CaptionedClip, ClipRecord, DatasetIndex,
    DecompositionSummary, Split, INDEX_FILE, OVERRIDES_FILE, STATS_FILE,
};
pub use evaluate::{eval_pairs, generated_pairs, read_motion_dir, sample_pairs, train_evaluator};
pub use generator::{CheckpointMeta, ConditionerSpec, Generator, TextConditioner, CHECKPOINT_HEADER};
pub use sample::{end_to_end_sample, plot_svg, sample_id, SampleOutput};
pub use toycorpus::{encode_poses, toy_clips, write_toy_corpus, Pose, ToyClip, ROUTINGS_FILE, TOY_CLIPS};
pub use train::{
    build_conditioner, checkpoint_name, smoothed, train, train_items, LossRecord, TrainItem, TrainOutcome,
    DIAGNOSTIC_CHECKPOINT, FINAL_CHECKPOINT, LOSS_LOG,
};
