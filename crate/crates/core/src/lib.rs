//! Word-in-context contrastive training with lexical adversarial negatives.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`corpus`]: sense-keyed usages, pair construction, lexicographic splits and a
//!   synthetic corpus generator.
//! - [`augment`]: word splitting and generation of adversarial negatives that keep
//!   the sentence and move the target mark.
//! - [`schedule`]: per-epoch probability of replacing a pair by its adversarial negative.
//! - [`model`]: a mean-pooling bi-encoder with an additive target marker.
//! - [`loss`]: the CoSENT ranking loss and its gradient.
//! - [`train`]: AdamW with linear warm-up and dev-based model selection.
//! - [`eval`]: thresholded accuracy/F1, collapse and anisotropy diagnostics, PCA.

pub mod augment;
pub mod corpus;
pub mod eval;
pub mod loss;
pub mod model;
pub mod rng;
pub mod schedule;
pub mod train;

pub use augment::{candidate_indices, lexical_negative, split_into_words, AugmentError, ScriptClass, SegmentedText};
pub use corpus::{
    build_pairs, ingest_usages, lexicographic_split, lexicographic_split_by_lemma, synth_corpus, ContrastivePair,
    CorpusError, DatasetSplits, Origin, SynthConfig, Usage,
};
pub use eval::{EvalError, MetricsReport};
pub use loss::{cosent_grad, cosent_loss, ScoredBatch, DEFAULT_LAMBDA};
pub use model::{cosine, encode, grad_pair, EncodeTrace, EncoderParams, ModelError, ParamGrads};
pub use schedule::{adversarial_probability, apply_schedule, ScheduleConfig, ScheduleMode};
pub use train::{adamw_step, fit, lr_at, OptimizerState, TrainConfig, TrainError, TrainingLog};
