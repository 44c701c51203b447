//! The non-autoregressive evaluator and student model.
//!
//! [`model::NatModel`] maps a source sentence to a lattice of per-frame
//! distributions in one pass; [`ctc`] holds the dynamic programs over that
//! lattice and [`train`] the SGD loop.

pub mod checkpoint;
pub mod ctc;
pub mod model;
pub mod train;

pub use ctc::{
    collapse, ctc_log_likelihood, ctc_loss_and_grad, decode_greedy, min_frames, viterbi_align,
    EmissionMatrix, FramePath, GreedyDecode,
};
pub use model::{ModelConfig, NatModel, Objective};
pub use train::{train, train_pairs, train_with_snapshot, EpochLog, StepStats, TrainOutcome, Trainer};
