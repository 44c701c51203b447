//! Selective knowledge distillation for non-autoregressive translation.
//!
//! The crate covers the whole desk-scale loop:
//!
//! * [`corpus`]: tokenized parallel corpora holding a source, a raw target and a
//!   distilled target per example.
//! * [`synth`]: seeded synthetic tasks with known translation modes and injected
//!   teacher mistakes.
//! * [`nat`]: a tiny non-autoregressive model trained with CTC, plus the CTC
//!   forward/backward recursions, greedy decoding and Viterbi alignment.
//! * [`scoring`]: evaluator scores `1 - d(Y, Ŷ) / |Y|` in a plain Hamming and a
//!   CTC-aligned variant.
//! * [`curriculum`]: the hard-to-easy threshold schedule, per-update target
//!   selection and the student training loop.
//! * [`align`]: EM word alignment with a diagonal prior.
//! * [`metrics`]: translation uncertainty, alignment shift, repetition ratio and
//!   corpus BLEU.

pub mod align;
pub mod corpus;
pub mod curriculum;
pub mod error;
pub mod metrics;
pub mod nat;
pub mod rng;
pub mod scoring;
pub mod synth;
mod util;

pub use error::{Error, Result};
