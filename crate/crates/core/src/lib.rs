//! Domain-aware second-pass rescoring laboratory.
//!
//! The crate covers the whole offline pipeline: a synthetic multi-domain
//! corpus, an interpolated Kneser-Ney first-pass LM, a simulated noisy-channel
//! first pass producing n-best lists, LSTM language models (general and
//! domain fine-tuned), an LSTM domain classifier used for routing, push-forward
//! rescoring over a prefix trie, weight estimation (simulated annealing and
//! EM), and WER / SlotWER / oracle scoring.

// Range checks are written as `!(x > 0.0)` so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod corpus;
pub mod error;
pub mod firstpass;
pub mod io;
pub mod lm;
pub mod metrics;
pub mod neural_lm;
pub mod ngram;
pub mod nn;
pub mod rescorer;
pub mod seed;
pub mod weight_opt;

pub use error::{Error, Result};
