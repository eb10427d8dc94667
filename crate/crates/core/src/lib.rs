//! Few-shot intent detection engine.
//!
//! The pipeline embeds utterances (precomputed store or a small trainable
//! encoder), optionally re-trains the encoder with a combined masked-token +
//! contrastive objective, then trains a prototype attention head on N-way
//! K-shot episodes and evaluates with interchangeable similarity measures.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod episodes;
pub mod error;
pub mod metrics;
pub mod pretrain;
pub mod protonet;
pub mod rng;
pub mod similarity;
pub mod synthetic;
pub mod tape;
pub mod train;

pub use corpus::{Corpus, Utterance};
pub use encoder::{EncoderBackend, SequenceEmbedding};
pub use error::{Error, Result};
