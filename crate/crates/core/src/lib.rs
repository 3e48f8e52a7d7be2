//! Sense-aware skip-gram embeddings.
//!
//! This crate trains one embedding per *word sense* rather than per word
//! form. A lexicon supplies the number of senses `K` for each word; during
//! training every occurrence of a word picks its most probable sense from
//! the surrounding context (a softmax over context-sum/sense-vector dot
//! products) and only that sense is updated with skip-gram negative
//! sampling. Monosemic words degenerate to plain skip-gram.
//!
//! The pieces, bottom to top:
//!
//! - [`corpus`]: vocabulary construction and (target, context-window)
//!   streaming from tokenized text.
//! - [`lexicon`]: per-word sense counts and the contiguous sense id space.
//! - [`model`]: the two embedding matrices (context words, senses), their
//!   initialization and persistence (word2vec text/binary formats plus a
//!   checkpoint directory layout).
//! - [`sense`]: sense posteriors and hard assignment.
//! - [`trainer`]: the training loop, sense selection plus negative-sampling
//!   updates, optionally hogwild-parallel across workers.
//! - [`query`]: cosine nearest neighbors and classical MDS projection of
//!   sense vectors.
//! - [`eval`]: a synthetic topic corpus generator with planted pseudowords
//!   and quantitative sense-discrimination scoring.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod model;
pub mod query;
pub mod rng;
pub mod sense;
pub mod trainer;

pub use corpus::{Token, Vocab, WindowExample};
pub use error::{Error, Result};
pub use lexicon::SenseInventory;
pub use model::{EmbeddingMatrices, ModelHeader, VectorFormat};
pub use rng::SplitMix64;
pub use sense::PosteriorResult;
pub use trainer::{TrainConfig, TrainStats};
