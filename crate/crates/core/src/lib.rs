//! Keyword-based autocomplete.
//!
//! An encoder decides which tokens of a sentence to keep as keywords; a decoder
//! reconstructs the sentence from them. Training trades keyword count against
//! reconstruction loss, either with a fixed weight or against a loss budget.

pub mod baselines;
pub mod corpus;
pub mod decoder;
pub mod desk;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod lstm;
pub mod params;
pub mod service;
pub mod training;

pub use corpus::{CorpusConfig, CorpusSplit, Sentence, TokenizerConfig, Vocabulary};
pub use decoder::{DecoderConfig, DecoderParams, Prediction, TokenSource};
pub use encoder::{EncoderConfig, EncoderParams, EncodingMode, KeepMask, KeepProbabilities, KeywordSequence, KeywordSource};
pub use error::{Error, Result};
