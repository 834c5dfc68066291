//! Budget-forced decoding with a single trainable continuation token.
//!
//! The crate trains and evaluates a "continue thinking" token for a small
//! decoder-only language model: generation intercepts the end-of-thinking
//! marker and swaps in a continuation cue, and a group-relative policy
//! gradient optimizes the cue's embedding row while every other parameter
//! stays frozen.
//!
//! Module map:
//! - [`vocab`]: closed-alphabet tokenizer with atomic marker tokens.
//! - [`model`]: decoder-only transformer with manual forward/backward,
//!   temperature sampling, and a gradient restricted to one embedding row.
//! - [`bfdecode`]: the budget-forcing generation state machine.
//! - [`grpo`]: group-relative policy optimization of the continuation row.
//! - [`tasks`]: synthetic modular-arithmetic tasks and pretraining corpus.
//! - [`eval`]: pass@1 evaluation, hybrid answer verification, and analyses.
//!
//! The crate is `no_std` + `alloc` compatible; file IO and the CLI live in
//! the companion `bftok` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod bfdecode;
pub mod eval;
pub mod exec;
pub mod grpo;
pub mod model;
pub mod rng;
pub mod tasks;
pub mod vocab;

#[cfg(test)]
pub(crate) mod testutil;

use alloc::string::String;

/// Errors shared across the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Text to encode contains a character or marker not in the vocabulary.
    /// The payload is the byte offset of the offending symbol.
    UnknownSymbol { position: usize },
    /// A token id at or beyond the vocabulary size.
    IdOutOfRange { id: u32, vocab_size: usize },
    /// Attempt to register a token string that already exists.
    DuplicateToken(String),
    /// A sequence longer than the model's context window.
    ContextOverflow { len: usize, limit: usize },
    /// Sampling was asked to draw with every token banned.
    AllTokensBanned,
    /// A generation prompt that does not end inside the thinking phase.
    MalformedPrompt,
    /// Training loss became NaN or infinite.
    NonFiniteLoss,
    /// An importance ratio became NaN or infinite.
    NonFiniteRatio,
    /// Checkpoint bytes with the wrong magic or an unknown version.
    FormatVersionMismatch,
    /// Checkpoint bytes that fail checksum or length validation.
    CorruptChecksum,
    /// A configuration value outside what this implementation supports.
    Unsupported(&'static str),
    /// A configuration value that violates a structural invariant.
    InvalidConfig(&'static str),
    /// The external judge could not be reached or gave no verdict.
    JudgeUnavailable,
    /// Paired analysis over two summaries with different question sets.
    QuestionSetMismatch,
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::UnknownSymbol { position } => {
                write!(f, "unknown symbol at byte offset {position}")
            }
            Error::IdOutOfRange { id, vocab_size } => {
                write!(f, "token id {id} out of range for vocabulary of {vocab_size}")
            }
            Error::DuplicateToken(name) => write!(f, "token {name:?} already registered"),
            Error::ContextOverflow { len, limit } => {
                write!(f, "sequence of {len} tokens exceeds context limit {limit}")
            }
            Error::AllTokensBanned => write!(f, "every candidate token is banned"),
            Error::MalformedPrompt => write!(f, "prompt does not end inside a thinking phase"),
            Error::NonFiniteLoss => write!(f, "loss is not finite"),
            Error::NonFiniteRatio => write!(f, "importance ratio is not finite"),
            Error::FormatVersionMismatch => write!(f, "unrecognized checkpoint magic or version"),
            Error::CorruptChecksum => write!(f, "checkpoint failed checksum validation"),
            Error::Unsupported(what) => write!(f, "unsupported: {what}"),
            Error::InvalidConfig(what) => write!(f, "invalid configuration: {what}"),
            Error::JudgeUnavailable => write!(f, "external judge unavailable"),
            Error::QuestionSetMismatch => write!(f, "summaries cover different question sets"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

/// Scalar type for model arithmetic. `f32` is the working precision;
/// `f64` exists for gradient checking.
pub trait Real:
    num_traits::Float
    + core::fmt::Debug
    + core::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}
