//! SeqShort: learned-query sequence shortening for weakly supervised bag
//! classification.
//!
//! A bag of `M` instance feature vectors is summarised by a multi-head
//! attention layer with `S` learnable queries into a fixed `S × h` sequence,
//! which a transformer encoder with a `[CLS]` token then classifies. Around
//! the model sit the bag file format and synthetic data generator, the
//! training loop, attention rollout and entropy analyses, and an analytic
//! FLOPs model.

mod binio;
pub mod data;
pub mod encoder;
pub mod error;
pub mod explain;
pub mod numerics;
pub mod profiler;
pub mod seqshort;
pub mod training;

pub use encoder::{
    AttentionTrace, ClassifierModel, ClsPosition, EncoderConfig, ForwardOptions, FreezePolicy,
    HeadKind, ModelConfig, ModelOutput, ParamCounts,
};
pub use error::{Error, Result};
pub use numerics::{Scalar, Tensor};
pub use seqshort::{SeqShortAttention, SeqShortConfig, SeqShortLayer};
