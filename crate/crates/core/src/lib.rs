//! Streaming simultaneous machine translation toolkit.
//!
//! Wait-k policies over segmented streams, stream-adapted latency metrics,
//! MWER re-segmentation, BLEU, encoder/decoder attention masks (including the
//! partial bidirectional encoder), a small trainable encoder-decoder, a
//! sliding-window sentence segmenter, streaming-history corpus construction and
//! the pipeline that composes them.

pub mod bleu;
pub mod corpus;
pub mod error;
pub mod latency;
pub mod masks;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod reseg;
pub mod segmenter;
pub mod text;

pub use error::{Error, Result};
pub use masks::{AttentionMask, EncoderKind};
pub use policy::{Action, ActionTrace, TraceEvent, WaitKPolicy};
pub use text::{Gamma, Segmentation, TokenId, TokenStream, Vocabulary};
