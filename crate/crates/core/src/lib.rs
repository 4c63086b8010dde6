//! Knowledge graph completion with flow-modulated scoring.
//!
//! Relation states are propagated over a sampled edge neighbourhood of a
//! query pair (`context`), summarised into head and tail messages, turned
//! into a static score, and modulated by a learned conditional vector field
//! (`flow`). `model` assembles and trains the pieces; `eval` ranks
//! candidates under the filtered protocol.

pub mod context;
pub mod diff;
pub mod eval;
pub mod exec;
pub mod fixtures;
pub mod flow;
pub mod kg;
pub mod model;
pub mod rng;

pub use exec::Execution;
