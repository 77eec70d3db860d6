//! Cross-lingual transfer of slot-annotated corpora.
//!
//! The crate moves a spoken-language-understanding corpus from a source
//! language to a target language through a small neural translator, keeping
//! slot annotations intact along the way. Four transfer strategies are
//! provided (naive projection through word alignments, token-added markup,
//! class-symbol patterns, and reward-tuned translation on top of class
//! symbols), together with the downstream pieces needed to judge them:
//! a domain classifier, a linear-chain CRF slot tagger, slot-value culture
//! adaptation, a synthetic corpus generator, and a staged pipeline driver.
//!
//! Everything is deterministic given a single seed. Compute is
//! single-threaded; shared state is immutable after construction.

pub mod align;
pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod culture;
pub mod metrics;
pub mod nmt;
pub mod pipeline;
pub mod scrt;
pub mod seed;
pub mod slu;
pub mod strategies;
pub mod synthgen;
