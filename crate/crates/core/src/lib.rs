//! Query-by-example retrieval over document image collections, where the
//! query image can be synthesized from an attribute-based text prompt.
//!
//! The crate is organised along the retrieval pipeline:
//!
//! * [`query_gen`]: attribute vocabularies, prompt assembly and generation
//!   providers (HTTP and a deterministic mock).
//! * [`embedding`]: image preprocessing and feature extraction backends.
//! * [`similarity`]: L1 / L2 / cosine dissimilarities and exact ranking.
//! * [`index`]: the offline corpus feature index and its file format.
//! * [`evaluation`]: precision@k, R-precision and the backend × measure grid.
//! * [`pipeline`]: the end-to-end retrieval orchestration.
//!
//! With the `parallel` feature (on by default) the corpus scan, batch
//! embedding and grid evaluation run on the rayon thread pool; without it
//! every path runs sequentially and produces identical results.

pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod index;
pub mod par;
pub mod pipeline;
pub mod query_gen;
pub mod similarity;

pub use error::ErrorCode;
