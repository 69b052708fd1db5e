//! Catalogs, query records, embedding files and benchmark generation.

mod catalog;
mod dataset;
pub mod embeddings;
pub mod reference;
pub mod routerbench;
mod split;
pub mod synth;

pub use catalog::{LlmCatalog, LlmEntry};
pub use dataset::{Dataset, QueryRecord};
pub use embeddings::{read_manifest, write_manifest, Dtype, EmbeddingHeader, EmbeddingTable};
pub use split::{stratified_split, Split, DEFAULT_FRACTIONS};
pub use synth::{SynthConfig, SynthData};
