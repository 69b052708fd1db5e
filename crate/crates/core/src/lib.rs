//! Cost-aware routing of queries to a pool of candidate LLMs.
//!
//! The router encodes a query embedding as the relay node of a radial
//! transformer whose satellite nodes stand for the candidate models, scores
//! every satellite with a small MLP and picks the most probable model.

pub mod error;
pub mod numcore;

pub use error::{Error, Result};
pub mod params;
pub mod radialformer;
pub mod data;
pub mod losses;
pub mod router;
pub mod clustering;
pub mod eval;
pub mod training;
pub mod parallel;
