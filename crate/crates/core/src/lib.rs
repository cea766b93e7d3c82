pub mod bases;
pub mod cnn;
pub mod corpus;
pub mod embeddings;
pub mod ensembles;
pub mod error;
pub mod eval;
pub mod features;
pub mod linear;
pub mod stacking;
pub mod synth;

pub use error::{Error, Result};
