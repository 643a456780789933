//! Pseudo-prior item augmentation for sequential recommenders.

pub mod arv;
pub mod backbone;
pub mod catalog;
pub mod embed;
pub mod dct;
pub mod error;
pub mod eval;
pub mod llmio;
pub mod pipeline;
pub mod seed;
pub mod sia;
pub mod synthetic;

pub use error::{Error, Result};
