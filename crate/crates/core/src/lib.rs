//! Soft prompt-tuning toolkit.

pub mod adapt;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod lm;
pub mod rescore;
pub mod rng;
pub mod table;
pub mod text;

pub use error::{Error, Result};
