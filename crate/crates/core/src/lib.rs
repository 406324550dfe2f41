//! Quantum divergences, smoothing bounds and channel discrimination on
//! finite-dimensional systems. All logarithms are base 2.

pub mod error;
pub mod channel_div;
pub mod channels;
pub mod divergences;
pub mod operator;
pub mod strategies;
pub mod suite;
pub mod tails;
pub mod util;

pub use error::{Error, Result};
