//! Passive identification of TCP congestion-control algorithms.
//!
//! The pipeline: simulate flows ([`ccsim`]), derive receiver-side features
//! ([`features`]), resample and window them ([`preprocess`]), train an LSTM or
//! DNN classifier ([`models`]) and score it ([`eval`]). [`pipeline`] wires the
//! stages together for the command-line tool and the acceptance suite.

pub mod ccsim;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod tensor;

pub use error::{Error, Result};
