//! Closed-form fast weights: filtered-pseudoinverse compilation of key-value
//! memories, exact and approximate online updates, retrieval baselines and
//! episodic classification evaluation.

pub mod classify;
pub mod datasets;
pub mod error;
pub mod fast_weights;
pub mod linalg;
pub mod oracles;
pub mod retrieval;
pub mod tensor;

pub use error::{Error, Result};
