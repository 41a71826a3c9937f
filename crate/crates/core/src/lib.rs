//! Inference engine for the Poisson hierarchical Indian buffet process.

pub mod checks;
pub mod dataset;
pub mod diagnostics;
pub mod diversity;
pub mod error;
pub mod generative;
pub mod levy;
pub mod mcmc;
pub mod math;
pub mod oracle;
pub mod panel;
pub mod prediction;

pub use error::{PhibpError, Result};
