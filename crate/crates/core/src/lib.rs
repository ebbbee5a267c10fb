//! Expectation-maximization for the two-component clustered mixture of linear
//! regressions (C-MLR).
//!
//! Data arrive in `m` batches of `n` pairs `(x, y)`; every pair in a batch
//! shares one hidden sign `xi`:
//!
//! ```text
//! y_i^j = xi^j * <x_i^j, theta*> + eps_i^j,   x ~ N(0, I_d),  eps ~ N(0, sigma^2)
//! ```
//!
//! The crate provides
//!
//! * [`datagen`]: synthetic datasets, boundary-sphere initializations and the
//!   sign-decoupled i.i.d. baseline;
//! * [`em`]: the clustered and i.i.d. EM updates plus the iteration driver;
//! * [`population`]: Monte-Carlo estimates of the population EM operator, the
//!   Q-function gradient, contraction factors and first-order stability gaps;
//! * [`concentration`]: empirical checks of the tail bounds that drive the
//!   convergence analysis;
//! * [`experiment`]: configuration, replicated experiments and report output.
//!
//! Randomness is always derived from an [`RngSpec`], so every result is a
//! deterministic function of a master seed.

pub mod concentration;
pub mod datagen;
pub mod em;
mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod population;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    sign_resolved_error, Batch, BatchView, ClusteredDataset, EmTrace, FlatDataset, ModelConfig,
    Sign, StopReason,
};
pub use rng::{derive_stream, RngSpec, Stream};
