//! Bayesian spatiotemporal functional factor models.
//!
//! Daily curves observed across many districts are modeled as noisy
//! Gaussian-process draws around a small number of latent factor curves
//! evolving as an AR(1) state space with calendar effects. The factor
//! loading matrix carries a Cholesky-type identifiability structure, a
//! CAR spatial prior across districts, and a multivariate horseshoe prior
//! that shrinks the columns of unnecessary factors to zero.
//!
//! The crate covers the full workflow:
//!
//! - [`simulate`]: the synthetic data-generating process,
//! - [`sampler`]: the Metropolis-within-Gibbs posterior sampler,
//! - [`selection`]: factor-set scoring by posterior predictive loss and
//!   shrinkage-based pruning,
//! - [`forecast`]: posterior-predictive forecasting, error metrics, and a
//!   univariate dynamic linear model baseline,
//! - [`diagnostics`]: potential scale reduction and effective sample size,
//! - [`io`]: the CSV file formats shared with the command-line tool.
//!
//! The mdbook under `book/` walks through the model and the API; its code
//! snippets compile as doc-tests.

pub mod diagnostics;
pub mod dist;
pub mod domain;
pub mod error;
pub mod forecast;
pub mod io;
pub mod kernel;
pub mod rng;
pub mod sampler;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};
