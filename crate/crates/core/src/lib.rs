//! Differentially private probabilistic neighbourhood-based collaborative
//! filtering.
//!
//! The similarity matrix of an item-item recommender is treated as a latent
//! parameter with a Gaussian prior and learned either by Laplace-noised SGD
//! ([`dpsgd`], rating-level privacy) or by sampling a rescaled posterior with
//! stochastic gradient Langevin dynamics ([`dpps`], user-level privacy).
//! Pearson and cosine similarities ([`baselines`]) serve as non-private
//! anchors; [`eval`] runs k-fold experiments over MovieLens data loaded by
//! [`ingest`].

pub mod baselines;
pub mod data;
pub mod dpps;
pub mod dpsgd;
mod error;
pub mod eval;
pub mod export;
pub mod ingest;
pub mod model;
pub mod rng;
pub mod similarity;

pub use data::{Rating, RatingDataset, RatingScale};
pub use error::{Error, Result};
pub use similarity::SimilarityMatrix;
