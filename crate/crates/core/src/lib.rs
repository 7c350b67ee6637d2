//! HDRM: hyperbolic, direction-aware latent diffusion for recommendation.
//!
//! The pipeline is split into the stages it runs in:
//!
//! - [`manifold`]: Lorentz and Poincaré kernels.
//! - [`dataset`]: interaction logs, binarization, 7:1:2 splits, noise injection.
//! - [`encoder`]: the hyperbolic graph-convolutional encoder and its backward pass.
//! - [`cluster`]: hyperbolic k-means and geodesic lowest-common-ancestor search.
//! - [`diffusion`]: directional forward process, denoiser networks, reverse chain.
//! - [`objective`]: Fermi-Dirac scores, margin and reconstruction losses.
//! - [`train`]: Adam and the two training stages.
//! - [`eval`]: full-ranking Recall/NDCG and the in-repo baselines.
//! - [`pipeline`]: end-to-end runs, ablations, sweeps and checkpoints, configured by [`config::RunConfig`].

pub mod cluster;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod manifold;
pub mod objective;
pub mod persist;
pub mod pipeline;
pub mod train;

pub use error::{HdrmError, Result};
