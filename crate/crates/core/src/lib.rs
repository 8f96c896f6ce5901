//! Gaussian-process regression with learned per-group label noise.
//!
//! The covariance is linear in an explicit feature map,
//! `k(x, x') = phi(x)^T Sigma phi(x')`, and every training instance belongs
//! to a group (for example all superpixels of one image) whose labels share
//! a noise standard deviation `eps_g`. Maximizing the marginal likelihood
//! over `eps` and the feature scales `sigma` yields a prediction model and a
//! per-group confidence at the same time; groups with small `eps_g` are the
//! reliably annotated ones.
//!
//! Inference is exact and never forms an `N x N` matrix: all work goes
//! through a [`FeatureOracle`] answering four matrix-vector style queries,
//! which can be served from memory ([`LocalOracle`]) or by remote workers
//! ([`net::DistributedOracle`]).

pub mod dataset;
pub mod error;
pub mod gp;
pub mod hyper;
pub mod io;
pub mod lbfgs;
pub mod model;
pub mod net;
pub mod oracle;
#[cfg(feature = "reference")]
pub mod reference;
pub mod synth;
pub mod train;
#[cfg(feature = "reference")]
pub mod verify;

pub use dataset::{balance_weights, expand_noise, GroupIndex, GroupedDataset};
pub use error::{Error, Result};
pub use gp::{
    build_cache, grad_noise, grad_scales, log_marginal, posterior, posterior_mean, posterior_variance,
    reweighted_log_marginal, GpCache, PosteriorPrediction,
};
pub use hyper::HyperParams;
pub use model::TrainedModel;
pub use oracle::{FeatureOracle, FeatureShard, LocalOracle, ShardLayout};
pub use train::{
    predict_labels, tie_gradients, train, train_from, ConvergedBy, OptimizerConfig, TrainingReport,
};
