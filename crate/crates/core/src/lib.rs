//! Temporal latent-variable structural causal model.
//!
//! Lag-1 structural vector autoregression in which observed series are driven
//! by their own past and by latent exogenous series:
//!
//! ```text
//! [X(t); Z(t)] = (A ⊙ W) [X(t−1); Z(t−1)] + [N^X(t); N^Z(t)]
//! ```
//!
//! The crate simulates such systems, evaluates their likelihood under
//! Gaussian-mixture noise, fits a mean-field variational posterior over `A`,
//! `W` and `Z`, and scores the recovered graph against ground truth.

pub mod error;
pub mod eval;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod scalar;
pub mod simulate;
pub mod vi;

pub use error::{Error, Result, Violation};
pub use io::{evaluate_checkpoint, CheckpointDoc, GroundTruthDoc, MetricsDoc};
pub use eval::{aggregate, baseline_var_ols, extract_adjacency, match_latents, prf1, AggregateReport, LatentMatch, MetricsReport};
pub use likelihood::{gmm_logpdf, latent_logprior, obs_loglik, prior_logprob, residuals, PriorConfig, PriorValue};
pub use model::{
    causal_matrix, spectral_radius, validate_block_structure, CausalParams, GmmNoiseParams, GroundTruth, MixtureParams,
    ModelDims, NoiseModel, TimeSeriesDataset,
};
pub use scalar::Scalar;
pub use simulate::{generate, sample_ground_truth, sample_noise, simulate_series, GenConfig, GeneratedTruth, NoiseFamily, NoiseKind};
pub use vi::{fit, FittedModel, ObjectiveMode, TemperatureSchedule, TrainConfig, VariationalState};

pub type CausalParamsF64 = CausalParams<f64>;
pub type CausalParamsF32 = CausalParams<f32>;
pub type DatasetF64 = TimeSeriesDataset<f64>;
pub type DatasetF32 = TimeSeriesDataset<f32>;
pub type GroundTruthF64 = GroundTruth<f64>;
pub type StateF64 = VariationalState<f64>;
pub type StateF32 = VariationalState<f32>;
pub type FittedModelF64 = FittedModel<f64>;
pub type FittedModelF32 = FittedModel<f32>;
