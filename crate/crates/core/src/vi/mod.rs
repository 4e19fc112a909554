//! Mean-field variational estimator.

mod adam;
mod config;
mod fit;
mod init;
mod objective;
mod sampling;
mod state;

pub use adam::Adam;
pub use config::{ObjectiveMode, ObjectiveSettings, TemperatureSchedule, TrainConfig};
pub use init::{residual_pca_latents, LatentInit};
pub use fit::{fit, FittedModel, Standardization, DIVERGENCE_LIMIT, IMPROVEMENT_TOL};
pub use objective::{
    check_gradient, mc_objective, mc_objective_with, objective_grad, objective_grad_with, GradMismatch, NoiseDraws,
    ObjectiveValue, SampledQuantities,
};
pub use sampling::{sample_concrete, sample_gaussian_reparam, EDGE_PROB_CLAMP};
pub use state::{RawMixture, VariationalState, BLOCK_NAMES};
