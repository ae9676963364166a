//! Latent dynamics model: convolutional encoder/decoder, locally-linear
//! transition network, the controllability-enhanced training objective and
//! checkpoint persistence.

pub mod checkpoint;
mod config;
mod losses;
mod net;
mod objective;

pub use config::{cartpole_config, config_for, pendulum_config, ConvSpec, DeconvSpec, ModelConfig};
pub use losses::{combine_objective, kl_loss, reconstruction_loss};
pub use net::{LatentGaussianVars, LinVars, LocalLinearization, Model, TransitionEval};
pub use objective::{
    constraint_value_eval, sample_standard_normal, total_objective, total_objective_with,
    Batch, Diagnostics, ObjectiveEval,
};
