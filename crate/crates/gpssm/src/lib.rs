//! Gaussian-process state-space models over learned Fourier features, with
//! a Monte-Carlo receding-horizon out-of-distribution runtime monitor.
//!
//! The pieces, bottom to top:
//!
//! - [`data`]: state/control containers and CSV-backed trajectory datasets.
//! - [`spectral`]: the cosine-feature autoencoder that embeds a nominal
//!   model, plus stationary spectral-density baselines.
//! - [`gp`]: per-dimension weight-space priors, exact Gaussian posterior
//!   conditioning, the non-stationary Mercer kernel, and prediction.
//! - [`rollout`]: pre-sampled dynamics instances rolled forward under a
//!   control sequence.
//! - [`monitor`]: the negative-ELBO OoD loss, normalization, and the
//!   receding-horizon monitor loop.
//! - [`sim`]: the elbow toy system and a unicycle lab with rope/rocky/poke
//!   perturbations for generating ground-truth data.

pub mod data;
pub mod error;
pub mod gp;
pub mod monitor;
pub mod rollout;
pub mod sim;
pub mod spectral;

pub use data::{ControlInput, Dims, StateAction, SystemState, TrajectoryDataset};
pub use error::{GpssmError, Result};
pub use gp::{GpssmPrior, PosteriorArtifact, PredictiveMoments, WeightPosterior};
pub use monitor::{Monitor, MonitorConfig, Normalization, OodReport, RecordedRun};
pub use rollout::{NoiseMode, RolloutBundle, RolloutDynamics, SampledModel};
pub use spectral::{
    AutoencoderConfig, QuadratureWeights, SpectralFeatureSet, StationarySpectrum, TrainingMode,
    TrainingOutput,
};
