//! Baseline estimators behind one online interface: Kalman filter (linear
//! oracle), unscented Kalman filter, bootstrap particle filter, and the
//! supervised-learning filter.
//!
//! Every filter consumes the measurement stream `y_0, y_1, ...` through
//! [`OnlineFilter::estimate`] and emits `x_hat_t` per call; construction
//! fixes the initial belief, so a fresh instance is built per run.

mod kf;
mod pf;
mod slf;
mod ukf;

pub use kf::{KalmanFilter, StationaryKalmanFilter, ZeroOrderHold};
pub use pf::{systematic_resample, ParticleFilter, PfConfig};
pub use slf::{slf_train, slf_train_closed_loop, SlfFilter, SlfTrainConfig};
pub use ukf::{ukf_step, UkfParams, UnscentedKalmanFilter};

use thiserror::Error;

use crate::core::{CoreError, MeasVec, StateVec};
use crate::nn::NnError;
use crate::noise::NoiseError;
use crate::systems::SystemsError;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("{filter} is not applicable here: {reason}")]
    NotApplicable {
        filter: &'static str,
        reason: &'static str,
    },
    #[error("numerical failure in {context}")]
    Numerical { context: &'static str },
    #[error("estimate contains non-finite values at step {step}")]
    NonFiniteEstimate { step: usize },
    #[error("training aborted: {reason}")]
    Training { reason: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Systems(#[from] SystemsError),
}

/// An online state estimator: one measurement in, one estimate out.
pub trait OnlineFilter {
    fn estimate(&mut self, y: &MeasVec) -> Result<StateVec, FilterError>;
}
