//! Learned-filter machinery: the filtering environment over history windows,
//! the replay buffer, the two policy structures, and the actor-critic
//! trainer with its evaluator.

mod env;
mod policy;
mod replay;
mod trainer;

pub use env::{ConstantCostEnv, EstimationEnv, MfpEnv, StepOutcome};
pub use policy::{daof_estimate, DaofFilter, DaofPolicy, DaofVariant, TransitionHandle};
pub use replay::{ReplayBuffer, TransitionRecord};
pub use trainer::{
    actor_loss, actor_loss_with, critic_loss, evaluate_policy, evaluate_with, train,
    write_training_log, EvalContext, EvalSummary, TrainConfig, TrainLogRow, TrainOutput,
};

use thiserror::Error;

use crate::core::CoreError;
use crate::filters::FilterError;
use crate::nn::{CheckpointError, NnError};
use crate::systems::SystemsError;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("episode already finished; reset the environment")]
    EpisodeFinished,
    #[error("actor produced a non-finite output at step {step}; window snapshot: {window_snapshot}")]
    NonFiniteActorOutput {
        step: usize,
        window_snapshot: String,
    },
    #[error("non-finite TD target in critic update")]
    NonFiniteTarget,
    #[error("invalid configuration: {reason}")]
    BadConfig { reason: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Systems(#[from] SystemsError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}
