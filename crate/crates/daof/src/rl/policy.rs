//! The two learned filter structures and their deployment as online filters.
//!
//! A v1 policy predicts with the known transition map and corrects with the
//! learned term: `x_hat_t = f(x_hat_{t-1}) + actor(flatten(h_t))`. A v2
//! policy reads the estimate directly off the window:
//! `x_hat_t = actor(flatten(h_t))`. Deployed actors consume the raw window
//! flattening (training-time normalizations are folded into the weights), so
//! these formulas hold literally.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::core::{HistoryWindow, MeasVec, StateVec};
use crate::filters::{FilterError, OnlineFilter};
use crate::nn::{
    checkpoint_load, checkpoint_save, CheckpointMeta, F32Net, MlpNet, Scratch, ScratchF32,
};
use crate::systems::SystemModel;

use super::RlError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DaofVariant {
    V1,
    V2,
}

impl std::fmt::Display for DaofVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DaofVariant::V1 => write!(f, "v1"),
            DaofVariant::V2 => write!(f, "v2"),
        }
    }
}

/// Known one-step transition handle used by v1 policies.
#[derive(Clone, Debug)]
pub struct TransitionHandle {
    pub model: SystemModel,
    pub dt: f64,
}

impl TransitionHandle {
    pub fn apply(&self, x: &StateVec, t: usize) -> StateVec {
        self.model.transition(x, t, self.dt)
    }
}

/// A trained filter policy in deployed form.
#[derive(Clone, Debug)]
pub struct DaofPolicy {
    pub variant: DaofVariant,
    pub actor: MlpNet,
    pub window_len: usize,
    pub state_dim: usize,
    pub meas_dim: usize,
    /// Present for v1 policies only.
    pub transition: Option<TransitionHandle>,
}

#[derive(Serialize, Deserialize)]
struct PolicyMeta {
    variant: DaofVariant,
    window_len: usize,
    state_dim: usize,
    meas_dim: usize,
}

impl DaofPolicy {
    pub fn flat_dim(&self) -> usize {
        self.window_len * (self.state_dim + self.meas_dim)
    }

    fn check_dims(&self) -> Result<(), RlError> {
        if self.actor.input_dim() != self.flat_dim() {
            return Err(RlError::BadConfig {
                reason: format!(
                    "actor input {} does not match window flat dim {}",
                    self.actor.input_dim(),
                    self.flat_dim()
                ),
            });
        }
        if self.actor.output_dim() != self.state_dim {
            return Err(RlError::BadConfig {
                reason: format!(
                    "actor output {} does not match state dim {}",
                    self.actor.output_dim(),
                    self.state_dim
                ),
            });
        }
        if self.variant == DaofVariant::V1 && self.transition.is_none() {
            return Err(RlError::BadConfig {
                reason: "v1 policy requires a transition handle".into(),
            });
        }
        Ok(())
    }

    /// Saves the policy as a network checkpoint with the structural metadata
    /// in the extra field. The v1 transition handle is reattached from the
    /// system configuration at load time.
    pub fn save(
        &self,
        path: &Path,
        config_hash: &str,
        train_steps: u64,
    ) -> Result<(), RlError> {
        let meta = CheckpointMeta {
            config_hash: config_hash.to_string(),
            train_steps,
            extra: serde_json::to_string(&PolicyMeta {
                variant: self.variant,
                window_len: self.window_len,
                state_dim: self.state_dim,
                meas_dim: self.meas_dim,
            })
            .expect("policy metadata serializes"),
        };
        checkpoint_save(path, &self.actor, None, &meta)?;
        Ok(())
    }

    pub fn load(
        path: &Path,
        transition: Option<TransitionHandle>,
    ) -> Result<(Self, CheckpointMeta), RlError> {
        let (actor, _, meta) = checkpoint_load(path)?;
        let parsed: PolicyMeta =
            serde_json::from_str(&meta.extra).map_err(|e| RlError::BadConfig {
                reason: format!("checkpoint extra metadata is not a policy header: {e}"),
            })?;
        let policy = DaofPolicy {
            variant: parsed.variant,
            actor,
            window_len: parsed.window_len,
            state_dim: parsed.state_dim,
            meas_dim: parsed.meas_dim,
            transition,
        };
        policy.check_dims()?;
        Ok((policy, meta))
    }
}

/// One estimate from a policy given the current window and the previous
/// estimate. `t` indexes the control schedule for the v1 prediction term.
pub fn daof_estimate(
    policy: &DaofPolicy,
    window: &HistoryWindow,
    prev_estimate: &StateVec,
    t: usize,
) -> Result<StateVec, RlError> {
    let flat = window.flatten();
    let raw = policy.actor.forward(&flat)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(RlError::NonFiniteActorOutput {
            step: t,
            window_snapshot: format!("{flat:?}"),
        });
    }
    let estimate = match policy.variant {
        DaofVariant::V2 => raw,
        DaofVariant::V1 => {
            let handle = policy
                .transition
                .as_ref()
                .expect("checked at construction: v1 carries a transition handle");
            let predicted = handle.apply(prev_estimate, t.saturating_sub(1));
            predicted
                .as_slice()
                .iter()
                .zip(&raw)
                .map(|(p, r)| p + r)
                .collect()
        }
    };
    StateVec::new(estimate).map_err(|_| RlError::NonFiniteActorOutput {
        step: t,
        window_snapshot: format!("{flat:?}"),
    })
}

/// A policy deployed as an online filter over a measurement stream.
pub struct DaofFilter {
    policy: DaofPolicy,
    fast: Option<(F32Net, ScratchF32)>,
    initial_estimate: StateVec,
    window: Option<HistoryWindow>,
    prev_estimate: StateVec,
    flat: Vec<f64>,
    scratch: Scratch,
    out: Vec<f64>,
    t: usize,
}

impl DaofFilter {
    pub fn new(policy: DaofPolicy, initial_estimate: StateVec) -> Result<Self, RlError> {
        policy.check_dims()?;
        if initial_estimate.dim() != policy.state_dim {
            return Err(RlError::BadConfig {
                reason: "initial estimate dimension does not match the policy".into(),
            });
        }
        let flat_dim = policy.flat_dim();
        Ok(Self {
            policy,
            fast: None,
            initial_estimate: initial_estimate.clone(),
            window: None,
            prev_estimate: initial_estimate,
            flat: vec![0.0; flat_dim],
            scratch: Scratch::default(),
            out: Vec::new(),
            t: 0,
        })
    }

    /// Enables the single-precision inference path.
    pub fn with_fast32(mut self) -> Self {
        self.fast = Some((F32Net::from_net(&self.policy.actor), ScratchF32::default()));
        self
    }

    pub fn policy(&self) -> &DaofPolicy {
        &self.policy
    }
}

impl OnlineFilter for DaofFilter {
    fn estimate(&mut self, y: &MeasVec) -> Result<StateVec, FilterError> {
        let window = match self.window.take() {
            None => HistoryWindow::padded(
                self.policy.window_len,
                self.initial_estimate.clone(),
                y.clone(),
            ),
            Some(w) => w.update(self.prev_estimate.clone(), y.clone())?,
        };
        window.flatten_into(&mut self.flat);
        match &mut self.fast {
            Some((net, scratch)) => net.forward_into(&self.flat, scratch, &mut self.out),
            None => self
                .policy
                .actor
                .forward_into(&self.flat, &mut self.scratch, &mut self.out),
        }
        let estimate: Vec<f64> = match self.policy.variant {
            DaofVariant::V2 => self.out.clone(),
            DaofVariant::V1 => {
                let handle = self
                    .policy
                    .transition
                    .as_ref()
                    .expect("v1 carries a transition handle");
                let predicted = handle.apply(&self.prev_estimate, self.t.saturating_sub(1));
                predicted
                    .as_slice()
                    .iter()
                    .zip(&self.out)
                    .map(|(p, r)| p + r)
                    .collect()
            }
        };
        let estimate = StateVec::new(estimate)
            .map_err(|_| FilterError::NonFiniteEstimate { step: self.t })?;
        self.prev_estimate = estimate.clone();
        self.window = Some(window);
        self.t += 1;
        Ok(estimate)
    }
}
