//! The filtering problem cast as a Markov decision process over
//! history-window states: the action is the state estimate, the per-step
//! cost is the squared estimation error, and the window is the only thing
//! the action influences (estimates never feed back into the plant).

use crate::core::{HistoryWindow, MeasVec, StateVec};
use crate::systems::{ExplicitSystem, OpaqueSource};

use super::RlError;

/// Outcome of one environment step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Squared Euclidean error between the hidden truth and the estimate.
    pub cost: f64,
    /// Window advanced with `(estimate, y_{t+1})`.
    pub window: HistoryWindow,
    /// Set when the episode horizon was reached.
    pub done: bool,
}

/// Environment interface shared by the trainer and evaluator. `true_state`
/// exists for loss computation and scoring only; deployed filters never see
/// it.
pub trait EstimationEnv {
    fn state_dim(&self) -> usize;
    fn meas_dim(&self) -> usize;
    fn window_len(&self) -> usize;
    fn horizon(&self) -> usize;
    fn initial_estimate(&self) -> StateVec;
    /// Starts episode `episode_seed`, returning the pre-padded window.
    fn reset(&mut self, episode_seed: u64) -> Result<HistoryWindow, RlError>;
    /// Applies the estimate for the current step.
    fn step(&mut self, estimate: &StateVec) -> Result<StepOutcome, RlError>;
    /// Current hidden true state (trainer/evaluator only).
    fn true_state(&self) -> &StateVec;
}

enum Backend {
    Explicit {
        system: ExplicitSystem,
        /// Stream roots; episode streams derive from this and never mutate it.
        root: crate::core::Rng,
        episode: crate::core::Rng,
    },
    Opaque(Box<dyn OpaqueSource + Send>),
}

/// Standard environment over either an explicit system or an opaque source.
pub struct MfpEnv {
    backend: Backend,
    window_len: usize,
    horizon: usize,
    window: Option<HistoryWindow>,
    truth: StateVec,
    t: usize,
    active: bool,
}

impl MfpEnv {
    pub fn explicit(
        system: ExplicitSystem,
        window_len: usize,
        horizon: usize,
        rng: crate::core::Rng,
    ) -> Self {
        let n = system.state_dim();
        Self {
            backend: Backend::Explicit {
                system,
                episode: rng.child(0),
                root: rng,
            },
            window_len,
            horizon,
            window: None,
            truth: StateVec::zeros(n),
            t: 0,
            active: false,
        }
    }

    pub fn opaque(source: Box<dyn OpaqueSource + Send>, window_len: usize, horizon: usize) -> Self {
        let n = source.state_dim();
        Self {
            backend: Backend::Opaque(source),
            window_len,
            horizon,
            window: None,
            truth: StateVec::zeros(n),
            t: 0,
            active: false,
        }
    }
}

impl EstimationEnv for MfpEnv {
    fn state_dim(&self) -> usize {
        match &self.backend {
            Backend::Explicit { system, .. } => system.state_dim(),
            Backend::Opaque(source) => source.state_dim(),
        }
    }

    fn meas_dim(&self) -> usize {
        match &self.backend {
            Backend::Explicit { system, .. } => system.meas_dim(),
            Backend::Opaque(source) => source.meas_dim(),
        }
    }

    fn window_len(&self) -> usize {
        self.window_len
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_estimate(&self) -> StateVec {
        match &self.backend {
            Backend::Explicit { system, .. } => system.initial.mean.clone(),
            Backend::Opaque(source) => source.initial_estimate(),
        }
    }

    fn reset(&mut self, episode_seed: u64) -> Result<HistoryWindow, RlError> {
        let (truth, y0) = match &mut self.backend {
            Backend::Explicit { system, root, episode } => {
                *episode = root.child(episode_seed);
                let x0 = system.initial.sample(episode);
                let y0 = system.measure_noisy(&x0, 0, episode);
                (x0, y0)
            }
            Backend::Opaque(source) => source.reset(episode_seed),
        };
        self.truth = truth;
        let window = HistoryWindow::padded(self.window_len, self.initial_estimate(), y0);
        self.window = Some(window.clone());
        self.t = 0;
        self.active = true;
        Ok(window)
    }

    fn step(&mut self, estimate: &StateVec) -> Result<StepOutcome, RlError> {
        if !self.active {
            return Err(RlError::EpisodeFinished);
        }
        let err = self.truth.sub(estimate)?;
        let cost: f64 = err.iter().map(|v| v * v).sum();

        let next_y = match &mut self.backend {
            Backend::Explicit { system, episode, .. } => {
                let next = system.step_noisy(&self.truth, self.t, episode);
                let y = system.measure_noisy(&next, self.t + 1, episode);
                self.truth = next;
                y
            }
            Backend::Opaque(source) => {
                let (next, y) = source.step()?;
                self.truth = next;
                y
            }
        };
        let window = self
            .window
            .take()
            .expect("active episode has a window")
            .update(estimate.clone(), next_y)?;
        self.window = Some(window.clone());
        self.t += 1;
        let done = self.t >= self.horizon;
        if done {
            self.active = false;
        }
        Ok(StepOutcome { cost, window, done })
    }

    fn true_state(&self) -> &StateVec {
        &self.truth
    }
}

/// Diagnostic environment with a constant cost: whatever the action, every
/// step costs `cost`. Useful for checking value-function fixed points
/// (`Q -> cost / (1 - gamma)`).
pub struct ConstantCostEnv {
    pub cost: f64,
    pub horizon: usize,
    window: Option<HistoryWindow>,
    truth: StateVec,
    t: usize,
    active: bool,
}

impl ConstantCostEnv {
    pub fn new(cost: f64, horizon: usize) -> Self {
        Self {
            cost,
            horizon,
            window: None,
            truth: StateVec::zeros(1),
            t: 0,
            active: false,
        }
    }
}

impl EstimationEnv for ConstantCostEnv {
    fn state_dim(&self) -> usize {
        1
    }

    fn meas_dim(&self) -> usize {
        1
    }

    fn window_len(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_estimate(&self) -> StateVec {
        StateVec::zeros(1)
    }

    fn reset(&mut self, _episode_seed: u64) -> Result<HistoryWindow, RlError> {
        let window = HistoryWindow::padded(1, StateVec::zeros(1), MeasVec::zeros(1));
        self.window = Some(window.clone());
        self.t = 0;
        self.active = true;
        Ok(window)
    }

    fn step(&mut self, estimate: &StateVec) -> Result<StepOutcome, RlError> {
        if !self.active {
            return Err(RlError::EpisodeFinished);
        }
        let window = self
            .window
            .take()
            .expect("active episode has a window")
            .update(estimate.clone(), MeasVec::zeros(1))?;
        self.window = Some(window.clone());
        self.t += 1;
        let done = self.t >= self.horizon;
        if done {
            self.active = false;
        }
        Ok(StepOutcome {
            cost: self.cost,
            window,
            done,
        })
    }

    fn true_state(&self) -> &StateVec {
        &self.truth
    }
}
