//! Stochastic dynamic systems: the explicit-model path (transition and
//! measurement maps available to filters) and the opaque data-source path
//! (only `(truth, measurement)` streams observable).

mod bicycle;
mod riccati;
mod surrogate;

pub use bicycle::{bicycle_derivatives, Bicycle2Dof};
pub use riccati::{dare_fixed_point, kf_reference, StationaryKf};
pub use surrogate::{rk4_step, OpaqueVehicleSource, OpaqueVehicleSpec, VehicleSurrogateParams};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::core::{MeasVec, Rng, StateVec, Trajectory};
use crate::noise::{GaussianMixture, MeasurementNoise, NoiseError};

#[derive(Debug, Error)]
pub enum SystemsError {
    #[error("initial covariance is not positive semidefinite")]
    BadInitialCovariance,
    #[error("noise model error: {0}")]
    Noise(#[from] NoiseError),
    #[error("system is not linear-Gaussian: {reason}")]
    NotLinearGaussian { reason: &'static str },
    #[error("Riccati recursion did not converge: residual {residual:.3e} after {iterations} iterations")]
    RiccatiDiverged { residual: f64, iterations: usize },
    #[error("opaque source stepped before reset")]
    SteppedBeforeReset,
    #[error("dimension mismatch: {context}")]
    Dim { context: &'static str },
}

/// Gaussian initial-state distribution. A zero covariance collapses to a
/// deterministic start.
#[derive(Clone, Debug)]
pub struct GaussianInit {
    pub mean: StateVec,
    cov: Vec<f64>,
    chol: Option<DMatrix<f64>>,
}

impl GaussianInit {
    pub fn new(mean: StateVec, cov_row_major: Vec<f64>) -> Result<Self, SystemsError> {
        let n = mean.dim();
        if cov_row_major.len() != n * n {
            return Err(SystemsError::Dim {
                context: "initial covariance size",
            });
        }
        let cov = DMatrix::from_row_slice(n, n, &cov_row_major);
        let chol = if cov.iter().all(|v| *v == 0.0) {
            None
        } else {
            Some(
                cov.clone()
                    .cholesky()
                    .ok_or(SystemsError::BadInitialCovariance)?
                    .l(),
            )
        };
        Ok(Self {
            mean,
            cov: cov_row_major,
            chol,
        })
    }

    pub fn diagonal(mean: StateVec, variances: &[f64]) -> Result<Self, SystemsError> {
        let n = mean.dim();
        let mut cov = vec![0.0; n * n];
        for (i, v) in variances.iter().enumerate() {
            cov[i * n + i] = *v;
        }
        Self::new(mean, cov)
    }

    pub fn deterministic(mean: StateVec) -> Self {
        let n = mean.dim();
        Self {
            mean,
            cov: vec![0.0; n * n],
            chol: None,
        }
    }

    pub fn cov_row_major(&self) -> &[f64] {
        &self.cov
    }

    pub fn sample(&self, rng: &mut Rng) -> StateVec {
        match &self.chol {
            None => self.mean.clone(),
            Some(l) => {
                let z = DVector::from_vec(rng.normal_vec(self.mean.dim()));
                let x = DVector::from_column_slice(self.mean.as_slice()) + l * z;
                StateVec::new(x.as_slice().to_vec()).expect("finite Gaussian draw")
            }
        }
    }
}

/// Linear time-invariant model `x' = A x`, `y = C x`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "A must be square");
        assert_eq!(c.ncols(), a.ncols(), "C column count must match state dim");
        Self { a, c }
    }
}

/// Deterministic part of a system: transition and measurement maps with the
/// control input folded in via a time-indexed schedule.
#[derive(Clone, Debug)]
pub enum SystemModel {
    Linear(LinearModel),
    Bicycle(Bicycle2Dof),
}

impl SystemModel {
    pub fn state_dim(&self) -> usize {
        match self {
            SystemModel::Linear(l) => l.a.nrows(),
            SystemModel::Bicycle(_) => 2,
        }
    }

    pub fn meas_dim(&self) -> usize {
        match self {
            SystemModel::Linear(l) => l.c.nrows(),
            SystemModel::Bicycle(_) => 2,
        }
    }

    /// Noise-free one-step transition from step `t` to `t + 1`.
    pub fn transition(&self, x: &StateVec, t: usize, dt: f64) -> StateVec {
        let mut out = vec![0.0; self.state_dim()];
        self.transition_into(x.as_slice(), t, dt, &mut out);
        StateVec::new(out).expect("finite transition")
    }

    /// Allocation-free transition on raw slices.
    pub fn transition_into(&self, x: &[f64], t: usize, dt: f64, out: &mut [f64]) {
        match self {
            SystemModel::Linear(l) => {
                let n = l.a.nrows();
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += l.a[(i, j)] * x[j];
                    }
                    out[i] = acc;
                }
            }
            SystemModel::Bicycle(b) => b.euler_step_into(x, t, dt, out),
        }
    }

    /// Noise-free measurement at step `t`.
    pub fn measure(&self, x: &StateVec, t: usize, dt: f64) -> MeasVec {
        let mut out = vec![0.0; self.meas_dim()];
        self.measure_into(x.as_slice(), t, dt, &mut out);
        MeasVec::new(out).expect("finite measurement")
    }

    /// Allocation-free measurement on raw slices.
    pub fn measure_into(&self, x: &[f64], t: usize, dt: f64, out: &mut [f64]) {
        match self {
            SystemModel::Linear(l) => {
                let m = l.c.nrows();
                let n = l.c.ncols();
                for i in 0..m {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += l.c[(i, j)] * x[j];
                    }
                    out[i] = acc;
                }
            }
            SystemModel::Bicycle(b) => b.measure_into(x, t, dt, out),
        }
    }

    pub fn control(&self, t: usize, dt: f64) -> f64 {
        match self {
            SystemModel::Linear(_) => 0.0,
            SystemModel::Bicycle(b) => b.steering(t, dt),
        }
    }

    /// State guard; violation marks the trajectory divergent.
    pub fn guard_ok(&self, x: &StateVec) -> bool {
        let finite = x.as_slice().iter().all(|v| v.is_finite());
        match self {
            SystemModel::Linear(_) => finite && x.norm_sq() < 1e12,
            SystemModel::Bicycle(_) => {
                finite && x[0].abs() < std::f64::consts::FRAC_PI_2 && x[1].abs() < 20.0
            }
        }
    }
}

/// Fully specified stochastic system with additive process and measurement
/// noise. `None` noise models mean the channel is noise-free.
#[derive(Clone, Debug)]
pub struct ExplicitSystem {
    pub model: SystemModel,
    pub process_noise: Option<GaussianMixture>,
    pub measurement_noise: Option<MeasurementNoise>,
    pub initial: GaussianInit,
    pub dt: f64,
}

impl ExplicitSystem {
    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn meas_dim(&self) -> usize {
        self.model.meas_dim()
    }

    pub fn transition(&self, x: &StateVec, t: usize) -> StateVec {
        self.model.transition(x, t, self.dt)
    }

    pub fn measure_clean(&self, x: &StateVec, t: usize) -> MeasVec {
        self.model.measure(x, t, self.dt)
    }

    pub fn measure_noisy(&self, x: &StateVec, t: usize, rng: &mut Rng) -> MeasVec {
        let mut y = self.measure_clean(x, t).into_vec();
        if let Some(noise) = &self.measurement_noise {
            for (yi, z) in y.iter_mut().zip(noise.sample(rng)) {
                *yi += z;
            }
        }
        MeasVec::new(y).expect("finite measurement")
    }

    pub fn step_noisy(&self, x: &StateVec, t: usize, rng: &mut Rng) -> StateVec {
        let next = self.transition(x, t);
        match &self.process_noise {
            None => next,
            Some(noise) => next
                .add(&noise.sample(rng))
                .expect("process noise dimension matches state"),
        }
    }
}

/// Rolls the system forward: `x0` from the initial distribution, then
/// `y_t = g(x_t) + noise` and `x_{t+1} = f(x_t) + noise` for each step. A
/// guard violation truncates the trajectory and sets the divergence flag.
pub fn simulate(system: &ExplicitSystem, steps: usize, rng: &mut Rng) -> Trajectory {
    assert!(steps >= 1);
    let mut true_states = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);
    let mut controls = Vec::with_capacity(steps);
    let mut diverged = false;
    let mut x = system.initial.sample(rng);
    for t in 0..steps {
        if !system.model.guard_ok(&x) {
            diverged = true;
            break;
        }
        measurements.push(system.measure_noisy(&x, t, rng));
        controls.push(system.model.control(t, system.dt));
        true_states.push(x.clone());
        if t + 1 < steps {
            x = system.step_noisy(&x, t, rng);
        }
    }
    Trajectory {
        true_states,
        measurements,
        estimates: None,
        controls: Some(controls),
        dt: system.dt,
        diverged,
    }
}

/// A system observable only through its data stream: no transition or
/// measurement function is exposed. True states are emitted solely so a
/// trainer or evaluator can compute losses; the deployed filtering path never
/// touches them.
pub trait OpaqueSource {
    fn state_dim(&self) -> usize;
    fn meas_dim(&self) -> usize;
    /// Re-initializes the hidden state and returns the initial
    /// `(truth, measurement)` pair. Equal seeds replay identical trajectories.
    fn reset(&mut self, seed: u64) -> (StateVec, MeasVec);
    /// Advances one control period and returns the new pair.
    fn step(&mut self) -> Result<(StateVec, MeasVec), SystemsError>;
    /// Mean of the known initial-state distribution.
    fn initial_estimate(&self) -> StateVec;
}

/// Rolls an opaque source into a trajectory of `steps` pairs (including the
/// initial one).
pub fn opaque_rollout(
    source: &mut dyn OpaqueSource,
    seed: u64,
    steps: usize,
) -> Result<Trajectory, SystemsError> {
    let (x0, y0) = source.reset(seed);
    let mut true_states = vec![x0];
    let mut measurements = vec![y0];
    for _ in 1..steps {
        let (x, y) = source.step()?;
        true_states.push(x);
        measurements.push(y);
    }
    Ok(Trajectory {
        true_states,
        measurements,
        estimates: None,
        controls: None,
        dt: 1.0,
        diverged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_system(a: f64, x0: f64) -> ExplicitSystem {
        ExplicitSystem {
            model: SystemModel::Linear(LinearModel::new(dmatrix![a], dmatrix![1.0])),
            process_noise: None,
            measurement_noise: None,
            initial: GaussianInit::deterministic(StateVec::new(vec![x0]).unwrap()),
            dt: 1.0,
        }
    }

    #[test]
    fn zero_noise_linear_decay_closed_form() {
        let sys = scalar_system(0.5, 1.0);
        let traj = simulate(&sys, 4, &mut Rng::new(0));
        assert_eq!(traj.true_states[3][0], 0.125);
        assert!(!traj.diverged);
    }

    #[test]
    fn zero_noise_identity_is_constant() {
        let sys = scalar_system(1.0, 2.5);
        let traj = simulate(&sys, 10, &mut Rng::new(0));
        for x in &traj.true_states {
            assert_eq!(x[0], 2.5);
        }
    }

    #[test]
    fn fixed_seed_reproduces_bitwise() {
        let sys = ExplicitSystem {
            model: SystemModel::Linear(LinearModel::new(
                dmatrix![0.9, 0.1; -0.1, 0.8],
                dmatrix![1.0, 0.0],
            )),
            process_noise: Some(
                GaussianMixture::diagonal_gaussian(vec![0.0, 0.0], vec![0.01, 0.02]).unwrap(),
            ),
            measurement_noise: Some(MeasurementNoise::Laplace(
                crate::noise::LaplaceNoise::new(vec![0.0], vec![0.1]).unwrap(),
            )),
            initial: GaussianInit::diagonal(StateVec::zeros(2), &[0.1, 0.1]).unwrap(),
            dt: 0.02,
        };
        let a = simulate(&sys, 50, &mut Rng::new(123));
        let b = simulate(&sys, 50, &mut Rng::new(123));
        for t in 0..50 {
            assert_eq!(a.true_states[t], b.true_states[t]);
            assert_eq!(a.measurements[t], b.measurements[t]);
        }
    }

    #[test]
    fn noise_free_transitions_match_f_exactly() {
        let sys = ExplicitSystem {
            model: SystemModel::Bicycle(Bicycle2Dof::default()),
            process_noise: None,
            measurement_noise: None,
            initial: GaussianInit::deterministic(StateVec::new(vec![0.05, -0.02]).unwrap()),
            dt: 0.02,
        };
        let traj = simulate(&sys, 20, &mut Rng::new(7));
        for t in 0..19 {
            let expect = sys.transition(&traj.true_states[t], t);
            assert_eq!(expect, traj.true_states[t + 1]);
        }
    }

    #[test]
    fn unstable_system_truncates_with_divergence_flag() {
        let sys = scalar_system(2.0, 1.0);
        let traj = simulate(&sys, 100, &mut Rng::new(0));
        assert!(traj.diverged);
        assert!(traj.len() < 100);
    }
}
