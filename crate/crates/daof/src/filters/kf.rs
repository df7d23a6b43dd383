//! Kalman filters for linear systems: the time-varying covariance form used
//! as an oracle in tests, the stationary-gain form built from the Riccati
//! fixed point, and a zero-order-hold baseline.

use nalgebra::{DMatrix, DVector};

use super::{FilterError, OnlineFilter};
use crate::core::{MeasVec, StateVec};
use crate::systems::{ExplicitSystem, StationaryKf, SystemModel};

fn linear_parts(
    system: &ExplicitSystem,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), FilterError> {
    let model = match &system.model {
        SystemModel::Linear(l) => l,
        _ => {
            return Err(FilterError::NotApplicable {
                filter: "kf",
                reason: "transition model is nonlinear",
            })
        }
    };
    let n = model.a.nrows();
    let m = model.c.nrows();
    let q = match &system.process_noise {
        Some(g) => DMatrix::from_row_slice(n, n, &g.covariance()),
        None => DMatrix::zeros(n, n),
    };
    let r = match &system.measurement_noise {
        Some(noise) => DMatrix::from_row_slice(m, m, &noise.covariance()),
        None => DMatrix::zeros(m, m),
    };
    Ok((model.a.clone(), model.c.clone(), q, r))
}

/// Standard predict/update Kalman filter with moment-matched noise
/// covariances. The first call updates the prior directly; later calls
/// predict one step before updating.
pub struct KalmanFilter {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    t: usize,
}

impl KalmanFilter {
    pub fn new(system: &ExplicitSystem) -> Result<Self, FilterError> {
        let (a, c, q, r) = linear_parts(system)?;
        let n = a.nrows();
        Ok(Self {
            a,
            c,
            q,
            r,
            mean: DVector::from_column_slice(system.initial.mean.as_slice()),
            cov: DMatrix::from_row_slice(n, n, system.initial.cov_row_major()),
            t: 0,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn update(&mut self, y: &MeasVec) -> Result<(), FilterError> {
        let yv = DVector::from_column_slice(y.as_slice());
        let s = &self.c * &self.cov * self.c.transpose() + &self.r;
        let s_inv = s.try_inverse().ok_or(FilterError::Numerical {
            context: "kf innovation covariance inversion",
        })?;
        let gain = &self.cov * self.c.transpose() * s_inv;
        let innovation = yv - &self.c * &self.mean;
        self.mean += &gain * innovation;
        self.cov = &self.cov - &gain * &self.c * &self.cov;
        // keep the covariance symmetric against rounding drift
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        Ok(())
    }
}

impl OnlineFilter for KalmanFilter {
    fn estimate(&mut self, y: &MeasVec) -> Result<StateVec, FilterError> {
        if self.t > 0 {
            self.mean = &self.a * &self.mean;
            self.cov = &self.a * &self.cov * self.a.transpose() + &self.q;
        }
        self.update(y)?;
        self.t += 1;
        StateVec::new(self.mean.as_slice().to_vec())
            .map_err(|_| FilterError::NonFiniteEstimate { step: self.t - 1 })
    }
}

/// Kalman filter with a fixed steady-state gain.
pub struct StationaryKalmanFilter {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    gain: DMatrix<f64>,
    mean: DVector<f64>,
    t: usize,
}

impl StationaryKalmanFilter {
    pub fn new(system: &ExplicitSystem, stationary: &StationaryKf) -> Result<Self, FilterError> {
        let (a, c, _, _) = linear_parts(system)?;
        Ok(Self {
            a,
            c,
            gain: stationary.gain.clone(),
            mean: DVector::from_column_slice(system.initial.mean.as_slice()),
            t: 0,
        })
    }
}

impl OnlineFilter for StationaryKalmanFilter {
    fn estimate(&mut self, y: &MeasVec) -> Result<StateVec, FilterError> {
        if self.t > 0 {
            self.mean = &self.a * &self.mean;
        }
        let yv = DVector::from_column_slice(y.as_slice());
        let innovation = yv - &self.c * &self.mean;
        self.mean += &self.gain * innovation;
        self.t += 1;
        StateVec::new(self.mean.as_slice().to_vec())
            .map_err(|_| FilterError::NonFiniteEstimate { step: self.t - 1 })
    }
}

/// Trivial baseline that never moves: `x_hat_t = x_hat_{t-1}`, starting from
/// the initial estimate.
pub struct ZeroOrderHold {
    estimate: StateVec,
}

impl ZeroOrderHold {
    pub fn new(initial_estimate: StateVec) -> Self {
        Self {
            estimate: initial_estimate,
        }
    }
}

impl OnlineFilter for ZeroOrderHold {
    fn estimate(&mut self, _y: &MeasVec) -> Result<StateVec, FilterError> {
        Ok(self.estimate.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Rng;
    use crate::noise::{GaussianMixture, MeasurementNoise};
    use crate::systems::{kf_reference, simulate, GaussianInit, LinearModel};
    use nalgebra::dmatrix;

    fn test_system() -> ExplicitSystem {
        ExplicitSystem {
            model: SystemModel::Linear(LinearModel::new(
                dmatrix![0.95, 0.05; -0.05, 0.9],
                dmatrix![1.0, 0.0; 0.0, 1.0],
            )),
            process_noise: Some(
                GaussianMixture::diagonal_gaussian(vec![0.0, 0.0], vec![0.01, 0.01]).unwrap(),
            ),
            measurement_noise: Some(MeasurementNoise::Gaussian(
                GaussianMixture::diagonal_gaussian(vec![0.0, 0.0], vec![0.04, 0.04]).unwrap(),
            )),
            initial: GaussianInit::diagonal(StateVec::zeros(2), &[0.25, 0.25]).unwrap(),
            dt: 1.0,
        }
    }

    #[test]
    fn kf_covariance_converges_to_riccati_posterior() {
        let sys = test_system();
        let stationary = kf_reference(&sys).unwrap();
        let mut kf = KalmanFilter::new(&sys).unwrap();
        let traj = simulate(&sys, 200, &mut Rng::new(5));
        for y in &traj.measurements {
            kf.estimate(y).unwrap();
        }
        let diff = (kf.cov() - &stationary.posterior_cov).abs().max();
        assert!(diff < 1e-9, "posterior covariance gap {diff}");
    }

    #[test]
    fn stationary_kf_tracks_time_varying_kf_after_burn_in() {
        let sys = test_system();
        let stationary = kf_reference(&sys).unwrap();
        let mut kf = KalmanFilter::new(&sys).unwrap();
        let mut skf = StationaryKalmanFilter::new(&sys, &stationary).unwrap();
        let traj = simulate(&sys, 300, &mut Rng::new(6));
        let mut last_gap = 0.0;
        for y in &traj.measurements {
            let a = kf.estimate(y).unwrap();
            let b = skf.estimate(y).unwrap();
            last_gap = a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
        }
        assert!(last_gap < 1e-6, "estimates still disagree by {last_gap}");
    }

    #[test]
    fn zero_order_hold_never_moves() {
        let mut z = ZeroOrderHold::new(StateVec::new(vec![1.0, -2.0]).unwrap());
        for _ in 0..5 {
            let e = z.estimate(&MeasVec::new(vec![100.0]).unwrap()).unwrap();
            assert_eq!(e.as_slice(), &[1.0, -2.0]);
        }
    }

    #[test]
    fn kf_rejects_nonlinear_model() {
        let sys = ExplicitSystem {
            model: SystemModel::Bicycle(crate::systems::Bicycle2Dof::default()),
            process_noise: None,
            measurement_noise: None,
            initial: GaussianInit::deterministic(StateVec::zeros(2)),
            dt: 0.02,
        };
        assert!(KalmanFilter::new(&sys).is_err());
    }
}
