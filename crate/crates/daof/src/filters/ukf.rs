//! Unscented Kalman filter with symmetric sigma points and moment-matched
//! noise covariances. Works on any explicit system; under the non-Gaussian
//! noise models it degrades honestly, which is part of what the benchmarks
//! measure.

use nalgebra::{DMatrix, DVector};

use super::{FilterError, OnlineFilter};
use crate::core::{MeasVec, StateVec};
use crate::systems::ExplicitSystem;

#[derive(Clone, Copy, Debug)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self {
            alpha: 1e-1,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UkfParams {
    pub fn lambda(&self, n: usize) -> f64 {
        self.alpha * self.alpha * (n as f64 + self.kappa) - n as f64
    }

    /// `(w0_mean, w0_cov, w_i)` for a state dimension `n`.
    pub fn weights(&self, n: usize) -> (f64, f64, f64) {
        let lambda = self.lambda(n);
        let denom = n as f64 + lambda;
        (
            lambda / denom,
            lambda / denom + (1.0 - self.alpha * self.alpha + self.beta),
            0.5 / denom,
        )
    }
}

/// Mutable belief carried between UKF steps.
#[derive(Clone, Debug)]
pub struct UkfBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Square root of `(n + lambda) P` via Cholesky, re-conditioning with
/// `1e-9 I` jitter; gives up after three attempts.
fn scaled_sqrt(cov: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>, FilterError> {
    let n = cov.nrows();
    let mut jitter = 0.0;
    for _ in 0..3 {
        let mut scaled = cov * scale;
        if jitter > 0.0 {
            for i in 0..n {
                scaled[(i, i)] += jitter * scale;
            }
        }
        if let Some(chol) = scaled.cholesky() {
            return Ok(chol.l());
        }
        jitter = if jitter == 0.0 { 1e-9 } else { jitter * 10.0 };
    }
    Err(FilterError::Numerical {
        context: "ukf sigma-point Cholesky after jitter re-conditioning",
    })
}

fn sigma_points(
    belief: &UkfBelief,
    params: &UkfParams,
) -> Result<Vec<DVector<f64>>, FilterError> {
    let n = belief.mean.len();
    let lambda = params.lambda(n);
    let sqrt = scaled_sqrt(&belief.cov, n as f64 + lambda)?;
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(belief.mean.clone());
    for i in 0..n {
        let col = sqrt.column(i).clone_owned();
        points.push(&belief.mean + &col);
        points.push(&belief.mean - &col);
    }
    Ok(points)
}

fn recombine(
    points: &[DVector<f64>],
    params: &UkfParams,
    n_state: usize,
    additive: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (w0m, w0c, wi) = params.weights(n_state);
    let mut mean = &points[0] * w0m;
    for p in &points[1..] {
        mean += p * wi;
    }
    let mut cov = additive.clone_owned();
    for (k, p) in points.iter().enumerate() {
        let w = if k == 0 { w0c } else { wi };
        let d = p - &mean;
        cov += (&d * d.transpose()) * w;
    }
    (mean, DMatrix::from(cov))
}

/// Full UKF over an explicit system.
pub struct UnscentedKalmanFilter {
    system: ExplicitSystem,
    params: UkfParams,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    belief: UkfBelief,
    t: usize,
}

impl UnscentedKalmanFilter {
    pub fn new(system: &ExplicitSystem, params: UkfParams) -> Result<Self, FilterError> {
        let n = system.state_dim();
        let m = system.meas_dim();
        let q = match &system.process_noise {
            Some(g) => DMatrix::from_row_slice(n, n, &g.covariance()),
            None => DMatrix::zeros(n, n),
        };
        let r = match &system.measurement_noise {
            Some(noise) => DMatrix::from_row_slice(m, m, &noise.covariance()),
            None => DMatrix::zeros(m, m),
        };
        let belief = UkfBelief {
            mean: DVector::from_column_slice(system.initial.mean.as_slice()),
            cov: DMatrix::from_row_slice(n, n, system.initial.cov_row_major()),
        };
        Ok(Self {
            system: system.clone(),
            params,
            q,
            r,
            belief,
            t: 0,
        })
    }

    pub fn belief(&self) -> &UkfBelief {
        &self.belief
    }

    fn predict(&mut self) -> Result<(), FilterError> {
        let points = sigma_points(&self.belief, &self.params)?;
        let propagated: Vec<DVector<f64>> = points
            .iter()
            .map(|p| {
                let x = StateVec::new(p.as_slice().to_vec()).map_err(|_| {
                    FilterError::NonFiniteEstimate { step: self.t }
                })?;
                let next = self.system.transition(&x, self.t - 1);
                Ok(DVector::from_column_slice(next.as_slice()))
            })
            .collect::<Result<_, FilterError>>()?;
        let n = self.belief.mean.len();
        let (mean, cov) = recombine(&propagated, &self.params, n, &self.q);
        self.belief = UkfBelief { mean, cov };
        Ok(())
    }

    fn update(&mut self, y: &MeasVec) -> Result<(), FilterError> {
        let n = self.belief.mean.len();
        let points = sigma_points(&self.belief, &self.params)?;
        let observed: Vec<DVector<f64>> = points
            .iter()
            .map(|p| {
                let x = StateVec::new(p.as_slice().to_vec()).map_err(|_| {
                    FilterError::NonFiniteEstimate { step: self.t }
                })?;
                let obs = self.system.measure_clean(&x, self.t);
                Ok(DVector::from_column_slice(obs.as_slice()))
            })
            .collect::<Result<_, FilterError>>()?;
        let (y_mean, y_cov) = recombine(&observed, &self.params, n, &self.r);
        let (w0m, w0c, wi) = self.params.weights(n);
        let _ = w0m;
        let mut cross = DMatrix::zeros(n, y_mean.len());
        for (k, (p, z)) in points.iter().zip(&observed).enumerate() {
            let w = if k == 0 { w0c } else { wi };
            let dx = p - &self.belief.mean;
            let dz = z - &y_mean;
            cross += (dx * dz.transpose()) * w;
        }
        let s_inv = y_cov.clone().try_inverse().ok_or(FilterError::Numerical {
            context: "ukf innovation covariance inversion",
        })?;
        let gain = cross * s_inv;
        let innovation = DVector::from_column_slice(y.as_slice()) - y_mean;
        self.belief.mean += &gain * innovation;
        self.belief.cov = &self.belief.cov - &gain * y_cov * gain.transpose();
        self.belief.cov = (&self.belief.cov + self.belief.cov.transpose()) * 0.5;
        Ok(())
    }
}

impl OnlineFilter for UnscentedKalmanFilter {
    fn estimate(&mut self, y: &MeasVec) -> Result<StateVec, FilterError> {
        if self.t > 0 {
            self.predict()?;
        }
        self.update(y)?;
        self.t += 1;
        StateVec::new(self.belief.mean.as_slice().to_vec())
            .map_err(|_| FilterError::NonFiniteEstimate { step: self.t - 1 })
    }
}

/// One predict/update cycle on an explicit belief, matching the streaming
/// filter exactly. The first step (`t = 0`) is update-only.
pub fn ukf_step(
    belief: &UkfBelief,
    y: &MeasVec,
    system: &ExplicitSystem,
    params: &UkfParams,
    t: usize,
) -> Result<UkfBelief, FilterError> {
    let mut filter = UnscentedKalmanFilter::new(system, *params)?;
    filter.belief = belief.clone();
    filter.t = t;
    if t > 0 {
        filter.predict()?;
    }
    filter.update(y)?;
    Ok(filter.belief)
}
