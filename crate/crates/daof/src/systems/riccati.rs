//! Stationary Kalman gain via the discrete algebraic Riccati fixed point.

use nalgebra::DMatrix;

use super::{ExplicitSystem, SystemModel, SystemsError};
use crate::noise::MeasurementNoise;

/// Steady-state Kalman filter quantities for a linear-Gaussian system.
#[derive(Clone, Debug)]
pub struct StationaryKf {
    /// Steady gain `K = P^- C^T (C P^- C^T + R)^-1`.
    pub gain: DMatrix<f64>,
    /// Steady prediction covariance `P^-`.
    pub prior_cov: DMatrix<f64>,
    /// Steady posterior covariance `(I - K C) P^-`.
    pub posterior_cov: DMatrix<f64>,
    /// Fixed-point residual of the final iterate.
    pub residual: f64,
}

/// Iterates the prediction-covariance Riccati recursion
/// `P^- <- A (P^- - P^- C^T (C P^- C^T + R)^-1 C P^-) A^T + Q`
/// from `p0` to a fixed point.
pub fn dare_fixed_point(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p0: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<StationaryKf, SystemsError> {
    let mut p = p0.clone();
    let mut residual = f64::INFINITY;
    for iterations in 0..max_iter {
        let s = c * &p * c.transpose() + r;
        let s_inv = s
            .try_inverse()
            .ok_or(SystemsError::NotLinearGaussian {
                reason: "innovation covariance singular",
            })?;
        let gain = &p * c.transpose() * &s_inv;
        let posterior = &p - &gain * c * &p;
        let next = a * &posterior * a.transpose() + q;
        residual = (&next - &p).abs().max();
        p = next;
        if residual < tol {
            let s = c * &p * c.transpose() + r;
            let s_inv = s.try_inverse().ok_or(SystemsError::NotLinearGaussian {
                reason: "innovation covariance singular",
            })?;
            let gain = &p * c.transpose() * &s_inv;
            let posterior = &p - &gain * c * &p;
            let _ = iterations;
            return Ok(StationaryKf {
                gain,
                prior_cov: p,
                posterior_cov: posterior,
                residual,
            });
        }
    }
    Err(SystemsError::RiccatiDiverged {
        residual,
        iterations: max_iter,
    })
}

/// Stationary gain and covariance for a linear system with Gaussian noises.
/// Rejects nonlinear models and heavy-tailed measurement noise.
pub fn kf_reference(system: &ExplicitSystem) -> Result<StationaryKf, SystemsError> {
    let model = match &system.model {
        SystemModel::Linear(l) => l,
        SystemModel::Bicycle(_) => {
            return Err(SystemsError::NotLinearGaussian {
                reason: "transition model is nonlinear",
            })
        }
    };
    let n = model.a.nrows();
    let m = model.c.nrows();
    let q = match &system.process_noise {
        Some(g) => {
            if g.num_components() != 1 {
                return Err(SystemsError::NotLinearGaussian {
                    reason: "process noise is a multi-component mixture",
                });
            }
            if g.mean().iter().any(|v| *v != 0.0) {
                return Err(SystemsError::NotLinearGaussian {
                    reason: "process noise has nonzero mean",
                });
            }
            DMatrix::from_row_slice(n, n, &g.covariance())
        }
        None => DMatrix::zeros(n, n),
    };
    let r = match &system.measurement_noise {
        Some(MeasurementNoise::Gaussian(g)) => {
            if g.num_components() != 1 || g.mean().iter().any(|v| *v != 0.0) {
                return Err(SystemsError::NotLinearGaussian {
                    reason: "measurement noise is not zero-mean Gaussian",
                });
            }
            DMatrix::from_row_slice(m, m, &g.covariance())
        }
        Some(MeasurementNoise::Laplace(_)) => {
            return Err(SystemsError::NotLinearGaussian {
                reason: "measurement noise is Laplace",
            })
        }
        None => DMatrix::zeros(m, m),
    };
    let p0 = DMatrix::from_row_slice(n, n, system.initial.cov_row_major());
    dare_fixed_point(&model.a, &model.c, &q, &r, &p0, 1e-12, 100_000)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_riccati_hand_algebra() {
        // a = 0, c = 1, q = 1, r = 1: P^- = q = 1, gain = P/(P + r) = 0.5.
        let sol = dare_fixed_point(
            &dmatrix![0.0],
            &dmatrix![1.0],
            &dmatrix![1.0],
            &dmatrix![1.0],
            &dmatrix![1.0],
            1e-12,
            100_000,
        )
        .unwrap();
        assert!((sol.prior_cov[(0, 0)] - 1.0).abs() < 1e-10);
        assert!((sol.gain[(0, 0)] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn uninformative_measurements_drive_gain_to_zero() {
        let sol = dare_fixed_point(
            &dmatrix![0.9],
            &dmatrix![1.0],
            &dmatrix![0.01],
            &dmatrix![1e12],
            &dmatrix![0.01],
            1e-12,
            100_000,
        )
        .unwrap();
        assert!(sol.gain[(0, 0)].abs() < 1e-9, "gain {}", sol.gain[(0, 0)]);
    }

    #[test]
    fn known_static_state_keeps_zero_gain() {
        // a = 1, c = 1, q = 0, r = 1, P0 = 0: the state is already perfectly
        // known, so the gain stays zero.
        let sol = dare_fixed_point(
            &dmatrix![1.0],
            &dmatrix![1.0],
            &dmatrix![0.0],
            &dmatrix![1.0],
            &dmatrix![0.0],
            1e-12,
            100_000,
        )
        .unwrap();
        assert_eq!(sol.gain[(0, 0)], 0.0);
        assert_eq!(sol.prior_cov[(0, 0)], 0.0);
    }

    #[test]
    fn fixed_point_residual_is_tiny() {
        let a = dmatrix![0.95, 0.05; -0.05, 0.9];
        let c = dmatrix![1.0, 0.0; 0.0, 1.0];
        let q = dmatrix![0.01, 0.0; 0.0, 0.01];
        let r = dmatrix![0.04, 0.0; 0.0, 0.04];
        let sol = dare_fixed_point(&a, &c, &q, &r, &q, 1e-12, 100_000).unwrap();
        // Re-apply the recursion once; the iterate must be a fixed point.
        let s = &c * &sol.prior_cov * c.transpose() + &r;
        let gain = &sol.prior_cov * c.transpose() * s.try_inverse().unwrap();
        let posterior = &sol.prior_cov - &gain * &c * &sol.prior_cov;
        let next = &a * posterior * a.transpose() + &q;
        let residual = (&next - &sol.prior_cov).abs().max();
        assert!(residual < 1e-10, "residual {residual}");
    }
}
