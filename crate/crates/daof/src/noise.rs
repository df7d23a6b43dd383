//! Noise models: Gaussian mixtures for process disturbances, componentwise
//! Laplace for heavy-tailed measurement outliers, plain Gaussians as the K=1
//! mixture special case.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::core::Rng;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("mixture weights must be nonnegative and sum to 1 (sum = {sum})")]
    BadWeights { sum: f64 },
    #[error("mixture component {index} has mismatched dimension {got}, expected {expected}")]
    ComponentDim {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("covariance of component {index} is not symmetric positive definite")]
    NotSpd { index: usize },
    #[error("Laplace scale must be strictly positive (component {index})")]
    BadScale { index: usize },
    #[error("dimension mismatch: model dimension {model}, input dimension {input}")]
    DimMismatch { model: usize, input: usize },
    #[error("mixture must have at least one component")]
    EmptyMixture,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One Gaussian mixture component, pre-factorized for sampling and density
/// evaluation.
#[derive(Clone, Debug)]
struct Component {
    mean: DVector<f64>,
    /// Lower Cholesky factor of the covariance.
    chol: DMatrix<f64>,
    /// log det(covariance)
    log_det: f64,
}

/// Gaussian mixture over `d`-dimensional vectors.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<Component>,
    dim: usize,
}

impl GaussianMixture {
    /// Builds a mixture from weights, means, and covariance matrices
    /// (row-major `d*d` entries each). Weights must sum to 1 within 1e-12 and
    /// every covariance must be SPD.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<f64>>,
    ) -> Result<Self, NoiseError> {
        if weights.is_empty() {
            return Err(NoiseError::EmptyMixture);
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(NoiseError::BadWeights { sum });
        }
        if means.len() != weights.len() || covariances.len() != weights.len() {
            return Err(NoiseError::ComponentDim {
                index: 0,
                got: means.len().min(covariances.len()),
                expected: weights.len(),
            });
        }
        let dim = means[0].len();
        let mut components = Vec::with_capacity(weights.len());
        for (index, (mean, cov)) in means.into_iter().zip(covariances).enumerate() {
            if mean.len() != dim {
                return Err(NoiseError::ComponentDim {
                    index,
                    got: mean.len(),
                    expected: dim,
                });
            }
            if cov.len() != dim * dim {
                return Err(NoiseError::ComponentDim {
                    index,
                    got: cov.len(),
                    expected: dim * dim,
                });
            }
            let cov = DMatrix::from_row_slice(dim, dim, &cov);
            let chol = cov
                .clone()
                .cholesky()
                .ok_or(NoiseError::NotSpd { index })?;
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            components.push(Component {
                mean: DVector::from_vec(mean),
                chol: chol.l(),
                log_det,
            });
        }
        Ok(Self {
            weights,
            components,
            dim,
        })
    }

    /// Single zero-mean Gaussian with the given covariance.
    pub fn gaussian(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self, NoiseError> {
        Self::new(vec![1.0], vec![mean], vec![covariance])
    }

    /// Diagonal single Gaussian.
    pub fn diagonal_gaussian(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self, NoiseError> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = variances[i];
        }
        Self::gaussian(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mixture mean: sum of weighted component means.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = DVector::zeros(self.dim);
        for (w, c) in self.weights.iter().zip(&self.components) {
            out += &c.mean * *w;
        }
        out.as_slice().to_vec()
    }

    /// Mixture covariance (moment-matched over all components):
    /// `sum_i w_i (Sigma_i + mu_i mu_i^T) - mu_bar mu_bar^T`, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let mut second = DMatrix::zeros(self.dim, self.dim);
        for (w, c) in self.weights.iter().zip(&self.components) {
            let cov = &c.chol * c.chol.transpose();
            second += (cov + &c.mean * c.mean.transpose()) * *w;
        }
        let mean = DVector::from_vec(self.mean());
        let cov = second - &mean * mean.transpose();
        let mut out = vec![0.0; self.dim * self.dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i * self.dim + j] = cov[(i, j)];
            }
        }
        out
    }

    /// Draws one sample: component index from the categorical weights, then
    /// the component's Gaussian via its Cholesky factor.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }

    /// Allocation-free sampling into a caller-provided buffer.
    pub fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let mut u = rng.uniform();
        let mut idx = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                idx = i;
                break;
            }
            u -= w;
        }
        let c = &self.components[idx];
        out.copy_from_slice(c.mean.as_slice());
        // out += L z with z drawn one component at a time; L is lower
        // triangular so column j only touches rows j..d.
        for j in 0..self.dim {
            let z = rng.normal();
            for i in j..self.dim {
                out[i] += c.chol[(i, j)] * z;
            }
        }
    }

    /// Log density of the mixture at `x`, stabilized with log-sum-exp.
    pub fn logpdf(&self, x: &[f64]) -> Result<f64, NoiseError> {
        if x.len() != self.dim {
            return Err(NoiseError::DimMismatch {
                model: self.dim,
                input: x.len(),
            });
        }
        let xv = DVector::from_column_slice(x);
        let mut terms = Vec::with_capacity(self.weights.len());
        for (w, c) in self.weights.iter().zip(&self.components) {
            if *w == 0.0 {
                continue;
            }
            let diff = &xv - &c.mean;
            // Solve L z = diff, then the quadratic form is |z|^2.
            let z = c
                .chol
                .clone()
                .solve_lower_triangular(&diff)
                .expect("Cholesky factor is nonsingular");
            let quad = z.norm_squared();
            terms.push(
                w.ln() - 0.5 * (self.dim as f64 * LN_2PI + c.log_det + quad),
            );
        }
        Ok(log_sum_exp(&terms))
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Componentwise independent Laplace noise with location `mu` and scale `b`.
#[derive(Clone, Debug)]
pub struct LaplaceNoise {
    location: Vec<f64>,
    scale: Vec<f64>,
}

impl LaplaceNoise {
    pub fn new(location: Vec<f64>, scale: Vec<f64>) -> Result<Self, NoiseError> {
        if location.len() != scale.len() {
            return Err(NoiseError::DimMismatch {
                model: location.len(),
                input: scale.len(),
            });
        }
        for (index, b) in scale.iter().enumerate() {
            if !(*b > 0.0) {
                return Err(NoiseError::BadScale { index });
            }
        }
        Ok(Self { location, scale })
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn location(&self) -> &[f64] {
        &self.location
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Componentwise variance `2 b^2`.
    pub fn variances(&self) -> Vec<f64> {
        self.scale.iter().map(|b| 2.0 * b * b).collect()
    }

    /// Inverse-CDF transform of `p` for one component:
    /// `mu - b * sign(p - 1/2) * ln(1 - 2|p - 1/2|)`.
    pub fn inverse_cdf(&self, component: usize, p: f64) -> f64 {
        let mu = self.location[component];
        let b = self.scale[component];
        let q = p - 0.5;
        if q == 0.0 {
            return mu;
        }
        mu - b * q.signum() * (1.0 - 2.0 * q.abs()).ln()
    }

    /// Componentwise inverse-CDF sampling from uniform draws.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.inverse_cdf(i, rng.uniform()))
            .collect()
    }

    /// Log density: `sum_i [-ln(2 b_i) - |x_i - mu_i| / b_i]`.
    pub fn logpdf(&self, x: &[f64]) -> Result<f64, NoiseError> {
        if x.len() != self.dim() {
            return Err(NoiseError::DimMismatch {
                model: self.dim(),
                input: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.location.iter().zip(&self.scale))
            .map(|(x, (mu, b))| -(2.0 * b).ln() - (x - mu).abs() / b)
            .sum())
    }
}

/// Measurement-noise family: heavy-tailed Laplace or a Gaussian (mixture).
#[derive(Clone, Debug)]
pub enum MeasurementNoise {
    Laplace(LaplaceNoise),
    Gaussian(GaussianMixture),
}

impl MeasurementNoise {
    pub fn dim(&self) -> usize {
        match self {
            MeasurementNoise::Laplace(l) => l.dim(),
            MeasurementNoise::Gaussian(g) => g.dim(),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            MeasurementNoise::Laplace(l) => l.sample(rng),
            MeasurementNoise::Gaussian(g) => g.sample(rng),
        }
    }

    pub fn logpdf(&self, x: &[f64]) -> Result<f64, NoiseError> {
        match self {
            MeasurementNoise::Laplace(l) => l.logpdf(x),
            MeasurementNoise::Gaussian(g) => g.logpdf(x),
        }
    }

    /// Moment-matched covariance, row-major: `diag(2 b_i^2)` for Laplace,
    /// the mixture covariance for Gaussians.
    pub fn covariance(&self) -> Vec<f64> {
        match self {
            MeasurementNoise::Laplace(l) => {
                let d = l.dim();
                let mut cov = vec![0.0; d * d];
                for (i, v) in l.variances().into_iter().enumerate() {
                    cov[i * d + i] = v;
                }
                cov
            }
            MeasurementNoise::Gaussian(g) => g.covariance(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal_1d() -> GaussianMixture {
        GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap()
    }

    #[test]
    fn gmm_rejects_bad_weights() {
        let r = GaussianMixture::new(
            vec![0.5, 0.6],
            vec![vec![0.0], vec![0.0]],
            vec![vec![1.0], vec![1.0]],
        );
        assert!(r.is_err());
    }

    #[test]
    fn gmm_rejects_non_spd_covariance() {
        let r = GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![vec![
            1.0, 2.0, 2.0, 1.0,
        ]]);
        assert!(matches!(r, Err(NoiseError::NotSpd { index: 0 })));
    }

    #[test]
    fn gmm_single_component_standard_normal_moments() {
        let g = std_normal_1d();
        let mut rng = Rng::new(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = g.sample(&mut rng)[0];
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "empirical mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "empirical variance {var}");
    }

    #[test]
    fn gmm_degenerate_weight_selects_single_component() {
        let g = GaussianMixture::new(
            vec![1.0, 0.0],
            vec![vec![0.0], vec![100.0]],
            vec![vec![1e-12], vec![1e-12]],
        )
        .unwrap();
        let mut rng = Rng::new(3);
        for _ in 0..1000 {
            let x = g.sample(&mut rng)[0];
            assert!(x.abs() < 1.0, "draw from wrong component: {x}");
        }
    }

    #[test]
    fn gmm_mixture_mean_matches_analytic() {
        let g = GaussianMixture::new(
            vec![0.8, 0.2],
            vec![vec![0.0, 0.0], vec![0.02, 0.05]],
            vec![
                vec![1e-6, 0.0, 0.0, 1e-5],
                vec![4e-6, 0.0, 0.0, 4e-5],
            ],
        )
        .unwrap();
        let analytic = g.mean();
        assert!((analytic[0] - 0.004).abs() < 1e-15);
        assert!((analytic[1] - 0.01).abs() < 1e-15);

        let mut rng = Rng::new(5);
        let n = 100_000;
        let mut sums = [0.0; 2];
        // empirical component std dominated by mean spread; bound via 3 sigma/sqrt(n)
        for _ in 0..n {
            let x = g.sample(&mut rng);
            sums[0] += x[0];
            sums[1] += x[1];
        }
        let cov = g.covariance();
        for i in 0..2 {
            let empirical = sums[i] / n as f64;
            let sigma = cov[i * 2 + i].sqrt();
            let bound = 3.0 * sigma / (n as f64).sqrt();
            assert!(
                (empirical - analytic[i]).abs() < bound,
                "component {i}: empirical {empirical} vs {} (bound {bound})",
                analytic[i]
            );
        }
    }

    #[test]
    fn gmm_logpdf_standard_normal_at_zero() {
        let g = std_normal_1d();
        let lp = g.logpdf(&[0.0]).unwrap();
        assert!((lp - (-0.5 * LN_2PI)).abs() < 1e-12, "got {lp}");
        assert!((lp - (-0.9189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn gmm_logpdf_identical_components_collapse() {
        let single = std_normal_1d();
        let double = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![0.0], vec![0.0]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        for x in [-2.0, -0.5, 0.0, 1.0, 3.0] {
            let a = single.logpdf(&[x]).unwrap();
            let b = double.logpdf(&[x]).unwrap();
            assert!((a - b).abs() < 1e-12, "x={x}: {a} vs {b}");
        }
    }

    #[test]
    fn gmm_logpdf_matches_direct_density_arithmetic() {
        // Independent oracle: sum the two component densities directly.
        let w = [0.4, 0.6];
        let mu = [-1.0, 2.0];
        let var = [0.5, 2.0];
        let g = GaussianMixture::new(
            w.to_vec(),
            vec![vec![mu[0]], vec![mu[1]]],
            vec![vec![var[0]], vec![var[1]]],
        )
        .unwrap();
        for x in [-3.0, -1.0, 0.0, 1.5, 4.0] {
            let direct: f64 = (0..2)
                .map(|i| {
                    w[i] * (-0.5 * (x - mu[i]) * (x - mu[i]) / var[i]).exp()
                        / (2.0 * std::f64::consts::PI * var[i]).sqrt()
                })
                .sum();
            let lp = g.logpdf(&[x]).unwrap();
            assert!(
                (lp - direct.ln()).abs() < 1e-12,
                "x={x}: {lp} vs {}",
                direct.ln()
            );
        }
    }

    #[test]
    fn gmm_logpdf_integrates_to_one() {
        // Quadrature over a wide 1-d grid for a few random mixtures.
        let mut rng = Rng::new(17);
        for _ in 0..5 {
            let w0 = rng.uniform_range(0.1, 0.9);
            let g = GaussianMixture::new(
                vec![w0, 1.0 - w0],
                vec![
                    vec![rng.uniform_range(-2.0, 2.0)],
                    vec![rng.uniform_range(-2.0, 2.0)],
                ],
                vec![
                    vec![rng.uniform_range(0.2, 2.0)],
                    vec![rng.uniform_range(0.2, 2.0)],
                ],
            )
            .unwrap();
            let h = 0.01;
            let total: f64 = (-3000..3000)
                .map(|k| (g.logpdf(&[k as f64 * h]).unwrap()).exp() * h)
                .sum();
            assert!((total - 1.0).abs() < 1e-3, "integral {total}");
        }
    }

    #[test]
    fn laplace_inverse_cdf_median_is_location() {
        let l = LaplaceNoise::new(vec![1.5], vec![0.3]).unwrap();
        assert_eq!(l.inverse_cdf(0, 0.5), 1.5);
    }

    #[test]
    fn laplace_sample_moments() {
        let mu = 0.4;
        let b = 0.25;
        let l = LaplaceNoise::new(vec![mu], vec![b]).unwrap();
        let mut rng = Rng::new(23);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| l.sample(&mut rng)[0]).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[n / 2];
        assert!((median - mu).abs() < 0.01 * b, "median {median}");
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let expect = 2.0 * b * b;
        assert!(
            (var - expect).abs() < 0.05 * expect,
            "variance {var} vs {expect}"
        );
        // 10% / 90% quantiles vs the analytic inverse CDF within 2%
        let q10 = draws[n / 10];
        let q90 = draws[9 * n / 10];
        let a10 = l.inverse_cdf(0, 0.1);
        let a90 = l.inverse_cdf(0, 0.9);
        assert!((q10 - a10).abs() < 0.02 * a10.abs().max(b), "q10 {q10} vs {a10}");
        assert!((q90 - a90).abs() < 0.02 * a90.abs().max(b), "q90 {q90} vs {a90}");
    }

    #[test]
    fn laplace_logpdf_values() {
        let l = LaplaceNoise::new(vec![0.0], vec![1.0]).unwrap();
        let lp = l.logpdf(&[0.0]).unwrap();
        assert!((lp - (-(2.0f64).ln())).abs() < 1e-15);

        let b = 0.7;
        let l = LaplaceNoise::new(vec![0.2], vec![b]).unwrap();
        let lp = l.logpdf(&[0.2 + b]).unwrap();
        assert!((lp - (-(2.0 * b).ln() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn laplace_logpdf_factorizes_over_components() {
        let l2 = LaplaceNoise::new(vec![0.1, -0.3], vec![0.5, 2.0]).unwrap();
        let a = LaplaceNoise::new(vec![0.1], vec![0.5]).unwrap();
        let b = LaplaceNoise::new(vec![-0.3], vec![2.0]).unwrap();
        let x = [0.7, 1.1];
        let joint = l2.logpdf(&x).unwrap();
        let split = a.logpdf(&x[..1]).unwrap() + b.logpdf(&x[1..]).unwrap();
        assert!((joint - split).abs() < 1e-15);
    }

    #[test]
    fn laplace_rejects_nonpositive_scale() {
        assert!(LaplaceNoise::new(vec![0.0], vec![0.0]).is_err());
        assert!(LaplaceNoise::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn samplers_are_seed_deterministic() {
        let g = GaussianMixture::new(
            vec![0.6, 0.4],
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![0.5]],
        )
        .unwrap();
        let l = LaplaceNoise::new(vec![0.0], vec![0.4]).unwrap();
        let mut r1 = Rng::new(99);
        let mut r2 = Rng::new(99);
        for _ in 0..1000 {
            assert_eq!(g.sample(&mut r1), g.sample(&mut r2));
            assert_eq!(l.sample(&mut r1), l.sample(&mut r2));
        }
    }
}
