//! Bootstrap particle filter: propagate through the transition model with
//! process-noise draws, reweight by the measurement log-density, estimate by
//! the weighted mean, and resample systematically when the effective sample
//! size drops below a threshold fraction.

use super::{FilterError, OnlineFilter};
use crate::core::{MeasVec, Rng, StateVec};
use crate::systems::ExplicitSystem;

#[derive(Clone, Copy, Debug)]
pub struct PfConfig {
    pub particles: usize,
    /// Resample when `ESS < ess_threshold * particles`.
    pub ess_threshold: f64,
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            particles: 1000,
            ess_threshold: 0.5,
        }
    }
}

pub struct ParticleFilter {
    system: ExplicitSystem,
    cfg: PfConfig,
    /// `particles x n`, row-major.
    states: Vec<f64>,
    propagated: Vec<f64>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    noise_buf: Vec<f64>,
    meas_buf: Vec<f64>,
    resid_buf: Vec<f64>,
    rng: Rng,
    t: usize,
    /// Incremented whenever every particle had zero likelihood and the
    /// weights fell back to uniform.
    pub degeneracy_warnings: usize,
    pub resample_count: usize,
}

impl ParticleFilter {
    pub fn new(system: &ExplicitSystem, cfg: PfConfig, mut rng: Rng) -> Self {
        let n = system.state_dim();
        let p = cfg.particles;
        let mut states = vec![0.0; p * n];
        for k in 0..p {
            let x = system.initial.sample(&mut rng);
            states[k * n..(k + 1) * n].copy_from_slice(x.as_slice());
        }
        Self {
            system: system.clone(),
            cfg,
            states,
            propagated: vec![0.0; p * n],
            log_weights: vec![0.0; p],
            weights: vec![1.0 / p as f64; p],
            noise_buf: vec![0.0; n],
            meas_buf: vec![0.0; system.meas_dim()],
            resid_buf: vec![0.0; system.meas_dim()],
            rng,
            t: 0,
            degeneracy_warnings: 0,
            resample_count: 0,
        }
    }

    /// Places particles at an exact state; test hook.
    pub fn set_all_particles(&mut self, x: &StateVec) {
        let n = self.system.state_dim();
        for k in 0..self.cfg.particles {
            self.states[k * n..(k + 1) * n].copy_from_slice(x.as_slice());
        }
    }

    fn propagate(&mut self) {
        let n = self.system.state_dim();
        for k in 0..self.cfg.particles {
            let src = &self.states[k * n..(k + 1) * n];
            let dst = &mut self.propagated[k * n..(k + 1) * n];
            self.system.model.transition_into(src, self.t - 1, self.system.dt, dst);
            if let Some(noise) = &self.system.process_noise {
                noise.sample_into(&mut self.rng, &mut self.noise_buf);
                for (d, z) in dst.iter_mut().zip(&self.noise_buf) {
                    *d += *z;
                }
            }
        }
        std::mem::swap(&mut self.states, &mut self.propagated);
    }

    fn reweight(&mut self, y: &MeasVec) -> Result<(), FilterError> {
        let Some(noise) = &self.system.measurement_noise else {
            return Ok(());
        };
        let n = self.system.state_dim();
        for k in 0..self.cfg.particles {
            let x = &self.states[k * n..(k + 1) * n];
            self.system
                .model
                .measure_into(x, self.t, self.system.dt, &mut self.meas_buf);
            for (r, (yv, gv)) in self
                .resid_buf
                .iter_mut()
                .zip(y.as_slice().iter().zip(&self.meas_buf))
            {
                *r = yv - gv;
            }
            self.log_weights[k] += noise.logpdf(&self.resid_buf)?;
        }
        Ok(())
    }
}

/// Log-sum-exp normalization of `log_weights` into `weights`. Returns `false`
/// when every weight is impossible (all `-inf`/non-finite), in which case the
/// weights are reset to uniform.
pub(crate) fn normalize_weights(log_weights: &mut [f64], weights: &mut [f64]) -> bool {
    let max = log_weights
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let p = weights.len() as f64;
        weights.iter_mut().for_each(|w| *w = 1.0 / p);
        log_weights.iter_mut().for_each(|lw| *lw = 0.0);
        return false;
    }
    let mut total = 0.0;
    for (w, lw) in weights.iter_mut().zip(log_weights.iter()) {
        *w = (lw - max).exp();
        total += *w;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    true
}

/// Systematic resampling: one uniform offset, `P` evenly spaced positions
/// against the cumulative weights. Returns the chosen particle indices.
pub fn systematic_resample(weights: &[f64], u0: f64) -> Vec<usize> {
    let p = weights.len();
    let mut indices = Vec::with_capacity(p);
    let step = 1.0 / p as f64;
    let mut position = u0 * step;
    let mut cumulative = weights[0];
    let mut k = 0;
    for _ in 0..p {
        while position > cumulative && k + 1 < p {
            k += 1;
            cumulative += weights[k];
        }
        indices.push(k);
        position += step;
    }
    indices
}

impl OnlineFilter for ParticleFilter {
    fn estimate(&mut self, y: &MeasVec) -> Result<StateVec, FilterError> {
        if self.t > 0 {
            self.propagate();
        }
        self.reweight(y)?;
        if !normalize_weights(&mut self.log_weights, &mut self.weights) {
            self.degeneracy_warnings += 1;
        }

        let n = self.system.state_dim();
        let mut mean = vec![0.0; n];
        let mut ess_denom = 0.0;
        for k in 0..self.cfg.particles {
            let w = self.weights[k];
            ess_denom += w * w;
            let x = &self.states[k * n..(k + 1) * n];
            for (m, v) in mean.iter_mut().zip(x) {
                *m += w * v;
            }
        }

        let ess = 1.0 / ess_denom;
        if ess < self.cfg.ess_threshold * self.cfg.particles as f64 {
            let indices = systematic_resample(&self.weights, self.rng.uniform());
            for (slot, &src) in indices.iter().enumerate() {
                let (dst, src_row) = (slot * n, src * n);
                for j in 0..n {
                    self.propagated[dst + j] = self.states[src_row + j];
                }
            }
            std::mem::swap(&mut self.states, &mut self.propagated);
            self.log_weights.iter_mut().for_each(|lw| *lw = 0.0);
            self.weights
                .iter_mut()
                .for_each(|w| *w = 1.0 / self.cfg.particles as f64);
            self.resample_count += 1;
        }

        self.t += 1;
        StateVec::new(mean).map_err(|_| FilterError::NonFiniteEstimate { step: self.t - 1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::KalmanFilter;
    use crate::noise::{GaussianMixture, MeasurementNoise};
    use crate::systems::{simulate, GaussianInit, LinearModel, SystemModel};
    use nalgebra::dmatrix;

    fn scalar_lg_system() -> ExplicitSystem {
        ExplicitSystem {
            model: SystemModel::Linear(LinearModel::new(dmatrix![0.9], dmatrix![1.0])),
            process_noise: Some(
                GaussianMixture::diagonal_gaussian(vec![0.0], vec![0.04]).unwrap(),
            ),
            measurement_noise: Some(MeasurementNoise::Gaussian(
                GaussianMixture::diagonal_gaussian(vec![0.0], vec![0.09]).unwrap(),
            )),
            initial: GaussianInit::diagonal(StateVec::zeros(1), &[0.25]).unwrap(),
            dt: 1.0,
        }
    }

    #[test]
    fn pf_matches_kf_posterior_mean_on_scalar_task() {
        let sys = scalar_lg_system();
        let particles = 100_000;
        let mut pf = ParticleFilter::new(
            &sys,
            PfConfig {
                particles,
                ess_threshold: 0.5,
            },
            Rng::new(41),
        );
        let mut kf = KalmanFilter::new(&sys).unwrap();
        let traj = simulate(&sys, 100, &mut Rng::new(40));
        let mut abs_gap_sum = 0.0;
        let mut std_sum = 0.0;
        for y in &traj.measurements {
            let a = pf.estimate(y).unwrap();
            let b = kf.estimate(y).unwrap();
            abs_gap_sum += (a[0] - b[0]).abs();
            std_sum += kf.cov()[(0, 0)].sqrt();
        }
        let steps = traj.len() as f64;
        let bound = 3.0 * (std_sum / steps) / (particles as f64).sqrt();
        let avg_gap = abs_gap_sum / steps;
        assert!(
            avg_gap < bound,
            "time-averaged |PF - KF| = {avg_gap:.2e}, bound {bound:.2e}"
        );
    }

    #[test]
    fn noise_free_particles_at_truth_stay_exact() {
        let sys = ExplicitSystem {
            model: SystemModel::Linear(LinearModel::new(dmatrix![0.5], dmatrix![1.0])),
            process_noise: None,
            measurement_noise: None,
            initial: GaussianInit::deterministic(StateVec::new(vec![1.0]).unwrap()),
            dt: 1.0,
        };
        let mut pf = ParticleFilter::new(
            &sys,
            PfConfig {
                particles: 16,
                ess_threshold: 0.5,
            },
            Rng::new(1),
        );
        pf.set_all_particles(&StateVec::new(vec![1.0]).unwrap());
        let mut truth = 1.0;
        for t in 0..5 {
            let y = MeasVec::new(vec![truth]).unwrap();
            let est = pf.estimate(&y).unwrap();
            assert_eq!(est[0], truth, "step {t}");
            truth *= 0.5;
        }
    }

    #[test]
    fn systematic_resample_point_mass_selects_it() {
        let weights = [1.0, 0.0, 0.0, 0.0];
        for u0 in [0.0, 0.3, 0.77, 0.999] {
            let idx = systematic_resample(&weights, u0);
            assert!(idx.iter().all(|&i| i == 0), "u0={u0}: {idx:?}");
        }
    }

    #[test]
    fn systematic_resample_is_unbiased() {
        let mut rng = Rng::new(55);
        let raw: Vec<f64> = (0..10).map(|_| rng.uniform_range(0.5, 1.5)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let p = weights.len();
        let rounds = 10_000;
        let mut counts = vec![0usize; p];
        for _ in 0..rounds {
            for idx in systematic_resample(&weights, rng.uniform()) {
                counts[idx] += 1;
            }
        }
        for i in 0..p {
            let expected = p as f64 * weights[i];
            let observed = counts[i] as f64 / rounds as f64;
            let rel = (observed - expected).abs() / expected;
            assert!(
                rel < 0.02,
                "particle {i}: observed {observed:.4}, expected {expected:.4}"
            );
        }
    }

    #[test]
    fn estimate_invariant_to_uniform_log_weight_shift() {
        let mut lw_a: Vec<f64> = vec![-1.0, -2.0, -0.5, -3.0];
        let mut lw_b: Vec<f64> = lw_a.iter().map(|v| v + 123.456).collect();
        let mut wa = vec![0.0; 4];
        let mut wb = vec![0.0; 4];
        assert!(normalize_weights(&mut lw_a, &mut wa));
        assert!(normalize_weights(&mut lw_b, &mut wb));
        for (a, b) in wa.iter().zip(&wb) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn impossible_measurement_falls_back_to_uniform() {
        let mut lw = vec![f64::NEG_INFINITY; 4];
        let mut w = vec![0.0; 4];
        assert!(!normalize_weights(&mut lw, &mut w));
        assert!(w.iter().all(|v| (*v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn pf_steps_are_pure_given_seed() {
        let sys = scalar_lg_system();
        let traj = simulate(&sys, 30, &mut Rng::new(9));
        let cfg = PfConfig {
            particles: 200,
            ess_threshold: 0.5,
        };
        let mut a = ParticleFilter::new(&sys, cfg, Rng::new(77));
        let mut b = ParticleFilter::new(&sys, cfg, Rng::new(77));
        for y in &traj.measurements {
            let ea = a.estimate(y).unwrap();
            let eb = b.estimate(y).unwrap();
            assert_eq!(ea, eb);
        }
    }
}
