//! Builds domain objects from the resolved configuration.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use daof::bench::{FilterSpec, SystemScenario};
use daof::core::StateVec;
use daof::filters::{PfConfig, SlfTrainConfig, UkfParams};
use daof::nn::{checkpoint_load, checkpoint_save, CheckpointMeta, MlpNet};
use daof::noise::{GaussianMixture, LaplaceNoise, MeasurementNoise, NoiseError};
use daof::rl::{DaofPolicy, DaofVariant, TrainConfig, TransitionHandle};
use daof::systems::{
    Bicycle2Dof, ExplicitSystem, GaussianInit, LinearModel, OpaqueVehicleSpec, SystemModel,
    SystemsError, VehicleSurrogateParams,
};

use crate::config::Config;

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("invalid config: {reason}")]
    Invalid { reason: String },
    #[error("noise model: {0}")]
    Noise(#[from] NoiseError),
    #[error("system: {0}")]
    System(#[from] SystemsError),
    #[error("checkpoint for filter '{filter}' at {path} cannot be loaded: {reason}")]
    Checkpoint {
        filter: String,
        path: std::path::PathBuf,
        reason: String,
    },
}

fn invalid(reason: impl Into<String>) -> AssembleError {
    AssembleError::Invalid {
        reason: reason.into(),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, AssembleError> {
    let r = rows.len();
    let c = rows.first().map(Vec::len).unwrap_or(0);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(invalid(format!("{what} must be a non-empty rectangular matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

pub fn build_process_noise(cfg: &Config) -> Result<Option<GaussianMixture>, AssembleError> {
    let pn = &cfg.noise.process;
    match pn.kind.as_str() {
        "none" => Ok(None),
        "gmm" => Ok(Some(GaussianMixture::new(
            pn.weights.clone(),
            pn.means.clone(),
            pn.covariances.clone(),
        )?)),
        "gaussian" => {
            if !pn.cov_diag.is_empty() {
                let mean = if pn.means.is_empty() {
                    vec![0.0; pn.cov_diag.len()]
                } else {
                    pn.means[0].clone()
                };
                Ok(Some(GaussianMixture::diagonal_gaussian(mean, pn.cov_diag.clone())?))
            } else {
                let mean = pn
                    .means
                    .first()
                    .cloned()
                    .ok_or_else(|| invalid("gaussian process noise needs means or cov_diag"))?;
                let cov = pn
                    .covariances
                    .first()
                    .cloned()
                    .ok_or_else(|| invalid("gaussian process noise needs covariances"))?;
                Ok(Some(GaussianMixture::gaussian(mean, cov)?))
            }
        }
        "default" => match cfg.system.kind.as_str() {
            "bicycle2dof" => Ok(Some(GaussianMixture::new(
                vec![0.8, 0.2],
                vec![vec![0.0, 0.0], vec![0.01, 0.04]],
                vec![
                    vec![2.5e-5, 0.0, 0.0, 4e-4],
                    vec![1e-4, 0.0, 0.0, 1.6e-3],
                ],
            )?)),
            "linear" => {
                let n = cfg.system.linear.a.len();
                Ok(Some(GaussianMixture::diagonal_gaussian(
                    vec![0.0; n],
                    vec![0.01; n],
                )?))
            }
            _ => Ok(None),
        },
        other => Err(invalid(format!("unknown process noise kind '{other}'"))),
    }
}

pub fn build_measurement_noise(cfg: &Config) -> Result<Option<MeasurementNoise>, AssembleError> {
    let mn = &cfg.noise.measurement;
    match mn.kind.as_str() {
        "none" => Ok(None),
        "laplace" => {
            let location = if mn.location.is_empty() {
                vec![0.0; mn.scale.len()]
            } else {
                mn.location.clone()
            };
            Ok(Some(MeasurementNoise::Laplace(LaplaceNoise::new(
                location,
                mn.scale.clone(),
            )?)))
        }
        "gaussian" => Ok(Some(MeasurementNoise::Gaussian(
            GaussianMixture::diagonal_gaussian(
                vec![0.0; mn.cov_diag.len()],
                mn.cov_diag.clone(),
            )?,
        ))),
        "default" => match cfg.system.kind.as_str() {
            "bicycle2dof" => Ok(Some(MeasurementNoise::Laplace(LaplaceNoise::new(
                vec![0.0, 0.0],
                vec![1.0, 0.1],
            )?))),
            "linear" => {
                let m = cfg.system.linear.c.len();
                Ok(Some(MeasurementNoise::Gaussian(
                    GaussianMixture::diagonal_gaussian(vec![0.0; m], vec![0.04; m])?,
                )))
            }
            _ => Ok(None),
        },
        other => Err(invalid(format!("unknown measurement noise kind '{other}'"))),
    }
}

pub fn build_explicit_system(cfg: &Config) -> Result<ExplicitSystem, AssembleError> {
    let model = match cfg.system.kind.as_str() {
        "linear" => {
            let lc = &cfg.system.linear;
            let a = matrix_from_rows(&lc.a, "system.linear.a")?;
            let c = matrix_from_rows(&lc.c, "system.linear.c")?;
            if a.nrows() != a.ncols() || c.ncols() != a.ncols() {
                return Err(invalid("linear system dimensions are inconsistent"));
            }
            SystemModel::Linear(LinearModel::new(a, c))
        }
        "bicycle2dof" => {
            let bc = &cfg.system.bicycle2dof;
            SystemModel::Bicycle(Bicycle2Dof {
                mass: bc.mass,
                yaw_inertia: bc.yaw_inertia,
                lf: bc.lf,
                lr: bc.lr,
                tire_b: bc.tire_b,
                tire_c: bc.tire_c,
                tire_d: bc.tire_d.unwrap_or(0.75 * bc.mass * 9.81 / 2.0),
                speed: bc.speed,
                steer_amp: bc.steer_amp,
                steer_omega: bc.steer_omega,
            })
        }
        other => {
            return Err(invalid(format!(
                "system kind '{other}' does not define an explicit model"
            )))
        }
    };
    let (init_mean, init_cov) = match cfg.system.kind.as_str() {
        "linear" => (
            cfg.system.linear.init_mean.clone(),
            cfg.system.linear.init_cov_diag.clone(),
        ),
        _ => (
            cfg.system.bicycle2dof.init_mean.clone(),
            cfg.system.bicycle2dof.init_cov_diag.clone(),
        ),
    };
    if init_mean.len() != model.state_dim() || init_cov.len() != model.state_dim() {
        return Err(invalid("initial distribution dimensions do not match the state"));
    }
    Ok(ExplicitSystem {
        model,
        process_noise: build_process_noise(cfg)?,
        measurement_noise: build_measurement_noise(cfg)?,
        initial: GaussianInit::diagonal(
            StateVec::new(init_mean).map_err(|e| invalid(e.to_string()))?,
            &init_cov,
        )?,
        dt: cfg.system.dt,
    })
}

pub fn build_opaque_spec(cfg: &Config) -> Result<OpaqueVehicleSpec, AssembleError> {
    let oc = &cfg.system.opaque_vehicle;
    let mut spec = OpaqueVehicleSpec::default_noisy();
    spec.params = VehicleSurrogateParams {
        steer_max: oc.steer_max,
        steer_ramp_s: oc.steer_ramp_s,
        steer_dither: oc.steer_dither,
        steer_dither_hz: oc.steer_dither_hz,
        drive_force: oc.drive_force,
        dt: cfg.system.dt,
        ..VehicleSurrogateParams::default()
    };
    if oc.init_mean.len() != 5 || oc.init_std.len() != 5 {
        return Err(invalid("opaque vehicle initial vectors must have length 5"));
    }
    spec.init_mean = oc.init_mean.clone();
    spec.init_std = oc.init_std.clone();
    spec.seed_offset = cfg.seed;
    if cfg.noise.process.kind != "default" {
        spec.process_noise = build_process_noise(cfg)?;
    }
    if cfg.noise.measurement.kind != "default" {
        spec.measurement_noise = build_measurement_noise(cfg)?;
    }
    Ok(spec)
}

pub fn build_scenario(cfg: &Config) -> Result<SystemScenario, AssembleError> {
    match cfg.system.kind.as_str() {
        "linear" | "bicycle2dof" => Ok(SystemScenario::Explicit(build_explicit_system(cfg)?)),
        "opaque_vehicle" => Ok(SystemScenario::OpaqueVehicle(build_opaque_spec(cfg)?)),
        other => Err(invalid(format!("unknown system kind '{other}'"))),
    }
}

pub fn build_train_config(cfg: &Config, variant: DaofVariant) -> TrainConfig {
    let section = match variant {
        DaofVariant::V1 => &cfg.daof.v1,
        DaofVariant::V2 => &cfg.daof.v2,
    };
    let t = &cfg.train;
    TrainConfig {
        variant,
        window_len: section.window,
        hidden: section.hidden.clone(),
        gamma: t.gamma,
        actor_lr: t.actor_lr,
        critic_lr: t.critic_lr,
        batch_size: t.batch_size,
        replay_capacity: t.replay_capacity,
        warmup_steps: t.warmup_steps,
        max_steps: t.max_steps,
        policy_delay: t.policy_delay,
        tau: t.tau,
        explore_sigma_init: t.explore_sigma_init,
        explore_sigma_final: t.explore_sigma_final,
        explore_anneal_steps: t.explore_anneal_steps,
        target_noise_sigma: t.target_noise_sigma,
        target_noise_clip: t.target_noise_clip,
        action_clip: t.action_clip,
        grad_clip: if t.grad_clip > 0.0 { Some(t.grad_clip) } else { None },
        reward_scale: t.reward_scale,
        scale_warmup_episodes: t.scale_warmup_episodes,
        eval_interval: t.eval_interval,
        eval_runs: t.eval_runs,
        eval_steps: t.eval_steps,
        plateau_window: t.plateau_window,
        plateau_tol: t.plateau_tol,
        divergence_factor: t.divergence_factor,
        divergence_grace_evals: t.divergence_grace_evals,
        keep_best: t.keep_best,
        seed: cfg.seed,
        estimate_clip: t.estimate_clip,
    }
}

pub fn build_slf_config(cfg: &Config) -> SlfTrainConfig {
    let s = &cfg.filter.slf;
    SlfTrainConfig {
        hidden: s.hidden.clone(),
        window_len: s.window,
        lr: s.lr,
        batch_size: s.batch,
        epochs: s.epochs,
        episodes_per_epoch: s.episodes_per_epoch,
        seed: cfg.seed,
    }
}

pub fn transition_handle(cfg: &Config) -> Result<TransitionHandle, AssembleError> {
    let system = build_explicit_system(cfg)?;
    Ok(TransitionHandle {
        model: system.model,
        dt: cfg.system.dt,
    })
}

/// Sidecar metadata for supervised-filter checkpoints.
#[derive(Serialize, Deserialize)]
pub struct SlfMeta {
    pub kind: String,
    pub window_len: usize,
    pub state_dim: usize,
    pub meas_dim: usize,
}

pub fn save_slf_checkpoint(
    path: &std::path::Path,
    net: &MlpNet,
    window_len: usize,
    state_dim: usize,
    meas_dim: usize,
    config_hash: &str,
    train_steps: u64,
) -> Result<(), AssembleError> {
    let meta = CheckpointMeta {
        config_hash: config_hash.to_string(),
        train_steps,
        extra: serde_json::to_string(&SlfMeta {
            kind: "slf".into(),
            window_len,
            state_dim,
            meas_dim,
        })
        .expect("slf metadata serializes"),
    };
    checkpoint_save(path, net, None, &meta).map_err(|e| AssembleError::Checkpoint {
        filter: "slf".into(),
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn load_slf_checkpoint(
    path: &std::path::Path,
) -> Result<(MlpNet, SlfMeta, CheckpointMeta), AssembleError> {
    let (net, _, meta) = checkpoint_load(path).map_err(|e| AssembleError::Checkpoint {
        filter: "slf".into(),
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let parsed: SlfMeta =
        serde_json::from_str(&meta.extra).map_err(|e| AssembleError::Checkpoint {
            filter: "slf".into(),
            path: path.to_path_buf(),
            reason: format!("metadata is not an slf header: {e}"),
        })?;
    Ok((net, parsed, meta))
}

/// Builds the benchmark roster, loading referenced checkpoints.
pub fn build_roster(cfg: &Config) -> Result<Vec<FilterSpec>, AssembleError> {
    let mut roster = Vec::with_capacity(cfg.bench.roster.len());
    for name in &cfg.bench.roster {
        let spec = match name.as_str() {
            "ukf" => FilterSpec::Ukf(UkfParams {
                alpha: cfg.filter.ukf.alpha,
                beta: cfg.filter.ukf.beta,
                kappa: cfg.filter.ukf.kappa,
            }),
            "pf" => FilterSpec::Pf(PfConfig {
                particles: cfg.filter.pf.particles,
                ess_threshold: cfg.filter.pf.ess_threshold,
            }),
            "kf" => FilterSpec::Kf,
            "stationary_kf" => FilterSpec::StationaryKf,
            "zoh" => FilterSpec::Zoh,
            "oracle" => FilterSpec::Oracle,
            "slf" => {
                let path = cfg.bench.checkpoints.get("slf").ok_or_else(|| {
                    invalid("roster includes 'slf' but bench.checkpoints.slf is not set")
                })?;
                let (net, meta, _) = load_slf_checkpoint(path)?;
                FilterSpec::Slf {
                    net,
                    window_len: meta.window_len,
                }
            }
            "daof_v1" | "daof_v2" => {
                let path = cfg.bench.checkpoints.get(name.as_str()).ok_or_else(|| {
                    invalid(format!(
                        "roster includes '{name}' but bench.checkpoints.{name} is not set"
                    ))
                })?;
                let handle = if name == "daof_v1" {
                    Some(transition_handle(cfg)?)
                } else {
                    None
                };
                let (policy, _) =
                    DaofPolicy::load(path, handle).map_err(|e| AssembleError::Checkpoint {
                        filter: name.clone(),
                        path: path.clone(),
                        reason: e.to_string(),
                    })?;
                let expected = if name == "daof_v1" {
                    DaofVariant::V1
                } else {
                    DaofVariant::V2
                };
                if policy.variant != expected {
                    return Err(AssembleError::Checkpoint {
                        filter: name.clone(),
                        path: path.clone(),
                        reason: format!(
                            "checkpoint holds a {} policy, roster expects {expected}",
                            policy.variant
                        ),
                    });
                }
                FilterSpec::Daof { policy }
            }
            other => return Err(invalid(format!("unknown roster filter '{other}'"))),
        };
        roster.push(spec);
    }
    Ok(roster)
}
