//! Layered experiment configuration: a TOML document merged with
//! command-line `--set key=value` overrides, validated against a strict
//! schema (unknown keys are rejected, all of them reported), then hashed
//! into every output artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::Digest;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown config keys: {}", keys.join(", "))]
    UnknownKeys { keys: Vec<String> },
    #[error("invalid override '{raw}': expected key=value")]
    BadOverride { raw: String },
    #[error("invalid config: {reason}")]
    Invalid { reason: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub system: SystemConfig,
    pub noise: NoiseConfig,
    pub filter: FilterConfig,
    pub daof: DaofConfig,
    pub train: TrainSection,
    pub bench: BenchSection,
    pub ablate: AblateSection,
    pub gen: GenSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/out"),
            system: SystemConfig::default(),
            noise: NoiseConfig::default(),
            filter: FilterConfig::default(),
            daof: DaofConfig::default(),
            train: TrainSection::default(),
            bench: BenchSection::default(),
            ablate: AblateSection::default(),
            gen: GenSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// `linear`, `bicycle2dof`, or `opaque_vehicle`.
    pub kind: String,
    pub dt: f64,
    /// Episode length for training environments.
    pub horizon: usize,
    pub linear: LinearSystemConfig,
    pub bicycle2dof: BicycleConfig,
    pub opaque_vehicle: OpaqueVehicleConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            kind: "bicycle2dof".into(),
            dt: 0.02,
            horizon: 500,
            linear: LinearSystemConfig::default(),
            bicycle2dof: BicycleConfig::default(),
            opaque_vehicle: OpaqueVehicleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearSystemConfig {
    /// Row-major square transition matrix as nested rows.
    pub a: Vec<Vec<f64>>,
    /// Row-major measurement matrix as nested rows.
    pub c: Vec<Vec<f64>>,
    pub init_mean: Vec<f64>,
    pub init_cov_diag: Vec<f64>,
}

impl Default for LinearSystemConfig {
    fn default() -> Self {
        Self {
            a: vec![vec![0.95, 0.05], vec![-0.05, 0.9]],
            c: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            init_mean: vec![0.0, 0.0],
            init_cov_diag: vec![0.25, 0.25],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BicycleConfig {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub lf: f64,
    pub lr: f64,
    pub tire_b: f64,
    pub tire_c: f64,
    /// Peak axle force; defaults to 75% of half the weight.
    pub tire_d: Option<f64>,
    pub speed: f64,
    pub steer_amp: f64,
    pub steer_omega: f64,
    pub init_mean: Vec<f64>,
    pub init_cov_diag: Vec<f64>,
}

impl Default for BicycleConfig {
    fn default() -> Self {
        Self {
            mass: 1412.0,
            yaw_inertia: 1536.7,
            lf: 1.06,
            lr: 1.85,
            tire_b: 10.0,
            tire_c: 1.5,
            tire_d: None,
            speed: 15.0,
            steer_amp: 0.1,
            steer_omega: 0.5 * 2.0 * std::f64::consts::PI / (500.0 * 0.02),
            init_mean: vec![0.0, 0.0],
            init_cov_diag: vec![0.0025, 0.0025],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpaqueVehicleConfig {
    pub steer_max: f64,
    pub steer_ramp_s: f64,
    pub steer_dither: f64,
    pub steer_dither_hz: f64,
    pub drive_force: f64,
    pub init_mean: Vec<f64>,
    pub init_std: Vec<f64>,
}

impl Default for OpaqueVehicleConfig {
    fn default() -> Self {
        Self {
            steer_max: 0.035,
            steer_ramp_s: 2.0,
            steer_dither: 0.006,
            steer_dither_hz: 0.2,
            drive_force: 300.0,
            init_mean: vec![20.0, 0.0, 0.0, 0.0, 0.0],
            init_std: vec![0.5, 0.01, 0.02, 0.005, 0.01],
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub process: ProcessNoiseConfig,
    pub measurement: MeasurementNoiseConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessNoiseConfig {
    /// `gmm`, `gaussian`, `none`, or `default` (per-system default).
    pub kind: String,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major covariance per component.
    pub covariances: Vec<Vec<f64>>,
    /// Diagonal shortcut for `gaussian`.
    pub cov_diag: Vec<f64>,
}

impl Default for ProcessNoiseConfig {
    fn default() -> Self {
        Self {
            kind: "default".into(),
            weights: Vec::new(),
            means: Vec::new(),
            covariances: Vec::new(),
            cov_diag: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementNoiseConfig {
    /// `laplace`, `gaussian`, `none`, or `default`.
    pub kind: String,
    pub location: Vec<f64>,
    pub scale: Vec<f64>,
    pub cov_diag: Vec<f64>,
}

impl Default for MeasurementNoiseConfig {
    fn default() -> Self {
        Self {
            kind: "default".into(),
            location: Vec::new(),
            scale: Vec::new(),
            cov_diag: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub ukf: UkfSection,
    pub pf: PfSection,
    pub slf: SlfSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UkfSection {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfSection {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfSection {
    pub particles: usize,
    pub ess_threshold: f64,
}

impl Default for PfSection {
    fn default() -> Self {
        Self {
            particles: 1000,
            ess_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlfSection {
    pub hidden: Vec<usize>,
    pub window: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
}

impl Default for SlfSection {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            window: 20,
            lr: 1e-3,
            batch: 20,
            epochs: 60,
            episodes_per_epoch: 4,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaofConfig {
    pub v1: DaofVariantSection,
    pub v2: DaofVariantSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaofVariantSection {
    pub window: usize,
    pub hidden: Vec<usize>,
}

impl Default for DaofVariantSection {
    fn default() -> Self {
        Self {
            window: 20,
            hidden: vec![256, 256, 256],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// `v1`, `v2`, or `slf`.
    pub target: String,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub warmup_steps: usize,
    pub max_steps: usize,
    pub policy_delay: usize,
    pub tau: f64,
    pub explore_sigma_init: f64,
    pub explore_sigma_final: f64,
    pub explore_anneal_steps: usize,
    pub target_noise_sigma: f64,
    pub target_noise_clip: f64,
    pub action_clip: f64,
    pub grad_clip: f64,
    pub estimate_clip: f64,
    pub reward_scale: f64,
    pub scale_warmup_episodes: usize,
    pub eval_interval: usize,
    pub eval_runs: usize,
    pub eval_steps: usize,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub divergence_factor: f64,
    pub divergence_grace_evals: usize,
    pub keep_best: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            target: "v1".into(),
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            batch_size: 20,
            replay_capacity: 1_000_000,
            warmup_steps: 5000,
            max_steps: 500_000,
            policy_delay: 2,
            tau: 0.005,
            explore_sigma_init: 0.1,
            explore_sigma_final: 0.01,
            explore_anneal_steps: 100_000,
            target_noise_sigma: 0.01,
            target_noise_clip: 0.02,
            action_clip: 20.0,
            grad_clip: 10.0,
            estimate_clip: 10.0,
            reward_scale: 1.0,
            scale_warmup_episodes: 10,
            eval_interval: 2500,
            eval_runs: 5,
            eval_steps: 500,
            plateau_window: 20,
            plateau_tol: 0.005,
            divergence_factor: 1e3,
            divergence_grace_evals: 5,
            keep_best: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub runs: usize,
    pub steps: usize,
    pub roster: Vec<String>,
    /// filter name -> checkpoint path
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub timing_calls: usize,
    pub timing_warmup: usize,
    pub timing_chunks: usize,
    pub timing_inference32: bool,
    pub divergence_rmse_guard: f64,
    pub emit_raw: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            runs: 100,
            steps: 500,
            roster: vec!["ukf".into(), "pf".into()],
            checkpoints: BTreeMap::new(),
            timing_calls: 10_000,
            timing_warmup: 100,
            timing_chunks: 10,
            timing_inference32: false,
            divergence_rmse_guard: 1e6,
            emit_raw: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub lengths: Vec<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            lengths: vec![1, 5, 10, 20],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub count: usize,
    pub steps: usize,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            count: 10,
            steps: 500,
        }
    }
}

/// Known-keys registry mirroring the schema, used to report every unknown
/// key at once (serde alone stops at the first).
fn known_keys() -> BTreeMap<&'static str, Vec<&'static str>> {
    let mut m = BTreeMap::new();
    m.insert(
        "",
        vec![
            "seed", "out_dir", "system", "noise", "filter", "daof", "train", "bench", "ablate",
            "gen",
        ],
    );
    m.insert(
        "system",
        vec!["kind", "dt", "horizon", "linear", "bicycle2dof", "opaque_vehicle"],
    );
    m.insert("system.linear", vec!["a", "c", "init_mean", "init_cov_diag"]);
    m.insert(
        "system.bicycle2dof",
        vec![
            "mass",
            "yaw_inertia",
            "lf",
            "lr",
            "tire_b",
            "tire_c",
            "tire_d",
            "speed",
            "steer_amp",
            "steer_omega",
            "init_mean",
            "init_cov_diag",
        ],
    );
    m.insert(
        "system.opaque_vehicle",
        vec![
            "steer_max",
            "steer_ramp_s",
            "steer_dither",
            "steer_dither_hz",
            "drive_force",
            "init_mean",
            "init_std",
        ],
    );
    m.insert("noise", vec!["process", "measurement"]);
    m.insert(
        "noise.process",
        vec!["kind", "weights", "means", "covariances", "cov_diag"],
    );
    m.insert(
        "noise.measurement",
        vec!["kind", "location", "scale", "cov_diag"],
    );
    m.insert("filter", vec!["ukf", "pf", "slf"]);
    m.insert("filter.ukf", vec!["alpha", "beta", "kappa"]);
    m.insert("filter.pf", vec!["particles", "ess_threshold"]);
    m.insert(
        "filter.slf",
        vec!["hidden", "window", "lr", "batch", "epochs", "episodes_per_epoch"],
    );
    m.insert("daof", vec!["v1", "v2"]);
    m.insert("daof.v1", vec!["window", "hidden"]);
    m.insert("daof.v2", vec!["window", "hidden"]);
    m.insert(
        "train",
        vec![
            "target",
            "gamma",
            "actor_lr",
            "critic_lr",
            "batch_size",
            "replay_capacity",
            "warmup_steps",
            "max_steps",
            "policy_delay",
            "tau",
            "explore_sigma_init",
            "explore_sigma_final",
            "explore_anneal_steps",
            "target_noise_sigma",
            "target_noise_clip",
            "action_clip",
            "grad_clip",
            "estimate_clip",
            "reward_scale",
            "scale_warmup_episodes",
            "eval_interval",
            "eval_runs",
            "eval_steps",
            "plateau_window",
            "plateau_tol",
            "divergence_factor",
            "divergence_grace_evals",
            "keep_best",
        ],
    );
    m.insert(
        "bench",
        vec![
            "runs",
            "steps",
            "roster",
            "checkpoints",
            "timing_calls",
            "timing_warmup",
            "timing_chunks",
            "timing_inference32",
            "divergence_rmse_guard",
            "emit_raw",
        ],
    );
    m.insert("ablate", vec!["lengths"]);
    m.insert("gen", vec!["count", "steps"]);
    m
}

fn collect_unknown_keys(value: &toml::Value, path: &str, out: &mut Vec<String>) {
    let registry = known_keys();
    if let toml::Value::Table(table) = value {
        match registry.get(path) {
            Some(allowed) => {
                for (key, child) in table {
                    if !allowed.contains(&key.as_str()) {
                        let full = if path.is_empty() {
                            key.clone()
                        } else {
                            format!("{path}.{key}")
                        };
                        out.push(full);
                    } else {
                        let child_path = if path.is_empty() {
                            key.clone()
                        } else {
                            format!("{path}.{key}")
                        };
                        collect_unknown_keys(child, &child_path, out);
                    }
                }
            }
            // free-form tables (e.g. bench.checkpoints) are not walked
            None => {}
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("v key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, key: &str, value: toml::Value) {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("intermediate override keys are tables");
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
}

/// Loads a config file (or starts from defaults when `path` is `None`),
/// applies `--set` overrides, validates the schema strictly, and returns the
/// typed config.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    out_dir: Option<&Path>,
) -> Result<Config, ConfigError> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?;
            text.parse()?
        }
        None => toml::Table::new(),
    };
    for raw in overrides {
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride { raw: raw.clone() })?;
        if key.is_empty() {
            return Err(ConfigError::BadOverride { raw: raw.clone() });
        }
        apply_override(&mut table, key.trim(), parse_override_value(value.trim()));
    }
    if let Some(seed) = seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    if let Some(dir) = out_dir {
        table.insert(
            "out_dir".into(),
            toml::Value::String(dir.to_string_lossy().into_owned()),
        );
    }

    let mut unknown = Vec::new();
    collect_unknown_keys(&toml::Value::Table(table.clone()), "", &mut unknown);
    if !unknown.is_empty() {
        unknown.sort();
        return Err(ConfigError::UnknownKeys { keys: unknown });
    }
    let config: Config = table.try_into()?;
    Ok(config)
}

impl Config {
    /// Stable canonical serialization of the fully resolved config.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex characters of the SHA-256 of the canonical form. The
    /// output directory is excluded: where artifacts land does not change
    /// what was computed.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let digest = sha2::Sha256::digest(canonical.canonical_toml().as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }

    pub fn write_resolved_snapshot(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("resolved_config.toml");
        let body = format!(
            "# resolved configuration (hash {})\n{}",
            self.hash(),
            self.canonical_toml()
        );
        std::fs::write(&path, body)?;
        Ok(path)
    }
}
