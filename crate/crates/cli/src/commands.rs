//! Subcommand implementations.

use std::path::{Path, PathBuf};

use daof::bench::{
    ablate_window, emit_training_curves, run_experiment, BenchError, ExperimentSpec, FilterSpec,
    SystemScenario,
};
use daof::core::{Rng, StateVec};
use daof::filters::slf_train_closed_loop;
use daof::rl::{train, write_training_log, DaofVariant, MfpEnv, RlError, TrainOutput};
use daof::systems::{opaque_rollout, simulate};

use crate::assemble::{
    build_roster, build_scenario, build_slf_config, build_train_config, save_slf_checkpoint,
    transition_handle, AssembleError,
};
use crate::config::{Config, ConfigError};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error("training diverged; state dumped to {0}")]
    Diverged(PathBuf),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("filter training failed: {0}")]
    Filter(#[from] daof::filters::FilterError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl AppError {
    /// 0 success, 2 config error, 3 runtime divergence, 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Assemble(AssembleError::Invalid { .. }) => 2,
            AppError::Assemble(AssembleError::Noise(_)) => 2,
            AppError::Assemble(AssembleError::System(_)) => 2,
            AppError::Assemble(AssembleError::Checkpoint { .. }) => 4,
            AppError::Diverged(_) => 3,
            AppError::Io { .. } => 4,
            AppError::Bench(BenchError::Io { .. }) => 4,
            AppError::Bench(BenchError::ScenarioMismatch { .. }) => 2,
            _ => 1,
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
    move |source| AppError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_out_dir(cfg: &Config) -> Result<PathBuf, AppError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_at(&cfg.out_dir))?;
    cfg.write_resolved_snapshot(&cfg.out_dir)
        .map_err(io_at(&cfg.out_dir))?;
    Ok(cfg.out_dir.clone())
}

fn make_env_factory(cfg: &Config, window: usize) -> Result<impl Fn() -> MfpEnv + '_, AppError> {
    let scenario = build_scenario(cfg)?;
    let horizon = cfg.system.horizon;
    let seed = cfg.seed;
    Ok(move || match &scenario {
        SystemScenario::Explicit(system) => {
            MfpEnv::explicit(system.clone(), window, horizon, Rng::new(seed).child(7))
        }
        SystemScenario::OpaqueVehicle(spec) => {
            MfpEnv::opaque(Box::new(spec.build()), window, horizon)
        }
    })
}

fn train_daof(cfg: &Config, variant: DaofVariant, out: &Path) -> Result<TrainOutput, AppError> {
    let tc = build_train_config(cfg, variant);
    let handle = match variant {
        DaofVariant::V1 => Some(transition_handle(cfg)?),
        DaofVariant::V2 => None,
    };
    let factory = make_env_factory(cfg, tc.window_len)?;
    let output = train(factory, handle, &tc)?;

    let name = format!("daof_{variant}");
    let ckpt = out.join(format!("{name}.daof"));
    output
        .policy
        .save(&ckpt, &cfg.hash(), output.steps_run as u64)?;
    let log_path = out.join(format!("train_log_{name}.csv"));
    write_training_log(&log_path, &output.log, output.policy.state_dim)
        .map_err(io_at(&log_path))?;
    println!(
        "trained {name}: {} steps, {} episodes, checkpoint {}",
        output.steps_run,
        output.episodes,
        ckpt.display()
    );
    if let Some((step, rmse)) = output.eval_history.last() {
        println!("  final eval (step {step}): rmse {rmse:?}");
    }
    Ok(output)
}

fn train_slf(cfg: &Config, out: &Path) -> Result<(), AppError> {
    let scenario = build_scenario(cfg)?;
    let slf_cfg = build_slf_config(cfg);
    let horizon = cfg.system.horizon;
    let seed = cfg.seed;
    let (initial_estimate, state_dim, meas_dim) = match &scenario {
        SystemScenario::Explicit(system) => (
            system.initial.mean.clone(),
            system.state_dim(),
            system.meas_dim(),
        ),
        SystemScenario::OpaqueVehicle(spec) => (
            StateVec::new(spec.init_mean.clone()).expect("finite initial mean"),
            5,
            9,
        ),
    };
    let (net, trace) = match &scenario {
        SystemScenario::Explicit(system) => {
            let mut rng = Rng::new(seed).child(9);
            slf_train_closed_loop(
                |_k| Ok(simulate(system, horizon, &mut rng)),
                &initial_estimate,
                &slf_cfg,
            )?
        }
        SystemScenario::OpaqueVehicle(spec) => slf_train_closed_loop(
            |k| {
                let mut source = spec.build();
                Ok(opaque_rollout(&mut source, 1_000_000 + k, horizon)?)
            },
            &initial_estimate,
            &slf_cfg,
        )?,
    };
    let ckpt = out.join("slf.daof");
    save_slf_checkpoint(
        &ckpt,
        &net,
        slf_cfg.window_len,
        state_dim,
        meas_dim,
        &cfg.hash(),
        (trace.len() * slf_cfg.episodes_per_epoch * horizon) as u64,
    )?;
    let log_path = out.join("train_log_slf.csv");
    let mut body = String::from("epoch,loss\n");
    for (e, loss) in trace.iter().enumerate() {
        body.push_str(&format!("{e},{}\n", daof::core::fmt_g(*loss, 12)));
    }
    std::fs::write(&log_path, body).map_err(io_at(&log_path))?;
    println!(
        "trained slf: {} epochs, final loss {:.4e}, checkpoint {}",
        trace.len(),
        trace.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &Config) -> Result<(), AppError> {
    let out = ensure_out_dir(cfg)?;
    match cfg.train.target.as_str() {
        "v1" => {
            let output = train_daof(cfg, DaofVariant::V1, &out)?;
            if output.diverged {
                return Err(AppError::Diverged(out));
            }
        }
        "v2" => {
            let output = train_daof(cfg, DaofVariant::V2, &out)?;
            if output.diverged {
                return Err(AppError::Diverged(out));
            }
        }
        "slf" => train_slf(cfg, &out)?,
        other => {
            return Err(AppError::Config(ConfigError::Invalid {
                reason: format!("train.target must be v1, v2, or slf (got '{other}')"),
            }))
        }
    }
    Ok(())
}

fn experiment_spec(cfg: &Config) -> Result<ExperimentSpec, AppError> {
    let scenario = build_scenario(cfg)?;
    let roster = build_roster(cfg)?;
    Ok(ExperimentSpec {
        scenario,
        roster,
        runs: cfg.bench.runs,
        steps: cfg.bench.steps,
        seed: cfg.seed,
        out_dir: Some(cfg.out_dir.clone()),
        config_hash: cfg.hash(),
        timing_calls: cfg.bench.timing_calls,
        timing_warmup: cfg.bench.timing_warmup,
        timing_chunks: cfg.bench.timing_chunks,
        timing_inference32: cfg.bench.timing_inference32,
        divergence_rmse_guard: cfg.bench.divergence_rmse_guard,
        emit_raw: cfg.bench.emit_raw,
    })
}

fn print_table(report: &daof::bench::BenchReport) {
    let mut header = String::from("filter");
    for i in 0..report.state_dim {
        header.push_str(&format!(",rmse_{i}"));
    }
    header.push_str(",cost_ms,diverged");
    println!("{header}");
    for f in &report.filters {
        let mut row = f.name.clone();
        for v in &f.per_state_rmse {
            row.push_str(&format!(",{v:.6}"));
        }
        row.push_str(&format!(",{:.4},{}", f.latency_ms, f.divergence_count));
        println!("{row}");
    }
}

pub fn cmd_bench(cfg: &Config) -> Result<(), AppError> {
    ensure_out_dir(cfg)?;
    let spec = experiment_spec(cfg)?;
    let report = run_experiment(&spec)?;
    print_table(&report);
    // pull any training curves sitting next to referenced checkpoints
    let mut curves = Vec::new();
    for (name, path) in &cfg.bench.checkpoints {
        if let Some(dir) = path.parent() {
            let log_name = if name == "slf" {
                "train_log_slf.csv".to_string()
            } else {
                format!("train_log_{name}.csv")
            };
            let log = dir.join(log_name);
            if log.is_file() {
                curves.push((name.clone(), log));
            }
        }
    }
    if !curves.is_empty() {
        emit_training_curves(&cfg.out_dir, &curves)?;
    }
    println!("report written to {}", cfg.out_dir.display());
    Ok(())
}

pub fn cmd_ablate(cfg: &Config) -> Result<(), AppError> {
    let out = ensure_out_dir(cfg)?;
    let spec = ExperimentSpec {
        roster: Vec::new(),
        ..experiment_spec(cfg)?
    };
    let lengths = cfg.ablate.lengths.clone();
    let rows = ablate_window(&spec, &lengths, |window_len| {
        let mut tc = build_train_config(cfg, DaofVariant::V1);
        tc.window_len = window_len;
        let handle = transition_handle(cfg).map_err(|e| to_bench(AppError::Assemble(e)))?;
        let factory = make_env_factory(cfg, window_len).map_err(to_bench)?;
        let output = train(factory, Some(handle), &tc).map_err(BenchError::Rl)?;
        let ckpt = out.join(format!("daof_v1_w{window_len}.daof"));
        output
            .policy
            .save(&ckpt, &cfg.hash(), output.steps_run as u64)
            .map_err(BenchError::Rl)?;
        println!(
            "window {window_len}: trained {} steps, checkpoint {}",
            output.steps_run,
            ckpt.display()
        );
        Ok(output.policy)
    })?;
    println!("window_len,rmse,cost_ms");
    for row in &rows {
        println!(
            "{},{:.6},{:.4}",
            row.window_len, row.aggregate_rmse, row.latency_ms
        );
    }
    Ok(())
}

fn to_bench(err: AppError) -> BenchError {
    BenchError::Io {
        path: PathBuf::new(),
        source: std::io::Error::other(err.to_string()),
    }
}

pub fn cmd_gen(cfg: &Config) -> Result<(), AppError> {
    let out = ensure_out_dir(cfg)?;
    let scenario = build_scenario(cfg)?;
    for k in 0..cfg.gen.count as u64 {
        let traj = match &scenario {
            SystemScenario::Explicit(system) => {
                let mut rng = Rng::new(cfg.seed).child(k);
                simulate(system, cfg.gen.steps, &mut rng)
            }
            SystemScenario::OpaqueVehicle(spec) => {
                let mut source = spec.build();
                opaque_rollout(&mut source, k, cfg.gen.steps).map_err(RlError::Systems)?
            }
        };
        let path = out.join(format!("traj_{k}.csv"));
        traj.save_csv(&path)
            .map_err(|e| AppError::Io {
                path: path.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
    }
    println!(
        "wrote {} trajectories of {} steps to {}",
        cfg.gen.count,
        cfg.gen.steps,
        out.display()
    );
    Ok(())
}

pub fn cmd_eval(cfg: &Config, checkpoint: &Path) -> Result<(), AppError> {
    ensure_out_dir(cfg)?;
    // Detect the checkpoint kind from its metadata.
    let (_, _, meta) = daof::nn::checkpoint_load(checkpoint).map_err(|e| AppError::Io {
        path: checkpoint.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let filter = if meta.extra.contains("\"slf\"") {
        let (net, slf_meta, _) = crate::assemble::load_slf_checkpoint(checkpoint)?;
        FilterSpec::Slf {
            net,
            window_len: slf_meta.window_len,
        }
    } else {
        let is_v1 = meta.extra.contains("\"v1\"");
        let handle = if is_v1 {
            Some(transition_handle(cfg)?)
        } else {
            None
        };
        let (policy, _) = daof::rl::DaofPolicy::load(checkpoint, handle)?;
        FilterSpec::Daof { policy }
    };
    let mut spec = experiment_spec_with_roster(cfg, vec![filter])?;
    spec.emit_raw = false;
    spec.out_dir = None;
    let report = run_experiment(&spec)?;
    print_table(&report);
    Ok(())
}

fn experiment_spec_with_roster(
    cfg: &Config,
    roster: Vec<FilterSpec>,
) -> Result<ExperimentSpec, AppError> {
    let scenario = build_scenario(cfg)?;
    Ok(ExperimentSpec {
        scenario,
        roster,
        runs: cfg.bench.runs,
        steps: cfg.bench.steps,
        seed: cfg.seed,
        out_dir: Some(cfg.out_dir.clone()),
        config_hash: cfg.hash(),
        timing_calls: cfg.bench.timing_calls,
        timing_warmup: cfg.bench.timing_warmup,
        timing_chunks: cfg.bench.timing_chunks,
        timing_inference32: cfg.bench.timing_inference32,
        divergence_rmse_guard: cfg.bench.divergence_rmse_guard,
        emit_raw: cfg.bench.emit_raw,
    })
}
