//! Experiment orchestration: Monte Carlo filter comparisons over shared
//! trajectories, the sliding-window ablation, latency measurement, and
//! machine-readable reports.

mod report;

pub use report::{BenchReport, FilterReport, FiveNumber};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::core::{fmt_g, rmse, MeasVec, Rng, StateVec, Trajectory};
use crate::filters::{
    FilterError, KalmanFilter, OnlineFilter, ParticleFilter, PfConfig, SlfFilter,
    StationaryKalmanFilter, UkfParams, UnscentedKalmanFilter, ZeroOrderHold,
};
use crate::nn::MlpNet;
use crate::rl::{DaofFilter, DaofPolicy, DaofVariant, RlError};
use crate::systems::{
    kf_reference, opaque_rollout, simulate, ExplicitSystem, OpaqueVehicleSpec, SystemsError,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("filter '{filter}' cannot run on this scenario: {reason}")]
    ScenarioMismatch { filter: String, reason: &'static str },
    #[error("experiment needs at least one run and one step")]
    EmptyProtocol,
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Systems(#[from] SystemsError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which stochastic system the experiment runs against.
#[derive(Clone)]
pub enum SystemScenario {
    Explicit(ExplicitSystem),
    OpaqueVehicle(OpaqueVehicleSpec),
}

impl SystemScenario {
    pub fn name(&self) -> &'static str {
        match self {
            SystemScenario::Explicit(_) => "explicit",
            SystemScenario::OpaqueVehicle(_) => "opaque_vehicle",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            SystemScenario::Explicit(s) => s.state_dim(),
            SystemScenario::OpaqueVehicle(_) => 5,
        }
    }

    fn initial_estimate(&self) -> StateVec {
        match self {
            SystemScenario::Explicit(s) => s.initial.mean.clone(),
            SystemScenario::OpaqueVehicle(spec) => {
                StateVec::new(spec.init_mean.clone()).expect("finite initial mean")
            }
        }
    }

    fn rollout(&self, run: u64, steps: usize, seed: u64) -> Result<Trajectory, BenchError> {
        match self {
            SystemScenario::Explicit(sys) => {
                let mut rng = Rng::new(seed).child(run);
                Ok(simulate(sys, steps, &mut rng))
            }
            SystemScenario::OpaqueVehicle(spec) => {
                let mut source = spec.build();
                let _ = seed; // the spec's seed offset carries the experiment seed
                Ok(opaque_rollout(&mut source, run, steps)?)
            }
        }
    }
}

/// One roster entry: a runnable filter with its artifacts already loaded.
pub enum FilterSpec {
    Ukf(UkfParams),
    Pf(PfConfig),
    Kf,
    StationaryKf,
    Slf { net: MlpNet, window_len: usize },
    Daof { policy: DaofPolicy },
    /// Frozen initial estimate.
    Zoh,
    /// Diagnostic: emits the hidden truth.
    Oracle,
}

impl FilterSpec {
    pub fn name(&self) -> String {
        match self {
            FilterSpec::Ukf(_) => "ukf".into(),
            FilterSpec::Pf(_) => "pf".into(),
            FilterSpec::Kf => "kf".into(),
            FilterSpec::StationaryKf => "stationary_kf".into(),
            FilterSpec::Slf { .. } => "slf".into(),
            FilterSpec::Daof { policy } => match policy.variant {
                DaofVariant::V1 => "daof_v1".into(),
                DaofVariant::V2 => "daof_v2".into(),
            },
            FilterSpec::Zoh => "zoh".into(),
            FilterSpec::Oracle => "oracle".into(),
        }
    }

    fn needs_explicit_model(&self) -> bool {
        matches!(
            self,
            FilterSpec::Ukf(_) | FilterSpec::Pf(_) | FilterSpec::Kf | FilterSpec::StationaryKf
        ) || matches!(self, FilterSpec::Daof { policy } if policy.variant == DaofVariant::V1)
    }
}

enum Instance {
    Online(Box<dyn OnlineFilter + Send>),
    Oracle,
}

impl Instance {
    fn estimate(&mut self, y: &MeasVec, truth: &StateVec) -> Result<StateVec, FilterError> {
        match self {
            Instance::Online(f) => f.estimate(y),
            Instance::Oracle => Ok(truth.clone()),
        }
    }
}

pub struct ExperimentSpec {
    pub scenario: SystemScenario,
    pub roster: Vec<FilterSpec>,
    pub runs: usize,
    pub steps: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub config_hash: String,
    /// Timing pass: at least this many timed estimator calls.
    pub timing_calls: usize,
    pub timing_warmup: usize,
    pub timing_chunks: usize,
    /// Run the latency pass with single-precision inference for learned
    /// filters (the 32-bit speed mode); accuracy passes stay in f64.
    pub timing_inference32: bool,
    /// Per-run aggregate RMSE above this marks the run divergent.
    pub divergence_rmse_guard: f64,
    /// Emit per-run raw trajectory CSVs.
    pub emit_raw: bool,
}

impl ExperimentSpec {
    pub fn new(scenario: SystemScenario, roster: Vec<FilterSpec>, runs: usize, steps: usize) -> Self {
        Self {
            scenario,
            roster,
            runs,
            steps,
            seed: 0,
            out_dir: None,
            config_hash: String::new(),
            timing_calls: 10_000,
            timing_warmup: 100,
            timing_chunks: 10,
            timing_inference32: false,
            divergence_rmse_guard: 1e6,
            emit_raw: true,
        }
    }
}

fn build_instance(
    spec: &FilterSpec,
    scenario: &SystemScenario,
    run: u64,
    seed: u64,
    fast32: bool,
) -> Result<Instance, BenchError> {
    let initial = scenario.initial_estimate();
    let explicit = match scenario {
        SystemScenario::Explicit(sys) => Some(sys),
        SystemScenario::OpaqueVehicle(_) => None,
    };
    if spec.needs_explicit_model() && explicit.is_none() {
        return Err(BenchError::ScenarioMismatch {
            filter: spec.name(),
            reason: "this filter needs the explicit transition/measurement model, \
                     which an opaque data source does not expose",
        });
    }
    Ok(match spec {
        FilterSpec::Ukf(params) => Instance::Online(Box::new(UnscentedKalmanFilter::new(
            explicit.expect("checked above"),
            *params,
        )?)),
        FilterSpec::Pf(cfg) => Instance::Online(Box::new(ParticleFilter::new(
            explicit.expect("checked above"),
            *cfg,
            Rng::new(seed ^ 0x9e37_79b9).child(run),
        ))),
        FilterSpec::Kf => Instance::Online(Box::new(KalmanFilter::new(
            explicit.expect("checked above"),
        )?)),
        FilterSpec::StationaryKf => {
            let sys = explicit.expect("checked above");
            let stationary = kf_reference(sys)?;
            Instance::Online(Box::new(StationaryKalmanFilter::new(sys, &stationary)?))
        }
        FilterSpec::Slf { net, window_len } => {
            let meas_dim = net.input_dim() / window_len - initial.dim();
            let filter = SlfFilter::new(net.clone(), *window_len, meas_dim, initial)?;
            Instance::Online(Box::new(if fast32 {
                filter.with_fast32()
            } else {
                filter
            }))
        }
        FilterSpec::Daof { policy } => {
            let filter = DaofFilter::new(policy.clone(), initial)?;
            Instance::Online(Box::new(if fast32 {
                filter.with_fast32()
            } else {
                filter
            }))
        }
        FilterSpec::Zoh => Instance::Online(Box::new(ZeroOrderHold::new(initial))),
        FilterSpec::Oracle => Instance::Oracle,
    })
}

struct RunScore {
    per_state_sq: Vec<f64>,
    steps: usize,
    diverged: bool,
    estimates: Vec<StateVec>,
}

fn score_run(
    spec: &FilterSpec,
    scenario: &SystemScenario,
    traj: &Trajectory,
    run: u64,
    seed: u64,
    guard: f64,
) -> Result<RunScore, BenchError> {
    let n = scenario.state_dim();
    let mut instance = build_instance(spec, scenario, run, seed, false)?;
    let mut per_state_sq = vec![0.0; n];
    let mut estimates = Vec::with_capacity(traj.len());
    let mut diverged = false;
    for t in 0..traj.len() {
        match instance.estimate(&traj.measurements[t], &traj.true_states[t]) {
            Ok(est) => {
                for i in 0..n {
                    let d = est[i] - traj.true_states[t][i];
                    per_state_sq[i] += d * d;
                }
                estimates.push(est);
            }
            Err(FilterError::NonFiniteEstimate { .. }) | Err(FilterError::Numerical { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let steps = estimates.len();
    if steps < traj.len() {
        diverged = true;
    }
    let agg = (per_state_sq.iter().sum::<f64>() / steps.max(1) as f64).sqrt();
    if !agg.is_finite() || agg > guard {
        diverged = true;
    }
    Ok(RunScore {
        per_state_sq,
        steps,
        diverged,
        estimates,
    })
}

/// Median-of-means latency of single-sample estimator calls, in
/// milliseconds, measured on one thread after a warm-up.
fn measure_latency(
    spec: &FilterSpec,
    scenario: &SystemScenario,
    traj: &Trajectory,
    seed: u64,
    calls: usize,
    warmup: usize,
    chunks: usize,
    fast32: bool,
) -> Result<f64, BenchError> {
    let mut durations = Vec::with_capacity(calls);
    let mut done = 0usize;
    let mut warmed = 0usize;
    let mut episode = 0u64;
    while done < calls {
        let mut instance = build_instance(spec, scenario, episode, seed, fast32)?;
        episode += 1;
        for t in 0..traj.len() {
            let t0 = Instant::now();
            let r = instance.estimate(&traj.measurements[t], &traj.true_states[t]);
            let dt = t0.elapsed().as_secs_f64();
            if r.is_err() {
                break;
            }
            if warmed < warmup {
                warmed += 1;
            } else {
                durations.push(dt);
                done += 1;
                if done >= calls {
                    break;
                }
            }
        }
    }
    let chunk = durations.len() / chunks.max(1);
    let mut means: Vec<f64> = durations
        .chunks(chunk.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite durations"));
    Ok(means[means.len() / 2] * 1e3)
}

/// Runs every roster filter over shared per-run trajectories, aggregates
/// RMSE and latency, and writes the report artifacts when an output
/// directory is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<BenchReport, BenchError> {
    if spec.runs == 0 || spec.steps == 0 {
        return Err(BenchError::EmptyProtocol);
    }
    // Reject scenario mismatches before any compute.
    for f in &spec.roster {
        build_instance(f, &spec.scenario, 0, spec.seed, false)?;
    }
    let n = spec.scenario.state_dim();
    let trajs: Vec<Trajectory> = (0..spec.runs as u64)
        .map(|k| spec.scenario.rollout(k, spec.steps, spec.seed))
        .collect::<Result<_, _>>()?;

    let timing_traj = &trajs[0];
    let mut filters = Vec::with_capacity(spec.roster.len());
    for filter_spec in &spec.roster {
        let scores: Vec<RunScore> = (0..spec.runs as u64)
            .into_par_iter()
            .map(|k| {
                score_run(
                    filter_spec,
                    &spec.scenario,
                    &trajs[k as usize],
                    k,
                    spec.seed,
                    spec.divergence_rmse_guard,
                )
            })
            .collect::<Result<_, _>>()?;

        let mut per_state_sq = vec![0.0; n];
        let mut total_steps = 0usize;
        let mut divergence_count = 0usize;
        let mut per_run_rmse = Vec::with_capacity(spec.runs);
        for s in &scores {
            if s.diverged {
                divergence_count += 1;
                per_run_rmse.push(vec![f64::NAN; n]);
                continue;
            }
            for i in 0..n {
                per_state_sq[i] += s.per_state_sq[i];
            }
            total_steps += s.steps;
            per_run_rmse.push(
                s.per_state_sq
                    .iter()
                    .map(|v| (v / s.steps as f64).sqrt())
                    .collect(),
            );
        }
        let per_state_rmse: Vec<f64> = per_state_sq
            .iter()
            .map(|v| (v / total_steps.max(1) as f64).sqrt())
            .collect();

        let latency_ms = measure_latency(
            filter_spec,
            &spec.scenario,
            timing_traj,
            spec.seed,
            spec.timing_calls,
            spec.timing_warmup,
            spec.timing_chunks,
            spec.timing_inference32,
        )?;

        let report = FilterReport::build(
            filter_spec.name(),
            per_state_rmse,
            per_run_rmse,
            latency_ms,
            divergence_count,
        );

        if let Some(dir) = &spec.out_dir {
            write_filter_outputs(spec, filter_spec, dir, &scores, &trajs)?;
        }
        filters.push(report);
    }

    let report = BenchReport {
        scenario: spec.scenario.name().to_string(),
        runs: spec.runs,
        steps: spec.steps,
        seed: spec.seed,
        config_hash: spec.config_hash.clone(),
        timing_precision: if spec.timing_inference32 { "f32" } else { "f64" }.to_string(),
        state_dim: n,
        filters,
    };
    if let Some(dir) = &spec.out_dir {
        write_report_outputs(&report, dir)?;
    }
    Ok(report)
}

fn write_filter_outputs(
    spec: &ExperimentSpec,
    filter_spec: &FilterSpec,
    dir: &Path,
    scores: &[RunScore],
    trajs: &[Trajectory],
) -> Result<(), BenchError> {
    use std::io::Write;
    let name = filter_spec.name();
    let n = spec.scenario.state_dim();

    if spec.emit_raw {
        let raw_dir = dir.join("raw");
        std::fs::create_dir_all(&raw_dir).map_err(io_err(&raw_dir))?;
        for (k, (score, traj)) in scores.iter().zip(trajs).enumerate() {
            let mut with_est = traj.clone();
            if score.estimates.len() == traj.len() {
                with_est.estimates = Some(score.estimates.clone());
            }
            let path = raw_dir.join(format!("run_{k}_{name}.csv"));
            with_est.save_csv(&path).map_err(|e| BenchError::Io {
                path: path.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
        }
    }

    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(io_err(&plots))?;

    // error-vs-time traces: T rows per run
    let path = plots.join(format!("error_trace_{name}.csv"));
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io_err(&path))?);
    let mut header = vec!["run".to_string(), "t".into()];
    header.extend((0..n).map(|i| format!("err_{i}")));
    writeln!(f, "{}", header.join(",")).map_err(io_err(&path))?;
    for (k, (score, traj)) in scores.iter().zip(trajs).enumerate() {
        for (t, est) in score.estimates.iter().enumerate() {
            let mut row = vec![k.to_string(), t.to_string()];
            for i in 0..n {
                row.push(fmt_g(est[i] - traj.true_states[t][i], 12));
            }
            writeln!(f, "{}", row.join(",")).map_err(io_err(&path))?;
        }
    }

    // box-plot data: per-run RMSE values
    let path = plots.join(format!("rmse_box_{name}.csv"));
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io_err(&path))?);
    let mut header = vec!["run".to_string()];
    header.extend((0..n).map(|i| format!("rmse_{i}")));
    header.push("diverged".into());
    writeln!(f, "{}", header.join(",")).map_err(io_err(&path))?;
    for (k, score) in scores.iter().enumerate() {
        let mut row = vec![k.to_string()];
        for i in 0..n {
            if score.diverged {
                row.push(String::new());
            } else {
                row.push(fmt_g((score.per_state_sq[i] / score.steps as f64).sqrt(), 12));
            }
        }
        row.push((score.diverged as u8).to_string());
        writeln!(f, "{}", row.join(",")).map_err(io_err(&path))?;
    }
    Ok(())
}

fn write_report_outputs(report: &BenchReport, dir: &Path) -> Result<(), BenchError> {
    use std::io::Write;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&path, json).map_err(io_err(&path))?;

    let path = dir.join("table.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io_err(&path))?);
    let mut header = vec!["filter".to_string()];
    header.extend((0..report.state_dim).map(|i| format!("rmse_{i}")));
    header.push("cost_ms".into());
    header.push("diverged_runs".into());
    writeln!(f, "{}", header.join(",")).map_err(io_err(&path))?;
    for fr in &report.filters {
        let mut row = vec![fr.name.clone()];
        row.extend(fr.per_state_rmse.iter().map(|v| fmt_g(*v, 12)));
        row.push(fmt_g(fr.latency_ms, 12));
        row.push(fr.divergence_count.to_string());
        writeln!(f, "{}", row.join(",")).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Copies training-curve logs alongside the other plot data so a single
/// directory feeds the external plotter.
pub fn emit_training_curves(dir: &Path, logs: &[(String, PathBuf)]) -> Result<(), BenchError> {
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(io_err(&plots))?;
    for (name, src) in logs {
        let dst = plots.join(format!("training_curve_{name}.csv"));
        std::fs::copy(src, &dst).map_err(io_err(&dst))?;
    }
    Ok(())
}

/// Ablation over sliding-window lengths: train one v1 policy per length,
/// evaluate under the common protocol, return `(N, per-state RMSE,
/// aggregate RMSE, latency ms)` rows.
pub struct AblationRow {
    pub window_len: usize,
    pub per_state_rmse: Vec<f64>,
    pub aggregate_rmse: f64,
    pub latency_ms: f64,
}

pub fn ablate_window<TrainFn>(
    spec: &ExperimentSpec,
    lengths: &[usize],
    mut train_policy: TrainFn,
) -> Result<Vec<AblationRow>, BenchError>
where
    TrainFn: FnMut(usize) -> Result<DaofPolicy, BenchError>,
{
    let mut rows = Vec::with_capacity(lengths.len());
    for &window_len in lengths {
        let policy = train_policy(window_len)?;
        let one = ExperimentSpec {
            scenario: spec.scenario.clone(),
            roster: vec![FilterSpec::Daof { policy }],
            runs: spec.runs,
            steps: spec.steps,
            seed: spec.seed,
            out_dir: None,
            config_hash: spec.config_hash.clone(),
            timing_calls: spec.timing_calls,
            timing_warmup: spec.timing_warmup,
            timing_chunks: spec.timing_chunks,
            timing_inference32: spec.timing_inference32,
            divergence_rmse_guard: spec.divergence_rmse_guard,
            emit_raw: false,
        };
        let report = run_experiment(&one)?;
        let fr = &report.filters[0];
        rows.push(AblationRow {
            window_len,
            per_state_rmse: fr.per_state_rmse.clone(),
            aggregate_rmse: fr
                .per_state_rmse
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt(),
            latency_ms: fr.latency_ms,
        });
    }
    if let Some(dir) = &spec.out_dir {
        use std::io::Write;
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("ablation.csv");
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(&path).map_err(io_err(&path))?);
        writeln!(f, "window_len,rmse,cost_ms").map_err(io_err(&path))?;
        for row in &rows {
            writeln!(
                f,
                "{},{},{}",
                row.window_len,
                fmt_g(row.aggregate_rmse, 12),
                fmt_g(row.latency_ms, 12)
            )
            .map_err(io_err(&path))?;
        }
    }
    Ok(rows)
}

/// Recomputes a filter's mean per-state RMSE from the raw per-run CSVs; used
/// to validate report aggregation.
pub fn recompute_rmse_from_raw(
    dir: &Path,
    filter: &str,
    runs: usize,
    n: usize,
    m: usize,
) -> Result<Vec<f64>, BenchError> {
    let mut estimates = Vec::new();
    let mut truths = Vec::new();
    for k in 0..runs {
        let path = dir.join("raw").join(format!("run_{k}_{filter}.csv"));
        let file = std::fs::File::open(&path).map_err(io_err(&path))?;
        let traj = Trajectory::read_csv(std::io::BufReader::new(file), n, m, 1.0).map_err(|e| {
            BenchError::Io {
                path: path.clone(),
                source: std::io::Error::other(e.to_string()),
            }
        })?;
        if let Some(est) = traj.estimates {
            estimates.extend(est);
            truths.extend(traj.true_states);
        }
    }
    (0..n)
        .map(|i| {
            rmse(&estimates, &truths, i).map_err(|e| BenchError::Io {
                path: dir.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{GaussianMixture, MeasurementNoise};
    use crate::systems::{GaussianInit, LinearModel, SystemModel};
    use nalgebra::dmatrix;

    fn linear_scenario() -> SystemScenario {
        SystemScenario::Explicit(ExplicitSystem {
            model: SystemModel::Linear(LinearModel::new(
                dmatrix![0.9, 0.1; 0.0, 0.95],
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
        })
    }

    fn quick_spec(roster: Vec<FilterSpec>) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(linear_scenario(), roster, 4, 60);
        spec.timing_calls = 200;
        spec.timing_warmup = 10;
        spec.emit_raw = false;
        spec
    }

    #[test]
    fn oracle_roster_scores_zero_rmse() {
        let report = run_experiment(&quick_spec(vec![FilterSpec::Oracle])).unwrap();
        assert!(report.filters[0].per_state_rmse.iter().all(|v| *v == 0.0));
        assert_eq!(report.filters[0].divergence_count, 0);
    }

    #[test]
    fn identical_seeds_reproduce_identical_tables() {
        let a = run_experiment(&quick_spec(vec![
            FilterSpec::Kf,
            FilterSpec::Pf(PfConfig {
                particles: 100,
                ess_threshold: 0.5,
            }),
        ]))
        .unwrap();
        let b = run_experiment(&quick_spec(vec![
            FilterSpec::Kf,
            FilterSpec::Pf(PfConfig {
                particles: 100,
                ess_threshold: 0.5,
            }),
        ]))
        .unwrap();
        for (fa, fb) in a.filters.iter().zip(&b.filters) {
            assert_eq!(fa.per_state_rmse, fb.per_state_rmse);
            for (ra, rb) in fa.per_run_rmse.iter().zip(&fb.per_run_rmse) {
                for (x, y) in ra.iter().zip(rb) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn explicit_model_filters_are_rejected_on_opaque_scenarios() {
        let scenario = SystemScenario::OpaqueVehicle(OpaqueVehicleSpec::default_noisy());
        for f in [
            FilterSpec::Ukf(UkfParams::default()),
            FilterSpec::Pf(PfConfig::default()),
            FilterSpec::Kf,
            FilterSpec::StationaryKf,
        ] {
            let mut spec = ExperimentSpec::new(scenario.clone(), vec![f], 1, 5);
            spec.timing_calls = 1;
            spec.emit_raw = false;
            let err = run_experiment(&spec).unwrap_err();
            assert!(
                matches!(err, BenchError::ScenarioMismatch { .. }),
                "expected scenario mismatch, got {err:?}"
            );
        }
    }

    #[test]
    fn report_shape_matches_roster_and_protocol() {
        let report = run_experiment(&quick_spec(vec![FilterSpec::Kf, FilterSpec::Zoh])).unwrap();
        assert_eq!(report.filters.len(), 2);
        assert_eq!(report.filters[0].name, "kf");
        assert_eq!(report.filters[1].name, "zoh");
        assert_eq!(report.runs, 4);
        assert_eq!(report.steps, 60);
        for f in &report.filters {
            assert_eq!(f.per_run_rmse.len(), 4);
            assert_eq!(f.per_state_rmse.len(), 2);
            assert!(f.latency_ms > 0.0);
            assert!(f.per_state_rmse.iter().all(|v| *v >= 0.0));
        }
        // box stats present per state
        assert_eq!(report.filters[0].box_stats.len(), 2);
    }

    #[test]
    fn raw_csv_round_trip_matches_reported_rmse() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = quick_spec(vec![FilterSpec::Kf]);
        spec.emit_raw = true;
        spec.out_dir = Some(dir.path().to_path_buf());
        let report = run_experiment(&spec).unwrap();
        let recomputed = recompute_rmse_from_raw(dir.path(), "kf", 4, 2, 2).unwrap();
        for (a, b) in report.filters[0].per_state_rmse.iter().zip(&recomputed) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // artifacts exist
        assert!(dir.path().join("report.json").is_file());
        assert!(dir.path().join("table.csv").is_file());
        assert!(dir.path().join("plots/error_trace_kf.csv").is_file());
        assert!(dir.path().join("plots/rmse_box_kf.csv").is_file());
    }

    #[test]
    fn error_trace_has_t_rows_per_run_and_box_file_has_r_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = quick_spec(vec![FilterSpec::Zoh]);
        spec.out_dir = Some(dir.path().to_path_buf());
        run_experiment(&spec).unwrap();
        let trace = std::fs::read_to_string(dir.path().join("plots/error_trace_zoh.csv")).unwrap();
        assert_eq!(trace.lines().count(), 1 + 4 * 60);
        let boxf = std::fs::read_to_string(dir.path().join("plots/rmse_box_zoh.csv")).unwrap();
        assert_eq!(boxf.lines().count(), 1 + 4);
    }

    #[test]
    fn latency_accounting_partitions_wall_time() {
        // filter time + overhead time must equal the outer wall within 1%.
        let scenario = linear_scenario();
        let sys = match &scenario {
            SystemScenario::Explicit(s) => s.clone(),
            _ => unreachable!(),
        };
        let traj = {
            let mut rng = Rng::new(3);
            simulate(&sys, 400, &mut rng)
        };
        let mut filter = KalmanFilter::new(&sys).unwrap();
        let outer = Instant::now();
        let mut filter_time = 0.0;
        let mut overhead_time = 0.0;
        let mut boundary = Instant::now();
        for y in &traj.measurements {
            let t0 = Instant::now();
            overhead_time += t0.duration_since(boundary).as_secs_f64();
            let _ = filter.estimate(y).unwrap();
            boundary = Instant::now();
            filter_time += boundary.duration_since(t0).as_secs_f64();
        }
        overhead_time += boundary.elapsed().as_secs_f64();
        let wall = outer.elapsed().as_secs_f64();
        let accounted = filter_time + overhead_time;
        assert!(
            (accounted - wall).abs() / wall < 0.01,
            "accounted {accounted:.6}s vs wall {wall:.6}s"
        );
    }
}
