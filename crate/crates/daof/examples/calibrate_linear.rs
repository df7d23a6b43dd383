// Calibration harness: train a v1 policy on the 2-state linear-Gaussian
// system and compare its evaluation RMSE against the stationary Kalman
// filter. Used to pick training budgets; not part of the test suite.

use daof::core::{Rng, StateVec};
use daof::filters::{OnlineFilter, StationaryKalmanFilter};
use daof::noise::{GaussianMixture, MeasurementNoise};
use daof::rl::{evaluate_policy, train, DaofVariant, MfpEnv, TrainConfig, TransitionHandle};
use daof::systems::{kf_reference, simulate, ExplicitSystem, GaussianInit, LinearModel, SystemModel};
use nalgebra::dmatrix;
use std::time::Instant;

fn system() -> ExplicitSystem {
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

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let max_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40_000);
    let window: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let hidden: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(128);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3e-4);

    let sys = system();
    let stationary = kf_reference(&sys).unwrap();
    println!(
        "KF steady posterior std: [{:.5}, {:.5}]",
        stationary.posterior_cov[(0, 0)].sqrt(),
        stationary.posterior_cov[(1, 1)].sqrt()
    );

    // Empirical stationary-KF RMSE over the acceptance protocol.
    let runs = 100;
    let steps = 500;
    let mut sq = [0.0f64; 2];
    let mut count = 0usize;
    for k in 0..runs {
        let mut rng = Rng::new(900_000 + k);
        let traj = simulate(&sys, steps, &mut rng);
        let mut kf = StationaryKalmanFilter::new(&sys, &stationary).unwrap();
        for t in 0..traj.len() {
            let est = kf.estimate(&traj.measurements[t]).unwrap();
            for i in 0..2 {
                let d = est[i] - traj.true_states[t][i];
                sq[i] += d * d;
            }
            count += 1;
        }
    }
    let kf_rmse = [(sq[0] / count as f64).sqrt(), (sq[1] / count as f64).sqrt()];
    println!("stationary KF empirical RMSE: [{:.5}, {:.5}]", kf_rmse[0], kf_rmse[1]);

    let cfg = TrainConfig {
        variant: DaofVariant::V1,
        window_len: window,
        hidden: vec![hidden, hidden, hidden],
        gamma: args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.9),
        actor_lr: lr,
        critic_lr: lr,
        batch_size: 20,
        warmup_steps: 2000,
        max_steps,
        explore_anneal_steps: max_steps / 3,
        explore_sigma_final: 0.005,
        eval_interval: 2500,
        eval_runs: 8,
        eval_steps: 500,
        plateau_window: 15,
        plateau_tol: 0.0015,
        seed: 1,
        ..TrainConfig::default()
    };
    let handle = TransitionHandle {
        model: sys.model.clone(),
        dt: sys.dt,
    };
    let t0 = Instant::now();
    let make_env = || MfpEnv::explicit(system(), window, 500, Rng::new(777));
    let out = train(make_env, Some(handle), &cfg).unwrap();
    println!(
        "trained {} steps, {} episodes in {:.1}s (diverged={})",
        out.steps_run,
        out.episodes,
        t0.elapsed().as_secs_f64(),
        out.diverged
    );
    for (step, rmse) in &out.eval_history {
        println!("  step {step:>7}: eval rmse [{:.5}, {:.5}]", rmse[0], rmse[1]);
    }

    let mut eval_env = MfpEnv::explicit(system(), window, 500, Rng::new(777));
    let summary = evaluate_policy(&mut eval_env, &out.policy, 100, 500, 1 << 41).unwrap();
    println!(
        "deployed policy RMSE over 100x500: [{:.5}, {:.5}] (mean step {:.4} ms)",
        summary.per_state_rmse[0], summary.per_state_rmse[1], summary.mean_step_ms
    );
    println!(
        "ratio vs KF: [{:.3}, {:.3}]",
        summary.per_state_rmse[0] / kf_rmse[0],
        summary.per_state_rmse[1] / kf_rmse[1]
    );
}
