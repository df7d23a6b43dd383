// Calibration harness for the 2-DOF vehicle comparison: UKF, PF, SLF and a
// trained v1 policy on shared trajectories. Informs training budgets and the
// benchmark presets; not part of the test suite.

use daof::core::{Rng, StateVec, Trajectory};
use daof::filters::{
    slf_train_closed_loop, OnlineFilter, ParticleFilter, PfConfig, SlfFilter, SlfTrainConfig,
    UkfParams, UnscentedKalmanFilter,
};
use daof::noise::{GaussianMixture, LaplaceNoise, MeasurementNoise};
use daof::rl::{train, DaofFilter, DaofVariant, MfpEnv, TrainConfig, TransitionHandle};
use daof::systems::{simulate, Bicycle2Dof, ExplicitSystem, GaussianInit, SystemModel};
use std::time::Instant;

fn envf(name: &str, default: f64) -> f64 {
    std::env::var(name)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn system() -> ExplicitSystem {
    let bias_d = envf("BIAS_D", 0.01);
    let bias_w = envf("BIAS_W", 0.04);
    let b_ay = envf("B_AY", 1.0);
    let b_om = envf("B_OM", 0.1);
    let var_d = envf("VAR_D", 2.5e-5);
    let var_w = envf("VAR_W", 4e-4);
    ExplicitSystem {
        model: SystemModel::Bicycle(Bicycle2Dof::default()),
        process_noise: Some(
            GaussianMixture::new(
                vec![0.8, 0.2],
                vec![vec![0.0, 0.0], vec![bias_d, bias_w]],
                vec![
                    vec![var_d, 0.0, 0.0, var_w],
                    vec![4.0 * var_d, 0.0, 0.0, 4.0 * var_w],
                ],
            )
            .unwrap(),
        ),
        measurement_noise: Some(MeasurementNoise::Laplace(
            LaplaceNoise::new(vec![0.0, 0.0], vec![b_ay, b_om]).unwrap(),
        )),
        initial: GaussianInit::diagonal(StateVec::zeros(2), &[0.0025, 0.0025]).unwrap(),
        dt: 0.02,
    }
}

fn score<F: OnlineFilter>(
    mut make_filter: impl FnMut(u64) -> F,
    trajs: &[Trajectory],
    name: &str,
) -> [f64; 2] {
    let mut sq = [0.0f64; 2];
    let mut count = 0usize;
    let mut elapsed = 0.0;
    let mut calls = 0usize;
    let mut diverged = 0usize;
    for (k, traj) in trajs.iter().enumerate() {
        let mut filter = make_filter(k as u64);
        let mut bad = false;
        let mut run_sq = [0.0f64; 2];
        let mut run_count = 0usize;
        for t in 0..traj.len() {
            let t0 = Instant::now();
            let est = match filter.estimate(&traj.measurements[t]) {
                Ok(e) => e,
                Err(_) => {
                    bad = true;
                    break;
                }
            };
            elapsed += t0.elapsed().as_secs_f64();
            calls += 1;
            for i in 0..2 {
                let d = est[i] - traj.true_states[t][i];
                run_sq[i] += d * d;
            }
            run_count += 1;
        }
        if bad || run_sq.iter().any(|v| !v.is_finite() || *v / run_count as f64 > 100.0) {
            diverged += 1;
            continue;
        }
        for i in 0..2 {
            sq[i] += run_sq[i];
        }
        count += run_count;
    }
    let rmse = [
        (sq[0] / count.max(1) as f64).sqrt(),
        (sq[1] / count.max(1) as f64).sqrt(),
    ];
    println!(
        "{name:>10}: rmse [{:.5}, {:.5}]  {:.4} ms/step  diverged {diverged}",
        rmse[0],
        rmse[1],
        elapsed * 1e3 / calls.max(1) as f64
    );
    rmse
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let daof_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60_000);
    let window: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let hidden: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(128);
    let slf_epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(60);

    let sys = system();
    let runs = 100;
    let steps = 500;
    let trajs: Vec<Trajectory> = (0..runs)
        .map(|k| simulate(&sys, steps, &mut Rng::new(5_000_000 + k)))
        .collect();

    score(
        |_| UnscentedKalmanFilter::new(&sys, UkfParams::default()).unwrap(),
        &trajs,
        "ukf",
    );
    score(
        |k| {
            ParticleFilter::new(
                &sys,
                PfConfig::default(),
                Rng::new(123).child(k),
            )
        },
        &trajs,
        "pf-1000",
    );

    // SLF closed-loop training
    let t0 = Instant::now();
    let slf_cfg = SlfTrainConfig {
        hidden: vec![hidden, hidden, hidden],
        window_len: window,
        lr: 1e-3,
        batch_size: 20,
        epochs: slf_epochs,
        episodes_per_epoch: 4,
        seed: 11,
    };
    let mut gen_rng = Rng::new(42);
    let (slf_net, trace) = slf_train_closed_loop(
        |_k| Ok(simulate(&sys, steps, &mut gen_rng)),
        &StateVec::zeros(2),
        &slf_cfg,
    )
    .unwrap();
    println!(
        "slf trained in {:.1}s, first/last loss {:.4e} -> {:.4e}",
        t0.elapsed().as_secs_f64(),
        trace.first().unwrap(),
        trace.last().unwrap()
    );
    score(
        |_| SlfFilter::new(slf_net.clone(), window, 2, StateVec::zeros(2)).unwrap(),
        &trajs,
        "slf",
    );

    if daof_steps == 0 {
        return;
    }
    // v1 policy training
    let t0 = Instant::now();
    let cfg = TrainConfig {
        variant: DaofVariant::V1,
        window_len: window,
        hidden: vec![hidden, hidden, hidden],
        gamma: 0.99,
        actor_lr: 2e-4,
        critic_lr: 2e-4,
        batch_size: 20,
        warmup_steps: 2000,
        max_steps: daof_steps,
        explore_anneal_steps: daof_steps / 3,
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
    let make_env = || MfpEnv::explicit(system(), window, 500, Rng::new(777));
    let out = train(make_env, Some(handle), &cfg).unwrap();
    println!(
        "daof-v1 trained {} steps in {:.1}s (diverged={})",
        out.steps_run,
        t0.elapsed().as_secs_f64(),
        out.diverged
    );
    for (step, rmse) in out.eval_history.iter().rev().take(4).rev() {
        println!("  step {step:>7}: eval rmse [{:.5}, {:.5}]", rmse[0], rmse[1]);
    }
    score(
        |_| DaofFilter::new(out.policy.clone(), StateVec::zeros(2)).unwrap(),
        &trajs,
        "daof-v1",
    );
}
