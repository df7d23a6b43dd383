// Calibration harness for the opaque-vehicle comparison: SLF, v2 policy, and
// the zero-order-hold baseline on shared trajectories.

use daof::core::{Rng, StateVec, Trajectory};
use daof::filters::{
    slf_train_closed_loop, OnlineFilter, SlfFilter, SlfTrainConfig, ZeroOrderHold,
};
use daof::rl::{train, DaofFilter, DaofVariant, MfpEnv, TrainConfig};
use daof::systems::{opaque_rollout, OpaqueVehicleSpec};
use std::time::Instant;

fn score(
    mut make_filter: impl FnMut() -> Box<dyn OnlineFilter>,
    trajs: &[Trajectory],
    name: &str,
) -> Vec<f64> {
    let n = 5;
    let mut sq = vec![0.0f64; n];
    let mut count = 0usize;
    for traj in trajs {
        let mut filter = make_filter();
        for t in 0..traj.len() {
            let est = filter.estimate(&traj.measurements[t]).unwrap();
            for i in 0..n {
                let d = est[i] - traj.true_states[t][i];
                sq[i] += d * d;
            }
            count += 1;
        }
    }
    let rmse: Vec<f64> = sq.iter().map(|v| (v / count as f64).sqrt()).collect();
    println!(
        "{name:>8}: rmse [{}]",
        rmse.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(", ")
    );
    rmse
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let daof_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60_000);
    let hidden: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(128);
    let window: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
    let slf_epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(60);

    let mut spec = OpaqueVehicleSpec::default_noisy();
    spec.seed_offset = 2;
    let runs = 100;
    let steps = 500;
    let trajs: Vec<Trajectory> = (0..runs as u64)
        .map(|k| {
            let mut source = spec.build();
            opaque_rollout(&mut source, 10_000_000 + k, steps).unwrap()
        })
        .collect();
    let init = StateVec::new(spec.init_mean.clone()).unwrap();

    score(
        || Box::new(ZeroOrderHold::new(init.clone())),
        &trajs,
        "zoh",
    );

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
    let spec_for_slf = spec.clone();
    let (slf_net, trace) = slf_train_closed_loop(
        |k| {
            let mut source = spec_for_slf.build();
            Ok(opaque_rollout(&mut source, 1_000_000 + k, steps)?)
        },
        &init,
        &slf_cfg,
    )
    .unwrap();
    println!(
        "slf trained in {:.1}s, loss {:.4e} -> {:.4e}",
        t0.elapsed().as_secs_f64(),
        trace.first().unwrap(),
        trace.last().unwrap()
    );
    let slf_rmse = score(
        || Box::new(SlfFilter::new(slf_net.clone(), window, 9, init.clone()).unwrap()),
        &trajs,
        "slf",
    );

    let t0 = Instant::now();
    let cfg = TrainConfig {
        variant: DaofVariant::V2,
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
        eval_runs: 6,
        eval_steps: 500,
        plateau_window: 15,
        plateau_tol: 0.0015,
        seed: 1,
        ..TrainConfig::default()
    };
    let spec_for_env = spec.clone();
    let make_env = move || MfpEnv::opaque(Box::new(spec_for_env.build()), window, 500);
    let out = train(make_env, None, &cfg).unwrap();
    println!(
        "daof-v2 trained {} steps in {:.1}s (diverged={})",
        out.steps_run,
        t0.elapsed().as_secs_f64(),
        out.diverged
    );
    for (step, rmse) in out.eval_history.iter().rev().take(3).rev() {
        println!(
            "  step {step:>7}: eval rmse [{}]",
            rmse.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(", ")
        );
    }
    let v2_rmse = score(
        || Box::new(DaofFilter::new(out.policy.clone(), init.clone()).unwrap()),
        &trajs,
        "daof-v2",
    );
    let wins = v2_rmse.iter().zip(&slf_rmse).filter(|(a, b)| a < b).count();
    println!("daof-v2 beats slf on {wins}/5 states");
}
