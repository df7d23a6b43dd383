//! Twin-critic deterministic actor-critic training for filter policies.
//!
//! One environment step per iteration: act with exploration noise, store the
//! transition, then a critic update (policy evaluation) every step and an
//! actor update plus target soft-updates (policy improvement) every
//! `policy_delay` steps. Critic targets use the lagged actor with clipped
//! smoothing noise and the elementwise minimum of the two lagged critics.
//!
//! The actor and critics operate in a normalized space fixed before training
//! by a zero-policy warm-up: window features are divided by per-feature
//! magnitudes and actor outputs are multiplied by per-component action
//! scales (one-step innovation magnitude for v1, state magnitude for v2).
//! Deployment folds both scalings into the network weights.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::core::{rms_columns, window_input_scale, HistoryWindow, Rng, StateVec};
use crate::nn::{
    adam_step, clip_grad_norm, fold_input_scale, fold_output_scale, soft_update, AdamState, Mat,
    MlpNet, NetGrads,
};

use super::env::EstimationEnv;
use super::policy::{DaofPolicy, DaofVariant, TransitionHandle};
use super::replay::{ReplayBuffer, TransitionRecord};
use super::RlError;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub variant: DaofVariant,
    pub window_len: usize,
    pub hidden: Vec<usize>,
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
    /// Training-time bound on normalized actions (rollouts, periodic
    /// evaluation, and critic targets). Deployment is unaffected.
    pub action_clip: f64,
    /// Global gradient-norm clip for actor and critic updates.
    pub grad_clip: Option<f64>,
    /// Training-time bound on estimates, in per-component state-magnitude
    /// units. Keeps early exploration inside a learnable cost envelope;
    /// deployment is unaffected.
    pub estimate_clip: f64,
    pub reward_scale: f64,
    pub scale_warmup_episodes: usize,
    pub eval_interval: usize,
    pub eval_runs: usize,
    pub eval_steps: usize,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub divergence_factor: f64,
    /// Number of periodic evaluations before the divergence guard arms;
    /// early training is legitimately chaotic.
    pub divergence_grace_evals: usize,
    /// Deploy the snapshot with the best periodic-eval RMSE instead of the
    /// final iterate.
    pub keep_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: DaofVariant::V1,
            window_len: 20,
            hidden: vec![256, 256, 256],
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
            grad_clip: Some(10.0),
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
            seed: 0,
        }
    }
}

/// One training-log row, emitted at each episode end.
#[derive(Clone, Debug)]
pub struct TrainLogRow {
    pub step: usize,
    pub episode: usize,
    pub accumulated_cost: f64,
    pub eval_rmse: Vec<f64>,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub wall_ms: f64,
}

/// Writes the training log CSV:
/// `step,episode,accumulated_cost,eval_rmse_0..n-1,critic_loss,actor_loss,wall_ms`.
pub fn write_training_log(path: &Path, rows: &[TrainLogRow], n: usize) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["step".to_string(), "episode".into(), "accumulated_cost".into()];
    header.extend((0..n).map(|i| format!("eval_rmse_{i}")));
    header.extend(["critic_loss".to_string(), "actor_loss".into(), "wall_ms".into()]);
    writeln!(file, "{}", header.join(","))?;
    for r in rows {
        let mut cells = vec![
            r.step.to_string(),
            r.episode.to_string(),
            crate::core::fmt_g(r.accumulated_cost, 12),
        ];
        cells.extend(r.eval_rmse.iter().map(|v| crate::core::fmt_g(*v, 12)));
        cells.push(crate::core::fmt_g(r.critic_loss, 12));
        cells.push(crate::core::fmt_g(r.actor_loss, 12));
        cells.push(crate::core::fmt_g(r.wall_ms, 12));
        writeln!(file, "{}", cells.join(","))?;
    }
    Ok(())
}

pub struct TrainOutput {
    /// Deployed policy: scalings folded into the actor weights.
    pub policy: DaofPolicy,
    pub log: Vec<TrainLogRow>,
    /// `(env step, per-state eval RMSE)` history.
    pub eval_history: Vec<(usize, Vec<f64>)>,
    pub steps_run: usize,
    pub episodes: usize,
    pub diverged: bool,
    pub input_scale: Vec<f64>,
    pub action_scale: Vec<f64>,
    /// First critic in training space, for diagnostics and tests.
    pub critic1: MlpNet,
    pub actor_raw: MlpNet,
}

fn scale_rows(records: &[&TransitionRecord], pick_next: bool, scale: &[f64]) -> Mat {
    let cols = scale.len();
    let mut mat = Mat::zeros(records.len(), cols);
    for (r, rec) in records.iter().enumerate() {
        let src = if pick_next { &rec.next_window } else { &rec.window };
        let row = mat.row_mut(r);
        for ((dst, v), s) in row.iter_mut().zip(src).zip(scale) {
            *dst = v / s;
        }
    }
    mat
}

fn concat_cols(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows);
    let mut out = Mat::zeros(a.rows, a.cols + b.cols);
    for r in 0..a.rows {
        out.row_mut(r)[..a.cols].copy_from_slice(a.row(r));
        out.row_mut(r)[a.cols..].copy_from_slice(b.row(r));
    }
    out
}

/// TD loss for both critics on one batch, with gradients.
///
/// The target is `cost * reward_scale + gamma * min(Q'_1, Q'_2)(h', a')`
/// where `a'` comes from the lagged actor, optionally perturbed by clipped
/// Gaussian smoothing noise and bounded to the normalized action range.
/// Each critic's loss is the mean of half the squared TD residual; the
/// returned scalar averages the two critics.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    batch: &[&TransitionRecord],
    critics: (&MlpNet, &MlpNet),
    critic_targets: (&MlpNet, &MlpNet),
    actor_target: &MlpNet,
    gamma: f64,
    reward_scale: f64,
    input_scale: &[f64],
    smoothing: Option<(f64, f64, f64, &mut Rng)>,
) -> Result<(f64, NetGrads, NetGrads), RlError> {
    let b = batch.len();
    let next_scaled = scale_rows(batch, true, input_scale);
    let (mut next_actions, _) = actor_target.forward_batch(&next_scaled)?;
    if let Some((sigma, clip, action_clip, rng)) = smoothing {
        for v in next_actions.data.iter_mut() {
            *v = (*v + (sigma * rng.normal()).clamp(-clip, clip)).clamp(-action_clip, action_clip);
        }
    }
    let next_input = concat_cols(&next_scaled, &next_actions);
    let (q1_next, _) = critic_targets.0.forward_batch(&next_input)?;
    let (q2_next, _) = critic_targets.1.forward_batch(&next_input)?;
    let mut targets = vec![0.0; b];
    for (r, rec) in batch.iter().enumerate() {
        let bootstrap = if rec.terminal {
            0.0
        } else {
            q1_next.row(r)[0].min(q2_next.row(r)[0])
        };
        targets[r] = rec.cost * reward_scale + gamma * bootstrap;
        if !targets[r].is_finite() {
            return Err(RlError::NonFiniteTarget);
        }
    }

    let cur_scaled = scale_rows(batch, false, input_scale);
    let mut actions = Mat::zeros(b, batch[0].action_norm.len());
    for (r, rec) in batch.iter().enumerate() {
        actions.row_mut(r).copy_from_slice(&rec.action_norm);
    }
    let cur_input = concat_cols(&cur_scaled, &actions);

    let mut total_loss = 0.0;
    let mut grads = Vec::with_capacity(2);
    for critic in [critics.0, critics.1] {
        let (q, cache) = critic.forward_batch(&cur_input)?;
        let mut out_grad = Mat::zeros(b, 1);
        let mut loss = 0.0;
        for r in 0..b {
            let resid = q.row(r)[0] - targets[r];
            loss += 0.5 * resid * resid;
            out_grad.row_mut(r)[0] = resid / b as f64;
        }
        total_loss += loss / b as f64;
        let (g, _) = critic.backward(&cache, &out_grad);
        grads.push(g);
    }
    let g2 = grads.pop().expect("two gradients");
    let g1 = grads.pop().expect("two gradients");
    Ok((total_loss / 2.0, g1, g2))
}

/// Actor objective `mean_batch Q(h, pi(h))` and its gradient through the
/// first critic's action input.
pub fn actor_loss(
    batch: &[&TransitionRecord],
    actor: &MlpNet,
    critic1: &MlpNet,
    input_scale: &[f64],
) -> Result<(f64, NetGrads), RlError> {
    let windows = scale_rows(batch, false, input_scale);
    actor_loss_on_windows(&windows, actor, critic1)
}

pub(crate) fn actor_loss_on_windows(
    windows_scaled: &Mat,
    actor: &MlpNet,
    critic1: &MlpNet,
) -> Result<(f64, NetGrads), RlError> {
    let b = windows_scaled.rows;
    let (actions, actor_cache) = actor.forward_batch(windows_scaled)?;
    let critic_input = concat_cols(windows_scaled, &actions);
    let (q, critic_cache) = critic1.forward_batch(&critic_input)?;
    let loss = q.data.iter().sum::<f64>() / b as f64;
    let mut dq = Mat::zeros(b, 1);
    for r in 0..b {
        dq.row_mut(r)[0] = 1.0 / b as f64;
    }
    let (_, dinput) = critic1.backward(&critic_cache, &dq);
    let mut daction = Mat::zeros(b, actions.cols);
    for r in 0..b {
        daction
            .row_mut(r)
            .copy_from_slice(&dinput.row(r)[windows_scaled.cols..]);
    }
    let (grads, _) = actor.backward(&actor_cache, &daction);
    Ok((loss, grads))
}

/// Actor objective against an arbitrary differentiable critic function
/// `q(window_row, action) -> (value, dvalue/daction)`.
pub fn actor_loss_with<Q>(
    windows_scaled: &Mat,
    actor: &MlpNet,
    q: Q,
) -> Result<(f64, NetGrads), RlError>
where
    Q: Fn(&[f64], &[f64]) -> (f64, Vec<f64>),
{
    let b = windows_scaled.rows;
    let (actions, cache) = actor.forward_batch(windows_scaled)?;
    let mut loss = 0.0;
    let mut out_grad = Mat::zeros(b, actions.cols);
    for r in 0..b {
        let (v, dv) = q(windows_scaled.row(r), actions.row(r));
        loss += v / b as f64;
        for (g, d) in out_grad.row_mut(r).iter_mut().zip(dv) {
            *g = d / b as f64;
        }
    }
    let (grads, _) = actor.backward(&cache, &out_grad);
    Ok((loss, grads))
}

struct Scales {
    input: Vec<f64>,
    action: Vec<f64>,
    state_rms: Vec<f64>,
}

/// Zero-policy warm-up: roll episodes with the un-corrected policy (pure
/// prediction for v1, zero output for v2) and collect magnitudes.
fn warmup_scales<E: EstimationEnv>(
    env: &mut E,
    transition: Option<&TransitionHandle>,
    cfg: &TrainConfig,
) -> Result<Scales, RlError> {
    let n = env.state_dim();
    let mut truth_rows: Vec<Vec<f64>> = Vec::new();
    let mut meas_rows: Vec<Vec<f64>> = Vec::new();
    let mut action_rows: Vec<Vec<f64>> = Vec::new();
    for ep in 0..cfg.scale_warmup_episodes.max(1) as u64 {
        let window = env.reset((1 << 40) + ep)?;
        meas_rows.push(window.pairs()[0].1.as_slice().to_vec());
        let mut prev = env.initial_estimate();
        let mut t = 0usize;
        loop {
            let zero_estimate = match (cfg.variant, transition) {
                (DaofVariant::V1, Some(h)) => h.apply(&prev, t.saturating_sub(1)),
                (DaofVariant::V1, None) => {
                    return Err(RlError::BadConfig {
                        reason: "v1 training requires a transition handle".into(),
                    })
                }
                (DaofVariant::V2, _) => StateVec::zeros(n),
            };
            let truth = env.true_state().clone();
            truth_rows.push(truth.as_slice().to_vec());
            action_rows.push(truth.sub(&zero_estimate)?);
            let out = env.step(&zero_estimate)?;
            meas_rows.push(out.window.pairs()[0].1.as_slice().to_vec());
            prev = zero_estimate;
            t += 1;
            if out.done {
                break;
            }
        }
    }
    let truth_refs: Vec<&[f64]> = truth_rows.iter().map(|v| v.as_slice()).collect();
    let meas_refs: Vec<&[f64]> = meas_rows.iter().map(|v| v.as_slice()).collect();
    let action_refs: Vec<&[f64]> = action_rows.iter().map(|v| v.as_slice()).collect();
    let state_rms: Vec<f64> = rms_columns(&truth_refs, n)
        .iter()
        .map(|v| v.max(1e-6))
        .collect();
    let input = window_input_scale(
        cfg.window_len,
        &state_rms,
        &rms_columns(&meas_refs, env.meas_dim()),
    );
    let action = rms_columns(&action_refs, n)
        .iter()
        .map(|v| v.max(1e-6))
        .collect();
    Ok(Scales { input, action, state_rms })
}

fn physical_action(
    variant: DaofVariant,
    transition: Option<&TransitionHandle>,
    action_scale: &[f64],
    a_norm: &[f64],
    prev: &StateVec,
    t: usize,
    estimate_bound: Option<&[f64]>,
) -> Result<StateVec, RlError> {
    let scaled: Vec<f64> = a_norm.iter().zip(action_scale).map(|(a, s)| a * s).collect();
    let mut estimate: Vec<f64> = match variant {
        DaofVariant::V2 => scaled,
        DaofVariant::V1 => {
            let handle = transition.expect("v1 carries a transition handle");
            let predicted = handle.apply(prev, t.saturating_sub(1));
            predicted
                .as_slice()
                .iter()
                .zip(&scaled)
                .map(|(p, u)| p + u)
                .collect()
        }
    };
    if let Some(bound) = estimate_bound {
        for (e, b) in estimate.iter_mut().zip(bound) {
            *e = e.clamp(-b, *b);
        }
    }
    StateVec::new(estimate).map_err(|_| RlError::NonFiniteActorOutput {
        step: t,
        window_snapshot: format!("{a_norm:?}"),
    })
}

/// Deterministic evaluation in training space (actions bounded like the
/// behavior policy). Returns per-state RMSE.
#[allow(clippy::too_many_arguments)]
fn eval_in_training_space<E: EstimationEnv>(
    env: &mut E,
    actor: &MlpNet,
    scales: &Scales,
    variant: DaofVariant,
    transition: Option<&TransitionHandle>,
    runs: usize,
    steps: usize,
    action_clip: f64,
    estimate_clip: f64,
) -> Result<Vec<f64>, RlError> {
    let n = env.state_dim();
    let bound: Vec<f64> = scales.state_rms.iter().map(|v| v * estimate_clip).collect();
    let mut sq = vec![0.0; n];
    let mut count = 0usize;
    let mut flat = vec![0.0; actor.input_dim()];
    for run in 0..runs as u64 {
        let mut window = env.reset((1 << 41) + run)?;
        let mut prev = env.initial_estimate();
        for t in 0..steps.min(env.horizon()) {
            window.flatten_into(&mut flat);
            for (f, s) in flat.iter_mut().zip(&scales.input) {
                *f /= s;
            }
            let mut a = actor.forward(&flat)?;
            for v in a.iter_mut() {
                *v = v.clamp(-action_clip, action_clip);
            }
            let estimate = physical_action(
                variant,
                transition,
                &scales.action,
                &a,
                &prev,
                t,
                Some(&bound),
            )?;
            let truth = env.true_state();
            for (i, acc) in sq.iter_mut().enumerate() {
                let d = estimate[i] - truth[i];
                *acc += d * d;
            }
            count += 1;
            let out = env.step(&estimate)?;
            window = out.window;
            prev = estimate;
            if out.done {
                break;
            }
        }
    }
    Ok(sq.iter().map(|v| (v / count as f64).sqrt()).collect())
}

fn rmse_aggregate(rmse: &[f64]) -> f64 {
    rmse.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Full training loop. `make_env` builds identical environments (one for
/// rollouts, one for evaluation); all randomness is derived from
/// `cfg.seed`, so equal configurations reproduce identical outputs.
pub fn train<E, F>(
    mut make_env: F,
    transition: Option<TransitionHandle>,
    cfg: &TrainConfig,
) -> Result<TrainOutput, RlError>
where
    E: EstimationEnv,
    F: FnMut() -> E,
{
    if cfg.variant == DaofVariant::V1 && transition.is_none() {
        return Err(RlError::BadConfig {
            reason: "v1 training requires a transition handle".into(),
        });
    }
    let started = Instant::now();
    let mut env = make_env();
    let mut eval_env = make_env();
    let n = env.state_dim();
    let m = env.meas_dim();
    let flat_dim = cfg.window_len * (n + m);
    if env.window_len() != cfg.window_len {
        return Err(RlError::BadConfig {
            reason: format!(
                "environment window {} does not match config window {}",
                env.window_len(),
                cfg.window_len
            ),
        });
    }

    let scales = warmup_scales(&mut env, transition.as_ref(), cfg)?;

    let root = Rng::new(cfg.seed);
    let mut init_rng = root.child(10);
    let mut actor = MlpNet::new(
        &[&[flat_dim][..], &cfg.hidden[..], &[n][..]].concat(),
        &mut init_rng,
    );
    let critic_dims = [&[flat_dim + n][..], &cfg.hidden[..], &[1][..]].concat();
    let mut critic1 = MlpNet::new(&critic_dims, &mut root.child(11));
    let mut critic2 = MlpNet::new(&critic_dims, &mut root.child(12));
    let mut actor_target = actor.clone();
    let mut critic1_target = critic1.clone();
    let mut critic2_target = critic2.clone();
    let mut actor_adam = AdamState::new(&actor, cfg.actor_lr);
    let mut critic1_adam = AdamState::new(&critic1, cfg.critic_lr);
    let mut critic2_adam = AdamState::new(&critic2, cfg.critic_lr);

    let mut explore_rng = root.child(20);
    let mut batch_rng = root.child(21);
    let mut smooth_rng = root.child(22);

    let mut replay = ReplayBuffer::new(cfg.replay_capacity);

    let initial_rmse = eval_in_training_space(
        &mut eval_env,
        &actor,
        &scales,
        cfg.variant,
        transition.as_ref(),
        cfg.eval_runs,
        cfg.eval_steps,
        cfg.action_clip,
        cfg.estimate_clip,
    )?;
    let divergence_ref = rmse_aggregate(&initial_rmse).max(1e-12);
    let mut best_agg = rmse_aggregate(&initial_rmse);
    let mut best_actor = actor.clone();
    let mut eval_history = vec![(0usize, initial_rmse.clone())];
    let mut latest_eval = initial_rmse;

    let mut log: Vec<TrainLogRow> = Vec::new();
    let mut episode = 0usize;
    let mut window = env.reset(episode as u64)?;
    let mut prev_estimate = env.initial_estimate();
    let mut flat_raw = window.flatten();
    let mut episode_cost = 0.0;
    let mut episode_t = 0usize;
    let mut critic_loss_acc = 0.0;
    let mut actor_loss_acc = 0.0;
    let mut critic_updates_since_log = 0usize;
    let mut actor_updates_since_log = 0usize;
    let mut critic_update_count = 0usize;
    let mut diverged = false;
    let mut steps_run = 0usize;
    let mut scaled_flat = vec![0.0; flat_dim];
    let estimate_bound: Vec<f64> = scales
        .state_rms
        .iter()
        .map(|v| v * cfg.estimate_clip)
        .collect();

    'training: for step in 0..cfg.max_steps {
        steps_run = step + 1;
        // --- act ---
        let mut a_norm: Vec<f64> = if step < cfg.warmup_steps {
            explore_rng.normal_vec(n)
        } else {
            for (dst, (v, s)) in scaled_flat.iter_mut().zip(flat_raw.iter().zip(&scales.input)) {
                *dst = v / s;
            }
            let mut a = actor.forward(&scaled_flat)?;
            let frac = (step as f64 / cfg.explore_anneal_steps.max(1) as f64).min(1.0);
            let sigma =
                cfg.explore_sigma_init + (cfg.explore_sigma_final - cfg.explore_sigma_init) * frac;
            for v in a.iter_mut() {
                *v += sigma * explore_rng.normal();
            }
            a
        };
        for v in a_norm.iter_mut() {
            *v = v.clamp(-cfg.action_clip, cfg.action_clip);
        }
        let estimate = physical_action(
            cfg.variant,
            transition.as_ref(),
            &scales.action,
            &a_norm,
            &prev_estimate,
            episode_t,
            Some(&estimate_bound),
        )?;
        // keep the stored normalized action consistent with the executed
        // (possibly clamped) estimate
        match cfg.variant {
            DaofVariant::V2 => {
                for ((a, e), s) in a_norm.iter_mut().zip(estimate.as_slice()).zip(&scales.action) {
                    *a = e / s;
                }
            }
            DaofVariant::V1 => {
                let handle = transition.as_ref().expect("v1 carries a transition handle");
                let predicted = handle.apply(&prev_estimate, episode_t.saturating_sub(1));
                for (i, a) in a_norm.iter_mut().enumerate() {
                    *a = (estimate[i] - predicted[i]) / scales.action[i];
                }
            }
        }
        let outcome = env.step(&estimate)?;
        let next_flat_raw = outcome.window.flatten();
        replay.push(TransitionRecord {
            window: std::mem::replace(&mut flat_raw, next_flat_raw),
            action: estimate.as_slice().to_vec(),
            action_norm: a_norm,
            cost: outcome.cost,
            next_window: flat_raw.clone(),
            // horizon truncation is not an absorbing terminal: bootstrap on
            terminal: false,
        });
        episode_cost += outcome.cost;
        window = outcome.window;
        prev_estimate = estimate;
        episode_t += 1;

        // --- learn ---
        if step + 1 >= cfg.warmup_steps && replay.len() >= cfg.batch_size {
            let batch = replay.sample(cfg.batch_size, &mut batch_rng);
            let (closs, mut g1, mut g2) = critic_loss(
                &batch,
                (&critic1, &critic2),
                (&critic1_target, &critic2_target),
                &actor_target,
                cfg.gamma,
                cfg.reward_scale,
                &scales.input,
                Some((
                    cfg.target_noise_sigma,
                    cfg.target_noise_clip,
                    cfg.action_clip,
                    &mut smooth_rng,
                )),
            )?;
            if let Some(clip) = cfg.grad_clip {
                clip_grad_norm(&mut g1, clip);
                clip_grad_norm(&mut g2, clip);
            }
            adam_step(&mut critic1, &g1, &mut critic1_adam)?;
            adam_step(&mut critic2, &g2, &mut critic2_adam)?;
            critic_loss_acc += closs;
            critic_updates_since_log += 1;
            critic_update_count += 1;

            if critic_update_count % cfg.policy_delay == 0 {
                let batch = replay.sample(cfg.batch_size, &mut batch_rng);
                let (aloss, mut agrads) = actor_loss(&batch, &actor, &critic1, &scales.input)?;
                if let Some(clip) = cfg.grad_clip {
                    clip_grad_norm(&mut agrads, clip);
                }
                adam_step(&mut actor, &agrads, &mut actor_adam)?;
                actor_loss_acc += aloss;
                actor_updates_since_log += 1;
                soft_update(&mut actor_target, &actor, cfg.tau)?;
                soft_update(&mut critic1_target, &critic1, cfg.tau)?;
                soft_update(&mut critic2_target, &critic2, cfg.tau)?;
            }
        }

        // --- episode bookkeeping ---
        if episode_t >= env.horizon() {
            log.push(TrainLogRow {
                step: step + 1,
                episode,
                accumulated_cost: episode_cost,
                eval_rmse: latest_eval.clone(),
                critic_loss: critic_loss_acc / critic_updates_since_log.max(1) as f64,
                actor_loss: actor_loss_acc / actor_updates_since_log.max(1) as f64,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            episode += 1;
            window = env.reset(episode as u64)?;
            flat_raw = window.flatten();
            prev_estimate = env.initial_estimate();
            episode_cost = 0.0;
            episode_t = 0;
            critic_loss_acc = 0.0;
            actor_loss_acc = 0.0;
            critic_updates_since_log = 0;
            actor_updates_since_log = 0;
        }

        // --- periodic evaluation, divergence guard, plateau stop ---
        if (step + 1) % cfg.eval_interval == 0 && step + 1 >= cfg.warmup_steps {
            let rmse = eval_in_training_space(
                &mut eval_env,
                &actor,
                &scales,
                cfg.variant,
                transition.as_ref(),
                cfg.eval_runs,
                cfg.eval_steps,
                cfg.action_clip,
                cfg.estimate_clip,
            )?;
            let agg = rmse_aggregate(&rmse);
            latest_eval = rmse.clone();
            eval_history.push((step + 1, rmse));
            if agg < best_agg {
                best_agg = agg;
                best_actor = actor.clone();
            }
            if eval_history.len() > cfg.divergence_grace_evals
                && agg > cfg.divergence_factor * divergence_ref
            {
                diverged = true;
                break 'training;
            }
            let evals_since_start = eval_history.len() - 1;
            if evals_since_start > cfg.plateau_window {
                let idx = eval_history.len() - 1 - cfg.plateau_window;
                let past = rmse_aggregate(&eval_history[idx].1);
                if past > 0.0 && (past - agg) / past < cfg.plateau_tol {
                    break 'training;
                }
            }
        }
    }

    let mut deployed = if cfg.keep_best { best_actor } else { actor.clone() };
    fold_input_scale(&mut deployed, &scales.input);
    fold_output_scale(&mut deployed, &scales.action);
    let policy = DaofPolicy {
        variant: cfg.variant,
        actor: deployed,
        window_len: cfg.window_len,
        state_dim: n,
        meas_dim: m,
        transition,
    };
    let _ = window;
    Ok(TrainOutput {
        policy,
        log,
        eval_history,
        steps_run,
        episodes: episode,
        diverged,
        input_scale: scales.input,
        action_scale: scales.action,
        critic1,
        actor_raw: actor,
    })
}

/// Everything an evaluation policy closure may look at. The hidden truth is
/// exposed for diagnostic oracles and label-based scoring only.
pub struct EvalContext<'a> {
    pub window: &'a HistoryWindow,
    pub prev_estimate: &'a StateVec,
    pub t: usize,
    pub truth: &'a StateVec,
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub per_state_rmse: Vec<f64>,
    /// Aggregate RMSE (norm over states) per run, for distribution plots.
    pub per_run_rmse: Vec<f64>,
    pub mean_cost: f64,
    /// Mean wall-clock per estimator call, milliseconds.
    pub mean_step_ms: f64,
    pub runs: usize,
    pub steps: usize,
}

/// Runs `runs` independent episodes of `steps` steps each, scoring the
/// closure policy against the hidden truths. Estimator latency is measured
/// over the policy calls only.
pub fn evaluate_with<E, P>(
    env: &mut E,
    runs: usize,
    steps: usize,
    seed_base: u64,
    mut policy: P,
) -> Result<EvalSummary, RlError>
where
    E: EstimationEnv,
    P: FnMut(&EvalContext) -> Result<StateVec, RlError>,
{
    let n = env.state_dim();
    let mut sq = vec![0.0; n];
    let mut per_run = Vec::with_capacity(runs);
    let mut cost_sum = 0.0;
    let mut count = 0usize;
    let mut policy_seconds = 0.0;
    for run in 0..runs as u64 {
        let mut window = env.reset(seed_base + run)?;
        let mut prev = env.initial_estimate();
        let mut run_sq = 0.0;
        let mut run_count = 0usize;
        for t in 0..steps.min(env.horizon()) {
            let truth = env.true_state().clone();
            let ctx = EvalContext {
                window: &window,
                prev_estimate: &prev,
                t,
                truth: &truth,
            };
            let t0 = Instant::now();
            let estimate = policy(&ctx)?;
            policy_seconds += t0.elapsed().as_secs_f64();
            for (i, acc) in sq.iter_mut().enumerate() {
                let d = estimate[i] - truth[i];
                *acc += d * d;
                run_sq += d * d;
            }
            count += 1;
            run_count += 1;
            let out = env.step(&estimate)?;
            cost_sum += out.cost;
            window = out.window;
            prev = estimate;
            if out.done {
                break;
            }
        }
        per_run.push((run_sq / run_count.max(1) as f64).sqrt());
    }
    Ok(EvalSummary {
        per_state_rmse: sq.iter().map(|v| (v / count as f64).sqrt()).collect(),
        per_run_rmse: per_run,
        mean_cost: cost_sum / count as f64,
        mean_step_ms: policy_seconds * 1e3 / count as f64,
        runs,
        steps,
    })
}

/// Evaluates a deployed policy under the standard protocol.
pub fn evaluate_policy<E: EstimationEnv>(
    env: &mut E,
    policy: &DaofPolicy,
    runs: usize,
    steps: usize,
    seed_base: u64,
) -> Result<EvalSummary, RlError> {
    evaluate_with(env, runs, steps, seed_base, |ctx| {
        super::policy::daof_estimate(policy, ctx.window, ctx.prev_estimate, ctx.t)
    })
}
