//! Supervised-learning filter: an MLP regressing the true state from the
//! flattened history window, trained with Adam on mean squared error.
//!
//! Deployment-matched training: each epoch regenerates its dataset by
//! rolling the current net closed-loop over fresh trajectories, so the
//! window distribution the net sees converges to the one it produces.
//! Inputs are standardized by fixed per-feature scales during training; the
//! scales are folded into the first layer before the net is returned, so the
//! deployed filter is exactly `x_hat = net(flatten(window))`.

use super::{FilterError, OnlineFilter};
use crate::core::{rms_columns, window_input_scale, HistoryWindow, MeasVec, Rng, StateVec, Trajectory};
use crate::nn::{adam_step, fold_input_scale, AdamState, F32Net, Mat, MlpNet, Scratch, ScratchF32};

#[derive(Clone, Debug)]
pub struct SlfTrainConfig {
    pub hidden: Vec<usize>,
    pub window_len: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Dataset regenerations (one optimizer pass over each).
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub seed: u64,
}

impl Default for SlfTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            window_len: 20,
            lr: 1e-4,
            batch_size: 20,
            epochs: 40,
            episodes_per_epoch: 10,
            seed: 0,
        }
    }
}

/// One optimizer pass of mini-batch MSE regression over `(input, target)`
/// rows. Returns the mean per-sample loss. Inputs are consumed as-is; any
/// scaling is the caller's business.
fn regression_pass(
    net: &mut MlpNet,
    adam: &mut AdamState,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64, FilterError> {
    let count = inputs.len();
    let mut order: Vec<usize> = (0..count).collect();
    for i in (1..count).rev() {
        order.swap(i, rng.index(i + 1));
    }
    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    for chunk in order.chunks(batch_size) {
        let rows: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
        let batch = Mat::from_rows(&rows);
        let (y, cache) = net.forward_batch(&batch)?;
        let mut grad = Mat::zeros(y.rows, y.cols);
        for (r, &i) in chunk.iter().enumerate() {
            let target = &targets[i];
            for c in 0..y.cols {
                let d = y.row(r)[c] - target[c];
                loss_sum += 0.5 * d * d;
                grad.row_mut(r)[c] = d / chunk.len() as f64;
            }
        }
        let (grads, _) = net.backward(&cache, &grad);
        adam_step(net, &grads, adam)?;
        seen += chunk.len();
    }
    let mean = loss_sum / seen.max(1) as f64;
    if !mean.is_finite() {
        return Err(FilterError::Training {
            reason: format!("non-finite training loss {mean}"),
        });
    }
    Ok(mean)
}

/// Trains a regression net on a fixed dataset of `(window, truth)` pairs.
/// Returns the net and the per-pass loss trace.
pub fn slf_train(
    dataset: &[(HistoryWindow, StateVec)],
    cfg: &SlfTrainConfig,
) -> Result<(MlpNet, Vec<f64>), FilterError> {
    if dataset.is_empty() {
        return Err(FilterError::Training {
            reason: "empty dataset".into(),
        });
    }
    let flat_dim = dataset[0].0.flat_dim();
    let n = dataset[0].1.dim();
    for (w, x) in dataset {
        if w.flat_dim() != flat_dim || x.dim() != n {
            return Err(FilterError::Training {
                reason: "dataset windows/targets have mixed dimensions".into(),
            });
        }
    }
    let inputs: Vec<Vec<f64>> = dataset.iter().map(|(w, _)| w.flatten()).collect();
    let targets: Vec<Vec<f64>> = dataset
        .iter()
        .map(|(_, x)| x.as_slice().to_vec())
        .collect();
    let input_refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    let scale = rms_columns(&input_refs, flat_dim)
        .iter()
        .map(|v| v.max(1e-6))
        .collect::<Vec<_>>();
    let scaled: Vec<Vec<f64>> = inputs
        .iter()
        .map(|row| row.iter().zip(&scale).map(|(v, s)| v / s).collect())
        .collect();

    let mut dims = vec![flat_dim];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(n);
    let mut rng = Rng::new(cfg.seed);
    let mut net = MlpNet::new(&dims, &mut rng);
    let mut adam = AdamState::new(&net, cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let loss = regression_pass(
            &mut net,
            &mut adam,
            &scaled,
            &targets,
            cfg.batch_size,
            &mut rng,
        )?;
        trace.push(loss);
    }
    fold_input_scale(&mut net, &scale);
    Ok((net, trace))
}

/// Closed-loop training: each epoch draws fresh trajectories from `rollout`,
/// filters them with the current net to build windows, and fits the truths.
/// `rollout(k)` must return the `k`-th training trajectory (truths and
/// measurements); `initial_estimate` seeds the window padding exactly as in
/// deployment.
pub fn slf_train_closed_loop<F>(
    mut rollout: F,
    initial_estimate: &StateVec,
    cfg: &SlfTrainConfig,
) -> Result<(MlpNet, Vec<f64>), FilterError>
where
    F: FnMut(u64) -> Result<Trajectory, FilterError>,
{
    let mut episode: u64 = 0;
    // Scale warm-up: state and measurement magnitudes from net-free rollouts.
    let mut state_rows: Vec<Vec<f64>> = Vec::new();
    let mut meas_rows: Vec<Vec<f64>> = Vec::new();
    for _ in 0..cfg.episodes_per_epoch.max(1) {
        let traj = rollout(episode)?;
        episode += 1;
        for x in &traj.true_states {
            state_rows.push(x.as_slice().to_vec());
        }
        for y in &traj.measurements {
            meas_rows.push(y.as_slice().to_vec());
        }
    }
    let n = state_rows[0].len();
    let m = meas_rows[0].len();
    let state_refs: Vec<&[f64]> = state_rows.iter().map(|v| v.as_slice()).collect();
    let meas_refs: Vec<&[f64]> = meas_rows.iter().map(|v| v.as_slice()).collect();
    let scale = window_input_scale(
        cfg.window_len,
        &rms_columns(&state_refs, n),
        &rms_columns(&meas_refs, m),
    );

    let flat_dim = cfg.window_len * (n + m);
    let mut dims = vec![flat_dim];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(n);
    let mut rng = Rng::new(cfg.seed);
    let mut net = MlpNet::new(&dims, &mut rng);
    let mut adam = AdamState::new(&net, cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut scratch = Scratch::default();
    let mut out = Vec::new();
    let mut flat = vec![0.0; flat_dim];

    for _ in 0..cfg.epochs {
        let mut inputs: Vec<Vec<f64>> = Vec::new();
        let mut targets: Vec<Vec<f64>> = Vec::new();
        for _ in 0..cfg.episodes_per_epoch {
            let traj = rollout(episode)?;
            episode += 1;
            let mut window: Option<HistoryWindow> = None;
            let mut prev = initial_estimate.clone();
            for t in 0..traj.len() {
                let y = &traj.measurements[t];
                let w = match window.take() {
                    None => HistoryWindow::padded(cfg.window_len, prev.clone(), y.clone()),
                    Some(w) => w.update(prev.clone(), y.clone())?,
                };
                w.flatten_into(&mut flat);
                for (f, s) in flat.iter_mut().zip(&scale) {
                    *f /= s;
                }
                inputs.push(flat.clone());
                targets.push(traj.true_states[t].as_slice().to_vec());
                net.forward_into(&flat, &mut scratch, &mut out);
                prev = StateVec::new(out.clone()).map_err(|_| FilterError::Training {
                    reason: "non-finite closed-loop estimate".into(),
                })?;
                window = Some(w);
            }
        }
        let loss = regression_pass(
            &mut net,
            &mut adam,
            &inputs,
            &targets,
            cfg.batch_size,
            &mut rng,
        )?;
        trace.push(loss);
    }
    fold_input_scale(&mut net, &scale);
    Ok((net, trace))
}

/// The trained net deployed as an online filter: maintain the window, feed
/// its flattening through the net, emit the output as the estimate.
pub struct SlfFilter {
    net: MlpNet,
    fast: Option<(F32Net, ScratchF32)>,
    window_len: usize,
    initial_estimate: StateVec,
    window: Option<HistoryWindow>,
    prev_estimate: StateVec,
    flat: Vec<f64>,
    scratch: Scratch,
    out: Vec<f64>,
    t: usize,
}

impl SlfFilter {
    pub fn new(
        net: MlpNet,
        window_len: usize,
        meas_dim: usize,
        initial_estimate: StateVec,
    ) -> Result<Self, FilterError> {
        let flat_dim = window_len * (initial_estimate.dim() + meas_dim);
        if net.input_dim() != flat_dim {
            return Err(FilterError::NotApplicable {
                filter: "slf",
                reason: "network input does not match window dimensions",
            });
        }
        if net.output_dim() != initial_estimate.dim() {
            return Err(FilterError::NotApplicable {
                filter: "slf",
                reason: "network output does not match state dimension",
            });
        }
        Ok(Self {
            net,
            fast: None,
            window_len,
            initial_estimate: initial_estimate.clone(),
            window: None,
            prev_estimate: initial_estimate,
            flat: vec![0.0; flat_dim],
            scratch: Scratch::default(),
            out: Vec::new(),
            t: 0,
        })
    }

    /// Enables the single-precision inference path.
    pub fn with_fast32(mut self) -> Self {
        self.fast = Some((F32Net::from_net(&self.net), ScratchF32::default()));
        self
    }
}

impl OnlineFilter for SlfFilter {
    fn estimate(&mut self, y: &MeasVec) -> Result<StateVec, FilterError> {
        let window = match self.window.take() {
            None => HistoryWindow::padded(
                self.window_len,
                self.initial_estimate.clone(),
                y.clone(),
            ),
            Some(w) => w.update(self.prev_estimate.clone(), y.clone())?,
        };
        window.flatten_into(&mut self.flat);
        match &mut self.fast {
            Some((f32net, scratch)) => f32net.forward_into(&self.flat, scratch, &mut self.out),
            None => self.net.forward_into(&self.flat, &mut self.scratch, &mut self.out),
        }
        let estimate = StateVec::new(self.out.clone())
            .map_err(|_| FilterError::NonFiniteEstimate { step: self.t })?;
        self.prev_estimate = estimate.clone();
        self.window = Some(window);
        self.t += 1;
        Ok(estimate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(v: &[f64]) -> StateVec {
        StateVec::new(v.to_vec()).unwrap()
    }

    fn mv(v: &[f64]) -> MeasVec {
        MeasVec::new(v.to_vec()).unwrap()
    }

    fn random_window(rng: &mut Rng, cap: usize) -> HistoryWindow {
        let mut w = HistoryWindow::padded(cap, StateVec::zeros(2), MeasVec::zeros(1));
        for _ in 0..cap {
            w = w
                .update(sv(&[rng.normal(), rng.normal()]), mv(&[rng.normal()]))
                .unwrap();
        }
        w
    }

    #[test]
    fn linear_target_is_recovered() {
        // Targets are a fixed linear function of the flattened window; the
        // trained net must reproduce them to high accuracy.
        let mut rng = Rng::new(13);
        let cap = 2;
        let coeffs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..cap * 3).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
            .collect();
        let dataset: Vec<(HistoryWindow, StateVec)> = (0..400)
            .map(|_| {
                let w = random_window(&mut rng, cap);
                let flat = w.flatten();
                let target: Vec<f64> = coeffs
                    .iter()
                    .map(|c| c.iter().zip(&flat).map(|(a, b)| a * b).sum())
                    .collect();
                (w, sv(&target))
            })
            .collect();
        let cfg = SlfTrainConfig {
            hidden: vec![64, 64],
            window_len: cap,
            lr: 1e-3,
            batch_size: 100,
            epochs: 800,
            episodes_per_epoch: 1,
            seed: 3,
        };
        let (net, trace) = slf_train(&dataset, &cfg).unwrap();
        // mean squared error over all predicted scalars
        let mse: f64 = dataset
            .iter()
            .map(|(w, x)| {
                let y = net.forward(&w.flatten()).unwrap();
                y.iter()
                    .zip(x.as_slice())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / (2 * dataset.len()) as f64;
        assert!(mse < 1e-4, "mse {mse}, last loss {:?}", trace.last());
    }

    #[test]
    fn constant_target_is_learned_as_bias() {
        let mut rng = Rng::new(14);
        let dataset: Vec<(HistoryWindow, StateVec)> = (0..200)
            .map(|_| (random_window(&mut rng, 1), sv(&[0.7, -0.3])))
            .collect();
        let cfg = SlfTrainConfig {
            hidden: vec![32],
            window_len: 1,
            lr: 3e-3,
            batch_size: 20,
            epochs: 100,
            episodes_per_epoch: 1,
            seed: 4,
        };
        let (net, _) = slf_train(&dataset, &cfg).unwrap();
        for (w, _) in dataset.iter().take(10) {
            let y = net.forward(&w.flatten()).unwrap();
            assert!((y[0] - 0.7).abs() < 0.05, "{}", y[0]);
            assert!((y[1] + 0.3).abs() < 0.05, "{}", y[1]);
        }
    }

    #[test]
    fn single_sample_is_memorized() {
        let mut rng = Rng::new(15);
        let dataset = vec![(random_window(&mut rng, 2), sv(&[1.0, 2.0]))];
        let cfg = SlfTrainConfig {
            hidden: vec![16],
            window_len: 2,
            lr: 1e-2,
            batch_size: 1,
            epochs: 400,
            episodes_per_epoch: 1,
            seed: 5,
        };
        let (net, trace) = slf_train(&dataset, &cfg).unwrap();
        let y = net.forward(&dataset[0].0.flatten()).unwrap();
        let err = (y[0] - 1.0).abs().max((y[1] - 2.0).abs());
        assert!(err < 1e-3, "err {err}, final loss {:?}", trace.last());
    }

    #[test]
    fn trained_net_replays_its_training_outputs() {
        let mut rng = Rng::new(16);
        let dataset: Vec<(HistoryWindow, StateVec)> = (0..50)
            .map(|_| (random_window(&mut rng, 1), sv(&[rng.normal(), rng.normal()])))
            .collect();
        let cfg = SlfTrainConfig {
            hidden: vec![16],
            window_len: 1,
            lr: 1e-3,
            batch_size: 10,
            epochs: 5,
            episodes_per_epoch: 1,
            seed: 6,
        };
        let (net, _) = slf_train(&dataset, &cfg).unwrap();
        let recorded: Vec<Vec<f64>> = dataset
            .iter()
            .map(|(w, _)| net.forward(&w.flatten()).unwrap())
            .collect();
        for ((w, _), r) in dataset.iter().zip(&recorded) {
            assert_eq!(&net.forward(&w.flatten()).unwrap(), r);
        }
    }

    #[test]
    fn zero_net_filter_emits_zero_estimates() {
        let net = MlpNet::zeros(&[1 * (2 + 1), 2]);
        let mut filter = SlfFilter::new(net, 1, 1, StateVec::zeros(2)).unwrap();
        for _ in 0..3 {
            let e = filter.estimate(&mv(&[1.0])).unwrap();
            assert_eq!(e.as_slice(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn identity_pick_of_newest_estimate_freezes_the_estimate() {
        // Weight matrix selecting the newest estimate slots of the window
        // reproduces x_hat_{t-1} forever.
        let n = 2;
        let m = 1;
        let cap = 2;
        let mut net = MlpNet::zeros(&[cap * (n + m), n]);
        {
            let layer = &mut net.layers_mut()[0];
            for i in 0..n {
                layer.w[i * layer.in_dim + i] = 1.0;
            }
        }
        let init = sv(&[0.4, -0.6]);
        let mut filter = SlfFilter::new(net, cap, m, init.clone()).unwrap();
        for k in 0..5 {
            let e = filter.estimate(&mv(&[k as f64])).unwrap();
            assert_eq!(e, init);
        }
    }

    #[test]
    fn mismatched_net_dimensions_are_rejected() {
        let net = MlpNet::zeros(&[10, 2]);
        assert!(SlfFilter::new(net, 2, 1, StateVec::zeros(2)).is_err());
    }
}
