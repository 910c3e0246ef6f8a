//! End-to-end training: window-level MSE, Adam with exponential learning-rate
//! decay, seeded shuffling, and per-epoch history.
//!
//! One optimizer step is taken per window. Hidden states reset to zero at
//! every window start, and the loss is the mean squared error over all
//! N * len predictions of the window, in scaled units.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{Matrix, Mode, NodeId, Tape};
use crate::dataset::{make_windows, PreparedDataset};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_params;
use crate::graph::RoadGraph;
use crate::model::{
    forward_window, init_params, Checkpoint, Hyperparams, SrnnParams, PARAM_NAMES,
};

/// Training-loop settings. Defaults mirror the reference configuration:
/// lr 0.0005 decaying by 0.99 per epoch, 10 epochs, sequence length 10,
/// gradient-norm clipping at 5, shuffled windows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub shuffle: bool,
    pub window_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr0: 0.0005,
            decay: 0.99,
            grad_clip: Some(5.0),
            seed: 0,
            shuffle: true,
            window_len: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr0)));
        }
        if !(0.0 < self.decay && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay {} outside (0, 1]", self.decay)));
        }
        if self.window_len == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi(epoch as i32)
    }
}

/// Adam moment buffers, one pair per weight matrix in canonical order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &SrnnParams) -> AdamState {
        let zeros: Vec<Matrix> = params
            .matrices()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> (&Matrix, &Matrix) {
        (&self.m[index], &self.v[index])
    }
}

/// One Adam update over all sixteen weight matrices.
pub fn adam_step(
    params: &mut SrnnParams,
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "{} gradients for {} parameter matrices",
            grads.len(),
            state.m.len()
        )));
    }
    for (g, name) in grads.iter().zip(PARAM_NAMES) {
        if !g.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient in weight group {}",
                name
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (((theta, g), m), v) in params
        .matrices_mut()
        .into_iter()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        debug_assert_eq!(theta.shape(), g.shape());
        let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
        for (((t, &grad), mk), vk) in theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mk = b1 * *mk + (1.0 - b1) * grad;
            *vk = b2 * *vk + (1.0 - b2) * grad * grad;
            let m_hat = *mk / bc1;
            let v_hat = *vk / bc2;
            *t -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Mean squared error over all N * len entries of a window, on the tape.
/// `predictions` holds one N x 1 node per step; `targets` is N x len.
pub fn window_loss(tape: &mut Tape, predictions: &[NodeId], targets: &Matrix) -> Result<NodeId> {
    if predictions.is_empty() {
        return Err(Error::Dimension("window has no predictions".into()));
    }
    let mut stacked = predictions[0];
    for &p in &predictions[1..] {
        stacked = tape.concat_cols(stacked, p)?;
    }
    if tape.value(stacked).shape() != targets.shape() {
        let (pr, pc) = tape.value(stacked).shape();
        return Err(Error::Dimension(format!(
            "predictions {}x{} vs targets {}x{}",
            pr,
            pc,
            targets.rows(),
            targets.cols()
        )));
    }
    let count = targets.len() as f64;
    let target_node = tape.input(targets.clone());
    let diff = tape.sub(stacked, target_node)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum_all(sq);
    Ok(tape.scale(total, 1.0 / count))
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm_sq: f64 = grads.iter().map(|g| g.norm_sq()).sum();
    let norm = norm_sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }
    norm
}

/// Targets for the window starting at t0: entry (u, k) is the scaled value
/// at row t0 + 1 + k for segment u.
pub fn window_targets(scaled: &Matrix, t0: usize, len: usize) -> Matrix {
    let n = scaled.cols();
    let mut targets = Matrix::zeros(n, len);
    for k in 0..len {
        for u in 0..n {
            targets.set(u, k, scaled.get(t0 + 1 + k, u));
        }
    }
    targets
}

/// One line of training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_rmse: f64,
}

/// Run the full training loop and return the final checkpoint plus one
/// history record per epoch.
pub fn train(
    g: &RoadGraph,
    prepared: &PreparedDataset,
    hp: &Hyperparams,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    hp.validate()?;
    cfg.validate()?;
    if prepared.dataset.segment_count() != g.node_count() {
        return Err(Error::Dimension(format!(
            "dataset has {} segments but the graph has {} nodes",
            prepared.dataset.segment_count(),
            g.node_count()
        )));
    }

    let mut params = init_params(hp, cfg.seed)?;
    let mut adam = AdamState::new(&params);
    let scaled = prepared.scaled_values();
    let windows = make_windows(prepared.train_rows(), cfg.window_len)?;

    // distinct streams for dropout masks and window shuffling
    let mut dropout_rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(0xd209));
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(0x05d8));
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order = windows.starts.clone();
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }

        let mut loss_sum = 0.0;
        for &t0 in &order {
            let mut tape = Tape::new();
            let tp = params.register(&mut tape);
            let win = forward_window(
                &mut tape,
                g,
                &tp,
                hp,
                &scaled,
                t0,
                cfg.window_len,
                Mode::Train,
                &mut dropout_rng,
            )?;
            let targets = window_targets(&scaled, t0, cfg.window_len);
            let loss = window_loss(&mut tape, &win.predictions(), &targets)?;
            let loss_value = tape.value(loss).get(0, 0);
            if !loss_value.is_finite() {
                return Err(Error::Training(format!(
                    "loss diverged at epoch {}, window start {}",
                    epoch, t0
                )));
            }
            loss_sum += loss_value;

            tape.backward(loss)?;
            let mut grads: Vec<Matrix> = tp
                .ids()
                .iter()
                .map(|&id| tape.adjoint(id).clone())
                .collect();
            if let Some(max_norm) = cfg.grad_clip {
                clip_gradients(&mut grads, max_norm);
            }
            adam_step(&mut params, &grads, &mut adam, lr)?;
        }

        let eval = evaluate_params(
            &params,
            hp,
            &prepared.scaler,
            g,
            &prepared.dataset,
            prepared.eval_rows(),
            cfg.window_len,
        )?;
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / order.len() as f64,
            eval_rmse: eval.rmse,
        });
    }

    Ok((Checkpoint::new(*hp, prepared.scaler, params), history))
}

/// Write history as `epoch,lr,train_loss,eval_rmse_kmh` CSV.
pub fn save_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,lr,train_loss,eval_rmse_kmh\n");
    for rec in history {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            rec.epoch, rec.lr, rec.train_loss, rec.eval_rmse
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
