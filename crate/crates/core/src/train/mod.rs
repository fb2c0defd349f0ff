//! MSE regression training with Adam, mini-batches and early stopping.

mod adam;
mod checkpoint;
mod early_stop;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, ManifestEntry, FORMAT_VERSION, MAGIC,
};
pub use early_stop::{replay, EarlyStopping, StopOutcome, StopReason};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::WindowSet;
use crate::layers::{LayerError, Network, NetworkConfig};
use crate::scalar::Scalar;
use crate::tensor::{Graph, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train.{field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("{0} split has no windows")]
    EmptySplit(&'static str),
    #[error("windows {windows:?} do not match the network {network:?}")]
    ShapeMismatch { windows: Vec<usize>, network: Vec<usize> },
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        report: Box<TrainReport>,
    },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            min_delta: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field, reason: &str| {
            Err(TrainError::Config {
                field,
                reason: reason.into(),
            })
        };
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1");
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return bad("min_delta", "must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    pub stop_reason: StopReason,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.val_loss.len()
    }
}

/// Mean over every element of `(pred - target)^2`, recorded on `g`.
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var, TensorError> {
    if g.shape(pred) != g.shape(target) {
        return Err(TensorError::ShapeMismatch {
            op: "mse_loss",
            left: g.shape(pred).to_vec(),
            right: g.shape(target).to_vec(),
        });
    }
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    g.mean(sq)
}

/// Plain-slice mean squared error.
pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> Result<T, TensorError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "mse",
            left: vec![pred.len()],
            right: vec![target.len()],
        });
    }
    let total: T = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(total / T::of(pred.len() as f64))
}

/// Network predictions for every window, `[N, H * C_t]` flattened row-major.
pub fn predict_windows<T: Scalar>(net: &Network<T>, windows: &WindowSet) -> Result<Vec<T>, LayerError> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(windows.len() * windows.target_width());
    let indices: Vec<usize> = (0..windows.len()).collect();
    for chunk in indices.chunks(CHUNK) {
        let (x, _) = windows.batch::<T>(chunk);
        let (pred, _) = net.predict(&x)?;
        out.extend_from_slice(pred.data());
    }
    Ok(out)
}

/// Mean squared error of `net` over a window set, in normalized units.
pub fn evaluate_mse<T: Scalar>(net: &Network<T>, windows: &WindowSet) -> Result<f64, LayerError> {
    let pred = predict_windows(net, windows)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..windows.len() {
        let row = &pred[i * windows.target_width()..(i + 1) * windows.target_width()];
        for (&p, &t) in row.iter().zip(windows.target(i)) {
            let e = p.to_f64_lossless() - t;
            total += e * e;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn check_shapes(net_config: &NetworkConfig, ws: &WindowSet) -> Result<(), TrainError> {
    let windows = vec![ws.window, ws.channels, ws.horizon, ws.target_channels.len()];
    let network = vec![
        net_config.window,
        net_config.input_channels,
        net_config.horizon,
        net_config.target_channels,
    ];
    if windows != network {
        return Err(TrainError::ShapeMismatch { windows, network });
    }
    Ok(())
}

/// Parameters and gradients from one optimisation step on a batch.
pub fn batch_gradients<T: Scalar>(
    net: &Network<T>,
    windows: &WindowSet,
    indices: &[usize],
) -> Result<(T, Vec<Vec<T>>), TrainError> {
    let (x, y) = windows.batch::<T>(indices);
    let mut g = Graph::new();
    let xv = g.input(x);
    let yv = g.input(y);
    let (out, params) = net.forward(&mut g, xv, true)?;
    let loss = mse_loss(&mut g, out.prediction, yv)?;
    let loss_value = g.value(loss).item().expect("scalar loss");
    g.backward(loss)?;
    let grads = params
        .iter()
        .map(|&p| {
            g.grad(p)
                .map_or_else(|| vec![T::zero(); g.value(p).len()], <[T]>::to_vec)
        })
        .collect();
    Ok((loss_value, grads))
}

/// Trains a freshly initialised network and returns the best-validation
/// parameters together with the per-epoch record.
pub fn fit<T: Scalar>(
    train: &WindowSet,
    val: &WindowSet,
    net_config: &NetworkConfig,
    config: &TrainConfig,
) -> Result<(Network<T>, TrainReport), TrainError> {
    config.validate()?;
    let net = Network::<T>::init(net_config, config.seed)?;
    fit_from(net, train, val, config)
}

/// Like [`fit`] but starting from given parameters.
pub fn fit_from<T: Scalar>(
    mut net: Network<T>,
    train: &WindowSet,
    val: &WindowSet,
    config: &TrainConfig,
) -> Result<(Network<T>, TrainReport), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    check_shapes(net.config(), train)?;
    check_shapes(net.config(), val)?;

    let started = Instant::now();
    let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
    let mut adam = AdamState::new(net.named_params().into_iter().map(|(_, t)| t));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut best = net.clone();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
        wall_time_s: 0.0,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let step = batch_gradients(&net, train, batch).and_then(|(loss, grads)| {
                let loss = loss.to_f64_lossless();
                let mut params = net.params_mut();
                adam_step(&mut params, &grads, &names, &mut adam, config)?;
                Ok(loss)
            });
            match step {
                Ok(loss) => epoch_loss += loss * batch.len() as f64,
                Err(e) => {
                    report.stopped_epoch = epoch;
                    report.wall_time_s = started.elapsed().as_secs_f64();
                    return Err(TrainError::Diverged {
                        epoch,
                        reason: e.to_string(),
                        report: Box::new(report),
                    });
                }
            }
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = match evaluate_mse(&net, val) {
            Ok(v) if v.is_finite() => v,
            other => {
                report.stopped_epoch = epoch;
                report.wall_time_s = started.elapsed().as_secs_f64();
                let reason = other
                    .err()
                    .map_or_else(|| "non-finite validation loss".into(), |e| e.to_string());
                return Err(TrainError::Diverged {
                    epoch,
                    reason,
                    report: Box::new(report),
                });
            }
        };
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report.stopped_epoch = epoch;

        let stop = stopper.observe(epoch, val_loss);
        if stopper.improved() {
            best = net.clone();
            report.best_epoch = epoch;
            report.best_val_loss = val_loss;
        }
        if stop {
            report.stop_reason = StopReason::Early;
            break;
        }
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    debug_assert!(
        report.stop_reason != StopReason::Early || report.stopped_epoch - report.best_epoch <= config.patience
    );
    Ok((best, report))
}
