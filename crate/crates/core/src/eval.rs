//! Test-split metrics, naive baselines and attention export.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::{NormState, Task, WindowSet};
use crate::layers::{LayerError, Network};
use crate::scalar::Scalar;
use crate::series::write_atomic;
use crate::train::{Checkpoint, CheckpointError};

/// Width of the centered moving-average baseline.
pub const MOVING_AVERAGE_WIDTH: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: prediction has {pred} values, target has {target}")]
    Length { pred: usize, target: usize },
    #[error("no values to evaluate")]
    Empty,
    #[error("checkpoint expects windows {checkpoint:?} but data gives {windows:?}")]
    Shape {
        checkpoint: Vec<usize>,
        windows: Vec<usize>,
    },
    #[error("attention disabled in checkpoint config")]
    AttentionDisabled,
    #[error("attention row {row}: {reason}")]
    AttentionRow { row: usize, reason: String },
    #[error("non-finite metric {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<(), EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::Length {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64, EvalError> {
    check_pair(pred, target)?;
    let sq: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64, EvalError> {
    check_pair(pred, target)?;
    let abs: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(abs / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub rmse: f64,
    pub mae: f64,
}

impl ErrorPair {
    pub fn of(pred: &[f64], target: &[f64]) -> Result<Self, EvalError> {
        Ok(ErrorPair {
            rmse: rmse(pred, target)?,
            mae: mae(pred, target)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: usize,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoisingGain {
    pub input_rmse_to_clean: f64,
    pub output_rmse_to_clean: f64,
    /// `output / input`, or 1 when the input is already clean.
    pub gain_ratio: f64,
}

impl DenoisingGain {
    pub fn new(input_rmse_to_clean: f64, output_rmse_to_clean: f64) -> Self {
        let gain_ratio = if input_rmse_to_clean == 0.0 {
            1.0
        } else {
            output_rmse_to_clean / input_rmse_to_clean
        };
        DenoisingGain {
            input_rmse_to_clean,
            output_rmse_to_clean,
            gain_ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub persistence: ErrorPair,
    pub moving_average: ErrorPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub rmse: f64,
    pub mae: f64,
    pub per_channel: Vec<ChannelMetrics>,
    pub denoising: Option<DenoisingGain>,
    pub baselines: BaselineMetrics,
    /// Number of evaluated windows.
    pub samples: usize,
}

/// Maps flattened `[N, H, C_t]` values back to physical units.
fn denormalize(windows: &WindowSet, norm: &NormState, normalized: impl Iterator<Item = f64>) -> Vec<f64> {
    let ct = windows.target_channels.len();
    normalized
        .enumerate()
        .map(|(k, v)| norm.denormalize_value(windows.target_channels[k % ct], v))
        .collect()
}

fn targets(windows: &WindowSet) -> impl Iterator<Item = f64> + '_ {
    (0..windows.len()).flat_map(move |i| windows.target(i).iter().copied())
}

/// Input samples at the target positions: the last `H` rows for denoising.
fn persistence(windows: &WindowSet) -> Vec<f64> {
    let (w, c, h) = (windows.window, windows.channels, windows.horizon);
    let mut out = Vec::with_capacity(windows.len() * windows.target_width());
    for i in 0..windows.len() {
        let x = windows.input(i);
        for step in 0..h {
            let t = match windows.task {
                Task::Forecast => w - 1,
                Task::Denoise => w - h + step,
            };
            out.extend(windows.target_channels.iter().map(|&ch| x[t * c + ch]));
        }
    }
    out
}

/// Centered width-5 mean inside each window (denoise) or the trailing
/// width-5 mean repeated over the horizon (forecast), truncated at the window
/// edges.
fn moving_average(windows: &WindowSet) -> Vec<f64> {
    let (w, c, h) = (windows.window, windows.channels, windows.horizon);
    let half = MOVING_AVERAGE_WIDTH / 2;
    let mean =
        |x: &[f64], ch: usize, lo: usize, hi: usize| (lo..hi).map(|t| x[t * c + ch]).sum::<f64>() / (hi - lo) as f64;
    let mut out = Vec::with_capacity(windows.len() * windows.target_width());
    for i in 0..windows.len() {
        let x = windows.input(i);
        for step in 0..h {
            for &ch in &windows.target_channels {
                let v = match windows.task {
                    Task::Forecast => mean(x, ch, w.saturating_sub(MOVING_AVERAGE_WIDTH), w),
                    Task::Denoise => {
                        let t = w - h + step;
                        mean(x, ch, t.saturating_sub(half), (t + half + 1).min(w))
                    }
                };
                out.push(v);
            }
        }
    }
    out
}

/// Persistence and moving-average metrics in denormalized units. Without a
/// normalizer the window values are taken as physical.
pub fn baselines(windows: &WindowSet, norm: Option<&NormState>) -> Result<BaselineMetrics, EvalError> {
    if windows.is_empty() {
        return Err(EvalError::Empty);
    }
    let identity;
    let norm = match norm.or(windows.norm.as_ref()) {
        Some(n) => n,
        None => {
            identity = NormState::identity(windows.channels);
            &identity
        }
    };
    let truth = denormalize(windows, norm, targets(windows));
    let pers = denormalize(windows, norm, persistence(windows).into_iter());
    let ma = denormalize(windows, norm, moving_average(windows).into_iter());
    Ok(BaselineMetrics {
        persistence: ErrorPair::of(&pers, &truth)?,
        moving_average: ErrorPair::of(&ma, &truth)?,
    })
}

fn check_compat<T: Scalar>(net: &Network<T>, windows: &WindowSet) -> Result<(), EvalError> {
    let cfg = net.config();
    let checkpoint = vec![cfg.window, cfg.input_channels, cfg.horizon, cfg.target_channels];
    let got = vec![
        windows.window,
        windows.channels,
        windows.horizon,
        windows.target_channels.len(),
    ];
    if checkpoint != got {
        return Err(EvalError::Shape {
            checkpoint,
            windows: got,
        });
    }
    Ok(())
}

/// Metrics of `net` on `windows`, denormalized with `norm`.
///
/// For the denoising task the window targets are the clean reference, so the
/// gain compares the noisy input and the network output against them.
pub fn evaluate_network<T: Scalar>(
    net: &Network<T>,
    norm: &NormState,
    windows: &WindowSet,
) -> Result<MetricsReport, EvalError> {
    check_compat(net, windows)?;
    if windows.is_empty() {
        return Err(EvalError::Empty);
    }
    let raw = crate::train::predict_windows(net, windows)?;
    let pred = denormalize(windows, norm, raw.iter().map(|v| v.to_f64_lossless()));
    let truth = denormalize(windows, norm, targets(windows));
    let overall = ErrorPair::of(&pred, &truth)?;

    let ct = windows.target_channels.len();
    let mut per_channel = Vec::with_capacity(ct);
    for (k, &channel) in windows.target_channels.iter().enumerate() {
        let p: Vec<f64> = pred.iter().skip(k).step_by(ct).copied().collect();
        let t: Vec<f64> = truth.iter().skip(k).step_by(ct).copied().collect();
        let pair = ErrorPair::of(&p, &t)?;
        per_channel.push(ChannelMetrics {
            channel,
            rmse: pair.rmse,
            mae: pair.mae,
        });
    }
    let baselines = baselines(windows, Some(norm))?;
    let denoising =
        (windows.task == Task::Denoise).then(|| DenoisingGain::new(baselines.persistence.rmse, overall.rmse));
    let report = MetricsReport {
        task: windows.task,
        rmse: overall.rmse,
        mae: overall.mae,
        per_channel,
        denoising,
        baselines,
        samples: windows.len(),
    };
    if !(report.rmse.is_finite() && report.mae.is_finite()) {
        return Err(EvalError::NonFinite("rmse"));
    }
    Ok(report)
}

/// Evaluates a checkpoint in double precision using its stored normalizer.
pub fn evaluate(ckpt: &Checkpoint, windows: &WindowSet) -> Result<MetricsReport, EvalError> {
    let net = ckpt.network::<f64>()?;
    evaluate_network(&net, &ckpt.norm_state, windows)
}

/// Attention weights per window, one row of length `L` each.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    /// Absolute start index of each window in the full record.
    pub window_starts: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

impl AttentionDump {
    pub fn sequence_len(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Rows sum to 1 within 1e-6 and every weight lies in `[0, 1]`.
    pub fn validate(&self) -> Result<(), EvalError> {
        let l = self.sequence_len();
        for (row, w) in self.weights.iter().enumerate() {
            let bad = |reason: String| Err(EvalError::AttentionRow { row, reason });
            if w.len() != l {
                return bad(format!("has {} weights, expected {l}", w.len()));
            }
            if let Some(v) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return bad(format!("weight {v} outside [0, 1]"));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return bad(format!("weights sum to {sum}"));
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("window_start");
        for j in 0..self.sequence_len() {
            out.push_str(&format!(",w_{j}"));
        }
        out.push('\n');
        for (start, w) in self.window_starts.iter().zip(&self.weights) {
            out.push_str(&start.to_string());
            for v in w {
                out.push_str(&format!(",{v:.17e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Attention weights of `net` for every window.
pub fn attention_weights<T: Scalar>(net: &Network<T>, windows: &WindowSet) -> Result<AttentionDump, EvalError> {
    if !net.config().attention {
        return Err(EvalError::AttentionDisabled);
    }
    check_compat(net, windows)?;
    const CHUNK: usize = 256;
    let indices: Vec<usize> = (0..windows.len()).collect();
    let mut weights = Vec::with_capacity(windows.len());
    for chunk in indices.chunks(CHUNK) {
        let (x, _) = windows.batch::<T>(chunk);
        let (_, alpha) = net.predict(&x)?;
        let alpha = alpha.ok_or(EvalError::AttentionDisabled)?;
        let l = alpha.shape()[1];
        weights.extend(
            alpha
                .data()
                .chunks(l)
                .map(|r| r.iter().map(|v| v.to_f64_lossless()).collect()),
        );
    }
    let window_starts = windows.starts().iter().map(|s| s + windows.origin).collect();
    let dump = AttentionDump { window_starts, weights };
    dump.validate()?;
    Ok(dump)
}

/// Writes the attention CSV for a checkpoint and returns what was written.
pub fn export_attention(
    ckpt: &Checkpoint,
    windows: &WindowSet,
    path: impl AsRef<Path>,
) -> Result<AttentionDump, EvalError> {
    if !ckpt.net_config.attention {
        return Err(EvalError::AttentionDisabled);
    }
    let net = ckpt.network::<f64>()?;
    let dump = attention_weights(&net, windows)?;
    write_atomic(path.as_ref(), dump.to_csv_string().as_bytes())?;
    Ok(dump)
}
