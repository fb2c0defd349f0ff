//! Min-max scaling, chronological splits and sliding-window supervision.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::series::{SeriesError, TimeSeries};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("fit interval {start}..{end} is empty or exceeds series length {len}")]
    FitRange { start: usize, end: usize, len: usize },
    #[error("series has {got} channels, normalizer expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("window length and horizon must be positive (window {window}, horizon {horizon}, stride {stride})")]
    NonPositive {
        window: usize,
        horizon: usize,
        stride: usize,
    },
    #[error("{task:?} windows of length {window} with horizon {horizon} do not fit a series of {len} samples")]
    TooLong {
        task: Task,
        window: usize,
        horizon: usize,
        len: usize,
    },
    #[error("denoise windows need a clean reference with the same shape as the noisy series")]
    MissingClean,
    #[error("target channel {channel} out of range for {channels} channels")]
    TargetChannel { channel: usize, channels: usize },
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    Fractions([f64; 3]),
    #[error("{name} split has {len} samples, shorter than window + horizon = {needed}")]
    SplitTooShort {
        name: &'static str,
        len: usize,
        needed: usize,
    },
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Per-channel extrema fitted on the training interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Channels with `max == min`; they normalize to a constant 0.
    pub degenerate: Vec<bool>,
    pub fitted_on: Range<usize>,
}

impl NormState {
    /// Maps every channel onto itself (`min = 0`, `max = 1`).
    pub fn identity(channels: usize) -> Self {
        NormState {
            min: vec![0.0; channels],
            max: vec![1.0; channels],
            degenerate: vec![false; channels],
            fitted_on: 0..0,
        }
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    #[inline]
    pub fn normalize_value(&self, channel: usize, x: f64) -> f64 {
        if self.degenerate[channel] {
            0.0
        } else {
            (x - self.min[channel]) / (self.max[channel] - self.min[channel])
        }
    }

    #[inline]
    pub fn denormalize_value(&self, channel: usize, y: f64) -> f64 {
        if self.degenerate[channel] {
            self.min[channel]
        } else {
            self.min[channel] + y * (self.max[channel] - self.min[channel])
        }
    }

    pub fn normalize(&self, series: &TimeSeries) -> Result<TimeSeries, DataError> {
        self.check(series)?;
        Ok(series.map(|c, x| self.normalize_value(c, x))?)
    }

    pub fn denormalize(&self, series: &TimeSeries) -> Result<TimeSeries, DataError> {
        self.check(series)?;
        Ok(series.map(|c, y| self.denormalize_value(c, y))?)
    }

    fn check(&self, series: &TimeSeries) -> Result<(), DataError> {
        if series.channels() != self.channels() {
            return Err(DataError::ChannelMismatch {
                expected: self.channels(),
                got: series.channels(),
            });
        }
        Ok(())
    }
}

/// Records per-channel min/max over `range` only.
pub fn fit_normalizer(series: &TimeSeries, range: Range<usize>) -> Result<NormState, DataError> {
    if range.start >= range.end || range.end > series.len() {
        return Err(DataError::FitRange {
            start: range.start,
            end: range.end,
            len: series.len(),
        });
    }
    let mut min = Vec::with_capacity(series.channels());
    let mut max = Vec::with_capacity(series.channels());
    for c in 0..series.channels() {
        let slice = &series.channel(c)[range.clone()];
        min.push(slice.iter().copied().fold(f64::INFINITY, f64::min));
        max.push(slice.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let degenerate = min.iter().zip(&max).map(|(a, b)| a == b).collect();
    Ok(NormState {
        min,
        max,
        degenerate,
        fitted_on: range,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Predict the `H` noisy samples following the window.
    #[default]
    Forecast,
    /// Recover the clean values at the last `H` positions of the window.
    Denoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window: usize,
    pub horizon: usize,
    pub stride: usize,
    pub task: Task,
    /// Channels predicted by the network; empty means all channels.
    pub target_channels: Vec<usize>,
}

/// Number of windows a series of `len` samples yields, or `None` if none fit.
pub fn window_count(len: usize, window: usize, horizon: usize, stride: usize, task: Task) -> Option<usize> {
    if window == 0 || horizon == 0 || stride == 0 {
        return None;
    }
    let span = match task {
        Task::Forecast => window + horizon,
        Task::Denoise => {
            if horizon > window {
                return None;
            }
            window
        }
    };
    (len >= span).then(|| (len - span) / stride + 1)
}

/// Supervised pairs cut from one contiguous interval of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    starts: Vec<usize>,
    pub window: usize,
    pub horizon: usize,
    pub channels: usize,
    pub target_channels: Vec<usize>,
    pub stride: usize,
    pub task: Task,
    /// Absolute index of sample 0 of the sliced series in the full record.
    pub origin: usize,
    pub norm: Option<NormState>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Window start offsets relative to the windowed series.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// `W x C` input of window `i`, row-major over time.
    pub fn input(&self, i: usize) -> &[f64] {
        let n = self.window * self.channels;
        &self.inputs[i * n..(i + 1) * n]
    }

    /// `H x C_t` target of window `i`.
    pub fn target(&self, i: usize) -> &[f64] {
        let n = self.target_width();
        &self.targets[i * n..(i + 1) * n]
    }

    pub fn target_width(&self) -> usize {
        self.horizon * self.target_channels.len()
    }

    pub fn with_origin(mut self, origin: usize) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_norm(mut self, norm: NormState) -> Self {
        self.norm = Some(norm);
        self
    }

    /// Stacks the selected windows into `[B, W, C]` inputs and `[B, H, C_t]`
    /// targets.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let mut x = Vec::with_capacity(indices.len() * self.window * self.channels);
        let mut y = Vec::with_capacity(indices.len() * self.target_width());
        for &i in indices {
            x.extend(self.input(i).iter().map(|&v| T::of(v)));
            y.extend(self.target(i).iter().map(|&v| T::of(v)));
        }
        let b = indices.len();
        (
            Tensor::new(vec![b, self.window, self.channels], x).expect("window layout"),
            Tensor::new(vec![b, self.horizon, self.target_channels.len()], y).expect("target layout"),
        )
    }
}

/// Cuts overlapping windows starting at `i * stride`.
pub fn make_windows(
    series: &TimeSeries,
    clean: Option<&TimeSeries>,
    spec: &WindowSpec,
) -> Result<WindowSet, DataError> {
    let (w, h, stride) = (spec.window, spec.horizon, spec.stride);
    if w == 0 || h == 0 || stride == 0 {
        return Err(DataError::NonPositive {
            window: w,
            horizon: h,
            stride,
        });
    }
    let channels = series.channels();
    let target_channels: Vec<usize> = if spec.target_channels.is_empty() {
        (0..channels).collect()
    } else {
        spec.target_channels.clone()
    };
    if let Some(&bad) = target_channels.iter().find(|&&c| c >= channels) {
        return Err(DataError::TargetChannel { channel: bad, channels });
    }
    let len = series.len();
    let n = window_count(len, w, h, stride, spec.task).ok_or(DataError::TooLong {
        task: spec.task,
        window: w,
        horizon: h,
        len,
    })?;
    let target_source = match spec.task {
        Task::Forecast => series,
        Task::Denoise => match clean {
            Some(c) if c.channels() == channels && c.len() == len => c,
            _ => return Err(DataError::MissingClean),
        },
    };

    let mut inputs = Vec::with_capacity(n * w * channels);
    let mut targets = Vec::with_capacity(n * h * target_channels.len());
    let mut starts = Vec::with_capacity(n);
    for i in 0..n {
        let s = i * stride;
        starts.push(s);
        for t in s..s + w {
            for c in 0..channels {
                inputs.push(series.get(c, t));
            }
        }
        let first = match spec.task {
            Task::Forecast => s + w,
            Task::Denoise => s + w - h,
        };
        for t in first..first + h {
            for &c in &target_channels {
                targets.push(target_source.get(c, t));
            }
        }
    }
    Ok(WindowSet {
        inputs,
        targets,
        starts,
        window: w,
        horizon: h,
        channels,
        target_channels,
        stride,
        task: spec.task,
        origin: 0,
        norm: None,
    })
}

/// Contiguous, ordered train/validation/test intervals covering `0..len`.
///
/// Each split must hold at least `min_len` samples (normally `W + H`).
pub fn split_chronological(len: usize, fractions: [f64; 3], min_len: usize) -> Result<[Range<usize>; 3], DataError> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(DataError::Fractions(fractions));
    }
    let b1 = ((fractions[0] * len as f64).round() as usize).min(len);
    let b2 = (((fractions[0] + fractions[1]) * len as f64).round() as usize).clamp(b1, len);
    let splits = [0..b1, b1..b2, b2..len];
    for (name, r) in ["train", "validation", "test"].into_iter().zip(&splits) {
        if r.len() < min_len || r.is_empty() {
            return Err(DataError::SplitTooShort {
                name,
                len: r.len(),
                needed: min_len,
            });
        }
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: usize) -> TimeSeries {
        TimeSeries::with_default_names(vec![(0..len).map(|v| v as f64).collect()], 1.0).unwrap()
    }

    fn spec(w: usize, h: usize, stride: usize, task: Task) -> WindowSpec {
        WindowSpec {
            window: w,
            horizon: h,
            stride,
            task,
            target_channels: Vec::new(),
        }
    }

    #[test]
    fn fits_min_and_max() {
        let s = TimeSeries::with_default_names(vec![vec![2.0, 4.0, 6.0]], 1.0).unwrap();
        let n = fit_normalizer(&s, 0..3).unwrap();
        assert_eq!((n.min[0], n.max[0]), (2.0, 6.0));
        assert!(!n.degenerate[0]);
        let y = n.normalize(&s).unwrap();
        assert_eq!(y.channel(0), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_channel_is_degenerate_and_maps_to_zero() {
        let s = TimeSeries::with_default_names(vec![vec![5.0; 3], vec![1.0, 2.0, 3.0]], 1.0).unwrap();
        let n = fit_normalizer(&s, 0..3).unwrap();
        assert_eq!(n.degenerate, vec![true, false]);
        assert_ne!((n.min[0], n.max[0]), (n.min[1], n.max[1]));
        let y = n.normalize(&s).unwrap();
        assert_eq!(y.channel(0), &[0.0; 3]);
        assert_eq!(n.denormalize(&y).unwrap().channel(0), &[5.0; 3]);
    }

    #[test]
    fn fit_reads_only_the_interval() {
        let s = ramp(10);
        let n = fit_normalizer(&s, 2..5).unwrap();
        assert_eq!((n.min[0], n.max[0]), (2.0, 4.0));
        assert_eq!(n.fitted_on, 2..5);
        // out-of-range values are not clipped
        let y = n.normalize(&s).unwrap();
        assert_eq!(y.get(0, 9), 3.5);
        assert!(fit_normalizer(&s, 4..4).is_err());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let n = fit_normalizer(&ramp(4), 0..4).unwrap();
        let two = TimeSeries::with_default_names(vec![vec![0.0; 4]; 2], 1.0).unwrap();
        assert!(matches!(n.normalize(&two), Err(DataError::ChannelMismatch { .. })));
    }

    #[test]
    fn forecast_window_count_and_targets() {
        let ws = make_windows(&ramp(10), None, &spec(3, 1, 1, Task::Forecast)).unwrap();
        assert_eq!(ws.len(), 7);
        assert_eq!(ws.input(2), &[2.0, 3.0, 4.0]);
        assert_eq!(ws.target(2), &[5.0]);
    }

    #[test]
    fn window_filling_series_leaves_no_forecast() {
        let err = make_windows(&ramp(10), None, &spec(10, 1, 1, Task::Forecast)).unwrap_err();
        assert!(matches!(err, DataError::TooLong { .. }));
    }

    #[test]
    fn denoise_windows_with_stride() {
        let noisy = ramp(6);
        let clean = noisy.map(|_, v| -v).unwrap();
        let ws = make_windows(&noisy, Some(&clean), &spec(4, 1, 2, Task::Denoise)).unwrap();
        assert_eq!(ws.len(), 2);
        assert_eq!(ws.starts(), &[0, 2]);
        assert_eq!(ws.target(0), &[-3.0]);
        assert_eq!(ws.target(1), &[-5.0]);
    }

    #[test]
    fn denoise_requires_clean() {
        let err = make_windows(&ramp(6), None, &spec(4, 1, 1, Task::Denoise)).unwrap_err();
        assert!(matches!(err, DataError::MissingClean));
    }

    #[test]
    fn zero_window_is_rejected() {
        assert!(matches!(
            make_windows(&ramp(6), None, &spec(0, 1, 1, Task::Forecast)),
            Err(DataError::NonPositive { .. })
        ));
    }

    #[test]
    fn chronological_split_arithmetic() {
        let s = split_chronological(100, [0.7, 0.15, 0.15], 2).unwrap();
        assert_eq!(s, [0..70, 70..85, 85..100]);
        assert!(matches!(
            split_chronological(100, [0.5, 0.5, 0.5], 2),
            Err(DataError::Fractions(_))
        ));
    }

    #[test]
    fn split_shorter_than_window_is_rejected() {
        let err = split_chronological(10, [0.7, 0.15, 0.15], 9).unwrap_err();
        assert!(matches!(err, DataError::SplitTooShort { .. }));
    }

    #[test]
    fn batch_layout() {
        let two = TimeSeries::with_default_names(
            vec![(0..6).map(f64::from).collect(), (10..16).map(f64::from).collect()],
            1.0,
        )
        .unwrap();
        let mut sp = spec(2, 1, 1, Task::Forecast);
        sp.target_channels = vec![1];
        let ws = make_windows(&two, None, &sp).unwrap();
        let (x, y) = ws.batch::<f64>(&[1, 3]);
        assert_eq!(x.shape(), &[2, 2, 2]);
        assert_eq!(x.data(), &[1.0, 11.0, 2.0, 12.0, 3.0, 13.0, 4.0, 14.0]);
        assert_eq!(y.shape(), &[2, 1, 1]);
        assert_eq!(y.data(), &[13.0, 15.0]);
    }
}
