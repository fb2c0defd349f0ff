//! Multi-channel sampled records and their CSV representation.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("series needs at least 2 samples and 1 channel, got {channels} x {samples}")]
    TooShort { channels: usize, samples: usize },
    #[error("channel {channel} has {got} samples, expected {expected}")]
    Ragged {
        channel: usize,
        expected: usize,
        got: usize,
    },
    #[error("expected {expected} channel names, got {got}")]
    NameCount { expected: usize, got: usize },
    #[error("duplicate channel name {0:?}")]
    DuplicateName(String),
    #[error("non-finite value at channel {channel}, sample {sample}")]
    NonFinite { channel: usize, sample: usize },
    #[error("sample rate must be positive and finite, got {0}")]
    SampleRate(f64),
    #[error("sample range {start}..{end} is empty or exceeds length {len}")]
    Range { start: usize, end: usize, len: usize },
    #[error("csv: {0}")]
    Csv(String),
    #[error("csv row {row}, column {column}: cannot parse {text:?} as a number")]
    CsvNumber { row: usize, column: usize, text: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `C x T` record sampled at a uniform rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<Vec<f64>>,
    sample_rate_hz: f64,
    channel_names: Vec<String>,
}

impl TimeSeries {
    pub fn new(values: Vec<Vec<f64>>, sample_rate_hz: f64, channel_names: Vec<String>) -> Result<Self, SeriesError> {
        let channels = values.len();
        let samples = values.first().map_or(0, Vec::len);
        if channels == 0 || samples < 2 {
            return Err(SeriesError::TooShort { channels, samples });
        }
        for (c, row) in values.iter().enumerate() {
            if row.len() != samples {
                return Err(SeriesError::Ragged {
                    channel: c,
                    expected: samples,
                    got: row.len(),
                });
            }
            if let Some(n) = row.iter().position(|v| !v.is_finite()) {
                return Err(SeriesError::NonFinite { channel: c, sample: n });
            }
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SeriesError::SampleRate(sample_rate_hz));
        }
        if channel_names.len() != channels {
            return Err(SeriesError::NameCount {
                expected: channels,
                got: channel_names.len(),
            });
        }
        for (i, name) in channel_names.iter().enumerate() {
            if channel_names[..i].contains(name) {
                return Err(SeriesError::DuplicateName(name.clone()));
            }
        }
        Ok(TimeSeries {
            values,
            sample_rate_hz,
            channel_names,
        })
    }

    /// Builds a series with channel names `s1..sC`.
    pub fn with_default_names(values: Vec<Vec<f64>>, sample_rate_hz: f64) -> Result<Self, SeriesError> {
        let names = default_names(values.len());
        Self::new(values, sample_rate_hz, names)
    }

    pub fn channels(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn get(&self, channel: usize, sample: usize) -> f64 {
        self.values[channel][sample]
    }

    /// Same channels and rate, restricted to `range` of samples.
    pub fn slice(&self, range: Range<usize>) -> Result<TimeSeries, SeriesError> {
        if range.start >= range.end || range.end > self.len() {
            return Err(SeriesError::Range {
                start: range.start,
                end: range.end,
                len: self.len(),
            });
        }
        let values = self.values.iter().map(|row| row[range.clone()].to_vec()).collect();
        TimeSeries::new(values, self.sample_rate_hz, self.channel_names.clone())
    }

    /// Applies `f(channel, value)` to every sample.
    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Result<TimeSeries, SeriesError> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(c, row)| row.iter().map(|&v| f(c, v)).collect())
            .collect();
        TimeSeries::new(values, self.sample_rate_hz, self.channel_names.clone())
    }

    /// Mean of squared samples over every channel.
    pub fn power(&self) -> f64 {
        let n = (self.channels() * self.len()) as f64;
        self.values.iter().flatten().map(|v| v * v).sum::<f64>() / n
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t");
        for name in &self.channel_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for n in 0..self.len() {
            let t = n as f64 / self.sample_rate_hz;
            let _ = write!(out, "{t:.16e}");
            for row in &self.values {
                let _ = write!(out, ",{:.16e}", row[n]);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<TimeSeries, SeriesError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| SeriesError::Csv("empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(SeriesError::Csv(format!(
                "header must start with column `t`, got {:?}",
                cols.first().copied().unwrap_or("")
            )));
        }
        if cols.len() < 2 {
            return Err(SeriesError::Csv("header names no signal columns".into()));
        }
        let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut times = Vec::new();
        let mut values = vec![Vec::new(); names.len()];
        for (i, line) in lines {
            let row = i + 1;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != cols.len() {
                return Err(SeriesError::Csv(format!(
                    "row {row} has {} cells, header has {}",
                    cells.len(),
                    cols.len()
                )));
            }
            for (column, cell) in cells.iter().enumerate() {
                let text = cell.trim();
                let v: f64 = text.parse().map_err(|_| SeriesError::CsvNumber {
                    row,
                    column: column + 1,
                    text: text.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(SeriesError::CsvNumber {
                        row,
                        column: column + 1,
                        text: text.to_string(),
                    });
                }
                if column == 0 {
                    times.push(v);
                } else {
                    values[column - 1].push(v);
                }
            }
        }
        if times.len() < 2 {
            return Err(SeriesError::Csv(format!(
                "need at least 2 data rows, got {}",
                times.len()
            )));
        }
        let span = times[times.len() - 1] - times[0];
        if span <= 0.0 {
            return Err(SeriesError::Csv("time column is not strictly increasing".into()));
        }
        let dt = span / (times.len() - 1) as f64;
        for (k, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if step <= 0.0 {
                return Err(SeriesError::Csv(format!(
                    "time column is not strictly increasing at row {}",
                    k + 3
                )));
            }
            if ((step - dt) / dt).abs() > 1e-6 {
                return Err(SeriesError::Csv(format!(
                    "non-uniform time step at row {}: {step} vs mean {dt}",
                    k + 3
                )));
            }
        }
        TimeSeries::new(values, 1.0 / dt, names)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries, SeriesError> {
        Self::parse_csv(&fs::read_to_string(path)?)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), SeriesError> {
        write_atomic(path.as_ref(), self.to_csv_string().as_bytes())?;
        Ok(())
    }
}

pub fn default_names(channels: usize) -> Vec<String> {
    (1..=channels).map(|c| format!("s{c}")).collect()
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}
