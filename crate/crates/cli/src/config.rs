//! Experiment configuration: one JSON document with per-field defaults and
//! `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use shm_denoise::dataprep::{Task, WindowSpec};
use shm_denoise::layers::{ConvSpec, DenseSpec, NetworkConfig, RecurrentSpec};
use shm_denoise::signal::{ModalSignalSpec, Mode, NoiseSpec, Tone};
use shm_denoise::train::TrainConfig;

use crate::error::CliError;

/// Environment variable that replaces every seed in the configuration.
pub const SEED_ENV: &str = "SHM_DENOISE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub signal: ModalSignalSpec,
    pub noise: NoiseSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSection {
    #[serde(flatten)]
    pub spec: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub window: usize,
    pub horizon: usize,
    pub stride: usize,
    pub task: Task,
    /// Train, validation and test fractions of the record, in time order.
    pub splits: [f64; 3],
    /// Empty means every channel.
    pub target_channels: Vec<usize>,
    /// Measured record; when absent the bench record is synthesized from
    /// the signal and noise sections.
    pub noisy_csv: Option<PathBuf>,
    /// Clean reference for the denoising task.
    pub clean_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub conv: Vec<ConvSpec>,
    pub recurrent: Vec<RecurrentSpec>,
    pub attention: bool,
    pub dense: Vec<DenseSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }
}

/// Output file names, resolved against `--out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: PathBuf,
    pub train_report: PathBuf,
    pub metrics: PathBuf,
    pub attention: PathBuf,
    /// Interval evaluated by `eval` and `attention`.
    pub split: Split,
}

impl Default for ExperimentConfig {
    /// The synthetic bench: two modes at 10 and 27 Hz seen by three sensors,
    /// 16 s at 256 Hz, all three noise classes mixed to 10 dB SNR, one-step
    /// forecasting from 64-sample windows.
    fn default() -> Self {
        let mode = |frequency_hz, shape: [f64; 3]| Mode {
            frequency_hz,
            damping_ratio: 0.01,
            amplitude: 1.0,
            phase_rad: 0.0,
            shape: shape.to_vec(),
        };
        ExperimentConfig {
            signal: ModalSignalSpec {
                modes: vec![mode(10.0, [1.0, 0.8, 0.5]), mode(27.0, [0.6, -0.4, 1.0])],
                sample_rate_hz: 256.0,
                duration_s: 16.0,
                channels: 3,
                seed: 0,
            },
            noise: NoiseSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            spec: NoiseSpec {
                instrumental_sigma: 0.1,
                env_interference: Some(Tone {
                    frequency_hz: 50.0,
                    amplitude: 1.0,
                    phase_rad: 0.0,
                }),
                env_drift_scale: 0.002,
                op_burst_rate_hz: 0.2,
                op_burst_amplitude: 0.5,
                op_burst_decay_s: 0.05,
                target_snr_db: Some(10.0),
            },
            seed: 1,
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            window: 64,
            horizon: 1,
            stride: 1,
            task: Task::Forecast,
            splits: [0.7, 0.15, 0.15],
            target_channels: Vec::new(),
            noisy_csv: None,
            clean_csv: None,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = NetworkConfig::default_for(1, 1, 1, 1);
        ModelSection {
            conv: d.conv,
            recurrent: d.recurrent,
            attention: d.attention,
            dense: d.dense,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            checkpoint: "model.shmd".into(),
            train_report: "train_report.json".into(),
            metrics: "metrics.json".into(),
            attention: "attention.csv".into(),
            split: Split::Test,
        }
    }
}

impl ModelSection {
    pub fn network(&self, input_channels: usize, data: &DataSection) -> NetworkConfig {
        let target_channels = if data.target_channels.is_empty() {
            input_channels
        } else {
            data.target_channels.len()
        };
        NetworkConfig {
            input_channels,
            window: data.window,
            horizon: data.horizon,
            target_channels,
            conv: self.conv.clone(),
            recurrent: self.recurrent.clone(),
            attention: self.attention,
            dense: self.dense.clone(),
        }
    }
}

impl DataSection {
    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            window: self.window,
            horizon: self.horizon,
            stride: self.stride,
            task: self.task,
            target_channels: self.target_channels.clone(),
        }
    }
}

impl ExperimentConfig {
    /// Reads `path`, layers it over the defaults and applies `overrides`
    /// (`section.key=value`, JSON values, bare strings allowed).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let defaults = serde_json::to_value(ExperimentConfig::default()).expect("defaults serialize");
        let mut tree = defaults.clone();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if !file.is_object() {
                return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
            }
            merge(&mut tree, file);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        check_known(&defaults, &tree, "")?;
        serde_json::from_value(tree).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Sets every seed to `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.signal.seed = seed;
        self.noise.seed = seed;
        self.train.seed = seed;
    }

    /// Applies `SHM_DENOISE_SEED` when it is set.
    pub fn apply_seed_env(&mut self) -> Result<(), CliError> {
        if let Ok(text) = std::env::var(SEED_ENV) {
            let seed = text
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={text:?} is not an unsigned integer")))?;
            self.reseed(seed);
        }
        Ok(())
    }

    /// Cross-section checks that must hold before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let section = |name: &str, e: &dyn std::fmt::Display| CliError::Config(format!("{name}.{e}"));
        if self.data.noisy_csv.is_none() {
            self.signal.validate().map_err(|e| section("signal", &e))?;
            self.noise.spec.validate().map_err(|e| section("noise", &e))?;
        }
        let d = &self.data;
        let bad = |field: &str, reason: String| Err(CliError::Config(format!("data.{field}: {reason}")));
        if d.window == 0 {
            return bad("window", "must be at least 1".into());
        }
        if d.horizon == 0 {
            return bad("horizon", "must be at least 1".into());
        }
        if d.stride == 0 {
            return bad("stride", "must be at least 1".into());
        }
        if d.splits.iter().any(|f| !(f.is_finite() && *f > 0.0)) || (d.splits.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(
                "splits",
                format!("must be three positive fractions summing to 1, got {:?}", d.splits),
            );
        }
        if d.task == Task::Denoise && d.noisy_csv.is_some() && d.clean_csv.is_none() {
            return bad("clean_csv", "the denoise task needs a clean reference".into());
        }
        if d.noisy_csv.is_none() {
            let channels = self.signal.channels;
            if let Some(&c) = d.target_channels.iter().find(|&&c| c >= channels) {
                return bad(
                    "target_channels",
                    format!("channel {c} out of range for {channels} channels"),
                );
            }
            self.model
                .network(channels, d)
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Recursive object merge; anything else in `patch` replaces `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Rejects keys that the defaults do not know, so typos fail loudly.
fn check_known(defaults: &Value, tree: &Value, prefix: &str) -> Result<(), CliError> {
    if let (Value::Object(d), Value::Object(t)) = (defaults, tree) {
        for (k, v) in t {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match d.get(k) {
                None => return Err(CliError::Config(format!("{path}: unknown field"))),
                Some(dv) => check_known(dv, v, &path)?,
            }
        }
    }
    Ok(())
}

enum Segment<'a> {
    Key(&'a str),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<Segment<'_>>, CliError> {
    let bad = || CliError::Usage(format!("malformed override path {path:?}"));
    let mut out = Vec::new();
    for part in path.split('.') {
        let (name, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if name.is_empty() {
            return Err(bad());
        }
        out.push(Segment::Key(name));
        while !rest.is_empty() {
            let close = rest.find(']').ok_or_else(bad)?;
            let index = rest[1..close].parse().map_err(|_| bad())?;
            out.push(Segment::Index(index));
            rest = &rest[close + 1..];
            if !rest.is_empty() && !rest.starts_with('[') {
                return Err(bad());
            }
        }
    }
    Ok(out)
}

fn apply_override(tree: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects section.key=value, got {spec:?}")))?;
    let segments = parse_path(path.trim())?;
    if segments.len() < 2 {
        return Err(CliError::Usage(format!(
            "--set path {path:?} must name a field inside a section"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = tree;
    for seg in &segments {
        slot = match seg {
            Segment::Key(k) => {
                let obj = slot
                    .as_object_mut()
                    .ok_or_else(|| CliError::Config(format!("{path}: {k} is not inside an object")))?;
                obj.entry(k.to_string()).or_insert(Value::Null)
            }
            Segment::Index(i) => {
                let len = slot.as_array().map(Vec::len);
                slot.as_array_mut()
                    .and_then(|a| a.get_mut(*i))
                    .ok_or_else(|| match len {
                        Some(len) => CliError::Config(format!("{path}: index {i} out of range for {len} entries")),
                        None => CliError::Config(format!("{path}: not an array")),
                    })?
            }
        };
    }
    *slot = value;
    Ok(())
}
