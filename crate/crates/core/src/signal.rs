//! Synthetic multi-sensor vibration bench.
//!
//! A record is a superposition of damped sinusoidal modes, each seen by every
//! sensor through a per-channel shape coefficient. Three noise classes can be
//! layered on top: broadband instrumental noise, environmental interference
//! (a narrowband tone plus random-walk drift) and operational bursts with
//! Poisson arrivals and exponential decay.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{default_names, SeriesError, TimeSeries};

#[derive(Debug, Error)]
pub enum SignalError {
    /// `field` is a path relative to the owning spec, e.g. `modes[1].frequency_hz`.
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("target SNR requested but the clean signal has zero power")]
    ZeroSignalPower,
    #[error("target SNR requested but every noise class is disabled")]
    ZeroNoisePower,
    #[error(transparent)]
    Series(#[from] SeriesError),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SignalError {
    SignalError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// One structural mode as seen by every sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub frequency_hz: f64,
    #[serde(default)]
    pub damping_ratio: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub phase_rad: f64,
    /// Per-channel participation coefficients.
    pub shape: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalSignalSpec {
    pub modes: Vec<Mode>,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModalSignalSpec {
    /// Number of samples, `round(sample_rate_hz * duration_s)`.
    pub fn len(&self) -> usize {
        (self.sample_rate_hz * self.duration_s).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(invalid("sample_rate_hz", "must be positive"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("duration_s", "must be positive"));
        }
        if self.channels == 0 {
            return Err(invalid("channels", "must be at least 1"));
        }
        if self.len() < 2 {
            return Err(invalid(
                "duration_s",
                format!("record has {} samples, need at least 2", self.len()),
            ));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        for (i, m) in self.modes.iter().enumerate() {
            let at = |f: &str| format!("modes[{i}].{f}");
            if !(m.frequency_hz.is_finite() && m.frequency_hz > 0.0) {
                return Err(invalid(at("frequency_hz"), "must be positive"));
            }
            if m.frequency_hz >= nyquist {
                return Err(invalid(
                    at("frequency_hz"),
                    format!(
                        "{} Hz is at or above the Nyquist frequency {nyquist} Hz",
                        m.frequency_hz
                    ),
                ));
            }
            if !(0.0..1.0).contains(&m.damping_ratio) {
                return Err(invalid(at("damping_ratio"), "must lie in [0, 1)"));
            }
            if !(m.amplitude.is_finite() && m.amplitude >= 0.0) {
                return Err(invalid(at("amplitude"), "must be non-negative"));
            }
            if !m.phase_rad.is_finite() {
                return Err(invalid(at("phase_rad"), "must be finite"));
            }
            if m.shape.len() != self.channels {
                return Err(invalid(
                    at("shape"),
                    format!("has {} entries for {} channels", m.shape.len(), self.channels),
                ));
            }
            if m.shape.iter().any(|v| !v.is_finite()) {
                return Err(invalid(at("shape"), "must be finite"));
            }
        }
        Ok(())
    }
}

/// Narrowband environmental tone shared by every sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub frequency_hz: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Standard deviation of i.i.d. Gaussian sensor noise, per channel.
    pub instrumental_sigma: f64,
    pub env_interference: Option<Tone>,
    /// Standard deviation of each random-walk drift increment.
    pub env_drift_scale: f64,
    /// Mean arrival rate of operational bursts.
    pub op_burst_rate_hz: f64,
    pub op_burst_amplitude: f64,
    pub op_burst_decay_s: f64,
    /// When set, the summed noise is rescaled to this SNR over the whole record.
    pub target_snr_db: Option<f64>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        let non_negative = [
            ("instrumental_sigma", self.instrumental_sigma),
            ("env_drift_scale", self.env_drift_scale),
            ("op_burst_rate_hz", self.op_burst_rate_hz),
            ("op_burst_amplitude", self.op_burst_amplitude),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be non-negative"));
            }
        }
        if self.op_burst_rate_hz > 0.0 && !(self.op_burst_decay_s.is_finite() && self.op_burst_decay_s > 0.0) {
            return Err(invalid("op_burst_decay_s", "must be positive when bursts are enabled"));
        }
        if let Some(tone) = &self.env_interference {
            if !(tone.frequency_hz.is_finite() && tone.frequency_hz >= 0.0) {
                return Err(invalid("env_interference.frequency_hz", "must be non-negative"));
            }
            if !(tone.amplitude.is_finite() && tone.amplitude >= 0.0) {
                return Err(invalid("env_interference.amplitude", "must be non-negative"));
            }
        }
        if let Some(snr) = self.target_snr_db {
            if !snr.is_finite() {
                return Err(invalid("target_snr_db", "must be finite"));
            }
        }
        Ok(())
    }
}

/// Noise-free modal superposition.
pub fn synthesize_clean(spec: &ModalSignalSpec) -> Result<TimeSeries, SignalError> {
    spec.validate()?;
    let n = spec.len();
    let fs = spec.sample_rate_hz;
    let mut values = vec![vec![0.0; n]; spec.channels];
    for mode in &spec.modes {
        let omega = 2.0 * PI * mode.frequency_hz;
        let decay = omega * mode.damping_ratio;
        let omega_d = omega * (1.0 - mode.damping_ratio * mode.damping_ratio).sqrt();
        for i in 0..n {
            let t = i as f64 / fs;
            let v = mode.amplitude * (-decay * t).exp() * (omega_d * t + mode.phase_rad).sin();
            for (row, &phi) in values.iter_mut().zip(&mode.shape) {
                row[i] += phi * v;
            }
        }
    }
    Ok(TimeSeries::new(values, fs, default_names(spec.channels))?)
}

// Independent streams per noise class, so enabling one class does not
// perturb the draws of another.
const STREAM_INSTRUMENTAL: u64 = 1;
const STREAM_DRIFT: u64 = 2;
const STREAM_BURSTS: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// The summed noise record (without the clean signal), before SNR rescaling.
pub fn noise_components(
    channels: usize,
    len: usize,
    sample_rate_hz: f64,
    noise: &NoiseSpec,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; len]; channels];

    if noise.instrumental_sigma > 0.0 {
        let mut rng = stream(seed, STREAM_INSTRUMENTAL);
        for row in out.iter_mut() {
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += noise.instrumental_sigma * z;
            }
        }
    }

    if let Some(tone) = &noise.env_interference {
        let omega = 2.0 * PI * tone.frequency_hz;
        for row in out.iter_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                let t = i as f64 / sample_rate_hz;
                *v += tone.amplitude * (omega * t + tone.phase_rad).sin();
            }
        }
    }

    if noise.env_drift_scale > 0.0 {
        let mut rng = stream(seed, STREAM_DRIFT);
        for row in out.iter_mut() {
            let mut level = 0.0;
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                level += noise.env_drift_scale * z;
                *v += level;
            }
        }
    }

    if noise.op_burst_rate_hz > 0.0 && noise.op_burst_amplitude > 0.0 {
        let mut rng = stream(seed, STREAM_BURSTS);
        let gaps = Exp::new(noise.op_burst_rate_hz).expect("rate validated positive");
        let duration = len as f64 / sample_rate_hz;
        let mut onset = gaps.sample(&mut rng);
        while onset < duration {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let first = (onset * sample_rate_hz).ceil() as usize;
            for i in first..len {
                let dt = i as f64 / sample_rate_hz - onset;
                let v = sign * noise.op_burst_amplitude * (-dt / noise.op_burst_decay_s).exp();
                if v.abs() < 1e-12 * noise.op_burst_amplitude {
                    break;
                }
                for row in out.iter_mut() {
                    row[i] += v;
                }
            }
            onset += gaps.sample(&mut rng);
        }
    }
    out
}

/// Adds the configured noise classes to `clean`.
pub fn add_noise(clean: &TimeSeries, noise: &NoiseSpec, seed: u64) -> Result<TimeSeries, SignalError> {
    noise.validate()?;
    let mut components = noise_components(clean.channels(), clean.len(), clean.sample_rate_hz(), noise, seed);
    if let Some(snr_db) = noise.target_snr_db {
        let p_clean = clean.power();
        if p_clean <= 0.0 {
            return Err(SignalError::ZeroSignalPower);
        }
        let count = (clean.channels() * clean.len()) as f64;
        let p_noise = components.iter().flatten().map(|v| v * v).sum::<f64>() / count;
        if p_noise <= 0.0 {
            return Err(SignalError::ZeroNoisePower);
        }
        let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
        for v in components.iter_mut().flatten() {
            *v *= gain;
        }
    }
    let values = clean
        .values()
        .iter()
        .zip(&components)
        .map(|(row, n)| row.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    Ok(TimeSeries::new(
        values,
        clean.sample_rate_hz(),
        clean.channel_names().to_vec(),
    )?)
}

/// `10 log10(P_clean / P_noise)` with the noise taken as `noisy - clean`.
pub fn measured_snr_db(clean: &TimeSeries, noisy: &TimeSeries) -> f64 {
    let mut p_clean = 0.0;
    let mut p_noise = 0.0;
    for (c, n) in clean.values().iter().zip(noisy.values()) {
        for (a, b) in c.iter().zip(n) {
            p_clean += a * a;
            p_noise += (b - a) * (b - a);
        }
    }
    10.0 * (p_clean / p_noise).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(f: f64, zeta: f64, phase: f64, fs: f64, n: usize) -> ModalSignalSpec {
        ModalSignalSpec {
            modes: vec![Mode {
                frequency_hz: f,
                damping_ratio: zeta,
                amplitude: 1.0,
                phase_rad: phase,
                shape: vec![1.0],
            }],
            sample_rate_hz: fs,
            duration_s: n as f64 / fs,
            channels: 1,
            seed: 0,
        }
    }

    #[test]
    fn quarter_phase_starts_at_one() {
        let s = synthesize_clean(&single(10.0, 0.0, PI / 2.0, 1000.0, 100)).unwrap();
        assert_eq!(s.get(0, 0), 1.0);
    }

    #[test]
    fn no_modes_is_silent() {
        let mut spec = single(10.0, 0.0, 0.0, 100.0, 50);
        spec.modes.clear();
        let s = synthesize_clean(&spec).unwrap();
        assert!(s.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mode_at_nyquist() {
        let err = synthesize_clean(&single(50.0, 0.0, 0.0, 100.0, 50)).unwrap_err();
        assert!(err.to_string().starts_with("modes[0].frequency_hz"), "{err}");
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut spec = single(5.0, 0.0, 0.0, 100.0, 50);
        spec.channels = 2;
        let err = synthesize_clean(&spec).unwrap_err();
        assert!(err.to_string().starts_with("modes[0].shape"), "{err}");
    }

    #[test]
    fn zero_noise_is_identity() {
        let clean = synthesize_clean(&single(5.0, 0.01, 0.3, 100.0, 200)).unwrap();
        let noisy = add_noise(&clean, &NoiseSpec::default(), 9).unwrap();
        assert_eq!(noisy, clean);
    }

    #[test]
    fn snr_on_silent_signal_is_rejected() {
        let mut spec = single(5.0, 0.0, 0.0, 100.0, 50);
        spec.modes.clear();
        let clean = synthesize_clean(&spec).unwrap();
        let noise = NoiseSpec {
            instrumental_sigma: 1.0,
            target_snr_db: Some(5.0),
            ..NoiseSpec::default()
        };
        assert!(matches!(
            add_noise(&clean, &noise, 1),
            Err(SignalError::ZeroSignalPower)
        ));
    }

    #[test]
    fn bursts_respect_decay() {
        let clean = TimeSeries::with_default_names(vec![vec![0.0; 1000]], 100.0).unwrap();
        let noise = NoiseSpec {
            op_burst_rate_hz: 0.5,
            op_burst_amplitude: 2.0,
            op_burst_decay_s: 0.05,
            ..NoiseSpec::default()
        };
        let noisy = add_noise(&clean, &noise, 3).unwrap();
        let peak = noisy.channel(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak > 0.5 && peak <= 2.0 * 1.5, "peak {peak}");
    }
}
