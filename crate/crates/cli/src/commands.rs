use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Serialize;

use shm_denoise::dataprep::{fit_normalizer, make_windows, split_chronological, NormState, WindowSet};
use shm_denoise::eval::{attention_weights, evaluate_network, MetricsReport};
use shm_denoise::layers::{grad_suite, GradCheckRow, GRAD_TOLERANCE};
use shm_denoise::series::{write_atomic, TimeSeries};
use shm_denoise::signal::{add_noise, synthesize_clean};
use shm_denoise::train::{fit, Checkpoint, StopReason, TrainReport, FORMAT_VERSION};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Progress line on stdout; a closed pipe is not an error worth failing on.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Seeds run by `gradcheck`, starting at the configured one.
pub const GRADCHECK_SEEDS: u64 = 5;

/// Everything a subcommand needs once arguments are resolved.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Context {
    fn output(&self, name: &Path) -> PathBuf {
        self.out.join(name)
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.output(&self.config.eval.checkpoint)
    }
}

#[derive(Serialize)]
struct Seeds {
    signal: u64,
    noise: u64,
    train: u64,
}

#[derive(Serialize)]
struct Formats {
    checkpoint: u32,
    csv: &'static str,
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seeds: Seeds,
    formats: Formats,
    config: &'a ExperimentConfig,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_atomic(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_provenance(ctx: &Context, command: &str) -> Result<(), CliError> {
    let c = &ctx.config;
    let record = Provenance {
        tool: "shm-denoise",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seeds: Seeds {
            signal: c.signal.seed,
            noise: c.noise.seed,
            train: c.train.seed,
        },
        formats: Formats {
            checkpoint: FORMAT_VERSION,
            csv: "t,<channel>...",
        },
        config: c,
    };
    write_json(&ctx.output(Path::new(&format!("{command}.provenance.json"))), &record)
}

fn synthesize(config: &ExperimentConfig) -> Result<(TimeSeries, TimeSeries), CliError> {
    let clean = synthesize_clean(&config.signal).map_err(|e| prefixed("signal", e))?;
    let noisy = add_noise(&clean, &config.noise.spec, config.noise.seed).map_err(|e| prefixed("noise", e))?;
    Ok((clean, noisy))
}

fn prefixed(section: &str, e: shm_denoise::signal::SignalError) -> CliError {
    match CliError::from(e) {
        CliError::Config(m) if !m.starts_with("noise:") => CliError::Config(format!("{section}.{m}")),
        other => other,
    }
}

fn load_series(path: &Path) -> Result<TimeSeries, CliError> {
    TimeSeries::load_csv(path).map_err(|e| CliError::series(path, e))
}

/// Noisy record and, when available, its clean reference.
fn records(config: &ExperimentConfig) -> Result<(TimeSeries, Option<TimeSeries>), CliError> {
    match &config.data.noisy_csv {
        Some(path) => {
            let noisy = load_series(path)?;
            let clean = config.data.clean_csv.as_deref().map(load_series).transpose()?;
            Ok((noisy, clean))
        }
        None => {
            let (clean, noisy) = synthesize(config)?;
            Ok((noisy, Some(clean)))
        }
    }
}

/// Train, validation and test windows over chronological splits, all
/// normalized with `norm` (fitted on the training interval when absent).
pub struct Prepared {
    pub norm: NormState,
    pub ranges: [Range<usize>; 3],
    pub windows: [WindowSet; 3],
}

pub fn prepare(config: &ExperimentConfig, norm: Option<NormState>) -> Result<Prepared, CliError> {
    let (noisy, clean) = records(config)?;
    let d = &config.data;
    let ranges = split_chronological(noisy.len(), d.splits, d.window + d.horizon)?;
    let norm = match norm {
        Some(n) => n,
        None => fit_normalizer(&noisy, ranges[0].clone())?,
    };
    let noisy_n = norm.normalize(&noisy)?;
    let clean_n = clean.as_ref().map(|c| norm.normalize(c)).transpose()?;
    let spec = d.window_spec();
    let cut = |r: &Range<usize>| -> Result<WindowSet, CliError> {
        let x = noisy_n.slice(r.clone()).map_err(|e| CliError::Data(e.to_string()))?;
        let c = clean_n
            .as_ref()
            .map(|c| c.slice(r.clone()))
            .transpose()
            .map_err(|e| CliError::Data(e.to_string()))?;
        Ok(make_windows(&x, c.as_ref(), &spec)?
            .with_origin(r.start)
            .with_norm(norm.clone()))
    };
    let windows = [cut(&ranges[0])?, cut(&ranges[1])?, cut(&ranges[2])?];
    Ok(Prepared { norm, ranges, windows })
}

pub fn generate(ctx: &Context) -> Result<(), CliError> {
    let config = &ctx.config;
    config.signal.validate().map_err(|e| prefixed("signal", e))?;
    config.noise.spec.validate().map_err(|e| prefixed("noise", e))?;
    let (clean, noisy) = synthesize(config)?;
    write_file(&ctx.output(Path::new("clean.csv")), clean.to_csv_string().as_bytes())?;
    write_file(&ctx.output(Path::new("noisy.csv")), noisy.to_csv_string().as_bytes())?;
    write_provenance(ctx, "generate")?;
    say!(
        "wrote {} channels x {} samples to {}",
        clean.channels(),
        clean.len(),
        ctx.out.display()
    );
    Ok(())
}

/// Trains, then writes the checkpoint, the report and the resolved config.
pub fn train(ctx: &Context) -> Result<TrainReport, CliError> {
    let config = &ctx.config;
    config.validate()?;
    let prepared = prepare(config, None)?;
    let [train_ws, val_ws, _] = &prepared.windows;
    let net_config = config.model.network(train_ws.channels, &config.data);
    net_config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let report_path = ctx.output(&config.eval.train_report);
    let (net, report) = match fit::<f64>(train_ws, val_ws, &net_config, &config.train) {
        Ok(done) => done,
        Err(e) => {
            let err = CliError::from(e);
            if let CliError::Numeric {
                partial: Some(partial), ..
            } = &err
            {
                write_json(&report_path, partial.as_ref())?;
            }
            return Err(err);
        }
    };
    let ckpt = Checkpoint::from_network(&net, prepared.norm.clone());
    let ckpt_path = ctx.checkpoint_path();
    write_file(&ckpt_path, &ckpt.to_bytes())?;
    write_json(&report_path, &report)?;
    write_json(&ctx.output(Path::new("config.json")), config)?;
    write_provenance(ctx, "train")?;
    say!(
        "trained {} epochs (stopped: {}), best epoch {} with validation loss {:.6e}; checkpoint {}",
        report.epochs_run(),
        match report.stop_reason {
            StopReason::Early => "early",
            StopReason::MaxEpochs => "max_epochs",
        },
        report.best_epoch,
        report.best_val_loss,
        ckpt_path.display()
    );
    Ok(report)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Windows of the configured evaluation split, normalized like the checkpoint.
fn eval_windows(ctx: &Context, ckpt: &Checkpoint) -> Result<WindowSet, CliError> {
    let prepared = prepare(&ctx.config, Some(ckpt.norm_state.clone()))?;
    let [a, b, c] = prepared.windows;
    Ok(match ctx.config.eval.split.index() {
        0 => a,
        1 => b,
        _ => c,
    })
}

pub fn eval(ctx: &Context) -> Result<MetricsReport, CliError> {
    let ckpt = load_checkpoint(&ctx.checkpoint_path())?;
    let windows = eval_windows(ctx, &ckpt)?;
    let net = ckpt.network::<f64>()?;
    let report = evaluate_network(&net, &ckpt.norm_state, &windows)?;
    write_json(&ctx.output(&ctx.config.eval.metrics), &report)?;
    write_provenance(ctx, "eval")?;
    say!(
        "rmse {:.6e}  mae {:.6e}  persistence rmse {:.6e}  over {} windows",
        report.rmse,
        report.mae,
        report.baselines.persistence.rmse,
        report.samples
    );
    if let Some(d) = &report.denoising {
        say!("gain ratio {:.4}", d.gain_ratio);
    }
    Ok(report)
}

pub fn attention(ctx: &Context) -> Result<PathBuf, CliError> {
    let ckpt = load_checkpoint(&ctx.checkpoint_path())?;
    if !ckpt.net_config.attention {
        return Err(CliError::Config("attention disabled in checkpoint config".into()));
    }
    let windows = eval_windows(ctx, &ckpt)?;
    let net = ckpt.network::<f64>()?;
    let dump = attention_weights(&net, &windows)?;
    let path = ctx.output(&ctx.config.eval.attention);
    write_file(&path, dump.to_csv_string().as_bytes())?;
    write_provenance(ctx, "attention")?;
    say!(
        "wrote {} rows of {} weights to {}",
        dump.weights.len(),
        dump.sequence_len(),
        path.display()
    );
    Ok(path)
}

/// Runs the gradient suite for `GRADCHECK_SEEDS` seeds and prints one row
/// per layer and seed.
pub fn gradcheck(seed: u64) -> Result<Vec<GradCheckRow>, CliError> {
    let mut rows = Vec::new();
    for s in seed..seed + GRADCHECK_SEEDS {
        rows.extend(grad_suite(s).map_err(|e| CliError::numeric(e.to_string()))?);
    }
    say!(
        "{:<10} {:>6} {:>8} {:>14}  result",
        "layer",
        "seed",
        "entries",
        "max rel err"
    );
    for r in &rows {
        say!(
            "{:<10} {:>6} {:>8} {:>14.3e}  {}",
            r.layer,
            r.seed,
            r.report.checked,
            r.report.max_rel_error,
            if r.report.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed = rows.iter().filter(|r| !r.report.passed).count();
    if failed > 0 {
        return Err(CliError::numeric(format!(
            "{failed} of {} gradient checks exceeded relative error {GRAD_TOLERANCE:e}",
            rows.len()
        )));
    }
    say!("all {} gradient checks passed", rows.len());
    Ok(rows)
}
