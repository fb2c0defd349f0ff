use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use shm_denoise::dataprep::{make_windows, NormState, Task, WindowSet, WindowSpec};
use shm_denoise::eval::EvalError;
use shm_denoise::eval::{attention_weights, export_attention};
use shm_denoise::layers::{Activation, CellKind, ConvSpec, DenseSpec, NetworkConfig, RecurrentSpec};
use shm_denoise::series::TimeSeries;
use shm_denoise::train::{fit, Checkpoint, TrainConfig};
use shm_denoise::Network64;

const WINDOW: usize = 24;

/// Non-overlapping windows of flat, lightly noisy signal, each holding one
/// fast-decaying burst; the target is the burst's peak amplitude.
fn burst_windows(count: usize, seed: u64) -> (WindowSet, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = Normal::new(0.0, 0.02).unwrap();
    let mut noisy = Vec::with_capacity(count * WINDOW);
    let mut clean = vec![0.0; count * WINDOW];
    let mut onsets = Vec::with_capacity(count);
    for k in 0..count {
        let onset = rng.random_range(2..WINDOW - 4);
        let amplitude = rng.random_range(0.3..1.0);
        for t in 0..WINDOW {
            let burst = if t >= onset {
                amplitude * (-((t - onset) as f64) / 0.7).exp()
            } else {
                0.0
            };
            noisy.push(burst + floor.sample(&mut rng));
        }
        clean[(k + 1) * WINDOW - 1] = amplitude;
        onsets.push(onset);
    }
    let spec = WindowSpec {
        window: WINDOW,
        horizon: 1,
        stride: WINDOW,
        task: Task::Denoise,
        target_channels: vec![],
    };
    let noisy = TimeSeries::with_default_names(vec![noisy], 1.0).unwrap();
    let clean = TimeSeries::with_default_names(vec![clean], 1.0).unwrap();
    (make_windows(&noisy, Some(&clean), &spec).unwrap(), onsets)
}

fn localizer() -> NetworkConfig {
    NetworkConfig {
        input_channels: 1,
        window: WINDOW,
        horizon: 1,
        target_channels: 1,
        conv: vec![],
        recurrent: vec![RecurrentSpec {
            cell: CellKind::Gru,
            hidden: 8,
        }],
        attention: true,
        dense: vec![],
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

#[test]
fn trained_attention_points_at_the_burst() {
    let (train, _) = burst_windows(600, 1);
    let (val, _) = burst_windows(100, 2);
    let (test, onsets) = burst_windows(200, 3);
    let config = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        max_epochs: 60,
        patience: 10,
        seed: 4,
        ..TrainConfig::default()
    };
    let (net, report) = fit::<f64>(&train, &val, &localizer(), &config).unwrap();
    let dump = attention_weights(&net, &test).unwrap();
    let offsets: Vec<i64> = dump
        .weights
        .iter()
        .zip(&onsets)
        .map(|(row, &onset)| argmax(row) as i64 - onset as i64)
        .collect();
    let misses: Vec<i64> = offsets.iter().copied().filter(|d| d.abs() > 2).collect();
    let hits = offsets.iter().filter(|d| d.abs() <= 2).count();
    assert!(report.best_val_loss < 1e-2, "val loss {}", report.best_val_loss);
    assert_eq!(hits, onsets.len(), "argmax offsets outside +-2: {misses:?}");
}

#[test]
fn exported_rows_cover_the_conv_shortened_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let config = NetworkConfig {
        conv: vec![
            ConvSpec {
                filters: 4,
                kernel: 5,
                activation: Activation::Relu,
            },
            ConvSpec {
                filters: 3,
                kernel: 3,
                activation: Activation::Tanh,
            },
        ],
        recurrent: vec![RecurrentSpec {
            cell: CellKind::Lstm,
            hidden: 6,
        }],
        dense: vec![DenseSpec {
            width: 4,
            activation: Activation::Relu,
        }],
        ..localizer()
    };
    let net = Network64::init(&config, 12).unwrap();
    let ckpt = Checkpoint::from_network(&net, NormState::identity(1));
    let (windows, _) = burst_windows(30, 9);
    let windows = windows.with_origin(1000);
    let path = dir.path().join("attention.csv");
    let dump = export_attention(&ckpt, &windows, &path).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let len = WINDOW - 4 - 2;
    assert_eq!(header.len(), len + 1);
    assert_eq!(header[0], "window_start");
    assert_eq!(header[len], format!("w_{}", len - 1));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 30);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0] as usize, 1000 + k * WINDOW);
        assert!((row[1..].iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        assert_eq!(&row[1..], dump.weights[k].as_slice());
    }
}

#[test]
fn disabled_attention_has_nothing_to_export() {
    let dir = tempfile::tempdir().unwrap();
    let config = NetworkConfig {
        attention: false,
        ..localizer()
    };
    let ckpt = Checkpoint::from_network(&Network64::init(&config, 0).unwrap(), NormState::identity(1));
    let (windows, _) = burst_windows(4, 0);
    let path = dir.path().join("attention.csv");
    let err = export_attention(&ckpt, &windows, &path).unwrap_err();
    assert!(matches!(err, EvalError::AttentionDisabled));
    assert!(!path.exists());
}
