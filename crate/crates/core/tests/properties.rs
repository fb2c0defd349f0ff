use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shm_denoise::dataprep::{fit_normalizer, make_windows, Task, WindowSpec};
use shm_denoise::eval::{evaluate_network, mae, rmse};
use shm_denoise::layers::CellKind;
use shm_denoise::layers::{Activation, AttentionLayer, ConvSpec, DenseSpec, Network, NetworkConfig, RecurrentSpec};
use shm_denoise::series::TimeSeries;
use shm_denoise::signal::{synthesize_clean, ModalSignalSpec, Mode};
use shm_denoise::tensor::{Graph, Tensor};
use shm_denoise::train::{adam_step, AdamState, Checkpoint, TrainConfig};
use shm_denoise::{Network64, Tensor64};

fn mode_strategy(channels: usize) -> impl Strategy<Value = Mode> {
    (
        0.5f64..120.0,
        0.0f64..0.3,
        0.0f64..3.0,
        0.0f64..std::f64::consts::TAU,
        prop::collection::vec(-2.0f64..2.0, channels),
    )
        .prop_map(|(frequency_hz, damping_ratio, amplitude, phase_rad, shape)| Mode {
            frequency_hz,
            damping_ratio,
            amplitude,
            phase_rad,
            shape,
        })
}

fn spec(modes: Vec<Mode>, channels: usize) -> ModalSignalSpec {
    ModalSignalSpec {
        modes,
        sample_rate_hz: 256.0,
        duration_s: 1.0,
        channels,
        seed: 0,
    }
}

fn series_strategy() -> impl Strategy<Value = TimeSeries> {
    (1usize..4, 2usize..40)
        .prop_flat_map(|(c, t)| prop::collection::vec(prop::collection::vec(-1e3f64..1e3, t), c))
        .prop_map(|values| TimeSeries::with_default_names(values, 100.0).unwrap())
}

fn small_net(attention: bool, seed: u64) -> Network64 {
    let cfg = NetworkConfig {
        input_channels: 2,
        window: 12,
        horizon: 2,
        target_channels: 2,
        conv: vec![ConvSpec {
            filters: 3,
            kernel: 3,
            activation: Activation::Relu,
        }],
        recurrent: vec![RecurrentSpec {
            cell: CellKind::Gru,
            hidden: 5,
        }],
        attention,
        dense: vec![DenseSpec {
            width: 4,
            activation: Activation::Relu,
        }],
    };
    Network::init(&cfg, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn superposition_is_linear(
        first in prop::collection::vec(mode_strategy(2), 0..3),
        second in prop::collection::vec(mode_strategy(2), 0..3),
    ) {
        let both: Vec<Mode> = first.iter().chain(&second).cloned().collect();
        let a = synthesize_clean(&spec(first, 2)).unwrap();
        let b = synthesize_clean(&spec(second, 2)).unwrap();
        let ab = synthesize_clean(&spec(both, 2)).unwrap();
        for c in 0..2 {
            for t in 0..ab.len() {
                let sum = a.get(c, t) + b.get(c, t);
                prop_assert!((ab.get(c, t) - sum).abs() <= 1e-12 * (1.0 + sum.abs()));
            }
        }
    }

    #[test]
    fn damped_mode_stays_under_its_envelope(
        frequency_hz in 2.0f64..60.0,
        damping_ratio in 0.001f64..0.2,
        amplitude in 0.1f64..5.0,
        phase_rad in 0.0f64..std::f64::consts::TAU,
    ) {
        let fs = 256.0;
        let mode = Mode { frequency_hz, damping_ratio, amplitude, phase_rad, shape: vec![1.0] };
        let s = ModalSignalSpec { modes: vec![mode], sample_rate_hz: fs, duration_s: 4.0, channels: 1, seed: 0 };
        let x = synthesize_clean(&s).unwrap();
        let decay = 2.0 * std::f64::consts::PI * frequency_hz * damping_ratio;
        for (n, v) in x.channel(0).iter().enumerate() {
            let env = amplitude * (-decay * n as f64 / fs).exp();
            prop_assert!(v.abs() <= env * (1.0 + 1e-12) + 1e-15);
        }
        // per-period maxima shrink, up to the peak a sampled period can miss
        let fd = frequency_hz * (1.0 - damping_ratio * damping_ratio).sqrt();
        let period = (fs / fd).ceil() as usize;
        let slack = 1.0 - (std::f64::consts::PI * fd / fs).cos();
        let maxima: Vec<(usize, f64)> = x.channel(0)
            .chunks(period)
            .enumerate()
            .skip(1)
            .filter(|(_, w)| w.len() == period)
            .map(|(k, w)| (k * period, w.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
            .collect();
        for pair in maxima.windows(2) {
            let (start, prev) = pair[0];
            let next = pair[1].1;
            let env = amplitude * (-decay * (start + period) as f64 / fs).exp();
            prop_assert!(next <= prev + env * slack + 1e-12, "{next} > {prev}");
        }
    }

    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        values in prop::collection::vec(-1e3f64..1e3, 1..40),
    ) {
        let cols = values.len();
        let data: Vec<f64> = (0..rows).flat_map(|r| values.iter().map(move |v| v * (r + 1) as f64 / rows as f64)).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![rows, cols], data).unwrap());
        let s = g.softmax(x, 1).unwrap();
        for row in g.value(s).data().chunks(cols) {
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn normalization_round_trips(series in series_strategy()) {
        let norm = fit_normalizer(&series, 0..series.len()).unwrap();
        let back = norm.denormalize(&norm.normalize(&series).unwrap()).unwrap();
        for c in 0..series.channels() {
            for t in 0..series.len() {
                if !norm.degenerate[c] {
                    prop_assert!((back.get(c, t) - series.get(c, t)).abs() <= 1e-9);
                }
                let y = norm.normalize_value(c, series.get(c, t));
                prop_assert!((0.0..=1.0).contains(&y));
            }
        }
    }

    #[test]
    fn csv_round_trips(series in series_strategy()) {
        let back = TimeSeries::parse_csv(&series.to_csv_string()).unwrap();
        prop_assert_eq!(back.channel_names(), series.channel_names());
        prop_assert!((back.sample_rate_hz() - series.sample_rate_hz()).abs() <= 1e-9);
        for c in 0..series.channels() {
            for t in 0..series.len() {
                prop_assert!((back.get(c, t) - series.get(c, t)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn rmse_dominates_mae(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..100),
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (r, m) = (rmse(&p, &t).unwrap(), mae(&p, &t).unwrap());
        prop_assert!(r >= 0.0 && m >= 0.0);
        prop_assert!(r >= m * (1.0 - 1e-12));
    }

    #[test]
    fn first_adam_step_follows_gradient_sign(c in prop_oneof![-1e3f64..-1.0, 1.0f64..1e3]) {
        let config = TrainConfig::default();
        let mut theta = Tensor64::scalar(0.25);
        let mut state = AdamState::new([&theta]);
        adam_step(&mut [&mut theta], &[vec![c]], &["theta".to_string()], &mut state, &config).unwrap();
        let delta = theta.data()[0] - 0.25;
        let eta = config.learning_rate;
        prop_assert_eq!(delta.signum(), -c.signum());
        prop_assert!(delta.abs() > eta * (1.0 - config.epsilon) - 1e-18 && delta.abs() <= eta + 1e-18);
    }

    #[test]
    fn attention_follows_time_permutations(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, u) = (7, 4);
        let mut draw = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let layer = AttentionLayer { w_a: draw(vec![u, u]), b_a: draw(vec![u]), v: draw(vec![u]) };
        let h: Tensor64 = draw(vec![l, u]);
        let mut perm: Vec<usize> = (0..l).collect();
        perm.rotate_left(seed as usize % l);
        perm.swap(0, l - 1);
        let permuted = Tensor::new(
            vec![l, u],
            perm.iter().flat_map(|&p| h.data()[p * u..(p + 1) * u].to_vec()).collect(),
        ).unwrap();
        let (ctx, alpha) = layer.forward(&h).unwrap();
        let (ctx_p, alpha_p) = layer.forward(&permuted).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((alpha_p.data()[i] - alpha.data()[p]).abs() <= 1e-12);
        }
        for j in 0..u {
            prop_assert!((ctx_p.data()[j] - ctx.data()[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_stack_length_arithmetic(
        window in 8usize..40,
        kernels in prop::collection::vec(1usize..6, 0..4),
    ) {
        let total: usize = kernels.iter().map(|k| k - 1).sum();
        prop_assume!(total < window);
        let cfg = NetworkConfig {
            input_channels: 2,
            window,
            horizon: 1,
            target_channels: 1,
            conv: kernels.iter().map(|&kernel| ConvSpec { filters: 2, kernel, activation: Activation::Relu }).collect(),
            recurrent: vec![RecurrentSpec { cell: CellKind::Lstm, hidden: 3 }],
            attention: true,
            dense: vec![],
        };
        prop_assert_eq!(cfg.sequence_len(), Some(window - total));
        let net = Network64::init(&cfg, 0).unwrap();
        let (pred, alpha) = net.predict(&Tensor::zeros(vec![2, window, 2])).unwrap();
        prop_assert_eq!(pred.shape(), &[2, 1, 1]);
        let alpha = alpha.unwrap();
        prop_assert_eq!(alpha.shape(), &[2, window - total]);
    }
}

#[test]
fn attention_rows_are_distributions_on_random_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = small_net(true, 17);
    let x = Tensor::new(
        vec![1000, 12, 2],
        (0..24_000).map(|_| rng.random_range(-3.0..3.0)).collect(),
    )
    .unwrap();
    let (_, alpha) = net.predict(&x).unwrap();
    let alpha = alpha.unwrap();
    assert_eq!(alpha.shape(), &[1000, 10]);
    for row in alpha.data().chunks(10) {
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn identical_steps_get_uniform_attention() {
    let layer = AttentionLayer {
        w_a: Tensor::from_fn(vec![3, 3], |i| 0.1 * i as f64),
        b_a: Tensor::vector(&[0.1, -0.2, 0.3]),
        v: Tensor::vector(&[1.0, 2.0, -1.0]),
    };
    let row = [0.4, -0.7, 0.2];
    let h = Tensor::new(vec![5, 3], row.repeat(5)).unwrap();
    let (ctx, alpha) = layer.forward(&h).unwrap();
    for a in alpha.data() {
        assert_relative_eq!(*a, 0.2, epsilon = 1e-15);
    }
    for (c, r) in ctx.data().iter().zip(row) {
        assert_relative_eq!(*c, r, epsilon = 1e-15);
    }
    let single = Tensor::new(vec![1, 3], row.to_vec()).unwrap();
    let (ctx, alpha) = layer.forward(&single).unwrap();
    assert_eq!(alpha.data(), &[1.0]);
    assert_eq!(ctx.data(), &row);
}

#[test]
fn checkpoint_reload_reproduces_predictions_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let net = small_net(true, 3);
    let norm = shm_denoise::dataprep::NormState::identity(2);
    let ckpt = Checkpoint::from_network(&net, norm);
    let path = dir.path().join("model.shmd");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x32 = Tensor::new(
        vec![4, 12, 2],
        (0..96).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap();
    let before = ckpt.network::<f32>().unwrap().predict(&x32).unwrap();
    let after = loaded.network::<f32>().unwrap().predict(&x32).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before.0), bits(&after.0));
    assert_eq!(bits(before.1.as_ref().unwrap()), bits(after.1.as_ref().unwrap()));
}

#[test]
fn metrics_scale_with_the_data() {
    let values: Vec<Vec<f64>> = (0..2)
        .map(|c| {
            (0..80)
                .map(|t| ((t as f64) * 0.3 + c as f64).sin() + 0.1 * (t % 7) as f64)
                .collect()
        })
        .collect();
    let scaled: Vec<Vec<f64>> = values.iter().map(|ch| ch.iter().map(|v| 10.0 * v).collect()).collect();
    let net = small_net(true, 9);
    let spec = WindowSpec {
        window: 12,
        horizon: 2,
        stride: 1,
        task: Task::Forecast,
        target_channels: vec![],
    };
    let report = |values: Vec<Vec<f64>>| {
        let s = TimeSeries::with_default_names(values, 1.0).unwrap();
        let norm = fit_normalizer(&s, 0..s.len()).unwrap();
        let ws = make_windows(&norm.normalize(&s).unwrap(), None, &spec).unwrap();
        evaluate_network(&net, &norm, &ws).unwrap()
    };
    let (a, b) = (report(values), report(scaled));
    assert_relative_eq!(b.rmse, 10.0 * a.rmse, max_relative = 1e-9);
    assert_relative_eq!(b.mae, 10.0 * a.mae, max_relative = 1e-9);
    assert_relative_eq!(
        b.baselines.persistence.rmse,
        10.0 * a.baselines.persistence.rmse,
        max_relative = 1e-9
    );
    assert!(a.rmse >= a.mae);
}
