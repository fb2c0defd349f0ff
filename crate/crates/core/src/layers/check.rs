//! Finite-difference gradient checks of every differentiable building block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, AttentionLayer, Conv1dLayer, DenseLayer, GruLayer, LstmLayer, RecurrentLayer};
use crate::tensor::{grad_check, GradCheckReport, Graph, Tensor, TensorError, Var};

/// Relative-error threshold used by [`grad_suite`].
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Central-difference step used by [`grad_suite`].
pub const GRAD_STEP: f64 = 1e-5;

/// Building blocks covered by [`grad_suite`], in report order.
pub const CHECKED_LAYERS: [&str; 8] = [
    "conv1d",
    "lstm",
    "gru",
    "attention",
    "dense",
    "softmax",
    "mse",
    "network",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub layer: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// `sum(y * r)` for a fixed random `r`, so every output element carries a
/// distinct weight.
fn project(g: &mut Graph<f64>, y: Var, r: &Tensor<f64>) -> Result<Var, TensorError> {
    let rv = g.input(r.clone());
    let prod = g.mul(y, rv)?;
    g.sum(prod)
}

fn check<F>(
    rng: &mut ChaCha8Rng,
    inputs: &[Tensor<f64>],
    out_shape: Vec<usize>,
    f: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let r = uniform(rng, out_shape, 1.0);
    grad_check(
        |g, v| {
            let y = f(g, v)?;
            project(g, y, &r)
        },
        inputs,
        GRAD_STEP,
        GRAD_TOLERANCE,
    )
}

/// Gradient checks, in double precision, of conv1d, LSTM, GRU, attention,
/// dense, softmax, MSE and a small full network, with inputs and parameters
/// drawn from `seed`.
pub fn grad_suite(seed: u64) -> Result<Vec<GradCheckRow>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, l, d, u) = (2, 5, 3, 4);
    let mut rows = Vec::with_capacity(CHECKED_LAYERS.len());
    let mut push = |layer, report| rows.push(GradCheckRow { layer, seed, report });

    let conv = Conv1dLayer::<f64>::zeros(d, 3, 3, Activation::Tanh);
    let inputs = [
        uniform(&mut rng, vec![b, l + 2, d], 1.0),
        uniform(&mut rng, vec![3, d, 3], 0.5),
        uniform(&mut rng, vec![3], 0.5),
    ];
    push(
        "conv1d",
        check(&mut rng, &inputs, vec![b, l, 3], |g, v| conv.apply(g, v[0], &v[1..]))?,
    );

    let lstm = RecurrentLayer::Lstm(LstmLayer::<f64>::zeros(d, u));
    let inputs = [
        uniform(&mut rng, vec![b, l, d], 1.0),
        uniform(&mut rng, vec![d, 4 * u], 0.5),
        uniform(&mut rng, vec![u, 4 * u], 0.5),
        uniform(&mut rng, vec![4 * u], 0.5),
    ];
    push(
        "lstm",
        check(&mut rng, &inputs, vec![b, l, u], |g, v| lstm.apply(g, v[0], &v[1..]))?,
    );

    let gru = RecurrentLayer::Gru(GruLayer::<f64>::zeros(d, u));
    let inputs = [
        uniform(&mut rng, vec![b, l, d], 1.0),
        uniform(&mut rng, vec![d, 3 * u], 0.5),
        uniform(&mut rng, vec![u, 2 * u], 0.5),
        uniform(&mut rng, vec![u, u], 0.5),
        uniform(&mut rng, vec![3 * u], 0.5),
    ];
    push(
        "gru",
        check(&mut rng, &inputs, vec![b, l, u], |g, v| gru.apply(g, v[0], &v[1..]))?,
    );

    let attention = AttentionLayer::<f64>::zeros(u);
    let inputs = [
        uniform(&mut rng, vec![b, l, u], 1.0),
        uniform(&mut rng, vec![u, u], 1.0),
        uniform(&mut rng, vec![u], 0.5),
        uniform(&mut rng, vec![u], 1.0),
    ];
    let r_alpha = uniform(&mut rng, vec![b, l], 1.0);
    push(
        "attention",
        check(&mut rng, &inputs, vec![b, u], |g, v| {
            let (ctx, alpha) = attention.apply(g, v[0], &v[1..])?;
            // the weights feed the loss too, so their backward path is checked directly
            let extra = project(g, alpha, &r_alpha)?;
            let extra = g.reshape(extra, &[1])?;
            g.add(ctx, extra)
        })?,
    );

    let dense = DenseLayer::<f64>::zeros(5, 3, Activation::Tanh);
    let inputs = [
        uniform(&mut rng, vec![b, 5], 1.0),
        uniform(&mut rng, vec![5, 3], 0.5),
        uniform(&mut rng, vec![3], 0.5),
    ];
    push(
        "dense",
        check(&mut rng, &inputs, vec![b, 3], |g, v| dense.apply(g, v[0], &v[1..]))?,
    );

    let inputs = [uniform(&mut rng, vec![3, 6], 2.0)];
    push(
        "softmax",
        check(&mut rng, &inputs, vec![3, 6], |g, v| g.softmax(v[0], 1))?,
    );

    let inputs = [uniform(&mut rng, vec![3, 4], 1.0), uniform(&mut rng, vec![3, 4], 1.0)];
    push(
        "mse",
        grad_check(
            |g, v| crate::train::mse_loss(g, v[0], v[1]),
            &inputs,
            GRAD_STEP,
            GRAD_TOLERANCE,
        )?,
    );

    push("network", network_check(&mut rng)?);
    Ok(rows)
}

/// Whole-network check: every parameter of a small conv/GRU/attention/dense
/// stack through an MSE loss.
fn network_check(rng: &mut ChaCha8Rng) -> Result<GradCheckReport, TensorError> {
    use super::{CellKind, ConvSpec, DenseSpec, Network, NetworkConfig, RecurrentSpec};

    let cfg = NetworkConfig {
        input_channels: 2,
        window: 6,
        horizon: 2,
        target_channels: 1,
        conv: vec![ConvSpec {
            filters: 3,
            kernel: 2,
            activation: Activation::Tanh,
        }],
        recurrent: vec![RecurrentSpec {
            cell: CellKind::Gru,
            hidden: 3,
        }],
        attention: true,
        dense: vec![DenseSpec {
            width: 3,
            activation: Activation::Tanh,
        }],
    };
    let template = Network::<f64>::zeros(&cfg).expect("fixed configuration is valid");
    let mut inputs = vec![uniform(rng, vec![2, 6, 2], 1.0), uniform(rng, vec![2, 2, 1], 1.0)];
    inputs.extend(
        template
            .named_params()
            .into_iter()
            .map(|(_, t)| uniform(rng, t.shape().to_vec(), 1.0)),
    );
    grad_check(
        |g, v| {
            let out = template.forward_with(g, v[0], &v[2..]).map_err(|e| match e {
                super::LayerError::Tensor(t) => t,
                other => panic!("parameter layout matches the template: {other}"),
            })?;
            crate::train::mse_loss(g, out.prediction, v[1])
        },
        &inputs,
        GRAD_STEP,
        GRAD_TOLERANCE,
    )
}
