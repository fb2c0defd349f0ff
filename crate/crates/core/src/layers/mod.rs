//! Network building blocks and their assembly from a [`NetworkConfig`].
//!
//! Data flows `conv* -> recurrent+ -> attention -> dense* -> linear output`.
//! All channels of a window enter the first convolution jointly, so
//! cross-sensor structure is learned by the shared filters.

mod attention;
mod check;
mod conv;
mod dense;
mod init;
mod recurrent;

pub use attention::AttentionLayer;
pub use check::{grad_suite, GradCheckRow, CHECKED_LAYERS, GRAD_STEP, GRAD_TOLERANCE};
pub use conv::Conv1dLayer;
pub use dense::DenseLayer;
pub use init::glorot_bound;
pub use recurrent::{CellKind, GruLayer, LstmLayer, RecurrentLayer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("model.{field}: {reason}")]
    Config { field: String, reason: String },
    #[error("parameter {name} missing")]
    MissingParam { name: String },
    #[error("parameter {name} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("input shape {got:?} does not match the configured [batch, {window}, {channels}]")]
    InputShape {
        got: Vec<usize>,
        window: usize,
        channels: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn config_error(field: impl Into<String>, reason: impl Into<String>) -> LayerError {
    LayerError::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Result<Var, TensorError> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Parameter access shared by every layer.
pub trait Layer<T: Scalar> {
    /// Named parameter tensors in a fixed order.
    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)>;

    /// Same order as [`Layer::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;

    /// Records every parameter as a leaf of `g`.
    fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|(_, t)| g.leaf(t.clone(), trainable))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentSpec {
    pub cell: CellKind,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub width: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub window: usize,
    pub horizon: usize,
    pub target_channels: usize,
    #[serde(default)]
    pub conv: Vec<ConvSpec>,
    #[serde(default)]
    pub recurrent: Vec<RecurrentSpec>,
    #[serde(default)]
    pub attention: bool,
    #[serde(default)]
    pub dense: Vec<DenseSpec>,
}

impl NetworkConfig {
    /// One conv layer (8 filters, K = 5, relu), one GRU (U = 32), attention,
    /// one relu dense layer of width 32 and a linear output.
    pub fn default_for(input_channels: usize, window: usize, horizon: usize, target_channels: usize) -> Self {
        NetworkConfig {
            input_channels,
            window,
            horizon,
            target_channels,
            conv: vec![ConvSpec {
                filters: 8,
                kernel: 5,
                activation: Activation::Relu,
            }],
            recurrent: vec![RecurrentSpec {
                cell: CellKind::Gru,
                hidden: 32,
            }],
            attention: true,
            dense: vec![DenseSpec {
                width: 32,
                activation: Activation::Relu,
            }],
        }
    }

    /// Neurons in the output layer, `H * C_t`.
    pub fn output_width(&self) -> usize {
        self.horizon * self.target_channels
    }

    /// Time steps left after the valid convolutions, `W - sum(K_i - 1)`.
    pub fn sequence_len(&self) -> Option<usize> {
        self.conv
            .iter()
            .try_fold(self.window, |len, c| len.checked_sub(c.kernel.checked_sub(1)?))
            .filter(|&l| l >= 1)
    }

    /// Feature width after the conv stack.
    fn conv_features(&self) -> usize {
        self.conv.last().map_or(self.input_channels, |c| c.filters)
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        if self.input_channels == 0 {
            return Err(config_error("input_channels", "must be at least 1"));
        }
        if self.window == 0 {
            return Err(config_error("window", "must be at least 1"));
        }
        if self.output_width() == 0 {
            return Err(config_error("horizon", "output width H * C_t must be positive"));
        }
        for (i, c) in self.conv.iter().enumerate() {
            if c.filters == 0 {
                return Err(config_error(format!("conv[{i}].filters"), "must be at least 1"));
            }
            if c.kernel == 0 {
                return Err(config_error(format!("conv[{i}].kernel"), "must be at least 1"));
            }
        }
        if self.sequence_len().is_none() {
            return Err(config_error(
                "conv",
                format!("kernels consume the whole window of {} samples", self.window),
            ));
        }
        for (i, r) in self.recurrent.iter().enumerate() {
            if r.hidden == 0 {
                return Err(config_error(format!("recurrent[{i}].hidden"), "must be at least 1"));
            }
        }
        if self.attention && self.recurrent.is_empty() {
            return Err(config_error("attention", "requires at least one recurrent layer"));
        }
        for (i, d) in self.dense.iter().enumerate() {
            if d.width == 0 {
                return Err(config_error(format!("dense[{i}].width"), "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Outputs of one batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[B, H, C_t]`
    pub prediction: Var,
    /// `[B, L]`, when attention is enabled.
    pub attention: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    pub conv: Vec<Conv1dLayer<T>>,
    pub recurrent: Vec<RecurrentLayer<T>>,
    pub attention: Option<AttentionLayer<T>>,
    pub dense: Vec<DenseLayer<T>>,
    pub output: DenseLayer<T>,
}

impl<T: Scalar> Network<T> {
    /// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self, LayerError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = config.input_channels;
        let conv = config
            .conv
            .iter()
            .map(|c| {
                let layer = Conv1dLayer::init(&mut rng, features, c.filters, c.kernel, c.activation);
                features = c.filters;
                layer
            })
            .collect();
        let recurrent = config
            .recurrent
            .iter()
            .map(|r| {
                let layer = RecurrentLayer::init(&mut rng, r.cell, features, r.hidden);
                features = r.hidden;
                layer
            })
            .collect();
        let attention = config.attention.then(|| AttentionLayer::init(&mut rng, features));
        let mut width = head_input_width(config);
        let dense = config
            .dense
            .iter()
            .map(|d| {
                let layer = DenseLayer::init(&mut rng, width, d.width, d.activation);
                width = d.width;
                layer
            })
            .collect();
        let output = DenseLayer::init(&mut rng, width, config.output_width(), Activation::Identity);
        Ok(Network {
            config: config.clone(),
            conv,
            recurrent,
            attention,
            dense,
            output,
        })
    }

    /// All parameters zero.
    pub fn zeros(config: &NetworkConfig) -> Result<Self, LayerError> {
        config.validate()?;
        let mut features = config.input_channels;
        let conv = config
            .conv
            .iter()
            .map(|c| {
                let layer = Conv1dLayer::zeros(features, c.filters, c.kernel, c.activation);
                features = c.filters;
                layer
            })
            .collect();
        let recurrent = config
            .recurrent
            .iter()
            .map(|r| {
                let layer = match r.cell {
                    CellKind::Lstm => RecurrentLayer::Lstm(LstmLayer::zeros(features, r.hidden)),
                    CellKind::Gru => RecurrentLayer::Gru(GruLayer::zeros(features, r.hidden)),
                };
                features = r.hidden;
                layer
            })
            .collect();
        let attention = config.attention.then(|| AttentionLayer::zeros(features));
        let mut width = head_input_width(config);
        let dense = config
            .dense
            .iter()
            .map(|d| {
                let layer = DenseLayer::zeros(width, d.width, d.activation);
                width = d.width;
                layer
            })
            .collect();
        let output = DenseLayer::zeros(width, config.output_width(), Activation::Identity);
        Ok(Network {
            config: config.clone(),
            conv,
            recurrent,
            attention,
            dense,
            output,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn layers(&self) -> Vec<(String, &dyn Layer<T>)> {
        let mut out: Vec<(String, &dyn Layer<T>)> = Vec::new();
        for (i, l) in self.conv.iter().enumerate() {
            out.push((format!("conv{i}"), l));
        }
        for (i, l) in self.recurrent.iter().enumerate() {
            out.push((format!("rnn{i}"), l));
        }
        if let Some(a) = &self.attention {
            out.push(("attention".into(), a));
        }
        for (i, l) in self.dense.iter().enumerate() {
            out.push((format!("dense{i}"), l));
        }
        out.push(("output".into(), &self.output));
        out
    }

    /// Every parameter with its qualified name, e.g. `rnn0.w_x`.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers()
            .into_iter()
            .flat_map(|(prefix, layer)| {
                layer
                    .tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("{prefix}.{name}"), t))
            })
            .collect()
    }

    /// Same order as [`Network::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.conv {
            out.extend(l.tensors_mut());
        }
        for l in &mut self.recurrent {
            out.extend(l.tensors_mut());
        }
        if let Some(a) = &mut self.attention {
            out.extend(a.tensors_mut());
        }
        for l in &mut self.dense {
            out.extend(l.tensors_mut());
        }
        out.extend(self.output.tensors_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds a network from named tensors, checking every shape.
    pub fn from_named(config: &NetworkConfig, mut tensors: Vec<(String, Tensor<T>)>) -> Result<Self, LayerError> {
        let mut net = Self::zeros(config)?;
        let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.into_iter().zip(net.params_mut()) {
            let pos = tensors
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| LayerError::MissingParam { name: name.clone() })?;
            let (_, t) = tensors.swap_remove(pos);
            if t.shape() != slot.shape() {
                return Err(LayerError::ParamShape {
                    name,
                    expected: slot.shape().to_vec(),
                    got: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
        Ok(net)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let named = self
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.cast::<U>()))
            .collect();
        Network::from_named(&self.config, named).expect("same configuration")
    }

    /// Records the full forward pass on `g`.
    ///
    /// `x` is `[B, W, C]`. Returns the outputs and the parameter leaves in
    /// [`Network::named_params`] order; they carry gradients when `trainable`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<(Forward, Vec<Var>), LayerError> {
        let params: Vec<Var> = self
            .layers()
            .into_iter()
            .flat_map(|(_, layer)| layer.bind(g, trainable))
            .collect();
        let out = self.forward_with(g, x, &params)?;
        Ok((out, params))
    }

    /// Forward pass using caller-supplied parameter handles, given in
    /// [`Network::named_params`] order. Only the shapes of `self` are used.
    pub fn forward_with(&self, g: &mut Graph<T>, x: Var, params: &[Var]) -> Result<Forward, LayerError> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.config.window || shape[2] != self.config.input_channels {
            return Err(LayerError::InputShape {
                got: shape,
                window: self.config.window,
                channels: self.config.input_channels,
            });
        }
        let expected: Vec<(String, &Tensor<T>)> = self.named_params();
        if params.len() != expected.len() {
            return Err(LayerError::MissingParam {
                name: expected
                    .get(params.len())
                    .map_or_else(|| "<extra>".into(), |(n, _)| n.clone()),
            });
        }
        for ((name, t), &p) in expected.iter().zip(params) {
            if g.shape(p) != t.shape() {
                return Err(LayerError::ParamShape {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    got: g.shape(p).to_vec(),
                });
            }
        }
        let mut rest = params;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        let batch = shape[0];
        let mut h = x;
        for layer in &self.conv {
            h = layer.apply(g, h, take(2))?;
        }
        for layer in &self.recurrent {
            let p = take(layer.tensors().len());
            h = layer.apply(g, h, p)?;
        }
        let mut alpha = None;
        let mut features = if let Some(att) = &self.attention {
            let (ctx, a) = att.apply(g, h, take(3))?;
            alpha = Some(a);
            ctx
        } else if !self.recurrent.is_empty() {
            let s = g.shape(h).to_vec();
            let last = g.narrow(h, 1, s[1] - 1, 1)?;
            g.reshape(last, &[batch, s[2]])?
        } else {
            let s = g.shape(h).to_vec();
            g.reshape(h, &[batch, s[1] * s[2]])?
        };
        for layer in self.dense.iter().chain(std::iter::once(&self.output)) {
            features = layer.apply(g, features, take(2))?;
        }
        let prediction = g.reshape(features, &[batch, self.config.horizon, self.config.target_channels])?;
        Ok(Forward {
            prediction,
            attention: alpha,
        })
    }

    /// Inference on `[B, W, C]` inputs: `([B, H, C_t], Some([B, L]))`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>), LayerError> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (out, _) = self.forward(&mut g, xv, false)?;
        Ok((
            g.value(out.prediction).clone(),
            out.attention.map(|a| g.value(a).clone()),
        ))
    }
}

fn head_input_width(config: &NetworkConfig) -> usize {
    match config.recurrent.last() {
        Some(r) => r.hidden,
        None => config.conv_features() * config.sequence_len().unwrap_or(0),
    }
}
