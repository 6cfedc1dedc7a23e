//! Dense feedforward networks with exact reverse-mode gradients.

use crate::engine::matrix::Matrix;
use crate::error::{Result, SanError};
use crate::rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
            Activation::Sigmoid => stable_sigmoid(z),
        }
    }

    /// Derivative given pre-activation `z` and post-activation `a`.
    /// The ReLU subgradient at 0 is 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::ReLU => 0,
            Activation::Identity => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::ReLU),
            1 => Ok(Activation::Identity),
            2 => Ok(Activation::Sigmoid),
            other => Err(SanError::InvalidConfig(format!("unknown activation tag {other}"))),
        }
    }
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One dense layer: `a = activation(x W + b)` with `W` of shape `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// An MLP as an ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Per-layer pre/post activations retained by `forward` for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }
}

/// Parameter gradients shaped exactly like the net's layers.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Matrix::zeros(l.in_dim(), l.out_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    /// `self += rhs * s`
    pub fn add_scaled_assign(&mut self, rhs: &NetGrads, s: f64) {
        assert_eq!(self.layers.len(), rhs.layers.len(), "grad layer count");
        for (a, b) in self.layers.iter_mut().zip(&rhs.layers) {
            a.weight.add_scaled_assign(&b.weight, s);
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y * s;
            }
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for l in &mut self.layers {
            for v in l.weight.data_mut() {
                *v *= s;
            }
            for v in &mut l.bias {
                *v *= s;
            }
        }
    }

    /// Flatten in canonical order (per layer: weights row-major, then bias).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn validate_finite(&self, context: &str) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            l.weight.validate_finite(&format!("{context} layer {i} weight grad"))?;
            if !l.bias.iter().all(|v| v.is_finite()) {
                return Err(SanError::Numeric(format!(
                    "non-finite value in {context} layer {i} bias grad"
                )));
            }
        }
        Ok(())
    }
}

impl DenseNet {
    /// Build from `dims = [in, h1, ..., out]` with one activation per layer.
    /// Weights are He-normal (`std = sqrt(2 / in_dim)`), biases zero,
    /// deterministic for a fixed seed.
    pub fn init(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(SanError::InvalidConfig(format!(
                "need at least one layer, got dims {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(SanError::InvalidConfig(format!("zero dimension in dims {dims:?}")));
        }
        if activations.len() != dims.len() - 1 {
            return Err(SanError::InvalidConfig(format!(
                "expected {} activations, got {}",
                dims.len() - 1,
                activations.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let std = (2.0 / in_dim as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("he-normal std");
                let data = (0..in_dim * out_dim).map(|_| normal.sample(&mut rng)).collect();
                DenseLayer {
                    weight: Matrix::from_vec(in_dim, out_dim, data).expect("init shape"),
                    bias: vec![0.0; out_dim],
                    activation: act,
                }
            })
            .collect();
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(SanError::InvalidConfig("net needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(SanError::shape(
                    "DenseNet::from_layers",
                    format!("{} inputs", pair[0].out_dim()),
                    format!("{} inputs", pair[1].in_dim()),
                ));
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(SanError::shape(
                    "DenseNet::from_layers",
                    format!("bias of length {}", l.out_dim()),
                    format!("length {}", l.bias.len()),
                ));
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(DenseLayer::out_dim));
        d
    }

    pub fn param_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim() * l.out_dim() + l.out_dim())
            .sum()
    }

    /// Batched forward pass; retains the trace for `backward`.
    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        if input.cols() != self.in_dim() {
            return Err(SanError::shape(
                "DenseNet::forward",
                format!("{} input columns", self.in_dim()),
                format!("{} columns", input.cols()),
            ));
        }
        input.validate_finite("forward input")?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weight);
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let a = Matrix::from_fn(z.rows(), z.cols(), |r, c| layer.activation.apply(z.get(r, c)));
            pre.push(z);
            post.push(a);
            x = post.last().unwrap();
        }
        let output = post.last().unwrap().clone();
        output.validate_finite("forward output")?;
        Ok((
            output,
            ForwardTrace {
                input: input.clone(),
                pre,
                post,
            },
        ))
    }

    /// Forward pass without trace retention.
    pub fn forward_no_trace(&self, input: &Matrix) -> Result<Matrix> {
        self.forward(input).map(|(out, _)| out)
    }

    /// Exact reverse-mode gradients for the batch recorded in `trace`.
    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &Matrix) -> Result<(NetGrads, Matrix)> {
        if trace.pre.len() != self.layers.len() {
            return Err(SanError::State(format!(
                "trace depth {} does not match net depth {}",
                trace.pre.len(),
                self.layers.len()
            )));
        }
        let out = trace.post.last().ok_or_else(|| SanError::State("empty trace".into()))?;
        if output_grad.rows() != out.rows() || output_grad.cols() != out.cols() {
            return Err(SanError::shape(
                "DenseNet::backward",
                format!("{}x{} output grad", out.rows(), out.cols()),
                format!("{}x{}", output_grad.rows(), output_grad.cols()),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if trace.pre[i].cols() != layer.out_dim() {
                return Err(SanError::State(format!(
                    "trace layer {i} has {} columns, net expects {}",
                    trace.pre[i].cols(),
                    layer.out_dim()
                )));
            }
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre[i];
            let post = &trace.post[i];
            // delta <- delta ⊙ act'(pre)
            let delta_z = Matrix::from_fn(delta.rows(), delta.cols(), |r, c| {
                delta.get(r, c) * layer.activation.derivative(pre.get(r, c), post.get(r, c))
            });
            let below = if i == 0 { &trace.input } else { &trace.post[i - 1] };
            let weight_grad = below.matmul_transpose_a(&delta_z);
            let mut bias_grad = vec![0.0; layer.out_dim()];
            for r in 0..delta_z.rows() {
                for (b, v) in bias_grad.iter_mut().zip(delta_z.row(r)) {
                    *b += v;
                }
            }
            delta = delta_z.matmul_transpose_b(&layer.weight);
            grads.push(LayerGrads {
                weight: weight_grad,
                bias: bias_grad,
            });
        }
        grads.reverse();
        let grads = NetGrads { layers: grads };
        grads.validate_finite("backward")?;
        delta.validate_finite("backward input grad")?;
        Ok((grads, delta))
    }

    /// Flatten parameters in canonical order (per layer: weights row-major, then bias).
    pub fn params_to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Overwrite parameters from a flat slice in canonical order.
    pub fn load_params_from_slice(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(SanError::shape(
                "DenseNet::load_params_from_slice",
                format!("{} params", self.param_len()),
                format!("{}", params.len()),
            ));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let w = l.in_dim() * l.out_dim();
            l.weight.data_mut().copy_from_slice(&params[offset..offset + w]);
            offset += w;
            let b = l.out_dim();
            l.bias.copy_from_slice(&params[offset..offset + b]);
            offset += b;
        }
        Ok(())
    }

    /// Visit parameters mutably in canonical order.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut idx = 0;
        for l in &mut self.layers {
            for v in l.weight.data_mut() {
                f(idx, v);
                idx += 1;
            }
            for v in &mut l.bias {
                f(idx, v);
                idx += 1;
            }
        }
    }

    pub fn validate_finite(&self, context: &str) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            l.weight.validate_finite(&format!("{context} layer {i} weight"))?;
            if !l.bias.iter().all(|v| v.is_finite()) {
                return Err(SanError::Numeric(format!(
                    "non-finite value in {context} layer {i} bias"
                )));
            }
        }
        Ok(())
    }
}

/// Sample a `rows x cols` matrix of N(0,1) noise from the given stream.
pub fn sample_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, rng::sample_standard_normal(rng, rows * cols)).expect("noise shape")
}
