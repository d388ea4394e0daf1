//! Weight-shared encoder with BN-neck and identity classifier.
//!
//! ```text
//! x -> [Dense -> act]* -> Dense -> embedding -> BN -> bn_embedding -> Dense -> logits
//! ```
//!
//! Every modality goes through the same parameters. Metric losses consume
//! the pre-BN embedding, the identity loss consumes the logits and
//! retrieval uses the post-BN embedding under running statistics.
//!
//! Running statistics follow the usual convention: exponential moving
//! averages with momentum 0.1, the variance EMA fed with the unbiased
//! batch variance. The normalization itself uses the biased variance.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" | "none" => Ok(Activation::Identity),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Hidden layer widths; empty means a single linear encoder layer.
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![64],
            embedding_dim: 64,
            num_classes,
            activation: Activation::Relu,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 || self.num_classes == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(Error::config("bn momentum must lie in [0,1] and eps be positive"));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.embedding_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }
}

/// Fully connected layer, `y = x W^T + b` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul_t(&self.weight)?;
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter grads into `grad` and returns d/d input.
    fn backward(&self, x: &Matrix, d_out: &Matrix, grad: &mut Dense) -> Result<Matrix> {
        let dw = d_out.transpose().matmul(x)?;
        grad.weight.add_scaled(&dw, 1.0)?;
        for row in d_out.iter_rows() {
            for (g, d) in grad.bias.iter_mut().zip(row) {
                *g += d;
            }
        }
        d_out.matmul(&self.weight)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: Vec<Dense>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    /// `None` until initialized; eval-mode forward refuses to run without it.
    pub running: Option<RunningStats>,
    pub classifier: Dense,
}

/// Gradients for the trainable tensors of [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub encoder: Vec<Dense>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub classifier: Dense,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let c = &params.config;
        Self {
            encoder: c.layer_dims().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect(),
            bn_gamma: vec![0.0; c.embedding_dim],
            bn_beta: vec![0.0; c.embedding_dim],
            classifier: Dense::zeros(c.embedding_dim, c.num_classes),
        }
    }

    /// Trainable tensors in the canonical order shared with [`ModelParams::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.encoder {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out.push(&self.bn_gamma);
        out.push(&self.bn_beta);
        out.push(self.classifier.weight.as_slice());
        out.push(&self.classifier.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.encoder {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        out.push(&mut self.bn_gamma);
        out.push(&mut self.bn_beta);
        out.push(self.classifier.weight.as_mut_slice());
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl ModelParams {
    /// He-normal encoder weights, zero biases, unit BN scale, zero shift,
    /// and a small-normal (std 0.001) classifier.
    pub fn init(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let encoder = config
            .layer_dims()
            .into_iter()
            .map(|(fan_in, out)| {
                let std = (2.0 / fan_in as f64).sqrt();
                let w = (0..fan_in * out).map(|_| std * rng.gaussian()).collect();
                Ok(Dense {
                    weight: Matrix::new(out, fan_in, w)?,
                    bias: vec![0.0; out],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let e = config.embedding_dim;
        let cw = (0..e * config.num_classes).map(|_| 0.001 * rng.gaussian()).collect();
        let classifier = Dense {
            weight: Matrix::new(config.num_classes, e, cw)?,
            bias: vec![0.0; config.num_classes],
        };
        Ok(Self {
            encoder,
            bn_gamma: vec![1.0; e],
            bn_beta: vec![0.0; e],
            running: Some(RunningStats {
                mean: vec![0.0; e],
                var: vec![1.0; e],
            }),
            classifier,
            config,
        })
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.encoder {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out.push(&self.bn_gamma);
        out.push(&self.bn_beta);
        out.push(self.classifier.weight.as_slice());
        out.push(&self.classifier.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.encoder {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        out.push(&mut self.bn_gamma);
        out.push(&mut self.bn_beta);
        out.push(self.classifier.weight.as_mut_slice());
        out.push(&mut self.classifier.bias);
        out
    }

    /// Names matching [`ModelParams::tensors`], used by checkpoints.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.encoder.len() {
            out.push(format!("enc{i}.weight"));
            out.push(format!("enc{i}.bias"));
        }
        out.extend(["bn.gamma", "bn.beta", "cls.weight", "cls.bias"].map(String::from));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Folds a train-mode batch's statistics into the running averages.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) -> Result<()> {
        let TraceBn::Train { mean, var, .. } = &trace.bn else {
            return Err(Error::State("running stats need a train-mode trace".into()));
        };
        let m = self.config.bn_momentum;
        let n = trace.batch_size as f64;
        let running = self.running.get_or_insert_with(|| RunningStats {
            mean: mean.clone(),
            var: var.iter().map(|v| v * n / (n - 1.0)).collect(),
        });
        for (r, b) in running.mean.iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in running.var.iter_mut().zip(var) {
            *r = (1.0 - m) * *r + m * b * n / (n - 1.0);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
enum TraceBn {
    Train {
        mean: Vec<f64>,
        /// Biased batch variance.
        var: Vec<f64>,
        inv_std: Vec<f64>,
        normalized: Matrix,
    },
    Eval {
        inv_std: Vec<f64>,
        normalized: Matrix,
    },
}

/// Cached intermediates of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    batch_size: usize,
    /// Input of each encoder layer.
    layer_inputs: Vec<Matrix>,
    /// Pre-activation output of each encoder layer.
    pre_activations: Vec<Matrix>,
    bn: TraceBn,
    bn_embeddings: Matrix,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        match self.bn {
            TraceBn::Train { .. } => Mode::Train,
            TraceBn::Eval { .. } => Mode::Eval,
        }
    }

    /// Pre-activation output of every encoder layer, first layer first.
    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre_activations
    }

    /// Per-coordinate batch mean and biased variance (train mode only).
    pub fn batch_stats(&self) -> Option<(&[f64], &[f64])> {
        match &self.bn {
            TraceBn::Train { mean, var, .. } => Some((mean, var)),
            TraceBn::Eval { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub embeddings: Matrix,
    pub bn_embeddings: Matrix,
    pub logits: Matrix,
    pub trace: ForwardTrace,
}

pub fn forward(params: &ModelParams, features: &Matrix, mode: Mode) -> Result<ForwardOutput> {
    let cfg = &params.config;
    if features.cols() != cfg.input_dim {
        return Err(Error::dim(format!(
            "model expects {} input features, got {}",
            cfg.input_dim,
            features.cols()
        )));
    }
    let n = features.rows();
    if n == 0 {
        return Err(Error::dim("empty input batch"));
    }
    if mode == Mode::Train && n < 2 {
        return Err(Error::config("train-mode batch norm needs at least two rows"));
    }

    let mut layer_inputs = Vec::with_capacity(params.encoder.len());
    let mut pre_activations = Vec::with_capacity(params.encoder.len());
    let mut h = features.clone();
    let last = params.encoder.len() - 1;
    for (li, layer) in params.encoder.iter().enumerate() {
        let pre = layer.forward(&h)?;
        layer_inputs.push(h);
        h = pre.clone();
        if li != last {
            h.as_mut_slice().iter_mut().for_each(|v| *v = cfg.activation.apply(*v));
        }
        pre_activations.push(pre);
    }
    let embeddings = h;
    let e = cfg.embedding_dim;

    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; e];
            for row in embeddings.iter_rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; e];
            for row in embeddings.iter_rows() {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            (mean, var)
        }
        Mode::Eval => {
            let r = params
                .running
                .as_ref()
                .ok_or_else(|| Error::State("batch-norm running statistics are not initialized".into()))?;
            (r.mean.clone(), r.var.clone())
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.bn_eps).sqrt()).collect();
    let mut normalized = embeddings.clone();
    let mut bn_embeddings = embeddings.clone();
    for i in 0..n {
        let xr = normalized.row_mut(i);
        for (j, x) in xr.iter_mut().enumerate() {
            *x = (*x - mean[j]) * inv_std[j];
        }
        let yr = bn_embeddings.row_mut(i);
        for (j, y) in yr.iter_mut().enumerate() {
            *y = params.bn_gamma[j] * normalized.get(i, j) + params.bn_beta[j];
        }
    }
    let logits = params.classifier.forward(&bn_embeddings)?;
    let bn = match mode {
        Mode::Train => TraceBn::Train {
            mean,
            var,
            inv_std,
            normalized,
        },
        Mode::Eval => TraceBn::Eval { inv_std, normalized },
    };
    Ok(ForwardOutput {
        embeddings,
        bn_embeddings: bn_embeddings.clone(),
        logits,
        trace: ForwardTrace {
            batch_size: n,
            layer_inputs,
            pre_activations,
            bn,
            bn_embeddings,
        },
    })
}

/// Upstream gradients flowing into the three model outputs. Any of them
/// may be omitted.
#[derive(Clone, Copy, Debug, Default)]
pub struct Upstream<'a> {
    pub embeddings: Option<&'a Matrix>,
    pub bn_embeddings: Option<&'a Matrix>,
    pub logits: Option<&'a Matrix>,
}

fn check_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::dim(format!(
            "{name} gradient is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

pub fn backward(trace: &ForwardTrace, params: &ModelParams, upstream: Upstream<'_>) -> Result<ParamGrads> {
    let cfg = &params.config;
    let n = trace.batch_size;
    let e = cfg.embedding_dim;
    if trace.layer_inputs.len() != params.encoder.len() {
        return Err(Error::dim("trace does not match model depth"));
    }
    let mut grads = ParamGrads::zeros_like(params);

    let mut d_bn = match upstream.bn_embeddings {
        Some(g) => {
            check_shape("bn_embeddings", g, n, e)?;
            g.clone()
        }
        None => Matrix::zeros(n, e),
    };
    if let Some(dl) = upstream.logits {
        check_shape("logits", dl, n, cfg.num_classes)?;
        let d = params
            .classifier
            .backward(&trace.bn_embeddings, dl, &mut grads.classifier)?;
        d_bn.add_scaled(&d, 1.0)?;
    }

    let mut d_emb = match upstream.embeddings {
        Some(g) => {
            check_shape("embeddings", g, n, e)?;
            g.clone()
        }
        None => Matrix::zeros(n, e),
    };
    match &trace.bn {
        TraceBn::Train {
            inv_std, normalized, ..
        } => {
            let nf = n as f64;
            for j in 0..e {
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for i in 0..n {
                    let dy = d_bn.get(i, j);
                    grads.bn_gamma[j] += dy * normalized.get(i, j);
                    grads.bn_beta[j] += dy;
                    let dxhat = dy * params.bn_gamma[j];
                    sum_d += dxhat;
                    sum_dx += dxhat * normalized.get(i, j);
                }
                for i in 0..n {
                    let dxhat = d_bn.get(i, j) * params.bn_gamma[j];
                    let dx = inv_std[j] / nf * (nf * dxhat - sum_d - normalized.get(i, j) * sum_dx);
                    d_emb.set(i, j, d_emb.get(i, j) + dx);
                }
            }
        }
        TraceBn::Eval { inv_std, normalized } => {
            for i in 0..n {
                for j in 0..e {
                    let dy = d_bn.get(i, j);
                    grads.bn_gamma[j] += dy * normalized.get(i, j);
                    grads.bn_beta[j] += dy;
                    d_emb.set(i, j, d_emb.get(i, j) + dy * params.bn_gamma[j] * inv_std[j]);
                }
            }
        }
    }

    let mut d = d_emb;
    let last = params.encoder.len() - 1;
    for li in (0..params.encoder.len()).rev() {
        if li != last {
            let pre = &trace.pre_activations[li];
            for (dv, p) in d.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                *dv *= cfg.activation.derivative(*p);
            }
        }
        d = params.encoder[li].backward(&trace.layer_inputs[li], &d, &mut grads.encoder[li])?;
    }
    Ok(grads)
}

/// Post-BN embeddings under running statistics, the retrieval features.
pub fn extract_test_features(params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    if params.running.is_none() {
        return Err(Error::State("batch-norm running statistics are not initialized".into()));
    }
    Ok(forward(params, features, Mode::Eval)?.bn_embeddings)
}
