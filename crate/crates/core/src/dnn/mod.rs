//! Feed-forward network with ReLU (or tanh) hidden layers and a softmax
//! output over tied states.
//!
//! Every layer computes `h^i = f(W^i h^{i-1} + b^i)`; the output layer
//! applies softmax with max subtraction. Parameters are f32; losses and
//! cross-chunk gradient sums are accumulated in f64. Batches are processed in
//! fixed chunks of [`CHUNK_ROWS`] rows whose results are combined in order,
//! so results never depend on the number of worker threads.

mod norm;
mod train;

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio::{self, BinReader, BinWriter};
use crate::error::{Error, Result};

pub use norm::{InputScaling, ScaledSource};
pub use train::{train, DenseSet, EpochRecord, FrameSource, TrainHistory, TrainSchedule};

/// Rows per unit of parallel work.
pub const CHUNK_ROWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative from the pre-activation and activation; ReLU'(0) = 0.
    fn derivative(self, pre: f32, act: f32) -> f32 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - act * act,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.outputs == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "network dimensions must be >= 1 with at least one hidden layer: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden.iter().chain(std::iter::once(&self.outputs)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_out x fan_in`.
    pub weights: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// Weights and biases of every layer (also used as the gradient container).
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub layers: Vec<Layer>,
}

impl NetParams {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            layers: spec
                .layer_dims()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetSpec,
    pub params: NetParams,
}

/// Uniform `(-a, a)` weights with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init(spec: &NetSpec) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = NetParams::zeros(spec);
    for layer in &mut params.layers {
        let (fan_out, fan_in) = layer.weights.dim();
        let a = init_bound(fan_in, fan_out);
        layer.weights.mapv_inplace(|_| rng.random_range(-a..a));
    }
    Ok(Network {
        spec: spec.clone(),
        params,
    })
}

pub fn init_bound(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f64).sqrt() as f32
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Pre-activations of every layer; the last entry holds the output logits.
    pub pre: Vec<Array2<f32>>,
    /// Hidden activations `h^1 .. h^G`.
    pub hidden: Vec<Array2<f32>>,
    /// Softmax posteriors, one row per input.
    pub posteriors: Array2<f32>,
}

impl ForwardTrace {
    /// `z^G`, the last hidden layer.
    pub fn last_hidden(&self) -> &Array2<f32> {
        self.hidden.last().expect("at least one hidden layer")
    }

    /// Fraction of exactly-zero entries in `z^G`.
    pub fn last_hidden_sparsity(&self) -> f64 {
        let z = self.last_hidden();
        z.iter().filter(|&&v| v == 0.0).count() as f64 / z.len().max(1) as f64
    }
}

fn check_batch(net: &Network, batch: &ArrayView2<f32>) -> Result<()> {
    if batch.ncols() != net.spec.input_dim {
        return Err(Error::Dimension {
            what: "network input",
            expected: net.spec.input_dim,
            found: batch.ncols(),
        });
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input".into()));
    }
    Ok(())
}

fn affine(input: &ArrayView2<f32>, layer: &Layer) -> Array2<f32> {
    let mut z = input.dot(&layer.weights.t());
    z += &layer.bias;
    z
}

/// Row-wise softmax with max subtraction; sums are taken in f64.
pub fn softmax_rows(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0f64;
        for v in row.iter_mut() {
            let e = ((*v - max) as f64).exp();
            sum += e;
            *v = e as f32;
        }
        for v in row.iter_mut() {
            *v = (*v as f64 / sum) as f32;
        }
    }
    out
}

fn forward_unchecked(net: &Network, batch: &ArrayView2<f32>) -> ForwardTrace {
    let act = net.spec.activation;
    let g = net.spec.hidden.len();
    let mut pre = Vec::with_capacity(g + 1);
    let mut hidden: Vec<Array2<f32>> = Vec::with_capacity(g);
    for (i, layer) in net.params.layers.iter().enumerate() {
        let input = if i == 0 { batch.view() } else { hidden[i - 1].view() };
        let z = affine(&input, layer);
        if i < g {
            hidden.push(z.mapv(|x| act.apply(x)));
        }
        pre.push(z);
    }
    let posteriors = softmax_rows(pre.last().unwrap());
    ForwardTrace {
        pre,
        hidden,
        posteriors,
    }
}

pub fn forward(net: &Network, batch: ArrayView2<f32>) -> Result<ForwardTrace> {
    check_batch(net, &batch)?;
    Ok(forward_unchecked(net, &batch))
}

/// Runs `f` on fixed row chunks in parallel and stacks the results in order.
fn map_chunks(
    batch: &ArrayView2<f32>,
    f: impl Fn(ArrayView2<f32>) -> Array2<f32> + Sync,
) -> Array2<f32> {
    let starts: Vec<usize> = (0..batch.nrows()).step_by(CHUNK_ROWS * 8).collect();
    let parts: Vec<Array2<f32>> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + CHUNK_ROWS * 8).min(batch.nrows());
            f(batch.slice(s![s..e, ..]))
        })
        .collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    if views.is_empty() {
        return Array2::zeros((0, 0));
    }
    ndarray::concatenate(Axis(0), &views).expect("chunks share column count")
}

/// Posterior matrix `B x S`.
pub fn posteriors(net: &Network, batch: ArrayView2<f32>) -> Result<Array2<f32>> {
    check_batch(net, &batch)?;
    if batch.nrows() == 0 {
        return Ok(Array2::zeros((0, net.spec.outputs)));
    }
    Ok(map_chunks(&batch, |c| forward_unchecked(net, &c).posteriors))
}

/// Last hidden layer activations `B x N_G`, computed by the same code as [`forward`].
pub fn last_hidden(net: &Network, batch: ArrayView2<f32>) -> Result<Array2<f32>> {
    check_batch(net, &batch)?;
    if batch.nrows() == 0 {
        return Ok(Array2::zeros((0, *net.spec.hidden.last().unwrap())));
    }
    Ok(map_chunks(&batch, |c| {
        forward_unchecked(net, &c).hidden.pop().expect("hidden layer")
    }))
}

/// Sum (not mean) of losses and gradients over one chunk.
fn chunk_grad(net: &Network, batch: &ArrayView2<f32>, labels: &[usize]) -> (f64, NetParams, f64) {
    let act = net.spec.activation;
    let trace = forward_unchecked(net, batch);
    let mut loss = 0f64;
    let mut delta = trace.posteriors.clone();
    for (r, &lab) in labels.iter().enumerate() {
        loss -= (trace.posteriors[[r, lab]] as f64).max(f64::MIN_POSITIVE).ln();
        delta[[r, lab]] -= 1.0;
    }
    let sparsity = trace.last_hidden_sparsity();
    let n_layers = net.params.layers.len();
    let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
    for i in (0..n_layers).rev() {
        let input = if i == 0 { batch.view() } else { trace.hidden[i - 1].view() };
        let gw = delta.t().dot(&input);
        let gb = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut back = delta.dot(&net.params.layers[i].weights);
            Zip::from(&mut back)
                .and(&trace.pre[i - 1])
                .and(&trace.hidden[i - 1])
                .for_each(|d, &p, &h| *d *= act.derivative(p, h));
            delta = back;
        }
        grads.push(Layer {
            weights: gw,
            bias: gb,
        });
    }
    grads.reverse();
    (loss, NetParams { layers: grads }, sparsity)
}

pub(crate) struct BatchGrad {
    pub loss: f64,
    pub grad: NetParams,
    pub sparsity: f64,
}

pub(crate) fn batch_grad(net: &Network, batch: ArrayView2<f32>, labels: &[usize]) -> BatchGrad {
    let n = batch.nrows();
    let starts: Vec<usize> = (0..n).step_by(CHUNK_ROWS).collect();
    let parts: Vec<(f64, NetParams, f64)> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + CHUNK_ROWS).min(n);
            chunk_grad(net, &batch.slice(s![s..e, ..]), &labels[s..e])
        })
        .collect();

    let mut acc: Vec<(Array2<f64>, Array1<f64>)> = net
        .params
        .layers
        .iter()
        .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
        .collect();
    let mut loss = 0f64;
    let mut sparsity = 0f64;
    for (l, g, sp) in &parts {
        loss += l;
        sparsity += sp;
        for ((aw, ab), layer) in acc.iter_mut().zip(&g.layers) {
            Zip::from(aw).and(&layer.weights).for_each(|a, &v| *a += v as f64);
            Zip::from(ab).and(&layer.bias).for_each(|a, &v| *a += v as f64);
        }
    }
    let scale = 1.0 / n as f64;
    let layers = acc
        .into_iter()
        .map(|(w, b)| Layer {
            weights: w.mapv(|v| (v * scale) as f32),
            bias: b.mapv(|v| (v * scale) as f32),
        })
        .collect();
    BatchGrad {
        loss: loss * scale,
        grad: NetParams { layers },
        sparsity: sparsity / parts.len().max(1) as f64,
    }
}

/// Mean cross-entropy and its gradient.
pub fn loss_and_grad(net: &Network, batch: ArrayView2<f32>, labels: &[usize]) -> Result<(f32, NetParams)> {
    check_batch(net, &batch)?;
    if labels.len() != batch.nrows() {
        return Err(Error::Dimension {
            what: "labels",
            expected: batch.nrows(),
            found: labels.len(),
        });
    }
    if batch.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= net.spec.outputs) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: net.spec.outputs,
        });
    }
    let g = batch_grad(net, batch, labels);
    Ok((g.loss as f32, g.grad))
}

const NET_MAGIC: &str = "DTEN";
const NET_VERSION: u32 = 1;

impl Network {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, path);
        w.header(b"DTEN", NET_VERSION)?;
        w.u32(self.spec.input_dim as u32)?;
        w.u32(self.spec.hidden.len() as u32)?;
        for &h in &self.spec.hidden {
            w.u32(h as u32)?;
        }
        w.u32(self.spec.outputs as u32)?;
        w.u8(match self.spec.activation {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        })?;
        w.u64(self.spec.seed)?;
        for layer in &self.params.layers {
            for &v in layer.weights.iter() {
                w.f32(v)?;
            }
            w.f32s(layer.bias.as_slice().expect("contiguous bias"))?;
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, path);
        r.header(NET_MAGIC, NET_VERSION)?;
        let input_dim = r.count(1 << 24, "input dimension")?;
        let g = r.count(1 << 10, "hidden layer")?;
        let hidden = (0..g)
            .map(|_| r.count(1 << 20, "hidden width"))
            .collect::<Result<Vec<_>>>()?;
        let outputs = r.count(1 << 24, "output")?;
        let activation = match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            other => {
                return Err(Error::Invalid(format!(
                    "{}: unknown activation code {other}",
                    path.display()
                )))
            }
        };
        let seed = r.u64()?;
        let spec = NetSpec {
            input_dim,
            hidden,
            outputs,
            activation,
            seed,
        };
        spec.validate()?;
        let mut layers = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            let weights = Array2::from_shape_vec((fan_out, fan_in), r.f32s(fan_in * fan_out)?)
                .expect("shape matches length");
            let bias = Array1::from_vec(r.f32s(fan_out)?);
            layers.push(Layer { weights, bias });
        }
        r.expect_eof()?;
        let net = Network {
            spec,
            params: NetParams { layers },
        };
        if !net.params.is_finite() {
            return Err(Error::NonFinite(format!("{}", path.display())));
        }
        Ok(net)
    }
}
