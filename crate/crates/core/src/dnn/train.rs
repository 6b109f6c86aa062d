use std::io::Write;

use ndarray::{Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_grad, forward_unchecked, init, NetSpec, Network};
use crate::error::{Error, Result};

/// Frames with labels, materialized on demand.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn input_dim(&self) -> usize;
    /// Writes the input vector of frame `index` into `out` (length `input_dim`).
    fn fill(&self, index: usize, out: &mut [f32]);
    fn label(&self, index: usize) -> usize;
}

/// In-memory frames.
#[derive(Debug, Clone)]
pub struct DenseSet {
    pub inputs: Array2<f32>,
    pub labels: Vec<usize>,
}

impl DenseSet {
    pub fn new(inputs: Array2<f32>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Dimension {
                what: "labels",
                expected: inputs.nrows(),
                found: labels.len(),
            });
        }
        Ok(Self { inputs, labels })
    }
}

impl FrameSource for DenseSet {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    fn fill(&self, index: usize, out: &mut [f32]) {
        for (o, &v) in out.iter_mut().zip(self.inputs.row(index)) {
            *o = v;
        }
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub learning_rate: f32,
    pub decay: f32,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            decay: 0.5,
            patience: 1,
            max_epochs: 20,
            batch_size: 256,
            seed: 1,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.decay > 0.0 && self.decay < 1.0) || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid training schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_ce: f64,
    pub dev_ce: f64,
    /// Learning rate used during the epoch.
    pub lr: f32,
    /// Mean fraction of zero entries in the last hidden layer over the epoch's batches.
    pub sparsity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (0 = initial parameters).
    pub best_epoch: usize,
}

const EVAL_ROWS: usize = 512;

fn gather(source: &dyn FrameSource, idx: &[usize], buf: &mut Array2<f32>, labels: &mut Vec<usize>) -> Result<()> {
    let dim = source.input_dim();
    labels.clear();
    for (r, &i) in idx.iter().enumerate() {
        let row = buf.row_mut(r).into_slice().expect("row-major buffer");
        source.fill(i, &mut row[..dim]);
        labels.push(source.label(i));
    }
    Ok(())
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

fn check_finite(x: &ArrayView2<f32>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training input".into()));
    }
    Ok(())
}

/// Mean cross-entropy of `net` over all frames of `source`.
pub(crate) fn evaluate(net: &Network, source: &dyn FrameSource) -> Result<f64> {
    let n = source.len();
    let mut buf = Array2::zeros((EVAL_ROWS, source.input_dim()));
    let mut labels = Vec::with_capacity(EVAL_ROWS);
    let mut total = 0f64;
    for start in (0..n).step_by(EVAL_ROWS) {
        let end = (start + EVAL_ROWS).min(n);
        let idx: Vec<usize> = (start..end).collect();
        gather(source, &idx, &mut buf, &mut labels)?;
        check_labels(&labels, net.spec.outputs)?;
        let view = buf.slice(ndarray::s![..idx.len(), ..]);
        check_finite(&view)?;
        let post = super::map_chunks(&view, |c| forward_unchecked(net, &c).posteriors);
        for (r, &l) in labels.iter().enumerate() {
            total -= (post[[r, l]] as f64).max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok(total / n as f64)
}

/// Minibatch SGD with dev-driven learning-rate decay; returns the best-dev parameters.
pub fn train(
    spec: &NetSpec,
    schedule: &TrainSchedule,
    train_set: &dyn FrameSource,
    dev_set: &dyn FrameSource,
    mut log: Option<&mut dyn Write>,
) -> Result<(Network, TrainHistory)> {
    schedule.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if dev_set.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    for (what, s) in [("training set", train_set), ("dev set", dev_set)] {
        if s.input_dim() != spec.input_dim {
            return Err(Error::Dimension {
                what: if what == "dev set" { "dev set input" } else { "training set input" },
                expected: spec.input_dim,
                found: s.input_dim(),
            });
        }
    }

    let mut net = init(spec)?;
    let mut history = TrainHistory::default();
    let mut best = net.clone();
    let mut best_dev = f64::INFINITY;
    let mut lr = schedule.learning_rate;
    let mut stale = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let bs = schedule.batch_size;
    let mut buf = Array2::zeros((bs, spec.input_dim));
    let mut labels = Vec::with_capacity(bs);

    for epoch in 1..=schedule.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0f64;
        let mut sparsity_sum = 0f64;
        let mut batches = 0usize;
        for idx in order.chunks(bs) {
            gather(train_set, idx, &mut buf, &mut labels)?;
            check_labels(&labels, spec.outputs)?;
            let view = buf.slice(ndarray::s![..idx.len(), ..]);
            check_finite(&view)?;
            let g = batch_grad(&net, view, &labels);
            if !g.loss.is_finite() || !g.grad.is_finite() {
                return Err(Error::Diverged { epoch, loss: g.loss });
            }
            for (layer, gl) in net.params.layers.iter_mut().zip(&g.grad.layers) {
                Zip::from(&mut layer.weights)
                    .and(&gl.weights)
                    .for_each(|w, &d| *w -= lr * d);
                Zip::from(&mut layer.bias).and(&gl.bias).for_each(|b, &d| *b -= lr * d);
            }
            loss_sum += g.loss * idx.len() as f64;
            sparsity_sum += g.sparsity;
            batches += 1;
        }
        let train_ce = loss_sum / train_set.len() as f64;
        let dev_ce = evaluate(&net, dev_set)?;
        if !dev_ce.is_finite() || !net.params.is_finite() {
            return Err(Error::Diverged { epoch, loss: dev_ce });
        }
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "epoch {epoch} train_ce {train_ce:.6} dev_ce {dev_ce:.6} lr {lr}")
                .map_err(|e| Error::io("training log", e))?;
        }
        log::info!("epoch {epoch} train_ce {train_ce:.6} dev_ce {dev_ce:.6} lr {lr}");
        history.epochs.push(EpochRecord {
            epoch,
            train_ce,
            dev_ce,
            lr,
            sparsity: sparsity_sum / batches.max(1) as f64,
        });
        if dev_ce < best_dev {
            best_dev = dev_ce;
            best = net.clone();
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= schedule.patience {
                lr *= schedule.decay;
                stale = 0;
            }
        }
        if lr < 1e-6 {
            break;
        }
    }
    Ok((best, history))
}
