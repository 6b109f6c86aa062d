//! Per-dimension input standardization that can be folded into the first layer.

use super::{FrameSource, Network};
use crate::error::{Error, Result};

/// `x -> (x - mean) * scale`, fitted on a training source.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl InputScaling {
    /// Mean and inverse standard deviation of every input dimension. Constant
    /// dimensions keep scale 1.
    pub fn fit(source: &dyn FrameSource) -> Result<Self> {
        let n = source.len();
        let dim = source.input_dim();
        if n == 0 {
            return Err(Error::Empty("input scaling needs at least one frame"));
        }
        let mut sum = vec![0f64; dim];
        let mut sq = vec![0f64; dim];
        let mut row = vec![0f32; dim];
        for i in 0..n {
            source.fill(i, &mut row);
            for ((s, q), &x) in sum.iter_mut().zip(sq.iter_mut()).zip(&row) {
                let x = x as f64;
                *s += x;
                *q += x * x;
            }
        }
        let mut mean = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        for (s, q) in sum.into_iter().zip(sq) {
            let m = s / n as f64;
            let var = (q / n as f64 - m * m).max(0.0);
            if !m.is_finite() || !var.is_finite() {
                return Err(Error::NonFinite("input statistics".into()));
            }
            mean.push(m as f32);
            scale.push(if var > 1e-12 { (1.0 / var.sqrt()) as f32 } else { 1.0 });
        }
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &mut [f32]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *x = (*x - m) * s;
        }
    }

    /// Rewrites the first layer so that `net` accepts unscaled inputs.
    pub fn fold_into(&self, net: &mut Network) -> Result<()> {
        let layer = &mut net.params.layers[0];
        let (outs, ins) = layer.weights.dim();
        if ins != self.dim() {
            return Err(Error::Dimension {
                what: "input scaling",
                expected: ins,
                found: self.dim(),
            });
        }
        for o in 0..outs {
            let mut shift = 0f64;
            for i in 0..ins {
                let w = layer.weights[[o, i]] as f64 * self.scale[i] as f64;
                shift += w * self.mean[i] as f64;
                layer.weights[[o, i]] = w as f32;
            }
            layer.bias[o] = (layer.bias[o] as f64 - shift) as f32;
        }
        Ok(())
    }
}

/// A source whose inputs are standardized on the fly.
pub struct ScaledSource<'a> {
    pub inner: &'a dyn FrameSource,
    pub scaling: &'a InputScaling,
}

impl FrameSource for ScaledSource<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn fill(&self, index: usize, out: &mut [f32]) {
        self.inner.fill(index, out);
        self.scaling.apply(out);
    }

    fn label(&self, index: usize) -> usize {
        self.inner.label(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnn::{init, posteriors, Activation, DenseSet, NetSpec};
    use ndarray::Array2;

    #[test]
    fn folded_net_matches_scaled_inputs() {
        let inputs = Array2::from_shape_fn((20, 3), |(r, c)| (r * 7 + c * 3) as f32 % 11.0 * (c + 1) as f32 + 5.0);
        let set = DenseSet::new(inputs.clone(), vec![0; 20]).unwrap();
        let scaling = InputScaling::fit(&set).unwrap();
        let spec = NetSpec {
            input_dim: 3,
            hidden: vec![4],
            outputs: 2,
            activation: Activation::Tanh,
            seed: 3,
        };
        let net = init(&spec).unwrap();
        let mut scaled = inputs.clone();
        for mut row in scaled.rows_mut() {
            scaling.apply(row.as_slice_mut().unwrap());
        }
        let expected = posteriors(&net, scaled.view()).unwrap();
        let mut folded = net.clone();
        scaling.fold_into(&mut folded).unwrap();
        let got = posteriors(&folded, inputs.view()).unwrap();
        for (a, b) in expected.iter().zip(got.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_dimension_keeps_unit_scale() {
        let inputs = Array2::from_shape_fn((4, 2), |(r, c)| if c == 0 { 2.0 } else { r as f32 });
        let set = DenseSet::new(inputs, vec![0; 4]).unwrap();
        let s = InputScaling::fit(&set).unwrap();
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.mean[0], 2.0);
    }
}
