//! Diagonal-covariance Gaussian mixtures, one per tied state.

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mixture of diagonal Gaussians. Components with zero weight are kept in
/// place but never contribute to the density.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    dim: usize,
    weights: Vec<f64>,
    /// `components x dim`, row-major.
    means: Vec<f64>,
    vars: Vec<f64>,
    // Derived: ln w_m - ½ Σ_d ln(2π σ²_md), and 1/σ².
    log_consts: Vec<f64>,
    inv_vars: Vec<f64>,
}

impl DiagGmm {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        let m = weights.len();
        if m == 0 {
            return Err(Error::Empty("mixture"));
        }
        let dim = means.len() / m;
        if dim == 0 || means.len() != m * dim || vars.len() != m * dim {
            return Err(Error::Invalid(format!(
                "mixture shapes: {} weights, {} means, {} variances",
                m,
                means.len(),
                vars.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite())
            || means.iter().any(|v| !v.is_finite())
            || vars.iter().any(|&v| !(v > 0.0) || !v.is_finite())
        {
            return Err(Error::NonFinite("mixture parameters".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::Invalid(format!("mixture weights sum to {sum}")));
        }
        let mut g = Self {
            dim,
            weights,
            means,
            vars,
            log_consts: vec![],
            inv_vars: vec![],
        };
        g.refresh();
        Ok(g)
    }

    /// Single Gaussian.
    pub fn single(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], mean, var)
    }

    fn refresh(&mut self) {
        let d = self.dim;
        self.inv_vars = self.vars.iter().map(|v| 1.0 / v).collect();
        self.log_consts = (0..self.weights.len())
            .map(|m| {
                let logdet: f64 = self.vars[m * d..(m + 1) * d].iter().map(|v| v.ln()).sum();
                self.weights[m].ln() - 0.5 * (d as f64 * LN_2PI + logdet)
            })
            .collect();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, m: usize) -> &[f64] {
        &self.means[m * self.dim..(m + 1) * self.dim]
    }

    pub fn var(&self, m: usize) -> &[f64] {
        &self.vars[m * self.dim..(m + 1) * self.dim]
    }

    /// Per-component `ln w_m + ln N(x; μ_m, σ²_m)`; zero-weight components give `-inf`.
    fn component_scores(&self, x: &[f32], out: &mut [f64]) {
        let d = self.dim;
        for (m, o) in out.iter_mut().enumerate() {
            let lc = self.log_consts[m];
            if lc == f64::NEG_INFINITY {
                *o = lc;
                continue;
            }
            let mu = &self.means[m * d..(m + 1) * d];
            let iv = &self.inv_vars[m * d..(m + 1) * d];
            let mut q = 0.0;
            for j in 0..d {
                let diff = x[j] as f64 - mu[j];
                q += diff * diff * iv[j];
            }
            *o = lc - 0.5 * q;
        }
    }

    /// Natural-log density, computed with log-sum-exp.
    pub fn log_likelihood(&self, x: &[f32]) -> f64 {
        let mut buf = [0f64; 64];
        let mut heap;
        let scores: &mut [f64] = if self.weights.len() <= buf.len() {
            &mut buf[..self.weights.len()]
        } else {
            heap = vec![0f64; self.weights.len()];
            &mut heap
        };
        self.component_scores(x, scores);
        log_sum_exp(scores)
    }

    /// Splits the heaviest component, moving the two means ±0.2σ apart.
    pub fn split_heaviest(&mut self) {
        let d = self.dim;
        let (heavy, &w) = self
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty mixture");
        let mean: Vec<f64> = self.mean(heavy).to_vec();
        let var: Vec<f64> = self.var(heavy).to_vec();
        for j in 0..d {
            let off = 0.2 * var[j].sqrt();
            self.means[heavy * d + j] = mean[j] + off;
        }
        self.weights[heavy] = w / 2.0;
        self.weights.push(w / 2.0);
        self.means.extend(mean.iter().zip(&var).map(|(m, v)| m - 0.2 * v.sqrt()));
        self.vars.extend_from_slice(&var);
        self.refresh();
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Sufficient statistics for one EM step of a [`DiagGmm`].
pub(crate) struct GmmAccumulator {
    dim: usize,
    occ: Vec<f64>,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    pub frames: usize,
    scratch: Vec<f64>,
}

impl GmmAccumulator {
    pub fn new(gmm: &DiagGmm) -> Self {
        let (m, d) = (gmm.num_components(), gmm.dim);
        Self {
            dim: d,
            occ: vec![0.0; m],
            sum: vec![0.0; m * d],
            sumsq: vec![0.0; m * d],
            frames: 0,
            scratch: vec![0.0; m],
        }
    }

    pub fn add(&mut self, gmm: &DiagGmm, x: &[f32]) {
        gmm.component_scores(x, &mut self.scratch);
        let total = log_sum_exp(&self.scratch);
        let d = self.dim;
        for m in 0..self.occ.len() {
            let g = (self.scratch[m] - total).exp();
            if g == 0.0 || !g.is_finite() {
                continue;
            }
            self.occ[m] += g;
            let sum = &mut self.sum[m * d..(m + 1) * d];
            let sumsq = &mut self.sumsq[m * d..(m + 1) * d];
            for ((s, q), &v) in sum.iter_mut().zip(sumsq.iter_mut()).zip(x) {
                let v = v as f64;
                *s += g * v;
                *q += g * v * v;
            }
        }
        self.frames += 1;
    }

    /// M-step. Variances are floored per dimension; a component that received
    /// no occupancy gets weight 0 and keeps its mean and variance.
    pub fn update(&self, gmm: &DiagGmm, var_floor: &[f64]) -> DiagGmm {
        if self.frames == 0 {
            return gmm.clone();
        }
        let d = self.dim;
        let total: f64 = self.occ.iter().sum();
        let mut weights = Vec::with_capacity(self.occ.len());
        let mut means = gmm.means.clone();
        let mut vars = gmm.vars.clone();
        for (m, &occ) in self.occ.iter().enumerate() {
            if occ <= 0.0 {
                weights.push(0.0);
                continue;
            }
            weights.push(occ / total);
            for j in 0..d {
                let mu = self.sum[m * d + j] / occ;
                let var = self.sumsq[m * d + j] / occ - mu * mu;
                means[m * d + j] = mu;
                vars[m * d + j] = var.max(var_floor[j]);
            }
        }
        let norm: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= norm;
        }
        let mut g = DiagGmm {
            dim: d,
            weights,
            means,
            vars,
            log_consts: vec![],
            inv_vars: vec![],
        };
        g.refresh();
        g
    }
}

/// One mixture per tied state.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmEmission {
    dim: usize,
    states: Vec<DiagGmm>,
}

impl GmmEmission {
    pub fn new(states: Vec<DiagGmm>) -> Result<Self> {
        let dim = states.first().ok_or(Error::Empty("emission model"))?.dim();
        if let Some(g) = states.iter().find(|g| g.dim() != dim) {
            return Err(Error::Dimension {
                what: "mixture",
                expected: dim,
                found: g.dim(),
            });
        }
        Ok(Self { dim, states })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, id: usize) -> &DiagGmm {
        &self.states[id]
    }

    pub(crate) fn states_mut(&mut self) -> &mut Vec<DiagGmm> {
        &mut self.states
    }

    pub fn states(&self) -> &[DiagGmm] {
        &self.states
    }
}

/// `ln Σ_m w_m N(frame; μ_m, diag σ²_m)` for one tied state.
pub fn gmm_log_likelihood(frame: &[f32], tied_state: usize, emission: &GmmEmission) -> Result<f64> {
    if frame.len() != emission.dim() {
        return Err(Error::Dimension {
            what: "frame",
            expected: emission.dim(),
            found: frame.len(),
        });
    }
    if tied_state >= emission.num_states() {
        return Err(Error::LabelOutOfRange {
            label: tied_state,
            classes: emission.num_states(),
        });
    }
    Ok(emission.state(tied_state).log_likelihood(frame))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_component_at_mean() {
        let var = vec![0.5, 2.0, 1.5];
        let g = DiagGmm::single(vec![1.0, -1.0, 0.25], var.clone()).unwrap();
        let em = GmmEmission::new(vec![g]).unwrap();
        let got = gmm_log_likelihood(&[1.0, -1.0, 0.25], 0, &em).unwrap();
        let want: f64 = var
            .iter()
            .map(|v: &f64| -0.5 * (2.0 * std::f64::consts::PI * v).ln())
            .sum();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn duplicated_component_equals_single() {
        let mean = vec![0.3, -0.2];
        let var = vec![1.2, 0.7];
        let one = DiagGmm::single(mean.clone(), var.clone()).unwrap();
        let two = DiagGmm::new(
            vec![0.5, 0.5],
            [mean.clone(), mean].concat(),
            [var.clone(), var].concat(),
        )
        .unwrap();
        for x in [[0.0f32, 0.0], [2.0, -3.0], [10.0, 10.0]] {
            let (a, b) = (one.log_likelihood(&x), two.log_likelihood(&x));
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn far_frames_do_not_underflow() {
        let g = DiagGmm::new(vec![0.3, 0.7], vec![0.0, 5.0], vec![1e-3, 1e-3]).unwrap();
        let v = g.log_likelihood(&[500.0]);
        assert!(v.is_finite() && v < -1e7);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(DiagGmm::new(vec![0.6, 0.6], vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(DiagGmm::single(vec![0.0], vec![0.0]).is_err());
        let em = GmmEmission::new(vec![DiagGmm::single(vec![0.0; 2], vec![1.0; 2]).unwrap()]).unwrap();
        assert!(matches!(
            gmm_log_likelihood(&[0.0; 3], 0, &em),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn split_preserves_weight_and_spreads_means() {
        let mut g = DiagGmm::single(vec![1.0, 2.0], vec![4.0, 9.0]).unwrap();
        g.split_heaviest();
        assert_eq!(g.num_components(), 2);
        assert_eq!(g.weights(), &[0.5, 0.5]);
        assert_eq!(g.mean(0), &[1.4, 2.6]);
        assert_eq!(g.mean(1), &[0.6, 1.4]);
        assert_eq!(g.var(1), &[4.0, 9.0]);
    }

    #[test]
    fn em_step_on_single_gaussian_is_sample_moments() {
        let g = DiagGmm::single(vec![0.0], vec![1.0]).unwrap();
        let mut acc = GmmAccumulator::new(&g);
        for x in [1.0f32, 2.0, 3.0, 6.0] {
            acc.add(&g, &[x]);
        }
        let up = acc.update(&g, &[1e-3]);
        assert!((up.mean(0)[0] - 3.0).abs() < 1e-12);
        assert!((up.var(0)[0] - 3.5).abs() < 1e-12);
        let floored = acc.update(&g, &[10.0]);
        assert_eq!(floored.var(0)[0], 10.0);
    }
}
