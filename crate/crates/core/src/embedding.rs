//! Deep triphone embeddings: last-hidden activations of a stage-one network
//! reduced by PCA or LDA, and assembly of stage-two input vectors.
//!
//! A stage-two vector for frame `t` with `h = C / 2` is
//! `[DTE(t-h-L) .. DTE(t-h-1), x(t-h) .. x(t+h), DTE(t+h+1) .. DTE(t+h+R)]`,
//! with out-of-range positions replicated from the utterance edges.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::binio::{self, BinReader, BinWriter};
use crate::dnn::{last_hidden, Network};
use crate::error::{Error, Result};
use crate::features::{fill_window, FeatureMatrix};
use crate::kv::KvConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    Pca,
    Lda,
}

impl ProjectionKind {
    pub fn name(self) -> &'static str {
        match self {
            ProjectionKind::Pca => "pca",
            ProjectionKind::Lda => "lda",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub kind: ProjectionKind,
    pub mean: Vec<f32>,
    /// `input_dim x output_dim`, one component per column.
    pub basis: Array2<f32>,
    /// Eigenvalue (PCA) or discriminant ratio (LDA) of every component.
    pub values: Vec<f64>,
}

impl Projection {
    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `basis^T (z - mean)` for every row of `z`.
    pub fn project(&self, z: ArrayView2<f32>) -> Result<Array2<f32>> {
        if z.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                what: "projection input",
                expected: self.input_dim(),
                found: z.ncols(),
            });
        }
        let mean = ndarray::ArrayView1::from(&self.mean[..]);
        let centered = &z - &mean;
        Ok(centered.dot(&self.basis))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, path);
        w.header(b"DTEP", PROJECTION_VERSION)?;
        w.u8(match self.kind {
            ProjectionKind::Pca => 0,
            ProjectionKind::Lda => 1,
        })?;
        w.u32(self.input_dim() as u32)?;
        w.u32(self.output_dim() as u32)?;
        w.f32s(&self.mean)?;
        for &v in self.basis.iter() {
            w.f32(v)?;
        }
        for &v in &self.values {
            w.f32(v as f32)?;
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, path);
        r.header(PROJECTION_MAGIC, PROJECTION_VERSION)?;
        let kind = match r.u8()? {
            0 => ProjectionKind::Pca,
            1 => ProjectionKind::Lda,
            other => {
                return Err(Error::Invalid(format!(
                    "{}: unknown projection kind {other}",
                    path.display()
                )))
            }
        };
        let n = r.count(1 << 20, "projection input")?;
        let d = r.count(1 << 20, "projection output")?;
        let mean = r.f32s(n)?;
        let basis = Array2::from_shape_vec((n, d), r.f32s(n * d)?).expect("shape matches length");
        let values = r.f32s(d)?.into_iter().map(f64::from).collect();
        r.expect_eof()?;
        Ok(Self {
            kind,
            mean,
            basis,
            values,
        })
    }
}

const PROJECTION_MAGIC: &str = "DTEP";
const PROJECTION_VERSION: u32 = 1;

fn check_samples(acts: &ArrayView2<f32>, d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::Config("embedding dimension must be >= 1".into()));
    }
    if d > acts.ncols() {
        return Err(Error::Rank {
            requested: d,
            achievable: acts.ncols(),
        });
    }
    if acts.nrows() <= d {
        return Err(Error::Rank {
            requested: d,
            achievable: acts.nrows().saturating_sub(1),
        });
    }
    if acts.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("activations".into()));
    }
    Ok(())
}

fn column_mean(acts: &ArrayView2<f32>) -> Vec<f64> {
    let mut mean = vec![0f64; acts.ncols()];
    for row in acts.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    let n = acts.nrows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn centered(acts: &ArrayView2<f32>, mean: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(acts.nrows(), acts.ncols(), |r, c| acts[[r, c]] as f64 - mean[c])
}

/// Eigenpairs sorted by decreasing eigenvalue, ties by index.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Flips each column so its largest-magnitude entry is positive.
fn fix_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

fn to_projection(kind: ProjectionKind, mean: &[f64], basis: &DMatrix<f64>, values: Vec<f64>) -> Projection {
    Projection {
        kind,
        mean: mean.iter().map(|&m| m as f32).collect(),
        basis: Array2::from_shape_fn((basis.nrows(), basis.ncols()), |(r, c)| basis[(r, c)] as f32),
        values,
    }
}

/// Top-`d` principal components of the sample covariance (divisor `N - 1`).
pub fn fit_pca(acts: ArrayView2<f32>, d: usize) -> Result<Projection> {
    check_samples(&acts, d)?;
    let mean = column_mean(&acts);
    let x = centered(&acts, &mean);
    let cov = (x.transpose() * &x) / (acts.nrows() - 1) as f64;
    let (values, vectors) = sorted_eigen(cov);
    let tol = values[0].abs().max(f64::MIN_POSITIVE) * 1e-10 * acts.ncols() as f64;
    let rank = values.iter().filter(|&&v| v > tol).count();
    if rank < d {
        return Err(Error::Rank {
            requested: d,
            achievable: rank,
        });
    }
    let mut basis = vectors.columns(0, d).into_owned();
    fix_signs(&mut basis);
    Ok(to_projection(ProjectionKind::Pca, &mean, &basis, values[..d].to_vec()))
}

/// Top-`d` eigenvectors of `S_w^-1 S_b` with a ridge of `1e-4 * tr(S_w) / N` on `S_w`.
///
/// Classes with fewer than two samples are left out of the fit. Columns are
/// scaled to unit within-class variance.
pub fn fit_lda(acts: ArrayView2<f32>, labels: &[usize], d: usize) -> Result<Projection> {
    if labels.len() != acts.nrows() {
        return Err(Error::Dimension {
            what: "LDA labels",
            expected: acts.nrows(),
            found: labels.len(),
        });
    }
    check_samples(&acts, d)?;
    let n_dim = acts.ncols();
    let num_labels = labels.iter().max().map_or(0, |&m| m + 1);
    let mut counts = vec![0usize; num_labels];
    for &l in labels {
        counts[l] += 1;
    }
    let classes: Vec<usize> = (0..num_labels).filter(|&c| counts[c] >= 2).collect();
    if classes.len() < 2 {
        return Err(Error::Invalid(format!(
            "LDA needs at least two classes with two samples each, found {}",
            classes.len()
        )));
    }
    let dropped = counts.iter().filter(|&&c| c == 1).count();
    if dropped > 0 {
        log::warn!("LDA: ignoring {dropped} classes with a single sample");
    }
    if d > classes.len() - 1 {
        return Err(Error::Rank {
            requested: d,
            achievable: classes.len() - 1,
        });
    }

    let mut class_sum = vec![vec![0f64; n_dim]; num_labels];
    let mut used = 0usize;
    let mut total = vec![0f64; n_dim];
    for (row, &l) in acts.rows().into_iter().zip(labels) {
        if counts[l] < 2 {
            continue;
        }
        used += 1;
        for ((s, t), &v) in class_sum[l].iter_mut().zip(total.iter_mut()).zip(row) {
            *s += v as f64;
            *t += v as f64;
        }
    }
    let mean: Vec<f64> = total.iter().map(|t| t / used as f64).collect();
    let class_mean: Vec<Vec<f64>> = class_sum
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| v / n.max(1) as f64).collect())
        .collect();

    let kept: Vec<usize> = (0..acts.nrows()).filter(|&r| counts[labels[r]] >= 2).collect();
    let within = DMatrix::from_fn(kept.len(), n_dim, |i, c| {
        let r = kept[i];
        acts[[r, c]] as f64 - class_mean[labels[r]][c]
    });
    let mut s_w = within.transpose() * &within;
    let between = DMatrix::from_fn(classes.len(), n_dim, |i, c| {
        let k = classes[i];
        (counts[k] as f64).sqrt() * (class_mean[k][c] - mean[c])
    });
    let s_b = between.transpose() * &between;

    let lambda = 1e-4 * s_w.trace() / n_dim as f64;
    for i in 0..n_dim {
        s_w[(i, i)] += lambda;
    }
    let chol = s_w
        .cholesky()
        .ok_or_else(|| Error::Singular("within-class scatter".into()))?;
    let l = chol.l();
    // M = L^-1 S_b L^-T
    let left = l
        .solve_lower_triangular(&s_b)
        .ok_or_else(|| Error::Singular("within-class scatter".into()))?;
    let m = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Singular("within-class scatter".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    let (values, vectors) = sorted_eigen(m);
    let top = vectors.columns(0, d).into_owned();
    let mut basis = l
        .transpose()
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Singular("within-class scatter".into()))?;
    // Unit within-class variance per component.
    let per_sample = (kept.len() as f64 - classes.len() as f64).max(1.0);
    basis *= per_sample.sqrt();
    fix_signs(&mut basis);
    Ok(to_projection(ProjectionKind::Lda, &mean, &basis, values[..d].to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DteConfig {
    /// DTE frames left of the center block.
    pub left: usize,
    /// DTE frames right of the center block.
    pub right: usize,
    /// Raw feature frames in the center block (odd).
    pub center: usize,
    /// Stage-one context radius.
    pub context: usize,
    /// Embedding dimension.
    pub dim: usize,
}

impl Default for DteConfig {
    fn default() -> Self {
        Self {
            left: 15,
            right: 15,
            center: 21,
            context: 10,
            dim: 300,
        }
    }
}

impl DteConfig {
    /// Reads `left`, `right`, `center`, `context` and `dim` from a `dte.` section.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            left: kv.get_or("left", d.left)?,
            right: kv.get_or("right", d.right)?,
            center: kv.get_or("center", d.center)?,
            context: kv.get_or("context", d.context)?,
            dim: kv.get_or("dim", d.dim)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.left == 0 && self.right == 0 {
            return Err(Error::Config("dte.left and dte.right cannot both be 0".into()));
        }
        if self.center.is_multiple_of(2) {
            return Err(Error::Config(format!("dte.center must be odd, got {}", self.center)));
        }
        if self.dim == 0 {
            return Err(Error::Config("dte.dim must be >= 1".into()));
        }
        Ok(())
    }

    /// `(L + R) * d + C * feature_dim`.
    pub fn input_dim(&self, feature_dim: usize) -> usize {
        (self.left + self.right) * self.dim + self.center * feature_dim
    }
}

fn check_stage_one(proj: &Projection, net: &Network, features: &FeatureMatrix, context: usize) -> Result<()> {
    let n_g = *net.spec.hidden.last().expect("hidden layer");
    if proj.input_dim() != n_g {
        return Err(Error::Dimension {
            what: "projection input vs stage-one last hidden layer",
            expected: n_g,
            found: proj.input_dim(),
        });
    }
    let window = features.dim() * (2 * context + 1);
    if window != net.spec.input_dim {
        return Err(Error::Dimension {
            what: "stage-one input window",
            expected: net.spec.input_dim,
            found: window,
        });
    }
    Ok(())
}

/// Stage-one input windows of all frames.
pub fn context_windows(features: &FeatureMatrix, radius: usize) -> Array2<f32> {
    let width = features.dim() * (2 * radius + 1);
    let mut out = Array2::zeros((features.num_frames(), width));
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        fill_window(features, t, radius, row.as_slice_mut().expect("row-major"));
    }
    out
}

/// DTE of frame `t`.
pub fn embed(proj: &Projection, net: &Network, features: &FeatureMatrix, t: usize, context: usize) -> Result<Vec<f32>> {
    check_stage_one(proj, net, features, context)?;
    if t >= features.num_frames() {
        return Err(Error::Invalid(format!("frame {t} out of range")));
    }
    let mut window = Array2::zeros((1, net.spec.input_dim));
    fill_window(features, t, context, window.as_slice_mut().expect("row-major"));
    let z = last_hidden(net, window.view())?;
    Ok(proj.project(z.view())?.into_raw_vec_and_offset().0)
}

/// DTEs of every frame, `T x d`.
pub fn utterance_dtes(proj: &Projection, net: &Network, features: &FeatureMatrix, context: usize) -> Result<Array2<f32>> {
    check_stage_one(proj, net, features, context)?;
    let windows = context_windows(features, context);
    let z = last_hidden(net, windows.view())?;
    proj.project(z.view())
}

/// Writes the stage-two vector of frame `t` from precomputed DTEs.
pub fn fill_stage_two(cfg: &DteConfig, dtes: ArrayView2<f32>, features: &FeatureMatrix, t: usize, out: &mut [f32]) {
    let d = cfg.dim;
    let f = features.dim();
    let last = features.num_frames() as isize - 1;
    let half = (cfg.center / 2) as isize;
    let t = t as isize;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    let mut pos = 0;
    for k in 0..cfg.left as isize {
        let src = clamp(t - half - cfg.left as isize + k);
        for (o, &v) in out[pos..pos + d].iter_mut().zip(dtes.row(src)) {
            *o = v;
        }
        pos += d;
    }
    for k in -half..=half {
        out[pos..pos + f].copy_from_slice(features.row(clamp(t + k)));
        pos += f;
    }
    for k in 1..=cfg.right as isize {
        let src = clamp(t + half + k);
        for (o, &v) in out[pos..pos + d].iter_mut().zip(dtes.row(src)) {
            *o = v;
        }
        pos += d;
    }
    debug_assert_eq!(pos, out.len());
}

/// Stage-two input vector of frame `t`.
pub fn assemble_stage_two(
    cfg: &DteConfig,
    proj: &Projection,
    net: &Network,
    features: &FeatureMatrix,
    t: usize,
) -> Result<Vec<f32>> {
    cfg.validate()?;
    if proj.output_dim() != cfg.dim {
        return Err(Error::Dimension {
            what: "projection output vs dte.dim",
            expected: cfg.dim,
            found: proj.output_dim(),
        });
    }
    if t >= features.num_frames() {
        return Err(Error::Invalid(format!("frame {t} out of range")));
    }
    let dtes = utterance_dtes(proj, net, features, cfg.context)?;
    let mut out = vec![0f32; cfg.input_dim(features.dim())];
    fill_stage_two(cfg, dtes.view(), features, t, &mut out);
    Ok(out)
}

/// Writes `(label, activation)` rows as a feature file whose first column is the label.
pub fn dump_activations(path: &Path, labels: &[usize], acts: ArrayView2<f32>) -> Result<()> {
    if labels.len() != acts.nrows() {
        return Err(Error::Dimension {
            what: "activation labels",
            expected: acts.nrows(),
            found: labels.len(),
        });
    }
    let dim = acts.ncols() + 1;
    let mut data = Vec::with_capacity(labels.len() * dim);
    for (row, &l) in acts.rows().into_iter().zip(labels) {
        data.push(l as f32);
        data.extend(row.iter().copied());
    }
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("activations");
    FeatureMatrix::new(id, labels.len(), dim, data, 0.0, 0.0)?.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnn::{init, Activation, NetSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pca_on_a_line() {
        let dir = [1.0f32, 2.0, -2.0];
        let norm = 3.0f32;
        let acts = Array2::from_shape_fn((20, 3), |(r, c)| (r as f32 - 4.0) * dir[c] + 0.5 * c as f32);
        let p = fit_pca(acts.view(), 1).unwrap();
        let cos: f32 = (0..3).map(|c| p.basis[[c, 0]] * dir[c] / norm).sum();
        assert!(cos.abs() > 1.0 - 1e-6);
        // Variance of r in 0..20 (divisor N-1) times |dir|^2.
        let var_r = 35.0f64;
        assert!((p.values[0] - var_r * 9.0).abs() < 1e-6 * var_r * 9.0);
        assert!(fit_pca(acts.view(), 2).is_err());
    }

    #[test]
    fn complete_basis_reconstructs() {
        let acts = random(40, 5, 3);
        let p = fit_pca(acts.view(), 5).unwrap();
        let y = p.project(acts.view()).unwrap();
        let back = y.dot(&p.basis.t());
        for r in 0..40 {
            for c in 0..5 {
                let x = back[[r, c]] + p.mean[c];
                assert!((x - acts[[r, c]]).abs() <= 1e-4 * acts[[r, c]].abs().max(1.0));
            }
        }
        let gram = p.basis.t().dot(&p.basis);
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-5);
            }
        }
        assert!(p.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn pca_is_deterministic_and_round_trips() {
        let acts = random(30, 6, 9);
        let a = fit_pca(acts.view(), 3).unwrap();
        let b = fit_pca(acts.view(), 3).unwrap();
        assert_eq!(a, b);
        for c in 0..3 {
            let col = a.basis.column(c);
            let big = col.iter().copied().fold(0f32, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.proj");
        a.save(&path).unwrap();
        let back = Projection::load(&path).unwrap();
        assert_eq!(back.basis, a.basis);
        assert_eq!(back.mean, a.mean);
        assert_eq!(back.kind, ProjectionKind::Pca);
    }

    #[test]
    fn lda_two_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = [[0.0f32, 0.0, 0.0, 0.0, 0.0], [3.0, -2.0, 1.0, 0.0, 4.0]];
        let mut acts = Array2::zeros((200, 5));
        let mut labels = Vec::new();
        for r in 0..200 {
            let k = r % 2;
            for c in 0..5 {
                let n: f32 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                acts[[r, c]] = mu[k][c] + 0.3 * n;
            }
            labels.push(k);
        }
        let p = fit_lda(acts.view(), &labels, 1).unwrap();
        let diff: Vec<f32> = (0..5).map(|c| mu[1][c] - mu[0][c]).collect();
        let dn = diff.iter().map(|v| v * v).sum::<f32>().sqrt();
        let bn = p.basis.column(0).iter().map(|v| v * v).sum::<f32>().sqrt();
        let cos: f32 = (0..5).map(|c| diff[c] * p.basis[[c, 0]]).sum::<f32>() / (dn * bn);
        assert!(cos.abs() > 0.99, "cosine {cos}");
        assert!(fit_lda(acts.view(), &labels, 2).is_err());
        assert!(fit_lda(acts.view(), &vec![0; 200], 1).is_err());
    }

    #[test]
    fn stage_two_length_and_edges() {
        let cfg = DteConfig {
            left: 1,
            right: 0,
            center: 1,
            context: 0,
            dim: 2,
        };
        assert_eq!(cfg.input_dim(39), 41);
        assert_eq!(DteConfig::default().input_dim(39), 9819);
        assert!(DteConfig { left: 0, right: 0, ..cfg }.validate().is_err());

        let f = FeatureMatrix::new("u", 6, 2, (0..12).map(|v| v as f32).collect(), 10.0, 25.0).unwrap();
        let dtes = Array2::from_shape_fn((6, 2), |(t, c)| (100 * t + c) as f32);
        let cfg = DteConfig {
            left: 2,
            right: 2,
            center: 3,
            context: 0,
            dim: 2,
        };
        let mut out = vec![0f32; cfg.input_dim(2)];
        fill_stage_two(&cfg, dtes.view(), &f, 0, &mut out);
        assert_eq!(&out[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(&out[4..10], &[0.0, 1.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(&out[10..], &[200.0, 201.0, 300.0, 301.0]);
        fill_stage_two(&cfg, dtes.view(), &f, 5, &mut out);
        assert_eq!(&out[..4], &[200.0, 201.0, 300.0, 301.0]);
        assert_eq!(&out[10..], &[500.0, 501.0, 500.0, 501.0]);
    }

    #[test]
    fn embed_is_local_and_pure() {
        let net = init(&NetSpec {
            input_dim: 3 * 3,
            hidden: vec![6],
            outputs: 4,
            activation: Activation::Relu,
            seed: 2,
        })
        .unwrap();
        let acts = random(40, 6, 1).mapv(f32::abs);
        let proj = fit_pca(acts.view(), 2).unwrap();
        let data: Vec<f32> = (0..30).map(|v| (v as f32 * 0.37).sin()).collect();
        let f = FeatureMatrix::new("u", 10, 3, data, 10.0, 25.0).unwrap();
        let a = embed(&proj, &net, &f, 5, 1).unwrap();
        let mut g = f.clone();
        g.row_mut(0).copy_from_slice(&[9.0, 9.0, 9.0]);
        g.row_mut(9).copy_from_slice(&[9.0, 9.0, 9.0]);
        assert_eq!(a, embed(&proj, &net, &g, 5, 1).unwrap());
        let all = utterance_dtes(&proj, &net, &f, 1).unwrap();
        for (x, y) in all.row(5).iter().zip(&a) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
