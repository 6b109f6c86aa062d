use dte_core::dnn::{init, posteriors, Activation, NetSpec};
use dte_core::embedding::{assemble_stage_two, fit_lda, fit_pca, DteConfig};
use dte_core::features::FeatureMatrix;
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = Array2::from_shape_fn((cols, cols), |_| rng.random_range(-1.0f32..1.0));
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0f32..1.0)).dot(&mix)
}

proptest! {
    #[test]
    fn pca_basis_is_orthonormal_and_sorted(rows in 12usize..40, cols in 2usize..7, seed in any::<u64>()) {
        let x = random_matrix(rows, cols, seed);
        let d = cols.min(3);
        let p = fit_pca(x.view(), d).unwrap();
        let gram = p.basis.t().dot(&p.basis);
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[[i, j]] - want).abs() < 1e-5);
            }
        }
        prop_assert!(p.values.windows(2).all(|w| w[0] >= w[1]));

        let y = p.project(x.view()).unwrap();
        for k in 0..d {
            let col = y.index_axis(Axis(1), k);
            let mean = col.iter().map(|&v| v as f64).sum::<f64>() / rows as f64;
            let var = col.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (rows - 1) as f64;
            prop_assert!((var - p.values[k]).abs() <= 1e-4 * p.values[0].max(1e-3));
        }
        for k in 0..d {
            let col = p.basis.column(k);
            let top = col.iter().cloned().fold(0f32, |m, v| if v.abs() > m.abs() { v } else { m });
            prop_assert!(top > 0.0);
        }
    }
}

fn one_nn_accuracy(points: &Array2<f32>, labels: &[usize]) -> f64 {
    let n = points.nrows();
    let correct = (0..n)
        .filter(|&i| {
            let nearest = (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let d = |j: usize| -> f32 {
                        points.row(i).iter().zip(points.row(j)).map(|(x, y)| (x - y) * (x - y)).sum()
                    };
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            labels[nearest] == labels[i]
        })
        .count();
    correct as f64 / n as f64
}

#[test]
fn lda_beats_random_projections_on_a_separable_toy() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dim = 6;
    let centers: Vec<Vec<f32>> = (0..3)
        .map(|c| (0..dim).map(|k| if k == c { 1.5 } else { 0.0 }).collect())
        .collect();
    let n = 90;
    let mut x = Array2::zeros((n, dim));
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % 3;
        labels.push(c);
        for k in 0..dim {
            // Large nuisance variance on the dimensions that carry no class information.
            let spread = if k < 3 { 0.4 } else { 3.0 };
            x[[i, k]] = centers[c][k] + rng.random_range(-spread..spread);
        }
    }
    let lda = fit_lda(x.view(), &labels, 2).unwrap();
    let lda_acc = one_nn_accuracy(&lda.project(x.view()).unwrap(), &labels);

    let trials = 50;
    let mut random_acc = 0.0;
    for _ in 0..trials {
        let r = Array2::from_shape_fn((dim, 2), |_| rng.random_range(-1.0f32..1.0));
        random_acc += one_nn_accuracy(&x.dot(&r), &labels);
    }
    random_acc /= trials as f64;
    assert!(lda_acc >= random_acc, "lda {lda_acc} vs random {random_acc}");
    assert!(lda_acc > 0.9);
}

#[test]
fn lda_rejects_a_single_class() {
    let x = random_matrix(10, 3, 1);
    assert!(fit_lda(x.view(), &[0; 10], 1).is_err());
}

#[test]
fn stage_two_vectors_only_see_their_neighbourhood() {
    let cfg = DteConfig {
        left: 2,
        right: 3,
        center: 3,
        context: 2,
        dim: 2,
    };
    let spec = NetSpec {
        input_dim: 39 * 5,
        hidden: vec![6],
        outputs: 4,
        activation: Activation::Relu,
        seed: 4,
    };
    let net = init(&spec).unwrap();
    let frames = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<f32> = (0..frames * 39).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let feats = FeatureMatrix::new("u", frames, 39, data, 10.0, 25.0).unwrap();
    let acts = dte_core::dnn::last_hidden(&net, dte_core::embedding::context_windows(&feats, 2).view()).unwrap();
    let proj = fit_pca(acts.view(), 2).unwrap();

    let t = 20;
    let base = assemble_stage_two(&cfg, &proj, &net, &feats, t).unwrap();
    assert_eq!(base.len(), cfg.input_dim(39));
    let half = cfg.center / 2;
    let lo = t - half - cfg.left - cfg.context;
    let hi = t + half + cfg.right + cfg.context;
    for u in 0..frames {
        let mut g = feats.clone();
        for v in g.row_mut(u) {
            *v += 5.0;
        }
        let v = assemble_stage_two(&cfg, &proj, &net, &g, t).unwrap();
        if u < lo || u > hi {
            assert_eq!(v, base, "frame {u} is outside the window but changed the vector");
        } else if u + half >= t && u <= t + half {
            assert_ne!(v, base, "center frame {u} did not change the vector");
        }
    }

    let stage_two = NetSpec {
        input_dim: cfg.input_dim(39),
        hidden: vec![5],
        outputs: 3,
        activation: Activation::Relu,
        seed: 9,
    };
    let net2 = init(&stage_two).unwrap();
    let mut all = Array2::zeros((frames, cfg.input_dim(39)));
    for t in 0..frames {
        let v = assemble_stage_two(&cfg, &proj, &net, &feats, t).unwrap();
        all.row_mut(t).assign(&ndarray::ArrayView1::from(&v));
    }
    assert_eq!(posteriors(&net2, all.view()).unwrap().nrows(), frames);
}
