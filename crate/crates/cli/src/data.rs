//! Loading stage artifacts and presenting them as network inputs.

use std::collections::BTreeMap;

use dte_core::corpus::{expand_transcript, load_manifest, CorpusManifest, PhoneId, Split};
use dte_core::dnn::FrameSource;
use dte_core::embedding::{fill_stage_two, DteConfig, ProjectionKind};
use dte_core::features::{fill_window, FeatureMatrix};
use dte_core::hmm::{AcousticModel, Alignment};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{require, Layout};

pub fn manifest(layout: &Layout, split: Split) -> CliResult<CorpusManifest> {
    let path = layout.manifest(split);
    require(&path, "synth")?;
    Ok(load_manifest(&path)?)
}

/// Phone sequences (with silence) of every utterance.
pub fn phone_sequences(m: &CorpusManifest, cfg: &ExperimentConfig) -> CliResult<Vec<Vec<PhoneId>>> {
    m.records
        .iter()
        .map(|r| {
            expand_transcript(&r.transcript, &m.lexicon, &m.phone_set, cfg.inter_word_silence).map_err(|e| match e {
                dte_core::Error::UnknownWord { word, .. } => dte_core::Error::UnknownWord {
                    word,
                    utterance: r.id.clone(),
                },
                other => other,
            })
        })
        .collect::<Result<_, _>>()
        .map_err(CliError::from)
}

/// Reference phones without silence, keyed by utterance id.
pub fn references(m: &CorpusManifest, cfg: &ExperimentConfig) -> CliResult<BTreeMap<String, Vec<PhoneId>>> {
    let sil = m.phone_set.silence();
    Ok(m.records
        .iter()
        .zip(phone_sequences(m, cfg)?)
        .map(|(r, seq)| (r.id.clone(), seq.into_iter().filter(|&p| p != sil).collect()))
        .collect())
}

pub fn features(layout: &Layout, m: &CorpusManifest) -> CliResult<Vec<FeatureMatrix>> {
    m.records
        .par_iter()
        .map(|r| {
            let path = layout.features(m.split, &r.id);
            require(&path, "features")?;
            let mut f = FeatureMatrix::load(&path)?;
            f.utterance_id = r.id.clone();
            Ok(f)
        })
        .collect()
}

pub fn alignments(layout: &Layout, m: &CorpusManifest, feats: &[FeatureMatrix]) -> CliResult<Vec<Alignment>> {
    m.records
        .iter()
        .zip(feats)
        .map(|(r, f)| {
            let path = layout.alignment(m.split, &r.id);
            require(&path, "align")?;
            let mut a = Alignment::load(&path)?;
            a.utterance_id = r.id.clone();
            if a.len() != f.num_frames() {
                return Err(CliError::Config(format!(
                    "{}: {} frames aligned but features have {}",
                    path.display(),
                    a.len(),
                    f.num_frames()
                )));
            }
            Ok(a)
        })
        .collect()
}

pub fn dtes(layout: &Layout, kind: ProjectionKind, m: &CorpusManifest, system: &str) -> CliResult<Vec<FeatureMatrix>> {
    m.records
        .par_iter()
        .map(|r| {
            let path = layout.dte(kind, m.split, &r.id);
            require(&path, &format!("assemble --system {system}"))?;
            Ok(FeatureMatrix::load(&path)?)
        })
        .collect()
}

pub fn tri_model(layout: &Layout) -> CliResult<AcousticModel> {
    let path = layout.tri_model();
    require(&path, "train-gmm")?;
    Ok(AcousticModel::load(&path)?)
}

fn offsets(feats: &[FeatureMatrix]) -> Vec<usize> {
    let mut o = Vec::with_capacity(feats.len() + 1);
    o.push(0);
    for f in feats {
        o.push(o.last().unwrap() + f.num_frames());
    }
    o
}

fn locate(offsets: &[usize], index: usize) -> (usize, usize) {
    let u = offsets.partition_point(|&o| o <= index) - 1;
    (u, index - offsets[u])
}

fn labels_of(aligns: &[Alignment]) -> Vec<usize> {
    aligns.iter().flat_map(|a| a.tied.iter().copied()).collect()
}

/// Context windows of raw features.
pub struct WindowSource<'a> {
    feats: &'a [FeatureMatrix],
    labels: Vec<usize>,
    offsets: Vec<usize>,
    radius: usize,
    dim: usize,
}

impl<'a> WindowSource<'a> {
    pub fn new(feats: &'a [FeatureMatrix], aligns: &[Alignment], radius: usize) -> Self {
        let dim = feats.first().map_or(0, |f| f.dim() * (2 * radius + 1));
        Self {
            feats,
            labels: labels_of(aligns),
            offsets: offsets(feats),
            radius,
            dim,
        }
    }
}

impl FrameSource for WindowSource<'_> {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn fill(&self, index: usize, out: &mut [f32]) {
        let (u, t) = locate(&self.offsets, index);
        fill_window(&self.feats[u], t, self.radius, out);
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }
}

/// Stage-two vectors assembled from stored embeddings and raw features.
pub struct StageTwoSource<'a> {
    feats: &'a [FeatureMatrix],
    dtes: Vec<ArrayView2<'a, f32>>,
    cfg: DteConfig,
    labels: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
}

impl<'a> StageTwoSource<'a> {
    pub fn new(feats: &'a [FeatureMatrix], dtes: &'a [FeatureMatrix], aligns: &[Alignment], cfg: DteConfig) -> CliResult<Self> {
        let views = feats
            .iter()
            .zip(dtes)
            .map(|(f, d)| dte_view(f, d, &cfg))
            .collect::<CliResult<Vec<_>>>()?;
        let dim = feats.first().map_or(0, |f| cfg.input_dim(f.dim()));
        Ok(Self {
            feats,
            dtes: views,
            cfg,
            labels: labels_of(aligns),
            offsets: offsets(feats),
            dim,
        })
    }
}

impl FrameSource for StageTwoSource<'_> {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn fill(&self, index: usize, out: &mut [f32]) {
        let (u, t) = locate(&self.offsets, index);
        fill_stage_two(&self.cfg, self.dtes[u], &self.feats[u], t, out);
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }
}

/// Embedding matrix of an utterance, checked against its features.
pub fn dte_view<'a>(f: &FeatureMatrix, d: &'a FeatureMatrix, cfg: &DteConfig) -> CliResult<ArrayView2<'a, f32>> {
    if d.num_frames() != f.num_frames() || d.dim() != cfg.dim {
        return Err(CliError::Config(format!(
            "embeddings of `{}` are {}x{}, expected {}x{} (re-run assemble)",
            f.utterance_id,
            d.num_frames(),
            d.dim(),
            f.num_frames(),
            cfg.dim
        )));
    }
    Ok(ArrayView2::from_shape((d.num_frames(), d.dim()), d.as_slice()).expect("shape matches"))
}

/// Stage-two inputs of every frame of one utterance.
pub fn stage_two_inputs(cfg: &DteConfig, f: &FeatureMatrix, d: &FeatureMatrix) -> CliResult<Array2<f32>> {
    let view = dte_view(f, d, cfg)?;
    let mut out = Array2::zeros((f.num_frames(), cfg.input_dim(f.dim())));
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        fill_stage_two(cfg, view, f, t, row.as_slice_mut().expect("row-major"));
    }
    Ok(out)
}
