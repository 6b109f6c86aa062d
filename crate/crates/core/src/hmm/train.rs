//! Viterbi-EM training.
//!
//! Each iteration aligns every utterance with the current model, then runs
//! one EM step of every tied state's mixture on the frames aligned to it and
//! re-estimates self-loop probabilities as `(self + 1) / (self + forward + 2)`.
//! That transition estimate is the MAP estimate under a Beta(2, 2) prior, so
//! the tracked objective (path log-likelihood plus the log prior of the
//! transitions) cannot decrease between iterations at a fixed mixture size.

use rayon::prelude::*;

use super::align::{viterbi_path, UtteranceHmm};
use super::gmm::GmmAccumulator;
use super::{
    AcousticModel, AlignResult, Alignment, DiagGmm, GmmEmission, HmmTopology, TiedStateMap,
    STATES_PER_PHONE,
};
use crate::corpus::{PhoneId, PhoneSet};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::kv::KvConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmConfig {
    /// EM iterations per mixture stage (and for tied training).
    pub em_iters: usize,
    pub mixtures: usize,
    /// Component count of each stage; empty means doubling up to `mixtures`.
    pub mix_schedule: Vec<usize>,
    pub min_count: u32,
    pub max_states: u32,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub var_floor: f64,
    pub init_self_loop: f64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        Self {
            em_iters: 4,
            mixtures: 11,
            mix_schedule: Vec::new(),
            min_count: 100,
            max_states: u32::MAX,
            var_floor: 1e-4,
            init_self_loop: 0.6,
        }
    }
}

impl HmmConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            em_iters: kv.get_or("em_iters", d.em_iters)?,
            mixtures: kv.get_or("mixtures", d.mixtures)?,
            mix_schedule: kv.get_list("mix_schedule")?.unwrap_or_default(),
            min_count: kv.get_u32_or_inf("min_count", d.min_count)?,
            max_states: kv.get_u32_or_inf("max_states", d.max_states)?,
            var_floor: kv.get_or("var_floor", d.var_floor)?,
            init_self_loop: d.init_self_loop,
        };
        cfg.schedule()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<Vec<usize>> {
        if self.mixtures == 0 {
            return Err(Error::Config("hmm.mixtures must be >= 1".into()));
        }
        if !(self.var_floor > 0.0) {
            return Err(Error::Config("hmm.var_floor must be > 0".into()));
        }
        if !self.mix_schedule.is_empty() {
            let ok = self.mix_schedule[0] >= 1
                && self.mix_schedule.windows(2).all(|w| w[0] <= w[1])
                && *self.mix_schedule.last().unwrap() <= self.mixtures;
            if !ok {
                return Err(Error::Config(
                    "hmm.mix_schedule must be non-decreasing, start >= 1 and end <= mixtures".into(),
                ));
            }
            return Ok(self.mix_schedule.clone());
        }
        let mut s = vec![1];
        while *s.last().unwrap() < self.mixtures {
            s.push((s.last().unwrap() * 2).min(self.mixtures));
        }
        Ok(s)
    }
}

/// Features and phone sequence of one training utterance.
#[derive(Debug, Clone, Copy)]
pub struct AlignTarget<'a> {
    pub features: &'a FeatureMatrix,
    pub phones: &'a [PhoneId],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmRecord {
    /// Mixture stage the record belongs to; values within a stage share structure.
    pub stage: usize,
    /// Largest component count over all states.
    pub components: usize,
    /// Total best-path log-likelihood over the corpus.
    pub log_likelihood: f64,
    /// `log_likelihood` plus the transition log prior.
    pub objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmHistory {
    pub records: Vec<EmRecord>,
}

impl EmHistory {
    /// True when the objective never drops by more than `rel_tol` (relative)
    /// between consecutive records of the same stage.
    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.records.windows(2).all(|w| {
            w[0].stage != w[1].stage
                || w[1].objective >= w[0].objective - rel_tol * w[0].objective.abs()
        })
    }

    pub fn last(&self) -> Option<&EmRecord> {
        self.records.last()
    }
}

fn validate(data: &[AlignTarget]) -> Result<usize> {
    let first = data.first().ok_or(Error::Empty("training corpus"))?;
    let dim = first.features.dim();
    for u in data {
        if u.features.dim() != dim {
            return Err(Error::Dimension {
                what: "training features",
                expected: dim,
                found: u.features.dim(),
            });
        }
        if u.phones.is_empty() {
            return Err(Error::Empty("phone sequence"));
        }
        let needed = STATES_PER_PHONE * u.phones.len();
        if u.features.num_frames() < needed {
            return Err(Error::TooShort {
                utterance: u.features.utterance_id.clone(),
                frames: u.features.num_frames(),
                needed,
            });
        }
    }
    Ok(dim)
}

fn global_moments(data: &[AlignTarget], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut n = 0.0;
    for u in data {
        for row in u.features.rows() {
            for (j, &v) in row.iter().enumerate() {
                sum[j] += v as f64;
                sq[j] += v as f64 * v as f64;
            }
            n += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var = sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0)).collect();
    (mean, var)
}

fn variance_floor(data: &[AlignTarget], dim: usize, factor: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mean, var) = global_moments(data, dim);
    // A constant dimension still needs a positive floor.
    let floor = var.iter().map(|v| (factor * v).max(1e-10)).collect();
    (mean, var, floor)
}

/// Single Gaussian per tied state from a uniform segmentation of each utterance.
fn flat_start(
    data: &[AlignTarget],
    phone_set: &PhoneSet,
    cfg: &HmmConfig,
    floor: &[f64],
    global: (&[f64], &[f64]),
) -> Result<(AcousticModel, Vec<usize>)> {
    let map = TiedStateMap::monophone(phone_set.len());
    let topo = HmmTopology::uniform(map.num_states(), cfg.init_self_loop);
    let dim = floor.len();
    let s = map.num_states();
    let mut occ = vec![0usize; s];
    let mut sum = vec![vec![0f64; dim]; s];
    let mut sq = vec![vec![0f64; dim]; s];
    for u in data {
        let hmm = UtteranceHmm::new(u.phones, &map, &topo, phone_set.silence());
        let n = hmm.num_states();
        let t_len = u.features.num_frames();
        for t in 0..t_len {
            let id = hmm.tied[t * n / t_len];
            occ[id] += 1;
            for (j, &v) in u.features.row(t).iter().enumerate() {
                sum[id][j] += v as f64;
                sq[id][j] += v as f64 * v as f64;
            }
        }
    }
    let states = (0..s)
        .map(|id| {
            if occ[id] == 0 {
                let var = global.1.iter().zip(floor).map(|(v, f)| v.max(*f)).collect();
                return DiagGmm::single(global.0.to_vec(), var);
            }
            let n = occ[id] as f64;
            let mean: Vec<f64> = sum[id].iter().map(|x| x / n).collect();
            let var = sq[id]
                .iter()
                .zip(&mean)
                .zip(floor)
                .map(|((q, m), f)| (q / n - m * m).max(*f))
                .collect();
            DiagGmm::single(mean, var)
        })
        .collect::<Result<Vec<_>>>()?;
    let model = AcousticModel::new(phone_set.clone(), map, topo, GmmEmission::new(states)?)?;
    Ok((model, occ))
}

fn align_all(model: &AcousticModel, data: &[AlignTarget]) -> Result<Vec<(AlignResult, Vec<usize>)>> {
    data.par_iter()
        .map(|u| {
            let hmm = UtteranceHmm::new(u.phones, &model.tied, &model.topology, model.phone_set.silence());
            let (path, log_prob) = viterbi_path(&hmm, u.features.num_frames(), |t, id| {
                model.emission.state(id).log_likelihood(u.features.row(t))
            })
            .map_err(|e| match e {
                Error::NoPath { frame } => Error::Invalid(format!(
                    "utterance `{}`: no alignment path reaches frame {frame}",
                    u.features.utterance_id
                )),
                other => other,
            })?;
            let tied = path.iter().map(|&j| hmm.tied[j]).collect();
            let phones = path.iter().map(|&j| u.phones[j / STATES_PER_PHONE]).collect();
            let res = AlignResult {
                alignment: Alignment {
                    utterance_id: u.features.utterance_id.clone(),
                    tied,
                    phones,
                },
                positions: path.iter().map(|&j| (j / STATES_PER_PHONE) as u32).collect(),
                states: path.iter().map(|&j| (j % STATES_PER_PHONE) as u8).collect(),
                log_prob,
            };
            Ok((res, path))
        })
        .collect()
}

fn transition_log_prior(topo: &HmmTopology) -> f64 {
    (0..topo.num_states())
        .map(|id| topo.log_self_loop(id) + topo.log_forward(id))
        .sum()
}

fn record(stage: usize, model: &AcousticModel, aligned: &[(AlignResult, Vec<usize>)]) -> EmRecord {
    let ll: f64 = aligned.iter().map(|(a, _)| a.log_prob).sum();
    EmRecord {
        stage,
        components: model
            .emission
            .states()
            .iter()
            .map(DiagGmm::num_components)
            .max()
            .unwrap_or(0),
        log_likelihood: ll,
        objective: ll + transition_log_prior(&model.topology),
    }
}

fn occupancy(model: &AcousticModel, aligned: &[(AlignResult, Vec<usize>)]) -> Vec<usize> {
    let mut occ = vec![0usize; model.num_states()];
    for (a, _) in aligned {
        for &id in &a.alignment.tied {
            occ[id] += 1;
        }
    }
    occ
}

fn reestimate(
    model: &AcousticModel,
    data: &[AlignTarget],
    aligned: &[(AlignResult, Vec<usize>)],
    floor: &[f64],
) -> Result<AcousticModel> {
    let s = model.num_states();
    let mut frames: Vec<Vec<(u32, u32)>> = vec![Vec::new(); s];
    let mut stay = vec![0u64; s];
    let mut advance = vec![0u64; s];
    for (u, (a, path)) in aligned.iter().enumerate() {
        for (t, &id) in a.alignment.tied.iter().enumerate() {
            frames[id].push((u as u32, t as u32));
        }
        for t in 1..path.len() {
            let from = a.alignment.tied[t - 1];
            if path[t] == path[t - 1] {
                stay[from] += 1;
            } else {
                advance[from] += 1;
            }
        }
    }

    let states: Vec<DiagGmm> = (0..s)
        .into_par_iter()
        .map(|id| {
            let g = model.emission.state(id);
            let mut acc = GmmAccumulator::new(g);
            for &(u, t) in &frames[id] {
                acc.add(g, data[u as usize].features.row(t as usize));
            }
            acc.update(g, floor)
        })
        .collect();

    let self_loop = (0..s)
        .map(|id| (stay[id] as f64 + 1.0) / ((stay[id] + advance[id]) as f64 + 2.0))
        .collect();
    AcousticModel::new(
        model.phone_set.clone(),
        model.tied.clone(),
        HmmTopology::new(self_loop)?,
        GmmEmission::new(states)?,
    )
}

fn grow(model: &mut AcousticModel, target: usize, occ: &[usize]) {
    for (id, g) in model.emission.states_mut().iter_mut().enumerate() {
        let cap = target.min(occ[id].max(1));
        if cap < target && g.num_components() < target {
            log::warn!(
                "tied state {id}: {} frames, capping mixture at {} components",
                occ[id],
                cap.max(g.num_components())
            );
        }
        while g.num_components() < cap {
            g.split_heaviest();
        }
    }
}

fn iterate(
    mut model: AcousticModel,
    data: &[AlignTarget],
    floor: &[f64],
    stage: usize,
    iters: usize,
    history: &mut EmHistory,
) -> Result<(AcousticModel, Vec<usize>)> {
    let mut occ = Vec::new();
    for _ in 0..iters {
        let aligned = align_all(&model, data)?;
        history.records.push(record(stage, &model, &aligned));
        occ = occupancy(&model, &aligned);
        model = reestimate(&model, data, &aligned, floor)?;
    }
    Ok((model, occ))
}

/// Flat-start monophone training with mixture growth per the configured schedule.
pub fn train_monophone_gmm(
    data: &[AlignTarget],
    phone_set: &PhoneSet,
    cfg: &HmmConfig,
) -> Result<(AcousticModel, EmHistory)> {
    let dim = validate(data)?;
    let schedule = cfg.schedule()?;
    let (mean, var, floor) = variance_floor(data, dim, cfg.var_floor);
    let (mut model, mut occ) = flat_start(data, phone_set, cfg, &floor, (&mean, &var))?;
    let mut history = EmHistory::default();
    for (stage, &target) in schedule.iter().enumerate() {
        grow(&mut model, target, &occ);
        let (m, o) = iterate(model, data, &floor, stage, cfg.em_iters, &mut history)?;
        model = m;
        if !o.is_empty() {
            occ = o;
        }
    }
    let aligned = align_all(&model, data)?;
    history
        .records
        .push(record(schedule.len() - 1, &model, &aligned));
    Ok((model, history))
}

/// Tied-state training initialized from the monophone model: every tied state
/// starts as a copy of its `(center, state)` monophone mixture and transition.
pub fn train_tied_triphone_gmm(
    data: &[AlignTarget],
    map: TiedStateMap,
    mono: &AcousticModel,
    cfg: &HmmConfig,
) -> Result<(AcousticModel, EmHistory)> {
    let dim = validate(data)?;
    if dim != mono.emission.dim() {
        return Err(Error::Dimension {
            what: "training features",
            expected: mono.emission.dim(),
            found: dim,
        });
    }
    if map.num_phones() != mono.phone_set.len() {
        return Err(Error::Dimension {
            what: "tied-state map phones",
            expected: mono.phone_set.len(),
            found: map.num_phones(),
        });
    }
    let (_, _, floor) = variance_floor(data, dim, cfg.var_floor);
    let (states, self_loop): (Vec<_>, Vec<_>) = (0..map.num_states())
        .map(|id| {
            let src = mono.tied.backoff(map.center_phone(id), map.hmm_state(id));
            (mono.emission.state(src).clone(), mono.topology.self_loop(src))
        })
        .unzip();
    let model = AcousticModel::new(
        mono.phone_set.clone(),
        map,
        HmmTopology::new(self_loop)?,
        GmmEmission::new(states)?,
    )?;
    let mut history = EmHistory::default();
    let (model, _) = iterate(model, data, &floor, 0, cfg.em_iters, &mut history)?;
    let aligned = align_all(&model, data)?;
    history.records.push(record(0, &model, &aligned));
    Ok((model, history))
}
