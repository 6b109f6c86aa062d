//! Phone-loop Viterbi decoding with a bigram phone language model, and
//! framewise/recognition scoring.
//!
//! The decode graph expands every phone into its triphone contexts: unit
//! `(l, c, r)` is the three-state HMM of `c` between `l` and `r`, whose tied
//! states come from the [`TiedStateMap`] (unseen contexts back off to the
//! monophone states). Unit `(l, c, r)` may be followed by any `(c, r, x)`;
//! the utterance starts in a unit with `l = sil` and ends in one with `r = sil`.

mod score;

use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::binio::{self, BinReader, BinWriter};
use crate::corpus::PhoneId;
use crate::error::{Error, Result};
use crate::hmm::{GmmEmission, HmmTopology, TiedId, TiedStateMap, Triphone, STATES_PER_PHONE};

pub use score::{
    align_edits, argmax_rows, classify_frames, read_hypotheses, recognition_score, tune_decode_params,
    write_hypotheses, ClassificationScore, DevUtterance, EditCounts, EditOp, RecognitionScore, ScoreReport,
    TuneResult,
};

/// Floor applied to posteriors before taking logs.
pub const POSTERIOR_FLOOR: f32 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct BigramPhoneLm {
    num_phones: usize,
    alpha: f64,
    /// `log P(b | a)` at `a * P + b`.
    log_prob: Vec<f64>,
    log_start: Vec<f64>,
    log_end: Vec<f64>,
}

const LM_MAGIC: &str = "DTEB";
const LM_VERSION: u32 = 1;

/// `P(b|a) = (count(a,b) + alpha) / (count(a) + alpha * |phones|)`; the start
/// and end distributions smooth first- and last-phone counts the same way.
pub fn train_bigram_lm(sequences: &[Vec<PhoneId>], num_phones: usize, alpha: f64) -> Result<BigramPhoneLm> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("LM smoothing must be > 0, got {alpha}")));
    }
    if num_phones == 0 || sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("LM training corpus"));
    }
    let p = num_phones;
    let mut pair = vec![0u64; p * p];
    let mut first = vec![0u64; p];
    let mut last = vec![0u64; p];
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        if let Some(&bad) = seq.iter().find(|&&x| x >= p) {
            return Err(Error::LabelOutOfRange { label: bad, classes: p });
        }
        first[seq[0]] += 1;
        last[seq[seq.len() - 1]] += 1;
        for w in seq.windows(2) {
            pair[w[0] * p + w[1]] += 1;
        }
    }
    let smooth = |counts: &[u64]| -> Vec<f64> {
        let total: u64 = counts.iter().sum();
        let denom = total as f64 + alpha * p as f64;
        counts.iter().map(|&c| ((c as f64 + alpha) / denom).ln()).collect()
    };
    let log_prob = pair.chunks(p).flat_map(smooth).collect();
    Ok(BigramPhoneLm {
        num_phones: p,
        alpha,
        log_prob,
        log_start: smooth(&first),
        log_end: smooth(&last),
    })
}

impl BigramPhoneLm {
    pub fn num_phones(&self) -> usize {
        self.num_phones
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn log_prob(&self, from: PhoneId, to: PhoneId) -> f64 {
        self.log_prob[from * self.num_phones + to]
    }

    pub fn log_start(&self, phone: PhoneId) -> f64 {
        self.log_start[phone]
    }

    pub fn log_end(&self, phone: PhoneId) -> f64 {
        self.log_end[phone]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, path);
        w.header(b"DTEB", LM_VERSION)?;
        w.u32(self.num_phones as u32)?;
        w.f32(self.alpha as f32)?;
        for table in [&self.log_prob, &self.log_start, &self.log_end] {
            for &v in table.iter() {
                w.f32(v as f32)?;
            }
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, path);
        r.header(LM_MAGIC, LM_VERSION)?;
        let p = r.count(1 << 12, "phone")?;
        let alpha = r.f32()? as f64;
        let mut read = |n: usize| -> Result<Vec<f64>> { Ok(r.f32s(n)?.into_iter().map(f64::from).collect()) };
        let log_prob = read(p * p)?;
        let log_start = read(p)?;
        let log_end = read(p)?;
        r.expect_eof()?;
        let lm = Self {
            num_phones: p,
            alpha,
            log_prob,
            log_start,
            log_end,
        };
        if lm.log_prob.iter().chain(&lm.log_start).chain(&lm.log_end).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{}", path.display())));
        }
        Ok(lm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodMode {
    Posterior,
    PosteriorOverPrior,
    Gmm,
}

impl std::str::FromStr for LikelihoodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(Self::Posterior),
            "posterior-over-prior" => Ok(Self::PosteriorOverPrior),
            "gmm" => Ok(Self::Gmm),
            other => Err(Error::Config(format!("unknown likelihood mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub lm_scale: f32,
    pub insertion_penalty: f32,
    pub mode: LikelihoodMode,
    pub beam: Option<f32>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            lm_scale: 1.0,
            insertion_penalty: 0.0,
            mode: LikelihoodMode::Posterior,
            beam: None,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lm_scale >= 0.0) || !self.insertion_penalty.is_finite() {
            return Err(Error::Config(format!("invalid decode parameters {self:?}")));
        }
        if let Some(b) = self.beam {
            if !(b > 0.0) {
                return Err(Error::Config(format!("decode beam must be > 0, got {b}")));
            }
        }
        Ok(())
    }
}

/// Log scores `T x S` for decoding from network posteriors.
pub fn scaled_likelihoods(
    posteriors: ArrayView2<f32>,
    mode: LikelihoodMode,
    priors: Option<&[f64]>,
) -> Result<Array2<f32>> {
    let mut out = posteriors.mapv(|y| y.max(POSTERIOR_FLOOR).ln());
    match mode {
        LikelihoodMode::Posterior => {}
        LikelihoodMode::PosteriorOverPrior => {
            let priors = priors.ok_or_else(|| Error::Config("posterior-over-prior mode needs priors".into()))?;
            if priors.len() != posteriors.ncols() {
                return Err(Error::Dimension {
                    what: "state priors",
                    expected: posteriors.ncols(),
                    found: priors.len(),
                });
            }
            if let Some(bad) = priors.iter().find(|&&p| !(p > 0.0)) {
                return Err(Error::Invalid(format!("state prior must be > 0, got {bad}")));
            }
            for mut row in out.rows_mut() {
                for (v, &p) in row.iter_mut().zip(priors) {
                    *v = (*v as f64 - p.ln()) as f32;
                }
            }
        }
        LikelihoodMode::Gmm => {
            return Err(Error::Config("gmm scores do not come from posteriors".into()));
        }
    }
    Ok(out)
}

/// Add-one smoothed relative frequencies of training labels.
pub fn label_priors(labels: impl IntoIterator<Item = TiedId>, num_states: usize) -> Vec<f64> {
    let mut counts = vec![1u64; num_states];
    for l in labels {
        counts[l] += 1;
    }
    let total: u64 = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// GMM log-likelihood of every frame under every tied state.
pub fn gmm_scores(frames: &[&[f32]], emission: &GmmEmission) -> Result<Array2<f32>> {
    let s = emission.num_states();
    let mut out = Array2::zeros((frames.len(), s));
    for (t, x) in frames.iter().enumerate() {
        if x.len() != emission.dim() {
            return Err(Error::Dimension {
                what: "frame for GMM scoring",
                expected: emission.dim(),
                found: x.len(),
            });
        }
        for (j, gmm) in emission.states().iter().enumerate() {
            out[[t, j]] = gmm.log_likelihood(x) as f32;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Decoded phones with silence removed.
    pub phones: Vec<PhoneId>,
    /// Decoded phones including silence.
    pub full_phones: Vec<PhoneId>,
    pub tied_path: Vec<TiedId>,
    /// Center phone of every frame.
    pub frame_phones: Vec<PhoneId>,
    pub score: f64,
}

/// Expanded triphone loop for one model and language model.
#[derive(Debug, Clone)]
pub struct DecodeGraph {
    num_phones: usize,
    silence: PhoneId,
    /// Tied state of every graph state `((l * P + c) * P + r) * 3 + s`.
    tied: Vec<TiedId>,
    log_self: Vec<f64>,
    log_forward: Vec<f64>,
    num_tied: usize,
}

impl DecodeGraph {
    pub fn new(map: &TiedStateMap, topology: &HmmTopology, silence: PhoneId) -> Result<Self> {
        let p = map.num_phones();
        if p == 0 {
            return Err(Error::Empty("decode graph"));
        }
        if topology.num_states() != map.num_states() {
            return Err(Error::Dimension {
                what: "topology states",
                expected: map.num_states(),
                found: topology.num_states(),
            });
        }
        let mut tied = Vec::with_capacity(p * p * p * STATES_PER_PHONE);
        for l in 0..p {
            for c in 0..p {
                for r in 0..p {
                    for s in 0..STATES_PER_PHONE as u8 {
                        tied.push(map.lookup(Triphone::new(l, c, r), s));
                    }
                }
            }
        }
        let log_self = tied.iter().map(|&id| topology.log_self_loop(id)).collect();
        let log_forward = tied.iter().map(|&id| topology.log_forward(id)).collect();
        Ok(Self {
            num_phones: p,
            silence,
            tied,
            log_self,
            log_forward,
            num_tied: map.num_states(),
        })
    }

    fn unit(&self, l: PhoneId, c: PhoneId, r: PhoneId) -> usize {
        (l * self.num_phones + c) * self.num_phones + r
    }

    pub fn num_states(&self) -> usize {
        self.tied.len()
    }
}

const STAY: u16 = 0;
const ADVANCE: u16 = 1;
/// Entry codes are `ENTER + left context`.
const ENTER: u16 = 2;

/// Best path through the phone loop for a `T x S` table of log scores.
pub fn viterbi_decode(
    scores: ArrayView2<f32>,
    graph: &DecodeGraph,
    lm: &BigramPhoneLm,
    params: &DecodeParams,
) -> Result<DecodeResult> {
    params.validate()?;
    let p = graph.num_phones;
    if lm.num_phones() != p {
        return Err(Error::Dimension {
            what: "LM phones",
            expected: p,
            found: lm.num_phones(),
        });
    }
    if scores.ncols() != graph.num_tied {
        return Err(Error::Dimension {
            what: "decode score columns",
            expected: graph.num_tied,
            found: scores.ncols(),
        });
    }
    let frames = scores.nrows();
    if frames == 0 {
        return Err(Error::Empty("decode input"));
    }
    let n = graph.num_states();
    let neg = f64::NEG_INFINITY;
    let lm_scale = params.lm_scale as f64;
    let penalty = params.insertion_penalty as f64;
    let sil = graph.silence;
    let arc: Vec<f64> = (0..p * p)
        .map(|i| lm_scale * lm.log_prob(i / p, i % p) + penalty)
        .collect();

    let mut prev = vec![neg; n];
    let mut cur = vec![neg; n];
    let mut back = vec![STAY; frames * n];
    let mut exit = vec![neg; p * p];
    let mut exit_from = vec![0u16; p * p];

    let emit = |t: usize, j: usize| scores[[t, graph.tied[j]]] as f64;

    for c in 0..p {
        for r in 0..p {
            let j = graph.unit(sil, c, r) * STATES_PER_PHONE;
            prev[j] = lm_scale * lm.log_start(c) + emit(0, j);
        }
    }
    prune(&mut prev, params.beam);
    if prev.iter().all(|&v| v == neg) {
        return Err(Error::NoPath { frame: 0 });
    }

    for t in 1..frames {
        // Best exit from any (l, c, r) into units centered on r with left c.
        for c in 0..p {
            for r in 0..p {
                let mut best = neg;
                let mut arg = 0u16;
                for l in 0..p {
                    let j = graph.unit(l, c, r) * STATES_PER_PHONE + 2;
                    let v = prev[j] + graph.log_forward[j];
                    if v > best {
                        best = v;
                        arg = l as u16;
                    }
                }
                exit[c * p + r] = best + arc[c * p + r];
                exit_from[c * p + r] = arg;
            }
        }
        let row = &mut back[t * n..(t + 1) * n];
        for c in 0..p {
            for r in 0..p {
                for x in 0..p {
                    let base = graph.unit(c, r, x) * STATES_PER_PHONE;
                    for s in 0..STATES_PER_PHONE {
                        let j = base + s;
                        let stay = prev[j] + graph.log_self[j];
                        let (best, code) = if s == 0 {
                            let enter = exit[c * p + r];
                            if enter > stay {
                                (enter, ENTER + exit_from[c * p + r])
                            } else {
                                (stay, STAY)
                            }
                        } else {
                            let adv = prev[j - 1] + graph.log_forward[j - 1];
                            if adv > stay {
                                (adv, ADVANCE)
                            } else {
                                (stay, STAY)
                            }
                        };
                        row[j] = code;
                        cur[j] = if best == neg { neg } else { best + emit(t, j) };
                    }
                }
            }
        }
        prune(&mut cur, params.beam);
        if cur.iter().all(|&v| v == neg || v.is_nan()) {
            return Err(Error::NoPath { frame: t });
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let mut best = neg;
    let mut end = usize::MAX;
    for l in 0..p {
        for c in 0..p {
            let j = graph.unit(l, c, sil) * STATES_PER_PHONE + 2;
            let v = prev[j] + lm_scale * lm.log_end(c);
            if v > best {
                best = v;
                end = j;
            }
        }
    }
    if end == usize::MAX || !best.is_finite() {
        return Err(Error::NoPath { frame: frames - 1 });
    }

    let mut path = vec![0usize; frames];
    let mut j = end;
    for t in (0..frames).rev() {
        path[t] = j;
        if t == 0 {
            break;
        }
        match back[t * n + j] {
            STAY => {}
            ADVANCE => j -= 1,
            code => {
                // (c, r, x) was entered from (l, c, r).
                let unit = j / STATES_PER_PHONE;
                let (c, r) = (unit / (p * p), (unit / p) % p);
                j = graph.unit((code - ENTER) as usize, c, r) * STATES_PER_PHONE + 2;
            }
        }
    }

    let center_of = |j: usize| (j / STATES_PER_PHONE / p) % p;
    let mut full_phones = Vec::new();
    for (t, &j) in path.iter().enumerate() {
        let entered = t == 0 || (j % STATES_PER_PHONE == 0 && back[t * n + j] >= ENTER);
        if entered {
            full_phones.push(center_of(j));
        }
    }
    Ok(DecodeResult {
        phones: full_phones.iter().copied().filter(|&x| x != sil).collect(),
        full_phones,
        tied_path: path.iter().map(|&j| graph.tied[j]).collect(),
        frame_phones: path.iter().map(|&j| center_of(j)).collect(),
        score: best,
    })
}

fn prune(scores: &mut [f64], beam: Option<f32>) {
    if let Some(beam) = beam {
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cut = best - beam as f64;
        for v in scores.iter_mut() {
            if *v < cut {
                *v = f64::NEG_INFINITY;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bigram_formula_and_normalization() {
        let lm = train_bigram_lm(&[vec![0, 1]], 2, 1.0).unwrap();
        assert!((lm.log_prob(0, 1).exp() - 2.0 / 3.0).abs() < 1e-12);
        assert!((lm.log_prob(0, 0).exp() - 1.0 / 3.0).abs() < 1e-12);
        // Unseen history: uniform.
        assert!((lm.log_prob(1, 0).exp() - 0.5).abs() < 1e-12);
        for a in 0..2 {
            let s: f64 = (0..2).map(|b| lm.log_prob(a, b).exp()).sum();
            assert!((s - 1.0).abs() < 1e-8);
        }
        assert!(train_bigram_lm(&[], 2, 1.0).is_err());
        assert!(train_bigram_lm(&[vec![0]], 2, 0.0).is_err());
    }

    #[test]
    fn lm_round_trip() {
        let lm = train_bigram_lm(&[vec![0, 1, 2, 1], vec![2, 2]], 3, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.bin");
        lm.save(&p).unwrap();
        let back = BigramPhoneLm::load(&p).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((back.log_prob(a, b) - lm.log_prob(a, b)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn posterior_floor_and_modes() {
        let post = array![[1.0f32, 0.0], [0.5, 0.5]];
        let s = scaled_likelihoods(post.view(), LikelihoodMode::Posterior, None).unwrap();
        assert_eq!(s[[0, 0]], 0.0);
        assert!((s[[0, 1]] - 1e-10f32.ln()).abs() < 1e-4);
        let q = scaled_likelihoods(post.view(), LikelihoodMode::PosteriorOverPrior, Some(&[0.5, 0.5])).unwrap();
        for (a, b) in s.iter().zip(q.iter()) {
            assert!((b - a - 2f32.ln()).abs() < 1e-5);
        }
        assert!(scaled_likelihoods(post.view(), LikelihoodMode::PosteriorOverPrior, None).is_err());
        assert!(scaled_likelihoods(post.view(), LikelihoodMode::PosteriorOverPrior, Some(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn single_phone_three_frames_is_forced() {
        let map = TiedStateMap::monophone(1);
        let topo = HmmTopology::uniform(3, 0.5);
        let graph = DecodeGraph::new(&map, &topo, 0).unwrap();
        let lm = train_bigram_lm(&[vec![0]], 1, 1.0).unwrap();
        let scores = array![[-1.0f32, -5.0, -5.0], [-5.0, -2.0, -5.0], [-5.0, -5.0, -3.0]];
        let res = viterbi_decode(scores.view(), &graph, &lm, &DecodeParams::default()).unwrap();
        assert_eq!(res.tied_path, vec![0, 1, 2]);
        let want = -6.0 + 2.0 * 0.5f64.ln();
        assert!((res.score - want).abs() < 1e-9);
        assert!(res.phones.is_empty());
        assert_eq!(res.full_phones, vec![0]);
        let short = array![[-1.0f32, -1.0, -1.0], [-1.0, -1.0, -1.0]];
        assert!(viterbi_decode(short.view(), &graph, &lm, &DecodeParams::default()).is_err());
    }
}
