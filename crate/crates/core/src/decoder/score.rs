use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::{viterbi_decode, BigramPhoneLm, DecodeGraph, DecodeParams};
use crate::corpus::{write_text, PhoneId, PhoneSet};
use crate::error::{Error, Result};
use crate::hmm::{TiedId, TiedStateMap};

/// Index of the first maximum of every row.
pub fn argmax_rows(scores: ArrayView2<f32>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Framewise accuracy counts over non-silence frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassificationScore {
    pub frames: usize,
    pub tied_correct: usize,
    pub phone_correct: usize,
}

impl ClassificationScore {
    pub fn add(&mut self, other: &ClassificationScore) {
        self.frames += other.frames;
        self.tied_correct += other.tied_correct;
        self.phone_correct += other.phone_correct;
    }

    /// `None` when there are no non-silence frames.
    pub fn tied_accuracy(&self) -> Option<f64> {
        (self.frames > 0).then(|| self.tied_correct as f64 / self.frames as f64)
    }

    pub fn phone_accuracy(&self) -> Option<f64> {
        (self.frames > 0).then(|| self.phone_correct as f64 / self.frames as f64)
    }
}

/// Scores predicted tied states against the aligned truth; frames whose
/// truth belongs to silence are skipped.
pub fn classify_frames(
    predicted: &[TiedId],
    truth: &[TiedId],
    map: &TiedStateMap,
    silence: PhoneId,
) -> Result<ClassificationScore> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension {
            what: "predicted frames",
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    let mut score = ClassificationScore::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        let center = map.center_phone(t);
        if center == silence {
            continue;
        }
        score.frames += 1;
        score.tied_correct += usize::from(p == t);
        score.phone_correct += usize::from(map.center_phone(p) == center);
    }
    Ok(score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EditOp {
    Match,
    Sub,
    Del,
    Ins,
}

/// Unit-cost Levenshtein alignment in forward order. The backtrace prefers
/// the diagonal, then deletion, then insertion.
pub fn align_edits(reference: &[PhoneId], hypothesis: &[PhoneId]) -> Vec<EditOp> {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut cost = vec![0u32; (n + 1) * w];
    for i in 0..=n {
        for j in 0..=m {
            cost[i * w + j] = if i == 0 {
                j as u32
            } else if j == 0 {
                i as u32
            } else {
                let diag = cost[(i - 1) * w + j - 1] + u32::from(reference[i - 1] != hypothesis[j - 1]);
                diag.min(cost[(i - 1) * w + j] + 1).min(cost[i * w + j - 1] + 1)
            };
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == cost[(i - 1) * w + j - 1] + u32::from(!same) {
                ops.push(if same { EditOp::Match } else { EditOp::Sub });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == cost[(i - 1) * w + j] + 1 {
            ops.push(EditOp::Del);
            i -= 1;
        } else {
            ops.push(EditOp::Ins);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Corpus totals of a Levenshtein alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    /// Reference length.
    pub n: usize,
    pub s: usize,
    pub d: usize,
    pub i: usize,
}

pub type RecognitionScore = EditCounts;

impl EditCounts {
    pub fn from_ops(ops: &[EditOp]) -> Self {
        let mut c = Self::default();
        for op in ops {
            match op {
                EditOp::Match => c.n += 1,
                EditOp::Sub => {
                    c.n += 1;
                    c.s += 1
                }
                EditOp::Del => {
                    c.n += 1;
                    c.d += 1
                }
                EditOp::Ins => c.i += 1,
            }
        }
        c
    }

    pub fn add(&mut self, o: &EditCounts) {
        self.n += o.n;
        self.s += o.s;
        self.d += o.d;
        self.i += o.i;
    }

    pub fn errors(&self) -> usize {
        self.s + self.d + self.i
    }

    /// `(N - S - D - I) / N`; may be negative.
    pub fn accuracy(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.n as f64 - self.errors() as f64) / self.n as f64)
    }

    /// `(N - S - D) / N`.
    pub fn correctness(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.n - self.s - self.d) as f64 / self.n as f64)
    }
}

/// Totals over utterances paired by id; both sides must hold the same ids.
pub fn recognition_score(
    references: &BTreeMap<String, Vec<PhoneId>>,
    hypotheses: &BTreeMap<String, Vec<PhoneId>>,
) -> Result<RecognitionScore> {
    if let Some(id) = references.keys().find(|k| !hypotheses.contains_key(*k)) {
        return Err(Error::Invalid(format!("no hypothesis for utterance `{id}`")));
    }
    if let Some(id) = hypotheses.keys().find(|k| !references.contains_key(*k)) {
        return Err(Error::Invalid(format!("no reference for utterance `{id}`")));
    }
    let mut total = EditCounts::default();
    for (id, r) in references {
        total.add(&EditCounts::from_ops(&align_edits(r, &hypotheses[id])));
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub system: String,
    pub classification: ClassificationScore,
    pub recognition: RecognitionScore,
    pub lm_scale: f32,
    pub insertion_penalty: f32,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.4}", 100.0 * x))
}

impl ScoreReport {
    pub fn to_text(&self) -> String {
        let c = &self.classification;
        let r = &self.recognition;
        let mut s = String::new();
        let _ = writeln!(s, "system {}", self.system);
        let _ = writeln!(s, "non-silence frames {}", c.frames);
        let _ = writeln!(s, "tied-state classification accuracy {}%", pct(c.tied_accuracy()));
        let _ = writeln!(s, "phone classification accuracy {}%", pct(c.phone_accuracy()));
        let _ = writeln!(
            s,
            "phone recognition accuracy {}% (correct {}%) N={} S={} D={} I={}",
            pct(r.accuracy()),
            pct(r.correctness()),
            r.n,
            r.s,
            r.d,
            r.i
        );
        let _ = writeln!(s, "lm scale {} insertion penalty {}", self.lm_scale, self.insertion_penalty);
        s.push_str("\n[scores]\n");
        let _ = writeln!(s, "system={}", self.system);
        let _ = writeln!(s, "frames={}", c.frames);
        let _ = writeln!(s, "tied_acc={}", pct(c.tied_accuracy()));
        let _ = writeln!(s, "phone_acc={}", pct(c.phone_accuracy()));
        let _ = writeln!(s, "rec_acc={}", pct(r.accuracy()));
        let _ = writeln!(s, "rec_corr={}", pct(r.correctness()));
        let _ = writeln!(s, "S={} D={} I={} N={}", r.s, r.d, r.i, r.n);
        let _ = writeln!(s, "lm_scale={}", self.lm_scale);
        let _ = writeln!(s, "insertion_penalty={}", self.insertion_penalty);
        s
    }

    /// `key=value` pairs of the `[scores]` section.
    pub fn parse_scores(text: &str) -> BTreeMap<String, String> {
        text.lines()
            .skip_while(|l| l.trim() != "[scores]")
            .skip(1)
            .flat_map(|l| l.split_whitespace())
            .filter_map(|kv| kv.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

/// One dev utterance for parameter tuning.
#[derive(Debug, Clone)]
pub struct DevUtterance {
    pub id: String,
    pub scores: Array2<f32>,
    /// Reference phones without silence.
    pub reference: Vec<PhoneId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub params: DecodeParams,
    pub recognition: RecognitionScore,
    /// `(lm_scale, insertion_penalty, score)` of every grid point in grid order.
    pub grid: Vec<(f32, f32, RecognitionScore)>,
}

/// Exhaustive grid search for the best dev recognition accuracy; ties go to
/// the smaller LM scale, then the smaller absolute penalty.
pub fn tune_decode_params(
    dev: &[DevUtterance],
    graph: &DecodeGraph,
    lm: &BigramPhoneLm,
    base: &DecodeParams,
    lm_scales: &[f32],
    penalties: &[f32],
) -> Result<TuneResult> {
    if lm_scales.is_empty() || penalties.is_empty() {
        return Err(Error::Empty("decode grid"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let points: Vec<(f32, f32)> = lm_scales
        .iter()
        .flat_map(|&a| penalties.iter().map(move |&b| (a, b)))
        .collect();
    let scored: Vec<(f32, f32, RecognitionScore)> = points
        .par_iter()
        .map(|&(lm_scale, pen)| {
            let params = DecodeParams {
                lm_scale,
                insertion_penalty: pen,
                ..*base
            };
            let mut total = EditCounts::default();
            for u in dev {
                let res = viterbi_decode(u.scores.view(), graph, lm, &params)?;
                total.add(&EditCounts::from_ops(&align_edits(&u.reference, &res.phones)));
            }
            Ok((lm_scale, pen, total))
        })
        .collect::<Result<_>>()?;
    let best = scored
        .iter()
        .min_by(|a, b| {
            a.2.errors()
                .cmp(&b.2.errors())
                .then(a.0.total_cmp(&b.0))
                .then(a.1.abs().total_cmp(&b.1.abs()))
                .then(a.1.total_cmp(&b.1))
        })
        .expect("non-empty grid");
    Ok(TuneResult {
        params: DecodeParams {
            lm_scale: best.0,
            insertion_penalty: best.1,
            ..*base
        },
        recognition: best.2,
        grid: scored.clone(),
    })
}

/// `<id>\t<phone> <phone> ...` per line.
pub fn write_hypotheses(path: &Path, hyps: &BTreeMap<String, Vec<PhoneId>>, phones: &PhoneSet) -> Result<()> {
    let mut text = String::new();
    for (id, seq) in hyps {
        let syms: Vec<&str> = seq.iter().map(|&p| phones.symbol(p)).collect();
        let _ = writeln!(text, "{id}\t{}", syms.join(" "));
    }
    write_text(path, &text)
}

pub fn read_hypotheses(path: &Path, phones: &PhoneSet) -> Result<BTreeMap<String, Vec<PhoneId>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let (id, rest) = line.split_once('\t').unwrap_or((line.trim(), ""));
        let seq = rest
            .split_whitespace()
            .map(|s| phones.id(s).ok_or_else(|| parse_err(format!("unknown phone `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        if out.insert(id.to_string(), seq).is_some() {
            return Err(parse_err(format!("duplicate utterance `{id}`")));
        }
    }
    Ok(out)
}
