use super::{AcousticModel, Alignment, TiedId, TiedStateMap, Triphone, HmmTopology, STATES_PER_PHONE};
use crate::corpus::PhoneId;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Left-to-right composition of the three-state HMMs of a phone sequence.
#[derive(Debug, Clone)]
pub struct UtteranceHmm {
    pub phones: Vec<PhoneId>,
    /// Tied state of every composed state (`3 * phones.len()` entries).
    pub tied: Vec<TiedId>,
    pub log_self: Vec<f64>,
    pub log_forward: Vec<f64>,
}

impl UtteranceHmm {
    pub fn new(phones: &[PhoneId], map: &TiedStateMap, topology: &HmmTopology, silence: PhoneId) -> Self {
        let mut tied = Vec::with_capacity(phones.len() * STATES_PER_PHONE);
        for pos in 0..phones.len() {
            let tri = Triphone::in_context(phones, pos, silence);
            for s in 0..STATES_PER_PHONE as u8 {
                tied.push(map.lookup(tri, s));
            }
        }
        let log_self = tied.iter().map(|&id| topology.log_self_loop(id)).collect();
        let log_forward = tied.iter().map(|&id| topology.log_forward(id)).collect();
        Self {
            phones: phones.to_vec(),
            tied,
            log_self,
            log_forward,
        }
    }

    pub fn num_states(&self) -> usize {
        self.tied.len()
    }
}

/// Best path of a forced alignment.
#[derive(Debug, Clone)]
pub struct AlignResult {
    pub alignment: Alignment,
    /// Position in the phone sequence of every frame.
    pub positions: Vec<u32>,
    /// HMM state (0..3) of every frame.
    pub states: Vec<u8>,
    /// Sum of emission and transition log-probabilities along the path.
    pub log_prob: f64,
}

/// Viterbi path through the composed HMM that starts in the first state at
/// frame 0 and ends in the last state at the final frame.
pub(crate) fn viterbi_path(
    hmm: &UtteranceHmm,
    frames: usize,
    mut emission: impl FnMut(usize, TiedId) -> f64,
) -> Result<(Vec<usize>, f64)> {
    let n = hmm.num_states();
    let neg = f64::NEG_INFINITY;
    let mut prev = vec![neg; n];
    let mut cur = vec![neg; n];
    // advanced[t * n + j]: the best way into j at t came from j - 1.
    let mut advanced = vec![false; frames * n];

    for t in 0..frames {
        // States reachable at t that can still reach the end.
        let lo = (n as isize - (frames - t) as isize).max(0) as usize;
        let hi = t.min(n - 1);
        cur.iter_mut().for_each(|v| *v = neg);
        let mut any = false;
        for j in lo..=hi {
            let best = if t == 0 {
                0.0
            } else {
                let stay = prev[j] + hmm.log_self[j];
                let adv = if j > 0 { prev[j - 1] + hmm.log_forward[j - 1] } else { neg };
                if adv > stay {
                    advanced[t * n + j] = true;
                    adv
                } else {
                    stay
                }
            };
            if best == neg {
                continue;
            }
            let v = best + emission(t, hmm.tied[j]);
            if v > neg {
                any = true;
            }
            cur[j] = v;
        }
        if !any {
            return Err(Error::NoPath { frame: t });
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let score = prev[n - 1];
    if score == neg || score.is_nan() {
        return Err(Error::NoPath { frame: frames - 1 });
    }
    let mut path = vec![0usize; frames];
    let mut j = n - 1;
    for t in (0..frames).rev() {
        path[t] = j;
        if t > 0 && advanced[t * n + j] {
            j -= 1;
        }
    }
    Ok((path, score))
}

/// Forced alignment of `features` to `phones` (boundary context = silence).
pub fn force_align(features: &FeatureMatrix, phones: &[PhoneId], model: &AcousticModel) -> Result<AlignResult> {
    if phones.is_empty() {
        return Err(Error::Empty("phone sequence"));
    }
    if features.dim() != model.emission.dim() {
        return Err(Error::Dimension {
            what: "features for alignment",
            expected: model.emission.dim(),
            found: features.dim(),
        });
    }
    let needed = STATES_PER_PHONE * phones.len();
    let frames = features.num_frames();
    if frames < needed {
        return Err(Error::TooShort {
            utterance: features.utterance_id.clone(),
            frames,
            needed,
        });
    }
    let hmm = UtteranceHmm::new(phones, &model.tied, &model.topology, model.phone_set.silence());
    let (path, log_prob) = viterbi_path(&hmm, frames, |t, id| {
        model.emission.state(id).log_likelihood(features.row(t))
    })?;

    let tied: Vec<TiedId> = path.iter().map(|&j| hmm.tied[j]).collect();
    let phones_per_frame = path.iter().map(|&j| phones[j / STATES_PER_PHONE]).collect();
    Ok(AlignResult {
        alignment: Alignment {
            utterance_id: features.utterance_id.clone(),
            tied,
            phones: phones_per_frame,
        },
        positions: path.iter().map(|&j| (j / STATES_PER_PHONE) as u32).collect(),
        states: path.iter().map(|&j| (j % STATES_PER_PHONE) as u8).collect(),
        log_prob,
    })
}
