//! Context-dependent tied-state triphone HMM-GMM.
//!
//! Every phone is a strict three state left-to-right HMM (self loop or
//! advance, no skips). Emissions and transition probabilities belong to tied
//! states; a [`TiedStateMap`] maps `(triphone, hmm state)` pairs onto them.

mod align;
mod gmm;
mod train;
mod tying;

use std::path::Path;

use crate::binio::{self, BinReader, BinWriter};
use crate::corpus::{PhoneId, PhoneSet};
use crate::error::{Error, Result};

pub use align::{force_align, AlignResult, UtteranceHmm};
pub use gmm::{gmm_log_likelihood, DiagGmm, GmmEmission};
pub use train::{
    train_monophone_gmm, train_tied_triphone_gmm, AlignTarget, EmHistory, EmRecord, HmmConfig,
};
pub use tying::{count_triphone_states, tie_states, TriphoneCounts};

/// Index of a tied state.
pub type TiedId = usize;

/// Emitting states per phone.
pub const STATES_PER_PHONE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triphone {
    pub left: PhoneId,
    pub center: PhoneId,
    pub right: PhoneId,
}

impl Triphone {
    pub fn new(left: PhoneId, center: PhoneId, right: PhoneId) -> Self {
        Self {
            left,
            center,
            right,
        }
    }

    /// Triphone at `pos` of a phone sequence; sequence boundaries read as `silence`.
    pub fn in_context(seq: &[PhoneId], pos: usize, silence: PhoneId) -> Self {
        Self {
            left: if pos == 0 { silence } else { seq[pos - 1] },
            center: seq[pos],
            right: seq.get(pos + 1).copied().unwrap_or(silence),
        }
    }
}

/// `(triphone, hmm state) -> tied state`.
///
/// Ids `0 .. 3 * phones` are the backoff states of each `(center, state)`
/// (id = `3 * center + state`); they absorb every triphone without a state
/// of its own. Higher ids belong to individual triphone states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TiedStateMap {
    num_phones: usize,
    specific: std::collections::BTreeMap<(Triphone, u8), TiedId>,
    owners: Vec<(PhoneId, u8)>,
}

impl TiedStateMap {
    /// Pure monophone tying: `S = 3 * phones`.
    pub fn monophone(num_phones: usize) -> Self {
        let owners = (0..num_phones)
            .flat_map(|c| (0..STATES_PER_PHONE as u8).map(move |s| (c, s)))
            .collect();
        Self {
            num_phones,
            specific: Default::default(),
            owners,
        }
    }

    pub(crate) fn insert(&mut self, tri: Triphone, state: u8) -> TiedId {
        let id = self.owners.len();
        self.owners.push((tri.center, state));
        self.specific.insert((tri, state), id);
        id
    }

    pub fn num_phones(&self) -> usize {
        self.num_phones
    }

    pub fn num_states(&self) -> usize {
        self.owners.len()
    }

    pub fn backoff(&self, center: PhoneId, state: u8) -> TiedId {
        center * STATES_PER_PHONE + state as usize
    }

    pub fn is_backoff(&self, id: TiedId) -> bool {
        id < self.num_phones * STATES_PER_PHONE
    }

    pub fn lookup(&self, tri: Triphone, state: u8) -> TiedId {
        self.specific
            .get(&(tri, state))
            .copied()
            .unwrap_or_else(|| self.backoff(tri.center, state))
    }

    pub fn center_phone(&self, id: TiedId) -> PhoneId {
        self.owners[id].0
    }

    pub fn hmm_state(&self, id: TiedId) -> u8 {
        self.owners[id].1
    }

    /// Triphone states with their own id, in id order.
    pub fn specific_entries(&self) -> impl Iterator<Item = (Triphone, u8, TiedId)> + '_ {
        let mut v: Vec<_> = self.specific.iter().map(|(&(t, s), &id)| (t, s, id)).collect();
        v.sort_by_key(|e| e.2);
        v.into_iter()
    }
}

/// Self-loop probability of every tied state; the forward probability is its complement.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmTopology {
    self_loop: Vec<f64>,
}

impl HmmTopology {
    pub fn uniform(states: usize, self_loop: f64) -> Self {
        Self {
            self_loop: vec![self_loop; states],
        }
    }

    pub fn new(self_loop: Vec<f64>) -> Result<Self> {
        if self_loop.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Invalid(
                "self-loop probabilities must lie in (0, 1)".into(),
            ));
        }
        Ok(Self { self_loop })
    }

    pub fn num_states(&self) -> usize {
        self.self_loop.len()
    }

    pub fn self_loop(&self, id: TiedId) -> f64 {
        self.self_loop[id]
    }

    pub fn forward(&self, id: TiedId) -> f64 {
        1.0 - self.self_loop[id]
    }

    pub fn log_self_loop(&self, id: TiedId) -> f64 {
        self.self_loop[id].ln()
    }

    pub fn log_forward(&self, id: TiedId) -> f64 {
        (1.0 - self.self_loop[id]).ln()
    }
}

const MODEL_MAGIC: &str = "DTEA";
const MODEL_VERSION: u32 = 1;

/// Phone inventory, tying, topology and emissions of a trained HMM-GMM.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    pub phone_set: PhoneSet,
    pub tied: TiedStateMap,
    pub topology: HmmTopology,
    pub emission: GmmEmission,
}

impl AcousticModel {
    pub fn new(
        phone_set: PhoneSet,
        tied: TiedStateMap,
        topology: HmmTopology,
        emission: GmmEmission,
    ) -> Result<Self> {
        let s = tied.num_states();
        if tied.num_phones() != phone_set.len() {
            return Err(Error::Dimension {
                what: "tied-state map phones",
                expected: phone_set.len(),
                found: tied.num_phones(),
            });
        }
        if topology.num_states() != s || emission.num_states() != s {
            return Err(Error::Dimension {
                what: "model states",
                expected: s,
                found: topology.num_states().min(emission.num_states()),
            });
        }
        Ok(Self {
            phone_set,
            tied,
            topology,
            emission,
        })
    }

    pub fn num_states(&self) -> usize {
        self.tied.num_states()
    }

    /// Writes the `DTEA` file. Mixture and transition parameters are stored as
    /// f64 so that weights keep summing to one within 1e-8 after a round trip.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, path);
        w.header(b"DTEA", MODEL_VERSION)?;
        w.u32(self.phone_set.len() as u32)?;
        for p in self.phone_set.symbols() {
            w.str(p)?;
        }
        w.u32(self.tied.num_states() as u32)?;
        let specific: Vec<_> = self.tied.specific_entries().collect();
        w.u32(specific.len() as u32)?;
        for (tri, state, id) in specific {
            w.u32(tri.left as u32)?;
            w.u32(tri.center as u32)?;
            w.u32(tri.right as u32)?;
            w.u8(state)?;
            w.u32(id as u32)?;
        }
        for id in 0..self.num_states() {
            w.u64(self.topology.self_loop(id).to_bits())?;
        }
        w.u32(self.emission.dim() as u32)?;
        for g in self.emission.states() {
            w.u32(g.num_components() as u32)?;
            for m in 0..g.num_components() {
                w.u64(g.weights()[m].to_bits())?;
            }
            for m in 0..g.num_components() {
                for &v in g.mean(m) {
                    w.u64(v.to_bits())?;
                }
            }
            for m in 0..g.num_components() {
                for &v in g.var(m) {
                    w.u64(v.to_bits())?;
                }
            }
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, path);
        r.header(MODEL_MAGIC, MODEL_VERSION)?;
        let n_phones = r.count(1 << 16, "phone")?;
        let symbols = (0..n_phones).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let sil = symbols.first().ok_or(Error::Empty("phone set"))?.clone();
        let phone_set = PhoneSet::new(&symbols, &sil)?;

        let n_states = r.count(1 << 24, "tied state")?;
        let n_specific = r.count(1 << 24, "triphone entry")?;
        let mut tied = TiedStateMap::monophone(n_phones);
        if n_states != tied.num_states() + n_specific {
            return Err(Error::Invalid(format!(
                "{}: inconsistent tied-state counts",
                path.display()
            )));
        }
        for _ in 0..n_specific {
            let (l, c, rr) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            let state = r.u8()?;
            let id = r.u32()? as usize;
            if l >= n_phones || c >= n_phones || rr >= n_phones || state as usize >= STATES_PER_PHONE {
                return Err(Error::Invalid(format!("{}: bad triphone entry", path.display())));
            }
            if tied.insert(Triphone::new(l, c, rr), state) != id {
                return Err(Error::Invalid(format!("{}: tied ids out of order", path.display())));
            }
        }
        let self_loop = (0..n_states)
            .map(|_| r.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        let topology = HmmTopology::new(self_loop)?;
        let dim = r.count(1 << 16, "feature dimension")?;
        let mut states = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let m = r.count(1 << 12, "mixture component")?;
            let mut read = |n: usize| {
                (0..n)
                    .map(|_| r.u64().map(f64::from_bits))
                    .collect::<Result<Vec<_>>>()
            };
            let weights = read(m)?;
            let means = read(m * dim)?;
            let vars = read(m * dim)?;
            states.push(DiagGmm::new(weights, means, vars)?);
        }
        r.expect_eof()?;
        Self::new(phone_set, tied, topology, GmmEmission::new(states)?)
    }
}

const ALIGN_MAGIC: &str = "DTEL";
const ALIGN_VERSION: u32 = 1;

/// Per-frame tied-state and center-phone labels of one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub utterance_id: String,
    pub tied: Vec<TiedId>,
    pub phones: Vec<PhoneId>,
}

impl Alignment {
    pub fn len(&self) -> usize {
        self.tied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tied.is_empty()
    }

    /// Phone sequence with consecutive repeats of the same tied-state run collapsed
    /// at phone boundaries (a new phone starts whenever the HMM state returns to 0).
    pub fn phone_sequence(&self, map: &TiedStateMap) -> Vec<PhoneId> {
        let mut out = Vec::new();
        let mut prev: Option<TiedId> = None;
        for &id in &self.tied {
            let starts = match prev {
                None => true,
                Some(p) => p != id && map.hmm_state(id) == 0,
            };
            if starts {
                out.push(map.center_phone(id));
            }
            prev = Some(id);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, path);
        w.header(b"DTEL", ALIGN_VERSION)?;
        w.u32(self.tied.len() as u32)?;
        for (&t, &p) in self.tied.iter().zip(&self.phones) {
            w.u32(t as u32)?;
            w.u16(p as u16)?;
        }
        w.finish()
    }

    /// Loads a `DTEL` file; the utterance id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, path);
        r.header(ALIGN_MAGIC, ALIGN_VERSION)?;
        let n = r.count(1 << 26, "frame")?;
        let mut tied = Vec::with_capacity(n);
        let mut phones = Vec::with_capacity(n);
        for _ in 0..n {
            tied.push(r.u32()? as usize);
            phones.push(r.u16()? as usize);
        }
        r.expect_eof()?;
        let utterance_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        Ok(Self {
            utterance_id,
            tied,
            phones,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monophone_map_layout() {
        let m = TiedStateMap::monophone(4);
        assert_eq!(m.num_states(), 12);
        let tri = Triphone::new(1, 2, 3);
        assert_eq!(m.lookup(tri, 1), 7);
        assert_eq!(m.center_phone(7), 2);
        assert_eq!(m.hmm_state(7), 1);
        assert!(m.is_backoff(11));
    }

    #[test]
    fn context_reads_silence_at_edges() {
        let seq = [4, 5, 6];
        assert_eq!(Triphone::in_context(&seq, 0, 0), Triphone::new(0, 4, 5));
        assert_eq!(Triphone::in_context(&seq, 2, 0), Triphone::new(5, 6, 0));
        assert_eq!(Triphone::in_context(&[3], 0, 0), Triphone::new(0, 3, 0));
    }

    #[test]
    fn alignment_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Alignment {
            utterance_id: "u1".into(),
            tied: vec![0, 0, 1, 2, 40000],
            phones: vec![0, 0, 0, 0, 9],
        };
        let p = dir.path().join("u1.ali");
        a.save(&p).unwrap();
        assert_eq!(Alignment::load(&p).unwrap(), a);
        assert_eq!(std::fs::read(&p).unwrap().len(), 12 + 5 * 6);
    }

    #[test]
    fn phone_sequence_from_alignment() {
        let map = TiedStateMap::monophone(3);
        // sil(0,1,2) p1(3,4,5) p1(3,4,5) sil(0,1,2)
        let tied = vec![0, 1, 2, 3, 3, 4, 5, 3, 4, 5, 5, 0, 1, 2];
        let phones = tied.iter().map(|&t| map.center_phone(t)).collect();
        let a = Alignment {
            utterance_id: "x".into(),
            tied,
            phones,
        };
        assert_eq!(a.phone_sequence(&map), vec![0, 1, 1, 0]);
    }
}
