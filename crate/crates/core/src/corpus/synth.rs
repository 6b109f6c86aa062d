//! Synthetic corpus: every phone is a stationary sum of sinusoids, utterances
//! are random word strings over a random lexicon, white Gaussian noise is
//! added at a fixed SNR.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    write_text, write_wav, CorpusManifest, Lexicon, PhoneId, PhoneSet, Split, UtteranceRecord,
};
use crate::error::{Error, Result};
use crate::kv::KvConfig;

/// Generator settings. Durations are counted in frame shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub sample_rate: u32,
    pub frame_shift_ms: f32,
    /// Phone count including silence.
    pub phones: usize,
    pub words: usize,
    pub word_min_phones: usize,
    pub word_max_phones: usize,
    pub utt_min_words: usize,
    pub utt_max_words: usize,
    pub train_utts: usize,
    pub dev_utts: usize,
    pub test_utts: usize,
    pub min_dur: usize,
    pub max_dur: usize,
    pub sil_min_dur: usize,
    pub sil_max_dur: usize,
    /// `f32::INFINITY` disables noise.
    pub snr_db: f32,
    /// RMS level of every non-silence prototype.
    pub level: f32,
    pub inter_word_silence: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frame_shift_ms: 10.0,
            phones: 8,
            words: 12,
            word_min_phones: 2,
            word_max_phones: 4,
            utt_min_words: 2,
            utt_max_words: 5,
            train_utts: 60,
            dev_utts: 10,
            test_utts: 10,
            min_dur: 4,
            max_dur: 10,
            sil_min_dur: 6,
            sil_max_dur: 12,
            snr_db: 10.0,
            level: 0.1,
            inter_word_silence: false,
        }
    }
}

impl SynthSpec {
    /// Reads keys with the names of the fields; absent keys keep their defaults.
    /// `snr_db = inf` turns noise off.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let snr_db = match kv.raw("snr_db") {
            Some(v) if v.eq_ignore_ascii_case("inf") => f32::INFINITY,
            _ => kv.get_or("snr_db", d.snr_db)?,
        };
        let spec = Self {
            sample_rate: kv.get_or("sample_rate", d.sample_rate)?,
            frame_shift_ms: kv.get_or("frame_shift_ms", d.frame_shift_ms)?,
            phones: kv.get_or("phones", d.phones)?,
            words: kv.get_or("words", d.words)?,
            word_min_phones: kv.get_or("word_min_phones", d.word_min_phones)?,
            word_max_phones: kv.get_or("word_max_phones", d.word_max_phones)?,
            utt_min_words: kv.get_or("utt_min_words", d.utt_min_words)?,
            utt_max_words: kv.get_or("utt_max_words", d.utt_max_words)?,
            train_utts: kv.get_or("train_utts", d.train_utts)?,
            dev_utts: kv.get_or("dev_utts", d.dev_utts)?,
            test_utts: kv.get_or("test_utts", d.test_utts)?,
            min_dur: kv.get_or("min_dur", d.min_dur)?,
            max_dur: kv.get_or("max_dur", d.max_dur)?,
            sil_min_dur: kv.get_or("sil_min_dur", d.sil_min_dur)?,
            sil_max_dur: kv.get_or("sil_max_dur", d.sil_max_dur)?,
            snr_db,
            level: kv.get_or("level", d.level)?,
            inter_word_silence: kv.get_or("inter_word_silence", d.inter_word_silence)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.sample_rate == 0 || !(self.frame_shift_ms > 0.0) {
            return fail("sample_rate and frame_shift_ms must be positive");
        }
        if self.shift_samples() == 0 {
            return fail("frame shift is shorter than one sample");
        }
        if self.phones < 3 {
            return fail("phones must be >= 3 (including silence)");
        }
        if self.words < 2 {
            return fail("words must be >= 2");
        }
        if self.word_min_phones == 0 || self.word_max_phones < self.word_min_phones {
            return fail("need 1 <= word_min_phones <= word_max_phones");
        }
        if self.utt_min_words == 0 || self.utt_max_words < self.utt_min_words {
            return fail("need 1 <= utt_min_words <= utt_max_words");
        }
        if self.train_utts == 0 || self.dev_utts == 0 || self.test_utts == 0 {
            return fail("every split needs at least one utterance");
        }
        if self.min_dur < 3 || self.max_dur < self.min_dur {
            return fail("need 3 <= min_dur <= max_dur");
        }
        if self.sil_min_dur < 3 || self.sil_max_dur < self.sil_min_dur {
            return fail("need 3 <= sil_min_dur <= sil_max_dur");
        }
        if self.snr_db.is_nan() || !(self.level > 0.0 && self.level <= 0.5) {
            return fail("snr_db must be a number and level in (0, 0.5]");
        }
        let speech = (self.phones - 1) as f64;
        let distinct: f64 = (self.word_min_phones..=self.word_max_phones)
            .map(|n| speech.powi(n as i32))
            .sum();
        if (self.words as f64) > distinct {
            return fail("more words requested than distinct pronunciations exist");
        }
        Ok(())
    }

    pub fn shift_samples(&self) -> usize {
        (self.sample_rate as f32 * self.frame_shift_ms / 1000.0).round() as usize
    }

    fn utts(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_utts,
            Split::Dev => self.dev_utts,
            Split::Test => self.test_utts,
        }
    }
}

/// One emitted phone, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhoneSpan {
    pub phone: PhoneId,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub phone_set: PhoneSet,
    pub lexicon: Lexicon,
    pub manifests: BTreeMap<Split, CorpusManifest>,
    /// Ground-truth phone spans per utterance id.
    pub spans: BTreeMap<String, Vec<PhoneSpan>>,
}

impl SynthCorpus {
    pub fn manifest(&self, split: Split) -> &CorpusManifest {
        &self.manifests[&split]
    }

    /// Generating phone of every analysis frame: the phone under the frame's center sample.
    pub fn frame_labels(&self, id: &str, frame_len: usize, shift: usize, frames: usize) -> Vec<PhoneId> {
        let spans = &self.spans[id];
        (0..frames)
            .map(|t| {
                let c = t * shift + frame_len / 2;
                spans
                    .iter()
                    .find(|s| c < s.end)
                    .unwrap_or(spans.last().expect("non-empty spans"))
                    .phone
            })
            .collect()
    }
}

struct Prototype {
    partials: Vec<(f64, f64, f64)>,
}

impl Prototype {
    fn sample(&self, n: usize, rate: f64) -> f64 {
        self.partials
            .iter()
            .map(|&(f, a, ph)| a * (2.0 * std::f64::consts::PI * f * n as f64 / rate + ph).sin())
            .sum()
    }
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Generates the corpus into `out_dir` and returns it together with the
/// ground-truth phone spans. Output is a pure function of `(spec, seed)`.
pub fn generate_synthetic_corpus(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = spec.sample_rate as f64;

    let mut symbols = vec!["sil".to_string()];
    symbols.extend((1..spec.phones).map(|i| format!("p{i}")));
    let phone_set = PhoneSet::new(&symbols, "sil")?;

    let lo = mel(200.0);
    let hi = mel((rate / 2.0 * 0.85).min(7000.0));
    let mut protos = vec![Prototype { partials: vec![] }];
    for _ in 1..spec.phones {
        let k = rng.random_range(2..=3);
        let mut partials: Vec<(f64, f64, f64)> = (0..k)
            .map(|_| {
                let f = inv_mel(rng.random_range(lo..hi));
                let a = rng.random_range(0.5..1.0);
                let ph = rng.random_range(0.0..std::f64::consts::TAU);
                (f, a, ph)
            })
            .collect();
        let power: f64 = partials.iter().map(|p| p.1 * p.1 / 2.0).sum();
        let gain = spec.level as f64 / power.sqrt();
        for p in &mut partials {
            p.1 *= gain;
        }
        protos.push(Prototype { partials });
    }

    let mut lexicon = Lexicon::new();
    let mut seen = HashSet::new();
    let speech: Vec<PhoneId> = (1..spec.phones).collect();
    let mut words = Vec::with_capacity(spec.words);
    while words.len() < spec.words {
        let n = rng.random_range(spec.word_min_phones..=spec.word_max_phones);
        let pron: Vec<PhoneId> = (0..n).map(|_| *speech.choose(&mut rng).unwrap()).collect();
        if seen.insert(pron.clone()) {
            let name = format!("w{:02}", words.len());
            lexicon.add(&name, pron)?;
            words.push(name);
        }
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    phone_set.save(&out_dir.join("phones.txt"))?;
    lexicon.save(&out_dir.join("lexicon.txt"), &phone_set)?;

    let noise = if spec.snr_db.is_finite() {
        let sigma = spec.level as f64 / 10f64.powf(spec.snr_db as f64 / 20.0);
        Some(Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let shift = spec.shift_samples();

    let mut manifests = BTreeMap::new();
    let mut all_spans = BTreeMap::new();
    for split in Split::ALL {
        let mut records = Vec::new();
        let mut truth = String::new();
        for u in 0..spec.utts(split) {
            let id = format!("{}{:04}", split.name(), u);
            let n_words = rng.random_range(spec.utt_min_words..=spec.utt_max_words);
            let transcript: Vec<String> = (0..n_words)
                .map(|_| words.choose(&mut rng).unwrap().clone())
                .collect();

            let mut plan: Vec<(PhoneId, usize)> = Vec::new();
            plan.push((0, rng.random_range(spec.sil_min_dur..=spec.sil_max_dur)));
            for (wi, w) in transcript.iter().enumerate() {
                if wi > 0 && spec.inter_word_silence {
                    plan.push((0, rng.random_range(spec.sil_min_dur..=spec.sil_max_dur)));
                }
                for &p in &lexicon.pronunciations(w).unwrap()[0] {
                    plan.push((p, rng.random_range(spec.min_dur..=spec.max_dur)));
                }
            }
            plan.push((0, rng.random_range(spec.sil_min_dur..=spec.sil_max_dur)));

            let total: usize = plan.iter().map(|&(_, d)| d * shift).sum();
            let mut samples = Vec::with_capacity(total);
            let mut spans = Vec::with_capacity(plan.len());
            for &(p, d) in &plan {
                let start = samples.len();
                for n in start..start + d * shift {
                    samples.push(protos[p].sample(n, rate));
                }
                spans.push(PhoneSpan {
                    phone: p,
                    start,
                    end: samples.len(),
                });
            }
            if let Some(noise) = &noise {
                for s in &mut samples {
                    *s += noise.sample(&mut rng);
                }
            }
            let samples: Vec<f32> = samples.into_iter().map(|s| s as f32).collect();

            let audio = PathBuf::from("wav").join(split.name()).join(format!("{id}.wav"));
            write_wav(&out_dir.join(&audio), &samples, spec.sample_rate)?;
            let cells: Vec<String> = spans
                .iter()
                .map(|s| format!("{}:{}:{}", phone_set.symbol(s.phone), s.start, s.end))
                .collect();
            truth.push_str(&format!("{id}\t{}\n", cells.join(" ")));
            all_spans.insert(id.clone(), spans);
            records.push(UtteranceRecord {
                id,
                audio,
                transcript,
            });
        }
        let manifest = CorpusManifest {
            split,
            root: out_dir.to_path_buf(),
            phones_path: PathBuf::from("phones.txt"),
            lexicon_path: PathBuf::from("lexicon.txt"),
            phone_set: phone_set.clone(),
            lexicon: lexicon.clone(),
            records,
        };
        manifest.save(&out_dir.join(format!("{}.manifest", split.name())))?;
        write_text(&out_dir.join(format!("{}.truth", split.name())), &truth)?;
        manifests.insert(split, manifest);
    }

    Ok(SynthCorpus {
        phone_set,
        lexicon,
        manifests,
        spans: all_spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_specs() {
        let base = SynthSpec::default;
        let bad = [
            SynthSpec { words: 0, ..base() },
            SynthSpec { phones: 2, ..base() },
            SynthSpec { min_dur: 2, ..base() },
            SynthSpec { dev_utts: 0, ..base() },
            SynthSpec {
                phones: 3,
                word_max_phones: 1,
                word_min_phones: 1,
                words: 3,
                ..base()
            },
        ];
        for s in bad {
            assert!(s.validate().is_err(), "{s:?}");
        }
    }

    #[test]
    fn kv_reads_inf_snr() {
        let kv = KvConfig::parse("snr_db = inf\nwords = 5\n", "s").unwrap();
        let s = SynthSpec::from_kv(&kv).unwrap();
        assert!(s.snr_db.is_infinite());
        assert_eq!(s.words, 5);
        kv.reject_unused().unwrap();
    }
}
