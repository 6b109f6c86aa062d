//! Phone inventory, pronunciation lexicon, utterance manifests and audio I/O.
//!
//! On-disk formats:
//!
//! * phone set: one symbol per line, the first line is the silence symbol
//!   written as `!sil <symbol>`;
//! * lexicon: `<word>\t<phone> <phone> ...`, repeated lines add alternate
//!   pronunciations;
//! * manifest: header lines `#phones <path>`, `#lexicon <path>` and an
//!   optional `#split <train|dev|test>`, then one `<id>\t<audio>\t<words>`
//!   record per line. Paths are relative to the manifest's directory.

mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub use synth::{generate_synthetic_corpus, SynthCorpus, SynthSpec};

/// Index into a [`PhoneSet`].
pub type PhoneId = usize;

/// Ordered phone inventory. The silence phone always has index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneSet {
    phones: Vec<String>,
    index: HashMap<String, PhoneId>,
}

impl PhoneSet {
    /// Builds a phone set; `silence` is moved to index 0, the others keep their order.
    pub fn new<S: AsRef<str>>(phones: &[S], silence: &str) -> Result<Self> {
        let mut ordered = vec![silence.to_string()];
        ordered.extend(
            phones
                .iter()
                .map(|p| p.as_ref().to_string())
                .filter(|p| p != silence),
        );
        if !phones.iter().any(|p| p.as_ref() == silence) {
            return Err(Error::Invalid(format!(
                "silence symbol `{silence}` is not in the phone list"
            )));
        }
        let mut index = HashMap::with_capacity(ordered.len());
        for (i, p) in ordered.iter().enumerate() {
            if p.is_empty() || p.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!("invalid phone symbol `{p}`")));
            }
            if index.insert(p.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate phone symbol `{p}`")));
            }
        }
        Ok(Self {
            phones: ordered,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }

    pub fn silence(&self) -> PhoneId {
        0
    }

    pub fn silence_symbol(&self) -> &str {
        &self.phones[0]
    }

    pub fn id(&self, symbol: &str) -> Option<PhoneId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: PhoneId) -> &str {
        &self.phones[id]
    }

    pub fn symbols(&self) -> &[String] {
        &self.phones
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, first) = lines.next().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "empty phone set".into(),
        })?;
        let silence = first.strip_prefix("!sil ").map(str::trim).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: "first line must be `!sil <symbol>`".into(),
        })?;
        let mut phones = vec![silence.to_string()];
        for (line, l) in lines {
            if l.starts_with("!sil") {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: "silence may only be declared on the first line".into(),
                });
            }
            phones.push(l.to_string());
        }
        Self::new(&phones, silence).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("!sil {}\n", self.phones[0]);
        for p in &self.phones[1..] {
            s.push_str(p);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }
}

/// Word to pronunciation map. Pronunciations are stored as phone ids in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<Vec<PhoneId>>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, word: &str, pron: Vec<PhoneId>) -> Result<()> {
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::Invalid(format!("invalid word `{word}`")));
        }
        if pron.is_empty() {
            return Err(Error::Invalid(format!("empty pronunciation for `{word}`")));
        }
        self.entries.entry(word.to_string()).or_default().push(pron);
        Ok(())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[Vec<PhoneId>]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str, path: &Path, phones: &PhoneSet) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (word, rest) = line
                .split_once('\t')
                .or_else(|| line.split_once(char::is_whitespace))
                .ok_or_else(|| err(format!("expected `<word>\\t<phones>`, got `{line}`")))?;
            let pron = rest
                .split_whitespace()
                .map(|p| {
                    phones
                        .id(p)
                        .ok_or_else(|| err(format!("unknown phone `{p}` in `{word}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            lex.add(word.trim(), pron).map_err(|e| err(e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path, phones: &PhoneSet) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, phones)
    }

    pub fn to_text(&self, phones: &PhoneSet) -> String {
        let mut s = String::new();
        for (word, prons) in &self.entries {
            for pron in prons {
                let syms: Vec<&str> = pron.iter().map(|&p| phones.symbol(p)).collect();
                s.push_str(&format!("{word}\t{}\n", syms.join(" ")));
            }
        }
        s
    }

    pub fn save(&self, path: &Path, phones: &PhoneSet) -> Result<()> {
        write_text(path, &self.to_text(phones))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// In-memory audio with its transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub transcript: Vec<String>,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        samples: Vec<f32>,
        sample_rate: u32,
        transcript: Vec<String>,
    ) -> Result<Self> {
        let id = id.into();
        if sample_rate == 0 {
            return Err(Error::Invalid(format!("utterance `{id}`: sample rate is 0")));
        }
        if samples.is_empty() {
            return Err(Error::Invalid(format!("utterance `{id}`: no audio")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("audio of `{id}`")));
        }
        Ok(Self {
            id,
            samples,
            sample_rate,
            transcript,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub id: String,
    /// Relative to the manifest directory.
    pub audio: PathBuf,
    pub transcript: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub split: Split,
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub phones_path: PathBuf,
    pub lexicon_path: PathBuf,
    pub phone_set: PhoneSet,
    pub lexicon: Lexicon,
    pub records: Vec<UtteranceRecord>,
}

impl CorpusManifest {
    pub fn audio_path(&self, rec: &UtteranceRecord) -> PathBuf {
        self.root.join(&rec.audio)
    }

    pub fn load_utterance(&self, rec: &UtteranceRecord) -> Result<Utterance> {
        let (samples, rate) = read_wav(&self.audio_path(rec))?;
        Utterance::new(rec.id.clone(), samples, rate, rec.transcript.clone())
    }

    /// Writes the manifest text; phone set and lexicon files are not touched.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = format!(
            "#phones {}\n#lexicon {}\n#split {}\n",
            self.phones_path.display(),
            self.lexicon_path.display(),
            self.split
        );
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\n",
                r.id,
                r.audio.display(),
                r.transcript.join(" ")
            ));
        }
        write_text(path, &s)
    }
}

/// Parses and validates a manifest, loading its phone set and lexicon.
///
/// The split comes from a `#split` header, else from the file stem.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut phones_path = None;
    let mut lexicon_path = None;
    let mut split = None;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            let (key, val) = h.split_once(' ').unwrap_or((h, ""));
            let val = val.trim();
            match key {
                "phones" => phones_path = Some(PathBuf::from(val)),
                "lexicon" => lexicon_path = Some(PathBuf::from(val)),
                "split" => {
                    split = Some(val.parse::<Split>().map_err(|e| perr(line_no, e.to_string()))?)
                }
                _ => {}
            }
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let (Some(id), Some(audio)) = (cols.next(), cols.next()) else {
            return Err(perr(
                line_no,
                "expected `<id>\\t<audio path>\\t<transcript>`".into(),
            ));
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(perr(line_no, "empty utterance id".into()));
        }
        let transcript: Vec<String> = cols
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(str::to_string)
            .collect();
        rows.push((
            line_no,
            UtteranceRecord {
                id: id.to_string(),
                audio: PathBuf::from(audio.trim()),
                transcript,
            },
        ));
    }

    let phones_path = phones_path.ok_or_else(|| perr(1, "missing `#phones` header".into()))?;
    let lexicon_path = lexicon_path.ok_or_else(|| perr(1, "missing `#lexicon` header".into()))?;
    let split = match split {
        Some(s) => s,
        None => path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(1, "missing `#split` header and file stem is not a split".into()))?,
    };
    let phone_set = PhoneSet::load(&root.join(&phones_path))?;
    let lexicon = Lexicon::load(&root.join(&lexicon_path), &phone_set)?;

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for (line_no, rec) in rows {
        if !seen.insert(rec.id.clone()) {
            return Err(perr(line_no, format!("duplicate utterance id `{}`", rec.id)));
        }
        if let Some(w) = rec.transcript.iter().find(|w| !lexicon.contains(w)) {
            return Err(Error::UnknownWord {
                word: w.clone(),
                utterance: rec.id.clone(),
            });
        }
        let audio = root.join(&rec.audio);
        if !audio.is_file() {
            return Err(Error::MissingFile {
                id: rec.id.clone(),
                path: audio,
            });
        }
        records.push(rec);
    }

    Ok(CorpusManifest {
        split,
        root,
        phones_path,
        lexicon_path,
        phone_set,
        lexicon,
        records,
    })
}

/// Expands words to phones using each word's first pronunciation, with
/// silence at both ends and, if `inter_word_silence`, between words.
pub fn expand_transcript<S: AsRef<str>>(
    transcript: &[S],
    lexicon: &Lexicon,
    phone_set: &PhoneSet,
    inter_word_silence: bool,
) -> Result<Vec<PhoneId>> {
    let sil = phone_set.silence();
    let mut out = vec![sil];
    for (i, w) in transcript.iter().enumerate() {
        let w = w.as_ref();
        let pron = lexicon
            .pronunciations(w)
            .and_then(|p| p.first())
            .ok_or_else(|| Error::UnknownWord {
                word: w.to_string(),
                utterance: String::new(),
            })?;
        if i > 0 && inter_word_silence {
            out.push(sil);
        }
        out.extend_from_slice(pron);
    }
    if !transcript.is_empty() {
        out.push(sil);
    }
    Ok(out)
}

/// Reads a mono WAV file as f32 samples in [-1, 1].
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Invalid(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::Invalid(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bits",
                path.display()
            )))
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Writes 16-bit PCM mono; samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v)?;
    }
    w.finalize()?;
    Ok(())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
