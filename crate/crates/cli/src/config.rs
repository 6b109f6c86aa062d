//! Experiment configuration: one `key = value` file with section prefixes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dte_core::corpus::SynthSpec;
use dte_core::decoder::{DecodeParams, LikelihoodMode};
use dte_core::dnn::{Activation, TrainSchedule};
use dte_core::embedding::{DteConfig, ProjectionKind};
use dte_core::features::FrontEndConfig;
use dte_core::hmm::HmmConfig;
use dte_core::kv::KvConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum System {
    HmmGmm,
    HmmDnn,
    HmmDnnW,
    HmmDnnWD,
    DtePca,
    DteLda,
}

impl System {
    pub const ALL: [System; 6] = [
        System::HmmGmm,
        System::HmmDnn,
        System::HmmDnnW,
        System::HmmDnnWD,
        System::DtePca,
        System::DteLda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::HmmGmm => "hmm-gmm",
            System::HmmDnn => "hmm-dnn",
            System::HmmDnnW => "hmm-dnn-w",
            System::HmmDnnWD => "hmm-dnn-w+d",
            System::DtePca => "dte-pca",
            System::DteLda => "dte-lda",
        }
    }

    /// Row label used in reports.
    pub fn title(self) -> &'static str {
        match self {
            System::HmmGmm => "HMM+GMM",
            System::HmmDnn => "HMM+DNN",
            System::HmmDnnW => "HMM+DNN-W",
            System::HmmDnnWD => "HMM+DNN-W+D",
            System::DtePca => "HMM+DTE-PCA+DNN",
            System::DteLda => "HMM+DTE-LDA+DNN",
        }
    }

    pub fn projection(self) -> Option<ProjectionKind> {
        match self {
            System::DtePca => Some(ProjectionKind::Pca),
            System::DteLda => Some(ProjectionKind::Lda),
            _ => None,
        }
    }

    pub fn is_stage_one(self) -> bool {
        matches!(self, System::HmmDnn | System::HmmDnnW | System::HmmDnnWD)
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for System {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        System::ALL
            .into_iter()
            .find(|sys| sys.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = System::ALL.iter().map(|s| s.name()).collect();
                format!("unknown system `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Network shape and training schedule of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub schedule: TrainSchedule,
}

impl NetConfig {
    fn from_kv(kv: &KvConfig, default_hidden: Vec<usize>, seed: u64) -> CliResult<Self> {
        let d = TrainSchedule::default();
        let hidden = kv.get_list("hidden")?.unwrap_or(default_hidden);
        let activation = kv.get_or("activation", "relu".to_string())?.parse()?;
        let schedule = TrainSchedule {
            learning_rate: kv.get_or("lr", d.learning_rate)?,
            decay: kv.get_or("decay", d.decay)?,
            patience: kv.get_or("patience", d.patience)?,
            max_epochs: kv.get_or("epochs", d.max_epochs)?,
            batch_size: kv.get_or("batch", d.batch_size)?,
            seed,
        };
        schedule.validate()?;
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(CliError::Config(format!(
                "{}: hidden layer sizes must be non-empty and >= 1",
                kv.source().display()
            )));
        }
        Ok(Self {
            hidden,
            activation,
            schedule,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub lm_alpha: f64,
    pub lm_scales: Vec<f32>,
    pub penalties: Vec<f32>,
    pub mode: LikelihoodMode,
    pub beam: Option<f32>,
}

impl DecodeConfig {
    pub fn base_params(&self) -> DecodeParams {
        DecodeParams {
            lm_scale: self.lm_scales[0],
            insertion_penalty: self.penalties[0],
            mode: self.mode,
            beam: self.beam,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub source: PathBuf,
    pub name: String,
    pub seed: u64,
    /// Directory holding `{split}.manifest`, `phones.txt` and `lexicon.txt`.
    pub corpus_dir: Option<PathBuf>,
    /// Generate the corpus with [`SynthSpec`] when running the whole chain.
    pub synth: Option<SynthSpec>,
    /// Silence between words when expanding transcripts.
    pub inter_word_silence: bool,
    pub frontend: FrontEndConfig,
    pub hmm: HmmConfig,
    /// Stage-one network (`hmm-dnn`, and stage one of the DTE systems).
    pub dnn1: NetConfig,
    pub dnn1_context: usize,
    pub wide: NetConfig,
    pub wide_context: usize,
    /// Hidden layers of `hmm-dnn-w+d`.
    pub deep_hidden: Vec<usize>,
    pub dte: DteConfig,
    /// Fraction of train frames used to fit projections.
    pub projection_fraction: f64,
    pub dnn2: NetConfig,
    pub decode: DecodeConfig,
    pub systems: Vec<System>,
}

fn section(kv: &KvConfig, name: &str) -> KvConfig {
    kv.section(name)
}

fn finish(kv: &KvConfig) -> CliResult<()> {
    kv.reject_unused().map_err(|e| CliError::Config(e.to_string()))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let kv = KvConfig::load(path).map_err(|e| match e {
            dte_core::Error::Io { .. } => CliError::Config(format!("cannot read config: {e}")),
            other => CliError::Config(other.to_string()),
        })?;
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &KvConfig) -> CliResult<Self> {
        let source = kv.source().to_path_buf();
        let base = source.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = kv.get_or(
            "name",
            source
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("experiment")
                .to_string(),
        )?;
        let seed: u64 = kv.get_or("seed", 1)?;

        let corpus = section(kv, "corpus");
        let corpus_dir = corpus.get::<PathBuf>("dir")?.map(|p| base.join(p));
        let mut inter_word_silence = corpus.get_or("inter_word_silence", false)?;
        finish(&corpus)?;

        let synth_kv = section(kv, "synth");
        let synth_enabled = synth_kv.get_or("enabled", corpus_dir.is_none())?;
        let synth = if synth_enabled {
            let spec = SynthSpec::from_kv(&synth_kv)?;
            inter_word_silence = spec.inter_word_silence;
            Some(spec)
        } else {
            None
        };
        finish(&synth_kv)?;

        let fe = section(kv, "frontend");
        let frontend = FrontEndConfig::from_kv(&fe)?;
        finish(&fe)?;

        let hmm_kv = section(kv, "hmm");
        let hmm = HmmConfig::from_kv(&hmm_kv)?;
        finish(&hmm_kv)?;

        let d1 = section(kv, "dnn1");
        let dnn1 = NetConfig::from_kv(&d1, vec![256; 4], seed.wrapping_add(11))?;
        let dnn1_context = d1.get_or("context", 10usize)?;
        finish(&d1)?;

        let w = section(kv, "wide");
        let wide = NetConfig::from_kv(&w, dnn1.hidden.clone(), seed.wrapping_add(13))?;
        let wide_context = w.get_or("context", 24usize)?;
        let deep_hidden = w
            .get_list("deep_hidden")?
            .unwrap_or_else(|| vec![wide.hidden[0]; 8]);
        finish(&w)?;

        let dte_kv = section(kv, "dte");
        let mut dte = DteConfig::from_kv(&dte_kv)?;
        let projection_fraction = dte_kv.get_or("fraction", 0.1f64)?;
        finish(&dte_kv)?;
        if !(projection_fraction > 0.0 && projection_fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "dte.fraction must be in (0, 1], got {projection_fraction}"
            )));
        }
        if dte.context != dnn1_context {
            if dte_kv_has_context(kv) {
                return Err(CliError::Config(format!(
                    "dte.context ({}) must equal dnn1.context ({dnn1_context})",
                    dte.context
                )));
            }
            dte.context = dnn1_context;
        }
        if dte.dim > *dnn1.hidden.last().unwrap() {
            return Err(CliError::Config(format!(
                "dte.dim ({}) exceeds the last dnn1.hidden layer ({})",
                dte.dim,
                dnn1.hidden.last().unwrap()
            )));
        }

        let d2 = section(kv, "dnn2");
        let dnn2 = NetConfig::from_kv(&d2, dnn1.hidden.clone(), seed.wrapping_add(17))?;
        finish(&d2)?;

        let dec = section(kv, "decode");
        let decode = DecodeConfig {
            lm_alpha: dec.get_or("lm_alpha", 1.0)?,
            lm_scales: dec.get_list("lm_scales")?.unwrap_or_else(|| vec![1.0]),
            penalties: dec.get_list("penalties")?.unwrap_or_else(|| vec![0.0]),
            mode: dec.get_or("mode", "posterior".to_string())?.parse()?,
            beam: dec.get("beam")?,
        };
        finish(&dec)?;
        if decode.lm_scales.is_empty() || decode.penalties.is_empty() {
            return Err(CliError::Config("decode.lm_scales and decode.penalties must be non-empty".into()));
        }
        decode.base_params().validate()?;
        if decode.mode == LikelihoodMode::Gmm {
            return Err(CliError::Config(
                "decode.mode applies to network systems; use posterior or posterior-over-prior".into(),
            ));
        }

        let systems = match kv.get_list::<String>("systems")? {
            None => System::ALL.to_vec(),
            Some(names) => names
                .iter()
                .map(|n| n.parse::<System>().map_err(CliError::Config))
                .collect::<CliResult<Vec<_>>>()?,
        };
        finish(kv)?;

        if corpus_dir.is_none() && synth.is_none() {
            return Err(CliError::Config(
                "either corpus.dir or a synthetic corpus (synth.enabled = true) is required".into(),
            ));
        }
        if let Some(s) = &synth {
            if s.sample_rate != frontend.sample_rate {
                return Err(CliError::Config(format!(
                    "synth.sample_rate ({}) differs from frontend.sample_rate ({})",
                    s.sample_rate, frontend.sample_rate
                )));
            }
        }

        Ok(Self {
            source,
            name,
            seed,
            corpus_dir,
            synth,
            inter_word_silence,
            frontend,
            hmm,
            dnn1,
            dnn1_context,
            wide,
            wide_context,
            deep_hidden,
            dte,
            projection_fraction,
            dnn2,
            decode,
            systems,
        })
    }

    /// Reseeds every seeded stage from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dnn1.schedule.seed = seed.wrapping_add(11);
        self.wide.schedule.seed = seed.wrapping_add(13);
        self.dnn2.schedule.seed = seed.wrapping_add(17);
        self
    }

    /// Context radius of a network system's input window.
    pub fn context(&self, system: System) -> usize {
        match system {
            System::HmmDnnW | System::HmmDnnWD => self.wide_context,
            _ => self.dnn1_context,
        }
    }

    /// Network shape and schedule of a network system.
    pub fn net(&self, system: System) -> NetConfig {
        match system {
            System::HmmDnnW => self.wide.clone(),
            System::HmmDnnWD => NetConfig {
                hidden: self.deep_hidden.clone(),
                ..self.wide.clone()
            },
            System::DtePca | System::DteLda => self.dnn2.clone(),
            _ => self.dnn1.clone(),
        }
    }

    /// Seed of a network's weight initialization.
    pub fn init_seed(&self, system: System) -> u64 {
        self.seed.wrapping_mul(31).wrapping_add(system as u64 + 101)
    }
}

fn dte_kv_has_context(kv: &KvConfig) -> bool {
    kv.contains("dte.context")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<ExperimentConfig> {
        let kv = KvConfig::parse(text, "/tmp/exp/t.conf").map_err(|e| CliError::Config(e.to_string()))?;
        ExperimentConfig::from_kv(&kv)
    }

    #[test]
    fn defaults_fill_a_minimal_config() {
        let cfg = parse("seed = 3\ndnn1.hidden = 16, 16\ndte.dim = 8\n").unwrap();
        assert_eq!(cfg.name, "t");
        assert!(cfg.synth.is_some());
        assert_eq!(cfg.systems, System::ALL.to_vec());
        assert_eq!(cfg.dte.context, cfg.dnn1_context);
        assert_eq!(cfg.context(System::HmmDnnWD), cfg.wide_context);
        assert_eq!(cfg.context(System::DtePca), cfg.dnn1_context);
        assert_eq!(cfg.net(System::HmmDnnWD).hidden, cfg.deep_hidden);
        assert_eq!(cfg.net(System::DteLda), cfg.dnn2);
    }

    #[test]
    fn external_corpus_disables_synthesis() {
        let cfg = parse("corpus.dir = data\ndte.dim = 8\n").unwrap();
        assert!(cfg.synth.is_none());
        assert_eq!(cfg.corpus_dir.as_deref(), Some(Path::new("/tmp/exp/data")));
    }

    #[test]
    fn reseeding_changes_every_schedule() {
        let a = parse("seed = 1\ndte.dim = 8\n").unwrap();
        let b = a.clone().with_seed(2);
        assert_eq!(b.seed, 2);
        assert_ne!(a.dnn1.schedule.seed, b.dnn1.schedule.seed);
        assert_ne!(a.wide.schedule.seed, b.wide.schedule.seed);
        assert_ne!(a.dnn2.schedule.seed, b.dnn2.schedule.seed);
        let seeds: std::collections::BTreeSet<u64> = System::ALL.iter().map(|&s| b.init_seed(s)).collect();
        assert_eq!(seeds.len(), System::ALL.len());
    }

    #[test]
    fn system_names_parse_back() {
        for s in System::ALL {
            assert_eq!(s.name().parse::<System>().unwrap(), s);
        }
        assert!("dte".parse::<System>().unwrap_err().contains("dte-pca"));
    }
}
