//! Experiment directory layout: `exp/<name>/{features,models,align,embed,decode,reports}`.

use std::path::{Path, PathBuf};

use dte_core::corpus::Split;
use dte_core::embedding::ProjectionKind;

use crate::config::{ExperimentConfig, System};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
    corpus: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>, cfg: &ExperimentConfig) -> Self {
        let root = root.into();
        let corpus = cfg.corpus_dir.clone().unwrap_or_else(|| root.join("corpus"));
        Self { root, corpus }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_dir(&self) -> &Path {
        &self.corpus
    }

    pub fn manifest(&self, split: Split) -> PathBuf {
        self.corpus.join(format!("{}.manifest", split.name()))
    }

    pub fn features(&self, split: Split, id: &str) -> PathBuf {
        self.root.join("features").join(split.name()).join(format!("{id}.feat"))
    }

    pub fn norm_stats(&self) -> PathBuf {
        self.root.join("features").join("norm.stats")
    }

    pub fn mono_model(&self) -> PathBuf {
        self.root.join("models").join("mono.gmm")
    }

    pub fn tri_model(&self) -> PathBuf {
        self.root.join("models").join("tri.gmm")
    }

    pub fn lm(&self) -> PathBuf {
        self.root.join("models").join("phone.lm")
    }

    pub fn net(&self, system: System) -> PathBuf {
        self.root.join("models").join(format!("{}.net", system.name()))
    }

    pub fn alignment(&self, split: Split, id: &str) -> PathBuf {
        self.root.join("align").join(split.name()).join(format!("{id}.ali"))
    }

    pub fn projection(&self, kind: ProjectionKind) -> PathBuf {
        self.root.join("embed").join(format!("{}.proj", kind.name()))
    }

    pub fn dte(&self, kind: ProjectionKind, split: Split, id: &str) -> PathBuf {
        self.root
            .join("embed")
            .join(kind.name())
            .join(split.name())
            .join(format!("{id}.dte"))
    }

    pub fn decode_dir(&self, system: System) -> PathBuf {
        self.root.join("decode").join(system.name())
    }

    pub fn hypotheses(&self, system: System, split: Split) -> PathBuf {
        self.decode_dir(system).join(format!("{}.hyp", split.name()))
    }

    pub fn frame_predictions(&self, system: System, split: Split) -> PathBuf {
        self.decode_dir(system).join(format!("{}.frames", split.name()))
    }

    pub fn decode_params(&self, system: System) -> PathBuf {
        self.decode_dir(system).join("params.txt")
    }

    pub fn report(&self, system: System) -> PathBuf {
        self.root.join("reports").join(format!("{}.score", system.name()))
    }

    pub fn train_log(&self, system: System) -> PathBuf {
        self.root.join("reports").join(format!("{}.train.log", system.name()))
    }

    pub fn em_log(&self) -> PathBuf {
        self.root.join("reports").join("em.txt")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("reports").join("summary.txt")
    }
}

/// Errors naming `command` when `path` does not exist.
pub fn require(path: &Path, command: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path, command))
    }
}
