//! Staged experiment pipeline for hybrid HMM acoustic models with deep triphone embeddings.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod layout;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::{ExperimentConfig, System};
use crate::error::{CliError, CliResult};
use crate::layout::Layout;

#[derive(Debug, Parser)]
#[command(name = "dte", version, about = "Deep triphone embedding acoustic model pipeline")]
pub struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Experiment directory (default `exp/<name>`).
    #[arg(long, global = true)]
    pub exp: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// System preset for per-system commands.
    #[arg(long, global = true)]
    pub system: Option<System>,

    /// Writes sampled (tied label, last hidden activation) pairs from `fit-projection`.
    #[arg(long, global = true)]
    pub dump_activations: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    Synth,
    /// Extract normalized MFCC features.
    Features,
    /// Train monophone and tied-triphone GMMs and the phone bigram.
    TrainGmm,
    /// Force-align every split with the triphone model.
    Align,
    /// Train a stage-one network (hmm-dnn, hmm-dnn-w, hmm-dnn-w+d).
    TrainDnn1,
    /// Fit the PCA or LDA projection of stage-one activations.
    FitProjection,
    /// Compute embeddings for every utterance.
    Assemble,
    /// Train the stage-two network on embeddings and features.
    TrainDnn2,
    /// Tune decoding on dev and decode test.
    Decode,
    /// Score test hypotheses and frame predictions.
    Score,
    /// Run every stage for every configured system.
    RunAll,
}

impl Cli {
    pub fn context(&self) -> CliResult<Context> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        let root = self.exp.clone().unwrap_or_else(|| PathBuf::from("exp").join(&cfg.name));
        let layout = Layout::new(root, &cfg);
        Ok(Context {
            cfg,
            layout,
            dump_activations: self.dump_activations.clone(),
        })
    }

    fn system(&self) -> CliResult<System> {
        self.system
            .ok_or_else(|| CliError::Config("--system is required for this command".into()))
    }
}

/// Executes the command and returns what it prints on stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    let ctx = cli.context()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, &ctx))
}

fn dispatch(cli: &Cli, ctx: &Context) -> CliResult<String> {
    use commands::*;
    let done = |r: CliResult<()>| r.map(|_| String::new());
    match cli.command {
        Command::Synth => done(cmd_synth(ctx)),
        Command::Features => done(cmd_features(ctx)),
        Command::TrainGmm => done(cmd_train_gmm(ctx)),
        Command::Align => done(cmd_align(ctx)),
        Command::TrainDnn1 => done(cmd_train_dnn1(ctx, cli.system()?)),
        Command::FitProjection => done(cmd_fit_projection(ctx, cli.system()?)),
        Command::Assemble => done(cmd_assemble(ctx, cli.system()?)),
        Command::TrainDnn2 => done(cmd_train_dnn2(ctx, cli.system()?)),
        Command::Decode => done(cmd_decode(ctx, cli.system()?)),
        Command::Score => Ok(cmd_score(ctx, cli.system()?)?.to_text()),
        Command::RunAll => Ok(summary(&cmd_run_all(ctx)?)),
    }
}
