//! One function per pipeline stage.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use dte_core::corpus::{generate_synthetic_corpus, PhoneId, Split};
use dte_core::decoder::{
    argmax_rows, classify_frames, gmm_scores, label_priors, read_hypotheses, recognition_score, scaled_likelihoods,
    train_bigram_lm, tune_decode_params, viterbi_decode, write_hypotheses, BigramPhoneLm, ClassificationScore,
    DecodeGraph, DecodeParams, DevUtterance, LikelihoodMode, ScoreReport,
};
use dte_core::dnn::{last_hidden, posteriors, train, InputScaling, NetSpec, Network, ScaledSource};
use dte_core::embedding::{context_windows, dump_activations, fit_lda, fit_pca, utterance_dtes, Projection, ProjectionKind};
use dte_core::features::{append_deltas, FeatureMatrix, MfccExtractor, NormStats};
use dte_core::hmm::{
    count_triphone_states, force_align, tie_states, train_monophone_gmm, train_tied_triphone_gmm, AcousticModel,
    AlignTarget, Alignment, EmHistory,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, System};
use crate::data::{self, StageTwoSource, WindowSource};
use crate::error::{CliError, CliResult};
use crate::layout::{require, Layout};

pub struct Context {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
    pub dump_activations: Option<PathBuf>,
}

fn write_file(path: &std::path::Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn cmd_synth(ctx: &Context) -> CliResult<()> {
    let spec = ctx
        .cfg
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("no synthetic corpus configured (set synth.enabled = true)".into()))?;
    let dir = ctx.layout.corpus_dir();
    generate_synthetic_corpus(spec, ctx.cfg.seed, dir)?;
    log::info!("synthetic corpus written to {}", dir.display());
    Ok(())
}

pub fn cmd_features(ctx: &Context) -> CliResult<()> {
    let extractor = MfccExtractor::new(ctx.cfg.frontend.clone())?;
    let mut raw: BTreeMap<Split, Vec<FeatureMatrix>> = BTreeMap::new();
    for split in Split::ALL {
        let m = data::manifest(&ctx.layout, split)?;
        let feats = m
            .records
            .par_iter()
            .map(|r| {
                let utt = m.load_utterance(r)?;
                Ok(append_deltas(&extractor.compute(&utt)?))
            })
            .collect::<CliResult<Vec<_>>>()?;
        raw.insert(split, feats);
    }
    let stats = NormStats::fit(raw[&Split::Train].iter())?;
    stats.save(&ctx.layout.norm_stats())?;
    for (split, feats) in &raw {
        feats.par_iter().try_for_each(|f| -> CliResult<()> {
            let normed = stats.apply(f)?;
            normed.save(&ctx.layout.features(*split, &f.utterance_id))?;
            Ok(())
        })?;
        log::info!("features: {} utterances in {}", feats.len(), split);
    }
    Ok(())
}

fn em_text(name: &str, h: &EmHistory) -> String {
    let mut s = String::new();
    for r in &h.records {
        let _ = writeln!(
            s,
            "{name} stage {} components {} log_likelihood {:.6} objective {:.6}",
            r.stage, r.components, r.log_likelihood, r.objective
        );
    }
    s
}

pub fn cmd_train_gmm(ctx: &Context) -> CliResult<()> {
    let m = data::manifest(&ctx.layout, Split::Train)?;
    let feats = data::features(&ctx.layout, &m)?;
    let phones = data::phone_sequences(&m, &ctx.cfg)?;
    let targets: Vec<AlignTarget> = feats
        .iter()
        .zip(&phones)
        .map(|(f, p)| AlignTarget { features: f, phones: p })
        .collect();

    let (mono, mono_hist) = train_monophone_gmm(&targets, &m.phone_set, &ctx.cfg.hmm)?;
    mono.save(&ctx.layout.mono_model())?;

    let aligned = targets
        .par_iter()
        .map(|t| force_align(t.features, t.phones, &mono))
        .collect::<Result<Vec<_>, _>>()?;
    let counts = count_triphone_states(
        phones.iter().map(Vec::as_slice).zip(aligned.iter()),
        m.phone_set.silence(),
    );
    let map = tie_states(&counts, m.phone_set.len(), ctx.cfg.hmm.min_count, ctx.cfg.hmm.max_states);
    log::info!("tied states: {}", map.num_states());
    let (tri, tri_hist) = train_tied_triphone_gmm(&targets, map, &mono, &ctx.cfg.hmm)?;
    tri.save(&ctx.layout.tri_model())?;

    let lm = train_bigram_lm(&phones, m.phone_set.len(), ctx.cfg.decode.lm_alpha)?;
    lm.save(&ctx.layout.lm())?;

    let mut log = em_text("mono", &mono_hist);
    log.push_str(&em_text("tri", &tri_hist));
    let _ = writeln!(log, "tied_states {}", tri.num_states());
    write_file(&ctx.layout.em_log(), &log)
}

pub fn cmd_align(ctx: &Context) -> CliResult<()> {
    let model = data::tri_model(&ctx.layout)?;
    for split in Split::ALL {
        let m = data::manifest(&ctx.layout, split)?;
        let feats = data::features(&ctx.layout, &m)?;
        let phones = data::phone_sequences(&m, &ctx.cfg)?;
        feats
            .par_iter()
            .zip(phones.par_iter())
            .try_for_each(|(f, p)| -> CliResult<()> {
                let res = force_align(f, p, &model)?;
                res.alignment.save(&ctx.layout.alignment(split, &f.utterance_id))?;
                Ok(())
            })?;
        log::info!("aligned {} utterances in {}", feats.len(), split);
    }
    Ok(())
}

fn expect_system(system: System, ok: bool, command: &str) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{command}` does not apply to system {system}")))
    }
}

fn open_log(path: &std::path::Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
    ))
}

fn train_net(
    ctx: &Context,
    system: System,
    input_dim: usize,
    outputs: usize,
    train_set: &dyn dte_core::dnn::FrameSource,
    dev_set: &dyn dte_core::dnn::FrameSource,
) -> CliResult<()> {
    let net_cfg = ctx.cfg.net(system);
    let spec = NetSpec {
        input_dim,
        hidden: net_cfg.hidden.clone(),
        outputs,
        activation: net_cfg.activation,
        seed: ctx.cfg.init_seed(system),
    };
    let scaling = InputScaling::fit(train_set)?;
    let train_scaled = ScaledSource {
        inner: train_set,
        scaling: &scaling,
    };
    let dev_scaled = ScaledSource {
        inner: dev_set,
        scaling: &scaling,
    };
    let mut log = open_log(&ctx.layout.train_log(system))?;
    let (mut net, history) = train(&spec, &net_cfg.schedule, &train_scaled, &dev_scaled, Some(&mut log))?;
    scaling.fold_into(&mut net)?;
    if let Some(last) = history.epochs.last() {
        writeln!(log, "best_epoch {} sparsity {:.4}", history.best_epoch, last.sparsity)?;
    }
    log.flush()?;
    net.save(&ctx.layout.net(system))?;
    Ok(())
}

pub fn cmd_train_dnn1(ctx: &Context, system: System) -> CliResult<()> {
    expect_system(system, system.is_stage_one(), "train-dnn1")?;
    let model = data::tri_model(&ctx.layout)?;
    let tm = data::manifest(&ctx.layout, Split::Train)?;
    let dm = data::manifest(&ctx.layout, Split::Dev)?;
    let tf = data::features(&ctx.layout, &tm)?;
    let df = data::features(&ctx.layout, &dm)?;
    let ta = data::alignments(&ctx.layout, &tm, &tf)?;
    let da = data::alignments(&ctx.layout, &dm, &df)?;
    let radius = ctx.cfg.context(system);
    let train_set = WindowSource::new(&tf, &ta, radius);
    let dev_set = WindowSource::new(&df, &da, radius);
    let input_dim = dte_core::dnn::FrameSource::input_dim(&train_set);
    train_net(ctx, system, input_dim, model.num_states(), &train_set, &dev_set)
}

fn stage_one_net(ctx: &Context) -> CliResult<Network> {
    let path = ctx.layout.net(System::HmmDnn);
    require(&path, "train-dnn1 --system hmm-dnn")?;
    Ok(Network::load(&path)?)
}

fn projection_kind(system: System, command: &str) -> CliResult<ProjectionKind> {
    system
        .projection()
        .ok_or_else(|| CliError::Config(format!("`{command}` applies to dte-pca and dte-lda, not {system}")))
}

pub fn cmd_fit_projection(ctx: &Context, system: System) -> CliResult<()> {
    let kind = projection_kind(system, "fit-projection")?;
    let net = stage_one_net(ctx)?;
    let m = data::manifest(&ctx.layout, Split::Train)?;
    let feats = data::features(&ctx.layout, &m)?;
    let aligns = data::alignments(&ctx.layout, &m, &feats)?;
    let radius = ctx.cfg.dnn1_context;

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed.wrapping_add(23));
    let frac = ctx.cfg.projection_fraction;
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for (u, f) in feats.iter().enumerate() {
        for t in 0..f.num_frames() {
            if frac >= 1.0 || rng.random::<f64>() < frac {
                picks.push((u, t));
            }
        }
    }
    let source = WindowSource::new(&feats, &aligns, radius);
    let width = dte_core::dnn::FrameSource::input_dim(&source);
    if width != net.spec.input_dim {
        return Err(CliError::Config(format!(
            "dnn1.context gives {width}-dim windows but the stage-one net expects {}",
            net.spec.input_dim
        )));
    }
    let mut windows = Array2::zeros((picks.len(), width));
    let mut labels = Vec::with_capacity(picks.len());
    for (row, &(u, t)) in picks.iter().enumerate() {
        dte_core::features::fill_window(&feats[u], t, radius, windows.row_mut(row).as_slice_mut().unwrap());
        labels.push(aligns[u].tied[t]);
    }
    let acts = last_hidden(&net, windows.view())?;
    let proj = match kind {
        ProjectionKind::Pca => fit_pca(acts.view(), ctx.cfg.dte.dim)?,
        ProjectionKind::Lda => fit_lda(acts.view(), &labels, ctx.cfg.dte.dim)?,
    };
    proj.save(&ctx.layout.projection(kind))?;
    if let Some(path) = &ctx.dump_activations {
        dump_activations(path, &labels, acts.view())?;
    }
    log::info!("{} projection fitted on {} frames", kind.name(), picks.len());
    Ok(())
}

pub fn cmd_assemble(ctx: &Context, system: System) -> CliResult<()> {
    let kind = projection_kind(system, "assemble")?;
    let net = stage_one_net(ctx)?;
    let path = ctx.layout.projection(kind);
    require(&path, &format!("fit-projection --system {system}"))?;
    let proj = Projection::load(&path)?;
    if proj.output_dim() != ctx.cfg.dte.dim {
        return Err(CliError::Config(format!(
            "projection has {} components but dte.dim is {} (re-run fit-projection)",
            proj.output_dim(),
            ctx.cfg.dte.dim
        )));
    }
    for split in Split::ALL {
        let m = data::manifest(&ctx.layout, split)?;
        let feats = data::features(&ctx.layout, &m)?;
        feats.par_iter().try_for_each(|f| -> CliResult<()> {
            let d = utterance_dtes(&proj, &net, f, ctx.cfg.dnn1_context)?;
            let (rows, cols) = d.dim();
            let out = FeatureMatrix::new(
                f.utterance_id.clone(),
                rows,
                cols,
                d.into_raw_vec_and_offset().0,
                f.frame_shift_ms,
                f.frame_length_ms,
            )?;
            out.save(&ctx.layout.dte(kind, split, &f.utterance_id))?;
            Ok(())
        })?;
    }
    Ok(())
}

pub fn cmd_train_dnn2(ctx: &Context, system: System) -> CliResult<()> {
    let kind = projection_kind(system, "train-dnn2")?;
    let model = data::tri_model(&ctx.layout)?;
    let tm = data::manifest(&ctx.layout, Split::Train)?;
    let dm = data::manifest(&ctx.layout, Split::Dev)?;
    let tf = data::features(&ctx.layout, &tm)?;
    let df = data::features(&ctx.layout, &dm)?;
    let ta = data::alignments(&ctx.layout, &tm, &tf)?;
    let da = data::alignments(&ctx.layout, &dm, &df)?;
    let name = system.name();
    let td = data::dtes(&ctx.layout, kind, &tm, name)?;
    let dd = data::dtes(&ctx.layout, kind, &dm, name)?;
    let train_set = StageTwoSource::new(&tf, &td, &ta, ctx.cfg.dte)?;
    let dev_set = StageTwoSource::new(&df, &dd, &da, ctx.cfg.dte)?;
    let input_dim = dte_core::dnn::FrameSource::input_dim(&train_set);
    train_net(ctx, system, input_dim, model.num_states(), &train_set, &dev_set)
}

/// Per-utterance network posteriors or GMM scores of one split.
struct SplitScores {
    ids: Vec<String>,
    /// Decoding scores.
    scores: Vec<Array2<f32>>,
    /// Framewise predicted tied states.
    predicted: Vec<Vec<usize>>,
}

fn split_scores(
    ctx: &Context,
    system: System,
    split: Split,
    model: &AcousticModel,
    priors: Option<&[f64]>,
) -> CliResult<SplitScores> {
    let m = data::manifest(&ctx.layout, split)?;
    let feats = data::features(&ctx.layout, &m)?;
    let mode = ctx.cfg.decode.mode;
    let net = match system {
        System::HmmGmm => None,
        System::DtePca | System::DteLda => {
            let path = ctx.layout.net(system);
            require(&path, &format!("train-dnn2 --system {system}"))?;
            Some(Network::load(&path)?)
        }
        _ => {
            let path = ctx.layout.net(system);
            require(&path, &format!("train-dnn1 --system {system}"))?;
            Some(Network::load(&path)?)
        }
    };
    let dtes = match system.projection() {
        Some(kind) => Some(data::dtes(&ctx.layout, kind, &m, system.name())?),
        None => None,
    };
    let per_utt = feats
        .par_iter()
        .enumerate()
        .map(|(i, f)| -> CliResult<(Array2<f32>, Vec<usize>)> {
            match &net {
                None => {
                    let rows: Vec<&[f32]> = f.rows().collect();
                    let s = gmm_scores(&rows, &model.emission)?;
                    let pred = argmax_rows(s.view());
                    Ok((s, pred))
                }
                Some(net) => {
                    let inputs = match &dtes {
                        Some(d) => data::stage_two_inputs(&ctx.cfg.dte, f, &d[i])?,
                        None => context_windows(f, ctx.cfg.context(system)),
                    };
                    let post = posteriors(net, inputs.view())?;
                    if post.ncols() != model.num_states() {
                        return Err(CliError::Config(format!(
                            "{system} net has {} outputs but the tied-state model has {}",
                            post.ncols(),
                            model.num_states()
                        )));
                    }
                    let pred = argmax_rows(post.view());
                    Ok((scaled_likelihoods(post.view(), mode, priors)?, pred))
                }
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (scores, predicted) = per_utt.into_iter().unzip();
    Ok(SplitScores {
        ids: m.records.iter().map(|r| r.id.clone()).collect(),
        scores,
        predicted,
    })
}

fn train_priors(ctx: &Context, num_states: usize) -> CliResult<Vec<f64>> {
    let m = data::manifest(&ctx.layout, Split::Train)?;
    let feats = data::features(&ctx.layout, &m)?;
    let aligns = data::alignments(&ctx.layout, &m, &feats)?;
    Ok(label_priors(aligns.iter().flat_map(|a| a.tied.iter().copied()), num_states))
}

fn write_frames(path: &std::path::Path, ids: &[String], predicted: &[Vec<usize>]) -> CliResult<()> {
    let mut text = String::new();
    for (id, p) in ids.iter().zip(predicted) {
        let cells: Vec<String> = p.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(text, "{id}\t{}", cells.join(" "));
    }
    write_file(path, &text)
}

fn read_frames(path: &std::path::Path) -> CliResult<BTreeMap<String, Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, rest) = l.split_once('\t').unwrap_or((l, ""));
            let v = rest
                .split_whitespace()
                .map(|x| x.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Config(format!("{}: bad frame label: {e}", path.display())))?;
            Ok((id.to_string(), v))
        })
        .collect()
}

pub fn cmd_decode(ctx: &Context, system: System) -> CliResult<()> {
    let model = data::tri_model(&ctx.layout)?;
    let lm_path = ctx.layout.lm();
    require(&lm_path, "train-gmm")?;
    let lm = BigramPhoneLm::load(&lm_path)?;
    let sil = model.phone_set.silence();
    let graph = DecodeGraph::new(&model.tied, &model.topology, sil)?;
    let mut base = ctx.cfg.decode.base_params();
    if system == System::HmmGmm {
        base.mode = LikelihoodMode::Gmm;
    }
    let priors = if base.mode == LikelihoodMode::PosteriorOverPrior {
        Some(train_priors(ctx, model.num_states())?)
    } else {
        None
    };

    let dev = split_scores(ctx, system, Split::Dev, &model, priors.as_deref())?;
    let dm = data::manifest(&ctx.layout, Split::Dev)?;
    let dev_refs = data::references(&dm, &ctx.cfg)?;
    let dev_utts: Vec<DevUtterance> = dev
        .ids
        .iter()
        .zip(dev.scores)
        .map(|(id, scores)| DevUtterance {
            id: id.clone(),
            scores,
            reference: dev_refs[id].clone(),
        })
        .collect();
    let tuned = tune_decode_params(
        &dev_utts,
        &graph,
        &lm,
        &base,
        &ctx.cfg.decode.lm_scales,
        &ctx.cfg.decode.penalties,
    )?;

    let test = split_scores(ctx, system, Split::Test, &model, priors.as_deref())?;
    let hyps = decode_all(&test.scores, &graph, &lm, &tuned.params)?;
    let hyps: BTreeMap<String, Vec<PhoneId>> = test.ids.iter().cloned().zip(hyps).collect();
    write_hypotheses(&ctx.layout.hypotheses(system, Split::Test), &hyps, &model.phone_set)?;
    write_frames(&ctx.layout.frame_predictions(system, Split::Test), &test.ids, &test.predicted)?;

    let mut params = String::new();
    let _ = writeln!(params, "lm_scale={}", tuned.params.lm_scale);
    let _ = writeln!(params, "insertion_penalty={}", tuned.params.insertion_penalty);
    let _ = writeln!(params, "dev_rec_acc={:.4}", 100.0 * tuned.recognition.accuracy().unwrap_or(f64::NAN));
    for (a, b, r) in &tuned.grid {
        let _ = writeln!(params, "# grid lm_scale {a} penalty {b} errors {} N {}", r.errors(), r.n);
    }
    write_file(&ctx.layout.decode_params(system), &params)
}

fn decode_all(
    scores: &[Array2<f32>],
    graph: &DecodeGraph,
    lm: &BigramPhoneLm,
    params: &DecodeParams,
) -> CliResult<Vec<Vec<PhoneId>>> {
    scores
        .par_iter()
        .map(|s| Ok(viterbi_decode(s.view(), graph, lm, params)?.phones))
        .collect()
}

pub fn cmd_score(ctx: &Context, system: System) -> CliResult<ScoreReport> {
    let model = data::tri_model(&ctx.layout)?;
    let m = data::manifest(&ctx.layout, Split::Test)?;
    let feats = data::features(&ctx.layout, &m)?;
    let aligns = data::alignments(&ctx.layout, &m, &feats)?;
    let decode_cmd = format!("decode --system {system}");
    let hyp_path = ctx.layout.hypotheses(system, Split::Test);
    let frames_path = ctx.layout.frame_predictions(system, Split::Test);
    let params_path = ctx.layout.decode_params(system);
    for p in [&hyp_path, &frames_path, &params_path] {
        require(p, &decode_cmd)?;
    }
    let hyps = read_hypotheses(&hyp_path, &model.phone_set)?;
    let refs = data::references(&m, &ctx.cfg)?;
    let recognition = recognition_score(&refs, &hyps)?;

    let predicted = read_frames(&frames_path)?;
    let sil = model.phone_set.silence();
    let mut classification = ClassificationScore::default();
    for a in &aligns {
        let pred = predicted
            .get(&a.utterance_id)
            .ok_or_else(|| CliError::Config(format!("{}: no frames for `{}`", frames_path.display(), a.utterance_id)))?;
        classification.add(&classify_frames(pred, &a.tied, &model.tied, sil)?);
    }

    let params_text =
        std::fs::read_to_string(&params_path).map_err(|e| CliError::Io(format!("{}: {e}", params_path.display())))?;
    let value = |key: &str| -> f32 {
        params_text
            .lines()
            .find_map(|l| l.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(f32::NAN)
    };
    let report = ScoreReport {
        system: system.name().to_string(),
        classification,
        recognition,
        lm_scale: value("lm_scale"),
        insertion_penalty: value("insertion_penalty"),
    };
    write_file(&ctx.layout.report(system), &report.to_text())?;
    Ok(report)
}

pub fn summary(reports: &[(System, ScoreReport)]) -> String {
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
    let mut s = String::new();
    let _ = writeln!(s, "{:<18} {:>9} {:>10} {:>8}", "system", "tied_acc", "phone_acc", "rec_acc");
    for (sys, r) in reports {
        let _ = writeln!(
            s,
            "{:<18} {:>9} {:>10} {:>8}",
            sys.title(),
            pct(r.classification.tied_accuracy()),
            pct(r.classification.phone_accuracy()),
            pct(r.recognition.accuracy())
        );
    }
    s
}

/// Runs every stage and scores every configured system.
pub fn cmd_run_all(ctx: &Context) -> CliResult<Vec<(System, ScoreReport)>> {
    if ctx.cfg.synth.is_some() {
        cmd_synth(ctx)?;
    }
    cmd_features(ctx)?;
    cmd_train_gmm(ctx)?;
    cmd_align(ctx)?;
    let mut systems = ctx.cfg.systems.clone();
    systems.sort();
    systems.dedup();
    let needs_stage_one = systems.iter().any(|s| s.projection().is_some());
    if needs_stage_one && !systems.contains(&System::HmmDnn) {
        cmd_train_dnn1(ctx, System::HmmDnn)?;
    }
    let mut reports = Vec::new();
    for &system in &systems {
        log::info!("system {system}");
        if system.is_stage_one() {
            cmd_train_dnn1(ctx, system)?;
        } else if system.projection().is_some() {
            cmd_fit_projection(ctx, system)?;
            cmd_assemble(ctx, system)?;
            cmd_train_dnn2(ctx, system)?;
        }
        cmd_decode(ctx, system)?;
        reports.push((system, cmd_score(ctx, system)?));
    }
    let text = summary(&reports);
    write_file(&ctx.layout.summary(), &text)?;
    Ok(reports)
}

/// Loads an alignment file for inspection.
pub fn load_alignment(path: &std::path::Path) -> CliResult<Alignment> {
    Ok(Alignment::load(path)?)
}
