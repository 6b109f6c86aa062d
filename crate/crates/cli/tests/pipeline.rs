use std::path::{Path, PathBuf};

use clap::Parser;
use dte_cli::config::System;
use dte_cli::error::CliError;
use dte_cli::{run, Cli};

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/tiny.conf")
}

fn cli(exp: &Path, args: &[&str]) -> Cli {
    let config = tiny_config();
    let mut argv = vec![
        "dte".to_string(),
        "--config".into(),
        config.display().to_string(),
        "--exp".into(),
        exp.display().to_string(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    Cli::try_parse_from(argv).unwrap()
}

#[test]
fn decode_before_stage_two_training_names_the_missing_command() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["synth", "features", "train-gmm", "align"] {
        run(&cli(dir.path(), &[cmd])).unwrap();
    }
    let err = run(&cli(dir.path(), &["--system", "dte-pca", "decode"])).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    match &err {
        CliError::Missing { command, .. } => assert!(command.starts_with("train-dnn2"), "{command}"),
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains("train-dnn2"));

    let err = run(&cli(dir.path(), &["--system", "hmm-dnn", "fit-projection"])).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = run(&cli(dir.path(), &["--system", "dte-lda", "assemble"])).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("train-dnn1"));
}

#[test]
fn commands_before_synth_report_missing_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(&cli(dir.path(), &["features"])).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("dte synth"));
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "synth.phones = 6\nhmm.bogus = 1\n",
        "dnn1.hidden = 8, 8\ndte.dim = 16\n",
        "dnn1.context = 3\ndte.context = 4\n",
        "systems = hmm-gmm, nope\n",
        "decode.mode = gmm\n",
        "decode.lm_scales = \n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.conf"));
        std::fs::write(&path, text).unwrap();
        let c = Cli::try_parse_from([
            "dte",
            "--config",
            path.to_str().unwrap(),
            "--exp",
            dir.path().join("exp").to_str().unwrap(),
            "synth",
        ])
        .unwrap();
        let err = run(&c).unwrap_err();
        assert_eq!(err.exit_code(), 2, "case {i}: {err}");
    }
    let err = run(&Cli::try_parse_from(["dte", "synth"]).unwrap()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn system_names_round_trip() {
    for s in System::ALL {
        assert_eq!(s.name().parse::<System>().unwrap(), s);
    }
    assert!("hmm".parse::<System>().is_err());
}

#[test]
fn run_all_on_tiny_config_scores_six_systems() {
    let dir = tempfile::tempdir().unwrap();
    run(&cli(dir.path(), &["run-all"])).unwrap();
    for s in System::ALL {
        let report = std::fs::read_to_string(dir.path().join(format!("reports/{}.score", s.name()))).unwrap();
        assert!(report.contains(&format!("system={}", s.name())), "{report}");
    }
    let summary = std::fs::read_to_string(dir.path().join("reports/summary.txt")).unwrap();
    assert_eq!(summary.lines().count(), 7);

    // Re-running a single stage overwrites its outputs with identical bytes.
    let net = dir.path().join("models/dte-pca.net");
    let before = std::fs::read(&net).unwrap();
    run(&cli(dir.path(), &["--system", "dte-pca", "train-dnn2"])).unwrap();
    assert_eq!(std::fs::read(&net).unwrap(), before);

    let dump = dir.path().join("acts.feat");
    run(&cli(
        dir.path(),
        &["--system", "dte-pca", "--dump-activations", dump.to_str().unwrap(), "fit-projection"],
    ))
    .unwrap();
    let f = dte_core::features::FeatureMatrix::load(&dump).unwrap();
    assert_eq!(f.dim(), 1 + 32);
}
