//! Run-directory contracts: artifacts, determinism, resume and refusal of
//! cross-wired inputs.

use std::fs;
use std::path::{Path, PathBuf};

use morphoml::exec::RayonExecutor;
use morphoml::io::predictions::read_predictions;
use morphoml::pipeline::{files, run_pipeline, RunConfig, Stage};
use morphoml::{ops, Error};
use morphoml_core::gbdt::GbdtParams;
use morphoml_core::synth::SynthSpec;

fn cohort(dir: &Path) -> PathBuf {
    let out = dir.join("cohort");
    ops::write_synth(&RayonExecutor::new(2).unwrap(), &SynthSpec::size_separated(6, 4, 21), &out).unwrap();
    out
}

fn config(cohort: &Path, output: PathBuf, threads: usize) -> RunConfig {
    RunConfig {
        manifest: cohort.join("manifest.csv"),
        images: cohort.join("images"),
        masks: cohort.join("masks"),
        output,
        grid_n: 4,
        label_scheme: "dlbcl-binary".into(),
        gbdt: GbdtParams { num_rounds: 8, ..GbdtParams::default() },
        folds: 3,
        bootstrap: 50,
        seed: 3,
        threads: Some(threads),
        ..RunConfig::default()
    }
}

fn run(c: &RunConfig, from: Option<Stage>) -> morphoml::Result<()> {
    run_pipeline(&RayonExecutor::new(c.threads.unwrap_or(1)).unwrap(), c, from).map(|_| ())
}

fn bytes(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const DETERMINISTIC: [&str; 8] = [
    files::SPLIT,
    files::PATCHES,
    files::FEATURES,
    files::MODEL,
    files::CV_PREDICTIONS,
    files::PREDICTIONS,
    files::METRICS,
    files::CONFUSION,
];

#[test]
fn run_writes_artifacts_deterministically_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = cohort(tmp.path());
    let a = config(&cohort, tmp.path().join("a"), 1);
    run(&a, None).unwrap();
    for name in DETERMINISTIC.iter().chain(&[files::PROVENANCE, "features.json", files::CONFIG]) {
        assert!(a.output.join(name).is_file(), "{name} missing");
    }
    let digest = a.digest();
    let preds = read_predictions(&a.output.join(files::PREDICTIONS), None).unwrap();
    assert_eq!(preds.meta.get("config_digest"), Some(&digest));
    let metrics = fs::read_to_string(a.output.join(files::METRICS)).unwrap();
    assert!(metrics.contains(&digest));

    // Another directory and thread count: identical bytes.
    let b = config(&cohort, tmp.path().join("b"), 3);
    run(&b, None).unwrap();
    for name in DETERMINISTIC {
        assert_eq!(bytes(&a.output, name), bytes(&b.output, name), "{name} differs across runs");
    }

    // Delete everything downstream of preprocessing and resume.
    for name in [files::FEATURES, "features.json", files::MODEL, files::PREDICTIONS, files::METRICS, files::CONFUSION] {
        fs::remove_file(b.output.join(name)).unwrap();
    }
    run(&b, Some(Stage::Features)).unwrap();
    for name in DETERMINISTIC {
        assert_eq!(bytes(&a.output, name), bytes(&b.output, name), "{name} differs after resume");
    }
}

#[test]
fn resume_refuses_a_changed_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = cohort(tmp.path());
    let c = config(&cohort, tmp.path().join("run"), 1);
    run(&c, None).unwrap();
    let changed = RunConfig { seed: 4, ..c.clone() };
    let err = run(&changed, Some(Stage::Train)).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    // A store written under another registry is refused at the train stage.
    let other = RunConfig { feature_config: "NuclearMorphological".into(), output: tmp.path().join("other"), ..c.clone() };
    run(&other, None).unwrap();
    fs::copy(other.output.join(files::FEATURES), c.output.join(files::FEATURES)).unwrap();
    fs::copy(other.output.join("features.json"), c.output.join("features.json")).unwrap();
    let err = run(&c, Some(Stage::Train)).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage: "train", .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
    let prov = fs::read_to_string(c.output.join(files::PROVENANCE)).unwrap();
    assert!(prov.contains("\"failed_stage\": \"train\""));
}

#[test]
fn invalid_configuration_fails_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = cohort(tmp.path());
    let mut c = config(&cohort, tmp.path().join("run"), 1);
    c.grid_n = 5;
    assert_eq!(run(&c, None).unwrap_err().exit_code(), 2);
    assert!(!c.output.exists());
    c.grid_n = 4;
    c.feature_config = "NoSuchConfig".into();
    assert_eq!(run(&c, None).unwrap_err().exit_code(), 2);
    c.feature_config = "NuclearMorphological".into();
    c.fractions = [0.5, 0.5, 0.5];
    assert_eq!(run(&c, None).unwrap_err().exit_code(), 2);
}

#[test]
fn missing_image_is_a_data_error_naming_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = cohort(tmp.path());
    fs::remove_file(cohort.join("images/S0003_A.png")).unwrap();
    let c = config(&cohort, tmp.path().join("run"), 1);
    let err = run(&c, None).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage: "preprocess", .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("S0003_A"));
    // Outputs of the stages that finished stay in place.
    assert!(c.output.join(files::SPLIT).is_file());
}

#[test]
fn config_digest_ignores_threads_and_output_only() {
    let base = RunConfig::default();
    let moved = RunConfig { output: "elsewhere".into(), threads: Some(8), ..base.clone() };
    assert_eq!(base.digest(), moved.digest());
    let reseeded = RunConfig { seed: 1, ..base.clone() };
    assert_ne!(base.digest(), reseeded.digest());
}

#[test]
fn partial_json_config_fills_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("run.json");
    fs::write(&p, r#"{"seed": 9, "gbdt": {"num_rounds": 7}}"#).unwrap();
    let c = RunConfig::load(&p).unwrap();
    assert_eq!((c.seed, c.gbdt.num_rounds, c.gbdt.num_leaves, c.folds), (9, 7, 15, 5));
    fs::write(&p, r#"{"sede": 9}"#).unwrap();
    assert_eq!(RunConfig::load(&p).unwrap_err().exit_code(), 2);
}
