use std::path::Path;
use std::process::{Command, Output};

use panoecg::experiments::DeskSetup;
use panoecg::model::ModelConfig;
use serde_json::Value;

fn panoecg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panoecg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = panoecg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn lines(stdout: &str) -> Vec<Value> {
    stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// Tiny dataset plus a run config sized to finish in seconds.
fn fixture(dir: &Path) -> (String, String) {
    let gen = dir.join("gen.cfg");
    std::fs::write(&gen, "seed = 3\nn_subjects = 5\nduration = 4\nfs = 100\njitter_std_deg = 0\n").unwrap();
    let data = dir.join("data");
    ok(&["gen-dataset", "--config", gen.to_str().unwrap(), "--out", data.to_str().unwrap()]);

    let mut setup = DeskSetup::default();
    setup.model = ModelConfig::with_channels(8);
    setup.model.blocks = 1;
    setup.model.embed_dim = 8;
    setup.model.attn_dim = 8;
    for s in [&mut setup.stage1, &mut setup.stage2] {
        s.epochs = 2;
        s.crop = Some(128);
        s.samples_per_record = 1;
    }
    setup.stage3.epochs = 3;
    setup.stage3.calibration_s = 2.0;
    let cfg = dir.join("run.json");
    std::fs::write(&cfg, serde_json::to_string(&setup).unwrap()).unwrap();
    (data.to_str().unwrap().into(), cfg.to_str().unwrap().into())
}

#[test]
fn stages_chain_through_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path());
    let s1 = dir.path().join("s1.ckpt");
    let s2 = dir.path().join("s2.ckpt");
    let s1s = s1.to_str().unwrap();
    let s2s = s2.to_str().unwrap();

    let log = lines(&ok(&["train", "--stage", "1", "--dataset", &data, "--config", &cfg, "--ckpt-out", s1s, "--eval-every", "1"]));
    assert_eq!(log.len(), 2);
    assert_eq!(log[1]["epoch"], 1);
    assert!(log[0]["loss"].as_f64().unwrap().is_finite());
    assert!(log[0]["eval_psnr"].is_number());

    let log = lines(&ok(&["train", "--stage", "2", "--dataset", &data, "--config", &cfg, "--ckpt-in", s1s, "--ckpt-out", s2s]));
    assert_eq!(log.len(), 2);
    assert!(s2.exists());

    let sessions = lines(&ok(&["train", "--stage", "3", "--dataset", &data, "--config", &cfg, "--ckpt-in", s2s]));
    assert!(!sessions.is_empty());
    assert_eq!(sessions[0]["deviations"].as_array().unwrap().len(), 4);

    let report = lines(&ok(&["evaluate", "--ckpt", s2s, "--dataset", &data, "--config", &cfg, "--task", "syn"]));
    assert_eq!(report[0]["task"], "synthesis");
    assert_eq!(report[0]["per_lead"].as_array().unwrap().len(), 12);
}

#[test]
fn oracle_evaluation_needs_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let report = lines(&ok(&["evaluate", "--oracle", "--dataset", &data, "--task", "rec"]));
    assert!(report[0]["mean_psnr"].as_f64().unwrap() >= 99.0);
}

#[test]
fn bad_invocations_fail() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path());
    for args in [
        vec!["train", "--stage", "4", "--dataset", &data],
        vec!["train", "--stage", "2", "--dataset", &data, "--config", &cfg],
        vec!["evaluate", "--dataset", &data, "--task", "syn"],
        vec!["evaluate", "--oracle", "--dataset", &data, "--task", "panorama"],
        vec!["evaluate", "--oracle", "--dataset", "/nonexistent", "--task", "syn"],
    ] {
        assert!(!panoecg(&args).status.success(), "{args:?}");
    }
}
