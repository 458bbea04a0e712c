use std::path::Path;
use std::process::{Command, Output};

use lakd::data::SynthSpec;
use lakd::experiment::{DatasetSource, NetConfig, Regime, RunConfig};
use lakd::models::{save_checkpoint, NetSpec, TapNet};

fn lakd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lakd")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let mut cfg = RunConfig::synthetic_default(Regime::Scratch);
    cfg.data.source = DatasetSource::Synthetic { synth: SynthSpec { samples: 80, ..SynthSpec::default() }, val_samples: 20 };
    cfg.student = NetConfig { depth: 3, width: 4 };
    cfg.optim.epochs = 1;
    cfg.eval.cka_samples = 0;
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_then_eval_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let out = lakd(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("val_top1"));
    let ckpt = run.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    let out = lakd(&["eval", "--checkpoint", ckpt, "--config", &cfg, "--cka-samples", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let att = dir.path().join("att");
    let out = lakd(&["export-attention", "--checkpoint", ckpt, "--config", &cfg, "--samples", "0,1", "--units", "2", "--out", att.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(&att).unwrap().count(), 2);
}

#[test]
fn ablate_prints_five_ndam_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let teacher = TapNet::new(NetSpec { depth: 3, width: 4, num_classes: 3, input_hw: (8, 8), seed: 1 }).unwrap();
    let tpath = dir.path().join("t.ckpt");
    save_checkpoint(&teacher, &tpath).unwrap();
    let out = lakd(&[
        "ablate", "--sweep", "ndam", "--config", &cfg, "--regime", "lakd", "--teacher-checkpoint", tpath.to_str().unwrap(),
        "--detach-after", "1", "--align-at", "1,3", "--out", dir.path().join("abl").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.lines().count(), 6);
    assert!(dir.path().join("abl").join("ablation.csv").exists());
}

#[test]
fn invalid_configuration_exits_2() {
    let out = lakd(&["train", "--lr=-1", "--epochs", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("optim"));

    let out = lakd(&["train", "--regime", "lakd", "--epochs", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("teacher.checkpoint"));
}

#[test]
fn damaged_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.ckpt");
    std::fs::write(&p, b"not a checkpoint").unwrap();
    let out = lakd(&["eval", "--checkpoint", p.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
}

#[test]
fn class_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let net = TapNet::new(NetSpec { depth: 3, width: 2, num_classes: 10, input_hw: (8, 8), seed: 1 }).unwrap();
    let p = dir.path().join("ten.ckpt");
    save_checkpoint(&net, &p).unwrap();
    let cfg = tiny_config(dir.path());
    let out = lakd(&["export-attention", "--checkpoint", p.to_str().unwrap(), "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    let out = lakd(&["eval", "--checkpoint", p.to_str().unwrap(), "--config", &cfg]);
    assert_eq!(code(&out), 4);
}
