use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dss_cli::provenance;
use dss_core::checkpoint::Checkpoint;
use dss_core::data::load_gray;
use dss_core::{Error, Tensor};
use serde_json::Value;

fn dss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dss"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}

fn synth(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--out", s(out), "--n", "3", "--size", "32"];
    args.extend_from_slice(extra);
    dss(&args)
}

#[test]
fn synth_same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&synth(&a, &[])), 0);
    assert_eq!(code(&synth(&b, &[])), 0);
    for sub in ["images", "masks"] {
        let fa = sorted_files(&a.join(sub));
        let fb = sorted_files(&b.join(sub));
        assert_eq!(fa.len(), 3);
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
    let manifest = fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(manifest, fs::read(b.join("manifest.json")).unwrap());
    let manifest: Value = serde_json::from_slice(&manifest).unwrap();
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["config"]["size"], 32);

    let png = &sorted_files(&a.join("masks"))[0];
    let embedded = provenance::read_png(png).unwrap().expect("provenance chunk");
    assert_eq!(embedded["command"], "synth");
}

#[test]
fn synth_rejects_sizes_not_divisible_by_32() {
    let dir = tempfile::tempdir().unwrap();
    let out = dss(&["synth", "--out", s(dir.path()), "--n", "1", "--size", "100"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiples of 32"));
}

#[test]
fn synth_refuses_an_existing_manifest_without_force() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), &[])), 0);
    let again = synth(dir.path(), &[]);
    assert_eq!(code(&again), 1);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(code(&synth(dir.path(), &["--force"])), 0);
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dss(&["train", "--out", s(dir.path()), "--set", "stepz=3"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn malformed_arguments_exit_with_one() {
    assert_eq!(code(&dss(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&dss(&["--help"])), 0);
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let out = dss(&["infer", "--checkpoint", s(&missing), "--out", s(dir.path()), "x.png"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn exit_codes_follow_error_kinds() {
    assert_eq!(dss_cli::exit_code(&Error::numeric("conv2d", "nan")), 2);
    assert_eq!(dss_cli::exit_code(&Error::io("x", std::io::Error::other("gone"))), 3);
    assert_eq!(dss_cli::exit_code(&Error::config("bad")), 1);
    assert_eq!(dss_cli::exit_code(&Error::Checkpoint("shape".into())), 1);
}

fn train_untrained(run: &Path) {
    let out = dss(&[
        "train",
        "--out",
        s(run),
        "--set",
        "steps=0",
        "--set",
        "image_size=32",
        "--set",
        "synth_train=2",
        "--set",
        "synth_val=2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

/// Zeroes every weight of the coarse prediction and refinement residual heads, leaving the
/// coarse bias at `bias` and the residual bias at 0.
fn zero_final_heads(path: &Path, bias: f32) {
    let mut ckpt = Checkpoint::<f32>::load(path).unwrap();
    for (name, t) in ckpt.store.params_mut() {
        if name.starts_with("dec.coarse.predict.") || name.starts_with("dec.refine.residual.") {
            t.data_mut().fill(0.0);
        }
    }
    ckpt.store.get_mut("dec.coarse.predict.bias").unwrap().data_mut()[0] = bias;
    ckpt.save(path).unwrap();
}

#[test]
fn zeroed_final_head_predicts_sigmoid_of_bias_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_untrained(&run);
    for name in ["config.toml", "loss.csv", "checkpoint.ckpt", "summary.csv", "pr_curve.csv", "provenance.json"] {
        assert!(run.join(name).is_file(), "{name} missing");
    }
    assert_eq!(code(&dss(&["train", "--out", s(&run)])), 1, "existing run must be refused");

    let gray = dir.path().join("gray.png");
    let odd = dir.path().join("odd.png");
    let prov = provenance::record("test", Value::Null);
    provenance::save_rgb(&gray, &Tensor::full(vec![1, 3, 32, 32], 0.5), &prov).unwrap();
    provenance::save_rgb(&odd, &Tensor::full(vec![1, 3, 24, 40], 0.5), &prov).unwrap();
    let ckpt = run.join("checkpoint.ckpt");
    let bias = 0.75f32;
    zero_final_heads(&ckpt, bias);
    let expected = (255.0 / (1.0 + (-bias).exp())).round() / 255.0;
    let (first, second) = (dir.path().join("first"), dir.path().join("second"));
    for out in [&first, &second] {
        let r = dss(&["infer", "--checkpoint", s(&ckpt), "--out", s(out), s(&gray), s(&odd)]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }

    let saliency = load_gray(&first.join("gray_saliency.png")).unwrap();
    assert_eq!(saliency.shape(), &[1, 1, 32, 32]);
    assert!(saliency.data().iter().all(|&v| v == expected));
    let resized = load_gray(&first.join("odd_saliency.png")).unwrap();
    assert_eq!(resized.shape(), &[1, 1, 24, 40]);
    assert!(resized.data().iter().all(|&v| v == expected));
    for name in ["gray_saliency.png", "gray_boundary.png", "gray_wmap.png", "odd_saliency.png"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
    let embedded = provenance::read_png(&first.join("gray_wmap.png")).unwrap().unwrap();
    assert_eq!(embedded["command"], "infer");
    assert_eq!(embedded["config"]["run"]["image_size"], 32);
}

#[test]
fn eval_of_masks_against_themselves_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&synth(&data, &[])), 0);
    let out = dir.path().join("eval");
    let masks = data.join("masks");
    let r = dss(&["eval", "--pred", s(&masks), "--gt", s(&data), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().nth(1), Some("0,1"));
    let prov: Value = serde_json::from_slice(&fs::read(out.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["config"]["images"], 3);
}

#[test]
fn eval_scores_a_checkpoint_on_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_untrained(&run);
    let data = dir.path().join("data");
    assert_eq!(code(&synth(&data, &["--split", "val"])), 0);
    let out = dir.path().join("eval");
    let r = dss(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.ckpt")),
        "--data",
        s(&data),
        "--ema",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("images 3"));
    assert!(out.join("pr_curve.csv").is_file());
}

#[test]
fn selfcheck_fails_with_a_corrupted_laplacian() {
    let out = dss(&["selfcheck", "--skip-model", "--corrupt-laplacian"]);
    assert_eq!(code(&out), 1);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.lines().any(|l| l.starts_with("FAIL") && l.contains("constant")), "{table}");
}

#[test]
fn selfcheck_passes_on_a_clean_build() {
    let out = dss(&["selfcheck", "--skip-model"]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{table}");
    assert!(table.contains("0 failed"));
}

const QUICK: [&str; 10] = [
    "--set",
    "image_size=32",
    "--set",
    "synth_train=2",
    "--set",
    "synth_val=2",
    "--set",
    "batch_size=2",
    "--set",
    "steps=2",
];

#[test]
fn train_writes_periodic_checkpoints_and_a_loss_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train", "--out", s(&run), "--set", "checkpoint_every=1"];
    args.extend_from_slice(&QUICK);
    let r = dss(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(run.join("checkpoint_step000001.ckpt").is_file());
    assert!(run.join("checkpoint_step000002.ckpt").is_file());
    let log = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,lr,l_total,l_seg,l_bs,l_scm"));
    assert_eq!(log.lines().count(), 3);
    let final_ckpt = fs::read(run.join("checkpoint.ckpt")).unwrap();
    assert_eq!(final_ckpt, fs::read(run.join("checkpoint_step000002.ckpt")).unwrap());
}

#[test]
fn ablate_writes_one_row_per_variant_and_a_provenance_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("out").join("decoder.csv");
    let mut args = vec!["ablate", "--family", "decoder", "--out", s(&report)];
    args.extend_from_slice(&QUICK);
    let r = dss(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.starts_with("decoder,") && l.ends_with(",ok")));
    let prov: Value = serde_json::from_slice(&fs::read(dir.path().join("out/decoder.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["config"]["variants"].as_array().unwrap().len(), 3);
    assert_eq!(code(&dss(&args)), 1, "existing report must be refused");
    assert_eq!(code(&dss(&["ablate", "--family", "nonsense", "--out", s(&report)])), 1);
}
