use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use manas::checkpoint::load_network;
use manas::data::{read_png, write_png};
use manas::{ArchParams, DerainNetwork, Genotype, Mode, NetworkConfig, Tensor};

const SMALL: &[&str] = &["--set", "T=1", "--set", "C=4", "--set", "H=16", "--set", "W=16"];

fn manas(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_manas")).arg("--out").arg(out).args(args).output().unwrap()
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = manas(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn exit_code(out: &Path, args: &[&str]) -> i32 {
    manas(out, args).status.code().unwrap()
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// A small dataset under `root/data`.
fn dataset(root: &Path, a: usize, b: usize, t: usize) -> PathBuf {
    let data = root.join("data");
    let (a, b, t) = (a.to_string(), b.to_string(), t.to_string());
    ok(&data, &["gen-data", "--trainA", &a, "--trainB", &b, "--test", &t, "--size", "16", "--seed", "1"]);
    data
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn csv_column(path: &Path, column: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == column).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn gen_data_writes_the_layout_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen-data", "--trainA", "4", "--trainB", "4", "--test", "2", "--size", "32", "--seed", "1"];
    let (d1, d2) = (dir.path().join("d1"), dir.path().join("d2"));
    ok(&d1, &args);
    ok(&d2, &args);
    assert_eq!(files(&d1.join("gt")).len(), 10);
    assert_eq!(files(&d1.join("rain")).len(), 30);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d1.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["trainA"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["test"].as_array().unwrap().len(), 2);
    for sub in ["gt", "rain"] {
        for (a, b) in files(&d1.join(sub)).iter().zip(files(&d2.join(sub))) {
            assert_eq!(fs::read(a).unwrap(), fs::read(&b).unwrap());
        }
    }
}

#[test]
fn gen_data_rejects_empty_training_splits() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(dir.path(), &["gen-data", "--trainA", "0"]), 2);
}

#[test]
fn indivisible_sizes_fail_at_search_time() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&data, &["gen-data", "--trainA", "1", "--trainB", "1", "--test", "1", "--size", "30"]);
    let d = data.display().to_string();
    let o = manas(dir.path(), &["search", "--data", &d, "--set", "T=3", "--set", "H=30", "--set", "W=30"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("30"));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = manas(dir.path(), &["search", "--data", "nowhere"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(dir.path(), &["keys", "--set", "lamda_arch=1"]), 2);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "lambda_arch = 0.1\ntypo = 3\n").unwrap();
    assert_eq!(exit_code(dir.path(), &["keys", "--config", cfg.to_str().unwrap()]), 2);
    let keys = String::from_utf8(ok(dir.path(), &["keys"]).stdout).unwrap();
    assert!(keys.lines().any(|l| l.starts_with("lambda_comp")));
}

#[test]
fn zero_iteration_search_binarizes_the_initial_logits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 2, 2, 1);
    let args = with(SMALL, &["search", "--data", data.to_str().unwrap(), "--iterations", "0"]);
    ok(dir.path(), &strs(&args));
    let run = dir.path().join("runs/run");
    let g = Genotype::from_json(&fs::read_to_string(run.join("genotype.json")).unwrap()).unwrap();
    let cfg = NetworkConfig::new(1, 4, 16, 16);
    assert_eq!(g, ArchParams::new(&cfg, false).binarize(&cfg));
    assert!(run.join("config.echo").exists());
    assert!(run.join("ckpt/search.ckpt").exists());
    assert_eq!(fs::read_to_string(run.join("logs/search.csv")).unwrap().lines().count(), 1);
}

#[test]
fn lambda_sweep_records_parameter_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 2, 2, 1);
    let args = with(SMALL, &["search", "--data", data.to_str().unwrap(), "--iterations", "4", "--lambda-comp", "0,0.1,1.0"]);
    ok(dir.path(), &strs(&args));
    let report = dir.path().join("runs/run/report/sweep.csv");
    let text = fs::read_to_string(&report).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let g = Genotype::from_json(&fs::read_to_string(dir.path().join("runs/run").join(row[2])).unwrap()).unwrap();
        let net = DerainNetwork::instantiate(g.config, Mode::Discrete, Some(&g), 0).unwrap();
        assert_eq!(row[1].parse::<usize>().unwrap(), net.param_count());
    }
}

#[test]
fn zero_epoch_training_saves_the_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 2, 2, 1);
    let d = data.to_str().unwrap();
    ok(dir.path(), &strs(&with(SMALL, &["search", "--data", d, "--iterations", "0"])));
    ok(dir.path(), &strs(&with(SMALL, &["train", "--data", d, "--epochs", "0", "--seed", "4"])));
    let net = load_network(dir.path().join("runs/run/ckpt/weights.ckpt")).unwrap();
    let fresh = DerainNetwork::instantiate(net.config, Mode::Discrete, net.genotype.as_ref(), 4).unwrap();
    for (a, b) in fresh.params.values().iter().zip(net.params.values()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (*x as f32) as f64 == *y));
    }
}

#[test]
fn overfitting_lowers_the_epoch_loss_at_first() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 2, 2, 1);
    let d = data.to_str().unwrap();
    ok(dir.path(), &strs(&with(SMALL, &["search", "--data", d, "--iterations", "0"])));
    ok(dir.path(), &strs(&with(SMALL, &["train", "--data", d, "--epochs", "5"])));
    let means = csv_column(&dir.path().join("runs/run/logs/train_epochs.csv"), "trainA");
    assert_eq!(means.len(), 5);
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    let steps = fs::read_to_string(dir.path().join("runs/run/logs/train.csv")).unwrap().lines().count() - 1;
    assert_eq!(steps, 5 * 4);
}

#[test]
fn genotype_for_another_network_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1, 1, 1);
    let d = data.to_str().unwrap();
    ok(dir.path(), &strs(&with(SMALL, &["search", "--data", d, "--iterations", "0"])));
    let args = ["train", "--data", d, "--epochs", "0", "--set", "T=2", "--set", "C=4", "--set", "H=16", "--set", "W=16"];
    assert_eq!(exit_code(dir.path(), &args), 2);
}

fn trained_run(root: &Path, t: &str) -> PathBuf {
    let data = dataset(root, 1, 1, 1);
    let d = data.to_str().unwrap();
    let net = ["--set", &format!("T={t}"), "--set", "C=4", "--set", "H=16", "--set", "W=16"].map(String::from);
    let net: Vec<&str> = strs(&net);
    ok(root, &strs(&with(&net, &["search", "--data", d, "--iterations", "2"])));
    ok(root, &strs(&with(&net, &["train", "--data", d, "--epochs", "1"])));
    data
}

#[test]
fn inference_pads_and_crops_back() {
    let dir = tempfile::tempdir().unwrap();
    trained_run(dir.path(), "2");
    let img = Tensor::from_fn(&[3, 30, 22], |i| ((i * 7919) % 256) as f64 / 255.0);
    let input = dir.path().join("odd.png");
    write_png(&input, &img).unwrap();
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    for o in [&o1, &o2] {
        ok(dir.path(), &["infer", "--infer-out", o.to_str().unwrap(), input.to_str().unwrap()]);
    }
    let out = read_png(o1.join("odd.png")).unwrap();
    assert_eq!(out.dims(), &[3, 30, 22]);
    assert_eq!(fs::read(o1.join("odd.png")).unwrap(), fs::read(o2.join("odd.png")).unwrap());
}

#[test]
fn inference_rejects_non_images() {
    let dir = tempfile::tempdir().unwrap();
    trained_run(dir.path(), "1");
    let bogus = dir.path().join("notes.png");
    fs::write(&bogus, "not an image").unwrap();
    assert_eq!(exit_code(dir.path(), &["infer", bogus.to_str().unwrap()]), 2);
}

#[test]
fn eval_summary_agrees_with_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = trained_run(dir.path(), "1");
    let o = ok(dir.path(), &["eval", "--data", data.to_str().unwrap(), "--eval-split", "all"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("32.60 dB / 0.922"));
    let report = dir.path().join("runs/run/report");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("summary.json")).unwrap()).unwrap();
    let psnr = csv_column(&report.join("eval.csv"), "psnr_db");
    assert_eq!(psnr.len(), 9);
    let mean = psnr.iter().sum::<f64>() / psnr.len() as f64;
    assert!((summary["mean_psnr"].as_f64().unwrap() - mean).abs() < 1e-9);
    assert_eq!(summary["reference"]["did_mdn"]["psnr"], 32.60);
    assert!(summary["reference"]["note"].as_str().unwrap().contains("not desk-reproducible"));
    assert!(summary["rainy_input"]["mean_psnr"].as_f64().unwrap().is_finite());
}

#[test]
fn divergent_search_aborts_with_exit_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1, 1, 1);
    let args = with(
        SMALL,
        &["search", "--data", data.to_str().unwrap(), "--iterations", "20", "--set", "weight_lr_max=1e12"],
    );
    assert_eq!(exit_code(dir.path(), &strs(&args)), 3);
}
