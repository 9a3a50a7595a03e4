use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_ecc-lab");

fn ecc_lab(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("ECC_LAB_THREADS")
        .output()
        .expect("spawn ecc-lab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_spec() -> Value {
    json!({
        "num_superclusters": 2,
        "subclasses_per_cluster": 2,
        "input_dim": 5,
        "samples_per_class_train": 20,
        "samples_per_class_test": 10,
        "sigma_super": 6.0,
        "sigma_sub": 1.0,
        "sigma_noise": 0.2,
        "seed": 11
    })
}

fn run_config(data_dir: &Path, lambda_mcc: f64, lambda_clg: f64, lr0: f64) -> Value {
    json!({
        "data_dir": data_dir,
        "model": { "hidden_dims": [8], "feature_dim": 4, "init_seed": 3, "standardize_inputs": true },
        "bank_seed": 4,
        "train": {
            "lambda_mcc": lambda_mcc,
            "lambda_clg": lambda_clg,
            "batch_size": 16,
            "epochs": 3,
            "lr0": lr0,
            "momentum": 0.9,
            "lr_decay_every": 2,
            "lr_decay_factor": 0.5,
            "reset_counters_each_epoch": false,
            "shuffle_seed": 5,
            "preset": "none"
        }
    })
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        let spec = f.path("spec.json");
        fs::write(&spec, small_spec().to_string()).unwrap();
        let o = ecc_lab(&["gen-data", "--spec", p(&spec), "--out", p(&f.path("data"))]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_config(&self, name: &str, cfg: &Value) -> PathBuf {
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
        path
    }

    fn train(&self, cfg: &Value, out: &str) -> (Output, PathBuf) {
        let config = self.write_config(&format!("{out}.json"), cfg);
        let out = self.path(out);
        (ecc_lab(&["train", "--config", p(&config), "--out", p(&out)]), out)
    }
}

#[test]
fn gen_data_writes_balanced_csvs_deterministically() {
    let f = Fixture::new();
    let data = f.path("data");
    let train = fs::read_to_string(data.join("train.csv")).unwrap();
    let test = fs::read_to_string(data.join("test.csv")).unwrap();
    assert_eq!(train.lines().next(), Some("label,x0,x1,x2,x3,x4"));
    assert_eq!(train.lines().count(), 1 + 4 * 20);
    assert_eq!(test.lines().count(), 1 + 4 * 10);
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(data.join("spec.json")).unwrap()).unwrap();
    assert_eq!(sidecar, small_spec());

    let again = f.path("again");
    let o = ecc_lab(&["gen-data", "--spec", p(&f.path("spec.json")), "--out", p(&again)]);
    assert_eq!(code(&o), 0);
    for name in ["train.csv", "test.csv", "spec.json"] {
        assert_eq!(fs::read(data.join(name)).unwrap(), fs::read(again.join(name)).unwrap());
    }
}

#[test]
fn gen_data_rejects_invalid_spec() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec();
    spec["sigma_sub"] = json!(7.0);
    let path = dir.path().join("bad.json");
    fs::write(&path, spec.to_string()).unwrap();
    let o = ecc_lab(&["gen-data", "--spec", p(&path), "--out", p(&dir.path().join("out"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sigma_super must exceed sigma_sub"), "{}", stderr(&o));

    fs::write(&path, "{\"num_superclusters\": 2}").unwrap();
    let o = ecc_lab(&["gen-data", "--spec", p(&path), "--out", p(&dir.path().join("out"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_writes_all_artifacts() {
    let f = Fixture::new();
    let (o, run) = f.train(&run_config(&f.path("data"), 1.4, 0.2, 0.01), "run");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let last = out.lines().last().unwrap();
    assert!(last.starts_with("test_accuracy="), "{out}");
    let acc: f64 = last["test_accuracy=".len()..].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(out.lines().count(), 1, "stdout carries only the result line");
    assert!(stderr(&o).contains("epoch 3/3"));

    for name in [
        "manifest.json",
        "train_log.csv",
        "model.json",
        "bank.json",
        "geometry.json",
        "soft_labels.json",
        "projection.csv",
    ] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    let snaps: Vec<_> = fs::read_dir(run.join("snapshots")).unwrap().collect();
    assert_eq!(snaps.len(), 4, "epoch 0 plus one per epoch");
    let snap = fs::read_to_string(run.join("snapshots/epoch_003.csv")).unwrap();
    assert_eq!(snap.lines().next(), Some("class,f0,f1,f2,f3"));
    assert_eq!(snap.lines().count(), 1 + 4);

    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    let manifests = fs::read_dir(&run)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("manifest"))
        .count();
    assert_eq!(manifests, 1);

    let m: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "complete");
    assert_eq!(m["seeds"]["data"], 11);
    assert_eq!(m["seeds"]["model_init"], 3);
    assert_eq!(m["seeds"]["bank"], 4);
    assert_eq!(m["seeds"]["shuffle"], 5);
    assert_eq!(m["layer_dims"], json!([5, 8, 4, 4]));
    assert_eq!(m["config"]["train"]["lambda_mcc"], 1.4);
    assert!(m["finished_at"].is_string());
    assert_eq!(m["test_accuracy"].as_f64().unwrap(), acc);

    let proj = fs::read_to_string(run.join("projection.csv")).unwrap();
    assert_eq!(proj.lines().next(), Some("label,pc1,pc2"));
    assert_eq!(proj.lines().count(), 1 + 40);
}

#[test]
fn ce_only_run_has_zero_center_columns() {
    let f = Fixture::new();
    let (o, run) = f.train(&run_config(&f.path("data"), 0.0, 0.0, 0.01), "ce");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(run.join("train_log.csv")).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[3], "0");
        assert_eq!(&rec[4], "0");
    }
}

#[test]
fn identical_invocations_give_identical_logs() {
    let f = Fixture::new();
    let cfg = run_config(&f.path("data"), 1.4, 0.2, 0.01);
    let (a, ra) = f.train(&cfg, "a");
    let (b, rb) = f.train(&cfg, "b");
    assert_eq!((code(&a), code(&b)), (0, 0));
    for name in ["train_log.csv", "model.json", "bank.json"] {
        assert_eq!(fs::read(ra.join(name)).unwrap(), fs::read(rb.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn relative_data_dir_resolves_against_config() {
    let f = Fixture::new();
    let (o, _) = f.train(&run_config(Path::new("data"), 0.0, 0.0, 0.01), "rel");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn train_input_errors_exit_2() {
    let f = Fixture::new();
    let (o, _) = f.train(&run_config(&f.path("nowhere"), 0.0, 0.0, 0.01), "nodata");
    assert_eq!(code(&o), 2);

    let mut cfg = run_config(&f.path("data"), 0.0, 0.0, 0.01);
    cfg["train"]["preset"] = json!("AIR");
    let (o, _) = f.train(&cfg, "preset_mismatch");
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let mut cfg = run_config(&f.path("data"), 0.0, 0.0, 0.01);
    cfg["train"]["unknown_field"] = json!(1);
    let (o, _) = f.train(&cfg, "unknown");
    assert_eq!(code(&o), 2);

    let mut cfg = run_config(&f.path("data"), 0.0, 0.0, 0.01);
    cfg["model"].as_object_mut().unwrap().remove("init_seed");
    let (o, _) = f.train(&cfg, "implicit");
    assert_eq!(code(&o), 2, "every field must be explicit");
}

#[test]
fn divergent_training_exits_3_and_marks_manifest() {
    let f = Fixture::new();
    let mut cfg = run_config(&f.path("data"), 0.0, 0.0, 1e150);
    cfg["model"]["standardize_inputs"] = json!(false);
    let (o, run) = f.train(&cfg, "diverge");
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));
    let m: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("epoch"));
}

#[test]
fn inspect_regenerates_reports_deterministically() {
    let f = Fixture::new();
    let (o, run) = f.train(&run_config(&f.path("data"), 1.4, 0.2, 0.01), "run");
    assert_eq!(code(&o), 0);
    let reports = ["geometry.json", "soft_labels.json", "projection.csv"];
    let from_train: Vec<Vec<u8>> = reports.iter().map(|n| fs::read(run.join(n)).unwrap()).collect();
    for n in reports {
        fs::remove_file(run.join(n)).unwrap();
    }
    let first = ecc_lab(&["inspect", p(&run)]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(stdout(&first).contains("similar_dominant_fraction="));
    let after_first: Vec<Vec<u8>> = reports.iter().map(|n| fs::read(run.join(n)).unwrap()).collect();
    assert_eq!(after_first, from_train);
    let second = ecc_lab(&["inspect", p(&run)]);
    assert_eq!(stdout(&first), stdout(&second));
    let after_second: Vec<Vec<u8>> = reports.iter().map(|n| fs::read(run.join(n)).unwrap()).collect();
    assert_eq!(after_first, after_second);
}

#[test]
fn inspect_missing_or_corrupt_artifacts_exit_5() {
    let f = Fixture::new();
    let (o, run) = f.train(&run_config(&f.path("data"), 0.0, 0.0, 0.01), "run");
    assert_eq!(code(&o), 0);

    let model = fs::read(run.join("model.json")).unwrap();
    fs::write(run.join("model.json"), "{\"layer_dims\": [").unwrap();
    assert_eq!(code(&ecc_lab(&["inspect", p(&run)])), 5);
    fs::write(run.join("model.json"), model).unwrap();

    fs::remove_file(run.join("bank.json")).unwrap();
    let o = ecc_lab(&["inspect", p(&run)]);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("bank.json"));

    assert_eq!(code(&ecc_lab(&["inspect", p(&f.path("absent"))])), 5);
}

#[test]
fn grad_check_contract() {
    let o = ecc_lab(&["grad-check", "--seed", "3", "--trials", "4"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    for c in ["mcc", "clg", "ce", "network"] {
        assert!(out.lines().any(|l| l.starts_with(c) && l.ends_with("PASS")), "{out}");
    }

    let o = ecc_lab(&["grad-check", "--trials", "0"]);
    assert_eq!(code(&o), 2);

    let o = ecc_lab(&["grad-check", "--seed", "3", "--trials", "2", "--inject-fault", "mcc"]);
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).contains("mcc      worst_seed="), "{}", stdout(&o));

    let o = Command::new(BIN)
        .args(["grad-check", "--trials", "1"])
        .env("ECC_LAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn grad_check_output_does_not_depend_on_threads() {
    let single = ecc_lab(&["grad-check", "--seed", "9", "--trials", "6"]);
    let multi = Command::new(BIN)
        .args(["grad-check", "--seed", "9", "--trials", "6"])
        .env("ECC_LAB_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(single.stdout, multi.stdout);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(code(&ecc_lab(&["frobnicate"])), 2);
    assert_eq!(code(&ecc_lab(&["--help"])), 0);
}
