use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hetero_sdm::synthetic::{generate_region, SyntheticRegionSpec};
use hetero_sdm::write_region;
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hetero-sdm"));
    c.env("HETERO_SDM_LOG", "quiet");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self::with(|_| {})
    }

    fn with(edit: impl FnOnce(&mut hetero_sdm::RegionDataset)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut d = generate_region(&SyntheticRegionSpec {
            region_code: "TOY".into(),
            num_po_locations: 60,
            num_background: 80,
            num_test: 40,
            ..Default::default()
        });
        edit(&mut d);
        write_region(&d, dir.path().join("region")).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn manifest(&self, name: &str, body: Value) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, serde_json::to_string_pretty(&body).unwrap()).unwrap();
        p
    }

    fn gnn_manifest(&self, name: &str, out: &str) -> PathBuf {
        self.manifest(
            name,
            json!({
                "region": {"code": "TOY", "dir": "region"},
                "model_kind": "gnn",
                "train": {"num_epochs": 15, "learning_rate": 0.01,
                          "model": {"latent_dim": 16, "num_hidden_layers": 1}},
                "output_dir": out,
                "seed": 3
            }),
        )
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_then_eval_gnn() {
    let f = Fixture::new();
    let m = f.gnn_manifest("m.json", "out");
    let o = run(&["train", "--manifest", s(&m)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = f.path("out/checkpoint.bin");
    assert!(ckpt.exists());
    let log = std::fs::read_to_string(f.path("out/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 15);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first.get("seconds").is_none());
    assert!(first["loss"].as_f64().unwrap() > 0.0);

    let report = f.path("reports/eval.json");
    let o = run(&["eval", "--checkpoint", s(&ckpt), "--region-dir", s(&f.path("region")), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    let auc = line.trim().strip_prefix("mean AUC: ").unwrap();
    assert_eq!(auc.split('.').nth(1).unwrap().len(), 4, "{line}");
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["per_species"].as_array().unwrap().len(), 5);
    assert_eq!(r["model"], "gnn");
    assert!(f.path("reports/eval.csv").exists());

    let o = run(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&m)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(f.path("out/eval_report.json").exists());
}

#[test]
fn train_then_eval_baseline() {
    let f = Fixture::new();
    let m = f.manifest(
        "b.json",
        json!({
            "region": {"code": "TOY", "dir": "region"},
            "model_kind": "baseline",
            "baseline": {"num_epochs": 10, "num_layers": 2},
            "output_dir": "bout"
        }),
    );
    let o = run(&["train", "--manifest", s(&m)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&[
        "eval",
        "--checkpoint",
        s(&f.path("bout/checkpoint.bin")),
        "--region-dir",
        s(&f.path("region")),
        "--model-kind",
        "baseline",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("mean AUC: "));
}

#[test]
fn validation_failures_exit_one() {
    let f = Fixture::new();
    std::fs::remove_file(f.path("region/po.csv")).unwrap();
    let m = f.gnn_manifest("m.json", "out");
    let o = run(&["train", "--manifest", s(&m)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("po.csv"), "{}", stderr(&o));

    let f = Fixture::new();
    let m = f.manifest(
        "neg.json",
        json!({
            "region": {"code": "TOY", "dir": "region"},
            "model_kind": "gnn",
            "train": {"learning_rate": -0.01},
            "output_dir": "out"
        }),
    );
    let o = run(&["train", "--manifest", s(&m)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("learning_rate"));

    let o = run(&["train"]);
    assert_eq!(code(&o), 1);

    let o = bin()
        .env("HETERO_SDM_LOG", "loud")
        .args(["gradcheck"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn eval_flag_mismatch_exits_one() {
    let f = Fixture::new();
    let m = f.gnn_manifest("m.json", "out");
    assert_eq!(code(&run(&["train", "--manifest", s(&m)])), 0);
    let ckpt = f.path("out/checkpoint.bin");
    let region = f.path("region");
    for extra in [["--model-kind", "baseline"].as_slice(), &["--include-coords"], &["--no-normalize-gnn-inputs"]] {
        let mut args = vec!["eval", "--checkpoint", s(&ckpt), "--region-dir", s(&region)];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(code(&o), 1, "{extra:?}: {}", stderr(&o));
    }
    let o = run(&["eval", "--checkpoint", s(&f.path("missing.bin")), "--region-dir", s(&region)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn single_class_species_is_skipped() {
    let f = Fixture::with(|d| {
        for site in &mut d.pa_test {
            site.labels[2] = 0;
        }
    });
    let m = f.gnn_manifest("m.json", "out");
    assert_eq!(code(&run(&["train", "--manifest", s(&m)])), 0);
    let o = run(&["eval", "--checkpoint", s(&f.path("out/checkpoint.bin")), "--manifest", s(&m)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(f.path("out/eval_report.json")).unwrap()).unwrap();
    assert_eq!(r["n_species_scored"], 4);
    assert!(r["per_species"][2]["skipped"].is_string());
    assert!(r["per_species"][2].get("auc").is_none());
}

#[test]
fn training_is_reproducible_and_seed_sensitive() {
    let f = Fixture::new();
    let m = f.gnn_manifest("m.json", "a");
    for out in ["a", "b"] {
        assert_eq!(code(&run(&["train", "--manifest", s(&m), "--out", s(&f.path(out))])), 0);
    }
    assert_eq!(code(&run(&["train", "--manifest", s(&m), "--out", s(&f.path("c")), "--seed-override", "4"])), 0);
    let read = |p: &str| std::fs::read(f.path(p)).unwrap();
    assert_eq!(read("a/checkpoint.bin"), read("b/checkpoint.bin"));
    assert_eq!(read("a/train_log.jsonl"), read("b/train_log.jsonl"));
    assert_ne!(read("a/checkpoint.bin"), read("c/checkpoint.bin"));
}

#[test]
fn feature_flags_change_input_width() {
    let f = Fixture::new();
    let m = f.gnn_manifest("m.json", "out");
    let o = run(&["train", "--manifest", s(&m), "--include-coords", "--no-normalize-gnn-inputs"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = hetero_sdm::Checkpoint::load(f.path("out/checkpoint.bin")).unwrap();
    assert!(ck.features.include_coords);
    assert!(ck.normalizer.is_none());
    assert_eq!(ck.gnn().unwrap().1.location, 4 + 2);
    let o = run(&["eval", "--checkpoint", s(&f.path("out/checkpoint.bin")), "--manifest", s(&m), "--include-coords"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn sweep_runs_cross_product() {
    let f = Fixture::new();
    f.gnn_manifest("base.json", "out");
    let spec = f.manifest(
        "sweep.json",
        json!({"base_manifest": "base.json", "grid": {"latent": [16, 32], "steps": [1]}, "output_dir": "sw"}),
    );
    let o = run(&["sweep", "--manifest", s(&spec)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = std::fs::read_to_string(f.path("sw/summary.csv")).unwrap();
    let lines: Vec<_> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "run,latent,steps,mean_auc");
    assert!(lines[1].starts_with("run_000,16,1,"));
    assert!(lines[2].starts_with("run_001,32,1,"));
    assert!(f.path("sw/run_001/checkpoint.bin").exists());

    let o = run(&["sweep", "--manifest", s(&spec), "--out", s(&f.path("sw2")), "--parallel", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(f.path("sw2/summary.csv")).unwrap(), summary);

    let bad = f.manifest("bad.json", json!({"base_manifest": "base.json", "grid": {"latent": []}}));
    assert_eq!(code(&run(&["sweep", "--manifest", s(&bad)])), 1);
}

#[test]
fn gradcheck_exit_codes() {
    let o = run(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reported: f64 = stdout(&o).trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(reported < 1e-4);

    let o = run(&["gradcheck", "--corrupt-gradient"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"latent_dim": 8, "num_hidden_layers": 1, "num_message_passing_steps": 2,
            "direction": "bidirectional", "include_negative_edges": true, "activation": "silu"}}"#,
    )
    .unwrap();
    let o = run(&["gradcheck", "--manifest", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
