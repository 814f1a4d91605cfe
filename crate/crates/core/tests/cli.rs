use std::fs;
use std::path::Path;

use mac_core::harness::{load_dataset, parse_masked_csv, run_command_to, GroundTruth};
use mac_core::model::MaskedMlp;
use tempfile::TempDir;

/// Runs a whitespace-separated command line.
fn run(line: &str) -> (i32, String) {
    let mut out = Vec::new();
    let code = run_command_to(std::iter::once("mac").chain(line.split_whitespace()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line}"))
        .parse()
        .unwrap()
}

struct Workspace(TempDir);

impl Workspace {
    fn new() -> Self {
        Self(TempDir::new().unwrap())
    }

    fn path(&self, name: &str) -> String {
        self.0.path().join(name).to_str().unwrap().to_owned()
    }

    fn generate(&self) {
        let (train, test, truth) = (self.path("train.csv"), self.path("test.csv"), self.path("truth.json"));
        let cmd = format!(
            "gen-data --n 4 --alphabet 3 --components 2 --count 400 --test-count 50 --test-out {test} \
             --seed 5 --out {train} --truth {truth}"
        );
        assert_eq!(run(&cmd).0, 0);
    }
}

#[test]
fn dist_writes_table() {
    let ws = Workspace::new();
    let out = ws.path("t.tsv");
    assert_eq!(
        run(&format!("dist --n 12 --protocols mac,rnd --exact --out {out}")).0,
        0
    );
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 4096 + 1);
    assert!(lines[1].starts_with("000000000000\t0\t"));
    let entropies: Vec<f64> = lines[4097].split('\t').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!(entropies[1] < entropies[2]);

    let (code, mc) = run("dist --n 6 --protocols rnd --samples 1000 --seed 2");
    assert_eq!(code, 0);
    assert!(mc.starts_with("mask\tM\tp_rnd\tcr_rnd\n"));
}

#[test]
fn gen_train_eval_complete() {
    let ws = Workspace::new();
    ws.generate();
    let (train, test, truth) = (ws.path("train.csv"), ws.path("test.csv"), ws.path("truth.json"));
    assert_eq!(load_dataset(&train).unwrap().len(), 400);
    assert_eq!(load_dataset(&test).unwrap().len(), 50);

    let (config, ckpt, log) = (ws.path("c.json"), ws.path("ckpt.json"), ws.path("log.tsv"));
    fs::write(
        &config,
        r#"{"version": 1, "steps": 40, "batch": 32, "lr": 0.01, "seed": 3, "eval_every": 10, "hidden_sizes": [12]}"#,
    )
    .unwrap();
    let (code, out) = run(&format!(
        "train --objective mac-cr --data {train} --config {config} --out {ckpt} --log {log} --eval-data {test}"
    ));
    assert_eq!(code, 0, "{out}");
    assert_eq!(MaskedMlp::load(&ckpt).unwrap().step(), 40);
    let log = fs::read_to_string(&log).unwrap();
    assert!(log.starts_with("step\ttrain_loss\teval_marginal_nll\teval_joint_nll\twall_ms\n"));
    assert_eq!(log.lines().count(), 1 + 5);

    let eval = format!("eval --ckpt {ckpt} --data {test} --metric marginal --seed 7");
    let (code, line) = run(&eval);
    assert_eq!(code, 0);
    assert!(line.starts_with("metric=marginal protocol=mac nll="));
    assert_eq!(run(&eval).1, line);
    assert!(field(&line, "nll").is_finite());

    let mac = run(&format!("eval --truth {truth} --data {test} --seed 7 --trials 4")).1;
    let rnd = run(&format!(
        "eval --truth {truth} --data {test} --seed 7 --trials 4 --protocol rnd"
    ))
    .1;
    assert!((field(&mac, "nll") - field(&rnd, "nll")).abs() < 1e-9);

    let joint = run(&format!("eval --truth {truth} --data {test} --metric joint")).1;
    let elbo = run(&format!(
        "eval --truth {truth} --data {test} --metric elbo --order-samples 3"
    ))
    .1;
    assert!((field(&joint, "nll") - field(&elbo, "nll")).abs() < 1e-9);
    assert!((field(&joint, "bpd") - field(&joint, "nll") / (4.0 * std::f64::consts::LN_2)).abs() < 1e-5);

    let masked = ws.path("masked.csv");
    fs::write(&masked, "n_vars=4,alphabet=3\n2,?,?,1\n?,?,?,?\n").unwrap();
    let (code, filled) = run(&format!("complete --ckpt {ckpt} --input {masked} --seed 1"));
    assert_eq!(code, 0);
    let (_, rows) = parse_masked_csv(&filled).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|(_, e)| e.cardinality() == 4));
    assert_eq!((rows[0].0.get(0), rows[0].0.get(3)), (2, 1));
    assert!(GroundTruth::load(&truth).is_ok());
}

#[test]
fn config_and_data_errors_exit_one() {
    let ws = Workspace::new();
    ws.generate();
    let (train, truth, out) = (ws.path("train.csv"), ws.path("truth.json"), ws.path("x.json"));
    let (bad, broken) = (ws.path("bad.json"), ws.path("broken.csv"));
    fs::write(&bad, r#"{"version": 1, "stepz": 3}"#).unwrap();
    fs::write(&broken, "n_vars=3,alphabet=2\n1,2,1\n").unwrap();

    assert_eq!(
        run(&format!(
            "train --objective ardm --data {train} --config {bad} --out {out}"
        ))
        .0,
        1
    );
    assert_eq!(run(&format!("train --data {train} --out {out}")).0, 1);
    assert_eq!(run(&format!("train --objective ardm --data {broken} --out {out}")).0, 1);
    assert!(!Path::new(&out).exists());
    assert_eq!(run(&format!("eval --truth {truth} --data {broken}")).0, 1);
    let big = ws.path("big.csv");
    assert_eq!(run(&format!("gen-data --n 13 --alphabet 4 --count 3 --out {big}")).0, 2);
}

#[test]
fn sample_masks_cover_every_sampler() {
    for sampler in ["test", "ardm", "rnd-nocr", "rnd-cr", "mac-nocr", "mac-cr"] {
        let cmd = format!("sample-masks --n 6 --sampler {sampler} --count 50 --seed 4");
        let (code, out) = run(&cmd);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 50);
        assert_eq!(run(&cmd).1, out);
    }
}

#[test]
fn ablate_is_reproducible() {
    let ws = Workspace::new();
    let config = ws.path("a.json");
    fs::write(
        &config,
        r#"{"n_vars": 4, "alphabet": 2, "components": 2, "n_train": 100, "n_test": 30, "seeds": [0, 1],
            "steps": 10, "batch": 16, "hidden_sizes": [6], "outer_factor": 4, "eval_every": 5,
            "curve_size": 10, "tv_samples": 500}"#,
    )
    .unwrap();
    let mut reports = Vec::new();
    for name in ["r1", "r2"] {
        let out_dir = ws.path(name);
        let (code, out) = run(&format!("ablate --deterministic --config {config} --out-dir {out_dir}"));
        assert_eq!(code, 0);
        assert!(out.contains("mac-cr <= ardm"));
        let out_dir = Path::new(&out_dir);
        assert!(out_dir.join("curves/mac-cr_seed1.tsv").exists());
        reports.push(fs::read(out_dir.join("report.json")).unwrap());
        let tsv = fs::read_to_string(out_dir.join("arms.tsv")).unwrap();
        assert_eq!(tsv.lines().count(), 1 + 10);
    }
    assert_eq!(reports[0], reports[1]);

    let report: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    let hash = &report["eval_mask_hash"];
    for arm in report["arms"].as_array().unwrap() {
        assert_eq!(&arm["marginal_mac"]["mask_hash"], hash);
        assert!(arm["marginal_nll"].as_f64().unwrap().is_finite());
    }

    let bad = ws.path("bad.json");
    fs::write(&bad, r#"{"n_vars": 4, "arms": ["ardm", "ardm"]}"#).unwrap();
    let r3 = ws.path("r3");
    assert_eq!(run(&format!("ablate --config {bad} --out-dir {r3}")).0, 1);
}
