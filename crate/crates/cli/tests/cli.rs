use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use cmih_core::data::{read_features, write_labels};
use cmih_core::retrieval::{binarize, read_codes, write_codes, LabelSet, PackedCodes};
use cmih_core::trainer::Trainer;
use cmih_core::Modality;
use serde_json::Value;
use tempfile::TempDir;

fn cmih(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmih"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cmih(args);
    assert!(
        out.status.success(),
        "cmih {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, seed: u64) {
    ok(&[
        "synth",
        "--n",
        &n.to_string(),
        "--classes",
        "4",
        "--d-i",
        "10",
        "--d-t",
        "8",
        "--shared-dim",
        "3",
        "--private-dim-i",
        "2",
        "--private-dim-t",
        "2",
        "--seed",
        &seed.to_string(),
        "--n-query",
        "20",
        "--out",
        p(dir),
    ]);
}

/// Small file-backed run over the synthetic files in `data`.
fn write_config(dir: &Path, data: &Path, train: &str) -> PathBuf {
    let cfg = format!(
        r#"{{
  "data": {{"files": {{"image": "{}", "text": "{}", "labels": "{}", "split": "{}"}}}},
  "output_dir": "{}",
  "model": {{"code_len": 8, "enc_hidden": 16, "aux_hidden": 8}},
  "train": {{"epochs": 2, "batch_size": 16{train}}},
  "eval": {{"k": 10}}
}}"#,
        p(&data.join("image.bin")),
        p(&data.join("text.bin")),
        p(&data.join("labels.csv")),
        p(&data.join("split.txt")),
        p(&dir.join("run"))
    );
    let path = dir.join("cfg.json");
    fs::write(&path, cfg).unwrap();
    path
}

struct Fixture {
    tmp: TempDir,
    cfg: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let data = tmp.path().join("data");
        synth(&data, 100, 1);
        let cfg = write_config(tmp.path(), &data, "");
        Fixture { tmp, cfg }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.tmp.path().join(rel)
    }
}

#[test]
fn train_twice_gives_identical_checkpoints() {
    let f = Fixture::new();
    let (a, b) = (f.path("a"), f.path("b"));
    ok(&["train", "--config", p(&f.cfg), "--seed", "7", "--out", p(&a)]);
    ok(&["train", "--config", p(&f.cfg), "--seed", "7", "--out", p(&b)]);
    for name in [
        "checkpoint.bin",
        "loss.csv",
        "epochs.csv",
        "code_stats.json",
        "split.txt",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let c = f.path("c");
    ok(&["train", "--config", p(&f.cfg), "--seed", "8", "--out", p(&c)]);
    assert_ne!(
        fs::read(a.join("checkpoint.bin")).unwrap(),
        fs::read(c.join("checkpoint.bin")).unwrap()
    );
}

#[test]
fn resolved_config_carries_default_lambdas() {
    let f = Fixture::new();
    let out = f.path("run");
    ok(&["train", "--config", p(&f.cfg)]);
    let resolved: Value = serde_json::from_str(&fs::read_to_string(out.join("resolved_config.json")).unwrap()).unwrap();
    let l = &resolved["train"]["lambdas"];
    assert_eq!(
        [&l["lambda1"], &l["lambda2"], &l["lambda3"], &l["lambda4"]].map(|v| v.as_f64().unwrap()),
        [1.5, 1.0, 0.25, 0.01]
    );
    assert_eq!(resolved["train"]["seed"], 0);
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert!(loss.lines().count() > 1);
}

#[test]
fn missing_feature_file_exits_2_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("absent"), "");
    let out = cmih(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(p(&tmp.path().join("absent").join("image.bin"))), "{err}");
}

#[test]
fn bad_config_exits_1() {
    let f = Fixture::new();
    let text = fs::read_to_string(&f.cfg).unwrap().replace("\"epochs\"", "\"epoch\"");
    fs::write(&f.cfg, text).unwrap();
    assert_eq!(cmih(&["train", "--config", p(&f.cfg)]).status.code(), Some(1));
    let cfg = write_config(
        f.tmp.path(),
        &f.path("data"),
        r#", "lambdas": {"lambda1": 1.5, "lamda2": 1}"#,
    );
    assert_eq!(cmih(&["train", "--config", p(&cfg)]).status.code(), Some(1));
}

#[test]
fn encode_is_deterministic_and_matches_in_process_codes() {
    let f = Fixture::new();
    ok(&["train", "--config", p(&f.cfg)]);
    let ckpt = f.path("run/checkpoint.bin");
    let text = f.path("data/text.bin");
    let (a, b) = (f.path("a.codes"), f.path("b.codes"));
    for out in [&a, &b] {
        ok(&[
            "encode",
            "--checkpoint",
            p(&ckpt),
            "--features",
            p(&text),
            "--modality",
            "text",
            "--out",
            p(out),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let (codes, modality) = read_codes(&a).unwrap();
    assert_eq!(modality, Some(Modality::Text));
    let trainer = Trainer::restore(&ckpt).unwrap();
    let x = read_features(&text).unwrap();
    let expected: PackedCodes = binarize(&trainer.bundle.encode(Modality::Text, &x).unwrap());
    assert_eq!(codes.code_len(), 8);
    assert_eq!(codes.unpack(), expected.unpack());

    let q = f.path("q.codes");
    let split = f.path("data/split.txt");
    ok(&[
        "encode",
        "--checkpoint",
        p(&ckpt),
        "--features",
        p(&text),
        "--modality",
        "text",
        "--out",
        p(&q),
        "--split",
        p(&split),
        "--subset",
        "query",
    ]);
    assert_eq!(read_codes(&q).unwrap().0.len(), 20);
}

#[test]
fn encode_rejects_wrong_dimensions() {
    let f = Fixture::new();
    ok(&["train", "--config", p(&f.cfg)]);
    let out = cmih(&[
        "encode",
        "--checkpoint",
        p(&f.path("run/checkpoint.bin")),
        "--features",
        p(&f.path("data/text.bin")),
        "--modality",
        "image",
        "--out",
        p(&f.path("x.codes")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn labels(rows: &[&[usize]], classes: usize) -> LabelSet {
    let mut bits = vec![0u8; rows.len() * classes];
    for (r, cs) in rows.iter().enumerate() {
        for &c in *cs {
            bits[r * classes + c] = 1;
        }
    }
    LabelSet::from_multi_hot(&bits, rows.len(), classes).unwrap()
}

fn codes(rows: &[&str]) -> PackedCodes {
    let bits: Vec<u8> = rows.iter().flat_map(|r| r.bytes().map(|b| b - b'0')).collect();
    PackedCodes::pack(&bits, rows.len(), rows[0].len()).unwrap()
}

fn eval_json(dir: &Path, task: &str, extra: &[&str]) -> Value {
    let paths = ["q.codes", "db.codes", "q.csv", "db.csv", "out"].map(|n| dir.join(n));
    let [q, db, ql, dbl, out] = paths.each_ref().map(|x| p(x));
    let mut args = vec![
        "eval",
        "--query",
        q,
        "--db",
        db,
        "--query-labels",
        ql,
        "--db-labels",
        dbl,
        "--task",
        task,
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    ok(&args);
    serde_json::from_str(&fs::read_to_string(dir.join("out/metrics.json")).unwrap()).unwrap()
}

#[test]
fn eval_on_identical_codes_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let c = codes(&["0000", "0011", "1100", "1111"]);
    let l = labels(&[&[0], &[1], &[2], &[3]], 4);
    write_codes(&d.join("q.codes"), &c, Some(Modality::Image)).unwrap();
    write_codes(&d.join("db.codes"), &c, Some(Modality::Image)).unwrap();
    write_labels(&d.join("q.csv"), &l).unwrap();
    write_labels(&d.join("db.csv"), &l).unwrap();
    let m = eval_json(d, "img_to_img", &["--k", "4"]);
    assert_eq!(m["tasks"][0]["map_at_k"], 1.0);
}

/// Two queries against five database rows at L=4, scored by hand.
#[test]
fn eval_matches_hand_scored_fixture() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_codes(&d.join("q.codes"), &codes(&["0000", "1111"]), Some(Modality::Image)).unwrap();
    write_codes(
        &d.join("db.codes"),
        &codes(&["0000", "1000", "1100", "1110", "1111"]),
        Some(Modality::Text),
    )
    .unwrap();
    write_labels(&d.join("q.csv"), &labels(&[&[0], &[1]], 3)).unwrap();
    write_labels(&d.join("db.csv"), &labels(&[&[0], &[1], &[0, 2], &[2], &[0]], 3)).unwrap();
    let m = eval_json(d, "img_to_txt", &["--k", "5", "--prec-grid", "1,2,5,50"]);
    let t = &m["tasks"][0];

    // Query 0 ranks relevant rows at 1, 3, 5; query 1 ranks its only one at 4.
    let ap0 = (1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0;
    let ap1 = 1.0 / 4.0;
    let close = |v: &Value, want: f64| {
        let got = v.as_f64().unwrap();
        assert!((got - want).abs() <= 4.0 * f64::EPSILON, "{got} vs {want}");
    };
    close(&t["map_at_k"], (ap0 + ap1) / 2.0);
    let prec: Vec<(u64, f64)> = t["prec_at_k"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["k"].as_u64().unwrap(), e["precision"].as_f64().unwrap()))
        .collect();
    assert_eq!(prec.iter().map(|e| e.0).collect::<Vec<_>>(), [1, 2, 5]);
    for ((_, got), want) in prec.iter().zip([0.5, 0.25, 0.4]) {
        assert!((got - want).abs() <= 4.0 * f64::EPSILON);
    }
    let precision = [0.5, 0.25, 1.0 / 3.0, 3.0 / 8.0, 0.4];
    let recall = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0, 5.0 / 6.0, 1.0];
    let curve = t["pr_curve"].as_array().unwrap();
    assert_eq!(curve.len(), 5);
    for (r, pt) in curve.iter().enumerate() {
        assert_eq!(pt["radius"], r as u64);
        close(&pt["precision"], precision[r]);
        close(&pt["recall"], recall[r]);
    }
    let pr_csv = fs::read_to_string(d.join("out/pr_curve.csv")).unwrap();
    assert_eq!(pr_csv.lines().count(), 6);
    assert_eq!(
        fs::read_to_string(d.join("out/prec_at_k.csv")).unwrap().lines().count(),
        4
    );
}

#[test]
fn eval_rejects_mismatched_inputs() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_codes(&d.join("q.codes"), &codes(&["00", "01"]), Some(Modality::Image)).unwrap();
    write_codes(&d.join("db.codes"), &codes(&["00", "01", "11"]), Some(Modality::Text)).unwrap();
    write_labels(&d.join("q.csv"), &labels(&[&[0], &[1]], 2)).unwrap();
    write_labels(&d.join("db.csv"), &labels(&[&[0], &[1]], 2)).unwrap();
    let paths = ["q.codes", "db.codes", "q.csv", "db.csv", "out"].map(|n| d.join(n));
    let [q, db, ql, dbl, out] = paths.each_ref().map(|x| p(x));
    let run = |task| {
        let args = [
            "eval",
            "--query",
            q,
            "--db",
            db,
            "--query-labels",
            ql,
            "--db-labels",
            dbl,
            "--task",
            task,
            "--out",
            out,
        ];
        cmih(&args).status.code()
    };
    assert_eq!(run("img_to_txt"), Some(2));
    assert_eq!(run("txt_to_img"), Some(1));
}

#[test]
fn metrics_json_validates_against_documented_schema() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_codes(&d.join("q.codes"), &codes(&["0000", "1111"]), Some(Modality::Text)).unwrap();
    write_codes(
        &d.join("db.codes"),
        &codes(&["0000", "1000", "1100"]),
        Some(Modality::Image),
    )
    .unwrap();
    write_labels(&d.join("q.csv"), &labels(&[&[0], &[1]], 2)).unwrap();
    write_labels(&d.join("db.csv"), &labels(&[&[0], &[1], &[0, 1]], 2)).unwrap();
    let m = eval_json(d, "txt_to_img", &[]);
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/metrics.schema.json");
    let schema: Value = serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&m).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let parsed = cmih_core::report::MetricsReport::from_json(&m.to_string()).unwrap();
    assert_eq!(serde_json::to_value(&parsed).unwrap(), m);
    let mut broken = m.clone();
    broken["tasks"][0]["map_at_k"] = Value::from(1.5);
    assert!(!validator.is_valid(&broken));
}

#[test]
fn ablate_lambda2_writes_one_row_per_value() {
    let f = Fixture::new();
    let out = f.path("abl");
    ok(&[
        "ablate",
        "--config",
        p(&f.cfg),
        "--axis",
        "lambda2",
        "--values",
        "0,1,10",
        "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "axis,value,seed,img_to_txt,txt_to_img,img_to_img,txt_to_txt,corr_mse"
    );
    assert_eq!(lines.len(), 4);
    for (line, v) in lines[1..].iter().zip(["0", "1", "10"]) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!((fields[0], fields[1]), ("lambda2", v));
        for m in &fields[3..7] {
            let m: f64 = m.parse().unwrap();
            assert!((0.0..=1.0).contains(&m));
        }
    }
    assert!(out.join("ablation_summary.csv").is_file());
    assert!(out.join("resolved_config.json").is_file());
}

#[test]
fn ablate_rejects_unknown_axis() {
    let f = Fixture::new();
    let out = cmih(&["ablate", "--config", p(&f.cfg), "--axis", "lambda9", "--values", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let ok_name = cmih(&[
        "ablate",
        "--config",
        p(&f.cfg),
        "--axis",
        "l_ind",
        "--values",
        "0",
        "--seeds",
        "3",
    ]);
    assert!(ok_name.status.success(), "{}", String::from_utf8_lossy(&ok_name.stderr));
}

#[test]
fn check_passes_with_at_least_six_families() {
    let tmp = TempDir::new().unwrap();
    let json = tmp.path().join("check.json");
    let out = ok(&["check", "--instances", "20", "--out", p(&json)]);
    let text = String::from_utf8_lossy(&out.stdout);
    let families = text.lines().filter(|l| l.trim_end().ends_with(" ok")).count();
    assert!(families >= 6, "{text}");
    let report: Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert!(report["families"].as_array().unwrap().len() >= 6);
}

#[test]
fn check_with_500_instances_runs_under_a_minute() {
    let t = Instant::now();
    ok(&["check", "--instances", "500"]);
    assert!(t.elapsed().as_secs_f64() < 60.0, "{:?}", t.elapsed());
}

#[test]
fn synth_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--n", "2000", "--classes", "10", "--seed", "1", "--out", p(d)]);
    }
    for name in ["image.bin", "text.bin", "labels.csv", "synth_spec.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let x = read_features(&a.join("image.bin")).unwrap();
    assert_eq!(x.shape(), (2000, 64));
    let c = tmp.path().join("c");
    ok(&["synth", "--n", "2000", "--classes", "10", "--seed", "2", "--out", p(&c)]);
    assert_ne!(
        fs::read(a.join("image.bin")).unwrap(),
        fs::read(c.join("image.bin")).unwrap()
    );
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(cmih(&["--help"]).status.code(), Some(0));
    assert_eq!(cmih(&["train", "--help"]).status.code(), Some(0));
    assert_eq!(cmih(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cmih(&["train"]).status.code(), Some(1));
}
