use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qikt_core::data::load_dataset;
use qikt_core::model::{load_checkpoint, Variant};

fn qikt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qikt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> String {
    let out = qikt(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn csv_header(p: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

/// Small synthetic log shared by the training tests.
fn small_data(dir: &Path) -> PathBuf {
    let out = dir.join("syn");
    ok(&[
        "synth", "--out", s(&out), "--students", "40", "--questions", "15", "--kcs", "4",
        "--len-min", "10", "--len-max", "25", "--seed", "3",
    ]);
    out.join("data.csv")
}

fn quick_train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "train", "--data", s(data), "--out", s(out), "--d", "4", "--max-epochs", "2", "--batch-size", "8",
        "--lr", "1e-2", "--folds", "3", "--seed", "1",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn synth_writes_data_oracle_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let args = |o: &Path| {
        vec![
            "synth".to_string(),
            "--students".into(),
            "100".into(),
            "--questions".into(),
            "50".into(),
            "--kcs".into(),
            "10".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            s(o).to_string(),
        ]
    };
    let a: Vec<String> = args(&out);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    for f in ["data.csv", "oracle.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let ds = load_dataset(&out.join("data.csv")).unwrap();
    let ids: BTreeSet<_> = ds.sequences.iter().map(|q| q.student_id.clone()).collect();
    assert_eq!(ids.len(), 100);
    let oracle = csv_rows(&out.join("oracle.csv"));
    assert_eq!(oracle.len(), ds.interaction_count());

    let again = dir.path().join("b");
    let b: Vec<String> = args(&again);
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    for f in ["data.csv", "oracle.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["gamma"], "0.05");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
    assert!(manifest["duration_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn invalid_flags_exit_one_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("missing.csv");
    let out = dir.path().join("out");
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "lr=1e-3\nwidth=3\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["synth", "--out", s(&out), "--students", "0"],
        vec!["synth", "--out", s(&out), "--kcs-min", "4", "--kcs-max", "2"],
        vec!["synth", "--out", s(&out), "--gamma", "-1"],
        vec!["synth", "--students", "5"],
        vec!["train", "--data", s(&data), "--out", s(&out), "--lr", "abc"],
        vec!["train", "--data", s(&data), "--out", s(&out), "--lr", "-1"],
        vec!["train", "--data", s(&data), "--out", s(&out), "--lr", "0"],
        vec!["train", "--data", s(&data), "--out", s(&out), "--grid", "--grid-lrs", "1e-3,0"],
        vec!["train", "--data", s(&data), "--out", s(&out), "--variant", "w/o_ks"],
        vec!["train", "--data", s(&data), "--out", s(&out), "--fold", "5"],
        vec!["train", "--data", s(&data), "--out", s(&out), "--d", "0"],
        vec!["train", "--data", s(&data), "--out", s(&out), "--grid", "--grid-dims", ""],
        vec!["train", "--data", s(&data), "--out", s(&out), "--config", s(&cfg)],
        vec!["train", "--data", s(&data), "--out", s(&out), "--no-such-flag", "1"],
        vec!["export", "--data", s(&data), "--out", s(&out), "--checkpoint", "c", "--student", "x", "--kcs", ","],
        vec!["frobnicate"],
    ];
    for args in cases {
        let res = qikt(&args);
        assert_eq!(code(&res), 1, "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(!out.exists(), "{args:?} left output behind");
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    assert_eq!(code(&qikt(&["--help"])), 0);
    assert_eq!(code(&qikt(&["train", "--help"])), 0);
    assert_eq!(code(&qikt(&["--version"])), 0);
}

#[test]
fn runtime_failures_exit_two_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.csv");
    let res = qikt(&["train", "--data", s(&missing), "--out", s(&out)]);
    assert_eq!(code(&res), 2);
    assert!(!out.exists());

    let malformed = dir.path().join("bad.csv");
    fs::write(&malformed, "student_id,question_id,kc_ids,response,timestamp\ns,q,k,7,0\n").unwrap();
    let res = qikt(&["train", "--data", s(&malformed), "--out", s(&out)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.cfg");
    fs::write(&cfg, "# small\nstudents = 12\nquestions=9\nseed=5\n").unwrap();
    let out = dir.path().join("o");
    ok(&["synth", "--config", s(&cfg), "--questions", "6", "--out", s(&out)]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["students"], "12");
    assert_eq!(manifest["config"]["questions"], "6");
    assert_eq!(manifest["config"]["seed"], "5");
    assert_eq!(manifest["config"]["kcs"], "20");
    let ds = load_dataset(&out.join("data.csv")).unwrap();
    assert_eq!(ds.sequences.len(), 12);
    assert!(ds.n <= 6);
}

#[test]
fn train_single_fold_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let out = dir.path().join("run");
    ok(&[
        "train", "--data", s(&data), "--d", "16", "--lambda", "1.0", "--lr", "1e-3", "--fold", "0", "--seed",
        "1", "--max-epochs", "2", "--out", s(&out),
    ]);
    let params = load_checkpoint(&out.join("fold-0/checkpoint.bin")).unwrap();
    assert_eq!(params.config.d, 16);
    assert_eq!(params.config.variant, Variant::Full);
    let report = csv_rows(&out.join("report.csv"));
    assert_eq!(report.len(), 1);
    assert_eq!(report[0][0], "0");
    let auc: f64 = report[0][4].parse().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(csv_rows(&out.join("fold-0/epochs.csv")).len(), 2);
    assert!(!out.join("fold-1").exists());
}

#[test]
fn train_variant_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let out = dir.path().join("no_ks");
    quick_train(&data, &out, &["--variant", "no_ks", "--fold", "1"]);
    let params = load_checkpoint(&out.join("fold-1/checkpoint.bin")).unwrap();
    assert_eq!(params.config.variant, Variant::NoKs);

    let out = dir.path().join("grid");
    quick_train(
        &data,
        &out,
        &["--grid", "--grid-lambdas", "0,1", "--grid-lrs", "1e-2", "--grid-dims", "4,6", "--fold", "0"],
    );
    let cells = csv_rows(&out.join("grid.csv"));
    assert_eq!(cells.len(), 4);
    let selected: Vec<_> = cells.iter().filter(|c| c[6] == "1").collect();
    assert_eq!(selected.len(), 1);
    let chosen_d: usize = selected[0][2].parse().unwrap();
    let params = load_checkpoint(&out.join("fold-0/checkpoint.bin")).unwrap();
    assert_eq!(params.config.d, chosen_d);
}

#[test]
fn eval_reports_and_pvalues() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let a = dir.path().join("a");
    quick_train(&data, &a, &[]);
    let b = dir.path().join("b");
    fs::create_dir(&b).unwrap();
    for entry in ["manifest.json", "report.csv"] {
        fs::copy(a.join(entry), b.join(entry)).unwrap();
    }
    for f in 0..3 {
        fs::create_dir(b.join(format!("fold-{f}"))).unwrap();
        fs::copy(
            a.join(format!("fold-{f}/checkpoint.bin")),
            b.join(format!("fold-{f}/checkpoint.bin")),
        )
        .unwrap();
    }

    let single = dir.path().join("eval1");
    let stdout = ok(&["eval", "--run", s(&a), "--out", s(&single)]);
    assert!(stdout.contains("AUC"));
    let rows = csv_rows(&single.join("report.csv"));
    assert_eq!(rows.len(), 3);
    let trained = csv_rows(&a.join("report.csv"));
    for (e, t) in rows.iter().zip(&trained) {
        let auc: f64 = e[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&auc));
        assert_eq!(e[2], t[4], "eval must reproduce the training-time test AUC");
    }
    assert!(!single.join("pvalues.csv").exists());

    let pair = dir.path().join("eval2");
    ok(&["eval", "--run", &format!("{},{}", s(&a), s(&b)), "--out", s(&pair)]);
    let p = csv_rows(&pair.join("pvalues.csv"));
    assert_eq!(csv_header(&pair.join("pvalues.csv")), ["run", "a", "b"]);
    assert_eq!(p[0][2], "1.0000");
    assert_eq!(p[1][1], "1.0000");
    assert_eq!(csv_rows(&pair.join("summary.csv")).len(), 2);

    fs::remove_file(b.join("fold-2/checkpoint.bin")).unwrap();
    let broken = dir.path().join("eval3");
    let res = qikt(&["eval", "--run", &format!("{},{}", s(&a), s(&b)), "--out", s(&broken)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("checkpoint"));
    assert!(!broken.exists());
}

#[test]
fn eval_rejects_changed_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let run = dir.path().join("run");
    quick_train(&data, &run, &["--fold", "0"]);
    let other = dir.path().join("other.csv");
    let mut text = fs::read_to_string(&data).unwrap();
    text = text.replacen(",1,", ",0,", 1);
    fs::write(&other, text).unwrap();
    let res = qikt(&["eval", "--run", s(&run), "--data", s(&other), "--out", s(&dir.path().join("e"))]);
    assert_eq!(code(&res), 2);
}

#[test]
fn export_steps_columns_and_unknown_student() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    ok(&[
        "synth", "--out", s(&syn), "--students", "12", "--questions", "10", "--kcs", "5", "--len-min", "51",
        "--len-max", "51", "--seed", "2",
    ]);
    let data = syn.join("data.csv");
    let run = dir.path().join("run");
    quick_train(&data, &run, &["--fold", "0"]);
    let ckpt = run.join("fold-0/checkpoint.bin");
    let ds = load_dataset(&data).unwrap();
    let student = ds.sequences[0].student_id.clone();

    let out = dir.path().join("all");
    ok(&["export", "--data", s(&data), "--checkpoint", s(&ckpt), "--student", &student, "--out", s(&out)]);
    assert_eq!(csv_rows(&out.join("module_outputs.csv")).len(), 50);
    let states = csv_rows(&out.join("knowledge_states.csv"));
    assert_eq!(states.len(), 50);
    assert_eq!(states[0].len(), 1 + ds.m);

    let out = dir.path().join("three");
    ok(&[
        "export", "--data", s(&data), "--checkpoint", s(&ckpt), "--student", &student, "--kcs", "0,1,2", "--out",
        s(&out),
    ]);
    assert_eq!(csv_header(&out.join("knowledge_states.csv")).len(), 4);
    let named = dir.path().join("named");
    let first = ds.kc_names[0].clone();
    ok(&[
        "export", "--data", s(&data), "--checkpoint", s(&ckpt), "--student", &student, "--kcs", &first, "--out",
        s(&named),
    ]);
    assert_eq!(csv_header(&named.join("knowledge_states.csv")), ["step", first.as_str()]);

    let missing = dir.path().join("missing");
    let res = qikt(&[
        "export", "--data", s(&data), "--checkpoint", s(&ckpt), "--student", "nobody", "--out", s(&missing),
    ]);
    assert_eq!(code(&res), 2);
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("12 student ids available"), "{err}");
    assert!(!missing.exists());

    let res = qikt(&[
        "export", "--data", s(&data), "--checkpoint", s(&ckpt), "--student", &student, "--kcs", "zz", "--out",
        s(&missing),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn ablate_reports_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let out = dir.path().join("abl");
    ok(&[
        "ablate", "--data", s(&data), "--out", s(&out), "--d", "4", "--max-epochs", "1", "--folds", "2",
        "--batch-size", "8", "--lr", "1e-2",
    ]);
    let names: Vec<String> = csv_rows(&out.join("summary.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(names, ["full", "no_irt", "no_ks", "no_ps", "no_ks_ps"]);
    assert_eq!(csv_rows(&out.join("report.csv")).len(), 10);
    assert_eq!(csv_rows(&out.join("pvalues.csv")).len(), 5);
}

#[test]
fn replay_reproduces_and_detects_changes() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let run = dir.path().join("run");
    quick_train(&data, &run, &["--fold", "2"]);
    let again = dir.path().join("again");
    let stdout = ok(&["replay", "--manifest", s(&run.join("manifest.json")), "--out", s(&again)]);
    assert!(stdout.contains("replay matches"));
    assert_eq!(
        fs::read(run.join("fold-2/checkpoint.bin")).unwrap(),
        fs::read(again.join("fold-2/checkpoint.bin")).unwrap()
    );

    let synth_manifest = data.parent().unwrap().join("manifest.json");
    ok(&["replay", "--manifest", s(&synth_manifest), "--out", s(&dir.path().join("syn2"))]);

    fs::write(&data, fs::read_to_string(&data).unwrap() + "zz,q0,k0,1,0\n").unwrap();
    let res = qikt(&["replay", "--manifest", s(&run.join("manifest.json")), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("changed"));
}

#[test]
fn jobs_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let one = dir.path().join("one");
    quick_train(&data, &one, &["--jobs", "1"]);
    let many = dir.path().join("many");
    quick_train(&data, &many, &["--jobs", "3"]);
    for f in ["report.csv", "fold-0/checkpoint.bin", "fold-2/epochs.csv"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(many.join(f)).unwrap(), "{f}");
    }
}
