use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_roosterize"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fixtures")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn help_lists_commands() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["suggest_naming", "train", "evaluate", "gen_corpus", "serve"] {
        assert!(text.contains(cmd), "{text}");
    }
}

#[test]
fn gen_corpus_defaults_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = bin().args(["gen_corpus", "--seed", "7", "--out"]).arg(d).output().unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let files = dir_bytes(&a);
    assert_eq!(files.len(), 10);
    let lemmas: usize = files.iter().map(|(_, b)| String::from_utf8_lossy(b).matches("(lemma").count()).sum();
    assert_eq!(lemmas, 100);
    assert_eq!(files, dir_bytes(&b));

    let out = bin().args(["gen_corpus", "--docs", "0", "--out"]).arg(tmp.path().join("c")).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("c").exists());
}

#[test]
fn bundled_corpus_matches_generator() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().args(["gen_corpus", "--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(code(&out), 0);
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/bundled");
    assert_eq!(dir_bytes(tmp.path()), dir_bytes(&bundled));
}

#[test]
fn invalid_config_name_lists_choices() {
    let out = bin().args(["train", "--data", ".", "--config-name", "ckt+stmt"]).output().unwrap();
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    for name in ["stmt", "stmt+cst", "stmt+ckt", "cst+ckt", "stmt+cst+ckt"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn train_on_bundled_has_falling_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    let out = bin()
        .args(["train", "--data"])
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/bundled"))
        .args(["--config-name", "stmt", "--epochs", "30", "--embed-dim", "32", "--hidden-dim", "64", "--out"])
        .arg(&ckpt)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(tmp.path().join("m.ckpt.epochs.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = log.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 30);
    assert!(rows.iter().all(|r| r.len() == 3 && r[2] != "-"), "validation column expected");
    let loss: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let head: f64 = loss[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = loss[25..].iter().sum::<f64>() / 5.0;
    assert!(tail < 0.5 * head, "{loss:?}");
}

#[test]
fn evaluate_k1_and_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixtures().join("corpus");
    let model = fixtures().join("model.ckpt");
    let run = |out: &str, extra: &[&str]| {
        let o = bin()
            .args(["evaluate", "--data"])
            .arg(&data)
            .args(extra)
            .arg("--out")
            .arg(tmp.path().join(out))
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read_to_string(tmp.path().join(format!("{out}.jsonl"))).unwrap()
    };
    let m = model.to_str().unwrap();
    let k1 = run("k1", &["--model", m, "-k", "1"]);
    for line in k1.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["top1"], v["top5"], "{line}");
    }
    assert_eq!(run("a", &["--model", m]), run("b", &["--model", m]));
    let base = run("base", &["--baseline"]);
    let agg: Value = serde_json::from_str(base.lines().last().unwrap()).unwrap();
    assert_eq!(agg["kind"], "aggregate");
    assert_eq!(agg["suggester"], "retrieval");
    assert!(tmp.path().join("base.index.json").is_file());
}

#[test]
fn rc_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join(".roosterizerc"),
        format!("compile_cmd: make -j8\nk: 3\nmodel_path: {}\n", fixtures().join("model.ckpt").display()),
    )
    .unwrap();
    let file = fixtures().join("planted.lemmas.sexp");
    let counts = |extra: &[&str]| {
        let report = tmp.path().join("r.jsonl");
        let o = bin()
            .arg("--project")
            .arg(tmp.path())
            .args(["suggest_naming", "--file"])
            .arg(&file)
            .args(extra)
            .arg("--report")
            .arg(&report)
            .output()
            .unwrap();
        assert!(code(&o) <= 1, "{}", stderr(&o));
        let first: Value = serde_json::from_str(fs::read_to_string(&report).unwrap().lines().next().unwrap()).unwrap();
        first["suggestions"].as_array().unwrap().len()
    };
    assert_eq!(counts(&[]), 3);
    assert_eq!(counts(&["--k", "7"]), 7);

    fs::write(tmp.path().join(".roosterizerc"), "k: 3\nbogus: 1\n").unwrap();
    let o = bin().arg("--project").arg(tmp.path()).args(["suggest_naming", "--file"]).arg(&file).output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));
}

#[test]
fn errors_exit_2_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("r.jsonl");
    let o = bin()
        .current_dir(tmp.path())
        .args(["suggest_naming", "--file"])
        .arg(fixtures().join("clean.lemmas.sexp"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no model checkpoint"), "{}", stderr(&o));

    let bad = tmp.path().join("bad.lemmas.sexp");
    fs::write(&bad, "(lemma (name x)").unwrap();
    let o = bin()
        .args(["suggest_naming", "--model"])
        .arg(fixtures().join("model.ckpt"))
        .arg("--file")
        .arg(&bad)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(stderr(&o).trim().lines().count(), 1, "{}", stderr(&o));
    assert!(!report.exists());
}

#[test]
fn server_survives_malformed_json() {
    use std::io::Write;
    use std::process::Stdio;
    let frame = |b: &str| format!("Content-Length: {}\r\n\r\n{b}", b.len());
    let input = [frame("{oops"), frame(r#"{"jsonrpc":"2.0","id":9,"method":"shutdown"}"#), frame(r#"{"jsonrpc":"2.0","method":"exit"}"#)].concat();
    let mut child = bin()
        .args(["serve", "--model"])
        .arg(fixtures().join("model.ckpt"))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("-32700"), "{text}");
    assert!(text.contains(r#""id":9"#), "{text}");
}
