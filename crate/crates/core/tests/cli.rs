//! End-to-end checks of the `dvs` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvs"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run dvs")
}

const SMALL: &str = "[dataset]\nframes_per_class = 6\n";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn gen_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = dvs(&["gen", "--config", &cfg, "--seed", "9", "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (mut ta, mut tb) = (tree(&a), tree(&b));
    // Snapshots differ only in the output path.
    let snap = |t: &mut BTreeMap<String, Vec<u8>>| {
        let text = String::from_utf8(t.remove("config.toml").unwrap()).unwrap();
        text.lines().filter(|l| !l.starts_with("out = ")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(snap(&mut ta), snap(&mut tb));
    assert!(ta.contains_key("manifest.jsonl"));
    assert_eq!(ta, tb);
    let c = tmp.path().join("c");
    assert!(dvs(&["gen", "--config", &cfg, "--seed", "10", "--out", c.to_str().unwrap()]).status.success());
    assert_ne!(tree(&c)["scenarios.jsonl"], ta["scenarios.jsonl"]);
}

#[test]
fn eval_of_perfect_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let data = tmp.path().join("data");
    assert!(dvs(&["gen", "--config", &cfg, "--out", data.to_str().unwrap()]).status.success());
    let manifest = fs::read_to_string(data.join("manifest.jsonl")).unwrap();
    let preds: String = manifest
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            format!("{{\"frame_id\":{},\"class_id\":{}}}\n", v["frame_id"], v["class_id"])
        })
        .collect();
    let pred_path = tmp.path().join("preds.jsonl");
    fs::write(&pred_path, preds).unwrap();
    let out = tmp.path().join("eval");
    let o = dvs(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--predictions",
        pred_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("accuracy 1.0000"), "{stdout}");
    assert!(out.join("report.json").exists() && out.join("confusion.json").exists());
}

#[test]
fn invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[dataset]\nframes = 3\n");
    let o = dvs(&["gen", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[invalid-config]"));
    assert_eq!(dvs(&["gen", "--bogus"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = dvs(&["gen", "--config", "/nonexistent/run.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let o = dvs(&["train", "--data", tmp.path().join("nodata").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let o = dvs(&["infer", "--model", tmp.path().join("nomodel").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn small_bench_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[bench]\nframes = 20\nrepeats = 2\n");
    let out = tmp.path().join("bench");
    let o = dvs(&["bench", "--config", &cfg, "--workers", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("bench.json")).unwrap()).unwrap();
    assert_eq!(report["frames"], 20);
    assert!(report["median_frames_per_s"].as_f64().unwrap() > 0.0);
}
