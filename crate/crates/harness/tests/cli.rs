use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn liewalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liewalk"))
        .args(args)
        .env_remove("LIEWALK_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn paths(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                paths(x, &p, out);
            }
        }
        Value::Array(a) => {
            let p = format!("{prefix}[]");
            if a.is_empty() {
                out.insert(p.clone());
            }
            for x in a {
                paths(x, &p, out);
            }
        }
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

fn schemas() -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas.json");
    read_json(&p)
}

fn check_json(dir: &Path, name: &str, schemas: &Value) {
    let v = read_json(&dir.join(name));
    let want = &schemas["json"][name];
    assert_eq!(v["schema"], want["schema"], "{name}");
    let mut got = BTreeSet::new();
    paths(&v, "", &mut got);
    let want: BTreeSet<String> = want["fields"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect();
    assert_eq!(got, want, "{name} fields drifted from docs/schemas.json");
    let meta = read_json(&dir.join(format!("{name}.meta.json")));
    let keys: Vec<&str> = meta.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    let want: Vec<&str> = schemas["sidecar"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(keys, want);
}

fn check_csv(dir: &Path, name: &str, schemas: &Value) {
    let text = std::fs::read_to_string(dir.join(name)).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let want: Vec<&str> = schemas["csv"][name].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(header, want, "{name} columns");
}

#[test]
fn report_files_match_frozen_schemas() {
    let s = schemas();
    let tmp = tempfile::tempdir().unwrap();
    let dir = |n: &str| tmp.path().join(n);
    let arg = |n: &str| dir(n).to_string_lossy().into_owned();

    assert_eq!(code(&liewalk(&["walk", "--d", "4", "--output-dir", &arg("w")])), 0);
    check_json(&dir("w"), "walk.json", &s);
    check_csv(&dir("w"), "walk.csv", &s);

    assert_eq!(code(&liewalk(&["spectra", "--d", "4", "--output-dir", &arg("s")])), 0);
    check_json(&dir("s"), "spectra_degree1.json", &s);
    check_json(&dir("s"), "spectra_degree2.json", &s);

    assert_eq!(code(&liewalk(&["sweep", "--d-list", "3..6", "--output-dir", &arg("sw")])), 0);
    check_json(&dir("sw"), "sweep.json", &s);
    check_csv(&dir("sw"), "sweep.csv", &s);

    let target = tmp.path().join("t.txt");
    std::fs::write(&target, "0 0 -1 0 0 0\n1 0 0 0 0 0\n0 0 0 0 1 0\n").unwrap();
    let o = liewalk(&["compile", "--target", target.to_str().unwrap(), "--eps1", "0.3", "--output-dir", &arg("c")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    check_json(&dir("c"), "compile.json", &s);
    assert!(dir("c").join("compile.word").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(code(&liewalk(&["walk", "--output-dir", out])), 1, "missing d");
    assert_eq!(code(&liewalk(&["walk", "--d", "4", "--eta", "uniform", "--output-dir", out])), 1);
    assert_eq!(code(&liewalk(&["frobnicate"])), 1);
    assert_eq!(code(&liewalk(&["--help"])), 0);
    let o = liewalk(&["walk", "--d", "8", "--max-steps", "5", "--output-dir", out]);
    assert_eq!(code(&o), 3, "not mixed");
    // the report is still written
    assert!(tmp.path().join("walk.json").exists());
    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "1 0 0 0\n0 0 one 0\n").unwrap();
    let o = liewalk(&["compile", "--target", bad.to_str().unwrap(), "--output-dir", out]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let o = liewalk(&["selftest", "--filter", "walk::embed", "--inject-fault", "embed-sign"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL walk::embed_definition"));
}

#[test]
fn config_file_and_env() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "d = 3\nepsilon = 0.2\nseed = 4\n").unwrap();
    let out = tmp.path().join("o");
    let o = liewalk(&["walk", "--config", cfg.to_str().unwrap(), "--epsilon", "0.1", "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v = read_json(&out.join("walk.json"));
    assert_eq!(v["config"]["d"], 3);
    assert_eq!(v["config"]["epsilon"], 0.1);
    assert_eq!(v["config"]["seed"], 4);

    std::fs::write(&cfg, "d = 3\nbogus line\n").unwrap();
    let o = liewalk(&["walk", "--config", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config line 2"));

    let o = Command::new(env!("CARGO_BIN_EXE_liewalk"))
        .args(["walk", "--d", "3", "--output-dir", out.to_str().unwrap()])
        .env("LIEWALK_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for t in ["1", "3"] {
        let out = tmp.path().join(t);
        let o = liewalk(&["walk", "--d", "5", "--seed", "9", "--threads", t, "--output-dir", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        let mut v = read_json(&out.join("walk.json"));
        v["config"]["output_dir"] = Value::Null;
        reports.push((v, std::fs::read_to_string(out.join("walk.csv")).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn sweep_replay_skips_walks() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("r.csv");
    std::fs::write(&csv, "d,steps\n3,27\n4,64\n5,125\n6,216\n").unwrap();
    let out = tmp.path().join("o");
    let o = liewalk(&["sweep", "--replay", csv.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v = read_json(&out.join("sweep.json"));
    assert_eq!(v["report"]["replay"], true);
    let e = v["report"]["fit"]["exponent_estimate"].as_f64().unwrap();
    assert!((e - 3.0).abs() < 1e-9);
}
