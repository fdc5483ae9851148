use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tnsketch")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, kind: &str, dims: &str, noise: &str) -> Value {
    ok(&["generate", "--kind", kind, "--dims", dims, "--rank", "2", "--noise", noise, "--seed", "4", "--out", p(dir)])
}

#[test]
fn network_evaluated_against_itself_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("ring");
    generate(&inst, "ring", "3,4,3", "0");
    let r = ok(&["eval", p(&inst), "--model", p(&inst.join("planted"))]);
    assert!(r["error"].as_f64().unwrap() <= 1e-10 * r["witness_eta"].as_f64().unwrap().max(1.0));
}

#[test]
fn best_of_seeds_reports_every_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("tt");
    generate(&inst, "tt", "5,5,5,5", "0.3");
    let r = ok(&["decompose-tt", p(&inst), "--rank", "2", "--seeds", "5", "--constants", "0.05,0.2,1"]);
    let errs: Vec<f64> = r["per_seed_errors"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    assert_eq!(errs.len(), 5);
    let min = errs.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(r["error"].as_f64().unwrap(), min);
    let best = r["best_seed"].as_u64().unwrap();
    let pos = r["seeds"].as_array().unwrap().iter().position(|s| s.as_u64() == Some(best)).unwrap();
    assert_eq!(errs[pos], min);
}

#[test]
fn bench_rows_double() {
    let r = ok(&["bench", "--scale-nnz", "4", "--q", "3", "--base-nnz", "500", "--base-n", "8", "--runs", "1"]);
    let rows = r["extra"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let nnz: Vec<u64> = rows.iter().map(|x| x["nnz"].as_u64().unwrap()).collect();
    assert!(nnz.windows(2).all(|w| w[1] > w[0]), "{nnz:?}");
    assert!(rows.iter().all(|x| x["seconds"].as_f64().unwrap() >= 0.0));
}

#[test]
fn runs_replay_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("tree");
    generate(&inst, "tree", "4,4,4,4", "0.2");
    let args = ["decompose-tree", p(&inst), "--rank", "2", "--seeds", "3", "--seed", "11", "--constants", "0.05,0.2,1"];
    let a = ok(&args);
    let b = ok(&args);
    assert_eq!(a["error"], b["error"]);
    assert_eq!(a["per_seed_errors"], b["per_seed_errors"]);
    assert_eq!(a["ranks"], b["ranks"]);
}

#[test]
fn stored_model_reproduces_reported_error() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("tt");
    let out = tmp.path().join("model");
    generate(&inst, "tt", "4,5,4", "0.2");
    let r = ok(&["decompose-tt", p(&inst), "--rank", "2", "--constants", "0.05,0.2,1", "--out", p(&out)]);
    assert!(out.join("report.json").exists());
    let e = ok(&["eval", p(&inst), "--model", p(&out)]);
    let (x, y) = (r["error"].as_f64().unwrap(), e["error"].as_f64().unwrap());
    assert!((x - y).abs() <= 1e-9 * x.max(1.0), "{x} vs {y}");
}

#[test]
fn exit_codes_separate_bad_input_from_resource_limits() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.tns");
    std::fs::write(&bad, "1 1 nope\n").unwrap();
    assert_eq!(run(&["decompose-tt", p(&bad)]).status.code(), Some(2));
    assert_eq!(run(&["decompose-tt", p(&tmp.path().join("missing.tns"))]).status.code(), Some(2));
    assert_eq!(run(&["decompose-tt", p(&bad), "--eps", "0"]).status.code(), Some(2));

    let inst = tmp.path().join("big");
    generate(&inst, "tt", "6,6,6", "0");
    let out = run(&["decompose-tt", p(&inst), "--dense-cap", "10"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn compile_net_writes_plan_and_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("ring");
    let out = tmp.path().join("compiled");
    generate(&inst, "ring", "3,3,3,3", "0");
    let r = ok(&["compile-net", "--net", p(&inst.join("planted")), "--out", p(&out)]);
    assert!(r["error"].as_f64().unwrap() <= 1e-9);
    assert!(out.join("plan.json").exists());
    let replay = ok(&["compile-net", "--net", p(&inst.join("planted")), "--plan", p(&out.join("plan.json"))]);
    assert_eq!(replay["error"], r["error"]);
    let e = ok(&["eval", p(&inst), "--model", p(&out)]);
    assert!(e["error"].as_f64().unwrap() <= 1e-9 * e["witness_eta"].as_f64().unwrap().max(1.0));
}

#[test]
fn fpt_tucker_writes_factors() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("tucker");
    let out = tmp.path().join("fpt");
    ok(&["generate", "--kind", "tucker", "--dims", "4,4,4", "--rank", "1", "--seed", "2", "--out", p(&inst)]);
    let r = ok(&["fpt-tucker", p(&inst), "--rank", "1", "--trials", "20", "--out", p(&out)]);
    assert_eq!(r["ranks"], serde_json::json!([1, 1, 1]));
    for m in 0..3 {
        assert!(out.join(format!("factor_{m}.tns")).exists());
    }
    let cand: Value = serde_json::from_str(&std::fs::read_to_string(out.join("candidate.json")).unwrap()).unwrap();
    assert_eq!(cand["cost"], r["extra"]["cost"]);
    let pcp = ok(&["fpt-tucker", p(&inst), "--rank", "1", "--trials", "20", "--eval-mode", "pcp"]);
    assert!(pcp["error"].as_f64().is_some());
}

#[test]
fn generate_follows_a_given_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let shape = tmp.path().join("shape.json");
    std::fs::write(
        &shape,
        r#"{"vertices":[{"id":0,"open_mode_size":3,"parent":null},{"id":1,"open_mode_size":2,"parent":0},{"id":2,"open_mode_size":4,"parent":0}]}"#,
    )
    .unwrap();
    let inst = tmp.path().join("tree");
    let g = ok(&["generate", "--kind", "tree", "--tree", p(&shape), "--rank", "2", "--out", p(&inst)]);
    assert_eq!(g["error"].as_f64().unwrap(), 0.0);
    assert!(inst.join("shape.json").exists());
    let r = ok(&["decompose-tree", p(&inst), "--rank", "2", "--root", "1"]);
    assert!(r["relative_error"].as_f64().unwrap() <= 1e-8);
}
