use std::path::PathBuf;
use std::process::{Command, Output};

use dtucker::tree::tree_cost;
use dtucker::{ProblemSpec, TtmTree};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtucker")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON output")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dtucker-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn plan_has_all_sections_and_consistent_flops() {
    let out = run(&["plan", "--L", "672,672,627,16", "--K", "279,279,153,14", "--procs", "32", "--tree", "opt"]);
    let plan = json(&out);
    for key in ["tree", "static", "dynamic", "predicted"] {
        assert!(plan.get(key).is_some(), "missing {key}");
    }
    let tree: TtmTree = serde_json::from_value(plan["tree"].clone()).unwrap();
    let spec: ProblemSpec = serde_json::from_value(plan["spec"].clone()).unwrap();
    assert_eq!(plan["predicted"]["flops"].as_u64(), Some(tree_cost(&tree, &spec).unwrap().total_flops));
    assert!(plan["predicted"]["dynamic_volume"].as_u64() <= plan["predicted"]["static_volume"].as_u64());
}

#[test]
fn single_processor_plan_is_silent() {
    let plan = json(&run(&["plan", "--L", "20,30,40", "--K", "5,6,7"]));
    assert_eq!(plan["static"]["grid"], serde_json::json!([1, 1, 1]));
    assert_eq!(plan["predicted"]["static_volume"].as_u64(), Some(0));
    assert_eq!(plan["predicted"]["dynamic_volume"].as_u64(), Some(0));
}

#[test]
fn toy_trace_matches_model() {
    let out = run(&["simulate", "--L", "8,4,2", "--K", "4,2,2", "--procs", "8", "--grid", "static", "--trace"]);
    let ledger = json(&out);
    for row in ledger["rows"].as_array().unwrap() {
        assert_eq!(row["grid"], serde_json::json!([2, 2, 2]));
        assert_eq!(row["measured_ttm_volume"], row["model_ttm_volume"]);
    }
    let p1 = json(&run(&["simulate", "--L", "8,4,2", "--K", "4,2,2", "--trace"]));
    assert_eq!(p1["model_total_volume"].as_u64(), Some(0));
    assert!(p1["rows"].as_array().unwrap().iter().all(|r| r["measured_ttm_volume"] == 0));
}

#[test]
fn edited_plan_with_one_regrid() {
    let path = scratch("plan.json");
    let out = run(&["plan", "--L", "8,4,2", "--K", "4,2,2", "--procs", "8", "--tree", "chain-input"]);
    let mut plan = json(&out);
    // Root on <4,2,1>, every TTM on <2,2,2>: each chain regrids once at its top.
    plan["dynamic"]["scheme"]["root"] = serde_json::json!([4, 2, 1]);
    for (_, g) in plan["dynamic"]["scheme"]["nodes"].as_object_mut().unwrap() {
        *g = serde_json::json!([2, 2, 2]);
    }
    std::fs::write(&path, serde_json::to_vec(&plan).unwrap()).unwrap();
    let ledger = json(&run(&["simulate", "--plan", path.to_str().unwrap(), "--trace"]));
    let rows = ledger["rows"].as_array().unwrap();
    let regrids: Vec<&Value> = rows.iter().filter(|r| r["model_regrid_volume"].as_u64() > Some(0)).collect();
    assert_eq!(regrids.len(), 3);
    for r in regrids {
        let moved = r["measured_regrid_moved"].as_u64().unwrap();
        assert!(moved > 0 && moved <= r["in_card"].as_u64().unwrap());
    }
}

#[test]
fn bench_real_tensors_is_deterministic() {
    let a = run(&["bench", "--tree", "chain-k,chain-h,balanced,opt", "--format", "csv"]);
    let b = run(&["bench", "--tree", "chain-k,chain-h,balanced,opt", "--format", "csv", "--seed", "1"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let records: Vec<csv::StringRecord> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 12);
    for chunk in records.chunks(4) {
        let flops: Vec<u64> = chunk.iter().map(|r| r[3].parse().unwrap()).collect();
        let opt = chunk.iter().position(|r| &r[2] == "opt").unwrap();
        assert_eq!(flops[opt], *flops.iter().min().unwrap());
    }
}

#[test]
fn hooi_on_generated_tensor() {
    let path = scratch("t.bin");
    let gen = run(&["gen-tensor", "--L", "10,9,8", "--K", "3,3,2", "--noise", "0.01", "--seed", "3", "--out", path.to_str().unwrap()]);
    assert!(gen.status.success());
    let report = json(&run(&["hooi", "--input", path.to_str().unwrap(), "--K", "3,3,2", "--sweeps", "3"]));
    let sweeps = report["sweeps"].as_array().unwrap();
    assert_eq!(sweeps.len(), 4);
    assert!(sweeps[3]["error"].as_f64().unwrap() < 0.02);
    assert_eq!(sweeps[1]["macs"], report["planned_macs"]);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["plan", "--L", "4,4", "--K", "5,1"]).status.code(), Some(1));
    assert_eq!(run(&["plan", "--L", "4,4", "--K", "1,1", "--procs", "3"]).status.code(), Some(1));
    assert_eq!(run(&["plan"]).status.code(), Some(1));
    assert_eq!(run(&["bench", "--tree", ""]).status.code(), Some(1));
    assert_eq!(run(&["bench", "--tree", "sideways"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--L", "200,200,200", "--K", "2,2,2", "--trace"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
