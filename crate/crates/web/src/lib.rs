//! wasm-bindgen bindings for the static demo page.
//!
//! Each exported function takes plain strings and numbers and returns JSON.
//! The `*_json` functions underneath are ordinary Rust and are tested natively.

use dtucker::bench::run_comparison;
use dtucker::grid::{grid_count, optimal_dynamic_scheme, optimal_static_grid, Grid};
use dtucker::tree::{tree_cost, TreeStrategy};
use dtucker::{NodeId, ProblemSpec, TtmTree};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest processor count the page accepts; keeps grid enumeration snappy.
pub const MAX_PROCS: u64 = 1 << 16;

fn parse_list(s: &str, what: &str) -> Result<Vec<u64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u64>().map_err(|_| format!("{what}: {t:?} is not a positive integer")))
        .collect()
}

fn parse_spec(lengths: &str, core: &str) -> Result<ProblemSpec, String> {
    let l = parse_list(lengths, "L")?;
    let k = parse_list(core, "K")?;
    ProblemSpec::new(l, k).map_err(|e| e.to_string())
}

fn check_procs(procs: u64) -> Result<(), String> {
    if procs == 0 || procs > MAX_PROCS {
        return Err(format!("P must be between 1 and {MAX_PROCS}"));
    }
    Ok(())
}

#[derive(Serialize)]
struct StrategyRow {
    strategy: &'static str,
    flops: u64,
    static_volume: Option<u64>,
    dynamic_volume: Option<u64>,
    flops_ratio: Option<f64>,
    dynamic_ratio: Option<f64>,
}

/// Load and volume of every tree strategy on one problem.
pub fn compare_json(lengths: &str, core: &str, procs: u64) -> Result<String, String> {
    let spec = parse_spec(lengths, core)?;
    check_procs(procs)?;
    let c = run_comparison(std::slice::from_ref(&spec), procs, &TreeStrategy::ALL).map_err(|e| e.to_string())?;
    let finite = |x: f64| x.is_finite().then_some(x);
    let rows: Vec<StrategyRow> = c
        .rows
        .iter()
        .map(|r| StrategyRow {
            strategy: r.strategy.name(),
            flops: r.flops,
            static_volume: r.static_volume,
            dynamic_volume: r.dynamic_volume,
            flops_ratio: finite(r.flops_ratio),
            dynamic_ratio: finite(r.dynamic_ratio),
        })
        .collect();
    serde_json::to_string(&serde_json::json!({
        "spec": spec.to_string(),
        "cardinality": spec.cardinality(),
        "no_valid_grid": c.rows.iter().any(|r| r.no_valid_grid),
        "rows": rows,
    }))
    .map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TreeLine {
    depth: usize,
    label: String,
    flops: u64,
    grid: Option<String>,
    regrid: bool,
}

/// One tree drawn as a pre-order list, with the dynamic grid of each node.
pub fn tree_json(lengths: &str, core: &str, procs: u64, strategy: &str) -> Result<String, String> {
    let spec = parse_spec(lengths, core)?;
    check_procs(procs)?;
    let strategy: TreeStrategy = strategy.parse().map_err(|e: dtucker::Error| e.to_string())?;
    let tree = strategy.build(&spec).map_err(|e| e.to_string())?;
    let cost = tree_cost(&tree, &spec).map_err(|e| e.to_string())?;
    let dynamic = optimal_dynamic_scheme(&tree, &spec, procs).ok();
    let static_grid = optimal_static_grid(&tree, &spec, procs).ok();
    let regrids = dynamic.as_ref().map(|d| d.scheme.regrid_nodes(&tree)).unwrap_or_default();

    let mut lines = Vec::with_capacity(tree.len());
    walk(&tree, TtmTree::ROOT, 0, &mut |u, depth| {
        lines.push(TreeLine {
            depth,
            label: tree.label(u).to_string(),
            flops: cost.per_node_flops[u],
            grid: dynamic.as_ref().and_then(|d| d.scheme.grid(u)).map(Grid::to_string),
            regrid: regrids.contains(&u),
        });
    });
    serde_json::to_string(&serde_json::json!({
        "strategy": strategy.name(),
        "flops": cost.total_flops,
        "depth": cost.tree_depth,
        "static_grid": static_grid.as_ref().map(|(g, _)| g.to_string()),
        "static_volume": static_grid.as_ref().map(|(_, v)| v.total_volume),
        "dynamic_volume": dynamic.as_ref().map(|d| d.volume.total_volume),
        "lines": lines,
    }))
    .map_err(|e| e.to_string())
}

fn walk(tree: &TtmTree, u: NodeId, depth: usize, f: &mut impl FnMut(NodeId, usize)) {
    f(u, depth);
    for &c in tree.children(u) {
        walk(tree, c, depth + 1, f);
    }
}

/// Number of ordered N-dimensional grids with P processors.
pub fn grid_count_json(procs: u64, n_modes: usize) -> Result<String, String> {
    check_procs(procs)?;
    if n_modes == 0 || n_modes > 16 {
        return Err("N must be between 1 and 16".into());
    }
    // u128 does not fit a JS number; send it as a string.
    Ok(serde_json::json!({ "procs": procs, "n_modes": n_modes, "count": grid_count(procs, n_modes).to_string() })
        .to_string())
}

fn js<T>(r: Result<T, String>) -> Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn compare(lengths: &str, core: &str, procs: u32) -> Result<String, JsValue> {
    js(compare_json(lengths, core, procs.into()))
}

#[wasm_bindgen]
pub fn tree(lengths: &str, core: &str, procs: u32, strategy: &str) -> Result<String, JsValue> {
    js(tree_json(lengths, core, procs.into(), strategy))
}

#[wasm_bindgen(js_name = gridCount)]
pub fn grid_count_js(procs: u32, n_modes: u32) -> Result<String, JsValue> {
    js(grid_count_json(procs.into(), n_modes as usize))
}
