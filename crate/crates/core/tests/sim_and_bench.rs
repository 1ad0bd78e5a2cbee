use std::collections::BTreeMap;

use dtucker::bench::{real_tensor_specs, run_comparison, Percentiles};
use dtucker::grid::{optimal_dynamic_scheme, DynamicGridScheme, Grid};
use dtucker::sim::{simulate_distribution, GridPlan};
use dtucker::tree::{tree_cost, TreeStrategy};
use dtucker::{Error, ProblemSpec};

fn toy() -> ProblemSpec {
    ProblemSpec::new(vec![8, 4, 2], vec![4, 2, 2]).unwrap()
}

#[test]
fn toy_cube_grid_model_equals_measured() {
    let spec = toy();
    for s in TreeStrategy::ALL {
        let tree = s.build(&spec).unwrap();
        let ledger = simulate_distribution(&tree, &spec, &GridPlan::Static(Grid(vec![2, 2, 2])), 8, true).unwrap();
        assert!(ledger.ttm_matches_model(), "{s}");
        assert!(ledger.regrid_within_model());
        assert_eq!(ledger.measured_flops(), Some(tree_cost(&tree, &spec).unwrap().total_flops));
        assert!(ledger.peak_live_tensors <= tree.depth() + 1);
        for r in &ledger.rows {
            assert_eq!(r.model_ttm_volume, r.out_card);
        }
    }
}

#[test]
fn single_regrid_moves_at_most_its_input() {
    let spec = toy();
    let tree = TreeStrategy::ChainInput.build(&spec).unwrap();
    let first = tree.internal_nodes().next().unwrap();
    let mut nodes: BTreeMap<usize, Grid> = tree.internal_nodes().map(|u| (u, Grid(vec![4, 2, 1]))).collect();
    // One regrid at the first TTM; its subtree keeps the new grid.
    let mut stack = vec![first];
    while let Some(u) = stack.pop() {
        if nodes.contains_key(&u) {
            nodes.insert(u, Grid(vec![2, 2, 2]));
        }
        stack.extend(tree.children(u));
    }
    let scheme = DynamicGridScheme { root: Grid(vec![4, 2, 1]), nodes };
    assert_eq!(scheme.regrid_nodes(&tree), vec![first]);
    let ledger = simulate_distribution(&tree, &spec, &GridPlan::Dynamic(scheme), 8, true).unwrap();
    let row = ledger.rows.iter().find(|r| r.node == first).unwrap();
    assert_eq!(row.model_regrid_volume, 64);
    let moved = row.measured_regrid_moved.unwrap();
    assert!(moved > 0 && moved <= row.in_card);
    assert!(ledger.ttm_matches_model());
}

#[test]
fn single_processor_ledger_is_zero() {
    let spec = toy();
    let tree = TreeStrategy::Opt.build(&spec).unwrap();
    let plan = optimal_dynamic_scheme(&tree, &spec, 1).unwrap();
    let ledger = simulate_distribution(&tree, &spec, &GridPlan::Dynamic(plan.scheme), 1, true).unwrap();
    assert_eq!(ledger.model_total_volume, 0);
    assert!(ledger.rows.iter().all(|r| r.measured_ttm_volume == Some(0) && r.measured_regrid_moved == Some(0)));
}

#[test]
fn invalid_plans_are_rejected() {
    let spec = toy();
    let tree = TreeStrategy::ChainK.build(&spec).unwrap();
    let too_fine = simulate_distribution(&tree, &spec, &GridPlan::Static(Grid(vec![1, 1, 8])), 8, false);
    assert!(matches!(too_fine, Err(Error::InvalidGrid { .. })));
    let wrong_p = simulate_distribution(&tree, &spec, &GridPlan::Static(Grid(vec![2, 2, 2])), 4, false);
    assert!(matches!(wrong_p, Err(Error::InvalidGrid { .. })));
}

#[test]
fn real_tensor_comparison() {
    let specs: Vec<ProblemSpec> = real_tensor_specs().into_iter().map(|n| n.spec).collect();
    let strategies = [TreeStrategy::ChainK, TreeStrategy::ChainH, TreeStrategy::Balanced, TreeStrategy::Opt];
    let c = run_comparison(&specs, 32, &strategies).unwrap();
    assert_eq!(c.rows.len(), 12);
    for chunk in c.rows.chunks(4) {
        let opt = chunk.iter().find(|r| r.strategy == TreeStrategy::Opt).unwrap();
        assert!(chunk.iter().all(|r| opt.flops <= r.flops && r.flops_ratio >= 1.0));
        assert_eq!(opt.dynamic_ratio, 1.0);
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    c.write_csv(&mut a).unwrap();
    run_comparison(&specs, 32, &strategies).unwrap().write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("spec_id,spec,strategy,flops,"));
}

#[test]
fn percentiles_ignore_input_order() {
    let v = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
    let mut w = v;
    w.reverse();
    assert_eq!(Percentiles::of(&v), Percentiles::of(&w));
    let inf = Percentiles::of(&[1.0, f64::INFINITY]).unwrap();
    assert!(inf.max.is_infinite());
    assert!(serde_json::to_string(&inf).unwrap().contains("\"max\":null"));
}
