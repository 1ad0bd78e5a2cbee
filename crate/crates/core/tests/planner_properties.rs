use dtucker::grid::{
    enumerate_grids, grid_count, optimal_dynamic_scheme, optimal_static_grid, scheme_volume, static_volume, Grid,
};
use dtucker::tree::{binarize, enumerate_binary_trees, optimal_tree, tree_cost, TreeStrategy};
use dtucker::{Label, ModeSet, ProblemSpec, TtmTree};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec_strategy(modes: std::ops::RangeInclusive<usize>, max_len: u64) -> impl Strategy<Value = ProblemSpec> {
    modes
        .prop_flat_map(move |n| prop::collection::vec((1..=max_len, 0.0..1.0f64), n))
        .prop_map(|dims| {
            let l: Vec<u64> = dims.iter().map(|d| d.0).collect();
            let k: Vec<u64> = dims.iter().map(|&(l, f)| 1 + ((l - 1) as f64 * f).round() as u64).collect();
            ProblemSpec::new(l, k).unwrap()
        })
}

/// Random valid TTM-tree whose nodes may have any number of children.
fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> TtmTree {
    fn grow(rng: &mut ChaCha8Rng, t: &mut TtmTree, at: usize, full: ModeSet, p: ModeSet, q: Vec<usize>) {
        let open = full.minus(p);
        if q.len() == 1 && open == ModeSet::single(q[0]) {
            t.add_child(at, Label::Leaf(q[0]));
            return;
        }
        let min_groups = if q.len() == open.len() { 2 } else { 1 };
        let groups = rng.random_range(min_groups..=q.len().max(min_groups));
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); groups];
        let mut q = q;
        q.shuffle(rng);
        for (i, &m) in q.iter().enumerate() {
            let b = if i < groups { i } else { rng.random_range(0..groups) };
            buckets[b].push(m);
        }
        for g in buckets {
            let gs: ModeSet = g.iter().copied().collect();
            let avail: Vec<usize> = open.minus(gs).iter().collect();
            let m = avail[rng.random_range(0..avail.len())];
            let child = t.add_child(at, Label::Mode(m));
            grow(rng, t, child, full, p.with(m), g);
        }
    }
    let mut t = TtmTree::new();
    grow(rng, &mut t, TtmTree::ROOT, ModeSet::full(n), ModeSet::EMPTY, (0..n).collect());
    t
}

/// Ordered factorizations of `p` into `n` factors, counted by recursion over divisors.
fn count_factorizations(p: u64, n: usize) -> u128 {
    if n == 1 {
        return 1;
    }
    (1..=p).filter(|d| p % d == 0).map(|d| count_factorizations(p / d, n - 1)).sum()
}

/// Every vector in `[1, p]^n`, lexicographically.
fn all_grids(prefix: &mut Vec<u64>, n: usize, p: u64, f: &mut impl FnMut(&[u64])) {
    if prefix.len() == n {
        f(prefix);
        return;
    }
    for q in 1..=p {
        prefix.push(q);
        all_grids(prefix, n, p, f);
        prefix.pop();
    }
}

#[test]
fn grid_count_matches_factorization_count() {
    for n in 1..=6 {
        for p in (1..=200u64).chain([360, 720, 1024, 2310, 5040, 9973, 10_000]) {
            assert_eq!(grid_count(p, n), count_factorizations(p, n), "P={p} N={n}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn opt_cost_is_permutation_invariant(spec in spec_strategy(2..=7, 30), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..spec.n_modes()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted = spec.permuted(&perm).unwrap();
        prop_assert_eq!(optimal_tree(&spec).unwrap().cost.total_flops, optimal_tree(&permuted).unwrap().cost.total_flops);
        let tree = optimal_tree(&spec).unwrap().tree;
        prop_assert_eq!(
            tree_cost(&tree, &spec).unwrap().total_flops,
            tree_cost(&tree.relabeled(&perm), &permuted).unwrap().total_flops
        );
    }

    #[test]
    fn opt_cost_monotone_in_core(spec in spec_strategy(2..=6, 30), mode in 0usize..6) {
        let m = mode % spec.n_modes();
        prop_assume!(spec.core_length(m) < spec.length(m));
        let mut k = spec.core_lengths().to_vec();
        k[m] += 1;
        let bigger = ProblemSpec::new(spec.lengths().to_vec(), k).unwrap();
        prop_assert!(optimal_tree(&spec).unwrap().cost.total_flops <= optimal_tree(&bigger).unwrap().cost.total_flops);
    }

    #[test]
    fn opt_beats_heuristics(spec in spec_strategy(2..=8, 60)) {
        let opt = optimal_tree(&spec).unwrap();
        prop_assert!(opt.tree.is_binary());
        opt.tree.validate(spec.n_modes()).unwrap();
        for s in TreeStrategy::ALL {
            prop_assert!(opt.cost.total_flops <= tree_cost(&s.build(&spec).unwrap(), &spec).unwrap().total_flops, "{}", s);
        }
    }

    #[test]
    fn dp_matches_enumeration_four_modes(spec in spec_strategy(4..=4, 12)) {
        let best = enumerate_binary_trees(&spec).unwrap().map(|t| tree_cost(&t, &spec).unwrap().total_flops).min();
        prop_assert_eq!(Some(optimal_tree(&spec).unwrap().cost.total_flops), best);
    }

    #[test]
    fn binarize_never_increases_cost(spec in spec_strategy(3..=6, 20), seed in any::<u64>()) {
        let tree = random_tree(&mut ChaCha8Rng::seed_from_u64(seed), spec.n_modes());
        tree.validate(spec.n_modes()).unwrap();
        let b = binarize(&tree).unwrap();
        b.validate(spec.n_modes()).unwrap();
        prop_assert!(b.is_binary());
        prop_assert!(tree_cost(&b, &spec).unwrap().total_flops <= tree_cost(&tree, &spec).unwrap().total_flops);
        prop_assert!(optimal_tree(&spec).unwrap().cost.total_flops <= tree_cost(&b, &spec).unwrap().total_flops);
    }

    #[test]
    fn tree_json_round_trip(n in 2usize..=7, seed in any::<u64>()) {
        let tree = random_tree(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let back = TtmTree::from_json(&tree.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), tree.to_json());
    }

    #[test]
    fn enumerated_grids_are_exactly_the_valid_ones(spec in spec_strategy(2..=4, 12), p in 1u64..=64) {
        let mut brute = Vec::new();
        all_grids(&mut Vec::new(), spec.n_modes(), p, &mut |q| {
            let g = Grid(q.to_vec());
            if g.procs() == p && g.is_valid_for(&spec) {
                brute.push(g);
            }
        });
        match enumerate_grids(p, &spec) {
            Ok(grids) => prop_assert_eq!(grids, brute),
            Err(_) => prop_assert!(brute.is_empty()),
        }
    }

    #[test]
    fn dynamic_never_worse_than_static(spec in spec_strategy(3..=6, 60), strategy in 0usize..5, p in prop::sample::select(vec![2u64, 4, 6, 8, 12, 16, 32])) {
        let tree = TreeStrategy::ALL[strategy].build(&spec).unwrap();
        let Ok((grid, st)) = optimal_static_grid(&tree, &spec, p) else { return Ok(()); };
        let dy = optimal_dynamic_scheme(&tree, &spec, p).unwrap();
        prop_assert!(dy.volume.total_volume <= st.total_volume);
        prop_assert_eq!(scheme_volume(&tree, &spec, &dy.scheme).unwrap(), dy.volume.clone());
        for g in enumerate_grids(p, &spec).unwrap() {
            prop_assert!(st.total_volume <= static_volume(&tree, &spec, &g).unwrap().total_volume, "{} beats {}", g, grid);
        }
    }
}
