//! Processor grids and the communication-volume model.
//!
//! A TTM along mode `n` on a tensor held under grid `q` moves `(q_n - 1) |Out_u|`
//! elements (one reduce-scatter per output fiber). Changing the grid between a
//! parent and a child moves `|In_u|` elements. Volumes are element counts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{node_cardinalities, NodeCards, NodeId, ProblemSpec, TtmTree};

/// Processor counts `q_1..q_N` per mode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Grid(pub Vec<u64>);

impl Grid {
    pub fn ones(n: usize) -> Grid {
        Grid(vec![1; n])
    }

    pub fn procs(&self) -> u64 {
        self.0.iter().product()
    }

    pub fn dims(&self) -> &[u64] {
        &self.0
    }

    /// `q_n <= K_n` for every mode.
    pub fn is_valid_for(&self, spec: &ProblemSpec) -> bool {
        self.0.len() == spec.n_modes()
            && self.0.iter().zip(spec.core_lengths()).all(|(&q, &k)| q >= 1 && q <= k)
    }

    fn check(&self, spec: &ProblemSpec) -> Result<()> {
        let reason = if self.0.len() != spec.n_modes() {
            format!("expected {} entries", spec.n_modes())
        } else if let Some(m) = self.0.iter().position(|&q| q == 0) {
            format!("zero processors along mode {}", m + 1)
        } else if let Some(m) = (0..self.0.len()).find(|&m| self.0[m] > spec.core_length(m)) {
            format!("q_{} = {} exceeds K_{} = {}", m + 1, self.0[m], m + 1, spec.core_length(m))
        } else {
            return Ok(());
        };
        Err(Error::InvalidGrid { grid: self.0.clone(), reason })
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
        write!(f, "<{}>", parts.join(","))
    }
}

fn prime_exponents(mut p: u64) -> Vec<u32> {
    let mut out = Vec::new();
    let mut d = 2u64;
    while d * d <= p {
        let mut e = 0;
        while p % d == 0 {
            p /= d;
            e += 1;
        }
        if e > 0 {
            out.push(e);
        }
        d += 1;
    }
    if p > 1 {
        out.push(1);
    }
    out
}

fn binomial(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

/// Number of ordered factorizations of `procs` into `n` positive factors,
/// invalid grids included: `prod_i C(e_i + n - 1, n - 1)` over the prime
/// factorization `prod_i p_i^e_i`.
pub fn grid_count(procs: u64, n: usize) -> u128 {
    assert!(procs >= 1 && n >= 1, "grid_count needs P >= 1 and N >= 1");
    let n = n as u64;
    prime_exponents(procs)
        .into_iter()
        .map(|e| binomial(u64::from(e) + n - 1, n - 1).expect("binomial fits in u128"))
        .fold(1u128, |acc, c| acc.saturating_mul(c))
}

fn divisors(p: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1u64;
    while d * d <= p {
        if p % d == 0 {
            small.push(d);
            if d != p / d {
                large.push(p / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// All valid grids with `prod q_n = procs`, in lexicographic order.
pub fn enumerate_grids(procs: u64, spec: &ProblemSpec) -> Result<Vec<Grid>> {
    if procs == 0 {
        return Err(Error::NoValidGrid { procs });
    }
    let divs = divisors(procs);
    let n = spec.n_modes();
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    fn go(
        spec: &ProblemSpec,
        divs: &[u64],
        rem: u64,
        current: &mut Vec<u64>,
        out: &mut Vec<Grid>,
    ) {
        let m = current.len();
        if m + 1 == spec.n_modes() {
            if rem <= spec.core_length(m) {
                current.push(rem);
                out.push(Grid(current.clone()));
                current.pop();
            }
            return;
        }
        for &d in divs.iter().take_while(|&&d| d <= rem.min(spec.core_length(m))) {
            if rem % d == 0 {
                current.push(d);
                go(spec, divs, rem / d, current, out);
                current.pop();
            }
        }
    }
    go(spec, &divs, procs, &mut current, &mut out);
    if out.is_empty() {
        return Err(Error::NoValidGrid { procs });
    }
    Ok(out)
}

/// Per-node volume split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeVolume {
    pub ttm_volume: u64,
    pub regrid_volume: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub total_volume: u64,
    /// Indexed by node id; the root and leaves are always zero.
    pub per_node: Vec<NodeVolume>,
}

impl VolumeReport {
    pub fn ttm_total(&self) -> u64 {
        self.per_node.iter().map(|v| v.ttm_volume).sum()
    }

    pub fn regrid_total(&self) -> u64 {
        self.per_node.iter().map(|v| v.regrid_volume).sum()
    }
}

fn ttm_volume(q: u64, out: u64) -> Result<u64> {
    (q - 1).checked_mul(out).ok_or(Error::Overflow)
}

/// Volume of a single grid used for every tensor.
pub fn static_volume(tree: &TtmTree, spec: &ProblemSpec, grid: &Grid) -> Result<VolumeReport> {
    grid.check(spec)?;
    let cards = node_cardinalities(tree, spec)?;
    let mut per_node = vec![NodeVolume::default(); tree.len()];
    let mut total = 0u64;
    for u in tree.internal_nodes() {
        let m = tree.label(u).mode().expect("internal");
        let v = ttm_volume(grid.0[m], cards.output(u))?;
        per_node[u].ttm_volume = v;
        total = total.checked_add(v).ok_or(Error::Overflow)?;
    }
    Ok(VolumeReport { total_volume: total, per_node })
}

/// `sum over nodes labelled m of |Out_u|`, per mode. The static volume of `q`
/// is `sum_m (q_m - 1) * weight_m`.
fn mode_weights(tree: &TtmTree, cards: &NodeCards, n: usize) -> Vec<u64> {
    let mut w = vec![0u64; n];
    for u in tree.internal_nodes() {
        let m = tree.label(u).mode().expect("internal");
        w[m] = w[m].saturating_add(cards.output(u));
    }
    w
}

fn weighted_volume(grid: &Grid, weights: &[u64]) -> u64 {
    grid.0.iter().zip(weights).fold(0u64, |acc, (&q, &w)| acc.saturating_add((q - 1).saturating_mul(w)))
}

/// Exhaustive search over valid grids; ties go to the lexicographically smallest.
pub fn optimal_static_grid(tree: &TtmTree, spec: &ProblemSpec, procs: u64) -> Result<(Grid, VolumeReport)> {
    let cards = node_cardinalities(tree, spec)?;
    let weights = mode_weights(tree, &cards, spec.n_modes());
    let grids = enumerate_grids(procs, spec)?;
    let (_, best) = grids
        .iter()
        .enumerate()
        .min_by_key(|(i, g)| (weighted_volume(g, &weights), *i))
        .expect("nonempty");
    let report = static_volume(tree, spec, best)?;
    Ok((best.clone(), report))
}

/// Same result as [`optimal_static_grid`], scanning grids across worker threads.
#[cfg(feature = "parallel")]
pub fn optimal_static_grid_par(
    tree: &TtmTree,
    spec: &ProblemSpec,
    procs: u64,
) -> Result<(Grid, VolumeReport)> {
    use rayon::prelude::*;
    let cards = node_cardinalities(tree, spec)?;
    let weights = mode_weights(tree, &cards, spec.n_modes());
    let grids = enumerate_grids(procs, spec)?;
    // (volume, index) keys are unique, so the reduction is order-independent.
    let (_, idx) = grids
        .par_iter()
        .enumerate()
        .map(|(i, g)| (weighted_volume(g, &weights), i))
        .min()
        .expect("nonempty");
    let report = static_volume(tree, spec, &grids[idx])?;
    Ok((grids[idx].clone(), report))
}

/// Grid assignment for the root and every TTM node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicGridScheme {
    pub root: Grid,
    pub nodes: BTreeMap<NodeId, Grid>,
}

impl DynamicGridScheme {
    /// Every node of `tree` on one grid.
    pub fn constant(tree: &TtmTree, grid: &Grid) -> Self {
        DynamicGridScheme {
            root: grid.clone(),
            nodes: tree.internal_nodes().map(|u| (u, grid.clone())).collect(),
        }
    }

    /// Grid under which `u`'s input arrives: the parent's grid.
    fn parent_grid<'a>(&'a self, tree: &TtmTree, u: NodeId) -> Result<&'a Grid> {
        match tree.parent(u) {
            Some(TtmTree::ROOT) => Ok(&self.root),
            Some(p) => self.nodes.get(&p).ok_or(Error::MissingAssignment(p)),
            None => Ok(&self.root),
        }
    }

    pub fn grid(&self, u: NodeId) -> Option<&Grid> {
        if u == TtmTree::ROOT {
            Some(&self.root)
        } else {
            self.nodes.get(&u)
        }
    }

    /// TTM nodes whose grid differs from their parent's.
    pub fn regrid_nodes(&self, tree: &TtmTree) -> Vec<NodeId> {
        tree.internal_nodes()
            .filter(|&u| match (self.nodes.get(&u), self.parent_grid(tree, u)) {
                (Some(g), Ok(pg)) => g != pg,
                _ => false,
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scheme serialization is infallible")
    }
}

/// Volume of a dynamic scheme: per TTM node, `(q_n - 1)|Out_u|` under its own
/// grid plus `|In_u|` when that grid differs from the parent's. The root's
/// initial distribution is free.
pub fn scheme_volume(tree: &TtmTree, spec: &ProblemSpec, scheme: &DynamicGridScheme) -> Result<VolumeReport> {
    let cards = node_cardinalities(tree, spec)?;
    scheme.root.check(spec)?;
    let procs = scheme.root.procs();
    let mut per_node = vec![NodeVolume::default(); tree.len()];
    let mut total = 0u64;
    for u in tree.internal_nodes() {
        let g = scheme.nodes.get(&u).ok_or(Error::MissingAssignment(u))?;
        g.check(spec)?;
        if g.procs() != procs {
            return Err(Error::InvalidGrid {
                grid: g.0.clone(),
                reason: format!("uses {} processors, root grid uses {procs}", g.procs()),
            });
        }
        let m = tree.label(u).mode().expect("internal");
        let ttm = ttm_volume(g.0[m], cards.output(u))?;
        let regrid = if g != scheme.parent_grid(tree, u)? { cards.input(u) } else { 0 };
        per_node[u] = NodeVolume { ttm_volume: ttm, regrid_volume: regrid };
        total = total.checked_add(ttm).and_then(|t| t.checked_add(regrid)).ok_or(Error::Overflow)?;
    }
    Ok(VolumeReport { total_volume: total, per_node })
}

/// How the regrid target of a node is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegridRule {
    /// Minimise the node's own TTM volume plus its children's optimum.
    #[default]
    Combined,
    /// Minimise the children's optimum only, ignoring the node's own TTM term.
    ChildrenOnly,
}

#[derive(Debug, Clone)]
pub struct DynamicPlan {
    pub scheme: DynamicGridScheme,
    pub volume: VolumeReport,
    /// Optimal total as computed by the recurrence.
    pub dp_total: u64,
    pub grids_considered: usize,
}

/// Optimal dynamic gridding by a bottom-up DP over `(node, parent grid)` pairs.
///
/// `dvol(u | g_par) = min(stay, regrid)` with
/// `stay = (g_par[n] - 1)|Out_u| + sum_c dvol(c | g_par)` and
/// `regrid = |In_u| + min_g [(g[n] - 1)|Out_u| + sum_c dvol(c | g)]`.
/// The inner minimum is computed once per node. The root picks the grid
/// minimising its children's sum. Ties keep the parent grid, then the
/// lexicographically smallest grid.
pub fn optimal_dynamic_scheme(tree: &TtmTree, spec: &ProblemSpec, procs: u64) -> Result<DynamicPlan> {
    optimal_dynamic_scheme_with(tree, spec, procs, RegridRule::Combined)
}

pub fn optimal_dynamic_scheme_with(
    tree: &TtmTree,
    spec: &ProblemSpec,
    procs: u64,
    rule: RegridRule,
) -> Result<DynamicPlan> {
    let cards = node_cardinalities(tree, spec)?;
    let grids = enumerate_grids(procs, spec)?;
    let ng = grids.len();
    let sat = |a: u64, b: u64| a.saturating_add(b);

    // table[u][g]: optimum for the subtree of u given the parent's grid g.
    let mut table: Vec<Vec<u64>> = vec![Vec::new(); tree.len()];
    // stays[u][g]: whether the optimum at (u, g) keeps g.
    let mut stays: Vec<Vec<bool>> = vec![Vec::new(); tree.len()];
    let mut regrid_target = vec![usize::MAX; tree.len()];

    let children_sum = |table: &[Vec<u64>], u: NodeId, g: usize| -> u64 {
        tree.children(u).iter().fold(0u64, |acc, &c| sat(acc, table.get(c).map_or(0, |t| t.get(g).copied().unwrap_or(0))))
    };

    let order = tree.preorder();
    for &u in order.iter().rev() {
        let Some(m) = tree.label(u).mode() else { continue };
        let out = cards.output(u);
        let own = |g: usize| (grids[g].0[m] - 1).saturating_mul(out);
        let below: Vec<u64> = (0..ng).map(|g| children_sum(&table, u, g)).collect();
        let objective = |g: usize| match rule {
            RegridRule::Combined => sat(own(g), below[g]),
            RegridRule::ChildrenOnly => below[g],
        };
        let target = (0..ng).min_by_key(|&g| (objective(g), g)).expect("nonempty");
        regrid_target[u] = target;
        let regrid = sat(cards.input(u), sat(own(target), below[target]));
        let mut row = Vec::with_capacity(ng);
        let mut keep = Vec::with_capacity(ng);
        for g in 0..ng {
            let stay = sat(own(g), below[g]);
            keep.push(stay <= regrid);
            row.push(stay.min(regrid));
        }
        table[u] = row;
        stays[u] = keep;
    }

    let (dp_total, root_grid) = (0..ng)
        .map(|g| (children_sum(&table, TtmTree::ROOT, g), g))
        .min()
        .expect("nonempty");

    let mut nodes = BTreeMap::new();
    let mut assigned = vec![usize::MAX; tree.len()];
    assigned[TtmTree::ROOT] = root_grid;
    for &u in &order[1..] {
        if tree.label(u).mode().is_none() {
            continue;
        }
        let parent = assigned[tree.parent(u).expect("non-root")];
        let g = if stays[u][parent] { parent } else { regrid_target[u] };
        assigned[u] = g;
        nodes.insert(u, grids[g].clone());
    }
    let scheme = DynamicGridScheme { root: grids[root_grid].clone(), nodes };
    let volume = scheme_volume(tree, spec, &scheme)?;
    if dp_total != u64::MAX && volume.total_volume != dp_total {
        return Err(Error::Format(format!(
            "dynamic scheme volume {} disagrees with recurrence {dp_total}",
            volume.total_volume
        )));
    }
    Ok(DynamicPlan { scheme, volume, dp_total, grids_considered: ng })
}

/// Assignment-space limit for [`brute_force_dynamic`].
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Exhaustive minimum of [`scheme_volume`] over every assignment of valid grids
/// to the root and the TTM nodes.
pub fn brute_force_dynamic(
    tree: &TtmTree,
    spec: &ProblemSpec,
    procs: u64,
) -> Result<(DynamicGridScheme, VolumeReport)> {
    let cards = node_cardinalities(tree, spec)?;
    let grids = enumerate_grids(procs, spec)?;
    // Slots: root first, then TTM nodes in preorder (parents precede children).
    let slots: Vec<NodeId> = tree
        .preorder()
        .into_iter()
        .filter(|&u| u == TtmTree::ROOT || tree.label(u).mode().is_some())
        .collect();
    let size = (grids.len() as u128).checked_pow(slots.len() as u32).unwrap_or(u128::MAX);
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchTooLarge { size, limit: BRUTE_FORCE_LIMIT });
    }
    let mut slot_of = vec![usize::MAX; tree.len()];
    for (i, &u) in slots.iter().enumerate() {
        slot_of[u] = i;
    }
    let parent_slot: Vec<usize> =
        slots.iter().map(|&u| tree.parent(u).map_or(usize::MAX, |p| slot_of[p])).collect();

    let node_cost = |i: usize, choice: &[usize]| -> u64 {
        if i == 0 {
            return 0;
        }
        let u = slots[i];
        let m = tree.label(u).mode().expect("internal");
        let g = choice[i];
        let ttm = (grids[g].0[m] - 1) * cards.output(u);
        let regrid = if g != choice[parent_slot[i]] { cards.input(u) } else { 0 };
        ttm + regrid
    };

    let k = slots.len();
    let mut choice = vec![0usize; k];
    // prefix[i] = cost of slots 0..=i
    let mut prefix = vec![0u64; k];
    let refresh = |from: usize, choice: &[usize], prefix: &mut [u64]| {
        for i in from..k {
            let before = if i == 0 { 0 } else { prefix[i - 1] };
            prefix[i] = before + node_cost(i, choice);
        }
    };
    refresh(0, &choice, &mut prefix);
    let mut best = (prefix[k - 1], choice.clone());
    'outer: loop {
        let mut i = k - 1;
        loop {
            choice[i] += 1;
            if choice[i] < grids.len() {
                break;
            }
            choice[i] = 0;
            if i == 0 {
                break 'outer;
            }
            i -= 1;
        }
        refresh(i, &choice, &mut prefix);
        if prefix[k - 1] < best.0 {
            best = (prefix[k - 1], choice.clone());
        }
    }
    let scheme = DynamicGridScheme {
        root: grids[best.1[0]].clone(),
        nodes: (1..k).map(|i| (slots[i], grids[best.1[i]].clone())).collect(),
    };
    let report = scheme_volume(tree, spec, &scheme)?;
    debug_assert_eq!(report.total_volume, best.0);
    Ok((scheme, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_chain_tree, ModeOrdering, OrderCriterion};

    fn spec(l: &[u64], k: &[u64]) -> ProblemSpec {
        ProblemSpec::new(l.to_vec(), k.to_vec()).unwrap()
    }

    fn chain(s: &ProblemSpec) -> TtmTree {
        build_chain_tree(s, &ModeOrdering::new(s, OrderCriterion::InputOrder))
    }

    #[test]
    fn counts() {
        assert_eq!(grid_count(1 << 5, 5), 126);
        assert_eq!(grid_count(1 << 10, 6), 3003);
        assert_eq!(grid_count(1 << 20, 9), 3_108_105);
        assert_eq!(grid_count(1, 7), 1);
        assert_eq!(grid_count(12, 2), 6);
        assert_eq!(grid_count(97, 3), 3);
    }

    #[test]
    fn grids_small_core() {
        let s = spec(&[4, 4, 4], &[2, 2, 2]);
        let g = enumerate_grids(4, &s).unwrap();
        assert_eq!(g, vec![Grid(vec![1, 2, 2]), Grid(vec![2, 1, 2]), Grid(vec![2, 2, 1])]);
        assert_eq!(enumerate_grids(1, &s).unwrap(), vec![Grid::ones(3)]);
        assert_eq!(enumerate_grids(16, &s), Err(Error::NoValidGrid { procs: 16 }));
        assert_eq!(enumerate_grids(3, &s), Err(Error::NoValidGrid { procs: 3 }));
    }

    #[test]
    fn grids_from_the_dynamic_example() {
        let s = spec(&[8, 8, 8, 64], &[8, 8, 8, 64]);
        let g = enumerate_grids(64, &s).unwrap();
        for want in [vec![1, 1, 1, 64], vec![8, 8, 1, 1], vec![2, 4, 8, 1]] {
            assert!(g.contains(&Grid(want)));
        }
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn static_volume_hand_value() {
        let s = spec(&[4, 4, 4], &[2, 2, 2]);
        let t = chain(&s);
        assert_eq!(static_volume(&t, &s, &Grid(vec![2, 2, 2])).unwrap().total_volume, 144);
        assert_eq!(static_volume(&t, &s, &Grid::ones(3)).unwrap().total_volume, 0);
        let v = static_volume(&t, &s, &Grid(vec![1, 2, 2])).unwrap();
        for u in t.internal_nodes() {
            if t.label(u).mode() == Some(0) {
                assert_eq!(v.per_node[u].ttm_volume, 0);
            }
        }
        assert!(matches!(
            static_volume(&t, &s, &Grid(vec![4, 1, 1])),
            Err(Error::InvalidGrid { .. })
        ));
    }

    #[test]
    fn optimal_static_is_minimum() {
        let s = spec(&[4, 6, 8], &[2, 3, 4]);
        let t = chain(&s);
        let (g, v) = optimal_static_grid(&t, &s, 4).unwrap();
        for other in enumerate_grids(4, &s).unwrap() {
            let ov = static_volume(&t, &s, &other).unwrap().total_volume;
            assert!(v.total_volume <= ov);
            if ov == v.total_volume {
                assert!(g <= other);
            }
        }
        let (g1, v1) = optimal_static_grid(&t, &s, 1).unwrap();
        assert_eq!((g1, v1.total_volume), (Grid::ones(3), 0));
    }

    #[test]
    fn single_grid_space_dynamic_equals_static() {
        let s = spec(&[4, 4, 4], &[2, 2, 2]);
        let t = chain(&s);
        let plan = optimal_dynamic_scheme(&t, &s, 8).unwrap();
        let st = static_volume(&t, &s, &Grid(vec![2, 2, 2])).unwrap();
        assert_eq!(plan.volume.total_volume, st.total_volume);
        let one = optimal_dynamic_scheme(&t, &s, 1).unwrap();
        assert_eq!(one.volume.total_volume, 0);
        assert!(one.scheme.nodes.values().all(|g| *g == Grid::ones(3)));
    }

    #[test]
    fn constant_scheme_matches_static() {
        let s = spec(&[4, 6, 8], &[2, 3, 4]);
        let t = chain(&s);
        for g in enumerate_grids(4, &s).unwrap() {
            let sc = DynamicGridScheme::constant(&t, &g);
            assert_eq!(scheme_volume(&t, &s, &sc).unwrap(), static_volume(&t, &s, &g).unwrap());
            assert!(sc.regrid_nodes(&t).is_empty());
        }
    }

    #[test]
    fn single_regrid_adjustment() {
        // 4x4x4 -> 2x2x2, chain tree: node 1 = M2 (in 64, out 32), node 2 = M3 (in 32, out 16).
        let s = spec(&[4, 4, 4], &[2, 2, 2]);
        let t = chain(&s);
        let base = Grid(vec![1, 2, 2]);
        let mut sc = DynamicGridScheme::constant(&t, &base);
        let before = scheme_volume(&t, &s, &sc).unwrap().total_volume;
        // Node 1 multiplies mode 2; regridding it to <2,1,2> saves 32 of TTM volume
        // and costs |In| = 64. Node 2 then inherits a differing parent grid.
        sc.nodes.insert(1, Grid(vec![2, 1, 2]));
        sc.nodes.insert(2, Grid(vec![2, 1, 2]));
        let after = scheme_volume(&t, &s, &sc).unwrap();
        assert_eq!(after.per_node[1], NodeVolume { ttm_volume: 0, regrid_volume: 64 });
        assert_eq!(after.per_node[2], NodeVolume { ttm_volume: 16, regrid_volume: 0 });
        assert_eq!(after.total_volume, before + 64 - 32);
        assert_eq!(sc.regrid_nodes(&t), vec![1]);
    }

    #[test]
    fn scheme_errors() {
        let s = spec(&[4, 4, 4], &[2, 2, 2]);
        let t = chain(&s);
        let mut sc = DynamicGridScheme::constant(&t, &Grid(vec![1, 2, 2]));
        sc.nodes.remove(&2);
        assert_eq!(scheme_volume(&t, &s, &sc), Err(Error::MissingAssignment(2)));
        let mut sc = DynamicGridScheme::constant(&t, &Grid(vec![1, 2, 2]));
        sc.nodes.insert(2, Grid(vec![2, 2, 2]));
        assert!(matches!(scheme_volume(&t, &s, &sc), Err(Error::InvalidGrid { .. })));
    }

    #[test]
    fn dynamic_matches_brute_force_small() {
        let s = spec(&[4, 4, 4], &[2, 2, 2]);
        let t = chain(&s);
        for p in [1, 2, 4, 8] {
            let dp = optimal_dynamic_scheme(&t, &s, p).unwrap();
            let (_, bf) = brute_force_dynamic(&t, &s, p).unwrap();
            assert_eq!(dp.volume.total_volume, bf.total_volume, "P = {p}");
        }
    }

    #[test]
    fn brute_force_guard() {
        let s = spec(&[64; 5], &[16; 5]);
        let t = chain(&s);
        assert!(matches!(brute_force_dynamic(&t, &s, 64), Err(Error::SearchTooLarge { .. })));
    }

    #[test]
    fn scheme_json_shape() {
        let s = spec(&[4, 4], &[2, 2]);
        let t = chain(&s);
        let sc = DynamicGridScheme::constant(&t, &Grid(vec![1, 2]));
        assert_eq!(sc.to_json(), r#"{"root":[1,2],"nodes":{"1":[1,2],"3":[1,2]}}"#);
        let back: DynamicGridScheme = serde_json::from_str(&sc.to_json()).unwrap();
        assert_eq!(back, sc);
    }
}
