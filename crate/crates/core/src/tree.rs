//! TTM-tree construction and computational-load evaluation.
//!
//! Cost unit: one multiply-accumulate. A TTM along mode `n` on an input of
//! `|In|` elements costs `K_n * |In|`.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{node_cardinalities, Label, ModeSet, NodeId, ProblemSpec, TtmTree};

/// How modes are ordered before building a heuristic tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderCriterion {
    InputOrder,
    /// Ascending `K_n`.
    ByCostFactor,
    /// Ascending `K_n / L_n`.
    ByCompressionFactor,
}

/// A permutation of the modes together with the criterion that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeOrdering {
    order: Vec<usize>,
    criterion: OrderCriterion,
}

impl ModeOrdering {
    /// Ties are broken by the smaller mode index (the sort is stable).
    pub fn new(spec: &ProblemSpec, criterion: OrderCriterion) -> Self {
        let mut order: Vec<usize> = (0..spec.n_modes()).collect();
        match criterion {
            OrderCriterion::InputOrder => {}
            OrderCriterion::ByCostFactor => order.sort_by_key(|&m| spec.core_length(m)),
            OrderCriterion::ByCompressionFactor => order.sort_by(|&a, &b| spec.cmp_compression(a, b)),
        }
        ModeOrdering { order, criterion }
    }

    /// Explicit permutation; must be a bijection on `0..n`.
    pub fn custom(order: Vec<usize>) -> Result<Self> {
        let set: ModeSet = order.iter().copied().filter(|&m| m < 16).collect();
        if set.len() != order.len() || set != ModeSet::full(order.len()) {
            return Err(Error::Format(format!("{order:?} is not a permutation")));
        }
        Ok(ModeOrdering { order, criterion: OrderCriterion::InputOrder })
    }

    pub fn modes(&self) -> &[usize] {
        &self.order
    }

    pub fn criterion(&self) -> OrderCriterion {
        self.criterion
    }
}

/// Tree-building strategies exposed to the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TreeStrategy {
    #[serde(rename = "chain-k")]
    ChainK,
    #[serde(rename = "chain-h")]
    ChainH,
    #[serde(rename = "chain-input")]
    ChainInput,
    #[serde(rename = "balanced")]
    Balanced,
    #[serde(rename = "opt")]
    Opt,
}

impl TreeStrategy {
    pub const ALL: [TreeStrategy; 5] = [
        TreeStrategy::ChainK,
        TreeStrategy::ChainH,
        TreeStrategy::ChainInput,
        TreeStrategy::Balanced,
        TreeStrategy::Opt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TreeStrategy::ChainK => "chain-k",
            TreeStrategy::ChainH => "chain-h",
            TreeStrategy::ChainInput => "chain-input",
            TreeStrategy::Balanced => "balanced",
            TreeStrategy::Opt => "opt",
        }
    }

    pub fn build(self, spec: &ProblemSpec) -> Result<TtmTree> {
        Ok(match self {
            TreeStrategy::ChainK => {
                build_chain_tree(spec, &ModeOrdering::new(spec, OrderCriterion::ByCostFactor))
            }
            TreeStrategy::ChainH => {
                build_chain_tree(spec, &ModeOrdering::new(spec, OrderCriterion::ByCompressionFactor))
            }
            TreeStrategy::ChainInput => {
                build_chain_tree(spec, &ModeOrdering::new(spec, OrderCriterion::InputOrder))
            }
            TreeStrategy::Balanced => {
                build_balanced_tree(spec, &ModeOrdering::new(spec, OrderCriterion::InputOrder))
            }
            TreeStrategy::Opt => optimal_tree(spec)?.tree,
        })
    }
}

impl fmt::Display for TreeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TreeStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TreeStrategy::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// `N` independent chains; the chain ending in `F_n` multiplies every other
/// mode in `ordering` order. Chains hang off the root in leaf-mode order.
pub fn build_chain_tree(spec: &ProblemSpec, ordering: &ModeOrdering) -> TtmTree {
    let mut tree = TtmTree::new();
    for leaf in 0..spec.n_modes() {
        let bottom =
            tree.add_chain(TtmTree::ROOT, ordering.modes().iter().copied().filter(|&m| m != leaf));
        tree.add_child(bottom, Label::Leaf(leaf));
    }
    tree
}

/// Divide-and-conquer tree: split the ordered modes into the first `floor(n/2)`
/// and the rest, hang a chain of the first group with the recursive tree for the
/// second group beneath it, then the same with the roles reversed.
pub fn build_balanced_tree(spec: &ProblemSpec, ordering: &ModeOrdering) -> TtmTree {
    fn go(tree: &mut TtmTree, at: NodeId, modes: &[usize]) {
        if let [only] = modes {
            tree.add_child(at, Label::Leaf(*only));
            return;
        }
        let (first, rest) = modes.split_at(modes.len() / 2);
        let bottom = tree.add_chain(at, first.iter().copied());
        go(tree, bottom, rest);
        let bottom = tree.add_chain(at, rest.iter().copied());
        go(tree, bottom, first);
    }
    debug_assert_eq!(ordering.modes().len(), spec.n_modes());
    let mut tree = TtmTree::new();
    go(&mut tree, TtmTree::ROOT, ordering.modes());
    tree
}

/// Computational load of a tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub total_flops: u64,
    /// Indexed by node id; zero for the root and leaves.
    pub per_node_flops: Vec<u64>,
    pub num_internal_nodes: usize,
    pub tree_depth: usize,
}

pub fn tree_cost(tree: &TtmTree, spec: &ProblemSpec) -> Result<CostReport> {
    let cards = node_cardinalities(tree, spec)?;
    let mut per_node_flops = vec![0u64; tree.len()];
    let mut total: u64 = 0;
    for u in tree.internal_nodes() {
        let m = tree.label(u).mode().expect("internal node");
        let flops = spec.core_length(m).checked_mul(cards.input(u)).ok_or(Error::Overflow)?;
        per_node_flops[u] = flops;
        total = total.checked_add(flops).ok_or(Error::Overflow)?;
    }
    Ok(CostReport {
        total_flops: total,
        per_node_flops,
        num_internal_nodes: tree.num_internal(),
        tree_depth: tree.depth(),
    })
}

/// Result of the optimal-tree dynamic program.
#[derive(Debug, Clone)]
pub struct OptimalTree {
    pub tree: TtmTree,
    pub cost: CostReport,
    /// Number of `(P, Q)` states evaluated.
    pub states: usize,
    /// Number of memo-table reads performed while filling the table.
    pub lookups: u64,
}

const UNSET: u64 = u64::MAX;
/// Saturated cost; only reachable when exact arithmetic would overflow.
const INFINITE: u64 = u64::MAX - 1;

/// Memo tables for the `(P, Q, R)` recurrence, with `R` implied as the
/// complement of `P ∪ Q`.
///
/// `best(P, Q)`: optimal partial tree rooted at `T[P]` computing the factors in `Q`.
/// `reuse(P, Q)`: the same, restricted to a root with a single TTM child drawn from `R`.
/// A split hands `Q1` and `Q2` to two reuse-rooted subtrees, so every node stays binary.
struct TreeDp<'a> {
    spec: &'a ProblemSpec,
    full: ModeSet,
    ternary: Vec<u32>,
    best: Vec<u64>,
    reuse: Vec<u64>,
    reuse_arg: Vec<u8>,
    lookups: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Leaf(usize),
    Reuse(usize),
    Split(ModeSet, ModeSet),
}

impl<'a> TreeDp<'a> {
    fn new(spec: &'a ProblemSpec) -> Self {
        let n = spec.n_modes();
        let mut ternary = vec![0u32; 1 << n];
        for mask in 1usize..1 << n {
            let low = mask.trailing_zeros();
            ternary[mask] = ternary[mask & (mask - 1)] + 3u32.pow(low);
        }
        let size = 3usize.pow(n as u32);
        TreeDp {
            spec,
            full: spec.all_modes(),
            ternary,
            best: vec![UNSET; size],
            reuse: vec![UNSET; size],
            reuse_arg: vec![u8::MAX; size],
            lookups: 0,
        }
    }

    fn index(&self, p: ModeSet, q: ModeSet) -> usize {
        (self.ternary[p.0 as usize] + 2 * self.ternary[q.0 as usize]) as usize
    }

    fn remaining(&self, p: ModeSet, q: ModeSet) -> ModeSet {
        self.full.minus(p).minus(q)
    }

    fn best(&mut self, p: ModeSet, q: ModeSet) -> u64 {
        self.lookups += 1;
        let idx = self.index(p, q);
        if self.best[idx] == UNSET {
            let (cost, _) = self.solve_best(p, q);
            self.best[idx] = cost;
        }
        self.best[idx]
    }

    fn reuse(&mut self, p: ModeSet, q: ModeSet) -> u64 {
        self.lookups += 1;
        let idx = self.index(p, q);
        if self.reuse[idx] == UNSET {
            let (cost, arg) = self.solve_reuse(p, q);
            self.reuse[idx] = cost;
            self.reuse_arg[idx] = arg.map_or(u8::MAX, |n| n as u8);
        }
        self.reuse[idx]
    }

    fn reuse_choice(&mut self, p: ModeSet, q: ModeSet) -> Option<usize> {
        self.reuse(p, q);
        let arg = self.reuse_arg[self.index(p, q)];
        (arg != u8::MAX).then_some(arg as usize)
    }

    fn solve_reuse(&mut self, p: ModeSet, q: ModeSet) -> (u64, Option<usize>) {
        let card = self.spec.card_after(p);
        let mut best = (INFINITE, None);
        for n in self.remaining(p, q).iter() {
            let here = self.spec.core_length(n).checked_mul(card).unwrap_or(INFINITE);
            let cost = here.saturating_add(self.best(p.with(n), q)).min(INFINITE);
            if cost < best.0 || best.1.is_none() {
                best = (cost, Some(n));
            }
        }
        best
    }

    fn solve_best(&mut self, p: ModeSet, q: ModeSet) -> (u64, Choice) {
        let r = self.remaining(p, q);
        if r.is_empty() && q.len() == 1 {
            return (0, Choice::Leaf(q.first().expect("nonempty")));
        }
        let mut best = (INFINITE, None);
        if !r.is_empty() {
            let cost = self.reuse(p, q);
            best = (cost, self.reuse_choice(p, q).map(Choice::Reuse));
        }
        if q.len() >= 2 {
            let low = ModeSet::single(q.first().expect("nonempty"));
            let rest = q.minus(low);
            // Ascending subsets of `rest`; Q1 = low ∪ sub must stay a proper subset.
            let mut sub = 0u16;
            loop {
                let q1 = low.union(ModeSet(sub));
                if q1 != q {
                    let q2 = q.minus(q1);
                    let cost = self.reuse(p, q1).saturating_add(self.reuse(p, q2)).min(INFINITE);
                    if cost < best.0 || best.1.is_none() {
                        best = (cost, Some(Choice::Split(q1, q2)));
                    }
                }
                if sub == rest.0 {
                    break;
                }
                sub = (sub.wrapping_sub(rest.0)) & rest.0;
            }
        }
        (best.0, best.1.expect("some option exists for |Q| >= 1"))
    }

    fn build(&mut self, tree: &mut TtmTree, at: NodeId, p: ModeSet, q: ModeSet) {
        match self.solve_best(p, q).1 {
            Choice::Leaf(n) => {
                tree.add_child(at, Label::Leaf(n));
            }
            Choice::Reuse(n) => {
                let child = tree.add_child(at, Label::Mode(n));
                self.build(tree, child, p.with(n), q);
            }
            Choice::Split(q1, q2) => {
                for part in [q1, q2] {
                    let n = self.reuse_choice(p, part).expect("split parts have reusable modes");
                    let child = tree.add_child(at, Label::Mode(n));
                    self.build(tree, child, p.with(n), part);
                }
            }
        }
    }
}

/// Minimum-load TTM-tree via memoized recursion over `(P, Q, R)` triples.
///
/// Ties prefer reuse over split, the smallest reusable mode, and the split whose
/// first part (always holding `Q`'s smallest mode) has the smallest bitmask.
/// The returned tree is binary and numbered in preorder.
pub fn optimal_tree(spec: &ProblemSpec) -> Result<OptimalTree> {
    let mut dp = TreeDp::new(spec);
    let full = spec.all_modes();
    let cost = dp.best(ModeSet::EMPTY, full);
    if cost >= INFINITE {
        return Err(Error::Overflow);
    }
    let lookups = dp.lookups;
    let mut tree = TtmTree::new();
    dp.build(&mut tree, TtmTree::ROOT, ModeSet::EMPTY, full);
    let report = tree_cost(&tree, spec)?;
    debug_assert_eq!(report.total_flops, cost);
    let states = dp.best.iter().chain(&dp.reuse).filter(|&&c| c != UNSET).count();
    Ok(OptimalTree { tree, cost: report, states, lookups })
}

/// Largest `N` accepted by [`enumerate_binary_trees`].
pub const ENUMERATION_LIMIT: usize = 5;

/// Shared-structure tree shape used while enumerating.
#[derive(Debug)]
enum Shape {
    Leaf(usize),
    /// Single TTM child.
    Reuse(usize, Rc<Shape>),
    /// Two TTM children.
    Split(Rc<Shape>, Rc<Shape>),
}

impl Shape {
    fn first_mode(&self) -> Option<usize> {
        match self {
            Shape::Reuse(n, _) => Some(*n),
            _ => None,
        }
    }

    fn emit(&self, tree: &mut TtmTree, at: NodeId) {
        match self {
            Shape::Leaf(n) => {
                tree.add_child(at, Label::Leaf(*n));
            }
            Shape::Reuse(n, rest) => {
                let child = tree.add_child(at, Label::Mode(*n));
                rest.emit(tree, child);
            }
            Shape::Split(a, b) => {
                a.emit(tree, at);
                b.emit(tree, at);
            }
        }
    }
}

struct Enumerator {
    full: ModeSet,
    best: std::collections::HashMap<(ModeSet, ModeSet), Rc<Vec<Rc<Shape>>>>,
    reuse: std::collections::HashMap<(ModeSet, ModeSet), Rc<Vec<Rc<Shape>>>>,
}

impl Enumerator {
    fn reuse(&mut self, p: ModeSet, q: ModeSet) -> Rc<Vec<Rc<Shape>>> {
        if let Some(v) = self.reuse.get(&(p, q)) {
            return v.clone();
        }
        let mut out = Vec::new();
        for n in self.full.minus(p).minus(q).iter() {
            for rest in self.all(p.with(n), q).iter() {
                out.push(Rc::new(Shape::Reuse(n, rest.clone())));
            }
        }
        let out = Rc::new(out);
        self.reuse.insert((p, q), out.clone());
        out
    }

    fn all(&mut self, p: ModeSet, q: ModeSet) -> Rc<Vec<Rc<Shape>>> {
        if let Some(v) = self.best.get(&(p, q)) {
            return v.clone();
        }
        let r = self.full.minus(p).minus(q);
        let mut out = Vec::new();
        if r.is_empty() && q.len() == 1 {
            out.push(Rc::new(Shape::Leaf(q.first().expect("nonempty"))));
        } else {
            if !r.is_empty() {
                out.extend(self.reuse(p, q).iter().cloned());
            }
            if q.len() >= 2 {
                let low = ModeSet::single(q.first().expect("nonempty"));
                let rest = q.minus(low);
                let mut sub = 0u16;
                loop {
                    let q1 = low.union(ModeSet(sub));
                    if q1 != q {
                        let left = self.reuse(p, q1);
                        let right = self.reuse(p, q.minus(q1));
                        for a in left.iter() {
                            for b in right.iter() {
                                // Equal-label siblings are not canonical.
                                if a.first_mode() != b.first_mode() {
                                    out.push(Rc::new(Shape::Split(a.clone(), b.clone())));
                                }
                            }
                        }
                    }
                    if sub == rest.0 {
                        break;
                    }
                    sub = (sub.wrapping_sub(rest.0)) & rest.0;
                }
            }
        }
        let out = Rc::new(out);
        self.best.insert((p, q), out.clone());
        out
    }
}

/// Every canonical binary TTM-tree for `spec`, each exactly once.
///
/// Canonical means no node has two mode children with equal labels. The trees
/// are produced lazily from a shared shape table; `N` is limited to
/// [`ENUMERATION_LIMIT`].
pub fn enumerate_binary_trees(spec: &ProblemSpec) -> Result<impl Iterator<Item = TtmTree>> {
    let n = spec.n_modes();
    if n > ENUMERATION_LIMIT {
        return Err(Error::TooLarge { n, limit: ENUMERATION_LIMIT });
    }
    let mut e = Enumerator {
        full: spec.all_modes(),
        best: Default::default(),
        reuse: Default::default(),
    };
    let shapes = e.all(ModeSet::EMPTY, spec.all_modes());
    let mut i = 0;
    Ok(std::iter::from_fn(move || {
        let shape = shapes.get(i)?;
        i += 1;
        let mut tree = TtmTree::with_capacity(n * n + 1);
        shape.emit(&mut tree, TtmTree::ROOT);
        Some(tree)
    }))
}

/// One application of the binarization step: removes one child from `node`,
/// which must have at least three children.
///
/// Let `v1` be the first child, labelled `n`. Pick another child `v2` whose
/// subtree does not hold `F_n`. If `v2` is also labelled `n` the two are merged;
/// otherwise every `n`-labelled node under `v2` is spliced out and `v2` is
/// re-hung beneath `v1`. The load never increases.
pub fn binarize_step(tree: &TtmTree, node: NodeId) -> Result<TtmTree> {
    let children = tree.children(node);
    if children.len() < 3 {
        return Err(Error::MalformedTree(format!("node {node} has fewer than three children")));
    }
    let v1 = children[0];
    let n = tree
        .label(v1)
        .mode()
        .ok_or_else(|| Error::MalformedTree("a multi-child node has a leaf child".into()))?;
    let holds_leaf = |v: NodeId| subtree(tree, v).any(|z| tree.label(z) == Label::Leaf(n));
    let v2 = *children[1..]
        .iter()
        .find(|&&v| !holds_leaf(v))
        .expect("F_n lies in at most one subtree");

    // Rebuild through an edit list of (new parent, skip) decisions.
    let mut parent_of: Vec<Option<NodeId>> = (0..tree.len()).map(|u| tree.parent(u)).collect();
    let mut removed = vec![false; tree.len()];
    if tree.label(v2) == Label::Mode(n) {
        for &c in tree.children(v2) {
            parent_of[c] = Some(v1);
        }
        removed[v2] = true;
    } else {
        for z in subtree(tree, v2).collect::<Vec<_>>() {
            if tree.label(z) == Label::Mode(n) {
                removed[z] = true;
            }
        }
        parent_of[v2] = Some(v1);
    }
    let effective_parent = |mut u: NodeId, parent_of: &[Option<NodeId>]| -> NodeId {
        loop {
            let p = parent_of[u].expect("non-root");
            if !removed[p] {
                return p;
            }
            u = p;
        }
    };

    let mut out = TtmTree::new();
    let mut new_id = vec![usize::MAX; tree.len()];
    new_id[TtmTree::ROOT] = TtmTree::ROOT;
    // Emit in an order where parents precede children: walk the edited tree.
    let mut kids: Vec<Vec<NodeId>> = vec![Vec::new(); tree.len()];
    for u in tree.preorder().into_iter().skip(1) {
        if !removed[u] {
            let p = effective_parent(u, &parent_of);
            kids[p].push(u);
        }
    }
    let mut stack = vec![TtmTree::ROOT];
    while let Some(u) = stack.pop() {
        for &c in &kids[u] {
            new_id[c] = out.add_child(new_id[u], tree.label(c));
        }
        stack.extend(kids[u].iter().rev());
    }
    Ok(out.renumbered())
}

/// Repeats [`binarize_step`] until the tree is binary.
pub fn binarize(tree: &TtmTree) -> Result<TtmTree> {
    let mut t = tree.clone();
    while let Some(u) = (0..t.len()).find(|&u| t.children(u).len() >= 3) {
        t = binarize_step(&t, u)?;
    }
    Ok(t)
}

fn subtree(tree: &TtmTree, root: NodeId) -> impl Iterator<Item = NodeId> + '_ {
    let mut stack = vec![root];
    std::iter::from_fn(move || {
        let u = stack.pop()?;
        stack.extend(tree.children(u).iter().rev());
        Some(u)
    })
}
