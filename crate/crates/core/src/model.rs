//! Problem metadata, mode sets and TTM-trees.
//!
//! Modes are zero-based everywhere in the API. Serialized labels (`M<n>`,
//! `F<n>`) and error messages use one-based mode numbers.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, PathFault, Result};

/// Width of [`ModeSet`].
pub const MAX_MODES: usize = 16;

/// Largest accepted tensor cardinality.
pub const MAX_CARDINALITY: u64 = 1 << 62;

/// Tensor lengths `L_n` and core lengths `K_n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ProblemSpec {
    lengths: Vec<u64>,
    core: Vec<u64>,
    cardinality: u64,
}

/// Unvalidated wire form: `{"L":[...],"K":[...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSpec {
    #[serde(rename = "L")]
    pub lengths: Vec<u64>,
    #[serde(rename = "K")]
    pub core: Vec<u64>,
}

impl TryFrom<RawSpec> for ProblemSpec {
    type Error = Error;
    fn try_from(raw: RawSpec) -> Result<Self> {
        ProblemSpec::new(raw.lengths, raw.core)
    }
}

impl From<ProblemSpec> for RawSpec {
    fn from(spec: ProblemSpec) -> Self {
        RawSpec { lengths: spec.lengths, core: spec.core }
    }
}

impl ProblemSpec {
    /// Validates and builds a spec.
    pub fn new(lengths: Vec<u64>, core: Vec<u64>) -> Result<Self> {
        if lengths.len() != core.len() {
            return Err(Error::LengthMismatch { lengths: lengths.len(), core: core.len() });
        }
        let n = lengths.len();
        if n < 2 {
            return Err(Error::BadDims(n));
        }
        if n > MAX_MODES {
            return Err(Error::TooManyModes { got: n, max: MAX_MODES });
        }
        for (mode, (&l, &k)) in lengths.iter().zip(&core).enumerate() {
            if l == 0 || k == 0 {
                return Err(Error::ZeroLength { mode });
            }
            if k > l {
                return Err(Error::KTooLarge { mode });
            }
        }
        let cardinality = lengths
            .iter()
            .try_fold(1u64, |acc, &l| acc.checked_mul(l))
            .filter(|&c| c <= MAX_CARDINALITY)
            .ok_or(Error::Overflow)?;
        Ok(ProblemSpec { lengths, core, cardinality })
    }

    pub fn n_modes(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[u64] {
        &self.lengths
    }

    pub fn core_lengths(&self) -> &[u64] {
        &self.core
    }

    pub fn length(&self, mode: usize) -> u64 {
        self.lengths[mode]
    }

    pub fn core_length(&self, mode: usize) -> u64 {
        self.core[mode]
    }

    /// `|T| = prod L_n`.
    pub fn cardinality(&self) -> u64 {
        self.cardinality
    }

    /// `prod K_n`, saturating.
    pub fn core_cardinality(&self) -> u64 {
        self.core.iter().fold(1u64, |acc, &k| acc.saturating_mul(k))
    }

    /// Compression factor `h_n = K_n / L_n` as the exact pair `(K_n, L_n)`.
    pub fn compression(&self, mode: usize) -> (u64, u64) {
        (self.core[mode], self.lengths[mode])
    }

    /// Exact comparison of two compression factors.
    pub fn cmp_compression(&self, a: usize, b: usize) -> Ordering {
        let (ka, la) = self.compression(a);
        let (kb, lb) = self.compression(b);
        (u128::from(ka) * u128::from(lb)).cmp(&(u128::from(kb) * u128::from(la)))
    }

    /// `|T[P]|`: cardinality after multiplying along every mode in `premultiplied`.
    ///
    /// Never exceeds `|T|`, so it cannot overflow.
    pub fn card_after(&self, premultiplied: ModeSet) -> u64 {
        (0..self.n_modes())
            .map(|m| if premultiplied.contains(m) { self.core[m] } else { self.lengths[m] })
            .product()
    }

    pub fn all_modes(&self) -> ModeSet {
        ModeSet::full(self.n_modes())
    }

    /// Applies a mode relabeling: mode `m` of `self` becomes mode `perm[m]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_modes();
        let mut lengths = vec![0; n];
        let mut core = vec![0; n];
        for (m, &to) in perm.iter().enumerate() {
            lengths[to] = self.lengths[m];
            core[to] = self.core[m];
        }
        ProblemSpec::new(lengths, core)
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join("x");
        write!(f, "{} -> {}", join(&self.lengths), join(&self.core))
    }
}

/// Bitmask over zero-based modes.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeSet(pub u16);

impl ModeSet {
    pub const EMPTY: ModeSet = ModeSet(0);

    pub fn full(n: usize) -> ModeSet {
        debug_assert!(n <= MAX_MODES);
        ModeSet(((1u32 << n) - 1) as u16)
    }

    pub fn single(mode: usize) -> ModeSet {
        ModeSet(1 << mode)
    }

    pub fn contains(self, mode: usize) -> bool {
        self.0 >> mode & 1 == 1
    }

    pub fn with(self, mode: usize) -> ModeSet {
        ModeSet(self.0 | 1 << mode)
    }

    pub fn without(self, mode: usize) -> ModeSet {
        ModeSet(self.0 & !(1 << mode))
    }

    pub fn union(self, other: ModeSet) -> ModeSet {
        ModeSet(self.0 | other.0)
    }

    pub fn minus(self, other: ModeSet) -> ModeSet {
        ModeSet(self.0 & !other.0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Smallest mode in the set.
    pub fn first(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            (bits != 0).then(|| {
                let m = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                m
            })
        })
    }
}

impl fmt::Debug for ModeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|m| m + 1)).finish()
    }
}

impl FromIterator<usize> for ModeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        iter.into_iter().fold(ModeSet::EMPTY, ModeSet::with)
    }
}

/// Node label in a TTM-tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// The input tensor.
    Root,
    /// TTM along a mode.
    Mode(usize),
    /// New factor matrix for a mode.
    Leaf(usize),
}

impl Label {
    pub fn mode(self) -> Option<usize> {
        match self {
            Label::Mode(m) => Some(m),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Root => f.write_str("T"),
            Label::Mode(m) => write!(f, "M{}", m + 1),
            Label::Leaf(m) => write!(f, "F{}", m + 1),
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::MalformedTree(format!("bad label {s:?}"));
        if s == "T" {
            return Ok(Label::Root);
        }
        let (kind, num) = s.split_at(1.min(s.len()));
        let n: usize = num.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        match kind {
            "M" => Ok(Label::Mode(n - 1)),
            "F" => Ok(Label::Leaf(n - 1)),
            _ => Err(bad()),
        }
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub label: Label,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

/// Rooted labeled tree. Node `0` is always the root; trees produced by the
/// builders in this crate number their nodes in preorder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TtmTree {
    nodes: Vec<Node>,
}

impl Default for TtmTree {
    fn default() -> Self {
        Self::new()
    }
}

impl TtmTree {
    pub const ROOT: NodeId = 0;

    pub fn new() -> Self {
        TtmTree { nodes: vec![Node { label: Label::Root, parent: None, children: Vec::new() }] }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let mut t = TtmTree { nodes: Vec::with_capacity(nodes) };
        t.nodes.push(Node { label: Label::Root, parent: None, children: Vec::new() });
        t
    }

    pub fn add_child(&mut self, parent: NodeId, label: Label) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { label, parent: Some(parent), children: Vec::new() });
        self.nodes[parent].children.push(id);
        id
    }

    /// Appends a chain of mode nodes under `parent` and returns the bottom node.
    pub fn add_chain(&mut self, parent: NodeId, modes: impl IntoIterator<Item = usize>) -> NodeId {
        modes.into_iter().fold(parent, |at, m| self.add_child(at, Label::Mode(m)))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn label(&self, id: NodeId) -> Label {
        self.nodes[id].label
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    /// Ids of the TTM (mode-labelled) nodes.
    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&u| matches!(self.nodes[u].label, Label::Mode(_)))
    }

    pub fn num_internal(&self) -> usize {
        self.internal_nodes().count()
    }

    /// Preorder traversal from the root (children in stored order).
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![Self::ROOT];
        while let Some(u) = stack.pop() {
            out.push(u);
            stack.extend(self.nodes[u].children.iter().rev());
        }
        out
    }

    /// Longest root-to-leaf path, counted in edges.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut best = 0;
        for u in self.preorder() {
            if let Some(p) = self.nodes[u].parent {
                depth[u] = depth[p] + 1;
            }
            best = best.max(depth[u]);
        }
        best
    }

    /// True when every node has at most two children.
    pub fn is_binary(&self) -> bool {
        self.nodes.iter().all(|n| n.children.len() <= 2)
    }

    /// True for the naive shape: every node except the root has at most one child.
    pub fn is_chain_tree(&self) -> bool {
        self.nodes.iter().skip(1).all(|n| n.children.len() <= 1)
    }

    /// Renumbers nodes in preorder, dropping anything unreachable from the root.
    pub fn renumbered(&self) -> TtmTree {
        let order = self.preorder();
        let mut new_id = vec![usize::MAX; self.nodes.len()];
        for (i, &u) in order.iter().enumerate() {
            new_id[u] = i;
        }
        let nodes = order
            .iter()
            .map(|&u| {
                let n = &self.nodes[u];
                Node {
                    label: n.label,
                    parent: n.parent.map(|p| new_id[p]),
                    children: n.children.iter().map(|&c| new_id[c]).collect(),
                }
            })
            .collect();
        TtmTree { nodes }
    }

    /// Merges sibling mode nodes that carry the same label, recursively.
    pub fn canonicalized(&self) -> TtmTree {
        let mut out = TtmTree::new();
        self.merge_into(&mut out, TtmTree::ROOT, &[TtmTree::ROOT]);
        out
    }

    fn merge_into(&self, out: &mut TtmTree, at: NodeId, sources: &[NodeId]) {
        // Group children of all `sources` by label, keeping first-seen order.
        let mut groups: Vec<(Label, Vec<NodeId>)> = Vec::new();
        for &s in sources {
            for &c in &self.nodes[s].children {
                let label = self.nodes[c].label;
                match groups.iter_mut().find(|(l, _)| *l == label && matches!(l, Label::Mode(_))) {
                    Some((_, g)) => g.push(c),
                    None => groups.push((label, vec![c])),
                }
            }
        }
        for (label, group) in groups {
            let id = out.add_child(at, label);
            self.merge_into(out, id, &group);
        }
    }

    /// Checks the structural TTM-tree properties for an `n`-mode problem.
    pub fn validate(&self, n: usize) -> Result<()> {
        let root = &self.nodes[Self::ROOT];
        if root.label != Label::Root || root.parent.is_some() {
            return Err(Error::MalformedTree("node 0 must be the root".into()));
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if id != Self::ROOT && node.label == Label::Root {
                return Err(Error::MalformedTree(format!("second root at node {id}")));
            }
            if let Label::Mode(m) | Label::Leaf(m) = node.label {
                if m >= n {
                    return Err(Error::BadMode { mode: m, order: n });
                }
            }
            if matches!(node.label, Label::Leaf(_)) && !node.children.is_empty() {
                return Err(Error::MalformedTree(format!("leaf {id} has children")));
            }
            for &c in &node.children {
                if c >= self.nodes.len() || self.nodes[c].parent != Some(id) {
                    return Err(Error::MalformedTree(format!("bad parent link at node {c}")));
                }
            }
        }
        if self.preorder().len() != self.nodes.len() {
            return Err(Error::MalformedTree("unreachable nodes".into()));
        }

        let mut seen = ModeSet::EMPTY;
        let mut leaves = 0;
        // (node, modes on the path so far, internal count)
        let mut stack = vec![(Self::ROOT, ModeSet::EMPTY, 0usize)];
        while let Some((u, path, depth)) = stack.pop() {
            match self.nodes[u].label {
                Label::Leaf(m) => {
                    leaves += 1;
                    if seen.contains(m) {
                        return Err(Error::DuplicateLeaf { mode: m });
                    }
                    seen = seen.with(m);
                    if path.contains(m) {
                        return Err(Error::PathViolation { leaf: m, reason: PathFault::Repeated(m) });
                    }
                    if depth != n - 1 {
                        return Err(Error::PathViolation { leaf: m, reason: PathFault::Length(depth) });
                    }
                    if let Some(miss) = ModeSet::full(n).without(m).minus(path).first() {
                        return Err(Error::PathViolation { leaf: m, reason: PathFault::Missing(miss) });
                    }
                }
                label => {
                    let (path, depth) = match label {
                        Label::Mode(m) => {
                            if path.contains(m) {
                                let leaf = self.first_leaf_below(u).unwrap_or(m);
                                return Err(Error::PathViolation {
                                    leaf,
                                    reason: PathFault::Repeated(m),
                                });
                            }
                            (path.with(m), depth + 1)
                        }
                        _ => (path, depth),
                    };
                    if self.nodes[u].children.is_empty() {
                        return Err(Error::MalformedTree(format!("node {u} has no leaf below it")));
                    }
                    for &c in &self.nodes[u].children {
                        stack.push((c, path, depth));
                    }
                }
            }
        }
        if leaves != n {
            return Err(Error::LeafCount { got: leaves, expected: n });
        }
        Ok(())
    }

    fn first_leaf_below(&self, u: NodeId) -> Option<usize> {
        let mut stack = vec![u];
        while let Some(v) = stack.pop() {
            if let Label::Leaf(m) = self.nodes[v].label {
                return Some(m);
            }
            stack.extend(self.nodes[v].children.iter().rev());
        }
        None
    }

    /// Applies a mode relabeling `m -> perm[m]` to every label.
    pub fn relabeled(&self, perm: &[usize]) -> TtmTree {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node {
                label: match n.label {
                    Label::Root => Label::Root,
                    Label::Mode(m) => Label::Mode(perm[m]),
                    Label::Leaf(m) => Label::Leaf(perm[m]),
                },
                ..n.clone()
            })
            .collect();
        TtmTree { nodes }
    }

    pub fn to_nested(&self) -> NestedNode {
        fn go(t: &TtmTree, u: NodeId) -> NestedNode {
            NestedNode {
                label: t.nodes[u].label.to_string(),
                children: t.nodes[u].children.iter().map(|&c| go(t, c)).collect(),
            }
        }
        go(self, Self::ROOT)
    }

    /// Builds a tree from its nested form; ids are assigned in preorder.
    pub fn from_nested(nested: &NestedNode) -> Result<TtmTree> {
        if nested.label.parse::<Label>()? != Label::Root {
            return Err(Error::MalformedTree("top-level node must be \"T\"".into()));
        }
        fn go(t: &mut TtmTree, at: NodeId, node: &NestedNode) -> Result<()> {
            for c in &node.children {
                let label: Label = c.label.parse()?;
                if label == Label::Root {
                    return Err(Error::MalformedTree("nested \"T\" label".into()));
                }
                let id = t.add_child(at, label);
                go(t, id, c)?;
            }
            Ok(())
        }
        let mut tree = TtmTree::new();
        go(&mut tree, Self::ROOT, nested)?;
        Ok(tree)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_nested()).expect("tree serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<TtmTree> {
        let nested: NestedNode = serde_json::from_str(s)?;
        TtmTree::from_nested(&nested)
    }
}

/// Wire form of a tree: `{"label": "M3", "children": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedNode {
    pub label: String,
    #[serde(default)]
    pub children: Vec<NestedNode>,
}

impl Serialize for TtmTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TtmTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let nested = NestedNode::deserialize(d)?;
        TtmTree::from_nested(&nested).map_err(serde::de::Error::custom)
    }
}

/// Input/output cardinalities per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cards {
    pub input: u64,
    pub output: u64,
}

/// Exact `|In_u|`, `|Out_u|` for every node, indexed by node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeCards(pub Vec<Cards>);

impl NodeCards {
    pub fn input(&self, u: NodeId) -> u64 {
        self.0[u].input
    }
    pub fn output(&self, u: NodeId) -> u64 {
        self.0[u].output
    }
}

/// Validates `tree` against `spec`, then computes cardinalities top-down.
pub fn node_cardinalities(tree: &TtmTree, spec: &ProblemSpec) -> Result<NodeCards> {
    tree.validate(spec.n_modes())?;
    let mut cards = vec![Cards::default(); tree.len()];
    for u in tree.preorder() {
        let node = tree.node(u);
        cards[u] = match (node.label, node.parent) {
            (Label::Root, _) => Cards { input: spec.cardinality(), output: spec.cardinality() },
            (Label::Mode(m), Some(p)) => {
                let input = cards[p].output;
                let scaled = input.checked_mul(spec.core_length(m)).ok_or(Error::Overflow)?;
                debug_assert_eq!(scaled % spec.length(m), 0, "mode length divides |In_u|");
                Cards { input, output: scaled / spec.length(m) }
            }
            (Label::Leaf(_), Some(p)) => Cards { input: cards[p].output, output: cards[p].output },
            _ => unreachable!("validated tree"),
        };
    }
    Ok(NodeCards(cards))
}

/// Free-function form of [`ProblemSpec::new`].
pub fn validate_spec(raw: RawSpec) -> Result<ProblemSpec> {
    ProblemSpec::try_from(raw)
}

/// Free-function form of [`TtmTree::validate`].
pub fn validate_tree(tree: &TtmTree, spec: &ProblemSpec) -> Result<()> {
    tree.validate(spec.n_modes())
}
