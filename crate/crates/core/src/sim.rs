//! Replays a gridding plan over simulated processors.
//!
//! Every tensor is cut into `prod q_n` blocks; along a mode of length `D`
//! split `q` ways, block `b` covers `[floor(bD/q), floor((b+1)D/q))`. A
//! distributed TTM computes local partial products and then a reduce-scatter
//! inside each fiber group; a regrid redistributes elements between grids.
//! With tracing on, data really moves between the simulated processors and the
//! ledger records element counts next to the model's predictions.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{ttm_counted, DenseTensor, Matrix};
use crate::error::{Error, Result};
use crate::grid::{scheme_volume, DynamicGridScheme, Grid};
use crate::model::{node_cardinalities, Label, NodeId, ProblemSpec, TtmTree};

/// Largest tensor the tracer will materialise.
pub const TRACE_MAX_CARD: u64 = 1_000_000;
/// Most processors the tracer will simulate.
pub const TRACE_MAX_PROCS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPlan {
    Static(Grid),
    Dynamic(DynamicGridScheme),
}

impl GridPlan {
    pub fn to_scheme(&self, tree: &TtmTree) -> DynamicGridScheme {
        match self {
            GridPlan::Static(g) => DynamicGridScheme::constant(tree, g),
            GridPlan::Dynamic(s) => s.clone(),
        }
    }
}

pub fn block_range(len: usize, parts: usize, b: usize) -> Range<usize> {
    (b * len / parts)..((b + 1) * len / parts)
}

/// Block index owning position `idx`.
pub fn block_owner(len: usize, parts: usize, idx: usize) -> usize {
    (parts * (idx + 1) - 1) / len
}

/// A tensor split over a grid of simulated processors. Ranks enumerate grid
/// coordinates in row-major order.
#[derive(Debug, Clone)]
pub struct Distributed {
    dims: Vec<usize>,
    grid: Vec<usize>,
    blocks: Vec<DenseTensor>,
}

fn rank_coords(grid: &[usize], mut rank: usize) -> Vec<usize> {
    let mut c = vec![0; grid.len()];
    for m in (0..grid.len()).rev() {
        c[m] = rank % grid[m];
        rank /= grid[m];
    }
    c
}

fn coords_rank(grid: &[usize], coords: &[usize]) -> usize {
    coords.iter().zip(grid).fold(0, |acc, (&c, &q)| acc * q + c)
}

fn for_each_index(dims: &[usize], mut f: impl FnMut(&[usize])) {
    if dims.iter().any(|&d| d == 0) {
        return;
    }
    let mut idx = vec![0; dims.len()];
    loop {
        f(&idx);
        let mut m = dims.len();
        loop {
            if m == 0 {
                return;
            }
            m -= 1;
            idx[m] += 1;
            if idx[m] < dims[m] {
                break;
            }
            idx[m] = 0;
        }
    }
}

impl Distributed {
    pub fn scatter(t: &DenseTensor, grid: &[usize]) -> Self {
        let procs: usize = grid.iter().product();
        let blocks = (0..procs)
            .map(|rank| {
                let coords = rank_coords(grid, rank);
                let ranges: Vec<Range<usize>> = (0..grid.len())
                    .map(|m| block_range(t.dims()[m], grid[m], coords[m]))
                    .collect();
                let bdims: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
                let mut data = Vec::with_capacity(bdims.iter().product());
                let mut global = vec![0; grid.len()];
                for_each_index(&bdims, |local| {
                    for m in 0..local.len() {
                        global[m] = ranges[m].start + local[m];
                    }
                    data.push(t.get(&global));
                });
                DenseTensor::new(bdims, data).expect("block size")
            })
            .collect();
        Distributed { dims: t.dims().to_vec(), grid: grid.to_vec(), blocks }
    }

    pub fn gather(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(self.dims.clone());
        for (rank, block) in self.blocks.iter().enumerate() {
            let coords = rank_coords(&self.grid, rank);
            let starts: Vec<usize> =
                (0..self.grid.len()).map(|m| block_range(self.dims[m], self.grid[m], coords[m]).start).collect();
            let mut global = vec![0; self.grid.len()];
            for_each_index(block.dims(), |local| {
                for m in 0..local.len() {
                    global[m] = starts[m] + local[m];
                }
                let off = out.offset(&global);
                out.data_mut()[off] = block.get(local);
            });
        }
        out
    }

    pub fn blocks(&self) -> &[DenseTensor] {
        &self.blocks
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    fn owner(&self, grid: &[usize], global: &[usize]) -> usize {
        let coords: Vec<usize> =
            (0..grid.len()).map(|m| block_owner(self.dims[m], grid[m], global[m])).collect();
        coords_rank(grid, &coords)
    }

    /// Moves to `grid`; returns the new layout and the number of elements whose
    /// owning processor changed.
    pub fn regrid(&self, grid: &[usize]) -> (Distributed, u64) {
        let mut moved = 0u64;
        for_each_index(&self.dims, |global| {
            if self.owner(&self.grid, global) != self.owner(grid, global) {
                moved += 1;
            }
        });
        (Distributed::scatter(&self.gather(), grid), moved)
    }

    /// Distributed `self ×_mode a` (`a` is `K x L_mode`). Returns the result
    /// (same grid), the elements sent in reduce-scatters and the MACs executed.
    pub fn ttm(&self, a: &Matrix, mode: usize) -> (Distributed, u64, u64) {
        let k = a.nrows();
        let q = self.grid[mode];
        let len = self.dims[mode];
        let mut out_dims = self.dims.clone();
        out_dims[mode] = k;

        // Local partials: rank r multiplies its rows of the input by the
        // matching columns of `a`, producing a full-length K slab.
        let mut macs = 0u64;
        let partials: Vec<DenseTensor> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(rank, block)| {
                let b = rank_coords(&self.grid, rank)[mode];
                let rows = block_range(len, q, b);
                let local_a = a.columns(rows.start, rows.len()).into_owned();
                let (p, m) = ttm_counted(block, &local_a, mode).expect("block shapes agree");
                macs += m;
                p
            })
            .collect();

        // Reduce-scatter: receiver `dst` (coordinate b' along `mode`) owns the
        // K-rows block_range(k, q, b'); every other member of its fiber group
        // sends it that slice of their partial.
        let mut sent = 0u64;
        let blocks = (0..self.blocks.len())
            .map(|dst| {
                let coords = rank_coords(&self.grid, dst);
                let rows = block_range(k, q, coords[mode]);
                let mut bdims = partials[dst].dims().to_vec();
                bdims[mode] = rows.len();
                let mut acc = DenseTensor::zeros(bdims.clone());
                let mut peer = coords.clone();
                for b in 0..q {
                    peer[mode] = b;
                    let src = coords_rank(&self.grid, &peer);
                    let part = &partials[src];
                    let mut from = vec![0; bdims.len()];
                    let mut i = 0;
                    for_each_index(&bdims, |local| {
                        from.copy_from_slice(local);
                        from[mode] += rows.start;
                        acc.data_mut()[i] += part.get(&from);
                        i += 1;
                    });
                    if src != dst {
                        sent += acc.len() as u64;
                    }
                }
                acc
            })
            .collect();
        (Distributed { dims: out_dims, grid: self.grid.clone(), blocks }, sent, macs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub node: NodeId,
    /// One-based mode label of the TTM.
    pub mode: usize,
    pub grid: Grid,
    pub in_card: u64,
    pub out_card: u64,
    pub model_ttm_volume: u64,
    pub model_regrid_volume: u64,
    pub measured_ttm_volume: Option<u64>,
    pub measured_regrid_moved: Option<u64>,
    pub flops_executed: Option<u64>,
    /// Max elementwise deviation of the distributed result from a sequential TTM.
    pub max_abs_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLedger {
    pub procs: u64,
    pub traced: bool,
    pub rows: Vec<LedgerRow>,
    pub model_total_volume: u64,
    pub peak_live_tensors: usize,
}

impl SimLedger {
    /// Traced reduce-scatter counts equal the model at every node.
    pub fn ttm_matches_model(&self) -> bool {
        self.rows.iter().all(|r| r.measured_ttm_volume.is_none_or(|m| m == r.model_ttm_volume))
    }

    /// Traced regrid moves never exceed the model's `|In_u|` charge.
    pub fn regrid_within_model(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.measured_regrid_moved.is_none_or(|m| m <= r.model_regrid_volume))
    }

    pub fn measured_flops(&self) -> Option<u64> {
        self.rows.iter().map(|r| r.flops_executed).sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let fmt_opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.write_record([
            "node",
            "mode",
            "grid",
            "in_card",
            "out_card",
            "model_ttm_volume",
            "model_regrid_volume",
            "measured_ttm_volume",
            "measured_regrid_moved",
            "flops_executed",
            "max_abs_deviation",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                r.node.to_string(),
                r.mode.to_string(),
                r.grid.to_string(),
                r.in_card.to_string(),
                r.out_card.to_string(),
                r.model_ttm_volume.to_string(),
                r.model_regrid_volume.to_string(),
                fmt_opt(r.measured_ttm_volume),
                fmt_opt(r.measured_regrid_moved),
                fmt_opt(r.flops_executed),
                r.max_abs_deviation.map(|x| format!("{x:e}")).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Model-only ledger, or a traced replay with seeded random data when `trace`.
pub fn simulate_distribution(
    tree: &TtmTree,
    spec: &ProblemSpec,
    plan: &GridPlan,
    procs: u64,
    trace: bool,
) -> Result<SimLedger> {
    simulate_distribution_seeded(tree, spec, plan, procs, trace, 0)
}

pub fn simulate_distribution_seeded(
    tree: &TtmTree,
    spec: &ProblemSpec,
    plan: &GridPlan,
    procs: u64,
    trace: bool,
    seed: u64,
) -> Result<SimLedger> {
    let cards = node_cardinalities(tree, spec)?;
    let scheme = plan.to_scheme(tree);
    if scheme.root.procs() != procs {
        return Err(Error::InvalidGrid {
            grid: scheme.root.0.clone(),
            reason: format!("uses {} processors, expected {procs}", scheme.root.procs()),
        });
    }
    let model = scheme_volume(tree, spec, &scheme)?;
    let mut rows: Vec<LedgerRow> = tree
        .preorder()
        .into_iter()
        .filter_map(|u| {
            let m = tree.label(u).mode()?;
            Some(LedgerRow {
                node: u,
                mode: m + 1,
                grid: scheme.nodes[&u].clone(),
                in_card: cards.input(u),
                out_card: cards.output(u),
                model_ttm_volume: model.per_node[u].ttm_volume,
                model_regrid_volume: model.per_node[u].regrid_volume,
                measured_ttm_volume: None,
                measured_regrid_moved: None,
                flops_executed: None,
                max_abs_deviation: None,
            })
        })
        .collect();

    let mut peak = 1;
    if trace {
        if spec.cardinality() > TRACE_MAX_CARD || procs > TRACE_MAX_PROCS {
            return Err(Error::TraceTooLarge { max_card: TRACE_MAX_CARD, max_procs: TRACE_MAX_PROCS });
        }
        let dims: Vec<usize> = spec.lengths().iter().map(|&l| l as usize).collect();
        let t = DenseTensor::random(dims, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let factors_t: Vec<Matrix> = (0..spec.n_modes())
            .map(|m| {
                let (l, k) = (spec.length(m) as usize, spec.core_length(m) as usize);
                let g = DMatrix::from_fn(l, k, |_, _| StandardNormal.sample(&mut rng));
                g.qr().q().transpose()
            })
            .collect();
        let to_usize = |g: &Grid| g.0.iter().map(|&q| q as usize).collect::<Vec<_>>();
        let root = Distributed::scatter(&t, &to_usize(&scheme.root));
        let mut by_node = std::collections::HashMap::new();
        let mut ctx = TraceCtx { tree, scheme: &scheme, factors_t: &factors_t, measured: &mut by_node, peak: 1 };
        ctx.visit(TtmTree::ROOT, &root, &t, 1);
        peak = ctx.peak;
        for row in &mut rows {
            let m = &by_node[&row.node];
            row.measured_ttm_volume = Some(m.sent);
            row.measured_regrid_moved = Some(m.moved);
            row.flops_executed = Some(m.macs);
            row.max_abs_deviation = Some(m.deviation);
        }
    } else {
        // Depth-first order keeps one tensor per level alive.
        peak = peak.max(tree.depth());
    }

    Ok(SimLedger { procs, traced: trace, rows, model_total_volume: model.total_volume, peak_live_tensors: peak })
}

struct Measured {
    sent: u64,
    moved: u64,
    macs: u64,
    deviation: f64,
}

struct TraceCtx<'a> {
    tree: &'a TtmTree,
    scheme: &'a DynamicGridScheme,
    factors_t: &'a [Matrix],
    measured: &'a mut std::collections::HashMap<NodeId, Measured>,
    peak: usize,
}

impl TraceCtx<'_> {
    fn visit(&mut self, u: NodeId, dist: &Distributed, seq: &DenseTensor, live: usize) {
        for &c in self.tree.children(u) {
            let Label::Mode(m) = self.tree.label(c) else { continue };
            let grid: Vec<usize> = self.scheme.nodes[&c].0.iter().map(|&q| q as usize).collect();
            let (input, moved) =
                if grid != dist.grid() { dist.regrid(&grid) } else { (dist.clone(), 0) };
            let (out, sent, macs) = input.ttm(&self.factors_t[m], m);
            let (expected, _) = ttm_counted(seq, &self.factors_t[m], m).expect("shapes agree");
            let deviation = out.gather().max_abs_diff(&expected);
            self.measured.insert(c, Measured { sent, moved, macs, deviation });
            self.peak = self.peak.max(live + 1);
            self.visit(c, &out, &expected, live + 1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::enumerate_grids;
    use crate::tree::{build_chain_tree, ModeOrdering, OrderCriterion};

    #[test]
    fn owner_formula_matches_ranges() {
        for len in 1..20 {
            for parts in 1..=len {
                for b in 0..parts {
                    for idx in block_range(len, parts, b) {
                        assert_eq!(block_owner(len, parts, idx), b, "len {len} parts {parts}");
                    }
                }
                let total: usize = (0..parts).map(|b| block_range(len, parts, b).len()).sum();
                assert_eq!(total, len);
            }
        }
    }

    #[test]
    fn toy_grids_make_eight_blocks() {
        let t = DenseTensor::random(vec![8, 4, 2], 3);
        let a = Distributed::scatter(&t, &[4, 2, 1]);
        let b = Distributed::scatter(&t, &[2, 2, 2]);
        assert_eq!(a.blocks().len(), 8);
        assert_eq!(b.blocks().len(), 8);
        assert!(a.blocks().iter().all(|blk| blk.dims() == [2, 2, 2]));
        assert!(b.blocks().iter().all(|blk| blk.dims() == [4, 2, 1]));
        assert_eq!(a.gather(), t);
        let (moved_to, moved) = a.regrid(&[2, 2, 2]);
        assert_eq!(moved_to.gather(), t);
        assert!(moved <= 64);
    }

    #[test]
    fn single_processor_is_silent() {
        let spec = ProblemSpec::new(vec![6, 5, 4], vec![3, 2, 2]).unwrap();
        let tree = build_chain_tree(&spec, &ModeOrdering::new(&spec, OrderCriterion::InputOrder));
        let l = simulate_distribution(&tree, &spec, &GridPlan::Static(Grid::ones(3)), 1, true).unwrap();
        assert!(l.rows.iter().all(|r| r.model_ttm_volume == 0 && r.measured_ttm_volume == Some(0)));
        assert!(l.rows.iter().all(|r| r.measured_regrid_moved == Some(0)));
        assert_eq!(l.model_total_volume, 0);
    }

    #[test]
    fn traced_counts_match_model() {
        let spec = ProblemSpec::new(vec![8, 4, 2], vec![4, 2, 2]).unwrap();
        let tree = build_chain_tree(&spec, &ModeOrdering::new(&spec, OrderCriterion::InputOrder));
        for g in enumerate_grids(8, &spec).unwrap() {
            let l = simulate_distribution(&tree, &spec, &GridPlan::Static(g.clone()), 8, true).unwrap();
            assert!(l.ttm_matches_model(), "{g}");
            assert!(l.rows.iter().all(|r| r.max_abs_deviation.unwrap() < 1e-12));
        }
    }

    #[test]
    fn trace_guard() {
        let spec = ProblemSpec::new(vec![200, 200, 200], vec![2, 2, 2]).unwrap();
        let tree = build_chain_tree(&spec, &ModeOrdering::new(&spec, OrderCriterion::InputOrder));
        let r = simulate_distribution(&tree, &spec, &GridPlan::Static(Grid::ones(3)), 1, true);
        assert!(matches!(r, Err(Error::TraceTooLarge { .. })));
        assert!(simulate_distribution(&tree, &spec, &GridPlan::Static(Grid::ones(3)), 1, false).is_ok());
    }
}
