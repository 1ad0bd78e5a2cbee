//! Synthetic benchmark generation, the real-tensor specs, and planner
//! comparisons summarised by percentiles.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{optimal_dynamic_scheme, optimal_static_grid};
use crate::model::ProblemSpec;
use crate::sim::csv_err;
use crate::tree::{tree_cost, TreeStrategy};

/// Compression ratio `num/den`; a mode of length `L` compresses to `L*den/num`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub const fn new(num: u64, den: u64) -> Self {
        Ratio { num, den }
    }

    /// Core length for `l`, if integral.
    pub fn apply(self, l: u64) -> Option<u64> {
        let scaled = l.checked_mul(self.den)?;
        (self.num != 0 && scaled % self.num == 0).then(|| scaled / self.num)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DedupPolicy {
    /// One spec per multiset of (L, K) pairs.
    #[default]
    Multiset,
    /// Every ordered tuple.
    Ordered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkParams {
    pub n_modes: Vec<usize>,
    pub lengths: Vec<u64>,
    pub ratios: Vec<Ratio>,
    pub cardinality_cap: u64,
    pub dedup: DedupPolicy,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        BenchmarkParams {
            n_modes: vec![5, 6],
            lengths: vec![20, 50, 100, 400],
            ratios: vec![Ratio::new(5, 4), Ratio::new(2, 1), Ratio::new(5, 1), Ratio::new(10, 1)],
            cardinality_cap: 8_000_000_000,
            dedup: DedupPolicy::Multiset,
        }
    }
}

impl BenchmarkParams {
    pub fn with_modes(mut self, n_modes: &[usize]) -> Self {
        self.n_modes = n_modes.to_vec();
        self
    }

    pub fn with_dedup(mut self, dedup: DedupPolicy) -> Self {
        self.dedup = dedup;
        self
    }

    /// The (L, K) pairs, longest first and then least compressed first.
    pub fn pairs(&self) -> Result<Vec<(u64, u64)>> {
        let mut pairs = Vec::new();
        for &l in &self.lengths {
            for &r in &self.ratios {
                let k = r.apply(l).ok_or_else(|| {
                    Error::Format(format!("length {l} is not divisible by ratio {r}"))
                })?;
                if k == 0 || k > l {
                    return Err(Error::Format(format!("ratio {r} gives core length {k} for length {l}")));
                }
                pairs.push((l, k));
            }
        }
        pairs.sort_by(|a, b| b.cmp(a));
        pairs.dedup();
        Ok(pairs)
    }
}

fn fits(lengths: impl Iterator<Item = u64>, cap: u64) -> bool {
    let mut acc = 1u64;
    for l in lengths {
        match acc.checked_mul(l) {
            Some(v) if v <= cap => acc = v,
            _ => return false,
        }
    }
    true
}

/// All specs for the given params, sorted by mode count and then by the
/// (L, K) tuple.
pub fn generate_benchmark(params: &BenchmarkParams) -> Result<Vec<ProblemSpec>> {
    let pairs = params.pairs()?;
    let mut out = Vec::new();
    for &n in &params.n_modes {
        let mut idx = vec![0usize; n];
        'outer: loop {
            let chosen = idx.iter().map(|&i| pairs[i]);
            if fits(chosen.clone().map(|p| p.0), params.cardinality_cap) {
                let (l, k): (Vec<u64>, Vec<u64>) = chosen.unzip();
                out.push(ProblemSpec::new(l, k)?);
            }
            // Odometer; multiset keeps indices non-decreasing.
            let mut m = n;
            loop {
                if m == 0 {
                    break 'outer;
                }
                m -= 1;
                idx[m] += 1;
                if idx[m] < pairs.len() {
                    let v = idx[m];
                    if params.dedup == DedupPolicy::Multiset {
                        idx[m + 1..].iter_mut().for_each(|x| *x = v);
                    } else {
                        idx[m + 1..].iter_mut().for_each(|x| *x = 0);
                    }
                    break;
                }
            }
        }
    }
    let key = |s: &ProblemSpec| (s.n_modes(), s.lengths().iter().copied().zip(s.core_lengths().iter().copied()).collect::<Vec<_>>());
    out.sort_by_cached_key(key);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkCounts {
    pub n_modes: usize,
    pub multiset: u64,
    pub ordered: u64,
}

/// Spec counts under both dedup policies, computed without materialising the
/// ordered list.
pub fn benchmark_counts(params: &BenchmarkParams) -> Result<Vec<BenchmarkCounts>> {
    let pairs = params.pairs()?;
    let mut out = Vec::new();
    for &n in &params.n_modes {
        let multiset = generate_benchmark(&BenchmarkParams { n_modes: vec![n], dedup: DedupPolicy::Multiset, ..params.clone() })?
            .len() as u64;
        // Ordered: every admissible length tuple times every pair choice per mode.
        let mut ordered = 0u64;
        let per_len: BTreeMap<u64, u64> = pairs.iter().fold(BTreeMap::new(), |mut m, &(l, _)| {
            *m.entry(l).or_insert(0) += 1;
            m
        });
        let lens: Vec<(u64, u64)> = per_len.into_iter().collect();
        let mut idx = vec![0usize; n];
        'outer: loop {
            if fits(idx.iter().map(|&i| lens[i].0), params.cardinality_cap) {
                ordered += idx.iter().map(|&i| lens[i].1).product::<u64>();
            }
            let mut m = n;
            loop {
                if m == 0 {
                    break 'outer;
                }
                m -= 1;
                idx[m] += 1;
                if idx[m] < lens.len() {
                    break;
                }
                idx[m] = 0;
            }
        }
        out.push(BenchmarkCounts { n_modes: n, multiset, ordered });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedSpec {
    pub name: String,
    pub spec: ProblemSpec,
}

pub fn real_tensor_specs() -> Vec<NamedSpec> {
    let mk = |name: &str, l: &[u64], k: &[u64]| NamedSpec {
        name: name.to_string(),
        spec: ProblemSpec::new(l.to_vec(), k.to_vec()).expect("table specs are valid"),
    };
    vec![
        mk("HCCI", &[672, 672, 627, 16], &[279, 279, 153, 14]),
        mk("TJLR", &[460, 700, 360, 16, 4], &[306, 232, 239, 16, 4]),
        mk("SP", &[500, 500, 500, 11, 10], &[81, 129, 127, 7, 6]),
    ]
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

/// `num/den`; zero over zero is 1, positive over zero is infinite.
pub fn ratio(num: u64, den: u64) -> f64 {
    match (num, den) {
        (0, 0) => 1.0,
        (_, 0) => f64::INFINITY,
        _ => num as f64 / den as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub spec_id: usize,
    pub spec: String,
    pub strategy: TreeStrategy,
    pub flops: u64,
    pub static_volume: Option<u64>,
    pub dynamic_volume: Option<u64>,
    /// No grid of the requested size fits the core.
    pub no_valid_grid: bool,
    #[serde(serialize_with = "finite_or_null")]
    pub flops_ratio: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub static_ratio: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub dynamic_ratio: f64,
}

/// Nearest-rank percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles {
    pub count: usize,
    #[serde(serialize_with = "finite_or_null")]
    pub p10: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub p25: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub p50: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub p75: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub p90: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub max: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Option<Percentiles> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let at = |p: usize| v[(p * n).div_ceil(100).max(1) - 1];
        Some(Percentiles { count: n, p10: at(10), p25: at(25), p50: at(50), p75: at(75), p90: at(90), max: v[n - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySummary {
    pub flops_ratio: Option<Percentiles>,
    pub static_ratio: Option<Percentiles>,
    pub dynamic_ratio: Option<Percentiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub procs: u64,
    pub specs: usize,
    pub no_valid_grid: usize,
    pub strategies: BTreeMap<String, StrategySummary>,
    /// Best heuristic flops over opt flops, per spec.
    pub best_heuristic_load_ratio: Option<Percentiles>,
    /// Specs where opt is strictly cheaper than every heuristic.
    pub strict_load_improvements: usize,
    /// Opt-tree static over dynamic volume, per spec.
    pub opt_static_over_dynamic: Option<Percentiles>,
    pub strict_volume_improvements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub summary: ComparisonSummary,
}

#[derive(Clone, Copy)]
struct Measure {
    flops: u64,
    static_volume: Option<u64>,
    dynamic_volume: Option<u64>,
}

fn measure(spec: &ProblemSpec, strategy: TreeStrategy, procs: u64) -> Result<Measure> {
    let tree = strategy.build(spec)?;
    let flops = tree_cost(&tree, spec)?.total_flops;
    let (static_volume, dynamic_volume) = match optimal_static_grid(&tree, spec, procs) {
        Ok((_, report)) => (Some(report.total_volume), Some(optimal_dynamic_scheme(&tree, spec, procs)?.volume.total_volume)),
        Err(Error::NoValidGrid { .. }) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(Measure { flops, static_volume, dynamic_volume })
}

fn compare_spec(id: usize, spec: &ProblemSpec, procs: u64, strategies: &[TreeStrategy]) -> Result<Vec<ComparisonRow>> {
    let reference = measure(spec, TreeStrategy::Opt, procs)?;
    strategies
        .iter()
        .map(|&s| {
            let m = if s == TreeStrategy::Opt { reference } else { measure(spec, s, procs)? };
            let vol_ratio = |v: Option<u64>| match (v, reference.dynamic_volume) {
                (Some(a), Some(b)) => ratio(a, b),
                _ => f64::NAN,
            };
            Ok(ComparisonRow {
                spec_id: id,
                spec: spec.to_string(),
                strategy: s,
                flops: m.flops,
                static_volume: m.static_volume,
                dynamic_volume: m.dynamic_volume,
                no_valid_grid: m.static_volume.is_none(),
                flops_ratio: ratio(m.flops, reference.flops),
                static_ratio: vol_ratio(m.static_volume),
                dynamic_ratio: vol_ratio(m.dynamic_volume),
            })
        })
        .collect()
}

/// Runs every strategy on every spec at `procs` processors. Ratios are taken
/// against the opt tree with dynamic gridding.
pub fn run_comparison(specs: &[ProblemSpec], procs: u64, strategies: &[TreeStrategy]) -> Result<Comparison> {
    if strategies.is_empty() {
        return Err(Error::UnknownStrategy("empty strategy list".into()));
    }
    if procs == 0 {
        return Err(Error::NoValidGrid { procs });
    }
    #[cfg(feature = "parallel")]
    let per_spec: Vec<Vec<ComparisonRow>> = {
        use rayon::prelude::*;
        specs.par_iter().enumerate().map(|(i, s)| compare_spec(i, s, procs, strategies)).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per_spec: Vec<Vec<ComparisonRow>> =
        specs.iter().enumerate().map(|(i, s)| compare_spec(i, s, procs, strategies)).collect::<Result<_>>()?;

    let summary = summarize(&per_spec, procs, strategies);
    Ok(Comparison { rows: per_spec.into_iter().flatten().collect(), summary })
}

fn summarize(per_spec: &[Vec<ComparisonRow>], procs: u64, strategies: &[TreeStrategy]) -> ComparisonSummary {
    let mut by_strategy: BTreeMap<String, StrategySummary> = BTreeMap::new();
    for &s in strategies {
        let rows: Vec<&ComparisonRow> = per_spec.iter().flatten().filter(|r| r.strategy == s).collect();
        let col = |f: fn(&ComparisonRow) -> f64| Percentiles::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        by_strategy.insert(
            s.name().to_string(),
            StrategySummary {
                flops_ratio: col(|r| r.flops_ratio),
                static_ratio: col(|r| r.static_ratio),
                dynamic_ratio: col(|r| r.dynamic_ratio),
            },
        );
    }

    let mut load = Vec::new();
    let mut strict_load = 0;
    let mut vol = Vec::new();
    let mut strict_vol = 0;
    let mut flagged = 0;
    for rows in per_spec {
        let opt = rows.iter().find(|r| r.strategy == TreeStrategy::Opt);
        let best_heuristic = rows.iter().filter(|r| r.strategy != TreeStrategy::Opt).map(|r| r.flops).min();
        if rows.iter().any(|r| r.no_valid_grid) {
            flagged += 1;
        }
        if let (Some(o), Some(h)) = (opt, best_heuristic) {
            load.push(ratio(h, o.flops));
            if o.flops < h {
                strict_load += 1;
            }
        }
        if let Some(o) = opt {
            if let (Some(st), Some(dy)) = (o.static_volume, o.dynamic_volume) {
                vol.push(ratio(st, dy));
                if dy < st {
                    strict_vol += 1;
                }
            }
        }
    }
    ComparisonSummary {
        procs,
        specs: per_spec.len(),
        no_valid_grid: flagged,
        strategies: by_strategy,
        best_heuristic_load_ratio: Percentiles::of(&load),
        strict_load_improvements: strict_load,
        opt_static_over_dynamic: Percentiles::of(&vol),
        strict_volume_improvements: strict_vol,
    }
}

pub const CSV_COLUMNS: [&str; 11] = [
    "spec_id",
    "spec",
    "strategy",
    "flops",
    "static_volume",
    "dynamic_volume",
    "no_valid_grid",
    "flops_ratio",
    "static_ratio",
    "dynamic_ratio",
    "procs",
];

impl Comparison {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_COLUMNS).map_err(csv_err)?;
        let num = |v: f64| if v.is_finite() { format!("{v:.6}") } else if v.is_nan() { String::new() } else { "inf".into() };
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                r.spec_id.to_string(),
                r.spec.clone(),
                r.strategy.name().to_string(),
                r.flops.to_string(),
                opt(r.static_volume),
                opt(r.dynamic_volume),
                r.no_valid_grid.to_string(),
                num(r.flops_ratio),
                num(r.static_ratio),
                num(r.dynamic_ratio),
                self.summary.procs.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }
}
