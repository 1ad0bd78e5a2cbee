use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dtucker::bench::{benchmark_counts, generate_benchmark, real_tensor_specs, run_comparison, BenchmarkParams, DedupPolicy};
use dtucker::engine::{
    hooi_sweep_with_stats, random_orthonormal, reconstruction_error, tol, DenseTensor, Decomposition, SweepMode,
};
use dtucker::grid::{optimal_dynamic_scheme, optimal_static_grid, DynamicGridScheme, Grid, VolumeReport};
use dtucker::sim::{simulate_distribution_seeded, GridPlan};
use dtucker::tree::{tree_cost, CostReport, TreeStrategy};
use dtucker::{ProblemSpec, TtmTree};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Largest tensor the dense engine commands will allocate.
const ENGINE_MAX_CARD: u64 = 50_000_000;

#[derive(Parser)]
#[command(name = "dtucker", version, about = "TTM-tree and processor-grid planner for Tucker HOOI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a tree and its static and dynamic grids, with predicted costs.
    Plan(PlanArgs),
    /// Replay a plan over simulated processors.
    Simulate(SimulateArgs),
    /// Compare tree strategies over a benchmark suite.
    Bench(BenchArgs),
    /// Write a seeded random tensor.
    GenTensor(GenArgs),
    /// Run HOOI sweeps on a dense tensor.
    Hooi(HooiArgs),
}

#[derive(Args)]
struct SpecArgs {
    /// JSON file of the form {"L": [...], "K": [...]}.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Mode lengths, comma separated.
    #[arg(long = "L", value_delimiter = ',')]
    lengths: Vec<u64>,
    /// Core lengths, comma separated.
    #[arg(long = "K", value_delimiter = ',')]
    core: Vec<u64>,
}

#[derive(Args)]
struct OutArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GridKind {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Real,
    #[value(name = "5d")]
    FiveD,
    #[value(name = "6d")]
    SixD,
    Full,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sweep {
    Jacobi,
    GaussSeidel,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 1)]
    procs: u64,
    #[arg(long, default_value = "opt", value_parser = parse_strategy)]
    tree: TreeStrategy,
    /// Which scheme the predicted volume refers to.
    #[arg(long, value_enum, default_value_t = GridKind::Dynamic)]
    grid: GridKind,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Plan file written by `dtucker plan`; replaces the spec and tree flags.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    procs: u64,
    #[arg(long, default_value = "opt", value_parser = parse_strategy)]
    tree: TreeStrategy,
    #[arg(long, value_enum, default_value_t = GridKind::Dynamic)]
    grid: GridKind,
    /// Move real data between simulated processors and count it.
    #[arg(long)]
    trace: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Suite::Real)]
    suite: Suite,
    #[arg(long, default_value_t = 32)]
    procs: u64,
    /// Strategies to compare, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "chain-k,chain-h,balanced,opt", value_parser = parse_strategy)]
    tree: Vec<TreeStrategy>,
    #[arg(long, value_enum, default_value_t = Dedup::Multiset)]
    dedup: Dedup,
    /// Print the suite sizes under both dedup policies and exit.
    #[arg(long)]
    counts: bool,
    /// Accepted for uniformity; the benchmark has no random component.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the percentile summary here.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Dedup {
    Multiset,
    Ordered,
}

#[derive(Args)]
struct GenArgs {
    /// Tensor dimensions, comma separated.
    #[arg(long = "L", value_delimiter = ',', required = true)]
    lengths: Vec<u64>,
    /// Plant a Tucker structure with this core before adding noise.
    #[arg(long = "K", value_delimiter = ',')]
    core: Vec<u64>,
    /// Noise norm relative to the planted signal.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct HooiArgs {
    /// Tensor file written by `dtucker gen-tensor`; otherwise a random tensor of shape --L.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long = "L", value_delimiter = ',')]
    lengths: Vec<u64>,
    #[arg(long = "K", value_delimiter = ',', required = true)]
    core: Vec<u64>,
    #[arg(long, default_value = "chain-input", value_parser = parse_strategy)]
    tree: TreeStrategy,
    #[arg(long, value_enum, default_value_t = Sweep::GaussSeidel)]
    mode: Sweep,
    #[arg(long, default_value_t = 5)]
    sweeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_strategy(s: &str) -> Result<TreeStrategy, String> {
    s.parse::<TreeStrategy>().map_err(|e| e.to_string())
}

enum CliError {
    Invalid(String),
    Violation(String),
}

impl From<dtucker::Error> for CliError {
    fn from(e: dtucker::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

impl SpecArgs {
    fn load(&self) -> CliResult<ProblemSpec> {
        match (&self.spec, self.lengths.is_empty() && self.core.is_empty()) {
            (Some(path), true) => Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?),
            (None, false) => Ok(ProblemSpec::new(self.lengths.clone(), self.core.clone())?),
            (Some(_), false) => Err(CliError::Invalid("give either --spec or --L/--K, not both".into())),
            (None, true) => Err(CliError::Invalid("missing --spec or --L/--K".into())),
        }
    }
}

fn emit(out: &OutArgs, write: impl FnOnce(&mut dyn Write, Format) -> CliResult<()>) -> CliResult<()> {
    match &out.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write(&mut w, out.format)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w, out.format)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn write_json(w: &mut dyn Write, value: &impl Serialize) -> CliResult<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct StaticSection {
    grid: Grid,
    volume: VolumeReport,
}

#[derive(Serialize, Deserialize)]
struct DynamicSection {
    scheme: DynamicGridScheme,
    volume: VolumeReport,
}

#[derive(Serialize, Deserialize)]
struct Predicted {
    flops: u64,
    static_volume: u64,
    dynamic_volume: u64,
    selected: String,
    selected_volume: u64,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    spec: ProblemSpec,
    procs: u64,
    strategy: TreeStrategy,
    tree: TtmTree,
    cost: CostReport,
    #[serde(rename = "static")]
    static_grid: StaticSection,
    dynamic: DynamicSection,
    predicted: Predicted,
}

fn make_plan(spec: ProblemSpec, procs: u64, strategy: TreeStrategy, grid: GridKind) -> CliResult<PlanFile> {
    if procs == 0 {
        return Err(CliError::Invalid("--procs must be at least 1".into()));
    }
    let tree = strategy.build(&spec)?.renumbered();
    let cost = tree_cost(&tree, &spec)?;
    let (sgrid, svol) = optimal_static_grid(&tree, &spec, procs)?;
    let dynamic = optimal_dynamic_scheme(&tree, &spec, procs)?;
    let selected_volume = match grid {
        GridKind::Static => svol.total_volume,
        GridKind::Dynamic => dynamic.volume.total_volume,
    };
    Ok(PlanFile {
        predicted: Predicted {
            flops: cost.total_flops,
            static_volume: svol.total_volume,
            dynamic_volume: dynamic.volume.total_volume,
            selected: if grid == GridKind::Static { "static" } else { "dynamic" }.into(),
            selected_volume,
        },
        spec,
        procs,
        strategy,
        tree,
        cost,
        static_grid: StaticSection { grid: sgrid, volume: svol },
        dynamic: DynamicSection { scheme: dynamic.scheme, volume: dynamic.volume },
    })
}

fn cmd_plan(a: PlanArgs) -> CliResult<()> {
    let plan = make_plan(a.spec.load()?, a.procs, a.tree, a.grid)?;
    emit(&a.out, |w, f| match f {
        Format::Json => write_json(w, &plan),
        Format::Csv => {
            let mut c = csv::Writer::from_writer(w);
            c.write_record([
                "node",
                "label",
                "parent",
                "flops",
                "static_grid",
                "static_ttm_volume",
                "dynamic_grid",
                "dynamic_ttm_volume",
                "dynamic_regrid_volume",
            ])
            .map_err(csv_err)?;
            for u in plan.tree.preorder() {
                let sv = plan.static_grid.volume.per_node[u];
                let dv = plan.dynamic.volume.per_node[u];
                let grid = plan.dynamic.scheme.grid(u).map(|g| g.to_string()).unwrap_or_default();
                c.write_record([
                    u.to_string(),
                    plan.tree.label(u).to_string(),
                    plan.tree.parent(u).map(|p| p.to_string()).unwrap_or_default(),
                    plan.cost.per_node_flops[u].to_string(),
                    plan.static_grid.grid.to_string(),
                    sv.ttm_volume.to_string(),
                    grid,
                    dv.ttm_volume.to_string(),
                    dv.regrid_volume.to_string(),
                ])
                .map_err(csv_err)?;
            }
            c.flush()?;
            Ok(())
        }
    })
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Invalid(e.to_string())
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let (spec, procs, tree, plan) = match &a.plan {
        Some(path) => {
            if a.spec.spec.is_some() || !a.spec.lengths.is_empty() || !a.spec.core.is_empty() {
                return Err(CliError::Invalid("give either --plan or a spec, not both".into()));
            }
            let p: PlanFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
            let grid = match a.grid {
                GridKind::Static => GridPlan::Static(p.static_grid.grid),
                GridKind::Dynamic => GridPlan::Dynamic(p.dynamic.scheme),
            };
            (p.spec, p.procs, p.tree, grid)
        }
        None => {
            let p = make_plan(a.spec.load()?, a.procs, a.tree, a.grid)?;
            let grid = match a.grid {
                GridKind::Static => GridPlan::Static(p.static_grid.grid),
                GridKind::Dynamic => GridPlan::Dynamic(p.dynamic.scheme),
            };
            (p.spec, p.procs, p.tree, grid)
        }
    };
    let ledger = simulate_distribution_seeded(&tree, &spec, &plan, procs, a.trace, a.seed)?;
    emit(&a.out, |w, f| match f {
        Format::Json => write_json(w, &ledger),
        Format::Csv => Ok(ledger.write_csv(w)?),
    })?;
    if a.trace {
        let flops = tree_cost(&tree, &spec)?.total_flops;
        if !ledger.ttm_matches_model() {
            return Err(CliError::Violation("measured reduce-scatter volume differs from the model".into()));
        }
        if !ledger.regrid_within_model() {
            return Err(CliError::Violation("measured regrid movement exceeds the model".into()));
        }
        if ledger.measured_flops() != Some(flops) {
            return Err(CliError::Violation(format!(
                "executed {:?} multiply-adds, planned {flops}",
                ledger.measured_flops()
            )));
        }
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let dedup = match a.dedup {
        Dedup::Multiset => DedupPolicy::Multiset,
        Dedup::Ordered => DedupPolicy::Ordered,
    };
    let params = |modes: &[usize]| BenchmarkParams::default().with_modes(modes).with_dedup(dedup);
    if a.counts {
        let counts = benchmark_counts(&BenchmarkParams::default())?;
        return emit(&a.out, |w, _| write_json(w, &counts));
    }
    if a.tree.is_empty() {
        return Err(CliError::Invalid("empty strategy list".into()));
    }
    let specs = match a.suite {
        Suite::Real => real_tensor_specs().into_iter().map(|n| n.spec).collect(),
        Suite::FiveD => generate_benchmark(&params(&[5]))?,
        Suite::SixD => generate_benchmark(&params(&[6]))?,
        Suite::Full => generate_benchmark(&params(&[5, 6]))?,
    };
    let comparison = run_comparison(&specs, a.procs, &a.tree)?;
    if let Some(path) = &a.summary {
        std::fs::write(path, comparison.summary_json()? + "\n")?;
    }
    emit(&a.out, |w, f| match f {
        Format::Csv => Ok(comparison.write_csv(w)?),
        Format::Json => {
            writeln!(w, "{}", comparison.summary_json()?)?;
            Ok(())
        }
    })
}

fn dims_of(lengths: &[u64]) -> CliResult<Vec<usize>> {
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(CliError::Invalid("dimensions must be positive".into()));
    }
    let card = lengths.iter().try_fold(1u64, |acc, &l| acc.checked_mul(l));
    match card {
        Some(c) if c <= ENGINE_MAX_CARD => Ok(lengths.iter().map(|&l| l as usize).collect()),
        _ => Err(CliError::Invalid(format!("tensor larger than {ENGINE_MAX_CARD} elements"))),
    }
}

fn cmd_gen(a: GenArgs) -> CliResult<()> {
    let dims = dims_of(&a.lengths)?;
    if !a.noise.is_finite() || a.noise < 0.0 {
        return Err(CliError::Invalid("--noise must be a non-negative number".into()));
    }
    let t = if a.core.is_empty() {
        DenseTensor::random(dims.clone(), a.seed)
    } else {
        let spec = ProblemSpec::new(a.lengths.clone(), a.core.clone())?;
        let core: Vec<usize> = spec.core_lengths().iter().map(|&k| k as usize).collect();
        let factors = dims
            .iter()
            .zip(&core)
            .enumerate()
            .map(|(m, (&l, &k))| random_orthonormal(l, k, a.seed.wrapping_add(1 + m as u64)))
            .collect();
        let signal = Decomposition { core: DenseTensor::random(core, a.seed), factors }.reconstruct()?;
        if a.noise == 0.0 {
            signal
        } else {
            let noise = DenseTensor::random(dims.clone(), a.seed ^ 0x9e37_79b9_7f4a_7c15);
            let scale = a.noise * signal.norm() / noise.norm();
            let data = signal.data().iter().zip(noise.data()).map(|(s, n)| s + scale * n).collect();
            DenseTensor::new(dims.clone(), data)?
        }
    };
    let mut w = BufWriter::new(File::create(&a.out)?);
    t.write_to(&mut w)?;
    w.flush()?;
    println!("{}", json!({ "dims": dims, "norm": t.norm(), "out": a.out }));
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    sweep: usize,
    error: f64,
    macs: u64,
    peak_live: usize,
}

fn cmd_hooi(a: HooiArgs) -> CliResult<()> {
    let t = match (&a.input, a.lengths.is_empty()) {
        (Some(path), true) => DenseTensor::read_from(BufReader::new(File::open(path)?))?,
        (None, false) => DenseTensor::random(dims_of(&a.lengths)?, a.seed),
        _ => return Err(CliError::Invalid("give exactly one of --input or --L".into())),
    };
    let spec = ProblemSpec::new(t.dims().iter().map(|&d| d as u64).collect(), a.core.clone())?;
    let core: Vec<usize> = a.core.iter().map(|&k| k as usize).collect();
    let tree = a.tree.build(&spec)?;
    let mode = match a.mode {
        Sweep::Jacobi => SweepMode::Jacobi,
        Sweep::GaussSeidel => SweepMode::GaussSeidel,
    };
    let mut d = Decomposition::random_init(&t, &core, a.seed.wrapping_add(1))?;
    let mut rows = vec![SweepRow { sweep: 0, error: reconstruction_error(&t, &d)?, macs: 0, peak_live: 0 }];
    for sweep in 1..=a.sweeps {
        let (next, stats) = hooi_sweep_with_stats(&t, &d, &tree, mode)?;
        d = next;
        rows.push(SweepRow { sweep, error: reconstruction_error(&t, &d)?, macs: stats.macs, peak_live: stats.peak_live });
    }
    let planned = tree_cost(&tree, &spec)?.total_flops;
    emit(&a.out, |w, f| match f {
        Format::Json => write_json(
            w,
            &json!({ "spec": spec, "strategy": a.tree, "planned_macs": planned, "sweeps": rows }),
        ),
        Format::Csv => {
            writeln!(w, "sweep,error,macs,peak_live")?;
            for r in &rows {
                writeln!(w, "{},{:e},{},{}", r.sweep, r.error, r.macs, r.peak_live)?;
            }
            Ok(())
        }
    })?;
    if rows[1..].iter().any(|r| r.macs != planned) {
        return Err(CliError::Violation("executed multiply-adds differ from the planned tree cost".into()));
    }
    if mode == SweepMode::GaussSeidel {
        if let Some(w) = rows.windows(2).find(|w| w[1].error > w[0].error * (1.0 + tol::MONOTONE_SLACK)) {
            return Err(CliError::Violation(format!("error rose from {} to {}", w[0].error, w[1].error)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::GenTensor(a) => cmd_gen(a),
        Command::Hooi(a) => cmd_hooi(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Violation(msg)) => {
            eprintln!("model violation: {msg}");
            ExitCode::from(2)
        }
    }
}
