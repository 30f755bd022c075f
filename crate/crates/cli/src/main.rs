//! `mlt`: generate, solve, check and compare moral lineage tracing instances.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mlt_core::exact::{exact_solve, gap, ExactLimits};
use mlt_core::feasibility::check_all;
use mlt_core::generator::{generate, GeneratorParams, Layout};
use mlt_core::gla::{gla_solve, GlaConfig};
use mlt_core::io::{read_instance, read_solution, write_instance, write_solution, Solution};
use mlt_core::klb::{klb_solve, KlbConfig};
use mlt_core::separation::{
    separate_birth_termination, separate_cycles, separate_indicator_consistency, separate_morality,
    separate_odd_wheels, Family, Inequality,
};
use mlt_core::{decompose_objective, Error, HypothesisGraph};

#[derive(Parser)]
#[command(name = "mlt", version, about = "Moral lineage tracing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic instance.
    Generate(GenerateArgs),
    /// Solve an instance and write the solution.
    Solve(SolveArgs),
    /// Report violated constraints; exit 1 unless feasible.
    Validate(PairArgs),
    /// Report violated inequalities per family; exit 1 if any.
    Separate(SeparateArgs),
    /// Print the objective split into constant, intra and branching parts.
    Objective(PairArgs),
    /// Compare two solutions of one instance.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output instance file.
    #[arg(short, long)]
    out: PathBuf,
    /// JSON file with generator parameters; flags override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    fragments: Option<usize>,
    #[arg(long)]
    division_prob: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Overridden by the MLT_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
    #[arg(long)]
    intra_neighbors: Option<usize>,
    #[arg(long)]
    temporal_neighbors: Option<usize>,
    /// Also write the ground truth as a solution file.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Strip,
    Plane,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algorithm {
    Gla,
    Klb,
    Exact,
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "klb")]
    algorithm: Algorithm,
    /// Re-solve radius for klb: a hop count or `inf`.
    #[arg(long, default_value = "10", value_parser = parse_radius)]
    d_mcbp: Radius,
    /// Starting solution for klb; greedy agglomeration otherwise.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output solution file.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Store the move trace in the solution.
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy)]
struct Radius(Option<usize>);

fn parse_radius(s: &str) -> Result<Radius, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(Radius(None));
    }
    s.parse().map(|d| Radius(Some(d))).map_err(|_| format!("expected a hop count or `inf`, got `{s}`"))
}

#[derive(Args)]
struct PairArgs {
    instance: PathBuf,
    solution: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum FamilyArg {
    All,
    Cycles,
    Morality,
    Birth,
    Termination,
    Consistency,
    Wheels,
}

#[derive(Args)]
struct SeparateArgs {
    instance: PathBuf,
    solution: PathBuf,
    /// Comma-separated families.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    families: Vec<FamilyArg>,
    /// Use the original inequality forms instead of the strengthened ones.
    #[arg(long)]
    original: bool,
}

#[derive(Args)]
struct CompareArgs {
    instance: PathBuf,
    first: PathBuf,
    second: PathBuf,
}

/// A failure with the exit code it maps to.
struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Parse { .. } | Error::NonDenseId { .. } => 3,
            _ => 1,
        };
        Failure(code, e.to_string())
    }
}

type Outcome = Result<ExitCode, Failure>;

fn load(instance: &Path, solution: &Path) -> Result<(HypothesisGraph, Solution), Failure> {
    let g = read_instance(instance)?;
    let s = read_solution(solution)?;
    s.check_instance(&g)?;
    Ok((g, s))
}

fn run_generate(a: GenerateArgs) -> Outcome {
    let mut p: GeneratorParams = match &a.params {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure(3, format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure(3, format!("{}: {e}", path.display())))?
        }
        None => GeneratorParams::default(),
    };
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut p.frames, a.frames);
    set(&mut p.cells_per_frame, a.cells);
    set(&mut p.fragments_per_cell, a.fragments);
    set(&mut p.intra_neighbors, a.intra_neighbors);
    set(&mut p.temporal_neighbors, a.temporal_neighbors);
    p.division_prob = a.division_prob.unwrap_or(p.division_prob);
    p.noise_sigma = a.sigma.unwrap_or(p.noise_sigma);
    p.seed = a.seed.unwrap_or(p.seed);
    if let Ok(env) = std::env::var("MLT_SEED") {
        p.seed = env.parse().map_err(|_| Failure(2, format!("MLT_SEED must be an integer, got `{env}`")))?;
    }
    if let Some(l) = a.layout {
        p.layout = match l {
            LayoutArg::Strip => Layout::Strip,
            LayoutArg::Plane => Layout::Plane,
        };
    }
    let gen = generate(&p)?;
    write_instance(&a.out, &gen.graph)?;
    if let Some(path) = &a.truth {
        let obj = mlt_core::objective(&gen.graph, &gen.ground_truth)?;
        write_solution(path, &Solution::new(&gen.graph, gen.ground_truth.clone(), obj, "ground_truth"))?;
    }
    println!("nodes: {}", gen.graph.num_nodes());
    println!("edges: {}", gen.graph.num_edges());
    Ok(ExitCode::SUCCESS)
}

fn run_solve(a: SolveArgs) -> Outcome {
    let g = read_instance(&a.instance)?;
    let start = Instant::now();
    let (labeling, objective, trace) = match a.algorithm {
        Algorithm::Gla => {
            let r = gla_solve(&g, &GlaConfig::default())?;
            let trace = a.trace.then(|| serde_json::to_value(&r.trace).expect("trace serializes"));
            (r.labeling, r.objective, trace)
        }
        Algorithm::Klb => {
            let init = match &a.init {
                Some(path) => {
                    let s = read_solution(path)?;
                    s.check_instance(&g)?;
                    s.labeling
                }
                None => gla_solve(&g, &GlaConfig::default())?.labeling,
            };
            let cfg = KlbConfig { d_mcbp: a.d_mcbp.0, ..Default::default() };
            let r = klb_solve(&g, &init, &cfg)?;
            for w in r.iterations.iter().filter_map(|it| it.warning.as_ref()) {
                eprintln!("warning: {w}");
            }
            let trace = a.trace.then(|| {
                serde_json::json!({ "steps": r.steps, "iterations": r.iterations })
            });
            (r.labeling, r.objective, trace)
        }
        Algorithm::Exact => {
            let r = exact_solve(&g, &ExactLimits::default())?;
            (r.labeling, r.objective, None)
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let name = match a.algorithm {
        Algorithm::Gla => "gla",
        Algorithm::Klb => "klb",
        Algorithm::Exact => "exact",
    };
    let mut s = Solution::new(&g, labeling, objective, name);
    s.wall_time_s = wall;
    s.trace = trace;
    if let Some(out) = &a.out {
        write_solution(out, &s)?;
    }
    println!("objective: {objective}");
    println!("wall_time_s: {wall:.6}");
    Ok(ExitCode::SUCCESS)
}

fn run_validate(a: PairArgs) -> Outcome {
    let (g, s) = load(&a.instance, &a.solution)?;
    let violations = check_all(&g, &s.labeling)?;
    if violations.is_empty() {
        println!("feasible");
        return Ok(ExitCode::SUCCESS);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &violations {
        *counts.entry(v.kind.name()).or_default() += 1;
    }
    println!("violations: {}", violations.len());
    for (kind, n) in counts {
        println!("{kind}: {n}");
    }
    for v in violations.iter().take(10) {
        println!("  {} frame {} nodes {:?} edges {:?}", v.kind.name(), v.frame, v.nodes, v.edges);
    }
    Ok(ExitCode::from(1))
}

/// Runs a separator whose precondition may not hold for this labeling.
fn guarded(name: &str, r: mlt_core::Result<Vec<Inequality>>) -> Result<Vec<Inequality>, Failure> {
    match r {
        Ok(v) => Ok(v),
        Err(e @ (Error::IntraMulticutInvalid(_) | Error::InfeasibleBase(_))) => {
            println!("{name}: skipped ({e})");
            Ok(Vec::new())
        }
        Err(e) => Err(e.into()),
    }
}

fn run_separate(a: SeparateArgs) -> Outcome {
    let (g, s) = load(&a.instance, &a.solution)?;
    let l = &s.labeling;
    let want = |f: FamilyArg| a.families.contains(&FamilyArg::All) || a.families.contains(&f);
    let reduced = !a.original;
    let mut found: Vec<Inequality> = Vec::new();
    if want(FamilyArg::Cycles) {
        found.extend(separate_cycles(&g, l, reduced)?);
    }
    if want(FamilyArg::Morality) {
        let chosen = guarded("morality", separate_morality(&g, l, reduced))?;
        let other = guarded("morality", separate_morality(&g, l, !reduced))?;
        let (r, o) = if reduced { (chosen.len(), other.len()) } else { (other.len(), chosen.len()) };
        println!("morality comparison: reduced {r}, original {o}");
        found.extend(chosen);
    }
    if want(FamilyArg::Birth) || want(FamilyArg::Termination) {
        let bt = guarded("birth/termination", separate_birth_termination(&g, l, reduced))?;
        found.extend(bt.into_iter().filter(|i| match i.family {
            Family::BirthOriginal | Family::BirthReduced => want(FamilyArg::Birth),
            _ => want(FamilyArg::Termination),
        }));
    }
    if want(FamilyArg::Consistency) {
        found.extend(separate_indicator_consistency(&g, l)?);
    }
    if want(FamilyArg::Wheels) {
        found.extend(separate_odd_wheels(&g, l)?);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for i in &found {
        *counts.entry(i.family.name()).or_default() += 1;
    }
    for (family, n) in &counts {
        println!("{family}: {n}");
    }
    println!("total: {}", found.len());
    Ok(if found.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_objective(a: PairArgs) -> Outcome {
    let (g, s) = load(&a.instance, &a.solution)?;
    let parts = decompose_objective(&g, &s.labeling)?;
    println!("constant: {}", parts.constant);
    println!("intra: {}", parts.intra);
    println!("branching: {}", parts.mcbp);
    println!("total: {}", parts.total());
    Ok(ExitCode::SUCCESS)
}

fn run_compare(a: CompareArgs) -> Outcome {
    let (g, first) = load(&a.instance, &a.first)?;
    let second = read_solution(&a.second)?;
    second.check_instance(&g)?;
    let x = mlt_core::objective(&g, &first.labeling)?;
    let y = mlt_core::objective(&g, &second.labeling)?;
    println!("first: {x} ({})", first.algorithm);
    println!("second: {y} ({})", second.algorithm);
    // The better objective serves as the bound.
    let (worse, bound) = if x >= y { (x, y) } else { (y, x) };
    println!("gap: {}", gap(worse, bound)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Solve(a) => run_solve(a),
        Command::Validate(a) => run_validate(a),
        Command::Separate(a) => run_separate(a),
        Command::Objective(a) => run_objective(a),
        Command::Compare(a) => run_compare(a),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
