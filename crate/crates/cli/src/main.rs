use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use garou_core::harness::{self, checks, suite, MetricsReport, SweepCell, SweepGrid};
use garou_core::sim::{self, Scenario, Trace};

#[derive(Parser)]
#[command(
    name = "garou",
    version,
    about = "Simulate and test an N-party off-chain payment hub"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace.jsonl, metrics.json and metrics.csv.
    Run(RunArgs),
    /// Run a nodes x epoch duration grid and write sweep.csv.
    Sweep(SweepArgs),
    /// Run every adversarial scenario and check its expected outcome.
    AttackSuite(AttackArgs),
    /// Recompute metrics from a stored trace and rerun the safety checks.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML; defaults to an honest 10-node hub.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of genesis nodes.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Base scenario TOML for every cell.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = harness::DEFAULT_NODES)]
    nodes: Vec<usize>,
    /// Epoch durations in seconds.
    #[arg(long, value_delimiter = ',', default_values_t = harness::DEFAULT_EPOCH_DURATIONS_S)]
    epoch_durations: Vec<u64>,
    /// Worker threads; cells are independent runs.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// First seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seeds per attack.
    #[arg(long, default_value_t = 3)]
    runs: u64,
    /// Directory for attack_suite.csv; nothing is written when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    /// Metrics to compare against; defaults to metrics.json next to the trace.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Directory for the recomputed metrics.json and metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    /// A run or check did not meet its expectation.
    Assertion(String),
    /// Unusable arguments, files or scenarios.
    Input(String),
}

type Outcome = Result<(), Failure>;

fn input<E: std::fmt::Display>(what: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Input(format!("{what}: {e}"))
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario, Failure> {
    let Some(path) = path else {
        return Ok(Scenario::default());
    };
    let text = fs::read_to_string(path).map_err(input(path.display()))?;
    Scenario::from_toml(&text).map_err(input(path.display()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Outcome {
    fs::create_dir_all(dir).map_err(input(dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(input(path.display()))
}

fn print_summary(m: &MetricsReport) {
    println!(
        "{}: n={} D={}ms seed={} transfers={} throughput={:.2}/s latency={:.0}±{:.0}ms consensus={:.0}±{:.0}ms epochs={} rollbacks={} evictions={}",
        m.scenario,
        m.nodes,
        m.epoch_duration_ms,
        m.seed,
        m.transfers,
        m.throughput,
        m.latency.mean_ms,
        m.latency.std_ms,
        m.consensus_delay.mean_ms,
        m.consensus_delay.std_ms,
        m.epochs_confirmed,
        m.rollbacks,
        m.evictions,
    );
}

fn run(args: RunArgs) -> Outcome {
    let mut scenario = load_scenario(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(n) = args.nodes {
        scenario.nodes = n;
    }
    scenario.validate().map_err(input("scenario"))?;
    let (sim, _) = sim::run(&scenario).map_err(input("scenario"))?;
    let trace = sim.trace();
    let metrics = MetricsReport::from_trace(trace);
    write(&args.out, "trace.jsonl", &trace.to_jsonl())?;
    write(&args.out, "metrics.json", &metrics.to_json())?;
    write(&args.out, "metrics.csv", &metrics.to_csv())?;
    print_summary(&metrics);
    checks::safety(trace).map_err(Failure::Assertion)
}

fn sweep(args: SweepArgs) -> Outcome {
    if args.nodes.is_empty() || args.epoch_durations.is_empty() {
        return Err(Failure::Input(
            "node and epoch duration lists must be non-empty".into(),
        ));
    }
    let mut base = load_scenario(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    let mut grid = SweepGrid::new(base);
    grid.nodes = args.nodes;
    grid.epoch_durations_s = args.epoch_durations;
    let cells: Vec<(usize, u64)> = grid
        .nodes
        .iter()
        .flat_map(|&n| grid.epoch_durations_s.iter().map(move |&d| (n, d)))
        .collect();
    for &(n, d) in &cells {
        if n <= grid.base.chain.gas.participant_cap() {
            grid.cell_scenario(n, d)
                .validate()
                .map_err(input(format!("cell n={n} D={d}s")))?;
        }
    }
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()))
        .clamp(1, cells.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepCell>>> = Mutex::new(vec![None; cells.len()]);
    let failure: Mutex<Option<String>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(n, d)) = cells.get(i) else { break };
                match grid.run_cell(n, d) {
                    Ok(cell) => {
                        eprintln!("n={n} D={d}s: {}", cell.status);
                        results.lock().unwrap()[i] = Some(cell);
                    }
                    Err(e) => {
                        *failure.lock().unwrap() = Some(format!("cell n={n} D={d}s: {e}"));
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(Failure::Input(e));
    }
    let rows: Vec<SweepCell> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .flatten()
        .collect();
    let csv = harness::to_csv(&rows);
    write(&args.out, "sweep.csv", &csv)?;
    print!("{csv}");
    match rows.iter().find(|c| c.status == "stalled") {
        Some(c) => Err(Failure::Assertion(format!(
            "cell n={} D={}s stalled",
            c.nodes, c.epoch_duration_s
        ))),
        None => Ok(()),
    }
}

fn attack_suite(args: AttackArgs) -> Outcome {
    if args.runs == 0 {
        return Err(Failure::Input("--runs must be positive".into()));
    }
    let seeds = args.seed..args.seed + args.runs;
    let mut results = Vec::new();
    for case in suite() {
        for seed in seeds.clone() {
            let r = case.run(seed);
            println!(
                "{} {:<28} seed {:<4} rollbacks {:<2} evictions {:<2} epochs {:<3} {}",
                if r.passed { "PASS" } else { "FAIL" },
                r.attack,
                r.seed,
                r.rollbacks,
                r.evictions,
                r.epochs_confirmed,
                r.detail
            );
            results.push(r);
        }
    }
    if let Some(dir) = &args.out {
        write(dir, "attack_suite.csv", &harness::to_csv(&results))?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} runs passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        return Err(Failure::Assertion(format!("{failed} attack runs failed")));
    }
    Ok(())
}

fn replay(args: ReplayArgs) -> Outcome {
    let text = fs::read_to_string(&args.trace).map_err(input(args.trace.display()))?;
    let trace = Trace::from_jsonl(&text).map_err(input(args.trace.display()))?;
    if trace.meta().is_none() {
        return Err(Failure::Input(format!(
            "{}: no meta record",
            args.trace.display()
        )));
    }
    let metrics = MetricsReport::from_trace(&trace);
    let recomputed = metrics.to_json();
    if let Some(dir) = &args.out {
        write(dir, "metrics.json", &recomputed)?;
        write(dir, "metrics.csv", &metrics.to_csv())?;
    }
    print_summary(&metrics);
    checks::safety(&trace).map_err(Failure::Assertion)?;
    let stored = args
        .metrics
        .clone()
        .or_else(|| Some(args.trace.parent()?.join("metrics.json")))
        .filter(|p| args.metrics.is_some() || p.exists());
    if let Some(path) = stored {
        let expected = fs::read_to_string(&path).map_err(input(path.display()))?;
        if expected != recomputed {
            return Err(Failure::Assertion(format!(
                "metrics recomputed from the trace differ from {}",
                path.display()
            )));
        }
        println!("metrics match {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::AttackSuite(a) => attack_suite(a),
        Command::Replay(a) => replay(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(e)) => {
            eprintln!("garou: check failed: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("garou: {e}");
            ExitCode::from(2)
        }
    }
}
