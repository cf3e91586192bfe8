//! `grid-isle`: train detectors, run the event-triggered islanding pipeline,
//! solve a single islanding instance, or evaluate island economics.
//!
//! Exit codes: 0 success, 2 configuration error, 3 infeasible islanding
//! instance, 4 solver time limit reached (incumbent reported), 1 other.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use grid_isle::detection::{ModelBundle, VoteConfig};
use grid_isle::dispatch::{self, IslandReport};
use grid_isle::dynamics::Scenario;
use grid_isle::grid::{self, BusId, GridTopology, Partition};
use grid_isle::islanding::{self, IslandingConfig, IslandingError, SolveOptions, SolveStatus};
use grid_isle::pipeline::{self, Format, RunConfig, TrainConfig};
use grid_isle::skr::SkrConfig;

#[derive(Parser)]
#[command(name = "grid-isle", version, about = "Event-triggered adaptive controlled islanding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training scenarios and fit the three classifiers.
    Train(TrainArgs),
    /// Run the full pipeline on one scenario.
    Run(RunArgs),
    /// Solve the islanding MILP for a case and anomalous bus.
    Solve(SolveArgs),
    /// Economic dispatch of the whole case or of a two-way partition.
    Dispatch(DispatchArgs),
}

#[derive(Args)]
struct Common {
    /// Case file (schema grid-isle/1); the bundled RTS-24 case when omitted.
    #[arg(long)]
    case: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Output formats, comma separated.
    #[arg(long, default_value = "json", value_delimiter = ',')]
    format: Vec<Format>,
}

#[derive(Args)]
struct MilpArgs {
    /// Objective weights `l1,l2,l3`.
    #[arg(long, value_parser = parse_lambda)]
    lambda: Option<[f64; 3]>,
    /// Solver time limit in seconds.
    #[arg(long = "time-limit-s", default_value_t = 60.0)]
    time_limit_s: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Where to write the model bundle.
    #[arg(long, default_value = "out/model.json")]
    model: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Voting rounds NR recorded in the bundle.
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value = "json", value_delimiter = ',')]
    format: Vec<Format>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    milp: MilpArgs,
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Model bundle; a default model is trained in-process when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Trigger confidence level.
    #[arg(long, default_value_t = 0.99, value_parser = parse_confidence)]
    confidence: f64,
    /// Voting rounds NR (early exit is checked at round 3).
    #[arg(long)]
    rounds: Option<usize>,
    /// Window after step 1 in which persistent alarms trigger step 2.
    #[arg(long = "persistence-s", default_value_t = 0.5)]
    persistence_s: f64,
    /// Override the scenario's noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    milp: MilpArgs,
    /// Anomalous bus ids, e.g. `4` or `4,9`.
    #[arg(long, default_value = "4")]
    bus: String,
}

#[derive(Args)]
struct DispatchArgs {
    #[command(flatten)]
    common: Common,
    /// Unhealthy side of a two-way partition, e.g. `1-2,4-13,20,23`; the
    /// whole case is dispatched when omitted.
    #[arg(long)]
    unhealthy: Option<String>,
}

enum Failure {
    Config(String),
    Infeasible(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

type Outcome = Result<u8, Failure>;

fn parse_lambda(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad weight `{p}`"))).collect::<Result<_, _>>()?;
    match v.as_slice() {
        [a, b, c] if v.iter().all(|x| x.is_finite() && *x >= 0.0) => Ok([*a, *b, *c]),
        _ => Err("expected three non-negative weights `l1,l2,l3`".into()),
    }
}

fn parse_confidence(s: &str) -> Result<f64, String> {
    match s {
        "0.95" => Ok(0.95),
        "0.99" => Ok(0.99),
        _ => Err("confidence must be 0.95 or 0.99".into()),
    }
}

fn load_topology(path: Option<&Path>) -> Result<GridTopology, Failure> {
    match path {
        None => Ok(grid::rts24()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            grid::load_case_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn read_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), Failure> {
    let io = |e: csv::Error| Failure::Other(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::Other(e.to_string()))
}

fn solve_options(m: &MilpArgs) -> Result<SolveOptions, Failure> {
    if !(m.time_limit_s > 0.0) {
        return Err(Failure::Config("--time-limit-s must be positive".into()));
    }
    Ok(SolveOptions { time_limit: Some(Duration::from_secs_f64(m.time_limit_s)), ..Default::default() })
}

fn islanding_config(m: &MilpArgs) -> IslandingConfig {
    let mut c = IslandingConfig::default();
    if let Some(l) = m.lambda {
        c.lambda = l;
    }
    c
}

fn train(args: &TrainArgs) -> Outcome {
    let votes = VoteConfig { rounds: args.rounds, ..Default::default() };
    votes.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let mut config = TrainConfig { votes, ..Default::default() };
    config.params.seed = args.seed;
    let (bundle, metrics, warning) = pipeline::train_command(&config).map_err(|e| Failure::Other(e.to_string()))?;
    if let Some(w) = warning {
        eprintln!("warning: {w}");
    }
    write(&args.model, &bundle.to_json())?;
    for f in &args.format {
        match f {
            Format::Json => write(&args.out.join("metrics.json"), &serde_json::to_string_pretty(&metrics).expect("serializes"))?,
            Format::Csv => write_csv(
                &args.out.join("metrics.csv"),
                &["accuracy", "tp", "fp", "tn", "fn", "mean_round_ms", "max_round_ms"],
                vec![vec![
                    metrics.accuracy.to_string(),
                    metrics.tp.to_string(),
                    metrics.fp.to_string(),
                    metrics.tn.to_string(),
                    metrics.fn_.to_string(),
                    metrics.mean_round_ms.to_string(),
                    metrics.max_round_ms.to_string(),
                ]],
            )?,
        }
    }
    println!(
        "trained on {} samples; holdout accuracy {:.4} (tp {}, fp {}, tn {}, fn {}); bundle {}",
        bundle.metadata.train_samples,
        metrics.accuracy,
        metrics.tp,
        metrics.fp,
        metrics.tn,
        metrics.fn_,
        args.model.display()
    );
    Ok(0)
}

fn run(args: &RunArgs) -> Outcome {
    let topology = load_topology(args.common.case.as_deref())?;
    let mut scenario = read_scenario(&args.scenario)?;
    if let Some(s) = args.seed {
        scenario.seed = s;
    }
    let bundle = match &args.model {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            ModelBundle::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => {
            eprintln!("no --model given; training the default detector");
            pipeline::train_command(&TrainConfig::default()).map_err(|e| Failure::Other(e.to_string()))?.0
        }
    };
    let name = args.scenario.file_stem().map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned());
    let mut config = RunConfig::new(topology, name, scenario, bundle);
    config.islanding = islanding_config(&args.milp);
    config.solve = solve_options(&args.milp)?;
    config.trigger = SkrConfig { confidence: args.confidence, ..config.trigger };
    if let Some(r) = args.rounds {
        config.votes.rounds = r;
    }
    if !(args.persistence_s > 0.0) {
        return Err(Failure::Config("--persistence-s must be positive".into()));
    }
    config.persistence_s = args.persistence_s;
    let report = pipeline::run(&config).map_err(|e| match e {
        pipeline::PipelineError::Config(_) | pipeline::PipelineError::Sim(_) | pipeline::PipelineError::Detect(_) | pipeline::PipelineError::Skr(_) => {
            Failure::Config(e.to_string())
        }
        other => Failure::Other(other.to_string()),
    })?;
    let files = pipeline::emit_report(&report, &args.common.format, &args.common.out).map_err(|e| Failure::Other(e.to_string()))?;
    println!(
        "{}: {} alarms, {} sessions, decision {}, {} islanding step(s)",
        report.scenario,
        report.alarms.len(),
        report.sessions.len(),
        match report.scenario_decision {
            Some(1) => "islanding",
            Some(_) => "no islanding",
            None => "none (no alarm)",
        },
        report.steps.len()
    );
    for s in &report.steps {
        println!("  step {}: unhealthy {:?}, open lines {:?}, cost ${:.2}", s.step, s.solution.unhealthy(), s.cut_lines, s.aggregate_cost_usd);
    }
    for e in &report.errors {
        eprintln!("{} error at {:?}: {}", e.stage, e.t_s, e.message);
    }
    println!("wrote {} files to {}", files.len(), args.common.out.display());
    if report.infeasible() {
        return Err(Failure::Infeasible("islanding instance infeasible".into()));
    }
    Ok(if report.solver_timed_out() { 4 } else { 0 })
}

fn solve(args: &SolveArgs) -> Outcome {
    let topology = load_topology(args.common.case.as_deref())?;
    let anomalous: BTreeSet<BusId> = grid::parse_bus_list(&args.bus).map_err(Failure::Config)?;
    let opts = solve_options(&args.milp)?;
    let inst = islanding::build_milp(&topology, &anomalous, &islanding_config(&args.milp)).map_err(|e| match e {
        IslandingError::UnknownBus(_) => Failure::Config(e.to_string()),
        other => Failure::Other(other.to_string()),
    })?;
    let out = &args.common.out;
    write(&out.join("instance.lp"), &inst.dump())?;
    let sol = match islanding::solve(&inst, &opts) {
        Ok(s) => s,
        Err(e @ IslandingError::Infeasible { .. }) => return Err(Failure::Infeasible(e.to_string())),
        Err(e) => return Err(Failure::Other(e.to_string())),
    };
    let violation = islanding::validate_solution(&inst, &sol).values().copied().fold(0.0, f64::max);
    for f in &args.common.format {
        match f {
            Format::Json => write(&out.join("solution.json"), &serde_json::to_string_pretty(&sol).expect("serializes"))?,
            Format::Csv => {
                let mut rows = Vec::new();
                rows.extend(sol.h.iter().map(|(k, v)| vec!["h".into(), k.to_string(), v.to_string()]));
                rows.extend(sol.w.iter().map(|(k, v)| vec!["w".into(), k.clone(), v.to_string()]));
                rows.extend(sol.phi.iter().map(|(k, v)| vec!["phi".into(), k.clone(), v.to_string()]));
                rows.extend(sol.p_mw.iter().map(|(k, v)| vec!["p_mw".into(), k.clone(), v.to_string()]));
                rows.extend(sol.beta.iter().map(|(k, v)| vec!["beta".into(), k.clone(), v.to_string()]));
                rows.extend(sol.flow_mw.iter().map(|(k, v)| vec!["flow_mw".into(), k.clone(), v.to_string()]));
                for (k, v) in [("objective", sol.objective), ("gap", sol.gap), ("nodes", sol.nodes as f64)] {
                    rows.push(vec![k.into(), String::new(), v.to_string()]);
                }
                write_csv(&out.join("solution.csv"), &["var", "id", "value"], rows)?;
            }
        }
    }
    println!(
        "J = {:.6}, gap {:.2e}, {} nodes, {:.3} s, max violation {:.1e}",
        sol.objective, sol.gap, sol.nodes, sol.wall_time_s, violation
    );
    println!("unhealthy buses {:?}", sol.unhealthy());
    println!("open lines {:?}", sol.open_lines());
    Ok(if sol.status == SolveStatus::TimeLimit { 4 } else { 0 })
}

fn dispatch_cmd(args: &DispatchArgs) -> Outcome {
    let topology = load_topology(args.common.case.as_deref())?;
    let all = topology.bus_ids();
    let nominal = dispatch::island_report(&topology, "nominal", &all, Vec::new()).map_err(|e| Failure::Other(e.to_string()))?;
    let mut rows: Vec<IslandReport> = vec![nominal.clone()];
    if let Some(text) = &args.unhealthy {
        let unhealthy = grid::parse_bus_list(text).map_err(Failure::Config)?;
        let part = Partition::from_unhealthy(&topology, unhealthy).map_err(|e| Failure::Config(e.to_string()))?;
        let cut = grid::cut_set(&topology, &part);
        let closed: BTreeSet<String> = topology.lines.iter().map(|l| l.id.clone()).filter(|id| !cut.contains(id)).collect();
        let islanded = topology.with_lines(&closed);
        for (name, side) in [("healthy", &part.healthy), ("unhealthy", &part.unhealthy)] {
            if side.is_empty() {
                continue;
            }
            rows.push(dispatch::island_report(&islanded, name, side, cut.clone()).map_err(|e| Failure::Other(e.to_string()))?);
        }
    }
    let out = &args.common.out;
    for f in &args.common.format {
        match f {
            Format::Json => write(&out.join("dispatch.json"), &serde_json::to_string_pretty(&rows).expect("serializes"))?,
            Format::Csv => write_csv(
                &out.join("dispatch.csv"),
                &["island", "buses", "p_gen_max_mw", "p_dem_mw", "q_gen_max_mvar", "q_dem_mvar", "disconnected_lines", "shed_pct", "shed_bound_pct", "cost_usd"],
                rows.iter()
                    .map(|r| {
                        vec![
                            r.island.clone(),
                            r.buses.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(" "),
                            r.capacities.p_gen_max_mw.to_string(),
                            r.capacities.p_dem_mw.to_string(),
                            r.capacities.q_gen_max_mvar.to_string(),
                            r.capacities.q_dem_mvar.to_string(),
                            r.disconnected_lines.join(" "),
                            format!("{:.4}", 100.0 * r.shed_fraction),
                            format!("{:.4}", 100.0 * r.shed_lower_bound),
                            format!("{:.2}", r.cost_usd),
                        ]
                    })
                    .collect(),
            )?,
        }
    }
    for r in &rows {
        println!("{:<10} cost ${:>10.2}  shed {:>6.2}%  buses {:?}", r.island, r.cost_usd, 100.0 * r.shed_fraction, r.buses);
    }
    if rows.len() > 1 {
        let c = dispatch::compare_to_nominal(&nominal, &rows[1..]);
        println!("islanded total ${:.2} ({:+.2}% vs nominal)", c.post_usd, c.percent);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Run(a) => run(a),
        Command::Solve(a) => solve(a),
        Command::Dispatch(a) => dispatch_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let msg = match &f {
                Failure::Config(m) | Failure::Infeasible(m) | Failure::Other(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
