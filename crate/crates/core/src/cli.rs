//! Command-line front end: `train`, `eval`, `transfer`, `fault`, `clear` and `gradcheck`.
//!
//! Exit statuses: 0 success, 1 I/O or runtime failure, 2 configuration or usage
//! error (including unknown fault ids), 3 infeasible market, 4 checkpoint
//! problems (unreadable, corrupt, or built for another feature layout).
//! Data goes to stdout, diagnostics to stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::market::{self, MarketError};
use crate::nn::{random_network_check, NetKind, NnError};
use crate::rl::{random_loss_check, Agent, LossKind, Method, Normalization, RlError};
use crate::sim::{
    apply_fault_scenario, compute_metrics, run_evaluation, run_training, write_comparison_csv,
    write_fault_csv, write_run_csv, write_summary_csv, ComparisonRow, EpisodeLog, FaultRow,
    Metrics, Scenario, SimError, FAULT_IDS,
};

pub const MANIFEST_FORMAT: &str = "gridbid-manifest";
pub const MANIFEST_VERSION: u32 = 1;
/// Window used for the first/last-episode profit comparison.
pub const TREND_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("infeasible market: {0}")]
    Infeasible(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Runtime(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Checkpoint(_) => 4,
        }
    }
}

impl From<MarketError> for CliError {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::InfeasibleLow { .. } | MarketError::InfeasibleHigh { .. } => {
                CliError::Infeasible(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<RlError> for CliError {
    fn from(e: RlError) -> Self {
        match e {
            RlError::FeatureWidth { .. }
            | RlError::Checkpoint(_)
            | RlError::Nn(NnError::Checkpoint(_)) => CliError::Checkpoint(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::UnknownFault(_) | SimError::Grid(_) => {
                CliError::Config(e.to_string())
            }
            SimError::Clearing { t, source } => match CliError::from(source) {
                CliError::Infeasible(m) => CliError::Infeasible(format!("step {t}: {m}")),
                other => other,
            },
            SimError::Market(m) => m.into(),
            SimError::Rl(r) => r.into(),
            SimError::MissingPolicy(_) => CliError::Checkpoint(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "gridbid",
    version,
    about = "Multi-agent bidding simulator with graph-convolutional actor-critic learners"
)]
pub struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one learner per strategic unit and write logs, checkpoints and a manifest.
    Train(TrainArgs),
    /// Roll out trained policies on a scenario without learning.
    Eval(EvalArgs),
    /// Evaluate checkpoints on another system and write a per-method comparison.
    Transfer(EvalArgs),
    /// Evaluate checkpoints with line sets disconnected.
    Fault(FaultArgs),
    /// Clear one market instance.
    Clear(ClearArgs),
    /// Finite-difference check of the network and loss gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file.
    #[arg(value_name = "SCENARIO")]
    pub scenario: Option<PathBuf>,
    /// Scenario file (same as the positional argument).
    #[arg(long = "scenario", value_name = "FILE", conflicts_with = "scenario")]
    pub scenario_flag: Option<PathBuf>,
}

impl ScenarioArgs {
    fn path(&self) -> Result<&Path, CliError> {
        self.scenario
            .as_deref()
            .or(self.scenario_flag.as_deref())
            .ok_or_else(|| CliError::Usage("a scenario file is required".into()))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output root; each seed writes into `<out>/seed_<seed>/`.
    #[arg(long, env = "GRIDBID_OUT", default_value = "runs")]
    pub out: PathBuf,
    /// Base seed (overrides the scenario file).
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Several base seeds, run independently.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub method: Option<Method>,
    /// Override the number of episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Override the steps per episode.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Re-run exactly what an earlier manifest describes.
    #[arg(long, conflicts_with_all = ["scenario", "scenario_flag", "seed", "seeds", "method", "episodes", "steps"])]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Checkpoint directory (a training seed directory or its `checkpoints/`). Repeatable.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, env = "GRIDBID_OUT", default_value = "runs")]
    pub out: PathBuf,
    /// Number of evaluation episodes (overrides the scenario file).
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FaultArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Fault id (3, 5 or 10). Repeatable; all three when absent.
    #[arg(long = "fault")]
    pub faults: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct ClearArgs {
    /// Unit file (CSV).
    #[arg(long)]
    pub units: PathBuf,
    /// Comma-separated bid multipliers, one per unit.
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_negative_numbers = true
    )]
    pub bids: Vec<f64>,
    /// Total demand in MW.
    #[arg(long, allow_negative_numbers = true)]
    pub demand: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random configurations per family.
    #[arg(long, default_value_t = 100)]
    pub configs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Inputs that fully determine a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub scenario: PathBuf,
    pub scenario_sha256: String,
    pub method: Method,
    pub seed: u64,
    pub demand_seed: u64,
    /// Unit label (1-based) to agent seed.
    pub agent_seeds: BTreeMap<String, u64>,
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Output file name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(CliError::Config(format!(
                "{}: not a version {MANIFEST_VERSION} manifest",
                path.display()
            )));
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| io_err(path, e))
}

/// Training request after flag resolution.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub scenario_path: PathBuf,
    pub seeds: Vec<Option<u64>>,
    pub method: Option<Method>,
    pub episodes: Option<usize>,
    pub steps: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    pub dir: PathBuf,
    pub first_window: f64,
    pub last_window: f64,
    pub overall: f64,
    pub final_bids: Vec<f64>,
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "{}: no such file",
            path.display()
        )));
    }
    Ok(Scenario::load(path)?)
}

fn metrics_for(scenario: &Scenario, logs: &[EpisodeLog]) -> Metrics {
    let fixed: Vec<f64> = scenario.units.iter().map(|u| u.fixed_cost).collect();
    compute_metrics(logs, scenario.report_fixed_cost.then_some(fixed.as_slice()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_logs(dir: &Path, scenario: &Scenario, logs: &[EpisodeLog]) -> Result<Metrics, CliError> {
    let metrics = metrics_for(scenario, logs);
    write_run_csv(dir.join("run.csv"), logs).map_err(|e| CliError::Io(e.to_string()))?;
    write_summary_csv(dir.join("summary.csv"), &metrics)
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(metrics)
}

/// One training run: artifacts under `<out>/seed_<seed>/`.
pub fn train_one(
    scenario_path: &Path,
    scenario: Scenario,
    out: &Path,
) -> Result<TrainReport, CliError> {
    let seed = scenario.seeds.base;
    let dir = out.join(format!("seed_{seed}"));
    let ckpt_dir = dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let trained = run_training(&scenario)?;
    let metrics = write_logs(&dir, &scenario, &trained.logs)?;
    for agent in &trained.agents {
        let path = ckpt_dir.join(format!("agent_{}.json", agent.unit + 1));
        agent
            .save(&path, trained.normalization)
            .map_err(|e| io_err(&path, e))?;
    }

    let mut outputs = BTreeMap::new();
    for name in ["run.csv", "summary.csv"] {
        outputs.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    let scenario_bytes = std::fs::read(scenario_path).map_err(|e| io_err(scenario_path, e))?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        scenario: std::fs::canonicalize(scenario_path).map_err(|e| io_err(scenario_path, e))?,
        scenario_sha256: sha256_hex(&scenario_bytes),
        method: scenario.method,
        seed,
        demand_seed: scenario.seeds.demand_seed(),
        agent_seeds: scenario
            .learners()
            .map(|u| ((u.id + 1).to_string(), scenario.seeds.agent(u.id)))
            .collect(),
        episodes: scenario.training.episodes,
        steps_per_episode: scenario.training.steps_per_episode,
        outputs,
    };
    let path = dir.join("manifest.json");
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;

    Ok(TrainReport {
        seed,
        dir,
        first_window: metrics.first_window(TREND_WINDOW),
        last_window: metrics.last_window(TREND_WINDOW),
        overall: metrics.overall(),
        final_bids: metrics
            .episodes
            .last()
            .map(|e| e.unit_avg_bid.clone())
            .unwrap_or_default(),
    })
}

/// Runs every seed of `plan`, in parallel threads, and returns reports in seed order.
pub fn train(plan: &TrainPlan) -> Result<Vec<TrainReport>, CliError> {
    let base = load_scenario(&plan.scenario_path)?;
    let mut scenarios = Vec::with_capacity(plan.seeds.len());
    for seed in &plan.seeds {
        let mut s = base.clone();
        if let Some(seed) = seed {
            s.set_seed(*seed);
        }
        if let Some(m) = plan.method {
            s.method = m;
        }
        if let Some(e) = plan.episodes {
            s.training.episodes = e;
        }
        if let Some(t) = plan.steps {
            s.training.steps_per_episode = t;
        }
        s.validate()?;
        scenarios.push(s);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .into_iter()
            .map(|s| scope.spawn(|| train_one(&plan.scenario_path, s, &plan.out)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .map_err(|_| CliError::Runtime("training thread panicked".into()))?
            })
            .collect()
    })
}

fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "{}: not a checkpoint directory",
            dir.display()
        )));
    }
    let dir = if dir.join("checkpoints").is_dir() {
        dir.join("checkpoints")
    } else {
        dir.to_path_buf()
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| io_err(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("agent_") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Checkpoint(format!(
            "{}: no agent_*.json files",
            dir.display()
        )));
    }
    Ok(files)
}

/// Agents of one training run plus the normalization they were trained with.
pub fn load_policies(dir: &Path) -> Result<(Vec<Agent>, Normalization, Method), CliError> {
    let mut agents = Vec::new();
    let mut norm = None;
    for path in checkpoint_files(dir)? {
        let (agent, n) = Agent::load(&path)
            .map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
        if norm.is_some_and(|prev| prev != n) {
            return Err(CliError::Checkpoint(format!(
                "{}: normalization differs from the other agents",
                path.display()
            )));
        }
        if agents
            .first()
            .is_some_and(|a: &Agent| a.method != agent.method)
        {
            return Err(CliError::Checkpoint(format!(
                "{}: mixed methods",
                path.display()
            )));
        }
        norm = Some(n);
        agents.push(agent);
    }
    agents.sort_by_key(|a| a.unit);
    let method = agents[0].method;
    Ok((agents, norm.expect("at least one checkpoint"), method))
}

fn evaluation_scenario(args: &EvalArgs) -> Result<Scenario, CliError> {
    let mut s = load_scenario(args.scenario.path()?)?;
    if let Some(e) = args.episodes {
        s.evaluation_episodes = e;
    }
    if let Some(t) = args.steps {
        s.training.steps_per_episode = t;
    }
    s.validate()?;
    Ok(s)
}

/// Evaluates the policies in `dir` on `scenario` (whose method is switched to the checkpoint's).
pub fn evaluate_dir(
    dir: &Path,
    scenario: &Scenario,
) -> Result<(Method, Vec<EpisodeLog>, Metrics), CliError> {
    let (agents, norm, method) = load_policies(dir)?;
    let mut s = scenario.clone();
    s.method = method;
    let logs = run_evaluation(&agents, norm, &s)?;
    let metrics = metrics_for(&s, &logs);
    Ok((method, logs, metrics))
}

/// Averages `(method, profit)` pairs per method, keeping first-appearance order.
fn average_by_method(results: &[(Method, f64)]) -> Vec<ComparisonRow> {
    let mut order: Vec<Method> = Vec::new();
    for (m, _) in results {
        if !order.contains(m) {
            order.push(*m);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let values: Vec<f64> = results
                .iter()
                .filter(|(k, _)| *k == m)
                .map(|(_, v)| *v)
                .collect();
            ComparisonRow {
                method: m.as_str().into(),
                avg_profit: values.iter().sum::<f64>() / values.len() as f64,
            }
        })
        .collect()
}

pub fn transfer(args: &EvalArgs) -> Result<Vec<ComparisonRow>, CliError> {
    let scenario = evaluation_scenario(args)?;
    let mut results = Vec::new();
    for dir in &args.checkpoints {
        let (method, _, metrics) = evaluate_dir(dir, &scenario)?;
        results.push((method, metrics.overall()));
    }
    let rows = average_by_method(&results);
    create_dir(&args.out)?;
    write_comparison_csv(args.out.join("comparison.csv"), &rows)
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(rows)
}

pub fn fault(args: &FaultArgs) -> Result<Vec<FaultRow>, CliError> {
    let ids: Vec<u32> = if args.faults.is_empty() {
        FAULT_IDS.to_vec()
    } else {
        args.faults.clone()
    };
    if let Some(bad) = ids.iter().find(|id| !FAULT_IDS.contains(id)) {
        return Err(SimError::UnknownFault(*bad).into());
    }
    let base = evaluation_scenario(&args.eval)?;
    let mut rows = Vec::new();
    for id in ids {
        let faulted = apply_fault_scenario(&base, id)?;
        let mut results = Vec::new();
        for dir in &args.eval.checkpoints {
            let (method, _, metrics) = evaluate_dir(dir, &faulted)?;
            results.push((method, metrics.overall()));
        }
        rows.extend(average_by_method(&results).into_iter().map(|r| FaultRow {
            n_disconnected: faulted.removed_lines.len(),
            method: r.method,
            avg_profit: r.avg_profit,
        }));
    }
    create_dir(&args.eval.out)?;
    write_fault_csv(args.eval.out.join("faults.csv"), &rows)
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClearReport {
    pub price: f64,
    pub dispatch: Vec<f64>,
    /// 1-based.
    pub marginal_unit: Option<usize>,
    pub total_cost: f64,
}

pub fn clear(args: &ClearArgs) -> Result<ClearReport, CliError> {
    if !args.units.exists() {
        return Err(CliError::Usage(format!(
            "{}: no such file",
            args.units.display()
        )));
    }
    let units = market::load_units(&args.units)?;
    let r = market::clear_market(&units, &args.bids, args.demand)?;
    Ok(ClearReport {
        price: r.price,
        dispatch: r.dispatch,
        marginal_unit: r.marginal_unit.map(|i| i + 1),
        total_cost: r.total_cost,
    })
}

/// Largest relative error per check family over `configs` random configurations.
#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub family: String,
    pub configs: u64,
    pub max_error: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn gradcheck(configs: u64, seed: u64) -> Result<Vec<GradcheckReport>, CliError> {
    let report = |family: &str, bound: f64, errors: Vec<f64>| {
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        GradcheckReport {
            family: family.into(),
            configs,
            max_error,
            bound,
            pass: max_error < bound,
        }
    };
    let seeds = || (0..configs).map(|i| seed.wrapping_add(i));
    let net = |kind| -> Result<Vec<f64>, CliError> {
        seeds()
            .map(|s| random_network_check(kind, s).map_err(|e| CliError::Runtime(e.to_string())))
            .collect()
    };
    let loss = |kind| -> Result<Vec<f64>, CliError> {
        seeds()
            .map(|s| random_loss_check(kind, s).map_err(CliError::from))
            .collect()
    };
    Ok(vec![
        report("dense", 1e-4, net(NetKind::Dense)?),
        report("gcn", 1e-4, net(NetKind::Gcn)?),
        report("linear", 1e-8, net(NetKind::Linear)?),
        report("critic-loss", 1e-4, loss(LossKind::Critic)?),
        report("actor-loss", 1e-4, loss(LossKind::Actor)?),
    ])
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn train_plan(args: &TrainArgs) -> Result<TrainPlan, CliError> {
    if let Some(path) = &args.manifest {
        let m = Manifest::load(path)?;
        if !m.scenario.exists() {
            return Err(CliError::Config(format!(
                "{}: no such file",
                m.scenario.display()
            )));
        }
        let hash = sha256_file(&m.scenario)?;
        if hash != m.scenario_sha256 {
            return Err(CliError::Config(format!(
                "{} changed since the manifest was written",
                m.scenario.display()
            )));
        }
        return Ok(TrainPlan {
            scenario_path: m.scenario,
            seeds: vec![Some(m.seed)],
            method: Some(m.method),
            episodes: Some(m.episodes),
            steps: Some(m.steps_per_episode),
            out: args.out.clone(),
        });
    }
    let seeds = match (args.seed, args.seeds.is_empty()) {
        (Some(s), _) => vec![Some(s)],
        (None, false) => args.seeds.iter().map(|&s| Some(s)).collect(),
        (None, true) => vec![None],
    };
    Ok(TrainPlan {
        scenario_path: args.scenario.path()?.to_path_buf(),
        seeds,
        method: args.method,
        episodes: args.episodes,
        steps: args.steps,
        out: args.out.clone(),
    })
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(args) => {
            let reports = train(&train_plan(args)?)?;
            if cli.json {
                return print_json(&reports);
            }
            for r in reports {
                println!(
                    "seed {} first{TREND_WINDOW} {} last{TREND_WINDOW} {} overall {} final_bids {} -> {}",
                    r.seed,
                    r.first_window,
                    r.last_window,
                    r.overall,
                    fmt_list(&r.final_bids),
                    r.dir.display()
                );
            }
        }
        Command::Eval(args) => {
            let scenario = evaluation_scenario(args)?;
            let mut summary = Vec::new();
            for (i, dir) in args.checkpoints.iter().enumerate() {
                let (_, logs, metrics) = evaluate_dir(dir, &scenario)?;
                let out = if args.checkpoints.len() == 1 {
                    args.out.clone()
                } else {
                    args.out.join(format!("checkpoint_{}", i + 1))
                };
                create_dir(&out)?;
                write_logs(&out, &scenario, &logs)?;
                summary.push((dir.clone(), metrics.overall()));
            }
            if cli.json {
                return print_json(&summary);
            }
            for (dir, profit) in summary {
                println!("{} avg_profit {profit}", dir.display());
            }
        }
        Command::Transfer(args) => {
            let rows = transfer(args)?;
            if cli.json {
                let v: Vec<_> = rows
                    .iter()
                    .map(|r| (r.method.clone(), r.avg_profit))
                    .collect();
                return print_json(&v);
            }
            for r in rows {
                println!("{} {}", r.method, r.avg_profit);
            }
        }
        Command::Fault(args) => {
            let rows = fault(args)?;
            if cli.json {
                let v: Vec<_> = rows
                    .iter()
                    .map(|r| (r.n_disconnected, r.method.clone(), r.avg_profit))
                    .collect();
                return print_json(&v);
            }
            for r in rows {
                println!("{} {} {}", r.n_disconnected, r.method, r.avg_profit);
            }
        }
        Command::Clear(args) => {
            let r = clear(args)?;
            if cli.json {
                return print_json(&r);
            }
            println!("price {}", r.price);
            println!("dispatch {}", fmt_list(&r.dispatch));
            match r.marginal_unit {
                Some(u) => println!("marginal_unit {u}"),
                None => println!("marginal_unit none"),
            }
            println!("total_cost {}", r.total_cost);
        }
        Command::Gradcheck(args) => {
            let reports = gradcheck(args.configs, args.seed)?;
            let failed: Vec<String> = reports
                .iter()
                .filter(|r| !r.pass)
                .map(|r| r.family.clone())
                .collect();
            if cli.json {
                print_json(&reports)?;
            } else {
                for r in &reports {
                    println!(
                        "{} max_rel_error {:e} bound {:e} {}",
                        r.family,
                        r.max_error,
                        r.bound,
                        if r.pass { "ok" } else { "FAIL" }
                    );
                }
            }
            if !failed.is_empty() {
                return Err(CliError::Runtime(format!(
                    "gradient check failed: {}",
                    failed.join(", ")
                )));
            }
        }
    }
    Ok(())
}
