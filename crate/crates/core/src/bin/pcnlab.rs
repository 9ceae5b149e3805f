use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use pcnlab::graph::{GraphDocument, NodeId, PcnGraph, Sat};
use pcnlab::harness::{
    build_fixture, render_report, run_experiment_1, run_experiment_2, summary_text, ExperimentConfig, HarnessError,
    ReportFormat, RunResult,
};
use pcnlab::htlc::HtlcEngine;
use pcnlab::metrics::{write_per_path_csv, MetricsReport};
use pcnlab::netgen::{generate_topology, TopologyConfig};
use pcnlab::pathfind::write_paths_csv;
use pcnlab::planner::{run_attack_round, write_plan_csv, AttackPlan, Strategy};

/// Payment-channel-network congestion attack laboratory.
#[derive(Parser)]
#[command(name = "pcnlab", version)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a topology (with Sybils unless --no-sybils) and emit it as JSON.
    Gen {
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long)]
        no_sybils: bool,
        /// Output file; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a single attack round with one strategy and print its metrics.
    Attack {
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long, value_parser = parse_kebab::<Strategy>)]
        strategy: Strategy,
        /// Budget per attacker (satoshi).
        #[arg(long)]
        budget: Sat,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
        /// Graph JSON from `gen`; a calibrated fixture is generated when absent.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        plan_csv: Option<PathBuf>,
        #[arg(long)]
        paths_csv: Option<PathBuf>,
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
        /// HTLC event log, written after the HTLCs expire.
        #[arg(long)]
        htlc_log: Option<PathBuf>,
    },
    /// Experiment 1: threshold sweep at fixed budgets.
    Exp1 {
        #[command(flatten)]
        flags: ConfigFlags,
        #[command(flatten)]
        out: OutputFlags,
    },
    /// Experiment 2: budget sweep.
    Exp2 {
        #[command(flatten)]
        flags: ConfigFlags,
        #[command(flatten)]
        out: OutputFlags,
    },
    /// Re-render a saved result.json.
    Report {
        /// result.json written by exp1 or exp2.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "csv,svg,summary", value_parser = parse_format)]
        format: Vec<ReportFormat>,
    },
}

#[derive(Args)]
struct OutputFlags {
    #[arg(long, value_delimiter = ',', default_value = "csv,svg,summary", value_parser = parse_format)]
    format: Vec<ReportFormat>,
}

/// Flags mirroring `ExperimentConfig`; each overrides the config file.
#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    pair_count: Option<usize>,
    /// Comma-separated budgets for experiment 1.
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<Sat>>,
    #[arg(long, value_delimiter = ',')]
    threshold_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    budget_sweep: Option<Vec<Sat>>,
    #[arg(long)]
    sweep_threshold: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Comma-separated subset of minpay, spcr-max, random, general.
    #[arg(long, value_delimiter = ',', value_parser = parse_kebab::<Strategy>)]
    strategies: Option<Vec<Strategy>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    max_paths: Option<usize>,
    #[arg(long)]
    probe_noise: Option<f64>,
    #[arg(long)]
    fee_per_hop: Option<Sat>,
    #[arg(long, value_parser = parse_kebab::<pcnlab::planner::BudgetScope>)]
    budget_scope: Option<pcnlab::planner::BudgetScope>,
    #[arg(long)]
    expiry_blocks: Option<u64>,
    #[arg(long)]
    cltv_delta: Option<u64>,
    #[arg(long)]
    calibration_mean: Option<f64>,
    #[arg(long)]
    calibration_max: Option<usize>,
    #[arg(long)]
    calibration_attempts: Option<usize>,
    #[arg(long)]
    honest_node_count: Option<usize>,
    #[arg(long, value_parser = parse_kebab::<pcnlab::netgen::GraphModel>)]
    graph_model: Option<pcnlab::netgen::GraphModel>,
    #[arg(long)]
    edges_per_node: Option<usize>,
    #[arg(long)]
    mean_capacity: Option<Sat>,
    #[arg(long, value_parser = parse_kebab::<pcnlab::netgen::CapacityDistribution>)]
    capacity_distribution: Option<pcnlab::netgen::CapacityDistribution>,
    #[arg(long, value_parser = parse_kebab::<pcnlab::netgen::BalanceSplit>)]
    balance_split: Option<pcnlab::netgen::BalanceSplit>,
    #[arg(long, value_parser = parse_kebab::<pcnlab::netgen::Attachment>)]
    attachment: Option<pcnlab::netgen::Attachment>,
    #[arg(long)]
    channels_per_sybil: Option<usize>,
    #[arg(long)]
    sybil_funding: Option<Sat>,
}

macro_rules! apply {
    ($flags:ident, $target:expr, $($field:ident),+) => {
        $( if let Some(v) = $flags.$field.clone() { $target.$field = v; } )+
    };
}

impl ConfigFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        let f = self;
        apply!(
            f,
            cfg,
            l_max,
            pair_count,
            budgets,
            threshold_grid,
            budget_sweep,
            sweep_threshold,
            iterations
        );
        apply!(
            f,
            cfg,
            seed,
            output_dir,
            max_paths,
            probe_noise,
            fee_per_hop,
            budget_scope,
            expiry_blocks,
            cltv_delta
        );
        apply!(f, cfg, calibration_mean, calibration_max, calibration_attempts);
        if let Some(s) = &f.strategies {
            cfg.strategies = Some(s.clone());
        }
        apply!(
            f,
            cfg.topology,
            honest_node_count,
            graph_model,
            edges_per_node,
            mean_capacity
        );
        apply!(f, cfg.topology, capacity_distribution, balance_split);
        apply!(f, cfg.sybil, attachment, channels_per_sybil, sybil_funding);
    }
}

fn parse_kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    ReportFormat::parse(s).ok_or_else(|| format!("unknown format {s:?} (csv, svg, summary)"))
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn other(e: impl std::fmt::Display) -> Self {
        CliError::Other(e.to_string())
    }
}

fn load_config(path: Option<&Path>, flags: &ConfigFlags) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    flags.apply(&mut cfg);
    if let Ok(w) = std::env::var("PCNLAB_WORKERS") {
        cfg.workers = w
            .parse()
            .map_err(|_| CliError::Other(format!("PCNLAB_WORKERS must be a number, got {w:?}")))?;
    }
    Ok(cfg)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn gen(cfg: &ExperimentConfig, no_sybils: bool, out: Option<&Path>) -> Result<(), CliError> {
    let (graph, pairs) = if no_sybils {
        let topo = TopologyConfig {
            rng_seed: cfg.seed,
            ..cfg.topology.clone()
        };
        (generate_topology(&topo).map_err(HarnessError::from)?, Vec::new())
    } else {
        let fx = build_fixture(cfg, 0)?;
        (fx.graph, fx.pairs)
    };
    let mut doc = graph.to_document();
    doc.attack_pairs = pairs;
    write_out(out, &to_json(&doc))
}

fn load_graph(path: &Path) -> Result<(PcnGraph, Vec<(NodeId, NodeId)>), CliError> {
    let doc: GraphDocument = serde_json::from_str(&fs::read_to_string(path)?).map_err(CliError::other)?;
    let graph = PcnGraph::from_document(&doc).map_err(CliError::other)?;
    if doc.attack_pairs.is_empty() {
        return Err(CliError::Other(format!("{} has no attack_pairs", path.display())));
    }
    Ok((graph, doc.attack_pairs))
}

#[derive(Serialize)]
struct AttackSummary<'a> {
    strategy: Strategy,
    budget_per_attacker: Sat,
    threshold: f64,
    attackers: usize,
    spent: Sat,
    unusable_paths: usize,
    dust_paths: usize,
    totals: &'a pcnlab::metrics::MetricsTotals,
    pcr_histogram: [f64; 4],
}

#[allow(clippy::too_many_arguments)]
fn attack(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    budget: Sat,
    threshold: f64,
    graph_path: Option<&Path>,
    plan_csv: Option<&Path>,
    paths_csv: Option<&Path>,
    metrics_csv: Option<&Path>,
    htlc_log: Option<&Path>,
) -> Result<(), CliError> {
    let (mut graph, pairs) = match graph_path {
        Some(p) => load_graph(p)?,
        None => {
            let fx = build_fixture(cfg, 0)?;
            (fx.graph, fx.pairs)
        }
    };
    let mut senders: Vec<NodeId> = Vec::new();
    for &(s, _) in &pairs {
        if !senders.contains(&s) {
            senders.push(s);
        }
    }
    let mut engine = HtlcEngine::with_cltv_delta(cfg.seed, cfg.cltv_delta);
    let mut rng = pcnlab::harness::substream(cfg.seed, 0, u64::MAX);
    let mut outcome = run_attack_round(
        &mut graph,
        &mut engine,
        &pairs,
        strategy,
        &vec![budget; senders.len()],
        threshold,
        &cfg.round_config(),
        &mut rng,
    )
    .map_err(HarnessError::from)?;
    let report = MetricsReport::build(&outcome.samples(), cfg.l_max, Some(threshold)).map_err(HarnessError::from)?;

    if let Some(p) = plan_csv {
        let plans: Vec<AttackPlan> = outcome.plans().cloned().collect();
        write_plan_csv(fs::File::create(p)?, &plans).map_err(CliError::other)?;
    }
    if let Some(p) = paths_csv {
        let paths: Vec<_> = outcome.attackers.iter().flat_map(|a| a.paths.iter().cloned()).collect();
        write_paths_csv(fs::File::create(p)?, &paths).map_err(CliError::other)?;
    }
    if let Some(p) = metrics_csv {
        write_per_path_csv(fs::File::create(p)?, &report.per_path).map_err(CliError::other)?;
    }
    let release_at = outcome
        .htlcs
        .iter()
        .map(|h| h.expiry)
        .max()
        .unwrap_or(graph.block_height());
    engine.withhold_and_expire(&mut graph, &mut outcome.htlcs, release_at);
    if let Some(p) = htlc_log {
        engine.write_log_csv(fs::File::create(p)?).map_err(CliError::other)?;
    }
    let summary = AttackSummary {
        strategy,
        budget_per_attacker: budget,
        threshold,
        attackers: senders.len(),
        spent: outcome.locked_payment(),
        unusable_paths: outcome.unusable_count(),
        dust_paths: outcome.attackers.iter().map(|a| a.dust_paths).sum(),
        totals: &report.totals,
        pcr_histogram: report.pcr_histogram,
    };
    write_out(None, &to_json(&summary))
}

fn finish_experiment(result: &RunResult, dir: &Path, formats: &[ReportFormat]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("result.json"), result.to_json())?;
    let files = render_report(result, formats, dir)?;
    print!("{}", summary_text(result));
    eprintln!("wrote {} files to {}", files.len() + 1, dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Gen { flags, no_sybils, out } => gen(&load_config(config, &flags)?, no_sybils, out.as_deref()),
        Command::Attack {
            flags,
            strategy,
            budget,
            threshold,
            graph,
            plan_csv,
            paths_csv,
            metrics_csv,
            htlc_log,
        } => attack(
            &load_config(config, &flags)?,
            strategy,
            budget,
            threshold,
            graph.as_deref(),
            plan_csv.as_deref(),
            paths_csv.as_deref(),
            metrics_csv.as_deref(),
            htlc_log.as_deref(),
        ),
        Command::Exp1 { flags, out } => {
            let cfg = load_config(config, &flags)?;
            let result = run_experiment_1(&cfg)?;
            finish_experiment(&result, &cfg.output_dir, &out.format)
        }
        Command::Exp2 { flags, out } => {
            let cfg = load_config(config, &flags)?;
            let result = run_experiment_2(&cfg)?;
            finish_experiment(&result, &cfg.output_dir, &out.format)
        }
        Command::Report {
            input,
            output_dir,
            format,
        } => {
            let result = RunResult::from_json(&fs::read_to_string(&input)?)?;
            let dir = output_dir.unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
            let files = render_report(&result, &format, &dir)?;
            eprintln!("wrote {} files to {}", files.len(), dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
