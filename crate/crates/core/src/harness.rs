//! Experiment runner.
//!
//! Experiment 1 sweeps the required SPCR threshold for a few fixed budgets;
//! Experiment 2 sweeps the budget. Every iteration builds its own calibrated
//! fixture from a seed substream, every grid point runs one attack round on a
//! copy of that fixture, locks, lets the HTLCs expire, and scores the round.
//! Per-iteration results are reduced in iteration order, so the output does
//! not depend on how many workers ran them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{NodeId, PcnGraph, Sat};
use crate::htlc::{FeePolicy, HtlcEngine};
use crate::metrics::{MetricsError, MetricsReport, PCR_BIN_LABELS};
use crate::netgen::{attach_sybils, generate_topology, NetgenError, SybilConfig, TopologyConfig};
use crate::pathfind::{calibrate_path_lengths, CalibrationError, PathLengthDiagnostics};
use crate::planner::{run_attack_round, BudgetScope, PlannerError, RoundConfig, RoundOutcome, Strategy};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("iteration {iteration}: no topology passed path-length calibration in {attempts} attempts")]
    TopologyCalibrationFailed { iteration: usize, attempts: usize },
    #[error(transparent)]
    Netgen(#[from] NetgenError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Experiment {
    /// Threshold sweep at fixed budgets.
    #[serde(rename = "exp1")]
    ThresholdSweep,
    /// Budget sweep.
    #[serde(rename = "exp2")]
    BudgetSweep,
}

impl Experiment {
    fn default_strategies(self) -> Vec<Strategy> {
        match self {
            Experiment::ThresholdSweep => vec![Strategy::MinPay, Strategy::Random, Strategy::General],
            Experiment::BudgetSweep => vec![Strategy::SpcrMax, Strategy::Random, Strategy::General],
        }
    }

    fn required(self) -> Strategy {
        match self {
            Experiment::ThresholdSweep => Strategy::MinPay,
            Experiment::BudgetSweep => Strategy::SpcrMax,
        }
    }
}

/// Everything an experiment run depends on. Deserializes from a TOML file
/// whose top-level keys are the fields below and whose `[topology]` and
/// `[sybil]` sections hold the generator settings; missing keys keep their
/// defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub l_max: usize,
    /// Attacker pairs; overrides `sybil.pair_count`.
    pub pair_count: usize,
    /// Per-attacker budgets for Experiment 1.
    pub budgets: Vec<Sat>,
    pub threshold_grid: Vec<f64>,
    /// Per-attacker budgets for Experiment 2.
    pub budget_sweep: Vec<Sat>,
    /// Threshold MinPay plans toward in Experiment 2, and the reference for
    /// its deviation column.
    pub sweep_threshold: f64,
    pub iterations: usize,
    /// `None` selects the experiment's own set.
    pub strategies: Option<Vec<Strategy>>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub max_paths: usize,
    pub probe_noise: f64,
    pub fee_per_hop: Sat,
    pub budget_scope: BudgetScope,
    pub expiry_blocks: u64,
    pub cltv_delta: u64,
    /// Accept a fixture when the mean shortest Sybil-pair distance is within
    /// one hop of this value...
    pub calibration_mean: f64,
    /// ...and no pair is farther apart than this.
    pub calibration_max: usize,
    pub calibration_attempts: usize,
    /// Worker threads; 0 lets the pool decide, 1 runs serially.
    #[serde(skip)]
    pub workers: usize,
    pub topology: TopologyConfig,
    pub sybil: SybilConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            l_max: 20,
            pair_count: 6,
            budgets: vec![75_000_000, 100_000_000],
            threshold_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            budget_sweep: log_spaced(10_000_000, 200_000_000, 8),
            sweep_threshold: 0.9,
            iterations: 200,
            strategies: None,
            seed: 0,
            output_dir: PathBuf::from("pcnlab-out"),
            max_paths: 100,
            probe_noise: 0.0,
            fee_per_hop: 0,
            budget_scope: BudgetScope::PerAttacker,
            expiry_blocks: 144,
            cltv_delta: 0,
            calibration_mean: 6.0,
            calibration_max: 8,
            calibration_attempts: 100,
            workers: 0,
            topology: TopologyConfig::default(),
            sybil: SybilConfig::default(),
        }
    }
}

/// `n` points from `lo` to `hi` with constant ratio, rounded to whole satoshi.
pub fn log_spaced(lo: Sat, hi: Sat, n: usize) -> Vec<Sat> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp().round() as Sat)
        .collect()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Strategies the experiment runs, in configured order.
    pub fn strategies_for(&self, exp: Experiment) -> Vec<Strategy> {
        self.strategies.clone().unwrap_or_else(|| exp.default_strategies())
    }

    pub fn validate(&self, exp: Experiment) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.l_max == 0 {
            return bad("l_max must be >= 1");
        }
        if self.pair_count == 0 {
            return bad("pair_count must be >= 1");
        }
        if self.calibration_attempts == 0 {
            return bad("calibration_attempts must be >= 1");
        }
        if !(0.0..1.0).contains(&self.probe_noise) {
            return bad("probe_noise must be in [0, 1)");
        }
        let strategies = self.strategies_for(exp);
        if strategies.is_empty() {
            return bad("strategy set is empty");
        }
        if !strategies.contains(&exp.required()) {
            return Err(HarnessError::Config(format!(
                "strategy set must include {}",
                exp.required()
            )));
        }
        match exp {
            Experiment::ThresholdSweep => {
                if self.budgets.is_empty() || self.budgets.contains(&0) {
                    return bad("budgets must be non-empty and positive");
                }
                if self.threshold_grid.is_empty() || self.threshold_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return bad("threshold_grid must be non-empty with values in [0, 1]");
                }
            }
            Experiment::BudgetSweep => {
                if self.budget_sweep.is_empty() || self.budget_sweep.contains(&0) {
                    return bad("budget_sweep must be non-empty and positive");
                }
                if !(0.0..=1.0).contains(&self.sweep_threshold) {
                    return bad("sweep_threshold must be in [0, 1]");
                }
            }
        }
        self.topology.validate()?;
        self.effective_sybil().validate()?;
        Ok(())
    }

    pub fn effective_sybil(&self) -> SybilConfig {
        SybilConfig {
            pair_count: self.pair_count,
            ..self.sybil.clone()
        }
    }

    pub fn round_config(&self) -> RoundConfig {
        RoundConfig {
            l_max: self.l_max,
            max_paths: self.max_paths,
            probe_noise: self.probe_noise,
            budget_scope: self.budget_scope,
            fees: FeePolicy::flat(self.fee_per_hop),
            expiry_blocks: self.expiry_blocks,
            ..RoundConfig::default()
        }
    }

    /// SHA-256 over the canonical serialized config (workers excluded).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

// Substream purposes. The high byte names the purpose, the rest carries grid
// coordinates, so adding a strategy or grid point never shifts other draws.
const PURPOSE_TOPOLOGY: u64 = 1;
const PURPOSE_SYBILS: u64 = 2;
const PURPOSE_PLANNER: u64 = 3;
const PURPOSE_HTLC: u64 = 4;

fn purpose(kind: u64, a: u64, b: u64, c: u64) -> u64 {
    kind << 56 | (a & 0xff) << 48 | (b & 0xffff) << 32 | (c & 0xffff_ffff)
}

/// Independent random stream for one (iteration, purpose).
pub fn substream(root: u64, iteration: u64, purpose: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&root.to_le_bytes());
    seed[8..16].copy_from_slice(&iteration.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(purpose);
    rng
}

/// A calibrated topology with Sybils attached.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub graph: PcnGraph,
    pub pairs: Vec<(NodeId, NodeId)>,
    pub diagnostics: PathLengthDiagnostics,
    /// Generation attempts used, starting at 1.
    pub attempts: usize,
}

/// Every (sender, receiver) combination of the attached pairs.
fn calibration_pairs(pairs: &[(NodeId, NodeId)]) -> Vec<(NodeId, NodeId)> {
    pairs
        .iter()
        .flat_map(|&(s, _)| pairs.iter().map(move |&(_, r)| (s, r)))
        .collect()
}

/// Builds the fixture for one iteration, regenerating until it calibrates.
pub fn build_fixture(cfg: &ExperimentConfig, iteration: usize) -> Result<Fixture, HarnessError> {
    let sybil_cfg = cfg.effective_sybil();
    for attempt in 0..cfg.calibration_attempts {
        let a = attempt as u64;
        let topo = TopologyConfig {
            rng_seed: substream(cfg.seed, iteration as u64, purpose(PURPOSE_TOPOLOGY, 0, 0, a)).gen(),
            ..cfg.topology.clone()
        };
        let mut graph = match generate_topology(&topo) {
            Ok(g) => g,
            Err(NetgenError::Disconnected) => continue,
            Err(e) => return Err(e.into()),
        };
        let mut rng = substream(cfg.seed, iteration as u64, purpose(PURPOSE_SYBILS, 0, 0, a));
        let pairs = attach_sybils(&mut graph, &sybil_cfg, &mut rng)?;
        let diagnostics = match calibrate_path_lengths(&graph, &calibration_pairs(&pairs)) {
            Ok(d) => d,
            Err(CalibrationError::NoPathBetweenPair(..)) => continue,
            Err(e) => return Err(HarnessError::Invariant(e.to_string())),
        };
        if diagnostics.accepts(cfg.calibration_mean, cfg.calibration_max) {
            return Ok(Fixture {
                graph,
                pairs,
                diagnostics,
                attempts: attempt + 1,
            });
        }
    }
    Err(HarnessError::TopologyCalibrationFailed {
        iteration,
        attempts: cfg.calibration_attempts,
    })
}

/// Runs one round on a copy of the fixture, then withholds every HTLC until
/// expiry and checks that all balances come back.
pub fn attack_once(
    cfg: &ExperimentConfig,
    fixture: &Fixture,
    strategy: Strategy,
    budget: Sat,
    threshold: f64,
    rng: &mut ChaCha8Rng,
    engine_seed: u64,
) -> Result<RoundOutcome, HarnessError> {
    let mut graph = fixture.graph.clone();
    let mut engine = HtlcEngine::with_cltv_delta(engine_seed, cfg.cltv_delta);
    let senders = fixture.pairs.len();
    let budgets = vec![budget; senders];
    let round = cfg.round_config();
    let mut outcome = run_attack_round(
        &mut graph,
        &mut engine,
        &fixture.pairs,
        strategy,
        &budgets,
        threshold,
        &round,
        rng,
    )?;
    for plan in outcome.plans() {
        if plan.spent > plan.budget && cfg.budget_scope == BudgetScope::PerAttacker {
            return Err(HarnessError::Invariant(format!("attacker {} overspent", plan.attacker)));
        }
    }
    let release_at = outcome
        .htlcs
        .iter()
        .map(|h| h.expiry)
        .max()
        .unwrap_or(graph.block_height());
    engine.withhold_and_expire(&mut graph, &mut outcome.htlcs, release_at);
    if !graph.check_conservation() || !graph.channels().eq(fixture.graph.channels()) {
        return Err(HarnessError::Invariant("balances not restored after expiry".into()));
    }
    Ok(outcome)
}

/// Scalars recorded for one grid point of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSample {
    pub mean_pcr: f64,
    pub mean_spcr: f64,
    pub mean_deviation: f64,
    pub gamma: f64,
    pub locked_payment: f64,
    pub path_count: f64,
    pub unusable_paths: f64,
    pub dust_paths: f64,
    pub mean_length: f64,
    pub pcr_histogram: [f64; 4],
}

fn score(outcome: &RoundOutcome, l_max: usize, threshold: f64) -> Result<PointSample, HarnessError> {
    let report = MetricsReport::build(&outcome.samples(), l_max, Some(threshold))?;
    Ok(PointSample {
        mean_pcr: report.totals.mean_pcr,
        mean_spcr: report.totals.mean_spcr,
        mean_deviation: report.totals.mean_deviation,
        gamma: report.totals.gamma,
        locked_payment: outcome.locked_payment() as f64,
        path_count: report.totals.path_count as f64,
        unusable_paths: outcome.unusable_count() as f64,
        dust_paths: outcome.attackers.iter().map(|a| a.dust_paths).sum::<usize>() as f64,
        mean_length: report.totals.mean_length,
        pcr_histogram: report.pcr_histogram,
    })
}

/// Grid coordinates of a series point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointKey {
    pub strategy: Strategy,
    pub budget: Sat,
    pub threshold: f64,
}

type IterationRows = Vec<(PointKey, PointSample)>;

fn run_iteration(
    cfg: &ExperimentConfig,
    exp: Experiment,
    iteration: usize,
) -> Result<(IterationRows, Fixture), HarnessError> {
    let fixture = build_fixture(cfg, iteration)?;
    let it = iteration as u64;
    let strategies = cfg.strategies_for(exp);
    let engine_seed = substream(cfg.seed, it, purpose(PURPOSE_HTLC, 0, 0, 0)).gen();
    let mut rows = Vec::new();
    match exp {
        Experiment::ThresholdSweep => {
            for (bi, &budget) in cfg.budgets.iter().enumerate() {
                for &strategy in &strategies {
                    let sid = strategy_id(strategy);
                    if strategy == Strategy::MinPay {
                        for (ti, &t) in cfg.threshold_grid.iter().enumerate() {
                            let mut rng = substream(cfg.seed, it, purpose(PURPOSE_PLANNER, sid, bi as u64, ti as u64));
                            let out = attack_once(cfg, &fixture, strategy, budget, t, &mut rng, engine_seed)?;
                            rows.push((key(strategy, budget, t), score(&out, cfg.l_max, t)?));
                        }
                    } else {
                        // The other planners ignore the threshold; one round
                        // serves every grid point, only the deviation differs.
                        let mut rng = substream(cfg.seed, it, purpose(PURPOSE_PLANNER, sid, bi as u64, 0));
                        let out = attack_once(cfg, &fixture, strategy, budget, 0.0, &mut rng, engine_seed)?;
                        for &t in &cfg.threshold_grid {
                            rows.push((key(strategy, budget, t), score(&out, cfg.l_max, t)?));
                        }
                    }
                }
            }
        }
        Experiment::BudgetSweep => {
            let t = cfg.sweep_threshold;
            for (bi, &budget) in cfg.budget_sweep.iter().enumerate() {
                for &strategy in &strategies {
                    let mut rng = substream(
                        cfg.seed,
                        it,
                        purpose(PURPOSE_PLANNER, strategy_id(strategy), bi as u64, 0),
                    );
                    let out = attack_once(cfg, &fixture, strategy, budget, t, &mut rng, engine_seed)?;
                    rows.push((key(strategy, budget, t), score(&out, cfg.l_max, t)?));
                }
            }
        }
    }
    Ok((rows, fixture))
}

fn strategy_id(s: Strategy) -> u64 {
    Strategy::ALL.iter().position(|&x| x == s).unwrap_or(0) as u64
}

fn key(strategy: Strategy, budget: Sat, threshold: f64) -> PointKey {
    PointKey {
        strategy,
        budget,
        threshold,
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

/// Across-iteration aggregate for one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub strategy: Strategy,
    pub budget: Sat,
    pub threshold: f64,
    pub count: usize,
    pub pcr: Stat,
    pub spcr: Stat,
    pub deviation: Stat,
    pub gamma: Stat,
    pub locked_payment: Stat,
    pub path_count: Stat,
    pub unusable_paths: Stat,
    pub dust_paths: Stat,
    pub mean_length: Stat,
    /// Mean percentage per PCR bin.
    pub pcr_histogram: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub experiment: Experiment,
    pub config_hash: String,
    pub iterations: usize,
    pub points: Vec<SeriesPoint>,
    /// Mean shortest Sybil-pair distance of the accepted fixtures.
    pub fixture_mean_distance: Stat,
    pub fixture_attempts: Stat,
}

impl RunResult {
    pub fn point(&self, strategy: Strategy, budget: Sat, threshold: f64) -> Option<&SeriesPoint> {
        self.points
            .iter()
            .find(|p| p.strategy == strategy && p.budget == budget && (p.threshold - threshold).abs() < 1e-12)
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        let mut out = Vec::new();
        for p in &self.points {
            if !out.contains(&p.strategy) {
                out.push(p.strategy);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }
}

fn run(cfg: &ExperimentConfig, exp: Experiment) -> Result<RunResult, HarnessError> {
    cfg.validate(exp)?;
    let job = |i: usize| run_iteration(cfg, exp, i).map(|(rows, fx)| (rows, fx.diagnostics.mean, fx.attempts as f64));
    let per_iter: Vec<Result<_, HarnessError>> = if cfg.workers == 1 {
        (0..cfg.iterations).map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| (0..cfg.iterations).into_par_iter().map(job).collect())
    };
    let per_iter: Vec<_> = per_iter.into_iter().collect::<Result<_, _>>()?;

    let keys: Vec<PointKey> = per_iter[0].0.iter().map(|(k, _)| k.clone()).collect();
    let mut points = Vec::with_capacity(keys.len());
    for (i, k) in keys.into_iter().enumerate() {
        let samples: Vec<&PointSample> = per_iter.iter().map(|(rows, _, _)| &rows[i].1).collect();
        let stat = |f: &dyn Fn(&PointSample) -> f64| Stat::of(&samples.iter().map(|s| f(s)).collect::<Vec<_>>());
        let mut hist = [0.0; 4];
        for s in &samples {
            for (h, v) in hist.iter_mut().zip(s.pcr_histogram) {
                *h += v;
            }
        }
        for h in hist.iter_mut() {
            *h /= samples.len() as f64;
        }
        points.push(SeriesPoint {
            strategy: k.strategy,
            budget: k.budget,
            threshold: k.threshold,
            count: samples.len(),
            pcr: stat(&|s| s.mean_pcr),
            spcr: stat(&|s| s.mean_spcr),
            deviation: stat(&|s| s.mean_deviation),
            gamma: stat(&|s| s.gamma),
            locked_payment: stat(&|s| s.locked_payment),
            path_count: stat(&|s| s.path_count),
            unusable_paths: stat(&|s| s.unusable_paths),
            dust_paths: stat(&|s| s.dust_paths),
            mean_length: stat(&|s| s.mean_length),
            pcr_histogram: hist,
        });
    }
    Ok(RunResult {
        experiment: exp,
        config_hash: cfg.hash(),
        iterations: cfg.iterations,
        points,
        fixture_mean_distance: Stat::of(&per_iter.iter().map(|r| r.1).collect::<Vec<_>>()),
        fixture_attempts: Stat::of(&per_iter.iter().map(|r| r.2).collect::<Vec<_>>()),
    })
}

/// Experiment 1: every strategy over the threshold grid, per budget.
pub fn run_experiment_1(cfg: &ExperimentConfig) -> Result<RunResult, HarnessError> {
    run(cfg, Experiment::ThresholdSweep)
}

/// Experiment 2: every strategy over the budget sweep.
pub fn run_experiment_2(cfg: &ExperimentConfig) -> Result<RunResult, HarnessError> {
    run(cfg, Experiment::BudgetSweep)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    SvgCharts,
    SummaryText,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::SvgCharts, ReportFormat::SummaryText];

    pub fn parse(s: &str) -> Option<ReportFormat> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "svg" | "svg-charts" => Some(ReportFormat::SvgCharts),
            "summary" | "summary-text" => Some(ReportFormat::SummaryText),
            _ => None,
        }
    }
}

struct Series {
    name: &'static str,
    y_label: &'static str,
    value: fn(&SeriesPoint) -> Stat,
}

fn series_for(exp: Experiment) -> Vec<Series> {
    match exp {
        Experiment::ThresholdSweep => vec![
            Series {
                name: "pcr-vs-threshold",
                y_label: "mean PCR",
                value: |p| p.pcr,
            },
            Series {
                name: "spcr-deviation-vs-threshold",
                y_label: "mean SPCR deviation",
                value: |p| p.deviation,
            },
            Series {
                name: "locked-payment-vs-threshold",
                y_label: "locked payment (sat)",
                value: |p| p.locked_payment,
            },
            Series {
                name: "gamma-vs-threshold",
                y_label: "gamma",
                value: |p| p.gamma,
            },
        ],
        Experiment::BudgetSweep => vec![
            Series {
                name: "pcr-vs-budget",
                y_label: "mean PCR",
                value: |p| p.pcr,
            },
            Series {
                name: "spcr-vs-budget",
                y_label: "mean SPCR",
                value: |p| p.spcr,
            },
            Series {
                name: "locked-payment-vs-budget",
                y_label: "locked payment (sat)",
                value: |p| p.locked_payment,
            },
            Series {
                name: "gamma-vs-budget",
                y_label: "gamma",
                value: |p| p.gamma,
            },
        ],
    }
}

/// Groups points into chart lines: one line per strategy (and per budget in
/// the threshold sweep), x being the swept quantity.
fn lines(result: &RunResult) -> Vec<(String, Vec<&SeriesPoint>)> {
    let mut groups: BTreeMap<(usize, Sat), Vec<&SeriesPoint>> = BTreeMap::new();
    let order = result.strategies();
    for p in &result.points {
        let si = order.iter().position(|&s| s == p.strategy).unwrap_or(0);
        let b = match result.experiment {
            Experiment::ThresholdSweep => p.budget,
            Experiment::BudgetSweep => 0,
        };
        groups.entry((si, b)).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|((si, b), pts)| {
            let label = match result.experiment {
                Experiment::ThresholdSweep => format!("{} B={}", order[si], b),
                Experiment::BudgetSweep => order[si].to_string(),
            };
            (label, pts)
        })
        .collect()
}

fn x_of(exp: Experiment, p: &SeriesPoint) -> f64 {
    match exp {
        Experiment::ThresholdSweep => p.threshold,
        Experiment::BudgetSweep => p.budget as f64,
    }
}

/// Writes the requested report files into `dir`; returns their paths.
pub fn render_report(result: &RunResult, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if result.points.is_empty() {
        return Err(HarnessError::Config("result has no points".into()));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let exp = result.experiment;
    let x_label = match exp {
        Experiment::ThresholdSweep => "SPCR threshold",
        Experiment::BudgetSweep => "budget per attacker (sat)",
    };
    let log_x = exp == Experiment::BudgetSweep;
    for f in formats {
        match f {
            ReportFormat::Csv => {
                for s in series_for(exp) {
                    let path = dir.join(format!("{}.csv", s.name));
                    let mut w = csv::Writer::from_path(&path)?;
                    w.write_record(["strategy", "budget", "threshold", "mean", "std"])?;
                    for p in &result.points {
                        let v = (s.value)(p);
                        w.write_record([
                            p.strategy.to_string(),
                            p.budget.to_string(),
                            p.threshold.to_string(),
                            v.mean.to_string(),
                            v.std.to_string(),
                        ])?;
                    }
                    w.flush()?;
                    written.push(path);
                }
                let path = dir.join("pcr-histogram.csv");
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["strategy", "budget", "threshold", "bin", "percent"])?;
                for p in &result.points {
                    for (label, v) in PCR_BIN_LABELS.iter().zip(p.pcr_histogram) {
                        w.write_record([
                            p.strategy.to_string(),
                            p.budget.to_string(),
                            p.threshold.to_string(),
                            label.to_string(),
                            v.to_string(),
                        ])?;
                    }
                }
                w.flush()?;
                written.push(path);
                let path = dir.join("points.csv");
                write_points_csv(&path, result)?;
                written.push(path);
            }
            ReportFormat::SvgCharts => {
                for s in series_for(exp) {
                    let data: Vec<(String, Vec<(f64, f64)>)> = lines(result)
                        .into_iter()
                        .map(|(label, pts)| (label, pts.iter().map(|p| (x_of(exp, p), (s.value)(p).mean)).collect()))
                        .collect();
                    let path = dir.join(format!("{}.svg", s.name));
                    fs::write(&path, svg::line_chart(s.name, x_label, s.y_label, &data, log_x))?;
                    written.push(path);
                }
                for (label, pts) in lines(result) {
                    let groups: Vec<String> = pts
                        .iter()
                        .map(|p| match exp {
                            Experiment::ThresholdSweep => format!("{}", p.threshold),
                            Experiment::BudgetSweep => format!("{:.2e}", p.budget as f64),
                        })
                        .collect();
                    let values: Vec<[f64; 4]> = pts.iter().map(|p| p.pcr_histogram).collect();
                    let slug: String = label
                        .chars()
                        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' })
                        .collect();
                    let path = dir.join(format!("pcr-histogram-{slug}.svg"));
                    let title = format!("PCR distribution, {label}");
                    fs::write(
                        &path,
                        svg::grouped_bars(&title, x_label, &groups, &PCR_BIN_LABELS, &values),
                    )?;
                    written.push(path);
                }
            }
            ReportFormat::SummaryText => {
                let path = dir.join("summary.txt");
                fs::write(&path, summary_text(result))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

fn write_points_csv(path: &Path, result: &RunResult) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strategy",
        "budget",
        "threshold",
        "iterations",
        "pcr_mean",
        "pcr_std",
        "spcr_mean",
        "spcr_std",
        "deviation_mean",
        "deviation_std",
        "gamma_mean",
        "gamma_std",
        "locked_payment_mean",
        "locked_payment_std",
        "path_count_mean",
        "unusable_paths_mean",
        "dust_paths_mean",
        "mean_length",
    ])?;
    for p in &result.points {
        w.write_record([
            p.strategy.to_string(),
            p.budget.to_string(),
            p.threshold.to_string(),
            p.count.to_string(),
            p.pcr.mean.to_string(),
            p.pcr.std.to_string(),
            p.spcr.mean.to_string(),
            p.spcr.std.to_string(),
            p.deviation.mean.to_string(),
            p.deviation.std.to_string(),
            p.gamma.mean.to_string(),
            p.gamma.std.to_string(),
            p.locked_payment.mean.to_string(),
            p.locked_payment.std.to_string(),
            p.path_count.mean.to_string(),
            p.unusable_paths.mean.to_string(),
            p.dust_paths.mean.to_string(),
            p.mean_length.mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-point means ± standard deviations and a gamma ranking.
pub fn summary_text(result: &RunResult) -> String {
    let mut s = String::new();
    let name = match result.experiment {
        Experiment::ThresholdSweep => "experiment 1 (threshold sweep)",
        Experiment::BudgetSweep => "experiment 2 (budget sweep)",
    };
    let _ = writeln!(s, "{name}");
    let _ = writeln!(s, "config {}", result.config_hash);
    let _ = writeln!(s, "iterations {}", result.iterations);
    let _ = writeln!(
        s,
        "fixture mean shortest distance {:.3} ± {:.3}, attempts {:.2} ± {:.2}",
        result.fixture_mean_distance.mean,
        result.fixture_mean_distance.std,
        result.fixture_attempts.mean,
        result.fixture_attempts.std
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<9} {:>11} {:>9} {:>17} {:>17} {:>17} {:>23} {:>23}",
        "strategy", "budget", "threshold", "pcr", "spcr", "deviation", "locked", "gamma"
    );
    for p in &result.points {
        let _ = writeln!(
            s,
            "{:<9} {:>11} {:>9} {:>17} {:>17} {:>17} {:>23} {:>23}",
            p.strategy.to_string(),
            p.budget,
            p.threshold,
            pm(p.pcr, 4),
            pm(p.spcr, 4),
            pm(p.deviation, 4),
            pm_e(p.locked_payment),
            pm_e(p.gamma),
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "gamma by strategy (mean over grid points, ascending)");
    for (strategy, g) in gamma_ranking(result) {
        let _ = writeln!(s, "  {:<9} {:.6e}", strategy.to_string(), g);
    }
    s
}

/// Strategies ordered by their mean gamma over all grid points, ascending.
pub fn gamma_ranking(result: &RunResult) -> Vec<(Strategy, f64)> {
    let mut out: Vec<(Strategy, f64)> = result
        .strategies()
        .into_iter()
        .map(|st| {
            let g: Vec<f64> = result
                .points
                .iter()
                .filter(|p| p.strategy == st)
                .map(|p| p.gamma.mean)
                .collect();
            (st, g.iter().sum::<f64>() / g.len() as f64)
        })
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out
}

fn pm(v: Stat, digits: usize) -> String {
    format!("{:.*}±{:.*}", digits, v.mean, digits, v.std)
}

fn pm_e(v: Stat) -> String {
    format!("{:.3e}±{:.2e}", v.mean, v.std)
}

mod svg {
    use std::fmt::Write as _;

    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 190.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 60.0;
    const PALETTE: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
    ];

    fn esc(s: &str) -> String {
        s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
    }

    fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            esc(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            H - 15.0,
            esc(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            (TOP + H - BOTTOM) / 2.0,
            esc(y_label)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            W - LEFT - RIGHT,
            H - TOP - BOTTOM
        );
    }

    fn fmt_tick(v: f64) -> String {
        if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
            format!("{v:.1e}")
        } else {
            format!("{:.2}", v)
        }
    }

    pub fn line_chart(
        title: &str,
        x_label: &str,
        y_label: &str,
        lines: &[(String, Vec<(f64, f64)>)],
        log_x: bool,
    ) -> String {
        let tx = |x: f64| if log_x { x.max(f64::MIN_POSITIVE).log10() } else { x };
        let pts = lines.iter().flat_map(|(_, p)| p.iter());
        let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(tx(x));
            x1 = x1.max(tx(x));
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        let y0 = 0.0;
        if !y1.is_finite() || y1 <= y0 {
            y1 = 1.0;
        }
        y1 *= 1.05;
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut out = String::new();
        header(&mut out, title, x_label, y_label);
        for i in 0..=5 {
            let y = y0 + (y1 - y0) * i as f64 / 5.0;
            let py = sy(y);
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/>"##,
                LEFT + pw
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                py + 4.0,
                fmt_tick(y)
            );
        }
        for i in 0..=5 {
            let t = x0 + (x1 - x0) * i as f64 / 5.0;
            let x = if log_x { 10f64.powf(t) } else { t };
            let px = LEFT + (t - x0) / (x1 - x0) * pw;
            let _ = writeln!(
                out,
                r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                TOP + ph + 18.0,
                fmt_tick(x)
            );
        }
        for (i, (label, points)) in lines.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let d: Vec<String> = points
                .iter()
                .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                d.join(" ")
            );
            for &(x, y) in points {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                    sx(x),
                    sy(y)
                );
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = W - RIGHT + 12.0;
            let _ = writeln!(
                out,
                r#"<rect x="{lx}" y="{:.1}" width="12" height="12" fill="{color}"/>"#,
                ly - 10.0
            );
            let _ = writeln!(out, r#"<text x="{}" y="{ly:.1}">{}</text>"#, lx + 18.0, esc(label));
        }
        out.push_str("</svg>\n");
        out
    }

    pub fn grouped_bars(
        title: &str,
        x_label: &str,
        groups: &[String],
        bins: &[&str; 4],
        values: &[[f64; 4]],
    ) -> String {
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let y1 = 100.0;
        let sy = |y: f64| TOP + ph - y / y1 * ph;
        let mut out = String::new();
        header(&mut out, title, x_label, "paths (%)");
        for i in 0..=5 {
            let y = y1 * i as f64 / 5.0;
            let py = sy(y);
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/>"##,
                LEFT + pw
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.0}</text>"#,
                LEFT - 6.0,
                py + 4.0
            );
        }
        let n = groups.len().max(1) as f64;
        let gw = pw / n;
        let bw = gw * 0.8 / 4.0;
        for (g, (name, vals)) in groups.iter().zip(values).enumerate() {
            let gx = LEFT + gw * g as f64 + gw * 0.1;
            for (b, v) in vals.iter().enumerate() {
                let x = gx + bw * b as f64;
                let _ = writeln!(
                    out,
                    r#"<rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="{}"/>"#,
                    sy(*v),
                    TOP + ph - sy(*v),
                    PALETTE[b]
                );
            }
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                gx + gw * 0.4,
                TOP + ph + 18.0,
                esc(name)
            );
        }
        for (b, label) in bins.iter().enumerate() {
            let ly = TOP + 10.0 + 18.0 * b as f64;
            let lx = W - RIGHT + 12.0;
            let _ = writeln!(
                out,
                r#"<rect x="{lx}" y="{:.1}" width="12" height="12" fill="{}"/>"#,
                ly - 10.0,
                PALETTE[b]
            );
            let _ = writeln!(out, r#"<text x="{}" y="{ly:.1}">PCR {}</text>"#, lx + 18.0, label);
        }
        out.push_str("</svg>\n");
        out
    }
}
