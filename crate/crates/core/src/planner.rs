//! Attack allocation planners and the sequential per-attacker attack round.
//!
//! Every path `j` has a bottleneck `m_j`, a length `l_j` and, for an
//! allocation `a_j`, an SPCR of `k_j * a_j` with `k_j = l_j / (l_max * m_j)`.
//! Both optimizing planners reduce to fractional knapsacks over `k_j`:
//!
//! * SPCR-Max fills paths to their bottleneck in decreasing `k_j` order until
//!   the budget runs out.
//! * MinPay first minimizes the total threshold shortfall
//!   `sum_j max(threshold - k_j a_j, 0)` and then, at that shortfall, the total
//!   payment. Allocation beyond `threshold / k_j` never reduces shortfall, so
//!   each path is filled up to `min(m_j, threshold / k_j)` in decreasing `k_j`
//!   order.
//!
//! The `*_lp` variants solve the same programs with the simplex solver and
//! serve as an independent route.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{NodeId, PcnGraph, Sat};
use crate::htlc::{FeePolicy, Htlc, HtlcEngine, LockError};
use crate::lp::{solve_lp, LpError, LpProblem, LpStatus, Relation, Sense};
use crate::metrics::{spcr_deviation, AllocationView, PathSample};
use crate::pathfind::{find_paths_to_many, probe, PathError, PathRecord, DEFAULT_L_MAX, DEFAULT_MAX_PATHS};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[serde(rename = "minpay")]
    MinPay,
    SpcrMax,
    Random,
    General,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::MinPay, Strategy::SpcrMax, Strategy::Random, Strategy::General];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::MinPay => "minpay",
            Strategy::SpcrMax => "spcr-max",
            Strategy::Random => "random",
            Strategy::General => "general",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|st| st.name() == s)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("path {0} does not start at the attacker")]
    ForeignPath(usize),
    #[error("path {0} is longer than l_max")]
    PathTooLong(usize),
    #[error("linear program: {0}")]
    Lp(#[from] LpError),
    #[error("linear program reported infeasible")]
    Infeasible,
    #[error("budgets ({budgets}) do not match attackers ({attackers})")]
    BudgetCount { budgets: usize, attackers: usize },
    #[error(transparent)]
    Path(#[from] PathError),
}

pub struct PlannerInput<'a> {
    pub attacker: NodeId,
    pub budget: Sat,
    pub paths: &'a [PathRecord],
    pub l_max: usize,
    /// Required SPCR; only MinPay plans toward it, every plan reports its
    /// deviation from it.
    pub threshold: f64,
}

impl PlannerInput<'_> {
    fn validate(&self) -> Result<(), PlannerError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(PlannerError::InvalidThreshold(self.threshold));
        }
        for (i, p) in self.paths.iter().enumerate() {
            if p.source != self.attacker {
                return Err(PlannerError::ForeignPath(i));
            }
            if p.length() > self.l_max || p.length() == 0 {
                return Err(PlannerError::PathTooLong(i));
            }
        }
        Ok(())
    }

    fn spcr_of(&self, j: usize, alpha: Sat) -> f64 {
        let p = &self.paths[j];
        if p.bottleneck == 0 {
            return 0.0;
        }
        let pcr = if alpha >= p.bottleneck {
            1.0
        } else {
            alpha as f64 / p.bottleneck as f64
        };
        p.length() as f64 / self.l_max as f64 * pcr
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationStatus {
    /// Applied as planned (including planned zero allocations).
    Applied,
    /// Reduced at apply time to the residual bottleneck or budget.
    Clamped,
    /// Nothing could be locked on this path at apply time.
    Unusable(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathAllocation {
    /// Index into the planner input's path list.
    pub path_index: usize,
    pub dest: NodeId,
    pub length: usize,
    pub bottleneck: Sat,
    pub planned_alpha: Sat,
    pub applied_alpha: Sat,
    /// SPCR and deviation of the planned allocation against the probed bottleneck.
    pub spcr: f64,
    pub deviation: f64,
    /// Directed balances seen when the allocation was applied, before locking.
    pub apply_balances: Vec<Sat>,
    pub status: AllocationStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackPlan {
    pub attacker: NodeId,
    pub budget: Sat,
    /// Allocations in planner output order; apply order follows it.
    pub allocations: Vec<PathAllocation>,
    pub spent: Sat,
    pub residual_budget: Sat,
}

impl AttackPlan {
    fn from_alphas(input: &PlannerInput<'_>, order: &[usize], alphas: &[Sat]) -> AttackPlan {
        let allocations: Vec<PathAllocation> = order
            .iter()
            .map(|&j| {
                let p = &input.paths[j];
                let a = alphas[j];
                let spcr = input.spcr_of(j, a);
                PathAllocation {
                    path_index: j,
                    dest: p.dest,
                    length: p.length(),
                    bottleneck: p.bottleneck,
                    planned_alpha: a,
                    applied_alpha: a,
                    spcr,
                    deviation: spcr_deviation(spcr, input.threshold),
                    apply_balances: p.balances.clone(),
                    status: AllocationStatus::Applied,
                }
            })
            .collect();
        let spent: Sat = alphas.iter().sum();
        AttackPlan {
            attacker: input.attacker,
            budget: input.budget,
            allocations,
            spent,
            residual_budget: input.budget - spent,
        }
    }

    /// Planned allocation per input path index.
    pub fn planned(&self) -> BTreeMap<usize, Sat> {
        self.allocations
            .iter()
            .map(|a| (a.path_index, a.planned_alpha))
            .collect()
    }

    pub fn total_planned(&self) -> Sat {
        self.allocations.iter().map(|a| a.planned_alpha).sum()
    }

    pub fn total_spcr(&self) -> f64 {
        self.allocations.iter().map(|a| a.spcr).sum()
    }

    pub fn total_deviation(&self) -> f64 {
        self.allocations.iter().map(|a| a.deviation).sum()
    }
}

/// Path order by decreasing SPCR gain per satoshi, `l_j / m_j`, compared
/// exactly; ties go to the longer path, then the lower index. Paths with a
/// zero bottleneck come last.
fn density_order(paths: &[PathRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&paths[a], &paths[b]);
        match (pa.bottleneck, pb.bottleneck) {
            (0, 0) => return a.cmp(&b),
            (0, _) => return Ordering::Greater,
            (_, 0) => return Ordering::Less,
            _ => {}
        }
        let lhs = pa.length() as u128 * pb.bottleneck as u128;
        let rhs = pb.length() as u128 * pa.bottleneck as u128;
        rhs.cmp(&lhs).then(pb.length().cmp(&pa.length())).then(a.cmp(&b))
    });
    order
}

fn fill(order: &[usize], caps: &[Sat], budget: Sat) -> Vec<Sat> {
    let mut alphas = vec![0; caps.len()];
    let mut remaining = budget;
    for &j in order {
        let a = caps[j].min(remaining);
        alphas[j] = a;
        remaining -= a;
    }
    alphas
}

/// Smallest payment that reaches `threshold` on each path, capped at the
/// bottleneck and floored to whole satoshi.
pub fn minpay_target(path: &PathRecord, l_max: usize, threshold: f64) -> Sat {
    let exact = threshold * l_max as f64 * path.bottleneck as f64 / path.length() as f64;
    // absorb representation error such as 3.2e6 computing as 3199999.9999
    let floored = (exact + exact * 1e-12).floor();
    (floored.max(0.0) as Sat).min(path.bottleneck)
}

pub fn plan_minpay(input: &PlannerInput<'_>) -> Result<AttackPlan, PlannerError> {
    input.validate()?;
    let order = density_order(input.paths);
    let caps: Vec<Sat> = input
        .paths
        .iter()
        .map(|p| minpay_target(p, input.l_max, input.threshold))
        .collect();
    let alphas = fill(&order, &caps, input.budget);
    Ok(AttackPlan::from_alphas(input, &order, &alphas))
}

pub fn plan_spcr_max(input: &PlannerInput<'_>) -> Result<AttackPlan, PlannerError> {
    input.validate()?;
    let order = density_order(input.paths);
    let caps: Vec<Sat> = input.paths.iter().map(|p| p.bottleneck).collect();
    let alphas = fill(&order, &caps, input.budget);
    Ok(AttackPlan::from_alphas(input, &order, &alphas))
}

/// Random baseline: an effective budget drawn uniformly from `(0, B]`, then
/// per path in shuffled order a payment uniform in `[0, min(m_j, remaining)]`.
pub fn plan_random<R: Rng + ?Sized>(input: &PlannerInput<'_>, rng: &mut R) -> Result<AttackPlan, PlannerError> {
    input.validate()?;
    let mut order: Vec<usize> = (0..input.paths.len()).collect();
    order.shuffle(rng);
    let mut remaining = if input.budget == 0 {
        0
    } else {
        rng.gen_range(1..=input.budget)
    };
    let mut alphas = vec![0; input.paths.len()];
    for &j in &order {
        let cap = input.paths[j].bottleneck.min(remaining);
        let a = rng.gen_range(0..=cap);
        alphas[j] = a;
        remaining -= a;
    }
    Ok(AttackPlan::from_alphas(input, &order, &alphas))
}

/// General greedy baseline: largest bottleneck first, each path filled to
/// its bottleneck until the budget is consumed.
pub fn plan_general(input: &PlannerInput<'_>) -> Result<AttackPlan, PlannerError> {
    input.validate()?;
    let mut order: Vec<usize> = (0..input.paths.len()).collect();
    order.sort_by_key(|&j| (std::cmp::Reverse(input.paths[j].bottleneck), j));
    let caps: Vec<Sat> = input.paths.iter().map(|p| p.bottleneck).collect();
    let alphas = fill(&order, &caps, input.budget);
    Ok(AttackPlan::from_alphas(input, &order, &alphas))
}

/// Continuous optimum of a planning program, in satoshi per path.
#[derive(Clone, Debug, PartialEq)]
pub struct LpAllocation {
    pub alphas: Vec<f64>,
    pub shortfall: f64,
    pub spcr_total: f64,
}

impl LpAllocation {
    pub fn floored(&self) -> Vec<Sat> {
        self.alphas.iter().map(|a| a.max(0.0).floor() as Sat).collect()
    }
}

/// Variables are per-path PCRs `y_j in [0, 1]` (so `a_j = m_j y_j`), which
/// keeps the tableau well scaled regardless of satoshi magnitudes.
fn budget_row(input: &PlannerInput<'_>, usable: &[usize], extra: usize) -> (Vec<f64>, f64) {
    let total: f64 = usable.iter().map(|&j| input.paths[j].bottleneck as f64).sum();
    let scale = total.max(1.0);
    let mut row = vec![0.0; usable.len() + extra];
    for (v, &j) in usable.iter().enumerate() {
        row[v] = input.paths[j].bottleneck as f64 / scale;
    }
    (row, input.budget as f64 / scale)
}

fn usable_paths(input: &PlannerInput<'_>) -> Vec<usize> {
    (0..input.paths.len())
        .filter(|&j| input.paths[j].bottleneck > 0)
        .collect()
}

/// SPCR-Max through the simplex solver.
pub fn plan_spcr_max_lp(input: &PlannerInput<'_>) -> Result<LpAllocation, PlannerError> {
    input.validate()?;
    let usable = usable_paths(input);
    let n = usable.len();
    let weights: Vec<f64> = usable
        .iter()
        .map(|&j| input.paths[j].length() as f64 / input.l_max as f64)
        .collect();
    let mut lp = LpProblem::new(Sense::Maximize, weights);
    for v in 0..n {
        lp.bound(v, 0.0, Some(1.0));
    }
    let (row, rhs) = budget_row(input, &usable, 0);
    lp.constrain(row, Relation::LessEq, rhs);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(PlannerError::Infeasible);
    }
    let mut alphas = vec![0.0; input.paths.len()];
    for (v, &j) in usable.iter().enumerate() {
        alphas[j] = sol.values[v].clamp(0.0, 1.0) * input.paths[j].bottleneck as f64;
    }
    Ok(LpAllocation {
        alphas,
        shortfall: 0.0,
        spcr_total: sol.objective,
    })
}

/// MinPay as two lexicographic simplex solves: minimum total shortfall,
/// then minimum total payment at that shortfall.
pub fn plan_minpay_lp(input: &PlannerInput<'_>) -> Result<LpAllocation, PlannerError> {
    input.validate()?;
    let usable = usable_paths(input);
    let n = usable.len();
    let t = input.threshold;
    // variables: y_0..y_{n-1}, s_0..s_{n-1}
    let mut phase_a = LpProblem::new(
        Sense::Minimize,
        (0..2 * n).map(|v| if v < n { 0.0 } else { 1.0 }).collect(),
    );
    for v in 0..n {
        phase_a.bound(v, 0.0, Some(1.0));
    }
    for (v, &j) in usable.iter().enumerate() {
        let mut row = vec![0.0; 2 * n];
        row[v] = input.paths[j].length() as f64 / input.l_max as f64;
        row[n + v] = 1.0;
        phase_a.constrain(row, Relation::GreaterEq, t);
    }
    let (row, rhs) = budget_row(input, &usable, n);
    phase_a.constrain(row, Relation::LessEq, rhs);
    let a = solve_lp(&phase_a)?;
    if a.status != LpStatus::Optimal {
        return Err(PlannerError::Infeasible);
    }
    let shortfall = a.objective;

    let mut phase_b = phase_a.clone();
    let scale: f64 = usable
        .iter()
        .map(|&j| input.paths[j].bottleneck as f64)
        .sum::<f64>()
        .max(1.0);
    phase_b.objective = (0..2 * n)
        .map(|v| {
            if v < n {
                input.paths[usable[v]].bottleneck as f64 / scale
            } else {
                0.0
            }
        })
        .collect();
    let cap = shortfall * (1.0 + 1e-9) + 1e-9;
    phase_b.constrain(
        (0..2 * n).map(|v| if v < n { 0.0 } else { 1.0 }).collect(),
        Relation::LessEq,
        cap,
    );
    let b = solve_lp(&phase_b)?;
    if b.status != LpStatus::Optimal {
        return Err(PlannerError::Infeasible);
    }
    let mut alphas = vec![0.0; input.paths.len()];
    let mut spcr_total = 0.0;
    for (v, &j) in usable.iter().enumerate() {
        let y = b.values[v].clamp(0.0, 1.0);
        alphas[j] = y * input.paths[j].bottleneck as f64;
        spcr_total += y * input.paths[j].length() as f64 / input.l_max as f64;
    }
    Ok(LpAllocation {
        alphas,
        shortfall,
        spcr_total,
    })
}

/// Total threshold shortfall of an allocation.
pub fn shortfall(input: &PlannerInput<'_>, alphas: &[Sat]) -> f64 {
    alphas
        .iter()
        .enumerate()
        .map(|(j, &a)| spcr_deviation(input.spcr_of(j, a), input.threshold))
        .sum()
}

pub fn plan<R: Rng + ?Sized>(
    strategy: Strategy,
    input: &PlannerInput<'_>,
    rng: &mut R,
) -> Result<AttackPlan, PlannerError> {
    match strategy {
        Strategy::MinPay => plan_minpay(input),
        Strategy::SpcrMax => plan_spcr_max(input),
        Strategy::Random => plan_random(input, rng),
        Strategy::General => plan_general(input),
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetScope {
    /// One budget per sender across all its destinations.
    PerAttacker,
    /// A separate budget for every (sender, destination) pair.
    PerPair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundConfig {
    pub l_max: usize,
    pub max_paths: usize,
    pub probe_noise: f64,
    /// Enumerate and probe against the current graph before each attacker
    /// plans. When off, every attacker plans on the state at round start.
    pub reprobe: bool,
    pub budget_scope: BudgetScope,
    pub fees: FeePolicy,
    /// HTLC expiry, in blocks after the current height.
    pub expiry_blocks: u64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            l_max: DEFAULT_L_MAX,
            max_paths: DEFAULT_MAX_PATHS,
            probe_noise: 0.0,
            reprobe: true,
            budget_scope: BudgetScope::PerAttacker,
            fees: FeePolicy::none(),
            expiry_blocks: 144,
        }
    }
}

/// One attacker's outcome within a round.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackerOutcome {
    pub plan: AttackPlan,
    /// The paths the plan's `path_index` values refer to.
    pub paths: Vec<PathRecord>,
    /// Discovered paths dropped before planning because some hop could not
    /// carry even a minimum-size HTLC.
    pub dust_paths: usize,
}

#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub attackers: Vec<AttackerOutcome>,
    pub htlcs: Vec<Htlc>,
    /// Flat fee each hop deducted from the forwarded amount.
    pub fee_per_hop: Sat,
}

impl RoundOutcome {
    pub fn plans(&self) -> impl Iterator<Item = &AttackPlan> {
        self.attackers.iter().map(|a| &a.plan)
    }

    /// Metric inputs for every allocation that met a usable path: the applied
    /// amount against the balances the path had when it was locked. Paths
    /// left without capacity by earlier allocations, or refused by the HTLC
    /// engine, are not included; see [`RoundOutcome::unusable_count`].
    ///
    /// With per-hop fees, hop `i` forwards `alpha - i * fee`, so its balance
    /// is reported as `b_i + i * fee`: the sender amount that would exhaust it.
    pub fn samples(&self) -> Vec<PathSample> {
        let mut out = Vec::new();
        for plan in self.plans() {
            for a in &plan.allocations {
                if matches!(a.status, AllocationStatus::Unusable(_)) || a.apply_balances.contains(&0) {
                    continue;
                }
                out.push(PathSample {
                    attacker: plan.attacker,
                    pair: (plan.attacker, a.dest),
                    path_index: a.path_index,
                    view: AllocationView {
                        alpha: a.applied_alpha,
                        length: a.length,
                        per_channel_balances: a
                            .apply_balances
                            .iter()
                            .enumerate()
                            .map(|(i, &b)| b.saturating_add(self.fee_per_hop.saturating_mul(i as Sat)))
                            .collect(),
                    },
                });
            }
        }
        out
    }

    /// Allocations excluded from [`RoundOutcome::samples`].
    pub fn unusable_count(&self) -> usize {
        self.plans()
            .flat_map(|p| p.allocations.iter())
            .filter(|a| matches!(a.status, AllocationStatus::Unusable(_)) || a.apply_balances.contains(&0))
            .count()
    }

    pub fn locked_payment(&self) -> Sat {
        self.plans().map(|p| p.spent).sum()
    }
}

/// Whether every hop of `path` can forward at least its channel's minimum HTLC.
fn carries_min_htlc(graph: &PcnGraph, path: &PathRecord) -> bool {
    path.hops.windows(2).all(
        |w| match (graph.channel(w[0], w[1]), graph.directed_balance(w[0], w[1])) {
            (Some(c), Ok(b)) => b >= c.htlc_minimum.max(1),
            _ => false,
        },
    )
}

/// Largest amount the path can carry right now given per-hop fees.
fn residual_capacity(graph: &PcnGraph, hops: &[NodeId], fees: FeePolicy) -> Option<(Sat, Vec<Sat>)> {
    let mut cap = Sat::MAX;
    let mut balances = Vec::with_capacity(hops.len().saturating_sub(1));
    for (i, w) in hops.windows(2).enumerate() {
        let b = graph.directed_balance(w[0], w[1]).ok()?;
        balances.push(b);
        cap = cap.min(b.saturating_add(fees.flat_fee_per_hop.saturating_mul(i as Sat)));
    }
    Some((cap, balances))
}

/// Applies a plan: walks allocations in order, clamps each to the residual
/// path capacity and remaining budget, and locks it with HTLCs.
fn apply_plan(
    graph: &mut PcnGraph,
    engine: &mut HtlcEngine,
    plan: &mut AttackPlan,
    paths: &[PathRecord],
    cfg: &RoundConfig,
    htlcs: &mut Vec<Htlc>,
) {
    let expiry = graph.block_height() + cfg.expiry_blocks;
    let mut remaining = plan.budget;
    for alloc in plan.allocations.iter_mut() {
        let path = &paths[alloc.path_index];
        let Some((cap, balances)) = residual_capacity(graph, &path.hops, cfg.fees) else {
            alloc.applied_alpha = 0;
            alloc.apply_balances = Vec::new();
            if alloc.planned_alpha > 0 {
                alloc.status = AllocationStatus::Unusable("broken path".into());
            }
            continue;
        };
        alloc.apply_balances = balances;
        if alloc.planned_alpha == 0 {
            alloc.applied_alpha = 0;
            alloc.status = AllocationStatus::Applied;
            continue;
        }
        let amount = alloc.planned_alpha.min(cap).min(remaining);
        if amount == 0 {
            alloc.applied_alpha = 0;
            alloc.status = AllocationStatus::Unusable("no residual capacity".into());
            continue;
        }
        match engine.lock_path(graph, &path.hops, amount, expiry, cfg.fees) {
            Ok(created) => {
                htlcs.extend(created);
                alloc.applied_alpha = amount;
                remaining -= amount;
                alloc.status = if amount < alloc.planned_alpha {
                    AllocationStatus::Clamped
                } else {
                    AllocationStatus::Applied
                };
            }
            Err(e) => {
                alloc.applied_alpha = 0;
                alloc.status = AllocationStatus::Unusable(lock_reason(&e));
            }
        }
    }
    plan.spent = plan.budget - remaining;
    plan.residual_budget = remaining;
}

fn lock_reason(e: &LockError) -> String {
    match e {
        LockError::BelowDust { .. } => "below dust".into(),
        LockError::SlotsExhausted { .. } => "slots exhausted".into(),
        LockError::InsufficientBalance { .. } => "insufficient balance".into(),
        other => other.to_string(),
    }
}

/// Runs one attack round (every sender plans and locks in turn).
///
/// Senders are the first elements of `pairs`, deduplicated in order; each
/// targets every other Sybil of the graph. Later senders see the balances
/// left by earlier ones.
#[allow(clippy::too_many_arguments)]
pub fn run_attack_round<R: Rng + ?Sized>(
    graph: &mut PcnGraph,
    engine: &mut HtlcEngine,
    pairs: &[(NodeId, NodeId)],
    strategy: Strategy,
    budgets: &[Sat],
    threshold: f64,
    cfg: &RoundConfig,
    rng: &mut R,
) -> Result<RoundOutcome, PlannerError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PlannerError::InvalidThreshold(threshold));
    }
    let mut attackers: Vec<NodeId> = Vec::new();
    for &(s, _) in pairs {
        if !attackers.contains(&s) {
            attackers.push(s);
        }
    }
    if budgets.len() != attackers.len() {
        return Err(PlannerError::BudgetCount {
            budgets: budgets.len(),
            attackers: attackers.len(),
        });
    }
    let sybils: Vec<NodeId> = graph.sybil_set().iter().copied().collect();
    let discover = |g: &PcnGraph, attacker: NodeId| {
        let dests: Vec<NodeId> = sybils.iter().copied().filter(|&d| d != attacker).collect();
        find_paths_to_many(g, attacker, &dests, cfg.l_max, cfg.max_paths)
    };
    let mut stale: Vec<Vec<PathRecord>> = if cfg.reprobe {
        Vec::new()
    } else {
        attackers.iter().map(|&a| discover(graph, a)).collect()
    };

    let mut outcome = RoundOutcome {
        attackers: Vec::with_capacity(attackers.len()),
        htlcs: Vec::new(),
        fee_per_hop: cfg.fees.flat_fee_per_hop,
    };
    for (n, &attacker) in attackers.iter().enumerate() {
        let mut paths = if cfg.reprobe {
            discover(graph, attacker)
        } else {
            std::mem::take(&mut stale[n])
        };
        let discovered = paths.len();
        paths.retain(|p| carries_min_htlc(graph, p));
        let dust_paths = discovered - paths.len();
        if cfg.probe_noise > 0.0 {
            for p in paths.iter_mut() {
                probe(graph, p, cfg.probe_noise, rng)?;
            }
        }
        let budget = budgets[n];
        let mut plan = match cfg.budget_scope {
            BudgetScope::PerAttacker => {
                let input = PlannerInput {
                    attacker,
                    budget,
                    paths: &paths,
                    l_max: cfg.l_max,
                    threshold,
                };
                plan(strategy, &input, rng)?
            }
            BudgetScope::PerPair => plan_per_pair(strategy, attacker, budget, &paths, cfg, threshold, rng)?,
        };
        apply_plan(graph, engine, &mut plan, &paths, cfg, &mut outcome.htlcs);
        outcome.attackers.push(AttackerOutcome {
            plan,
            paths,
            dust_paths,
        });
    }
    Ok(outcome)
}

/// Plans every destination group with its own copy of the budget and merges
/// the results. Apply then runs against the combined budget.
fn plan_per_pair<R: Rng + ?Sized>(
    strategy: Strategy,
    attacker: NodeId,
    budget: Sat,
    paths: &[PathRecord],
    cfg: &RoundConfig,
    threshold: f64,
    rng: &mut R,
) -> Result<AttackPlan, PlannerError> {
    let mut groups: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (i, p) in paths.iter().enumerate() {
        groups.entry(p.dest).or_default().push(i);
    }
    let total_budget = budget.saturating_mul(groups.len().max(1) as Sat);
    let mut merged = AttackPlan {
        attacker,
        budget: total_budget,
        allocations: Vec::new(),
        spent: 0,
        residual_budget: total_budget,
    };
    for idx in groups.values() {
        let sub: Vec<PathRecord> = idx.iter().map(|&i| paths[i].clone()).collect();
        let input = PlannerInput {
            attacker,
            budget,
            paths: &sub,
            l_max: cfg.l_max,
            threshold,
        };
        let p = plan(strategy, &input, rng)?;
        merged.spent += p.spent;
        merged.allocations.extend(p.allocations.into_iter().map(|mut a| {
            a.path_index = idx[a.path_index];
            a
        }));
    }
    merged.residual_budget = total_budget - merged.spent;
    Ok(merged)
}

/// Writes plans with header
/// `attacker_id,pair_id,path_index,planned_alpha,applied_alpha,bottleneck,length,spcr,deviation`.
pub fn write_plan_csv<W: std::io::Write>(out: W, plans: &[AttackPlan]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "attacker_id",
        "pair_id",
        "path_index",
        "planned_alpha",
        "applied_alpha",
        "bottleneck",
        "length",
        "spcr",
        "deviation",
    ])?;
    for plan in plans {
        for a in &plan.allocations {
            w.write_record([
                plan.attacker.to_string(),
                format!("{}-{}", plan.attacker, a.dest),
                a.path_index.to_string(),
                a.planned_alpha.to_string(),
                a.applied_alpha.to_string(),
                a.bottleneck.to_string(),
                a.length.to_string(),
                a.spcr.to_string(),
                a.deviation.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
