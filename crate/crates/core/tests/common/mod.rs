//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::VecDeque;

use pcnlab::graph::{NodeId, Sat};
use pcnlab::pathfind::PathRecord;
use pcnlab::planner::{AttackPlan, PlannerInput};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const L_MAX: usize = 20;
pub const ATTACKER: NodeId = NodeId(0);

pub fn path(length: usize, bottleneck: Sat, tag: u32) -> PathRecord {
    let mut hops = vec![ATTACKER];
    hops.extend((1..length as u32).map(|i| NodeId(1000 * (tag + 1) + i)));
    hops.push(NodeId(1));
    PathRecord {
        source: ATTACKER,
        dest: NodeId(1),
        hops,
        balances: vec![bottleneck; length],
        bottleneck,
        probe_time: 0,
    }
}

pub fn input(paths: &[PathRecord], budget: Sat, threshold: f64) -> PlannerInput<'_> {
    PlannerInput {
        attacker: ATTACKER,
        budget,
        paths,
        l_max: L_MAX,
        threshold,
    }
}

pub fn alphas(plan: &AttackPlan, n: usize) -> Vec<Sat> {
    let mut a = vec![0; n];
    for alloc in &plan.allocations {
        a[alloc.path_index] = alloc.planned_alpha;
    }
    a
}

/// SPCR gained per unit on each path.
pub fn slopes(paths: &[PathRecord]) -> Vec<f64> {
    paths
        .iter()
        .map(|p| p.length() as f64 / (L_MAX as f64 * p.bottleneck as f64))
        .collect()
}

pub fn spcr_total(k: &[f64], a: &[Sat]) -> f64 {
    k.iter().zip(a).map(|(k, &a)| k * a as f64).sum()
}

pub fn shortfall_total(k: &[f64], a: &[Sat], t: f64) -> f64 {
    k.iter().zip(a).map(|(k, &a)| (t - k * a as f64).max(0.0)).sum()
}

/// Visits every integer point of `prod [0, caps_j]` with sum <= budget.
pub fn for_each_grid_point(caps: &[Sat], budget: Sat, mut visit: impl FnMut(&[Sat])) {
    fn rec(caps: &[Sat], left: Sat, cur: &mut Vec<Sat>, visit: &mut dyn FnMut(&[Sat])) {
        if cur.len() == caps.len() {
            visit(cur);
            return;
        }
        let j = cur.len();
        for a in 0..=caps[j].min(left) {
            cur.push(a);
            rec(caps, left - a, cur, visit);
            cur.pop();
        }
    }
    rec(caps, budget, &mut Vec::with_capacity(caps.len()), &mut visit);
}

pub struct GridOptimum {
    pub spcr_max: f64,
    pub min_shortfall: f64,
    /// Least payment among points whose shortfall equals `min_shortfall`.
    pub min_payment: Sat,
}

pub fn grid_search(paths: &[PathRecord], budget: Sat, t: f64) -> GridOptimum {
    let k = slopes(paths);
    let caps: Vec<Sat> = paths.iter().map(|p| p.bottleneck).collect();
    let mut best = GridOptimum {
        spcr_max: 0.0,
        min_shortfall: f64::INFINITY,
        min_payment: Sat::MAX,
    };
    for_each_grid_point(&caps, budget, |a| {
        best.spcr_max = best.spcr_max.max(spcr_total(&k, a));
        let s = shortfall_total(&k, a, t);
        let pay: Sat = a.iter().sum();
        if s < best.min_shortfall - 1e-12 {
            best.min_shortfall = s;
            best.min_payment = pay;
        } else if (s - best.min_shortfall).abs() <= 1e-12 {
            best.min_payment = best.min_payment.min(pay);
        }
    });
    best
}

/// Exact integer optimum of the SPCR-Max objective by a max-plus dynamic
/// program over the budget axis, each path folded in with a sliding-window
/// maximum. Covers every grid point without enumerating them.
pub fn spcr_max_dp(paths: &[PathRecord], budget: Sat) -> f64 {
    let b = budget as usize;
    let mut best = vec![0.0f64; b + 1];
    for (p, k) in paths.iter().zip(slopes(paths)) {
        let cap = p.bottleneck as usize;
        // next[x] = max_{a <= min(cap, x)} k*a + best[x - a]
        //         = k*x + max_{c in [x - cap, x]} (best[c] - k*c)
        let mut next = vec![0.0; b + 1];
        let mut window: VecDeque<usize> = VecDeque::new();
        let h = |c: usize| best[c] - k * c as f64;
        for (x, slot) in next.iter_mut().enumerate() {
            while window.back().is_some_and(|&c| h(c) <= h(x)) {
                window.pop_back();
            }
            window.push_back(x);
            while window.front().is_some_and(|&c| c + cap < x) {
                window.pop_front();
            }
            *slot = k * x as f64 + h(window[0]);
        }
        best = next;
    }
    best[b]
}

/// Random instance; per-path magnitudes shrink with the path count so the
/// exhaustive grid stays a few million points.
pub fn grid_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<PathRecord>, Sat, f64) {
    let cap = [10_000, 2_000, 150, 40][n - 1];
    let paths: Vec<PathRecord> = (0..n)
        .map(|j| path(rng.gen_range(1..=L_MAX), rng.gen_range(1..=cap), j as u32))
        .collect();
    let total: Sat = paths.iter().map(|p| p.bottleneck).sum();
    let budget = rng.gen_range(0..=total + total / 4);
    let threshold = rng.gen_range(0..=20) as f64 / 20.0;
    (paths, budget, threshold)
}
