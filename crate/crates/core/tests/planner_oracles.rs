//! Planner outputs against independent oracles: exhaustive integer grid
//! search, an exact dynamic program over the full unit range, and the
//! simplex solver.

mod common;

use common::*;
use pcnlab::graph::Sat;
use pcnlab::pathfind::PathRecord;
use pcnlab::planner::{plan_general, plan_minpay, plan_minpay_lp, plan_random, plan_spcr_max, plan_spcr_max_lp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn planners_match_exhaustive_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for round in 0..160 {
        let n = round % 4 + 1;
        let (paths, budget, t) = grid_instance(&mut rng, n);
        let k = slopes(&paths);
        let unit = k.iter().copied().fold(0.0, f64::max);
        let grid = grid_search(&paths, budget, t);

        let sm = plan_spcr_max(&input(&paths, budget, t)).unwrap();
        let got = spcr_total(&k, &alphas(&sm, n));
        assert!(
            (got - grid.spcr_max).abs() <= unit + 1e-12,
            "spcr-max {got} vs grid {} on {paths:?}, B={budget}",
            grid.spcr_max
        );

        let mp = plan_minpay(&input(&paths, budget, t)).unwrap();
        let a = alphas(&mp, n);
        let short = shortfall_total(&k, &a, t);
        let pay: Sat = a.iter().sum();
        // flooring each target to whole units costs at most one unit per path
        let per_path: f64 = k.iter().sum();
        assert!(
            short >= grid.min_shortfall - 1e-12 && short <= grid.min_shortfall + per_path + 1e-12,
            "minpay shortfall {short} vs grid {} (t={t}, B={budget}, {paths:?})",
            grid.min_shortfall
        );
        assert!(
            pay.abs_diff(grid.min_payment) <= n as Sat,
            "minpay payment {pay} vs grid {} (t={t}, B={budget}, {paths:?})",
            grid.min_payment
        );
        checked += 1;
    }
    assert!(checked >= 100);
}

#[test]
fn dynamic_program_agrees_with_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 1..=3 {
        for _ in 0..5 {
            let (paths, budget, _) = grid_instance(&mut rng, n);
            let grid = grid_search(&paths, budget, 0.0);
            let dp = spcr_max_dp(&paths, budget);
            assert!((dp - grid.spcr_max).abs() < 1e-9, "{dp} vs {}", grid.spcr_max);
        }
    }
}

#[test]
fn spcr_max_matches_exact_optimum_at_full_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let n = rng.gen_range(1..=4);
        let paths: Vec<PathRecord> = (0..n)
            .map(|j| path(rng.gen_range(1..=L_MAX), rng.gen_range(1..=10_000), j as u32))
            .collect();
        let budget = rng.gen_range(0..=10_000);
        let k = slopes(&paths);
        let plan = plan_spcr_max(&input(&paths, budget, 0.5)).unwrap();
        let got = spcr_total(&k, &alphas(&plan, n));
        let exact = spcr_max_dp(&paths, budget);
        let unit = k.iter().copied().fold(0.0, f64::max);
        assert!((got - exact).abs() <= unit, "{got} vs {exact}");
    }
}

#[test]
fn greedy_matches_simplex_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let paths: Vec<PathRecord> = (0..n)
            .map(|j| path(rng.gen_range(1..=L_MAX), rng.gen_range(1..=50_000_000), j as u32))
            .collect();
        let total: Sat = paths.iter().map(|p| p.bottleneck).sum();
        let budget = rng.gen_range(0..=total + total / 3);
        let inp = input(&paths, budget, 0.5);
        let greedy = plan_spcr_max(&inp).unwrap().total_spcr();
        let lp = plan_spcr_max_lp(&inp).unwrap().spcr_total;
        // the greedy fills whole satoshi, the LP is continuous
        let tol = 1e-9 * lp.abs().max(1e-300);
        assert!(
            (greedy - lp).abs() <= tol,
            "greedy {greedy} vs lp {lp}, diff {}",
            (greedy - lp).abs()
        );
    }
}

#[test]
fn minpay_closed_form_in_feasible_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..300 {
        let n = rng.gen_range(1..=6);
        let paths: Vec<PathRecord> = (0..n)
            .map(|j| path(rng.gen_range(2..=L_MAX), rng.gen_range(1_000..=50_000_000), j as u32))
            .collect();
        let shortest = paths.iter().map(|p| p.length()).min().unwrap();
        let t = rng.gen_range(0.0..=shortest as f64 / L_MAX as f64);
        let target = |p: &PathRecord| t * L_MAX as f64 * p.bottleneck as f64 / p.length() as f64;
        let need: f64 = paths.iter().map(target).sum();
        let budget = need.ceil() as Sat + rng.gen_range(0..1_000_000);
        let inp = input(&paths, budget, t);

        let plan = plan_minpay(&inp).unwrap();
        let a = alphas(&plan, n);
        for (p, &got) in paths.iter().zip(&a) {
            assert!((got as f64 - target(p)).abs() <= 1.0, "alpha {got} vs {}", target(p));
        }
        let lp = plan_minpay_lp(&inp).unwrap();
        assert!(lp.shortfall <= 1e-9);
        for (p, &x) in paths.iter().zip(&lp.alphas) {
            assert!(
                (x - target(p)).abs() <= 1.0 + 1e-9 * target(p),
                "lp alpha {x} vs {}",
                target(p)
            );
        }
    }
}

#[test]
fn worked_examples() {
    // MinPay: minb 4e6, l=5, t=0.2, B=1e7 -> 3.2e6 and no deviation
    let p = [path(5, 4_000_000, 0)];
    let plan = plan_minpay(&input(&p, 10_000_000, 0.2)).unwrap();
    assert_eq!(alphas(&plan, 1), vec![3_200_000]);
    assert_eq!(plan.total_deviation(), 0.0);
    // a grid search in 1e3 steps finds the same minimum
    let k = slopes(&p)[0];
    let first_ok = (0..=4_000u64).map(|i| i * 1_000).find(|&a| k * a as f64 >= 0.2 - 1e-12);
    assert_eq!(first_ok, Some(3_200_000));

    // MinPay: l=3 cannot reach 0.3, so it pays the bottleneck and deviates by 0.15
    let p = [path(3, 1_000_000, 0)];
    let plan = plan_minpay(&input(&p, 10_000_000, 0.3)).unwrap();
    assert_eq!(alphas(&plan, 1), vec![1_000_000]);
    assert!((plan.total_deviation() - 0.15).abs() < 1e-12);

    // SPCR-Max: the denser path fills first
    let p = [path(8, 2_000_000, 0), path(4, 4_000_000, 1)];
    let inp = input(&p, 3_000_000, 0.0);
    let plan = plan_spcr_max(&inp).unwrap();
    assert_eq!(alphas(&plan, 2), vec![2_000_000, 1_000_000]);
    assert!((plan.total_spcr() - 0.45).abs() < 1e-12);
    let lp = plan_spcr_max_lp(&inp).unwrap();
    assert_eq!(lp.floored(), vec![2_000_000, 1_000_000]);

    // general: largest bottleneck first
    let p = [path(3, 5_000_000, 0), path(3, 3_000_000, 1), path(3, 2_000_000, 2)];
    let plan = plan_general(&input(&p, 6_000_000, 0.0)).unwrap();
    assert_eq!(alphas(&plan, 3), vec![5_000_000, 1_000_000, 0]);
}

fn arbitrary_paths() -> impl Strategy<Value = Vec<PathRecord>> {
    prop::collection::vec((1usize..=L_MAX, 0u64..=10_000_000), 0..8).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(j, (l, b))| path(l, b, j as u32))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1_000, ..ProptestConfig::default() })]

    #[test]
    fn every_plan_respects_budget_and_caps(
        paths in arbitrary_paths(),
        budget in 0u64..=50_000_000,
        t in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let inp = input(&paths, budget, t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plans = [
            plan_minpay(&inp).unwrap(),
            plan_spcr_max(&inp).unwrap(),
            plan_random(&inp, &mut rng).unwrap(),
            plan_general(&inp).unwrap(),
        ];
        for plan in &plans {
            let a = alphas(plan, paths.len());
            let spent: Sat = a.iter().sum();
            prop_assert_eq!(spent, plan.spent);
            prop_assert!(spent <= budget);
            prop_assert_eq!(plan.residual_budget, budget - spent);
            for (p, &x) in paths.iter().zip(&a) {
                prop_assert!(x <= p.bottleneck);
            }
            for alloc in &plan.allocations {
                prop_assert!((0.0..=1.0).contains(&alloc.spcr));
            }
        }
        // zero threshold costs MinPay nothing
        let free = plan_minpay(&input(&paths, budget, 0.0)).unwrap();
        prop_assert_eq!(free.spent, 0);
    }

    #[test]
    fn random_plan_is_reproducible(paths in arbitrary_paths(), budget in 0u64..=50_000_000, seed in any::<u64>()) {
        let inp = input(&paths, budget, 0.5);
        let a = plan_random(&inp, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = plan_random(&inp, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
