// SPDX-License-Identifier: Apache-2.0
mod common;

use common::{bench, dense_drops, lp65, quiet, rel_err, templates};
use pdnforge::bench::Stage;
use pdnforge::grid::{template_test_system, Assignment};
use pdnforge::maps::RegionGrid;
use pdnforge::sa::fresh_system;
use pdnforge::solver::{check_limits, solve, solve_drops, solve_with, EmMode, Violation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn template_systems_match_dense_lu() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let mut checked = 0;
    for t in &tset.templates {
        let sys = template_test_system(&cfg, t).unwrap();
        if sys.n() > 2500 {
            continue;
        }
        let sparse = solve_drops(&sys).unwrap();
        let dense = dense_drops(&sys);
        assert!(rel_err(&sparse, &dense) < 1e-9, "template {}", t.id);
        checked += 1;
    }
    assert!(
        checked >= 2,
        "only {checked} templates small enough for the dense oracle"
    );
}

#[test]
fn chip_system_matches_dense_lu() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = bench(&cfg, 5, 0, 500.0);
    let sparsest = tset.len() - 1;
    let sys = fresh_system(
        &b,
        &cfg,
        &tset,
        Stage::Placement,
        &Assignment::uniform(2, 2, sparsest),
    )
    .unwrap();
    assert!(sys.n() <= 4000, "{} nodes", sys.n());
    let res = solve(&sys).unwrap();
    assert!(rel_err(&res.node_drops, &dense_drops(&sys)) < 1e-9);
    assert!(res.relative_residual <= 1e-10);
}

#[test]
fn drops_scale_linearly_and_superpose() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = bench(&cfg, 5, 1, 500.0);
    let a = Assignment::uniform(2, 2, 0);
    let drops = |bm: &pdnforge::bench::Benchmark| {
        solve(&fresh_system(bm, &cfg, &tset, Stage::Placement, &a).unwrap())
            .unwrap()
            .node_drops
    };
    let base = drops(&b);

    let mut doubled = b.clone();
    doubled.current.data.iter_mut().for_each(|v| *v *= 2.0);
    let twice: Vec<f64> = base.iter().map(|d| 2.0 * d).collect();
    assert!(rel_err(&drops(&doubled), &twice) < 1e-9);

    // split the current map pixel by pixel into two parts
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut p1, mut p2) = (b.clone(), b.clone());
    for i in 0..b.current.data.len() {
        let f: f64 = rng.random();
        p1.current.data[i] = b.current.data[i] * f;
        p2.current.data[i] = b.current.data[i] - p1.current.data[i];
    }
    let sum: Vec<f64> = drops(&p1)
        .iter()
        .zip(drops(&p2))
        .map(|(x, y)| x + y)
        .collect();
    assert!(rel_err(&sum, &base) < 1e-9);
}

#[test]
fn bump_currents_balance_loads() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = bench(&cfg, 5, 2, 750.0);
    let sys = fresh_system(
        &b,
        &cfg,
        &tset,
        Stage::Placement,
        &Assignment::uniform(3, 3, 0),
    )
    .unwrap();
    let res = solve(&sys).unwrap();
    let supplied: f64 = sys
        .bump_nodes
        .iter()
        .map(|&(n, g)| g.expect("resistive bumps") * res.node_drops[n])
        .sum();
    let drawn: f64 = sys.loads.iter().sum();
    assert!(
        (supplied - drawn).abs() < 1e-9 * drawn,
        "{supplied} vs {drawn}"
    );
}

#[test]
fn drops_are_passive_and_region_max_matches_map() {
    let cfg = lp65();
    let tset = templates(&cfg);
    for i in 0..3 {
        let b = bench(&cfg, 6, i, 750.0);
        let sys = fresh_system(
            &b,
            &cfg,
            &tset,
            Stage::Placement,
            &Assignment::uniform(3, 3, 2),
        )
        .unwrap();
        let res = solve(&sys).unwrap();
        assert!(res.node_drops.iter().all(|&d| d >= -1e-15));
        assert!(res.node_voltages.iter().all(|&v| v <= cfg.vdd() + 1e-15));
        let map_max = res.ir_drop_map.data.iter().copied().fold(0.0, f64::max);
        assert!(
            (res.worst_dr() - map_max).abs() <= 1e-12 * map_max,
            "{} vs {map_max}",
            res.worst_dr()
        );
    }
}

#[test]
fn quiet_chip_has_no_drop_or_current() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = quiet(&bench(&cfg, 7, 0, 500.0));
    let sys = fresh_system(
        &b,
        &cfg,
        &tset,
        Stage::Placement,
        &Assignment::uniform(2, 2, 0),
    )
    .unwrap();
    let res = solve(&sys).unwrap();
    assert_eq!(res.worst_dr(), 0.0);
    assert_eq!(res.worst_j(), 0.0);
    assert!(
        check_limits(
            &res.worst_dr_per_region,
            &res.j_per_region,
            cfg.ir_limit_dc,
            cfg.em_limit_jc
        )
        .safe
    );
}

#[test]
fn max_mode_bounds_mean_mode() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = bench(&cfg, 7, 1, 750.0);
    let sys = fresh_system(
        &b,
        &cfg,
        &tset,
        Stage::Placement,
        &Assignment::uniform(3, 3, 4),
    )
    .unwrap();
    let mean = solve_with(&sys, EmMode::Mean).unwrap();
    let max = solve_with(&sys, EmMode::Max).unwrap();
    for (m, x) in mean
        .j_per_region
        .values
        .iter()
        .zip(&max.j_per_region.values)
    {
        assert!(m <= x);
    }
}

#[test]
fn denser_region_never_raises_worst_drop() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut compared = 0;
    for i in 0..6 {
        let b = bench(&cfg, 8, i, 750.0);
        for _ in 0..4 {
            let mut a = Assignment::uniform(3, 3, 0);
            a.values
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0..tset.len()));
            let k = rng.random_range(0..a.len());
            let from = tset.get(a.values[k]);
            let Some(denser) = tset.templates.iter().find(|t| t.strictly_denser_than(from)) else {
                continue;
            };
            let worst = |a: &Assignment| {
                fresh_system(&b, &cfg, &tset, Stage::Placement, a)
                    .ok()
                    .map(|s| solve(&s).unwrap().worst_dr())
            };
            let Some(before) = worst(&a) else { continue };
            a.values[k] = denser.id;
            let after = worst(&a).expect("denser template stays connected");
            assert!(after <= before * (1.0 + 1e-12), "{after} > {before}");
            compared += 1;
        }
    }
    assert!(compared >= 5);
}

#[test]
fn limit_examples() {
    let j = RegionGrid::filled(1, 1, 0.0);
    let ok = check_limits(&RegionGrid::filled(1, 1, 0.0116), &j, 0.012, 4.8e6);
    assert!(ok.safe);
    let bad = check_limits(&RegionGrid::filled(1, 1, 0.0121), &j, 0.012, 4.8e6);
    assert!(!bad.safe);
    match &bad.violations[..] {
        [Violation::IrDrop {
            row: 0,
            col: 0,
            margin,
            ..
        }] => assert!((margin + 0.0001).abs() < 1e-12),
        v => panic!("unexpected violations {v:?}"),
    }
}
