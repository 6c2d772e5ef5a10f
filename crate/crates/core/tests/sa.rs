// SPDX-License-Identifier: Apache-2.0
mod common;

use common::*;
use pdnforge::bench::{Benchmark, Stage};
use pdnforge::grid::Assignment;
use pdnforge::sa::*;
use pdnforge::Error;

fn fast(seed: u64) -> SaParams {
    SaParams {
        cooling_rate: 0.8,
        seed,
        ..SaParams::default()
    }
}

/// No load, no congestion and no macros.
fn empty(b: &Benchmark) -> Benchmark {
    let mut q = quiet(b);
    q.macros.data.fill(0.0);
    q.manifest.macros.clear();
    q
}

#[test]
fn idle_chip_gets_the_sparsest_template() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = empty(&bench(&cfg, 13, 0, 750.0));
    let r = anneal(&b, &cfg, &tset, Stage::Floorplan, &fast(1), None).unwrap();
    let sparsest = (0..tset.len())
        .min_by(|&a, &b| tset.get(a).utilization.total_cmp(&tset.get(b).utilization))
        .unwrap();
    assert_eq!(r.assignment, Assignment::uniform(3, 3, sparsest));
    assert!(r.feasible);
    assert!(r
        .breakdown
        .regions
        .iter()
        .all(|c| c.d_norm == 0.0 && c.j_norm == 0.0));
}

#[test]
fn result_cost_matches_fresh_evaluation() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = bench(&cfg, 13, 1, 500.0);
    let p = fast(2);
    let r = anneal(&b, &cfg, &tset, Stage::Floorplan, &p, None).unwrap();
    let c = cost(&r.assignment, &b, &cfg, &tset, Stage::Floorplan, None, &p).unwrap();
    assert!((c.total - r.breakdown.total).abs() <= 1e-9 * c.total.abs());
    assert_eq!(c.feasible, r.feasible);
}

#[test]
fn anneal_is_deterministic_and_trace_cools_geometrically() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = bench(&cfg, 13, 2, 500.0);
    let p = fast(3);
    let x = anneal(&b, &cfg, &tset, Stage::Floorplan, &p, None).unwrap();
    let y = anneal(&b, &cfg, &tset, Stage::Floorplan, &p, None).unwrap();
    assert_eq!(x.assignment, y.assignment);
    assert_eq!(x.breakdown, y.breakdown);
    assert_eq!(x.trace, y.trace);
    let t0 = x.initial_temperature;
    assert!(t0 > 0.0);
    for e in &x.trace {
        assert!(e.temperature <= t0 && e.temperature >= t0 * p.min_temperature_ratio);
    }
    let temps: Vec<f64> = x.trace.iter().map(|e| e.temperature).collect();
    for w in temps.windows(2) {
        assert!(w[1] == w[0] || (w[1] / w[0] - p.cooling_rate).abs() < 1e-12);
    }
}

#[test]
fn small_chip_reaches_exhaustive_minimum() {
    let cfg = lp65();
    let tset = templates(&cfg);
    for i in 0..3 {
        let b = bench(&cfg, 13, 10 + i, 500.0);
        let p = SaParams {
            seed: i,
            ..SaParams::default()
        };
        let r = anneal(&b, &cfg, &tset, Stage::Floorplan, &p, None).unwrap();
        let (a, best) = exhaustive_minimum(&b, &cfg, &tset, Stage::Floorplan, &p, None).unwrap();
        assert_eq!(r.feasible, best.feasible);
        let gap = (r.breakdown.total - best.total) / best.total;
        assert!(
            gap <= 0.01,
            "bench {i}: gap {gap}, {:?} vs {:?}",
            r.assignment,
            a
        );
    }
}

#[test]
fn overloaded_chip_is_infeasible() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let mut b = bench(&cfg, 13, 3, 500.0);
    b.current_fp.data.iter_mut().for_each(|v| *v *= 50.0);
    match anneal(&b, &cfg, &tset, Stage::Floorplan, &fast(4), None) {
        Err(Error::Infeasible(msg)) => assert!(msg.contains(&b.manifest.name)),
        other => panic!("expected Infeasible, got {:?}", other.map(|r| r.assignment)),
    }
}

#[test]
fn placement_needs_floorplan_assignment() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = bench(&cfg, 13, 4, 500.0);
    assert!(matches!(
        anneal(&b, &cfg, &tset, Stage::Placement, &fast(5), None),
        Err(Error::Validation { .. })
    ));
}

#[test]
fn bad_params_are_rejected() {
    for p in [
        SaParams {
            cooling_rate: 1.0,
            ..SaParams::default()
        },
        SaParams {
            min_temperature_ratio: 0.0,
            ..SaParams::default()
        },
        SaParams {
            initial_temperature: Some(-1.0),
            ..SaParams::default()
        },
        SaParams {
            initial_acceptance: 1.0,
            ..SaParams::default()
        },
    ] {
        assert!(matches!(p.validate(), Err(Error::Validation { .. })));
    }
}

#[test]
fn pitch_distance_examples() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let vars = cfg.variable_indices();
    for a in 0..tset.len() {
        assert_eq!(pitch_distance(&cfg, &tset, a, a), 0.0);
        for b in 0..tset.len() {
            let want: f64 = vars
                .iter()
                .map(|&l| {
                    let (pa, pb) = (tset.get(a).pitches[l], tset.get(b).pitches[l]);
                    (pa - pb).abs() / pa
                })
                .sum::<f64>()
                / vars.len() as f64;
            assert!((pitch_distance(&cfg, &tset, a, b) - want).abs() < 1e-15);
            if tset.get(a).multipliers != tset.get(b).multipliers {
                assert!(pitch_distance(&cfg, &tset, a, b) > 0.0);
            }
        }
    }
}

#[test]
fn labels_do_not_depend_on_worker_count() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let benches: Vec<Benchmark> = (0..3).map(|i| bench(&cfg, 14, i, 500.0)).collect();
    let p = SaParams {
        cooling_rate: 0.7,
        seed: 9,
        ..SaParams::default()
    };
    let one = label_many(&benches, &cfg, &tset, &p, true, 1).unwrap();
    let two = label_many(&benches, &cfg, &tset, &p, true, 2).unwrap();
    for (x, y) in one.iter().zip(&two) {
        assert_eq!(x.name, y.name);
        let (fx, fy) = (x.floorplan.as_ref().unwrap(), y.floorplan.as_ref().unwrap());
        assert_eq!(fx.assignment, fy.assignment);
        assert_eq!(fx.breakdown, fy.breakdown);
        let (px, py) = (
            x.placement.as_ref().unwrap().as_ref().unwrap(),
            y.placement.as_ref().unwrap().as_ref().unwrap(),
        );
        assert_eq!(px.assignment, py.assignment);
    }
}

#[test]
fn placement_labels_stay_near_floorplan_labels() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let benches: Vec<Benchmark> = (0..2).map(|i| bench(&cfg, 15, i, 1000.0)).collect();
    let labels = label_many(&benches, &cfg, &tset, &fast(11), true, 1).unwrap();
    let (mut near, mut total) = (0, 0);
    for l in &labels {
        let fp = l.floorplan.as_ref().unwrap();
        let pl = l.placement.as_ref().unwrap().as_ref().unwrap();
        for (a, b) in fp.assignment.values.iter().zip(&pl.assignment.values) {
            total += 1;
            if a.abs_diff(*b) <= 2 {
                near += 1;
            }
        }
        // the placement cost carries the pitch distance to the floorplan label
        for (r, c) in pl.breakdown.regions.iter().enumerate() {
            let want = pitch_distance(
                &cfg,
                &tset,
                fp.assignment.values[r],
                pl.assignment.values[r],
            );
            assert!((c.delta_p - want).abs() < 1e-15);
        }
    }
    assert!(
        near * 100 >= 95 * total,
        "{near}/{total} within two template ids"
    );
}
