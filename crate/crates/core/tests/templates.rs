// SPDX-License-Identifier: Apache-2.0
mod common;

use common::*;
use pdnforge::grid::template_test_system;
use pdnforge::templates::*;
use pdnforge::Error;
use proptest::prelude::*;

fn ranked_all() -> (pdnforge::config::TechnologyConfig, Vec<Template>) {
    let cfg = lp65();
    let mut all = enumerate_templates(&cfg).unwrap();
    rank_templates(&mut all, &cfg).unwrap();
    (cfg, all)
}

#[test]
fn resistance_matches_dense_oracle() {
    let cfg = lp65();
    let all = enumerate_templates(&cfg).unwrap();
    for t in [&all[0], &all[13], &all[26]] {
        let sys = template_test_system(&cfg, t).unwrap();
        let want = dense_drops(&sys).into_iter().fold(0.0, f64::max);
        let got = equivalent_resistance(t, &cfg).unwrap();
        assert!(
            (got - want).abs() <= 1e-9 * want,
            "{:?}: {got} vs {want}",
            t.multipliers
        );
        // one amp total
        assert!((sys.loads.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn denser_never_raises_resistance_or_lowers_utilization() {
    let (_, all) = ranked_all();
    for a in &all {
        for b in &all {
            if a.strictly_denser_than(b) {
                assert!(
                    a.utilization > b.utilization,
                    "{:?} vs {:?}",
                    a.multipliers,
                    b.multipliers
                );
                assert!(
                    a.equivalent_resistance <= b.equivalent_resistance * (1.0 + 1e-12),
                    "{:?} R {} vs {:?} R {}",
                    a.multipliers,
                    a.equivalent_resistance,
                    b.multipliers,
                    b.equivalent_resistance
                );
            }
        }
    }
}

#[test]
fn halving_a_pitch_adds_utilization() {
    let cfg = lp65();
    for &layer in &cfg.variable_indices() {
        let mut m = vec![1u32; cfg.pdn_layers.len()];
        m[layer] = 2;
        let sparse = utilization(&m, &cfg);
        m[layer] = 1;
        assert!(utilization(&m, &cfg) > sparse, "layer {layer}");
    }
}

#[test]
fn shipped_set_is_sorted_and_non_dominated() {
    let cfg = lp65();
    let set = templates(&cfg);
    assert!(set.dominated_pairs().is_empty());
    for (i, t) in set.templates.iter().enumerate() {
        assert_eq!(t.id, i);
    }
    for w in set.templates.windows(2) {
        assert!(w[0].equivalent_resistance <= w[1].equivalent_resistance);
        assert!(w[0].utilization >= w[1].utilization);
    }
}

#[test]
fn set_round_trips_and_rejects_renumbered_ids() {
    let cfg = lp65();
    let set = templates(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.json");
    set.save(&p).unwrap();
    assert_eq!(TemplateSet::load(&p).unwrap(), set);

    let mut bad = set.clone();
    bad.templates[1].id = 7;
    bad.save(&p).unwrap();
    assert!(matches!(TemplateSet::load(&p), Err(Error::Parse { .. })));
}

#[test]
fn negative_epsilon_is_rejected() {
    let cfg = lp65();
    assert!(matches!(
        build_template_set(&cfg, Some(-1.0)),
        Err(Error::Validation { .. })
    ));
}

fn point(id: usize, r: f64, u: f64) -> Template {
    Template {
        id,
        multipliers: vec![1, 1, 1, 1, 1],
        pitches: vec![50.0; 5],
        equivalent_resistance: r,
        utilization: u,
    }
}

proptest! {
    #[test]
    fn prune_keeps_exactly_the_undominated(
        pts in prop::collection::vec((0.1f64..1.0, 0.01f64..0.5), 1..30),
        eps in 0.0f64..0.05,
    ) {
        let cfg = lp65();
        let input: Vec<Template> = pts.iter().enumerate().map(|(i, &(r, u))| point(i, r, u)).collect();
        let set = prune(&input, eps, &cfg).unwrap();
        let dominated = |t: &Template| {
            input.iter().any(|o| o.utilization < t.utilization && t.equivalent_resistance > o.equivalent_resistance - eps)
        };
        let expected = input.iter().filter(|t| !dominated(t)).count();
        prop_assert_eq!(set.len(), expected);
        for (i, t) in set.templates.iter().enumerate() {
            prop_assert_eq!(t.id, i);
            prop_assert!(!dominated(t));
        }
        for w in set.templates.windows(2) {
            prop_assert!(w[0].equivalent_resistance <= w[1].equivalent_resistance);
        }
        // survivors never strictly dominate one another
        prop_assert!(set.dominated_pairs().is_empty());
    }
}
