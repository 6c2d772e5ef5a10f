// SPDX-License-Identifier: Apache-2.0
mod common;

use common::*;
use pdnforge::bench::Stage;
use pdnforge::config::{to_nm, Direction};
use pdnforge::grid::{stripe_positions, Assignment, ChipGeometry};
use pdnforge::maps::{Map2D, RegionGrid};
use pdnforge::metrics::*;
use pdnforge::Error;
use proptest::prelude::*;

#[test]
fn region_tracks_match_stripe_lattice() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let geom = ChipGeometry::new(&cfg, 400, 400);
    for t in &tset.templates {
        for (row, col) in [(0, 0), (1, 2), (3, 3)] {
            let (x0, y0, x1, y1) = geom.region_box(row, col);
            let mut want = 0i64;
            for (l, layer) in cfg.pdn_layers.iter().enumerate() {
                let (lo, hi) = match layer.direction {
                    Direction::Horizontal => (y0, y1),
                    Direction::Vertical => (x0, x1),
                };
                let n =
                    stripe_positions(to_nm(layer.pitch_dense), t.pitch_nm(&cfg, l), lo, hi).len();
                want += n as i64 * layer.tracks_per_stripe() as i64;
            }
            assert_eq!(
                region_tracks(t, &cfg, &geom, row, col),
                want,
                "template {} region ({row}, {col})",
                t.id
            );
        }
    }
}

#[test]
fn uniform_baseline_saves_nothing() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let geom = ChipGeometry::new(&cfg, 300, 300);
    let s_r = vec![0.9; 9];
    for id in 0..tset.len() {
        let a = Assignment::uniform(3, 3, id);
        assert_eq!(tracks_saved(&a, id, &tset, &cfg, &geom, &s_r), 0);
        let g = delta_c_grid(&a, id, &tset, &s_r).unwrap();
        assert!(g.values.iter().all(|&d| d == 0.0));
        assert_eq!(delta_c_t(&g, &s_r), 0.0);
    }
}

#[test]
fn only_critical_regions_count() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let geom = ChipGeometry::new(&cfg, 200, 200);
    let sparse = tset.len() - 1;
    let a = Assignment::uniform(2, 2, sparse);
    let s_r = [0.2, 0.5, 0.51, 1.2];
    let g = delta_c_grid(&a, 0, &tset, &s_r).unwrap();
    let (u0, ut) = (tset.get(0).utilization, tset.get(sparse).utilization);
    for (d, s) in g.values.iter().zip(&s_r) {
        assert!((d - (u0 - ut) / (s + u0) * 100.0).abs() < 1e-12);
    }
    assert!((delta_c_t(&g, &s_r) - (g.values[2] + g.values[3])).abs() < 1e-12);
    // s_r is row-major, so the critical regions are (1, 0) and (1, 1)
    let freed = |r, c| {
        region_tracks(tset.get(0), &cfg, &geom, r, c)
            - region_tracks(tset.get(sparse), &cfg, &geom, r, c)
    };
    assert!(freed(1, 0) > 0 && freed(1, 1) > 0);
    assert_eq!(
        tracks_saved(&a, 0, &tset, &cfg, &geom, &s_r),
        freed(1, 0) + freed(1, 1)
    );
}

#[test]
fn delta_domain_errors() {
    assert!(matches!(
        delta_c_r(0.0, 0.1, 0.0),
        Err(Error::DivisionDomain(_))
    ));
    assert!(matches!(
        delta_c_r(-0.1, 0.1, 0.5),
        Err(Error::DivisionDomain(_))
    ));
    assert_eq!(delta_c_r(0.2, 0.1, 0.8).unwrap(), 10.0);
    let cfg = lp65();
    let tset = templates(&cfg);
    assert!(matches!(
        delta_c_grid(&Assignment::uniform(2, 2, 0), 0, &tset, &[0.5; 3]),
        Err(Error::Validation { .. })
    ));
}

#[test]
fn idle_chip_baseline_is_the_sparsest_template() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let mut b = quiet(&bench(&cfg, 17, 0, 750.0));
    b.macros.data.fill(0.0);
    b.manifest.macros.clear();
    let sweep = baseline_sweep(&b, &cfg, &tset, Stage::Placement).unwrap();
    assert!(sweep.feasible);
    assert_eq!(sweep.baseline_id, tset.len() - 1);
    assert!(sweep
        .candidates
        .iter()
        .all(|c| c.safe && c.worst_dr == Some(0.0)));
}

#[test]
fn baseline_is_the_sparsest_safe_uniform() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = bench(&cfg, 17, 1, 1000.0);
    let sweep = baseline_sweep(&b, &cfg, &tset, Stage::Placement).unwrap();
    assert_eq!(sweep.candidates.len(), tset.len());
    assert!(sweep.feasible);
    let id = sweep.baseline_id;
    assert!(sweep.candidates[id].safe);
    assert!(sweep.candidates[id + 1..].iter().all(|c| !c.safe));
    let c = &sweep.candidates[id];
    assert!(c.worst_dr.unwrap() <= cfg.ir_limit_dc && c.worst_j.unwrap() <= cfg.em_limit_jc);

    let rep = evaluate(
        &b,
        &cfg,
        &tset,
        Stage::Placement,
        &Assignment::uniform(4, 4, id),
        None,
    )
    .unwrap();
    assert!(rep.safe);
    assert_eq!(rep.delta_c_t, 0.0);
    assert_eq!(rep.tracks_saved, 0);
    assert_eq!(rep.baseline, sweep);
}

#[test]
fn comparison_needs_matching_grids() {
    assert!(matches!(
        compare_assignments(&Assignment::uniform(2, 2, 0), &Assignment::uniform(2, 3, 0)),
        Err(Error::LabelMismatch(_))
    ));
    assert!(ConfusionMatrix::new(&[0, 1], &[0], 2).is_err());
    assert!(ConfusionMatrix::new(&[0, 2], &[0, 1], 2).is_err());
}

#[test]
fn heatmap_has_ppm_header_and_size() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.ppm");
    let g = RegionGrid {
        rows: 2,
        cols: 3,
        values: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
    };
    let m: Map2D = grid_to_map(&g, 4);
    assert_eq!((m.width, m.height), (12, 8));
    write_heatmap_ppm(&m, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    let header = b"P6\n12 8\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 12 * 8 * 3);
}

proptest! {
    #[test]
    fn safe_side_bounds_accuracy(pairs in prop::collection::vec((0usize..6, 0usize..6), 1..200)) {
        let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = ConfusionMatrix::new(&p, &t, 6).unwrap();
        prop_assert_eq!(m.total(), p.len());
        prop_assert!(m.safe_side_rate() >= m.accuracy());
        for (k, row) in m.counts.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), t.iter().filter(|&&x| x == k).count());
        }
    }

    #[test]
    fn disagreement_partitions_regions(vals in prop::collection::vec((0usize..9, 0usize..9), 12)) {
        let cnn = Assignment { rows: 3, cols: 4, values: vals.iter().map(|v| v.0).collect() };
        let sa = Assignment { rows: 3, cols: 4, values: vals.iter().map(|v| v.1).collect() };
        let d = compare_assignments(&cnn, &sa).unwrap();
        prop_assert_eq!(d.agreements + d.optimistic + d.pessimistic, 12);
        let flipped = compare_assignments(&sa, &cnn).unwrap();
        prop_assert_eq!(d.optimistic, flipped.pessimistic);
    }

    #[test]
    fn delta_grid_is_monotone_in_utilization(s in 0.0f64..1.5, a in 0usize..9, b in 0usize..9) {
        let cfg = lp65();
        let tset = templates(&cfg);
        let (a, b) = (a % tset.len(), b % tset.len());
        let g = delta_c_grid(&Assignment { rows: 1, cols: 2, values: vec![a, b] }, 0, &tset, &[s, s]).unwrap();
        let (ua, ub) = (tset.get(a).utilization, tset.get(b).utilization);
        prop_assert_eq!(ua < ub, g.values[0] > g.values[1]);
    }
}
