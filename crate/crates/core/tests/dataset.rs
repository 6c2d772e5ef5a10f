// SPDX-License-Identifier: Apache-2.0
mod common;

use common::*;
use pdnforge::bench::Stage;
use pdnforge::dataset::*;
use pdnforge::features::CHANNEL_NAMES;
use pdnforge::maps::Map2D;
use pdnforge::sa::{label_benchmark, SaParams};
use pdnforge::Error;

fn labeled() -> (
    pdnforge::config::TechnologyConfig,
    pdnforge::bench::Benchmark,
    LabeledDataset,
) {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = bench(&cfg, 18, 0, 500.0);
    let p = SaParams {
        cooling_rate: 0.7,
        seed: 3,
        ..SaParams::default()
    };
    let l = label_benchmark(&b, &cfg, &tset, &p, true);
    let ds = LabeledDataset::from_labels(&[l], &[(2, 2)], &cfg.name, tset.len(), 3);
    (cfg, b, ds)
}

#[test]
fn one_benchmark_gives_one_record_per_region_and_stage() {
    let (_, b, ds) = labeled();
    assert_eq!(ds.count(Stage::Floorplan), 4);
    assert_eq!(ds.count(Stage::Placement), 4);
    assert_eq!(ds.manifest.records, 8);
    let e = &ds.manifest.benchmarks[0];
    assert!(e.floorplan.ok && e.floorplan.feasible);
    let fp = ds.assignment(&b.manifest.name, Stage::Floorplan).unwrap();
    assert_eq!((fp.rows, fp.cols), (2, 2));
    assert!(ds.assignment("missing", Stage::Floorplan).is_none());
}

#[test]
fn dataset_round_trips() {
    let (_, _, ds) = labeled();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    assert_eq!(LabeledDataset::load(dir.path()).unwrap(), ds);
    let csv = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "benchmark,region_row,region_col,stage,template_id"
    );
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn record_count_mismatch_is_a_parse_error() {
    let (_, _, mut ds) = labeled();
    let dir = tempfile::tempdir().unwrap();
    ds.manifest.records += 1;
    ds.save(dir.path()).unwrap();
    assert!(matches!(
        LabeledDataset::load(dir.path()),
        Err(Error::Parse { .. })
    ));
}

#[test]
fn failed_stages_leave_no_records() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let mut b = bench(&cfg, 18, 1, 500.0);
    b.current_fp.data.iter_mut().for_each(|v| *v *= 50.0);
    let l = label_benchmark(
        &b,
        &cfg,
        &tset,
        &SaParams {
            cooling_rate: 0.7,
            ..SaParams::default()
        },
        true,
    );
    assert!(l.floorplan.is_err() && l.placement.is_none());
    let ds = LabeledDataset::from_labels(&[l], &[(2, 2)], &cfg.name, tset.len(), 0);
    assert!(ds.records.is_empty());
    let e = &ds.manifest.benchmarks[0];
    assert!(!e.floorplan.ok);
    assert!(e.floorplan.error.as_deref().unwrap().contains("IR/EM"));
}

#[test]
fn window_export_writes_every_channel() {
    let (cfg, b, ds) = labeled();
    let dir = tempfile::tempdir().unwrap();
    let n = export_windows(&ds, std::slice::from_ref(&b), &cfg, dir.path()).unwrap();
    assert_eq!(n, 8);
    let side = cfg.window_px();
    for (stage, channels) in [("floorplan", 4), ("placement", 5)] {
        let d = dir.path().join(&b.manifest.name).join(stage).join("1_0");
        for name in &CHANNEL_NAMES[..channels] {
            let m = Map2D::load(d.join(format!("{name}.pdnm"))).unwrap();
            assert_eq!((m.width, m.height), (side, side));
        }
        assert_eq!(std::fs::read_dir(&d).unwrap().count(), channels);
    }
}

#[test]
fn benchmark_dirs_are_sorted() {
    let cfg = lp65();
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["b", "a"].iter().enumerate() {
        bench(&cfg, 18, 10 + i as u64, 500.0)
            .save(dir.path().join(name))
            .unwrap();
    }
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let found = benchmark_dirs(dir.path()).unwrap();
    let names: Vec<_> = found
        .iter()
        .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["a", "b"]);
}
