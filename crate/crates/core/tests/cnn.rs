// SPDX-License-Identifier: Apache-2.0
#![allow(clippy::needless_range_loop)]
mod common;

use common::*;
use pdnforge::bench::Stage;
use pdnforge::cnn::*;
use pdnforge::features::{extract_window, NormStats, RegionWindow};
use pdnforge::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_norm(c: usize) -> NormStats {
    NormStats {
        mean: vec![0.0; c],
        std: vec![1.0; c],
        degenerate: vec![false; c],
    }
}

fn small(stage: Stage, seed: u64) -> CnnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = stage.channels();
    CnnModel::random(
        stage,
        6,
        30,
        &[4, 6, 6, 6],
        &[5, 3, 3, 3],
        &[16],
        unit_norm(c),
        &mut rng,
    )
    .unwrap()
}

fn random_input(m: &CnnModel, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = m.meta.input_side;
    (0..m.meta.channels * s * s)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect()
}

/// Direct loops: zero-padded conv, ReLU, max-pool, then dense layers.
fn naive_forward(m: &CnnModel, input: &[f32]) -> Vec<f32> {
    let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let mut ch = m.meta.channels;
    let mut side = m.meta.input_side;
    for c in &m.convs {
        let (k, sp) = (c.kernel, c.spec);
        let cs = (side + 2 * sp.padding - k) / sp.stride + 1;
        let mut y = vec![0.0; c.out_channels * cs * cs];
        for o in 0..c.out_channels {
            for oy in 0..cs {
                for ox in 0..cs {
                    let mut acc = c.biases[o] as f64;
                    for i in 0..ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * sp.stride + ky) as i64 - sp.padding as i64;
                                let ix = (ox * sp.stride + kx) as i64 - sp.padding as i64;
                                if iy < 0 || ix < 0 || iy >= side as i64 || ix >= side as i64 {
                                    continue;
                                }
                                let w = c.weights[((o * ch + i) * k + ky) * k + kx] as f64;
                                acc += w * x[(i * side + iy as usize) * side + ix as usize];
                            }
                        }
                    }
                    y[(o * cs + oy) * cs + ox] = acc.max(0.0);
                }
            }
        }
        let ps = (cs - sp.pool) / sp.pool_stride + 1;
        let mut p = vec![0.0; c.out_channels * ps * ps];
        for o in 0..c.out_channels {
            for py in 0..ps {
                for px in 0..ps {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..sp.pool {
                        for dx in 0..sp.pool {
                            let (yy, xx) = (py * sp.pool_stride + dy, px * sp.pool_stride + dx);
                            best = best.max(y[(o * cs + yy) * cs + xx]);
                        }
                    }
                    p[(o * ps + py) * ps + px] = best;
                }
            }
        }
        x = p;
        ch = c.out_channels;
        side = ps;
    }
    for (li, f) in m.fcs.iter().enumerate() {
        let mut y = vec![0.0; f.outputs];
        for (o, out) in y.iter_mut().enumerate() {
            let mut acc = f.biases[o] as f64;
            for i in 0..f.inputs {
                acc += f.weights[o * f.inputs + i] as f64 * x[i];
            }
            *out = if li + 1 < m.fcs.len() {
                acc.max(0.0)
            } else {
                acc
            };
        }
        x = y;
    }
    x.into_iter().map(|v| v as f32).collect()
}

#[test]
fn forward_matches_naive_loops() {
    for stage in [Stage::Floorplan, Stage::Placement] {
        let m = small(stage, 1);
        for s in 0..5 {
            let x = random_input(&m, 100 + s);
            let got = m.forward_raw(&x).unwrap();
            let want = naive_forward(&m, &x);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn shipped_fixtures_reproduce() {
    for stage in ["floorplan", "placement"] {
        let model = CnnModel::load(fixture(&format!("{stage}_model.pdnw"))).unwrap();
        let fx = FixtureSet::load(fixture(&format!("{stage}_fixtures.pdnw"))).unwrap();
        assert!(fx.len() >= 20);
        let err = fx.max_abs_error(&model).unwrap();
        assert!(err <= 1e-4, "{stage}: {err}");
    }
}

#[test]
fn container_round_trips() {
    let m = small(Stage::Placement, 2);
    let bytes = m.to_container().to_bytes();
    let back = CnnModel::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back, m);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.pdnw");
    m.save(&p).unwrap();
    assert_eq!(CnnModel::load(&p).unwrap(), m);
}

#[test]
fn truncated_or_foreign_files_are_format_errors() {
    let bytes = small(Stage::Floorplan, 3).to_container().to_bytes();
    for cut in [3, 7, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Container::from_bytes(&bytes[..cut]), Err(Error::Format(_))),
            "cut at {cut}"
        );
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Container::from_bytes(&bad), Err(Error::Format(_))));
}

#[test]
fn mis_sized_fc1_names_the_layer() {
    let m = small(Stage::Floorplan, 4);
    let mut c = m.to_container();
    let fc1 = c.layers.iter_mut().find(|l| l.name == "fc1").unwrap();
    let out = fc1.dims[0];
    fc1.dims = vec![out, 9000];
    fc1.weights = vec![0.0; out * 9000];
    match CnnModel::from_container(c) {
        Err(Error::Shape { layer, .. }) => assert_eq!(layer, "fc1"),
        other => panic!("expected a shape error, got {other:?}"),
    }
}

#[test]
fn wrong_conv_input_channels_name_the_layer() {
    let m = small(Stage::Floorplan, 5);
    let mut c = m.to_container();
    let conv2 = c.layers.iter_mut().find(|l| l.name == "conv2").unwrap();
    conv2.dims[1] += 1;
    let n: usize = conv2.dims.iter().product();
    conv2.weights = vec![0.0; n];
    match CnnModel::from_container(c) {
        Err(Error::Shape { layer, .. }) => assert_eq!(layer, "conv2"),
        other => panic!("expected a shape error, got {other:?}"),
    }
}

#[test]
fn zero_weights_give_the_last_bias() {
    let mut m = small(Stage::Floorplan, 6);
    for c in &mut m.convs {
        c.weights.fill(0.0);
    }
    for f in &mut m.fcs {
        f.weights.fill(0.0);
    }
    let y = m.forward_raw(&random_input(&m, 7)).unwrap();
    assert_eq!(y, m.fcs.last().unwrap().biases);
}

#[test]
fn argmax_survives_positive_rescaling_of_the_output_layer() {
    let m = small(Stage::Floorplan, 8);
    let mut scaled = m.clone();
    let last = scaled.fcs.last_mut().unwrap();
    last.weights.iter_mut().for_each(|w| *w *= 3.5);
    last.biases.iter_mut().for_each(|b| *b *= 3.5);
    for s in 0..5 {
        let x = random_input(&m, 200 + s);
        assert_eq!(
            argmax(&m.forward_raw(&x).unwrap()),
            argmax(&scaled.forward_raw(&x).unwrap())
        );
    }
}

#[test]
fn full_size_parameter_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = CnnModel::random(
        Stage::Placement,
        8,
        300,
        &[32, 64, 64, 64],
        &[5, 3, 3, 3],
        &[1024],
        unit_norm(5),
        &mut rng,
    )
    .unwrap();
    let counts: Vec<usize> = m.param_counts().into_iter().map(|(_, n)| n).collect();
    assert_eq!(counts, [4032, 18496, 36928, 36928, 9438208, 8200]);
    assert_eq!(m.flatten_len(), 9216);
}

#[test]
fn wrong_window_shape_is_rejected() {
    let m = small(Stage::Floorplan, 10);
    let w = RegionWindow {
        channels: 5,
        side: 30,
        data: vec![0.0; 5 * 900],
        center_region: (0, 0),
        label: None,
    };
    assert!(matches!(m.forward(&w), Err(Error::Shape { .. })));
    assert!(matches!(
        m.forward_raw(&[0.0; 10]),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn forward_applies_stored_normalization() {
    let mut m = small(Stage::Floorplan, 11);
    m.meta.norm = NormStats {
        mean: vec![1.0, 2.0, 3.0, 4.0],
        std: vec![2.0, 0.5, 1.0, 4.0],
        degenerate: vec![false, false, true, false],
    };
    let raw = random_input(&m, 12);
    let w = RegionWindow {
        channels: 4,
        side: 30,
        data: raw.clone(),
        center_region: (0, 0),
        label: None,
    };
    let mut norm = raw.clone();
    for (c, chunk) in norm.chunks_mut(900).enumerate() {
        if c == 2 {
            continue;
        }
        let (mu, sd) = (m.meta.norm.mean[c], m.meta.norm.std[c]);
        for v in chunk {
            *v = ((*v as f64 - mu) / sd) as f32;
        }
    }
    assert_eq!(m.forward(&w).unwrap().logits, m.forward_raw(&norm).unwrap());
}

#[test]
fn region_predictions_are_order_stable() {
    let cfg = lp65();
    let b = bench(&cfg, 16, 0, 750.0);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let side = cfg.window_px();
    let m = CnnModel::random(
        Stage::Floorplan,
        9,
        side,
        &[4, 4, 4, 4],
        &[5, 3, 3, 3],
        &[8],
        unit_norm(4),
        &mut rng,
    )
    .unwrap();
    let stack = b.feature_stack(&cfg, Stage::Floorplan, None).unwrap();
    let par = predict_regions(&m, &stack, &cfg, 3, 3).unwrap();
    for (i, p) in par.iter().enumerate() {
        let seq = m
            .forward(&extract_window(&stack, &cfg, i / 3, i % 3))
            .unwrap();
        assert_eq!(p, &seq);
    }
    assert_eq!(par, predict_regions(&m, &stack, &cfg, 3, 3).unwrap());
}

#[test]
fn synthesis_checks_class_count() {
    let cfg = lp65();
    let tset = templates(&cfg);
    let b = bench(&cfg, 16, 1, 500.0);
    let side = cfg.window_px();
    let mk = |stage: Stage, classes: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        CnnModel::random(
            stage,
            classes,
            side,
            &[4, 4, 4, 4],
            &[5, 3, 3, 3],
            &[8],
            unit_norm(stage.channels()),
            &mut rng,
        )
        .unwrap()
    };
    let (fp, pl) = (
        mk(Stage::Floorplan, tset.len()),
        mk(Stage::Placement, tset.len()),
    );
    let s = synthesize(&b, &cfg, &tset, &fp, &pl).unwrap();
    assert_eq!((s.floorplan.rows, s.placement.values.len()), (2, 4));
    assert!(s.placement.values.iter().all(|&t| t < tset.len()));
    let wrong = mk(Stage::Floorplan, tset.len() + 1);
    assert!(matches!(
        synthesize(&b, &cfg, &tset, &wrong, &pl),
        Err(Error::LabelMismatch(_))
    ));
    assert!(matches!(
        synthesize(&b, &cfg, &tset, &pl, &pl),
        Err(Error::Validation { .. })
    ));
}
