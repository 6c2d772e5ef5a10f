// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pdnforge::bench::{benchmark_seed, generate_benchmark, Benchmark, GenParams};
use pdnforge::config::TechnologyConfig;
use pdnforge::grid::PdnSystem;
use pdnforge::templates::{build_template_set, TemplateSet};

pub fn config(name: &str) -> TechnologyConfig {
    TechnologyConfig::load(format!(
        "{}/../../configs/{name}.json",
        env!("CARGO_MANIFEST_DIR")
    ))
    .expect("shipped config loads")
}

pub fn lp65() -> TechnologyConfig {
    config("65lp")
}

pub fn templates(cfg: &TechnologyConfig) -> TemplateSet {
    build_template_set(cfg, None).expect("template set")
}

pub fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Benchmark `index` of corpus `master` on a square die of `die` um.
pub fn bench(cfg: &TechnologyConfig, master: u64, index: u64, die: f64) -> Benchmark {
    let mut p = GenParams::for_technology(cfg);
    p.seed = benchmark_seed(master, index);
    p.die_size = die;
    generate_benchmark(cfg, &p, &format!("b{index:02}")).expect("benchmark generates")
}

/// Same benchmark with every current and congestion value set to zero.
pub fn quiet(b: &Benchmark) -> Benchmark {
    let mut q = b.clone();
    for m in [
        &mut q.current,
        &mut q.current_fp,
        &mut q.congestion,
        &mut q.congestion_fp,
    ] {
        m.data.fill(0.0);
    }
    q
}

/// Node drops by dense LU on the free nodes (ideal pads fixed at zero).
pub fn dense_drops(sys: &PdnSystem) -> Vec<f64> {
    let n = sys.n();
    let mut fixed = vec![false; n];
    for &(node, g) in &sys.bump_nodes {
        if g.is_none() {
            fixed[node] = true;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    let mut local = vec![usize::MAX; n];
    for (k, &i) in free.iter().enumerate() {
        local[i] = k;
    }
    let m = free.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for &i in &free {
        for (j, v) in sys.conductance.row(i) {
            if local[j] != usize::MAX {
                a[(local[i], local[j])] += v;
            }
        }
    }
    let b = DVector::from_iterator(m, free.iter().map(|&i| sys.loads[i]));
    let x = a.lu().solve(&b).expect("dense solve");
    let mut out = vec![0.0; n];
    for (k, &i) in free.iter().enumerate() {
        out[i] = x[k];
    }
    out
}

pub fn rel_err(x: &[f64], y: &[f64]) -> f64 {
    let num: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = y.iter().map(|b| b * b).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
