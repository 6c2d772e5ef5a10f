// SPDX-License-Identifier: Apache-2.0
//! Static IR drop and EM analysis of an assembled [`PdnSystem`].
//!
//! The solve works on drops `D = vdd - V`. Because every conductance row of
//! G sums to the bump conductance at that node, `G V = J` is equivalent to
//! `G D = loads`, which avoids cancellation against the supply voltage.
//! Ideal pads are Dirichlet nodes with `D = 0`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::TechnologyConfig;
use crate::error::{Error, Result};
use crate::grid::{PdnSystem, NO_NODE};
use crate::maps::{Map2D, RegionGrid};
use crate::sparse::{norm2, Cholesky, CsrMatrix};

/// Largest accepted relative residual of the drop system.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmMode {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub vdd: f64,
    pub node_voltages: Vec<f64>,
    /// `vdd - V` per node.
    pub node_drops: Vec<f64>,
    /// Amps through each entry of `sys.segments`, a to b positive.
    pub segment_currents: Vec<f64>,
    /// A/cm^2 per segment.
    pub segment_density: Vec<f64>,
    pub ir_drop_map: Map2D,
    pub worst_dr_per_region: RegionGrid<f64>,
    pub j_per_region: RegionGrid<f64>,
    pub relative_residual: f64,
}

impl AnalysisResult {
    pub fn worst_dr(&self) -> f64 {
        self.worst_dr_per_region
            .values
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn worst_j(&self) -> f64 {
        self.j_per_region.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Factor and solve the system, then derive drops, segment currents and
/// per-region statistics (EM aggregated by mean).
pub fn solve(sys: &PdnSystem) -> Result<AnalysisResult> {
    solve_with(sys, EmMode::Mean)
}

pub fn solve_with(sys: &PdnSystem, mode: EmMode) -> Result<AnalysisResult> {
    let drops = solve_drops(sys)?;
    let n = sys.n();
    let (free, _) = free_nodes(sys);
    let residual = if free.is_empty() {
        0.0
    } else {
        // residual over the free rows of G D = loads
        let gd = sys.conductance.mul_vec(&drops);
        let r: Vec<f64> = free.iter().map(|&i| gd[i] - sys.loads[i]).collect();
        let b: Vec<f64> = free.iter().map(|&i| sys.loads[i]).collect();
        let nb = norm2(&b);
        if nb == 0.0 {
            norm2(&r)
        } else {
            norm2(&r) / nb
        }
    };
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::Solver(format!(
            "relative residual {residual:e} exceeds {RESIDUAL_TOL:e}"
        )));
    }

    let vdd = sys.vdd;
    let node_voltages: Vec<f64> = drops.iter().map(|d| vdd - d).collect();
    let segment_currents: Vec<f64> = sys
        .segments
        .iter()
        .map(|s| s.conductance * (drops[s.b] - drops[s.a]))
        .collect();
    let segment_density: Vec<f64> = sys
        .segments
        .iter()
        .zip(&segment_currents)
        .map(|(s, i)| i.abs() / sys.wire_area_cm2[s.layer as usize])
        .collect();

    let (rows, cols) = (sys.rows(), sys.cols());
    let mut worst = RegionGrid::filled(rows, cols, 0.0);
    let mut ir_map = Map2D::zeros(sys.geom.px_w, sys.geom.px_h, sys.geom.resolution);
    for r in 0..rows {
        for c in 0..cols {
            let stamp = sys.active_stamp(r, c);
            let map = &sys.region_nodes[r * cols + c];
            let mut d_r: f64 = 0.0;
            for &l in &stamp.load_nodes {
                let g = map[l as usize];
                if g != usize::MAX {
                    d_r = d_r.max(drops[g]);
                }
            }
            worst.set(r, c, d_r);
            let (x0, y0, x1, _) = sys.geom.region_pixels(r, c);
            let w = x1 - x0;
            for (k, &node) in stamp.pixel_node.iter().enumerate() {
                if node == NO_NODE {
                    continue;
                }
                let g = map[node as usize];
                if g != usize::MAX {
                    ir_map.set(x0 + k % w, y0 + k / w, drops[g]);
                }
            }
        }
    }
    debug_assert_eq!(node_voltages.len(), n);
    let mut res = AnalysisResult {
        vdd,
        node_voltages,
        node_drops: drops,
        segment_currents,
        segment_density,
        ir_drop_map: ir_map,
        worst_dr_per_region: worst,
        j_per_region: RegionGrid::filled(rows, cols, 0.0),
        relative_residual: residual,
    };
    res.j_per_region = em_density(&res, sys, mode);
    Ok(res)
}

/// Nodes that are not ideal pads, and the position of each node among
/// them (`usize::MAX` for pads).
fn free_nodes(sys: &PdnSystem) -> (Vec<usize>, Vec<usize>) {
    let n = sys.n();
    let mut fixed = vec![false; n];
    for &(node, g) in &sys.bump_nodes {
        if g.is_none() {
            fixed[node] = true;
        }
    }
    let mut local = vec![usize::MAX; n];
    let mut free = Vec::with_capacity(n);
    for i in 0..n {
        if !fixed[i] {
            local[i] = free.len();
            free.push(i);
        }
    }
    (free, local)
}

/// Node drops `vdd - V`.
pub fn solve_drops(sys: &PdnSystem) -> Result<Vec<f64>> {
    let n = sys.n();
    let (free, local) = free_nodes(sys);
    let mut drops = vec![0.0; n];
    if free.is_empty() {
        return Ok(drops);
    }
    let (a, order) = if free.len() == n {
        (sys.conductance.clone(), sys.ordering.clone())
    } else {
        let mut trip = Vec::new();
        for &i in &free {
            for (j, v) in sys.conductance.row(i) {
                if local[j] != usize::MAX {
                    trip.push((local[i], local[j], v));
                }
            }
        }
        let order = sys
            .ordering
            .iter()
            .filter_map(|&i| (local[i] != usize::MAX).then_some(local[i]))
            .collect();
        (CsrMatrix::from_triplets(free.len(), &trip), order)
    };
    let rhs: Vec<f64> = free.iter().map(|&i| sys.loads[i]).collect();
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(drops);
    }
    let chol = Cholesky::factor(&a, &order).map_err(Error::Solver)?;
    let x = chol.solve(&rhs);
    for (k, &i) in free.iter().enumerate() {
        drops[i] = x[k];
    }
    Ok(drops)
}

/// Per-region EM density from the segment currents, in A/cm^2.
pub fn em_density(res: &AnalysisResult, sys: &PdnSystem, mode: EmMode) -> RegionGrid<f64> {
    let (rows, cols) = (sys.rows(), sys.cols());
    let mut acc = vec![0.0; rows * cols];
    let mut count = vec![0usize; rows * cols];
    for (s, &j) in sys.segments.iter().zip(&res.segment_density) {
        let r = s.region.0 * cols + s.region.1;
        match mode {
            EmMode::Mean => acc[r] += j,
            EmMode::Max => acc[r] = f64::max(acc[r], j),
        }
        count[r] += 1;
    }
    if mode == EmMode::Mean {
        for (a, &c) in acc.iter_mut().zip(&count) {
            if c > 0 {
                *a /= c as f64;
            }
        }
    }
    RegionGrid {
        rows,
        cols,
        values: acc,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    IrDrop {
        row: usize,
        col: usize,
        d_r: f64,
        /// d_c - d_r, negative when violated.
        margin: f64,
    },
    Em {
        row: usize,
        col: usize,
        j_r: f64,
        margin: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub safe: bool,
    pub violations: Vec<Violation>,
}

pub fn is_safe(res: &AnalysisResult, cfg: &TechnologyConfig) -> SafetyReport {
    check_limits(
        &res.worst_dr_per_region,
        &res.j_per_region,
        cfg.ir_limit_dc,
        cfg.em_limit_jc,
    )
}

pub fn check_limits(
    d_r: &RegionGrid<f64>,
    j_r: &RegionGrid<f64>,
    d_c: f64,
    j_c: f64,
) -> SafetyReport {
    let mut violations = Vec::new();
    for ((row, col), &d) in d_r.iter_cells() {
        if d > d_c {
            violations.push(Violation::IrDrop {
                row,
                col,
                d_r: d,
                margin: d_c - d,
            });
        }
    }
    for ((row, col), &j) in j_r.iter_cells() {
        if j > j_c {
            violations.push(Violation::Em {
                row,
                col,
                j_r: j,
                margin: j_c - j,
            });
        }
    }
    SafetyReport {
        safe: violations.is_empty(),
        violations,
    }
}

/// Plain-text summary: worst values and a per-region table.
pub fn summary(res: &AnalysisResult, cfg: &TechnologyConfig) -> String {
    let safety = is_safe(res, cfg);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "status: {}",
        if safety.safe { "SAFE" } else { "VIOLATED" }
    );
    let _ = writeln!(
        s,
        "worst d_r: {:.4} mV (limit {:.4} mV)",
        res.worst_dr() * 1e3,
        cfg.ir_limit_dc * 1e3
    );
    let _ = writeln!(
        s,
        "worst J_r/J_c: {:.2}% (limit {:.3e} A/cm^2)",
        res.worst_j() / cfg.em_limit_jc * 100.0,
        cfg.em_limit_jc
    );
    let _ = writeln!(s, "relative residual: {:.3e}", res.relative_residual);
    let _ = writeln!(s, "row col d_r_mV j_norm_pct");
    for ((r, c), d) in res.worst_dr_per_region.iter_cells() {
        let j = res.j_per_region.get(r, c);
        let _ = writeln!(
            s,
            "{r} {c} {:.4} {:.2}",
            d * 1e3,
            j / cfg.em_limit_jc * 100.0
        );
    }
    for v in &safety.violations {
        match v {
            Violation::IrDrop {
                row,
                col,
                d_r,
                margin,
            } => {
                let _ = writeln!(
                    s,
                    "violation ir ({row}, {col}): d_r {:.4} mV, margin {:.4} mV",
                    d_r * 1e3,
                    margin * 1e3
                );
            }
            Violation::Em {
                row,
                col,
                j_r,
                margin,
            } => {
                let _ = writeln!(
                    s,
                    "violation em ({row}, {col}): J_r {j_r:.4e}, margin {margin:.4e} A/cm^2"
                );
            }
        }
    }
    s
}

/// Per-pixel J map: each region's pixels carry its J_r.
pub fn j_map(res: &AnalysisResult, sys: &PdnSystem) -> Map2D {
    let mut m = Map2D::zeros(sys.geom.px_w, sys.geom.px_h, sys.geom.resolution);
    for ((r, c), &j) in res.j_per_region.iter_cells() {
        let (x0, y0, x1, y1) = sys.geom.region_pixels(r, c);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, j);
            }
        }
    }
    m
}
