// SPDX-License-Identifier: Apache-2.0
//! Evaluation against uniform baselines: congestion improvement, freed
//! routing tracks, confusion matrices and SA-vs-CNN comparisons.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{Benchmark, Stage};
use crate::config::{Direction, Nm, TechnologyConfig};
use crate::error::{Error, Result};
use crate::grid::{Assignment, ChipGeometry};
use crate::maps::{Map2D, RegionGrid};
use crate::sa::fresh_system;
use crate::solver::{is_safe, solve, Violation};
use crate::templates::{Template, TemplateSet};

/// Regions whose mean signal congestion exceeds this count as critical.
pub const CRITICAL_CONGESTION: f64 = 0.5;

/// Percent congestion improvement of one region.
pub fn delta_c_r(u_b: f64, u_t: f64, s: f64) -> Result<f64> {
    if u_b < 0.0 || u_t < 0.0 || s < 0.0 {
        return Err(Error::DivisionDomain(format!(
            "negative input: u_b={u_b}, u_t={u_t}, s={s}"
        )));
    }
    let den = s + u_b;
    if !(den > 0.0) {
        return Err(Error::DivisionDomain("s + u_b is zero".into()));
    }
    Ok((u_b - u_t) / den * 100.0)
}

/// Per-region improvement of `assignment` over the uniform `baseline_id`.
pub fn delta_c_grid(
    assignment: &Assignment,
    baseline_id: usize,
    tset: &TemplateSet,
    s_r: &[f64],
) -> Result<RegionGrid<f64>> {
    if s_r.len() != assignment.len() {
        return Err(Error::validation(
            "congestion",
            "one value per region expected",
        ));
    }
    let u_b = tset.get(baseline_id).utilization;
    let values = assignment
        .values
        .iter()
        .zip(s_r)
        .map(|(&id, &s)| delta_c_r(u_b, tset.get(id).utilization, s))
        .collect::<Result<_>>()?;
    Ok(RegionGrid {
        rows: assignment.rows,
        cols: assignment.cols,
        values,
    })
}

/// Sum of the grid over critical regions.
pub fn delta_c_t(grid: &RegionGrid<f64>, s_r: &[f64]) -> f64 {
    grid.values
        .iter()
        .zip(s_r)
        .filter(|(_, &s)| s > CRITICAL_CONGESTION)
        .map(|(d, _)| d)
        .sum()
}

/// Number of lattice stripes `offset + k * pitch` in [lo, hi).
fn lattice_count(offset: Nm, pitch: Nm, lo: Nm, hi: Nm) -> i64 {
    // first k with offset + k*pitch >= x
    let first = |x: Nm| -> i64 {
        let d = x - offset;
        if d <= 0 {
            0
        } else {
            (d + pitch - 1) / pitch
        }
    };
    (first(hi) - first(lo)).max(0)
}

/// Routing tracks a template occupies in one region, summed over layers.
pub fn region_tracks(
    t: &Template,
    cfg: &TechnologyConfig,
    geom: &ChipGeometry,
    row: usize,
    col: usize,
) -> i64 {
    let (x0, y0, x1, y1) = geom.region_box(row, col);
    let mut total = 0;
    for (l, layer) in cfg.pdn_layers.iter().enumerate() {
        let pitch = t.pitch_nm(cfg, l);
        let offset = crate::config::to_nm(layer.pitch_dense) / 2;
        // horizontal stripes sit at fixed y, vertical ones at fixed x
        let n = match layer.direction {
            Direction::Horizontal => lattice_count(offset, pitch, y0, y1),
            Direction::Vertical => lattice_count(offset, pitch, x0, x1),
        };
        total += n * layer.tracks_per_stripe() as i64;
    }
    total
}

/// Tracks freed in critical regions relative to the uniform baseline.
pub fn tracks_saved(
    assignment: &Assignment,
    baseline_id: usize,
    tset: &TemplateSet,
    cfg: &TechnologyConfig,
    geom: &ChipGeometry,
    s_r: &[f64],
) -> i64 {
    let base = tset.get(baseline_id);
    let mut saved = 0;
    for ((row, col), &id) in assignment.iter_cells() {
        if s_r[row * assignment.cols + col] > CRITICAL_CONGESTION {
            saved += region_tracks(base, cfg, geom, row, col)
                - region_tracks(tset.get(id), cfg, geom, row, col);
        }
    }
    saved
}

/// One uniform candidate in the baseline sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformResult {
    pub id: usize,
    pub safe: bool,
    /// `None` when the uniform PDN leaves a load unpowered.
    pub worst_dr: Option<f64>,
    pub worst_j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSweep {
    pub baseline_id: usize,
    /// False when no uniform template passes; the baseline is then ID 0.
    pub feasible: bool,
    pub candidates: Vec<UniformResult>,
}

/// Evaluate every uniform assignment and pick the sparsest safe one.
pub fn baseline_sweep(
    bench: &Benchmark,
    cfg: &TechnologyConfig,
    tset: &TemplateSet,
    stage: Stage,
) -> Result<BaselineSweep> {
    let mut candidates = Vec::with_capacity(tset.len());
    for id in 0..tset.len() {
        let a = Assignment::uniform(bench.rows(), bench.cols(), id);
        let sys = match fresh_system(bench, cfg, tset, stage, &a) {
            Ok(s) => s,
            Err(Error::Disconnected { .. }) => {
                candidates.push(UniformResult {
                    id,
                    safe: false,
                    worst_dr: None,
                    worst_j: None,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let res = solve(&sys)?;
        candidates.push(UniformResult {
            id,
            safe: is_safe(&res, cfg).safe,
            worst_dr: Some(res.worst_dr()),
            worst_j: Some(res.worst_j()),
        });
    }
    let best = candidates.iter().rev().find(|c| c.safe).map(|c| c.id);
    Ok(BaselineSweep {
        baseline_id: best.unwrap_or(0),
        feasible: best.is_some(),
        candidates,
    })
}

/// Rows are true labels, columns predictions; ID 0 is the densest class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::LabelMismatch(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut counts = vec![vec![0; classes]; classes];
        for (&p, &t) in predictions.iter().zip(labels) {
            if p >= classes || t >= classes {
                return Err(Error::LabelMismatch(format!(
                    "class {} out of range for {classes} templates",
                    p.max(t)
                )));
            }
            counts[t][p] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: usize = (0..self.classes).map(|i| self.counts[i][i]).sum();
        ratio(diag, self.total())
    }

    /// Share of predictions that are correct or denser than the label.
    pub fn safe_side_rate(&self) -> f64 {
        let safe: usize = (0..self.classes)
            .map(|t| self.counts[t][..=t].iter().sum::<usize>())
            .sum();
        ratio(safe, self.total())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("rows: true id, columns: predicted id (0 = densest)\n");
        s.push_str("true\\pred");
        for p in 0..self.classes {
            s.push_str(&format!("{p:>6}"));
        }
        s.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            s.push_str(&format!("{t:>9}"));
            for c in row {
                s.push_str(&format!("{c:>6}"));
            }
            s.push('\n');
        }
        s.push_str(&format!(
            "accuracy {:.2}%  safe-side {:.2}%\n",
            100.0 * self.accuracy(),
            100.0 * self.safe_side_rate()
        ));
        s
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Region-wise disagreement between a CNN assignment and the SA label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub agreements: usize,
    /// CNN picked a sparser (higher-resistance) template than SA.
    pub optimistic: usize,
    /// CNN picked a denser template than SA.
    pub pessimistic: usize,
}

pub fn compare_assignments(cnn: &Assignment, sa: &Assignment) -> Result<Disagreement> {
    if cnn.rows != sa.rows || cnn.cols != sa.cols {
        return Err(Error::LabelMismatch(
            "assignments have different region grids".into(),
        ));
    }
    let mut d = Disagreement {
        agreements: 0,
        optimistic: 0,
        pessimistic: 0,
    };
    for (&c, &s) in cnn.values.iter().zip(&sa.values) {
        match c.cmp(&s) {
            std::cmp::Ordering::Equal => d.agreements += 1,
            std::cmp::Ordering::Greater => d.optimistic += 1,
            std::cmp::Ordering::Less => d.pessimistic += 1,
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaComparison {
    pub disagreement: Disagreement,
    pub sa_delta_c_t: f64,
    pub sa_worst_dr: Option<f64>,
    pub sa_worst_j_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub benchmark: String,
    pub stage: Stage,
    pub baseline: BaselineSweep,
    pub delta_c_r: RegionGrid<f64>,
    pub delta_c_t: f64,
    pub tracks_saved: i64,
    /// Volts.
    pub worst_dr: f64,
    /// Percent of J_c.
    pub worst_j_norm: f64,
    pub safe: bool,
    pub violations: Vec<Violation>,
    pub sa: Option<SaComparison>,
    /// Seconds per phase.
    pub runtimes: Vec<(String, f64)>,
    #[serde(skip)]
    pub ir_drop_map: Option<Map2D>,
}

/// Full evaluation of one assignment.
pub fn evaluate(
    bench: &Benchmark,
    cfg: &TechnologyConfig,
    tset: &TemplateSet,
    stage: Stage,
    assignment: &Assignment,
    sa_label: Option<&Assignment>,
) -> Result<EvalReport> {
    let mut runtimes = Vec::new();
    let t = std::time::Instant::now();
    let baseline = baseline_sweep(bench, cfg, tset, stage)?;
    runtimes.push(("baseline_sweep".to_string(), t.elapsed().as_secs_f64()));

    let t = std::time::Instant::now();
    let sys = fresh_system(bench, cfg, tset, stage, assignment)?;
    let res = solve(&sys)?;
    let safety = is_safe(&res, cfg);
    runtimes.push(("analysis".to_string(), t.elapsed().as_secs_f64()));

    let s_r = bench.region_congestion(cfg, stage);
    let geom = sys.geom.clone();
    let grid = delta_c_grid(assignment, baseline.baseline_id, tset, &s_r)?;
    let dct = delta_c_t(&grid, &s_r);
    let saved = tracks_saved(assignment, baseline.baseline_id, tset, cfg, &geom, &s_r);

    let sa = match sa_label {
        None => None,
        Some(label) => {
            let disagreement = compare_assignments(assignment, label)?;
            let g = delta_c_grid(label, baseline.baseline_id, tset, &s_r)?;
            let (wd, wj) =
                match fresh_system(bench, cfg, tset, stage, label).and_then(|s| solve(&s)) {
                    Ok(r) => (
                        Some(r.worst_dr()),
                        Some(100.0 * r.worst_j() / cfg.em_limit_jc),
                    ),
                    Err(Error::Disconnected { .. }) => (None, None),
                    Err(e) => return Err(e),
                };
            Some(SaComparison {
                disagreement,
                sa_delta_c_t: delta_c_t(&g, &s_r),
                sa_worst_dr: wd,
                sa_worst_j_norm: wj,
            })
        }
    };

    Ok(EvalReport {
        benchmark: bench.manifest.name.clone(),
        stage,
        baseline,
        delta_c_r: grid,
        delta_c_t: dct,
        tracks_saved: saved,
        worst_dr: res.worst_dr(),
        worst_j_norm: 100.0 * res.worst_j() / cfg.em_limit_jc,
        safe: safety.safe,
        violations: safety.violations,
        sa,
        runtimes,
        ir_drop_map: Some(res.ir_drop_map),
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("benchmark      {}\n", self.benchmark));
        s.push_str(&format!("stage          {}\n", self.stage.as_str()));
        s.push_str(&format!(
            "baseline       template {}{}\n",
            self.baseline.baseline_id,
            if self.baseline.feasible {
                ""
            } else {
                " (no uniform template is safe)"
            }
        ));
        s.push_str(&format!("delta_c_t      {:.3} %\n", self.delta_c_t));
        s.push_str(&format!("tracks_saved   {}\n", self.tracks_saved));
        s.push_str(&format!("worst d_r      {:.3} mV\n", self.worst_dr * 1e3));
        s.push_str(&format!("worst J_norm   {:.2} %\n", self.worst_j_norm));
        s.push_str(&format!(
            "status         {}\n",
            if self.safe { "SAFE" } else { "VIOLATED" }
        ));
        for v in &self.violations {
            s.push_str(&format!("  {v:?}\n"));
        }
        if let Some(sa) = &self.sa {
            let d = sa.disagreement;
            s.push_str(&format!(
                "vs SA label    agree {} optimistic {} pessimistic {}, SA delta_c_t {:.3} %\n",
                d.agreements, d.optimistic, d.pessimistic, sa.sa_delta_c_t
            ));
        }
        s.push_str("delta_c_r (%), top row = highest y\n");
        for r in (0..self.delta_c_r.rows).rev() {
            for c in 0..self.delta_c_r.cols {
                s.push_str(&format!("{:>8.2}", self.delta_c_r.get(r, c)));
            }
            s.push('\n');
        }
        s.push_str("uniform sweep\n  id  safe  worst d_r (mV)\n");
        for c in &self.baseline.candidates {
            let d = c
                .worst_dr
                .map(|v| format!("{:.3}", v * 1e3))
                .unwrap_or_else(|| "disconnected".into());
            s.push_str(&format!("{:>4}  {:<5} {d}\n", c.id, c.safe));
        }
        s
    }

    /// `region_row,region_col,delta_c_r` rows.
    pub fn write_delta_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let io = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["region_row", "region_col", "delta_c_r"])
            .map_err(io)?;
        for ((r, c), v) in self.delta_c_r.iter_cells() {
            w.write_record([r.to_string(), c.to_string(), format!("{v}")])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Render a map as a binary PPM heat map, low values blue, high red. Row
/// 0 of the map is drawn at the bottom.
pub fn write_heatmap_ppm(map: &Map2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (lo, hi) = (map.min(), map.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    for y in (0..map.height).rev() {
        for x in 0..map.width {
            let t = ((map.get(x, y) - lo) / span).clamp(0.0, 1.0);
            let r = (255.0 * t) as u8;
            let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8;
            let b = (255.0 * (1.0 - t)) as u8;
            out.extend_from_slice(&[r, g, b]);
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Region grid scaled up to `cell` pixels per region, for plotting.
pub fn grid_to_map(grid: &RegionGrid<f64>, cell: usize) -> Map2D {
    let mut m = Map2D::zeros(grid.cols * cell, grid.rows * cell, 1.0);
    for ((r, c), &v) in grid.iter_cells() {
        for y in r * cell..(r + 1) * cell {
            for x in c * cell..(c + 1) * cell {
                m.set(x, y, v);
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_examples() {
        assert!((delta_c_r(0.3, 0.2, 0.5).unwrap() - 12.5).abs() < 1e-12);
        assert_eq!(delta_c_r(0.2, 0.2, 0.7).unwrap(), 0.0);
        assert!(delta_c_r(0.1, 0.2, 0.5).unwrap() < 0.0);
        assert!(matches!(
            delta_c_r(0.0, 0.1, 0.0),
            Err(Error::DivisionDomain(_))
        ));
    }

    #[test]
    fn lattice_counting() {
        // stripes at 25, 75, 125, ...
        assert_eq!(lattice_count(25, 50, 0, 250), 5);
        assert_eq!(lattice_count(25, 100, 0, 250), 3);
        assert_eq!(lattice_count(25, 100, 250, 500), 2);
        assert_eq!(lattice_count(25, 50, 75, 76), 1);
        assert_eq!(lattice_count(25, 50, 76, 125), 0);
    }

    #[test]
    fn confusion_examples() {
        let m = ConfusionMatrix::new(&[0, 0, 0, 0], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(m.safe_side_rate(), 1.0);
        assert_eq!(m.accuracy(), 0.25);
        let m = ConfusionMatrix::new(&[2, 1], &[1, 1], 3).unwrap();
        assert_eq!(m.safe_side_rate(), 0.5);
        assert!(ConfusionMatrix::new(&[3], &[0], 3).is_err());
    }
}
