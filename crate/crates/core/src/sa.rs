// SPDX-License-Identifier: Apache-2.0
//! Simulated annealing over per-region template assignments.
//!
//! Cost per region is `c_r + d_r/d_c + J_r/J_c` (plus the pitch distance to
//! the floorplan solution in placement mode), where `c_r` is the region's
//! congestion plus the template utilization. Each slack violation adds
//! `alpha * max(0, -slack)`.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{derive_seed, Benchmark, Stage};
use crate::config::TechnologyConfig;
use crate::error::{Error, Result};
use crate::grid::{assemble, assemble_with, Assignment, PdnSystem, StampPolicy};
use crate::maps::RegionGrid;
use crate::solver::solve;
use crate::templates::TemplateSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaParams {
    /// `None` calibrates T0 for about 80% initial acceptance.
    pub initial_temperature: Option<f64>,
    pub cooling_rate: f64,
    /// `None` means 4 moves per region.
    pub moves_per_temperature: Option<usize>,
    /// Stop when T drops below `T0 * min_temperature_ratio`.
    pub min_temperature_ratio: f64,
    pub alpha_congestion: f64,
    pub alpha_ir: f64,
    pub alpha_em: f64,
    /// Target initial acceptance ratio for T0 calibration.
    pub initial_acceptance: f64,
    pub calibration_moves: usize,
    /// Compare incremental against fresh assembly every this many accepted
    /// moves (0 disables).
    pub check_interval: usize,
    pub seed: u64,
}

impl Default for SaParams {
    fn default() -> Self {
        Self {
            initial_temperature: None,
            cooling_rate: 0.95,
            moves_per_temperature: None,
            min_temperature_ratio: 1e-4,
            alpha_congestion: 100.0,
            alpha_ir: 200.0,
            alpha_em: 200.0,
            initial_acceptance: 0.8,
            calibration_moves: 40,
            check_interval: 250,
            seed: 0,
        }
    }
}

impl SaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return Err(Error::validation("cooling_rate", "must be in (0, 1)"));
        }
        if !(self.min_temperature_ratio > 0.0 && self.min_temperature_ratio < 1.0) {
            return Err(Error::validation(
                "min_temperature_ratio",
                "must be in (0, 1)",
            ));
        }
        for (n, a) in [
            ("alpha_congestion", self.alpha_congestion),
            ("alpha_ir", self.alpha_ir),
            ("alpha_em", self.alpha_em),
        ] {
            if !(a > 0.0) {
                return Err(Error::validation(n, "must be > 0"));
            }
        }
        if let Some(t) = self.initial_temperature {
            if !(t > 0.0) {
                return Err(Error::validation("initial_temperature", "must be > 0"));
            }
        }
        if !(self.initial_acceptance > 0.0 && self.initial_acceptance < 1.0) {
            return Err(Error::validation("initial_acceptance", "must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Inputs to one region's cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionTerms {
    /// Mean congestion s_r.
    pub congestion: f64,
    pub utilization: f64,
    pub d_norm: f64,
    pub j_norm: f64,
    pub delta_p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCost {
    pub c_r: f64,
    pub d_norm: f64,
    pub j_norm: f64,
    pub delta_p: f64,
    pub penalty_congestion: f64,
    pub penalty_ir: f64,
    pub penalty_em: f64,
}

impl RegionCost {
    pub fn total(&self) -> f64 {
        self.c_r
            + self.d_norm
            + self.j_norm
            + self.delta_p
            + self.penalty_congestion
            + self.penalty_ir
            + self.penalty_em
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub regions: Vec<RegionCost>,
    pub total: f64,
    /// No IR or EM slack is violated. Congestion is a soft constraint.
    pub feasible: bool,
}

impl CostBreakdown {
    pub fn from_terms(terms: &[RegionTerms], p: &SaParams) -> Self {
        let mut regions = Vec::with_capacity(terms.len());
        let mut feasible = true;
        for t in terms {
            let c_r = t.congestion + t.utilization;
            let pc = p.alpha_congestion * (c_r - 1.0).max(0.0);
            let pi = p.alpha_ir * (t.d_norm - 1.0).max(0.0);
            let pe = p.alpha_em * (t.j_norm - 1.0).max(0.0);
            feasible &= t.d_norm <= 1.0 && t.j_norm <= 1.0;
            regions.push(RegionCost {
                c_r,
                d_norm: t.d_norm,
                j_norm: t.j_norm,
                delta_p: t.delta_p.unwrap_or(0.0),
                penalty_congestion: pc,
                penalty_ir: pi,
                penalty_em: pe,
            });
        }
        let total = regions.iter().map(RegionCost::total).sum();
        Self {
            regions,
            total,
            feasible,
        }
    }

    fn infinite(n: usize) -> Self {
        Self {
            regions: Vec::with_capacity(n),
            total: f64::INFINITY,
            feasible: false,
        }
    }
}

/// `(1/L) * sum_l |pF_l - p_l| / pF_l` over the variable layers.
pub fn pitch_distance(cfg: &TechnologyConfig, tset: &TemplateSet, fp: usize, pl: usize) -> f64 {
    let vars = cfg.variable_indices();
    let (a, b) = (tset.get(fp), tset.get(pl));
    let s: f64 = vars
        .iter()
        .map(|&l| (a.pitches[l] - b.pitches[l]).abs() / a.pitches[l])
        .sum();
    s / vars.len() as f64
}

/// Everything the cost needs besides the electrical solve.
pub struct CostContext<'a> {
    pub cfg: &'a TechnologyConfig,
    pub tset: &'a TemplateSet,
    pub congestion: Vec<f64>,
    pub fp_assignment: Option<&'a Assignment>,
    pub params: &'a SaParams,
}

impl CostContext<'_> {
    pub fn new<'a>(
        bench: &Benchmark,
        cfg: &'a TechnologyConfig,
        tset: &'a TemplateSet,
        stage: Stage,
        fp_assignment: Option<&'a Assignment>,
        params: &'a SaParams,
    ) -> Result<CostContext<'a>> {
        if stage == Stage::Placement && fp_assignment.is_none() {
            return Err(Error::validation(
                "fp_assignment",
                "placement mode needs the floorplan assignment",
            ));
        }
        Ok(CostContext {
            cfg,
            tset,
            congestion: bench.region_congestion(cfg, stage),
            fp_assignment: if stage == Stage::Placement {
                fp_assignment
            } else {
                None
            },
            params,
        })
    }

    /// Cost of the assignment currently materialized in `sys`.
    pub fn evaluate(&self, sys: &PdnSystem) -> Result<CostBreakdown> {
        let res = solve(sys)?;
        let a = &sys.assignment;
        let mut terms = Vec::with_capacity(a.len());
        for ((r, c), &t) in a.iter_cells() {
            let delta_p = self
                .fp_assignment
                .map(|fp| pitch_distance(self.cfg, self.tset, *fp.get(r, c), t));
            terms.push(RegionTerms {
                congestion: self.congestion[r * a.cols + c],
                utilization: self.tset.get(t).utilization,
                d_norm: res.worst_dr_per_region.get(r, c) / self.cfg.ir_limit_dc,
                j_norm: res.j_per_region.get(r, c) / self.cfg.em_limit_jc,
                delta_p,
            });
        }
        Ok(CostBreakdown::from_terms(&terms, self.params))
    }
}

/// Cost of an assignment by fresh assembly.
pub fn cost(
    assignment: &Assignment,
    bench: &Benchmark,
    cfg: &TechnologyConfig,
    tset: &TemplateSet,
    stage: Stage,
    fp_assignment: Option<&Assignment>,
    params: &SaParams,
) -> Result<CostBreakdown> {
    let ctx = CostContext::new(bench, cfg, tset, stage, fp_assignment, params)?;
    let sys = fresh_system(bench, cfg, tset, stage, assignment)?;
    ctx.evaluate(&sys)
}

/// Assemble only the assigned templates.
pub fn fresh_system(
    bench: &Benchmark,
    cfg: &TechnologyConfig,
    tset: &TemplateSet,
    stage: Stage,
    assignment: &Assignment,
) -> Result<PdnSystem> {
    let (cur, _) = bench.stage_maps(stage);
    assemble_with(
        cfg,
        &tset.templates,
        assignment,
        cur,
        &bench.macros,
        bench.bumps(),
        StampPolicy::AssignedOnly,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub temperature: f64,
    pub cost: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct AnnealResult {
    pub assignment: Assignment,
    pub breakdown: CostBreakdown,
    pub feasible: bool,
    pub trace: Vec<TraceEntry>,
    pub initial_temperature: f64,
    /// Electrical solves performed (cache misses).
    pub solves: usize,
    pub elapsed: Duration,
}

/// Cost evaluation with a per-assignment cache on top of an incrementally
/// updated system.
struct Evaluator<'a> {
    ctx: CostContext<'a>,
    sys: PdnSystem,
    cache: HashMap<Vec<u16>, CostBreakdown>,
    solves: usize,
}

fn key(a: &Assignment) -> Vec<u16> {
    a.values.iter().map(|&v| v as u16).collect()
}

impl Evaluator<'_> {
    fn eval(&mut self, a: &Assignment) -> Result<CostBreakdown> {
        let k = key(a);
        if let Some(c) = self.cache.get(&k) {
            return Ok(c.clone());
        }
        let diff: Vec<usize> = (0..a.len())
            .filter(|&i| a.values[i] != self.sys.assignment.values[i])
            .collect();
        let moved = if diff.len() == 1 {
            let i = diff[0];
            self.sys.restamp_region(i / a.cols, i % a.cols, a.values[i])
        } else if diff.is_empty() {
            Ok(())
        } else {
            self.sys.set_assignment(a)
        };
        let out = match moved {
            Ok(()) => {
                self.solves += 1;
                self.ctx.evaluate(&self.sys)?
            }
            Err(Error::Disconnected { .. } | Error::StampMissing { .. }) => {
                CostBreakdown::infinite(a.len())
            }
            Err(e) => return Err(e),
        };
        self.cache.insert(k, out.clone());
        Ok(out)
    }
}

/// Anneal one benchmark at one stage.
pub fn anneal(
    bench: &Benchmark,
    cfg: &TechnologyConfig,
    tset: &TemplateSet,
    stage: Stage,
    params: &SaParams,
    fp_assignment: Option<&Assignment>,
) -> Result<AnnealResult> {
    params.validate()?;
    let start = Instant::now();
    let ctx = CostContext::new(bench, cfg, tset, stage, fp_assignment, params)?;
    let (rows, cols) = (bench.rows(), bench.cols());
    let n_regions = rows * cols;
    let n_t = tset.len();
    let densest = Assignment::uniform(rows, cols, 0);
    let (cur_map, _) = bench.stage_maps(stage);
    let sys = assemble(
        cfg,
        &tset.templates,
        &densest,
        cur_map,
        &bench.macros,
        bench.bumps(),
    )?;
    let mut ev = Evaluator {
        ctx,
        sys,
        cache: HashMap::new(),
        solves: 0,
    };

    let dense_cost = ev.eval(&densest)?;
    if !dense_cost.feasible {
        return Err(Error::Infeasible(format!(
            "uniform densest template violates IR/EM on `{}`",
            bench.manifest.name
        )));
    }

    let mut state = densest.clone();
    let mut state_cost = dense_cost.clone();
    if let Some(fp) = ev.ctx.fp_assignment {
        let c = ev.eval(fp)?;
        if c.feasible {
            state = fp.clone();
            state_cost = c;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best = (state.clone(), state_cost.clone());
    let mut best_feasible = state_cost.feasible.then(|| best.clone());

    if n_t < 2 || n_regions == 0 {
        return Ok(AnnealResult {
            assignment: state,
            feasible: state_cost.feasible,
            breakdown: state_cost,
            trace: Vec::new(),
            initial_temperature: 0.0,
            solves: ev.solves,
            elapsed: start.elapsed(),
        });
    }

    let propose = |rng: &mut ChaCha8Rng, s: &Assignment| {
        let mut next = s.clone();
        let i = rng.random_range(0..n_regions);
        let mut t = rng.random_range(0..n_t - 1);
        if t >= s.values[i] {
            t += 1;
        }
        next.values[i] = t;
        next
    };

    let t0 = match params.initial_temperature {
        Some(t) => t,
        None => {
            // deltas along an unbiased random walk; sampling only around the
            // densest start would see almost nothing but downhill moves
            let mut deltas = Vec::new();
            let mut walk = state.clone();
            let mut walk_cost = state_cost.total;
            for _ in 0..params.calibration_moves {
                let cand = propose(&mut rng, &walk);
                let c = ev.eval(&cand)?;
                if c.total.is_finite() {
                    deltas.push(c.total - walk_cost);
                    walk = cand;
                    walk_cost = c.total;
                }
            }
            calibrate_temperature(&deltas, params.initial_acceptance)
        }
    };

    let moves = params.moves_per_temperature.unwrap_or(4 * n_regions).max(1);
    let t_min = t0 * params.min_temperature_ratio;
    let mut temp = t0;
    let mut trace = Vec::new();
    let mut iteration = 0usize;
    let mut accepted_count = 0usize;
    while temp > t_min {
        for _ in 0..moves {
            let cand = propose(&mut rng, &state);
            let c = ev.eval(&cand)?;
            let delta = c.total - state_cost.total;
            let accept =
                c.total.is_finite() && (delta < 0.0 || rng.random::<f64>() < (-delta / temp).exp());
            if accept {
                state = cand;
                state_cost = c;
                accepted_count += 1;
                if params.check_interval > 0 && accepted_count % params.check_interval == 1 {
                    spot_check(&ev, bench, stage, &state, &state_cost)?;
                }
                if state_cost.total < best.1.total {
                    best = (state.clone(), state_cost.clone());
                }
                if state_cost.feasible
                    && best_feasible
                        .as_ref()
                        .is_none_or(|(_, b)| state_cost.total < b.total)
                {
                    best_feasible = Some((state.clone(), state_cost.clone()));
                }
            }
            trace.push(TraceEntry {
                iteration,
                temperature: temp,
                cost: state_cost.total,
                accepted: accept,
            });
            iteration += 1;
        }
        temp *= params.cooling_rate;
    }

    let (assignment, breakdown) = best_feasible.unwrap_or(best);
    Ok(AnnealResult {
        feasible: breakdown.feasible,
        assignment,
        breakdown,
        trace,
        initial_temperature: t0,
        solves: ev.solves,
        elapsed: start.elapsed(),
    })
}

/// Fresh assembly of `state` must reproduce the incrementally computed cost.
fn spot_check(
    ev: &Evaluator<'_>,
    bench: &Benchmark,
    stage: Stage,
    state: &Assignment,
    cost: &CostBreakdown,
) -> Result<()> {
    let sys = fresh_system(bench, ev.ctx.cfg, ev.ctx.tset, stage, state)?;
    let fresh = ev.ctx.evaluate(&sys)?;
    let rel = (fresh.total - cost.total).abs() / cost.total.abs().max(1e-300);
    if rel > 1e-9 {
        return Err(Error::IncrementalMismatch(format!(
            "total {} (incremental) vs {} (fresh), relative {rel:e}",
            cost.total, fresh.total
        )));
    }
    Ok(())
}

/// Temperature at which the sampled moves would be accepted with the target
/// probability on average (downhill moves count as accepted).
pub fn calibrate_temperature(deltas: &[f64], target: f64) -> f64 {
    let up: Vec<f64> = deltas.iter().copied().filter(|d| *d > 0.0).collect();
    if up.is_empty() {
        return 1e-3;
    }
    let n = deltas.len() as f64;
    let down = n - up.len() as f64;
    let rate = |t: f64| (down + up.iter().map(|d| (-d / t).exp()).sum::<f64>()) / n;
    if rate(f64::MIN_POSITIVE.sqrt()) >= target {
        return up.iter().copied().fold(f64::INFINITY, f64::min);
    }
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    while rate(hi) < target {
        hi *= 2.0;
        if hi > 1e12 {
            return hi;
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Exhaustive minimum over every assignment (only for tiny chips). Selection
/// matches `anneal`: feasible states win over infeasible ones, then lower cost.
pub fn exhaustive_minimum(
    bench: &Benchmark,
    cfg: &TechnologyConfig,
    tset: &TemplateSet,
    stage: Stage,
    params: &SaParams,
    fp_assignment: Option<&Assignment>,
) -> Result<(Assignment, CostBreakdown)> {
    let ctx = CostContext::new(bench, cfg, tset, stage, fp_assignment, params)?;
    let (rows, cols) = (bench.rows(), bench.cols());
    let n = rows * cols;
    let k = tset.len();
    let total = k
        .checked_pow(n as u32)
        .ok_or_else(|| Error::validation("benchmark", "too many states for exhaustive search"))?;
    let (cur_map, _) = bench.stage_maps(stage);
    let mut sys = assemble(
        cfg,
        &tset.templates,
        &Assignment::uniform(rows, cols, 0),
        cur_map,
        &bench.macros,
        bench.bumps(),
    )?;
    let mut best: Option<(Assignment, CostBreakdown)> = None;
    for code in 0..total {
        let mut a = Assignment::uniform(rows, cols, 0);
        let mut c = code;
        for v in &mut a.values {
            *v = c % k;
            c /= k;
        }
        let cost = match sys.set_assignment(&a) {
            Ok(()) => ctx.evaluate(&sys)?,
            Err(Error::Disconnected { .. } | Error::StampMissing { .. }) => continue,
            Err(e) => return Err(e),
        };
        let better = |b: &CostBreakdown| match (cost.feasible, b.feasible) {
            (true, false) => true,
            (false, true) => false,
            _ => cost.total < b.total,
        };
        if best.as_ref().is_none_or(|(_, b)| better(b)) {
            best = Some((a, cost));
        }
    }
    best.ok_or_else(|| Error::Infeasible("no connected assignment".into()))
}

/// Per-benchmark labeling outcome.
#[derive(Debug)]
pub struct BenchLabels {
    pub name: String,
    pub floorplan: Result<AnnealResult>,
    pub placement: Option<Result<AnnealResult>>,
}

/// SA seed for one benchmark and stage.
pub fn stage_seed(master: u64, bench: &str, stage: Stage) -> u64 {
    derive_seed(master, &format!("sa/{bench}/{}", stage.as_str()), 0)
}

/// Floorplan labels, then placement labels seeded with the floorplan result.
pub fn label_benchmark(
    bench: &Benchmark,
    cfg: &TechnologyConfig,
    tset: &TemplateSet,
    params: &SaParams,
    placement: bool,
) -> BenchLabels {
    let name = bench.manifest.name.clone();
    let mut p = params.clone();
    p.seed = stage_seed(params.seed, &name, Stage::Floorplan);
    let fp = anneal(bench, cfg, tset, Stage::Floorplan, &p, None);
    let pl = match (&fp, placement) {
        (Ok(fp_res), true) => {
            let mut p = params.clone();
            p.seed = stage_seed(params.seed, &name, Stage::Placement);
            Some(anneal(
                bench,
                cfg,
                tset,
                Stage::Placement,
                &p,
                Some(&fp_res.assignment),
            ))
        }
        _ => None,
    };
    BenchLabels {
        name,
        floorplan: fp,
        placement: pl,
    }
}

/// Label many benchmarks over a bounded pool. Results come back in input
/// order whatever the worker count.
pub fn label_many(
    benches: &[Benchmark],
    cfg: &TechnologyConfig,
    tset: &TemplateSet,
    params: &SaParams,
    placement: bool,
    workers: usize,
) -> Result<Vec<BenchLabels>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::validation("workers", e.to_string()))?;
    Ok(pool.install(|| {
        benches
            .par_iter()
            .map(|b| label_benchmark(b, cfg, tset, params, placement))
            .collect()
    }))
}

/// Region grid of the final per-region d_r/d_c values of a breakdown.
pub fn d_norm_grid(b: &CostBreakdown, rows: usize, cols: usize) -> RegionGrid<f64> {
    RegionGrid {
        rows,
        cols,
        values: b.regions.iter().map(|r| r.d_norm).collect(),
    }
}
