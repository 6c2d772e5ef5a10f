// SPDX-License-Identifier: Apache-2.0
//! Synthetic benchmarks: current and congestion fields, VDD bump patterns
//! and macro layouts, plus the on-disk benchmark directory format.
//!
//! Every random stream is seeded from the benchmark seed through
//! [`derive_seed`], so a benchmark is a pure function of its parameters and
//! seed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TechnologyConfig;
use crate::error::{Error, Result};
use crate::features::{template_plane, FeatureStack};
use crate::grf::gaussian_random_field;
use crate::grid::{Assignment, Bump, ChipGeometry};
use crate::maps::Map2D;

/// `u64` from the first eight bytes of
/// `SHA-256(master_le || domain || index_le)`.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(domain.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn stream(seed: u64, domain: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, domain, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpMode {
    Checkerboard,
    ConstrainedRandom,
    /// Pick one of the two per benchmark with equal probability.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    /// Square die side, micrometres.
    pub die_size: f64,
    pub variance_bounds: (f64, f64),
    /// Micrometres.
    pub length_scale_bounds: (f64, f64),
    /// Mean GRF current per pixel, amps.
    pub mean_current: f64,
    pub macro_count_bounds: (usize, usize),
    /// Micrometres.
    pub macro_width_bounds: (f64, f64),
    /// Total current per macro, amps.
    pub macro_current_bounds: (f64, f64),
    /// Micrometres.
    pub min_channel_width: f64,
    pub max_macro_area_fraction: f64,
    pub min_aspect_ratio: f64,
    pub bump_mode: BumpMode,
    pub congestion_mean: f64,
    pub congestion_variance: f64,
    /// Micrometres.
    pub congestion_length_scale: f64,
    /// Block side for floorplan-stage maps, micrometres.
    pub floorplan_block: f64,
    pub seed: u64,
}

impl GenParams {
    pub fn lp65() -> Self {
        Self {
            die_size: 1500.0,
            variance_bounds: (1.0, 3.0),
            length_scale_bounds: (50.0, 100.0),
            mean_current: 0.5e-6,
            macro_count_bounds: (0, 6),
            macro_width_bounds: (5.0, 300.0),
            macro_current_bounds: (200e-6, 500e-6),
            min_channel_width: 14.0,
            max_macro_area_fraction: 0.6,
            min_aspect_ratio: 0.3,
            bump_mode: BumpMode::Mixed,
            congestion_mean: 1.0,
            congestion_variance: 0.01,
            congestion_length_scale: 150.0,
            floorplan_block: 50.0,
            seed: 0,
        }
    }

    pub fn lp12() -> Self {
        Self {
            die_size: 1500.0,
            variance_bounds: (0.5, 2.0),
            length_scale_bounds: (20.0, 80.0),
            mean_current: 0.3e-6,
            macro_count_bounds: (0, 10),
            macro_width_bounds: (5.0, 100.0),
            macro_current_bounds: (10e-6, 250e-6),
            min_channel_width: 4.2,
            max_macro_area_fraction: 0.6,
            min_aspect_ratio: 0.3,
            bump_mode: BumpMode::Mixed,
            congestion_mean: 1.0,
            congestion_variance: 0.01,
            congestion_length_scale: 120.0,
            floorplan_block: 40.0,
            seed: 0,
        }
    }

    /// Preset matching a technology name (`12lp` in the name selects the
    /// 12LP-like preset).
    pub fn for_technology(cfg: &TechnologyConfig) -> Self {
        if cfg.name.to_ascii_lowercase().contains("12lp") {
            Self::lp12()
        } else {
            Self::lp65()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("variance_bounds", self.variance_bounds),
            ("length_scale_bounds", self.length_scale_bounds),
            ("macro_width_bounds", self.macro_width_bounds),
            ("macro_current_bounds", self.macro_current_bounds),
        ];
        for (name, (lo, hi)) in pairs {
            if !(lo <= hi) || lo < 0.0 {
                return Err(Error::validation(
                    name,
                    format!("need 0 <= lo <= hi, got ({lo}, {hi})"),
                ));
            }
        }
        if self.macro_count_bounds.0 > self.macro_count_bounds.1 {
            return Err(Error::validation("macro_count_bounds", "lo > hi"));
        }
        if !(self.max_macro_area_fraction > 0.0 && self.max_macro_area_fraction <= 1.0) {
            return Err(Error::validation(
                "max_macro_area_fraction",
                "must be in (0, 1]",
            ));
        }
        if !(self.min_aspect_ratio > 0.0 && self.min_aspect_ratio <= 1.0) {
            return Err(Error::validation("min_aspect_ratio", "must be in (0, 1]"));
        }
        for (name, v) in [
            ("die_size", self.die_size),
            ("mean_current", self.mean_current),
            ("floorplan_block", self.floorplan_block),
            ("congestion_length_scale", self.congestion_length_scale),
        ] {
            if !(v > 0.0) {
                return Err(Error::validation(name, "must be > 0"));
            }
        }
        if self.min_channel_width < 0.0 || self.congestion_variance < 0.0 {
            return Err(Error::validation("min_channel_width", "must be >= 0"));
        }
        Ok(())
    }
}

/// Die side in pixels.
fn die_px(params: &GenParams, cfg: &TechnologyConfig) -> usize {
    (params.die_size / cfg.map_resolution).round() as usize
}

/// GRF current map: `max(0, 1 + field)` rescaled to the requested mean.
pub fn gen_current_map(
    params: &GenParams,
    width: usize,
    height: usize,
    resolution: f64,
    rng: &mut impl Rng,
) -> Map2D {
    let var = uniform(rng, params.variance_bounds);
    let ls = uniform(rng, params.length_scale_bounds);
    let field = gaussian_random_field(width, height, resolution, var, ls, rng);
    let mut data: Vec<f64> = field.iter().map(|v| (1.0 + v).max(0.0)).collect();
    let mean = data.iter().sum::<f64>() / data.len().max(1) as f64;
    if mean > 0.0 {
        let k = params.mean_current / mean;
        for v in &mut data {
            *v *= k;
        }
    } else {
        data.fill(params.mean_current);
    }
    Map2D {
        width,
        height,
        resolution,
        data,
    }
}

/// Congestion field: GRF around `congestion_mean`, clipped to [0, 1.5].
pub fn gen_congestion_map(
    params: &GenParams,
    width: usize,
    height: usize,
    resolution: f64,
    rng: &mut impl Rng,
) -> Map2D {
    let field = gaussian_random_field(
        width,
        height,
        resolution,
        params.congestion_variance,
        params.congestion_length_scale,
        rng,
    );
    Map2D {
        width,
        height,
        resolution,
        data: field
            .iter()
            .map(|v| (params.congestion_mean + v).clamp(0.0, 1.5))
            .collect(),
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Bump sites: `n = floor(die / pitch)` per axis, centred on the die.
pub fn bump_sites(die_w: f64, die_h: f64, pitch: f64) -> (Vec<f64>, Vec<f64>) {
    let axis = |len: f64| {
        let n = (len / pitch).floor() as usize;
        let off = (len - (n.max(1) - 1) as f64 * pitch) / 2.0;
        (0..n).map(|i| off + i as f64 * pitch).collect::<Vec<f64>>()
    };
    (axis(die_w), axis(die_h))
}

/// VDD bumps. Checkerboard alternates VDD and VSS, with VDD on sites whose
/// lattice indices sum to an even number. Constrained random puts exactly
/// one VDD bump in each disjoint 3x3 tile of sites; sites beyond the last
/// full tile stay empty.
pub fn gen_bump_assignment(
    die_w: f64,
    die_h: f64,
    bump_pitch: f64,
    mode: BumpMode,
    rng: &mut impl Rng,
) -> Result<(Vec<Bump>, BumpMode)> {
    let (xs, ys) = bump_sites(die_w, die_h, bump_pitch);
    if xs.len() < 3 || ys.len() < 3 {
        return Err(Error::DieTooSmall {
            rows: ys.len(),
            cols: xs.len(),
        });
    }
    let mode = match mode {
        BumpMode::Mixed => {
            if rng.random_bool(0.5) {
                BumpMode::Checkerboard
            } else {
                BumpMode::ConstrainedRandom
            }
        }
        m => m,
    };
    let mut out = Vec::new();
    match mode {
        BumpMode::Checkerboard => {
            for (j, &y) in ys.iter().enumerate() {
                for (i, &x) in xs.iter().enumerate() {
                    if (i + j) % 2 == 0 {
                        out.push(Bump { x, y });
                    }
                }
            }
        }
        BumpMode::ConstrainedRandom => {
            for tj in 0..ys.len() / 3 {
                for ti in 0..xs.len() / 3 {
                    let k = rng.random_range(0..9);
                    out.push(Bump {
                        x: xs[3 * ti + k % 3],
                        y: ys[3 * tj + k / 3],
                    });
                }
            }
        }
        BumpMode::Mixed => unreachable!(),
    }
    Ok((out, mode))
}

/// Axis-aligned macro footprint in micrometres, plus its total current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub current: f64,
}

impl MacroRect {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Separation along the axis where the rectangles are apart; negative
    /// when they overlap.
    pub fn gap(&self, o: &MacroRect) -> f64 {
        let gx = (o.x - (self.x + self.w)).max(self.x - (o.x + o.w));
        let gy = (o.y - (self.y + self.h)).max(self.y - (o.y + o.h));
        gx.max(gy)
    }
}

/// Effective macro bounds after lifting the width floor to the dense pitch
/// of the first unblocked layer and the channel floor to the dense pitch of
/// the highest blocked layer.
pub fn effective_macro_bounds(params: &GenParams, cfg: &TechnologyConfig) -> (f64, f64, f64) {
    let open = &cfg.pdn_layers[cfg.first_unblocked_layer()];
    let w_lo = params.macro_width_bounds.0.max(open.pitch_dense);
    let channel = match cfg.highest_blocked_layer() {
        Some(l) => params.min_channel_width.max(cfg.pdn_layers[l].pitch_dense),
        None => params.min_channel_width,
    };
    (w_lo, params.macro_width_bounds.1, channel)
}

const MACRO_TRIES: usize = 2000;
const LAYOUT_RESTARTS: usize = 25;

/// Macro layout on a pixel grid, returning the binary map and rectangles.
/// Rectangle edges are snapped to pixel boundaries.
pub fn gen_macro_map(
    params: &GenParams,
    cfg: &TechnologyConfig,
    width: usize,
    height: usize,
    rng: &mut impl Rng,
) -> Result<(Map2D, Vec<MacroRect>)> {
    let res = cfg.map_resolution;
    let (die_w, die_h) = (width as f64 * res, height as f64 * res);
    let (w_lo, w_hi, channel) = effective_macro_bounds(params, cfg);
    let count = rng.random_range(params.macro_count_bounds.0..=params.macro_count_bounds.1);
    let mut map = Map2D::zeros(width, height, res);
    if count == 0 {
        return Ok((map, Vec::new()));
    }
    let fail = |msg: String| Error::PlacementFailure {
        seed: params.seed,
        msg,
    };
    if w_lo > w_hi {
        return Err(fail(format!(
            "width floor {w_lo} exceeds upper bound {w_hi}"
        )));
    }
    if w_lo > die_w.min(die_h) {
        return Err(fail(format!(
            "macro width {w_lo} exceeds die {die_w}x{die_h}"
        )));
    }
    let snap = |v: f64| (v / res).round() * res;
    let budget = params.max_macro_area_fraction * die_w * die_h;
    let ar = params.min_aspect_ratio;

    for _ in 0..LAYOUT_RESTARTS {
        let mut rects: Vec<MacroRect> = Vec::new();
        let mut area = 0.0;
        'place: for _ in 0..count {
            for _ in 0..MACRO_TRIES {
                let w = snap(uniform(rng, (w_lo, w_hi.min(die_w))));
                let h_lo = w_lo.max(ar * w);
                let h_hi = w_hi.min(w / ar).min(die_h);
                if h_lo > h_hi {
                    continue;
                }
                let h = snap(uniform(rng, (h_lo, h_hi)));
                let w = w.max(snap_up(w_lo, res));
                let h = h.max(snap_up(w_lo, res));
                if w > die_w || h > die_h || h < ar * w - 1e-9 || w < ar * h - 1e-9 {
                    continue;
                }
                let x = snap(uniform(rng, (0.0, die_w - w)));
                let y = snap(uniform(rng, (0.0, die_h - h)));
                let cand = MacroRect {
                    x,
                    y,
                    w,
                    h,
                    current: 0.0,
                };
                if area + cand.area() > budget + 1e-9 {
                    continue;
                }
                if rects.iter().any(|r| r.gap(&cand) < channel - 1e-9) {
                    continue;
                }
                area += cand.area();
                rects.push(cand);
                continue 'place;
            }
            break;
        }
        if rects.len() == count {
            for r in &mut rects {
                r.current = uniform(rng, params.macro_current_bounds);
            }
            for r in &rects {
                let (x0, y0, x1, y1) = rect_pixels(r, res, width, height);
                for py in y0..y1 {
                    for px in x0..x1 {
                        map.set(px, py, 1.0);
                    }
                }
            }
            return Ok((map, rects));
        }
    }
    Err(fail(format!(
        "could not place {count} macros within {LAYOUT_RESTARTS} restarts"
    )))
}

fn snap_up(v: f64, res: f64) -> f64 {
    (v / res - 1e-9).ceil() * res
}

/// Pixel span [x0, x1) x [y0, y1) of a rectangle.
pub fn rect_pixels(
    r: &MacroRect,
    res: f64,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize) {
    let p = |v: f64, max: usize| ((v / res).round().max(0.0) as usize).min(max);
    (
        p(r.x, width),
        p(r.y, height),
        p(r.x + r.w, width),
        p(r.y + r.h, height),
    )
}

/// Spread each macro's current evenly over its footprint pixels.
pub fn add_macro_currents(current: &mut Map2D, rects: &[MacroRect]) {
    for r in rects {
        let (x0, y0, x1, y1) = rect_pixels(r, current.resolution, current.width, current.height);
        let n = (x1 - x0) * (y1 - y0);
        if n == 0 {
            continue;
        }
        let per = r.current / n as f64;
        for py in y0..y1 {
            for px in x0..x1 {
                current.add(px, py, per);
            }
        }
    }
}

/// Check a layout against the generator's hard constraints. Returns the
/// list of broken rules.
pub fn check_macro_layout(
    rects: &[MacroRect],
    params: &GenParams,
    cfg: &TechnologyConfig,
    die_w: f64,
    die_h: f64,
) -> Vec<String> {
    let (w_lo, w_hi, channel) = effective_macro_bounds(params, cfg);
    let mut bad = Vec::new();
    let tol = 1e-6;
    if rects.len() < params.macro_count_bounds.0 || rects.len() > params.macro_count_bounds.1 {
        bad.push(format!("count {} out of bounds", rects.len()));
    }
    let mut area = 0.0;
    for (i, r) in rects.iter().enumerate() {
        area += r.area();
        if r.x < -tol || r.y < -tol || r.x + r.w > die_w + tol || r.y + r.h > die_h + tol {
            bad.push(format!("macro {i} leaves the die"));
        }
        for side in [r.w, r.h] {
            if side < w_lo - tol || side > w_hi + tol {
                bad.push(format!("macro {i} side {side} outside [{w_lo}, {w_hi}]"));
            }
        }
        if r.w.min(r.h) / r.w.max(r.h) < params.min_aspect_ratio - tol {
            bad.push(format!("macro {i} aspect ratio too small"));
        }
        let (clo, chi) = params.macro_current_bounds;
        if r.current < clo - 1e-15 || r.current > chi + 1e-15 {
            bad.push(format!("macro {i} current out of bounds"));
        }
        for (j, o) in rects.iter().enumerate().skip(i + 1) {
            if r.gap(o) < channel - tol {
                bad.push(format!("macros {i} and {j} closer than {channel}"));
            }
        }
    }
    if area > params.max_macro_area_fraction * die_w * die_h + tol {
        bad.push("macro area fraction exceeded".into());
    }
    bad
}

pub const BENCH_FORMAT: &str = "pdn-bench/1";
const MANIFEST: &str = "manifest.json";

/// Channel file names inside a benchmark directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFiles {
    pub current: String,
    pub congestion: String,
    pub macro_map: String,
    pub eff_distance: String,
    pub current_floorplan: String,
    pub congestion_floorplan: String,
}

impl Default for ChannelFiles {
    fn default() -> Self {
        Self {
            current: "current.pdnm".into(),
            congestion: "congestion.pdnm".into(),
            macro_map: "macro.pdnm".into(),
            eff_distance: "eff_distance.pdnm".into(),
            current_floorplan: "current_fp.pdnm".into(),
            congestion_floorplan: "congestion_fp.pdnm".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub format: String,
    pub name: String,
    pub technology: String,
    pub die_width: f64,
    pub die_height: f64,
    pub resolution: f64,
    pub region_rows: usize,
    pub region_cols: usize,
    pub region_size: f64,
    pub bump_pitch: f64,
    pub bump_mode: BumpMode,
    pub bumps: Vec<Bump>,
    pub macros: Vec<MacroRect>,
    pub channels: ChannelFiles,
    pub seed: u64,
    pub params: Option<GenParams>,
}

/// A benchmark held in memory. Maps are stored as f32 on disk; generated
/// benchmarks are quantized the same way so that in-memory and reloaded
/// benchmarks are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub manifest: BenchManifest,
    /// Placement-stage current, amps per pixel.
    pub current: Map2D,
    pub congestion: Map2D,
    pub macros: Map2D,
    pub eff_distance: Map2D,
    /// Floorplan-stage block-averaged maps.
    pub current_fp: Map2D,
    pub congestion_fp: Map2D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Floorplan,
    Placement,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Floorplan => "floorplan",
            Stage::Placement => "placement",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Stage::Floorplan => 4,
            Stage::Placement => 5,
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "floorplan" => Ok(Stage::Floorplan),
            "placement" => Ok(Stage::Placement),
            _ => Err(Error::validation("stage", format!("unknown stage `{s}`"))),
        }
    }
}

impl Benchmark {
    pub fn bumps(&self) -> &[Bump] {
        &self.manifest.bumps
    }

    pub fn rows(&self) -> usize {
        self.manifest.region_rows
    }

    pub fn cols(&self) -> usize {
        self.manifest.region_cols
    }

    pub fn regions(&self) -> usize {
        self.rows() * self.cols()
    }

    /// Current and congestion maps for a stage.
    pub fn stage_maps(&self, stage: Stage) -> (&Map2D, &Map2D) {
        match stage {
            Stage::Floorplan => (&self.current_fp, &self.congestion_fp),
            Stage::Placement => (&self.current, &self.congestion),
        }
    }

    /// Feature stack for a stage; placement adds the floorplan template
    /// plane when `fp_assignment` is given.
    pub fn feature_stack(
        &self,
        cfg: &TechnologyConfig,
        stage: Stage,
        fp_assignment: Option<(&Assignment, usize)>,
    ) -> Result<FeatureStack> {
        let (cur, cong) = self.stage_maps(stage);
        let mut fs = FeatureStack {
            current: cur.clone(),
            congestion: cong.clone(),
            macros: self.macros.clone(),
            eff_distance: self.eff_distance.clone(),
            template_plane: None,
            bumps: self.manifest.bumps.clone(),
        };
        if let (Stage::Placement, Some((a, n))) = (stage, fp_assignment) {
            let plane =
                template_plane(a, n, cur.width, cur.height, cur.resolution, cfg.region_px());
            fs = fs.with_template_plane(plane)?;
        }
        Ok(fs)
    }

    /// Mean congestion per region for a stage.
    pub fn region_congestion(&self, cfg: &TechnologyConfig, stage: Stage) -> Vec<f64> {
        let (_, cong) = self.stage_maps(stage);
        let geom = ChipGeometry::for_map(cfg, cong);
        let mut out = Vec::with_capacity(geom.rows * geom.cols);
        for r in 0..geom.rows {
            for c in 0..geom.cols {
                let (x0, y0, x1, y1) = geom.region_pixels(r, c);
                out.push(cong.mean_in(x0, y0, x1, y1));
            }
        }
        out
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ch = &self.manifest.channels;
        for (name, m) in [
            (&ch.current, &self.current),
            (&ch.congestion, &self.congestion),
            (&ch.macro_map, &self.macros),
            (&ch.eff_distance, &self.eff_distance),
            (&ch.current_floorplan, &self.current_fp),
            (&ch.congestion_floorplan, &self.congestion_fp),
        ] {
            m.save(dir.join(name))?;
        }
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let p = dir.join(MANIFEST);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let manifest: BenchManifest =
            serde_json::from_str(&text).map_err(|e| Error::parse(&p, e))?;
        if manifest.format != BENCH_FORMAT {
            return Err(Error::parse(
                &p,
                format!("unknown format `{}`", manifest.format),
            ));
        }
        let ch = &manifest.channels;
        let load = |name: &str| Map2D::load(dir.join(name));
        let current = load(&ch.current)?;
        let congestion = load(&ch.congestion)?;
        let macros = load(&ch.macro_map)?;
        let eff_distance = load(&ch.eff_distance)?;
        let current_fp = load(&ch.current_floorplan)?;
        let congestion_fp = load(&ch.congestion_floorplan)?;
        for (n, m) in [
            ("congestion", &congestion),
            ("macro", &macros),
            ("eff_distance", &eff_distance),
            ("current_fp", &current_fp),
            ("congestion_fp", &congestion_fp),
        ] {
            if !m.same_grid(&current) {
                return Err(Error::parse(
                    dir.join(n),
                    "map is not co-registered with current",
                ));
            }
        }
        Ok(Self {
            manifest,
            current,
            congestion,
            macros,
            eff_distance,
            current_fp,
            congestion_fp,
        })
    }
}

/// Generate one benchmark. `name` is recorded in the manifest.
pub fn generate_benchmark(
    cfg: &TechnologyConfig,
    params: &GenParams,
    name: &str,
) -> Result<Benchmark> {
    params.validate()?;
    let px = die_px(params, cfg);
    let res = cfg.map_resolution;
    let die = px as f64 * res;
    let seed = params.seed;

    let mut current = gen_current_map(params, px, px, res, &mut stream(seed, "current"));
    let congestion = gen_congestion_map(params, px, px, res, &mut stream(seed, "congestion"));
    let (bumps, mode) = gen_bump_assignment(
        die,
        die,
        cfg.bump_pitch,
        params.bump_mode,
        &mut stream(seed, "bumps"),
    )?;
    let (macros, rects) = gen_macro_map(params, cfg, px, px, &mut stream(seed, "macros"))?;
    add_macro_currents(&mut current, &rects);
    let eff = crate::features::effective_distance_map(&bumps, px, px, res)?;

    let block = ((params.floorplan_block / res).round() as usize).max(1);
    let current = current.quantized();
    let congestion = congestion.quantized();
    let current_fp = current.block_average(block).quantized();
    let congestion_fp = congestion.block_average(block).quantized();
    let geom = ChipGeometry::new(cfg, px, px);
    Ok(Benchmark {
        manifest: BenchManifest {
            format: BENCH_FORMAT.into(),
            name: name.into(),
            technology: cfg.name.clone(),
            die_width: die,
            die_height: die,
            resolution: res,
            region_rows: geom.rows,
            region_cols: geom.cols,
            region_size: cfg.region_size,
            bump_pitch: cfg.bump_pitch,
            bump_mode: mode,
            bumps,
            macros: rects,
            channels: ChannelFiles::default(),
            seed,
            params: Some(params.clone()),
        },
        current,
        congestion,
        macros: macros.quantized(),
        eff_distance: eff.quantized(),
        current_fp,
        congestion_fp,
    })
}

/// Seed of benchmark `index` in a corpus generated from `master`.
pub fn benchmark_seed(master: u64, index: u64) -> u64 {
    derive_seed(master, "benchmark", index)
}

pub fn benchmark_name(index: usize) -> String {
    format!("bench_{index:04}")
}

/// Generate benchmarks `0..count` of the corpus rooted at `master` on a pool
/// of `workers` threads. Output order and content do not depend on the
/// worker count.
pub fn generate_corpus(
    cfg: &TechnologyConfig,
    params: &GenParams,
    master: u64,
    count: usize,
    workers: usize,
) -> Result<Vec<Result<Benchmark>>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::validation("workers", e.to_string()))?;
    Ok(pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut p = params.clone();
                p.seed = benchmark_seed(master, i as u64);
                generate_benchmark(cfg, &p, &benchmark_name(i))
            })
            .collect()
    }))
}
