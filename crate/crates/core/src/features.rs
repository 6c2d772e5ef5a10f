// SPDX-License-Identifier: Apache-2.0
//! Feature maps, 3x3-region windows and channel normalization.

use serde::{Deserialize, Serialize};

use crate::config::TechnologyConfig;
use crate::error::{Error, Result};
use crate::grid::{Assignment, Bump};
use crate::maps::Map2D;

/// Harmonic-sum distance from the point (x, y) to every bump, in the order
/// the bumps are given. Distances below `floor` are raised to it.
#[inline]
pub fn effective_distance_at(bumps: &[Bump], x: f64, y: f64, floor: f64) -> f64 {
    let mut inv = 0.0;
    for b in bumps {
        let d = ((x - b.x).powi(2) + (y - b.y).powi(2)).sqrt().max(floor);
        inv += 1.0 / d;
    }
    1.0 / inv
}

/// Effective distance at every pixel centre of a `width x height` die.
pub fn effective_distance_map(
    bumps: &[Bump],
    width: usize,
    height: usize,
    resolution: f64,
) -> Result<Map2D> {
    if bumps.is_empty() {
        return Err(Error::NoBumps);
    }
    let mut m = Map2D::zeros(width, height, resolution);
    let floor = resolution / 2.0;
    for py in 0..height {
        for px in 0..width {
            let (x, y) = m.pixel_center(px, py);
            m.set(px, py, effective_distance_at(bumps, x, y, floor));
        }
    }
    Ok(m)
}

/// Constant `id / (|T| - 1)` over each region.
pub fn template_plane(
    assignment: &Assignment,
    n_templates: usize,
    width: usize,
    height: usize,
    resolution: f64,
    region_px: usize,
) -> Map2D {
    let denom = n_templates.saturating_sub(1).max(1) as f64;
    let mut m = Map2D::zeros(width, height, resolution);
    for py in 0..height {
        for px in 0..width {
            let r = (py / region_px).min(assignment.rows - 1);
            let c = (px / region_px).min(assignment.cols - 1);
            m.set(px, py, *assignment.get(r, c) as f64 / denom);
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    /// Amps per pixel.
    pub current: Map2D,
    pub congestion: Map2D,
    pub macros: Map2D,
    /// Micrometres.
    pub eff_distance: Map2D,
    pub template_plane: Option<Map2D>,
    /// VDD bumps, needed to extend the effective distance off-die.
    pub bumps: Vec<Bump>,
}

/// Channel order inside a window.
pub const CHANNEL_NAMES: [&str; 5] = ["current", "congestion", "macro", "eff_distance", "template"];

impl FeatureStack {
    pub fn new(current: Map2D, congestion: Map2D, macros: Map2D, bumps: Vec<Bump>) -> Result<Self> {
        for (name, m) in [("congestion", &congestion), ("macro", &macros)] {
            if !m.same_grid(&current) {
                return Err(Error::validation(
                    name,
                    "map is not co-registered with the current map",
                ));
            }
        }
        let eff_distance =
            effective_distance_map(&bumps, current.width, current.height, current.resolution)?;
        Ok(Self {
            current,
            congestion,
            macros,
            eff_distance,
            template_plane: None,
            bumps,
        })
    }

    pub fn with_template_plane(mut self, plane: Map2D) -> Result<Self> {
        if !plane.same_grid(&self.current) {
            return Err(Error::validation("template_plane", "not co-registered"));
        }
        self.template_plane = Some(plane);
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        4 + usize::from(self.template_plane.is_some())
    }

    pub fn resolution(&self) -> f64 {
        self.current.resolution
    }
}

/// A 3x3-region crop, channel-major, each channel row-major with row 0 at
/// the lowest y.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionWindow {
    pub channels: usize,
    /// Pixels per side.
    pub side: usize,
    pub data: Vec<f32>,
    pub center_region: (usize, usize),
    pub label: Option<usize>,
}

impl RegionWindow {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.side * self.side;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Channel as a map with the given resolution.
    pub fn channel_map(&self, c: usize, resolution: f64) -> Map2D {
        Map2D {
            width: self.side,
            height: self.side,
            resolution,
            data: self.channel(c).iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Crop the 3x3 regions around (row, col). Off-die pixels take current 0,
/// macro 0, congestion 1, the effective distance evaluated at the virtual
/// pixel centre, and the nearest on-die template plane value.
pub fn extract_window(
    stack: &FeatureStack,
    cfg: &TechnologyConfig,
    row: usize,
    col: usize,
) -> RegionWindow {
    let rp = cfg.region_px();
    let side = 3 * rp;
    let (w, h) = (stack.current.width as i64, stack.current.height as i64);
    let x0 = (col as i64 - 1) * rp as i64;
    let y0 = (row as i64 - 1) * rp as i64;
    let nch = stack.channels();
    let n = side * side;
    let mut data = vec![0f32; nch * n];
    let res = stack.resolution();
    let floor = res / 2.0;
    for wy in 0..side {
        let py = y0 + wy as i64;
        for wx in 0..side {
            let px = x0 + wx as i64;
            let k = wy * side + wx;
            let inside = px >= 0 && py >= 0 && px < w && py < h;
            if inside {
                let (ux, uy) = (px as usize, py as usize);
                data[k] = stack.current.get(ux, uy) as f32;
                data[n + k] = stack.congestion.get(ux, uy) as f32;
                data[2 * n + k] = stack.macros.get(ux, uy) as f32;
                data[3 * n + k] = stack.eff_distance.get(ux, uy) as f32;
            } else {
                data[n + k] = 1.0;
                let cx = (px as f64 + 0.5) * res;
                let cy = (py as f64 + 0.5) * res;
                data[3 * n + k] = effective_distance_at(&stack.bumps, cx, cy, floor) as f32;
            }
            if let Some(plane) = &stack.template_plane {
                let ux = px.clamp(0, w - 1) as usize;
                let uy = py.clamp(0, h - 1) as usize;
                data[4 * n + k] = plane.get(ux, uy) as f32;
            }
        }
    }
    RegionWindow {
        channels: nch,
        side,
        data,
        center_region: (row, col),
        label: None,
    }
}

/// Per-channel statistics used to standardize windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels with zero spread; these pass through unchanged.
    pub degenerate: Vec<bool>,
}

impl NormStats {
    /// Population mean and standard deviation per channel over all pixels
    /// of the given (training) windows.
    pub fn compute<'a>(windows: impl IntoIterator<Item = &'a RegionWindow>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut nch = 0;
        let mut pixels = 0usize;
        let ws: Vec<&RegionWindow> = windows.into_iter().collect();
        // two passes for a numerically stable variance
        for win in &ws {
            if count == 0 {
                nch = win.channels;
                sum = vec![0.0; nch];
            } else if win.channels != nch {
                return Err(Error::validation("windows", "channel counts differ"));
            }
            count += 1;
            pixels += win.side * win.side;
            for (c, s) in sum.iter_mut().enumerate() {
                *s += win.channel(c).iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        if count < 2 {
            return Err(Error::InsufficientData(format!(
                "normalization needs at least 2 windows, got {count}"
            )));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / pixels as f64).collect();
        sq.resize(nch, 0.0);
        for win in &ws {
            for (c, q) in sq.iter_mut().enumerate() {
                let m = mean[c];
                *q += win
                    .channel(c)
                    .iter()
                    .map(|&v| (v as f64 - m).powi(2))
                    .sum::<f64>();
            }
        }
        let std: Vec<f64> = sq.iter().map(|q| (q / pixels as f64).sqrt()).collect();
        let degenerate = std.iter().map(|&s| !(s > 0.0)).collect();
        Ok(Self {
            mean,
            std,
            degenerate,
        })
    }

    pub fn apply(&self, win: &mut RegionWindow) -> Result<()> {
        if win.channels != self.mean.len() {
            return Err(Error::Shape {
                layer: "input".into(),
                msg: format!(
                    "window has {} channels, stats have {}",
                    win.channels,
                    self.mean.len()
                ),
            });
        }
        for c in 0..win.channels {
            if self.degenerate[c] {
                continue;
            }
            let (m, s) = (self.mean[c], self.std[c]);
            for v in win.channel_mut(c) {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        Ok(())
    }
}

/// Compute stats on `train` and return normalized copies of `train`.
pub fn normalize(train: &[RegionWindow]) -> Result<(Vec<RegionWindow>, NormStats)> {
    let stats = NormStats::compute(train)?;
    let mut out = train.to_vec();
    for w in &mut out {
        stats.apply(w)?;
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_sum_examples() {
        let one = [Bump { x: 10.0, y: 0.0 }];
        assert!((effective_distance_at(&one, 0.0, 0.0, 0.5) - 10.0).abs() < 1e-12);
        let two = [Bump { x: 3.0, y: 0.0 }, Bump { x: 0.0, y: 6.0 }];
        assert!((effective_distance_at(&two, 0.0, 0.0, 0.5) - 2.0).abs() < 1e-12);
        // coincident pixel uses the floor
        assert_eq!(effective_distance_at(&one, 10.0, 0.0, 1.25), 1.25);
    }

    #[test]
    fn no_bumps_is_an_error() {
        assert!(matches!(
            effective_distance_map(&[], 4, 4, 1.0),
            Err(Error::NoBumps)
        ));
    }
}
