// SPDX-License-Identifier: Apache-2.0
//! Assembly of the conductance system `G V = J` from per-region template
//! stamps.
//!
//! Every region owns the stripe segments, vias, loads and bump attachments
//! inside its footprint. Stripes always run to the region boundary, where a
//! node is created that the neighbouring region shares, so the full matrix
//! is the plain sum of region stamps. Changing one region's template swaps
//! one cached stamp and re-sums; fresh assembly and incremental updates run
//! the same summation and therefore agree bit for bit.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{from_nm, to_nm, Direction, Nm, TechnologyConfig};
use crate::error::{Error, Result};
use crate::maps::{Map2D, RegionGrid};
use crate::sparse::{minimum_degree, CsrMatrix};
use crate::templates::Template;

/// Node identity: (layer, x, y) with coordinates in nanometres. The derived
/// ordering is lexicographic in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey {
    pub layer: u8,
    pub x: Nm,
    pub y: Nm,
}

impl std::fmt::Display for NodeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(layer {}, {:.3}um, {:.3}um)",
            self.layer,
            from_nm(self.x),
            from_nm(self.y)
        )
    }
}

/// A VDD bump location in micrometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub x: f64,
    pub y: f64,
}

/// Per-region template ids, row 0 at the bottom of the die.
pub type Assignment = RegionGrid<usize>;

impl Assignment {
    pub fn uniform(rows: usize, cols: usize, id: usize) -> Self {
        RegionGrid::filled(rows, cols, id)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let a: Assignment = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if a.values.len() != a.rows * a.cols {
            return Err(Error::parse(path, "values length != rows * cols"));
        }
        Ok(a)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self).expect("serializes"))
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Stripe segment on the given layer.
    Wire(u8),
    /// Via between the given layer and the one above.
    Via(u8),
}

#[derive(Debug, Clone, Copy)]
pub struct LocalEdge {
    pub a: u32,
    pub b: u32,
    pub conductance: f64,
    pub kind: EdgeKind,
}

/// Everything one region contributes for one template.
#[derive(Debug, Clone)]
pub struct RegionStamp {
    pub template: usize,
    /// Sorted node keys.
    pub nodes: Vec<NodeKey>,
    pub edges: Vec<LocalEdge>,
    /// (local node, conductance); `None` is an ideal pad.
    pub bumps: Vec<(u32, Option<f64>)>,
    /// (local node, amps drawn), sorted by node.
    pub loads: Vec<(u32, f64)>,
    /// Attached node of each region pixel, row-major inside the region.
    pub pixel_node: Vec<u32>,
    /// Distinct nodes referenced by `pixel_node`.
    pub load_nodes: Vec<u32>,
    /// Elimination rank of each node in the chip-wide ordering.
    pub rank: Vec<u32>,
}

pub const NO_NODE: u32 = u32::MAX;

/// Chip geometry shared by every stamp.
#[derive(Debug, Clone)]
pub struct ChipGeometry {
    pub die_w: Nm,
    pub die_h: Nm,
    pub region: Nm,
    pub rows: usize,
    pub cols: usize,
    pub px_w: usize,
    pub px_h: usize,
    pub region_px: usize,
    pub resolution: f64,
}

impl ChipGeometry {
    pub fn new(cfg: &TechnologyConfig, px_w: usize, px_h: usize) -> Self {
        let res = to_nm(cfg.map_resolution);
        let die_w = px_w as Nm * res;
        let die_h = px_h as Nm * res;
        let region = to_nm(cfg.region_size);
        Self {
            die_w,
            die_h,
            region,
            rows: ((die_h + region - 1) / region) as usize,
            cols: ((die_w + region - 1) / region) as usize,
            px_w,
            px_h,
            region_px: cfg.region_px(),
            resolution: cfg.map_resolution,
        }
    }

    pub fn for_map(cfg: &TechnologyConfig, map: &Map2D) -> Self {
        Self::new(cfg, map.width, map.height)
    }

    /// Region extent in nanometres: (x0, y0, x1, y1).
    pub fn region_box(&self, row: usize, col: usize) -> (Nm, Nm, Nm, Nm) {
        let x0 = col as Nm * self.region;
        let y0 = row as Nm * self.region;
        (
            x0,
            y0,
            (x0 + self.region).min(self.die_w),
            (y0 + self.region).min(self.die_h),
        )
    }

    /// Region extent in pixels: (x0, y0, x1, y1).
    pub fn region_pixels(&self, row: usize, col: usize) -> (usize, usize, usize, usize) {
        let x0 = col * self.region_px;
        let y0 = row * self.region_px;
        (
            x0,
            y0,
            (x0 + self.region_px).min(self.px_w),
            (y0 + self.region_px).min(self.px_h),
        )
    }

    pub fn region_of_point(&self, x: f64, y: f64) -> (usize, usize) {
        let r = (to_nm(y).clamp(0, self.die_h - 1) / self.region) as usize;
        let c = (to_nm(x).clamp(0, self.die_w - 1) / self.region) as usize;
        (r.min(self.rows - 1), c.min(self.cols - 1))
    }
}

/// Stripe positions of a layer with pitch `pitch` inside [lo, hi): the
/// global lattice `pitch_dense/2 + k * pitch`.
pub fn stripe_positions(pitch_dense: Nm, pitch: Nm, lo: Nm, hi: Nm) -> Vec<Nm> {
    let offset = pitch_dense / 2;
    // first k with offset + k*pitch >= lo
    let k0 = if lo <= offset {
        0
    } else {
        (lo - offset + pitch - 1) / pitch
    };
    let mut out = Vec::new();
    let mut p = offset + k0 * pitch;
    while p < hi {
        if p >= lo {
            out.push(p);
        }
        p += pitch;
    }
    out
}

/// Inputs for stamping a region.
pub struct StampInputs<'a> {
    pub cfg: &'a TechnologyConfig,
    pub geom: &'a ChipGeometry,
    pub current: Option<&'a Map2D>,
    pub macros: Option<&'a Map2D>,
    pub bumps: &'a [Bump],
    /// Treat bumps as ideal voltage sources instead of using bump_resistance.
    pub ideal_bumps: bool,
}

impl StampInputs<'_> {
    fn macro_at_pixel(&self, px: usize, py: usize) -> bool {
        match self.macros {
            Some(m) => m.get(px.min(m.width - 1), py.min(m.height - 1)) > 0.5,
            None => false,
        }
    }

    fn pixel_of(&self, v: Nm, max: usize) -> usize {
        ((v / to_nm(self.cfg.map_resolution)).max(0) as usize).min(max - 1)
    }

    fn blocked_point(&self, x: Nm, y: Nm) -> bool {
        self.macros.is_some()
            && self.macro_at_pixel(
                self.pixel_of(x, self.geom.px_w),
                self.pixel_of(y, self.geom.px_h),
            )
    }

    /// Whether a stripe segment between two points crosses a macro pixel.
    fn blocked_segment(&self, a: (Nm, Nm), b: (Nm, Nm)) -> bool {
        if self.macros.is_none() {
            return false;
        }
        let (px0, py0) = (
            self.pixel_of(a.0.min(b.0), self.geom.px_w),
            self.pixel_of(a.1.min(b.1), self.geom.px_h),
        );
        let (px1, py1) = (
            self.pixel_of(a.0.max(b.0), self.geom.px_w),
            self.pixel_of(a.1.max(b.1), self.geom.px_h),
        );
        for py in py0..=py1 {
            for px in px0..=px1 {
                if self.macro_at_pixel(px, py) {
                    return true;
                }
            }
        }
        false
    }
}

/// Build the stamp of one region for one template.
pub fn stamp_region(
    inp: &StampInputs<'_>,
    row: usize,
    col: usize,
    template: &Template,
) -> Result<RegionStamp> {
    let cfg = inp.cfg;
    let geom = inp.geom;
    let (x0, y0, x1, y1) = geom.region_box(row, col);
    let first = cfg.load_layer();
    let nl = cfg.pdn_layers.len();

    // stripe positions per layer (perpendicular coordinate)
    let stripes: Vec<Vec<Nm>> = (0..nl)
        .map(|l| {
            if l < first {
                return Vec::new();
            }
            let spec = &cfg.pdn_layers[l];
            let pd = to_nm(spec.pitch_dense);
            let p = pd * template.multipliers[l] as Nm;
            match spec.direction {
                Direction::Horizontal => stripe_positions(pd, p, y0, y1),
                Direction::Vertical => stripe_positions(pd, p, x0, x1),
            }
        })
        .collect();

    let mut keys: Vec<NodeKey> = Vec::new();
    // (layer, stripe coordinate, ordered along-stripe coordinates)
    let mut stripe_nodes: Vec<(usize, Nm, Vec<Nm>)> = Vec::new();
    for l in first..nl {
        let spec = &cfg.pdn_layers[l];
        let (lo, hi) = match spec.direction {
            Direction::Horizontal => (x0, x1),
            Direction::Vertical => (y0, y1),
        };
        let mut cross: Vec<Nm> = vec![lo, hi];
        if l > first {
            cross.extend(&stripes[l - 1]);
        }
        if l + 1 < nl {
            cross.extend(&stripes[l + 1]);
        }
        cross.sort_unstable();
        cross.dedup();
        for &s in &stripes[l] {
            for &t in &cross {
                let (x, y) = along(spec.direction, s, t);
                if spec.macro_blocked && inp.blocked_point(x, y) {
                    continue;
                }
                keys.push(NodeKey {
                    layer: l as u8,
                    x,
                    y,
                });
            }
            stripe_nodes.push((l, s, cross.clone()));
        }
    }
    keys.sort_unstable();
    keys.dedup();
    let index_of = |k: &NodeKey| keys.binary_search(k).ok().map(|i| i as u32);

    let mut edges = Vec::new();
    for (l, s, cross) in &stripe_nodes {
        let spec = &cfg.pdn_layers[*l];
        for w in cross.windows(2) {
            let pa = along(spec.direction, *s, w[0]);
            let pb = along(spec.direction, *s, w[1]);
            let ka = NodeKey {
                layer: *l as u8,
                x: pa.0,
                y: pa.1,
            };
            let kb = NodeKey {
                layer: *l as u8,
                x: pb.0,
                y: pb.1,
            };
            let (Some(a), Some(b)) = (index_of(&ka), index_of(&kb)) else {
                continue;
            };
            if spec.macro_blocked && inp.blocked_segment(pa, pb) {
                continue;
            }
            let len = from_nm(w[1] - w[0]);
            edges.push(LocalEdge {
                a,
                b,
                conductance: 1.0 / spec.segment_resistance(len),
                kind: EdgeKind::Wire(*l as u8),
            });
        }
    }
    for l in first..nl.saturating_sub(1) {
        let (hs, vs) = match cfg.pdn_layers[l].direction {
            Direction::Horizontal => (&stripes[l], &stripes[l + 1]),
            Direction::Vertical => (&stripes[l + 1], &stripes[l]),
        };
        for &y in hs {
            for &x in vs {
                let lo = index_of(&NodeKey {
                    layer: l as u8,
                    x,
                    y,
                });
                let hi = index_of(&NodeKey {
                    layer: l as u8 + 1,
                    x,
                    y,
                });
                if let (Some(a), Some(b)) = (lo, hi) {
                    edges.push(LocalEdge {
                        a,
                        b,
                        conductance: 1.0 / cfg.via_resistance,
                        kind: EdgeKind::Via(l as u8),
                    });
                }
            }
        }
    }

    // bumps inside this region attach to the nearest top-layer node
    let top = (nl - 1) as u8;
    let top_nodes: Vec<u32> = (0..keys.len() as u32)
        .filter(|&i| keys[i as usize].layer == top)
        .collect();
    let mut bumps = Vec::new();
    for b in inp.bumps {
        if geom.region_of_point(b.x, b.y) != (row, col) {
            continue;
        }
        let (bx, by) = (to_nm(b.x), to_nm(b.y));
        let node = nearest(&keys, &top_nodes, bx, by).ok_or_else(|| {
            Error::Geometry(format!(
                "bump at ({}, {}) has no top-layer node in region ({row}, {col})",
                b.x, b.y
            ))
        })?;
        let g = if inp.ideal_bumps {
            None
        } else {
            Some(1.0 / cfg.bump_resistance)
        };
        bumps.push((node, g));
    }

    // pixel loads
    let (px0, py0, px1, py1) = geom.region_pixels(row, col);
    let open_layer = cfg.first_unblocked_layer().max(first) as u8;
    // A lowest-layer node cut off by a macro (a stub between the blockage
    // and the die edge) cannot feed a load. Components that reach a shared
    // region boundary continue in the neighbour and count as anchored.
    let mut uf = UnionFind::new(keys.len());
    for e in &edges {
        uf.union(e.a as usize, e.b as usize);
    }
    let shared = |k: &NodeKey| {
        (k.x == x0 && x0 > 0)
            || (k.x == x1 && x1 < geom.die_w)
            || (k.y == y0 && y0 > 0)
            || (k.y == y1 && y1 < geom.die_h)
    };
    let mut anchored = vec![false; keys.len()];
    for (i, k) in keys.iter().enumerate() {
        if k.layer >= open_layer || shared(k) {
            let root = uf.find(i);
            anchored[root] = true;
        }
    }
    let load_cands: Vec<u32> = (0..keys.len() as u32)
        .filter(|&i| keys[i as usize].layer == first as u8 && anchored[uf.find(i as usize)])
        .collect();
    let macro_cands: Vec<u32> = (0..keys.len() as u32)
        .filter(|&i| keys[i as usize].layer == open_layer)
        .collect();
    let all: Vec<u32> = (0..keys.len() as u32).collect();
    let res = to_nm(cfg.map_resolution);
    let mut pixel_node = Vec::with_capacity((px1 - px0) * (py1 - py0));
    let mut load_acc: HashMap<u32, f64> = HashMap::new();
    let mut load_order: Vec<u32> = Vec::new();
    for py in py0..py1 {
        for px in px0..px1 {
            let cx = px as Nm * res + res / 2;
            let cy = py as Nm * res + res / 2;
            let in_macro = inp.macro_at_pixel(px, py) && inp.macros.is_some();
            let cands = if in_macro { &macro_cands } else { &load_cands };
            let amps = inp.current.map_or(0.0, |m| m.get(px, py));
            let node = match nearest(&keys, cands, cx, cy) {
                Some(n) => n,
                None if amps > 0.0 => {
                    let why = if in_macro { "" } else { " (no anchored rail)" };
                    return Err(Error::Disconnected {
                        node: format!("pixel ({px}, {py}) of region ({row}, {col}){why}"),
                    });
                }
                None => nearest(&keys, &all, cx, cy).unwrap_or(NO_NODE),
            };
            pixel_node.push(node);
            if amps != 0.0 && node != NO_NODE {
                let e = load_acc.entry(node).or_insert_with(|| {
                    load_order.push(node);
                    0.0
                });
                *e += amps;
            }
        }
    }
    let mut loads: Vec<(u32, f64)> = load_order.iter().map(|n| (*n, load_acc[n])).collect();
    loads.sort_by_key(|&(n, _)| n);
    let mut load_nodes: Vec<u32> = pixel_node
        .iter()
        .copied()
        .filter(|&n| n != NO_NODE)
        .collect();
    load_nodes.sort_unstable();
    load_nodes.dedup();

    Ok(RegionStamp {
        template: template.id,
        rank: vec![0; keys.len()],
        nodes: keys,
        edges,
        bumps,
        loads,
        pixel_node,
        load_nodes,
    })
}

fn along(dir: Direction, stripe: Nm, t: Nm) -> (Nm, Nm) {
    match dir {
        Direction::Horizontal => (t, stripe),
        Direction::Vertical => (stripe, t),
    }
}

/// Nearest candidate to (x, y); ties resolved by the lowest key, which is
/// the lowest index because keys are sorted.
fn nearest(keys: &[NodeKey], cands: &[u32], x: Nm, y: Nm) -> Option<u32> {
    let mut best: Option<(i128, u32)> = None;
    for &c in cands {
        let k = &keys[c as usize];
        let dx = (k.x - x) as i128;
        let dy = (k.y - y) as i128;
        let d = dx * dx + dy * dy;
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, c));
        }
    }
    best.map(|(_, c)| c)
}

/// A stripe segment in the assembled system.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub a: usize,
    pub b: usize,
    pub conductance: f64,
    pub layer: u8,
    pub region: (usize, usize),
}

/// The assembled chip: conductance matrix, injections and bookkeeping to
/// map results back onto regions and pixels.
#[derive(Debug, Clone)]
pub struct PdnSystem {
    pub geom: ChipGeometry,
    pub vdd: f64,
    pub assignment: Assignment,
    /// Cached stamps: `region_stamps[region][template]`.
    pub region_stamps: Vec<Vec<Option<Arc<RegionStamp>>>>,
    pub node_index: Vec<NodeKey>,
    /// Conductance in siemens, bump conductances on the diagonal.
    pub conductance: CsrMatrix,
    /// Node currents, loads negative, plus `vdd * g_bump` at bump nodes.
    pub injection: Vec<f64>,
    /// Amps drawn at each node (positive).
    pub loads: Vec<f64>,
    pub bump_nodes: Vec<(usize, Option<f64>)>,
    pub segments: Vec<Segment>,
    /// Global index of each active stamp's local nodes; `usize::MAX` when
    /// the node was dropped as unpowered.
    pub region_nodes: Vec<Vec<usize>>,
    /// Elimination order for the active node set.
    pub ordering: Vec<usize>,
    /// Cross-section of a stripe on each layer, cm^2.
    pub wire_area_cm2: Vec<f64>,
    has_ranks: bool,
}

impl PdnSystem {
    pub fn rows(&self) -> usize {
        self.geom.rows
    }

    pub fn cols(&self) -> usize {
        self.geom.cols
    }

    pub fn n(&self) -> usize {
        self.node_index.len()
    }

    pub fn active_stamp(&self, row: usize, col: usize) -> &RegionStamp {
        let r = row * self.geom.cols + col;
        self.region_stamps[r][*self.assignment.get(row, col)]
            .as_deref()
            .expect("active stamp present")
    }

    /// Switch one region to another cached template and rebuild G and J.
    pub fn restamp_region(&mut self, row: usize, col: usize, template: usize) -> Result<()> {
        let r = row * self.geom.cols + col;
        let present = self
            .region_stamps
            .get(r)
            .and_then(|s| s.get(template))
            .is_some_and(|s| s.is_some());
        if !present {
            return Err(Error::StampMissing { row, col, template });
        }
        let old = *self.assignment.get(row, col);
        if old == template {
            return Ok(());
        }
        self.assignment.set(row, col, template);
        if let Err(e) = self.materialize() {
            self.assignment.set(row, col, old);
            self.materialize()?;
            return Err(e);
        }
        Ok(())
    }

    /// Set a whole assignment at once (one rebuild).
    pub fn set_assignment(&mut self, assignment: &Assignment) -> Result<()> {
        check_assignment(assignment, &self.geom, self.region_stamps[0].len())?;
        for (i, &t) in assignment.values.iter().enumerate() {
            if self.region_stamps[i][t].is_none() {
                return Err(Error::StampMissing {
                    row: i / self.geom.cols,
                    col: i % self.geom.cols,
                    template: t,
                });
            }
        }
        let old = std::mem::replace(&mut self.assignment, assignment.clone());
        if let Err(e) = self.materialize() {
            self.assignment = old;
            self.materialize()?;
            return Err(e);
        }
        Ok(())
    }

    fn materialize(&mut self) -> Result<()> {
        let cols = self.geom.cols;
        let stamps: Vec<Arc<RegionStamp>> = self
            .assignment
            .values
            .iter()
            .enumerate()
            .map(|(i, &t)| self.region_stamps[i][t].clone().expect("stamp present"))
            .collect();

        let mut keys: Vec<(NodeKey, u32)> = Vec::new();
        for s in &stamps {
            keys.extend(s.nodes.iter().zip(&s.rank).map(|(k, r)| (*k, *r)));
        }
        keys.sort_unstable_by_key(|&(k, _)| k);
        keys.dedup_by_key(|&mut (k, _)| k);

        let local_to_all: Vec<Vec<usize>> = stamps
            .iter()
            .map(|s| {
                s.nodes
                    .iter()
                    .map(|k| {
                        keys.binary_search_by_key(k, |&(kk, _)| kk)
                            .expect("key present")
                    })
                    .collect()
            })
            .collect();

        // connectivity to bumps
        let n_all = keys.len();
        let mut uf = UnionFind::new(n_all);
        for (s, map) in stamps.iter().zip(&local_to_all) {
            for e in &s.edges {
                uf.union(map[e.a as usize], map[e.b as usize]);
            }
        }
        let mut powered = vec![false; n_all];
        for (s, map) in stamps.iter().zip(&local_to_all) {
            for &(b, _) in &s.bumps {
                let root = uf.find(map[b as usize]);
                powered[root] = true;
            }
        }
        let mut keep = vec![false; n_all];
        for i in 0..n_all {
            keep[i] = powered[uf.find(i)];
        }
        for (s, map) in stamps.iter().zip(&local_to_all) {
            for &(n, amps) in &s.loads {
                let g = map[n as usize];
                if !keep[g] && amps != 0.0 {
                    return Err(Error::Disconnected {
                        node: keys[g].0.to_string(),
                    });
                }
            }
        }
        let mut renum = vec![usize::MAX; n_all];
        let mut node_index = Vec::new();
        let mut ranks = Vec::new();
        for i in 0..n_all {
            if keep[i] {
                renum[i] = node_index.len();
                node_index.push(keys[i].0);
                ranks.push(keys[i].1);
            }
        }
        let n = node_index.len();
        let region_nodes: Vec<Vec<usize>> = local_to_all
            .iter()
            .map(|m| m.iter().map(|&g| renum[g]).collect())
            .collect();

        let mut trip = Vec::new();
        let mut segments = Vec::new();
        let mut loads = vec![0.0; n];
        let mut bump_nodes = Vec::new();
        for (ri, (s, map)) in stamps.iter().zip(&region_nodes).enumerate() {
            for e in &s.edges {
                let (a, b) = (map[e.a as usize], map[e.b as usize]);
                if a == usize::MAX {
                    continue;
                }
                let g = e.conductance;
                trip.push((a, a, g));
                trip.push((b, b, g));
                trip.push((a, b, -g));
                trip.push((b, a, -g));
                if let EdgeKind::Wire(layer) = e.kind {
                    segments.push(Segment {
                        a,
                        b,
                        conductance: g,
                        layer,
                        region: (ri / cols, ri % cols),
                    });
                }
            }
            for &(b, g) in &s.bumps {
                let node = map[b as usize];
                if let Some(g) = g {
                    trip.push((node, node, g));
                }
                bump_nodes.push((node, g));
            }
            for &(l, amps) in &s.loads {
                let node = map[l as usize];
                if node != usize::MAX {
                    loads[node] += amps;
                }
            }
        }
        let conductance = CsrMatrix::from_triplets(n, &trip);
        let mut injection: Vec<f64> = loads.iter().map(|l| -l).collect();
        for &(node, g) in &bump_nodes {
            if let Some(g) = g {
                injection[node] += self.vdd * g;
            }
        }

        let ordering = if self.has_ranks {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by_key(|&i| (ranks[i], i));
            o
        } else {
            minimum_degree(&conductance.adjacency())
        };

        self.node_index = node_index;
        self.conductance = conductance;
        self.injection = injection;
        self.loads = loads;
        self.bump_nodes = bump_nodes;
        self.segments = segments;
        self.region_nodes = region_nodes;
        self.ordering = ordering;
        Ok(())
    }

    /// Coordinate-list dump of G (`row col value`) followed by the
    /// injection vector (`J row value`).
    pub fn write_coo(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# n {} nnz {}", self.n(), self.conductance.nnz())?;
        for i in 0..self.n() {
            for (j, v) in self.conductance.row(i) {
                writeln!(w, "{i} {j} {v:.17e}")?;
            }
        }
        for (i, v) in self.injection.iter().enumerate() {
            writeln!(w, "J {i} {v:.17e}")?;
        }
        Ok(())
    }
}

fn check_assignment(a: &Assignment, geom: &ChipGeometry, n_templates: usize) -> Result<()> {
    if a.rows != geom.rows || a.cols != geom.cols || a.values.len() != a.rows * a.cols {
        return Err(Error::validation(
            "assignment",
            format!(
                "grid is {}x{}, die needs {}x{}",
                a.rows, a.cols, geom.rows, geom.cols
            ),
        ));
    }
    if let Some(bad) = a.values.iter().find(|&&t| t >= n_templates) {
        return Err(Error::validation(
            "assignment",
            format!("template id {bad} out of range 0..{n_templates}"),
        ));
    }
    Ok(())
}

/// Which templates to stamp up front.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StampPolicy {
    /// Every template for every region; required for incremental updates.
    All,
    /// Only the template currently assigned to each region.
    AssignedOnly,
}

/// Assemble the full-chip system with every template stamped, so that any
/// region can later be switched with [`PdnSystem::restamp_region`].
pub fn assemble(
    cfg: &TechnologyConfig,
    templates: &[Template],
    assignment: &Assignment,
    current_map: &Map2D,
    macro_map: &Map2D,
    bumps: &[Bump],
) -> Result<PdnSystem> {
    assemble_with(
        cfg,
        templates,
        assignment,
        current_map,
        macro_map,
        bumps,
        StampPolicy::All,
    )
}

pub fn assemble_with(
    cfg: &TechnologyConfig,
    templates: &[Template],
    assignment: &Assignment,
    current_map: &Map2D,
    macro_map: &Map2D,
    bumps: &[Bump],
    policy: StampPolicy,
) -> Result<PdnSystem> {
    if !current_map.same_grid(macro_map) {
        return Err(Error::validation(
            "macro_map",
            "current and macro maps are not co-registered",
        ));
    }
    if (current_map.resolution - cfg.map_resolution).abs() > 1e-12 {
        return Err(Error::validation(
            "current_map",
            format!(
                "resolution {} differs from config {}",
                current_map.resolution, cfg.map_resolution
            ),
        ));
    }
    if bumps.is_empty() {
        return Err(Error::Disconnected {
            node: "chip (no VDD bumps)".into(),
        });
    }
    let geom = ChipGeometry::for_map(cfg, current_map);
    check_assignment(assignment, &geom, templates.len())?;
    let inp = StampInputs {
        cfg,
        geom: &geom,
        current: Some(current_map),
        macros: Some(macro_map),
        bumps,
        ideal_bumps: false,
    };
    let n_regions = geom.rows * geom.cols;
    let mut region_stamps: Vec<Vec<Option<Arc<RegionStamp>>>> =
        vec![vec![None; templates.len()]; n_regions];
    for r in 0..n_regions {
        let (row, col) = (r / geom.cols, r % geom.cols);
        let which: Vec<usize> = match policy {
            StampPolicy::All => (0..templates.len()).collect(),
            StampPolicy::AssignedOnly => vec![*assignment.get(row, col)],
        };
        for t in which {
            // a template that cannot feed this region's loads stays
            // unstamped unless it is the one assigned
            match stamp_region(&inp, row, col, &templates[t]) {
                Ok(st) => region_stamps[r][t] = Some(Arc::new(st)),
                Err(Error::Disconnected { .. }) if t != *assignment.get(row, col) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let has_ranks = policy == StampPolicy::All;
    if has_ranks {
        assign_universe_ranks(&mut region_stamps);
    }
    let mut sys = PdnSystem {
        geom,
        vdd: cfg.vdd(),
        assignment: assignment.clone(),
        region_stamps,
        node_index: Vec::new(),
        conductance: CsrMatrix::from_triplets(0, &[]),
        injection: Vec::new(),
        loads: Vec::new(),
        bump_nodes: Vec::new(),
        segments: Vec::new(),
        region_nodes: Vec::new(),
        ordering: Vec::new(),
        wire_area_cm2: wire_areas(cfg),
        has_ranks,
    };
    sys.materialize()?;
    Ok(sys)
}

/// Order the union graph of every cached stamp once. Any active subgraph
/// eliminated in the induced order has fill bounded by the union's fill.
fn assign_universe_ranks(region_stamps: &mut [Vec<Option<Arc<RegionStamp>>>]) {
    let mut keys: Vec<NodeKey> = region_stamps
        .iter()
        .flatten()
        .flatten()
        .flat_map(|s| s.nodes.iter().copied())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let idx = |k: &NodeKey| keys.binary_search(k).expect("key present");
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); keys.len()];
    for s in region_stamps.iter().flatten().flatten() {
        for e in &s.edges {
            let a = idx(&s.nodes[e.a as usize]);
            let b = idx(&s.nodes[e.b as usize]);
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let order = minimum_degree(&adj);
    let mut rank = vec![0u32; keys.len()];
    for (k, &v) in order.iter().enumerate() {
        rank[v] = k as u32;
    }
    for slot in region_stamps.iter_mut().flatten().flatten() {
        let s = Arc::make_mut(slot);
        s.rank = s.nodes.iter().map(|k| rank[idx(k)]).collect();
    }
}

fn wire_areas(cfg: &TechnologyConfig) -> Vec<f64> {
    cfg.pdn_layers
        .iter()
        .map(|l| l.stripe_width * l.thickness * 1e-8)
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Single-region system used to rank a template: ideal pads on a regular
/// `bump_pitch` lattice and one amp spread evenly over the load-layer nodes.
pub fn template_test_system(cfg: &TechnologyConfig, template: &Template) -> Result<PdnSystem> {
    let px = cfg.region_px();
    let geom = ChipGeometry::new(cfg, px, px);
    let pads = region_pad_lattice(cfg);
    let inp = StampInputs {
        cfg,
        geom: &geom,
        current: None,
        macros: None,
        bumps: &pads,
        ideal_bumps: true,
    };
    let mut stamp = stamp_region(&inp, 0, 0, template)?;
    let load_layer = cfg.load_layer() as u8;
    let load_nodes: Vec<u32> = (0..stamp.nodes.len() as u32)
        .filter(|&i| stamp.nodes[i as usize].layer == load_layer)
        .collect();
    if load_nodes.is_empty() {
        return Err(Error::Geometry("template has no load-layer nodes".into()));
    }
    let share = 1.0 / load_nodes.len() as f64;
    stamp.loads = load_nodes.iter().map(|&n| (n, share)).collect();
    stamp.load_nodes = load_nodes;
    let mut region_stamps = vec![vec![None; template.id + 1]];
    region_stamps[0][template.id] = Some(Arc::new(stamp));
    let mut sys = PdnSystem {
        geom,
        vdd: cfg.vdd(),
        assignment: Assignment::uniform(1, 1, template.id),
        region_stamps,
        node_index: Vec::new(),
        conductance: CsrMatrix::from_triplets(0, &[]),
        injection: Vec::new(),
        loads: Vec::new(),
        bump_nodes: Vec::new(),
        segments: Vec::new(),
        region_nodes: Vec::new(),
        ordering: Vec::new(),
        wire_area_cm2: wire_areas(cfg),
        has_ranks: false,
    };
    sys.materialize()?;
    Ok(sys)
}

/// Pads at `bump_pitch/2 + k * bump_pitch` inside one region.
pub fn region_pad_lattice(cfg: &TechnologyConfig) -> Vec<Bump> {
    let mut coords = Vec::new();
    let mut p = cfg.bump_pitch / 2.0;
    while p < cfg.region_size {
        coords.push(p);
        p += cfg.bump_pitch;
    }
    let mut out = Vec::new();
    for &y in &coords {
        for &x in &coords {
            out.push(Bump { x, y });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tests::lp65;
    use crate::templates::enumerate_templates;

    #[test]
    fn stripe_lattice_is_global() {
        assert_eq!(
            stripe_positions(50, 50, 0, 250),
            vec![25, 75, 125, 175, 225]
        );
        assert_eq!(stripe_positions(50, 200, 0, 250), vec![25, 225]);
        assert_eq!(stripe_positions(50, 200, 250, 500), vec![425]);
        // sparse positions are a subset of dense ones
        let dense = stripe_positions(50, 50, 0, 2000);
        for p in [100, 200] {
            for s in stripe_positions(50, p, 0, 2000) {
                assert!(dense.contains(&s));
            }
        }
    }

    #[test]
    fn two_crossing_layers_give_product_of_stripes_as_vias() {
        // brute-force enumerator: count (h, v) stripe pairs on two layers
        let mut cfg = lp65();
        cfg.pdn_layers.truncate(2);
        cfg.variable_layers = vec!["M4".into()];
        let templates = enumerate_templates(&cfg).unwrap();
        let geom = ChipGeometry::new(&cfg, cfg.region_px(), cfg.region_px());
        let inp = StampInputs {
            cfg: &cfg,
            geom: &geom,
            current: None,
            macros: None,
            bumps: &[],
            ideal_bumps: false,
        };
        for t in &templates {
            let s = stamp_region(&inp, 0, 0, t).unwrap();
            let vias = s
                .edges
                .iter()
                .filter(|e| matches!(e.kind, EdgeKind::Via(_)))
                .count();
            let mut brute = 0;
            let r = to_nm(cfg.region_size);
            for y in (0..r).step_by(500) {
                for x in (0..r).step_by(500) {
                    let h = (y - 25_000).rem_euclid(50_000) == 0;
                    let v = (x - 25_000).rem_euclid(50_000 * t.multipliers[1] as i64) == 0;
                    if h && v {
                        brute += 1;
                    }
                }
            }
            assert_eq!(vias, brute, "template {:?}", t.multipliers);
        }
    }
}
