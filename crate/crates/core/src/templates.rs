// SPDX-License-Identifier: Apache-2.0
//! Template enumeration by pitch depopulation, ranking and pruning.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{to_nm, Nm, TechnologyConfig};
use crate::error::{Error, Result};
use crate::grid::template_test_system;
use crate::solver::solve_drops;

/// Pitch multipliers a variable layer may take: dense, medium, sparse.
pub const PITCH_MULTIPLIERS: [u32; 3] = [1, 2, 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: usize,
    /// Per PDN layer, bottom to top: pitch / pitch_dense.
    pub multipliers: Vec<u32>,
    /// Per PDN layer pitch in micrometres.
    pub pitches: Vec<f64>,
    /// Ohms; worst drop per amp on the ranking fixture.
    pub equivalent_resistance: f64,
    pub utilization: f64,
}

impl Template {
    pub fn pitch_nm(&self, cfg: &TechnologyConfig, layer: usize) -> Nm {
        to_nm(cfg.pdn_layers[layer].pitch_dense) * self.multipliers[layer] as Nm
    }

    /// Whether `self` is at least as dense as `other` on every layer and
    /// strictly denser on one.
    pub fn strictly_denser_than(&self, other: &Template) -> bool {
        self.multipliers
            .iter()
            .zip(&other.multipliers)
            .all(|(a, b)| a <= b)
            && self.multipliers != other.multipliers
    }
}

/// Track fraction of a template: tracks used by stripes over tracks
/// available, summed over all PDN layers per unit length.
pub fn utilization(multipliers: &[u32], cfg: &TechnologyConfig) -> f64 {
    let mut used = 0.0;
    let mut avail = 0.0;
    for (l, spec) in cfg.pdn_layers.iter().enumerate() {
        let pitch = spec.pitch_dense * multipliers[l] as f64;
        used += spec.tracks_per_stripe() as f64 / pitch;
        avail += 1.0 / spec.min_track_pitch;
    }
    used / avail
}

/// All 3^k depopulated templates, utilization filled in, resistance zero.
/// The variable layer nearest the top varies fastest.
pub fn enumerate_templates(cfg: &TechnologyConfig) -> Result<Vec<Template>> {
    let vars = cfg.variable_indices();
    if vars.is_empty() {
        return Err(Error::validation("variable_layers", "must not be empty"));
    }
    let n = PITCH_MULTIPLIERS.len().pow(vars.len() as u32);
    let mut out = Vec::with_capacity(n);
    for code in 0..n {
        let mut mult = vec![1u32; cfg.pdn_layers.len()];
        let mut c = code;
        for &l in vars.iter().rev() {
            mult[l] = PITCH_MULTIPLIERS[c % 3];
            c /= 3;
        }
        let pitches = cfg
            .pdn_layers
            .iter()
            .zip(&mult)
            .map(|(s, &m)| s.pitch_dense * m as f64)
            .collect();
        out.push(Template {
            id: code,
            utilization: utilization(&mult, cfg),
            multipliers: mult,
            pitches,
            equivalent_resistance: 0.0,
        });
    }
    Ok(out)
}

/// Worst-node drop for 1 A spread evenly over the load-layer nodes of one
/// region with ideal pads on the bump lattice.
pub fn equivalent_resistance(t: &Template, cfg: &TechnologyConfig) -> Result<f64> {
    let sys = template_test_system(cfg, t)?;
    let drops = solve_drops(&sys)?;
    Ok(drops.iter().copied().fold(0.0, f64::max))
}

/// Fill in the resistance of every template (in parallel).
pub fn rank_templates(templates: &mut [Template], cfg: &TechnologyConfig) -> Result<()> {
    let rs: Vec<Result<f64>> = templates
        .par_iter()
        .map(|t| equivalent_resistance(t, cfg))
        .collect();
    for (t, r) in templates.iter_mut().zip(rs) {
        t.equivalent_resistance = r?;
    }
    Ok(())
}

/// Default pruning tolerance: 2% of the resistance spread.
pub fn default_epsilon(templates: &[Template]) -> f64 {
    let (lo, hi) = templates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            (
                lo.min(t.equivalent_resistance),
                hi.max(t.equivalent_resistance),
            )
        });
    if hi > lo {
        0.02 * (hi - lo)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub technology: TechnologyConfig,
    pub epsilon: f64,
    /// Sorted by increasing resistance; `templates[i].id == i`.
    pub templates: Vec<Template>,
}

/// Drop template i when some j has lower utilization and a resistance no
/// worse than `R_i + epsilon`. The test is made against the full input
/// set. Survivors are sorted by resistance and renumbered.
pub fn prune(templates: &[Template], epsilon: f64, cfg: &TechnologyConfig) -> Result<TemplateSet> {
    let keep: Vec<&Template> = templates
        .iter()
        .filter(|ti| {
            !templates.iter().any(|tj| {
                tj.utilization < ti.utilization
                    && ti.equivalent_resistance > tj.equivalent_resistance - epsilon
            })
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut kept: Vec<Template> = keep.into_iter().cloned().collect();
    kept.sort_by(|a, b| {
        a.equivalent_resistance
            .total_cmp(&b.equivalent_resistance)
            .then(b.utilization.total_cmp(&a.utilization))
    });
    for (i, t) in kept.iter_mut().enumerate() {
        t.id = i;
    }
    Ok(TemplateSet {
        technology: cfg.clone(),
        epsilon,
        templates: kept,
    })
}

/// Enumerate, rank and prune. `epsilon = None` uses [`default_epsilon`].
pub fn build_template_set(cfg: &TechnologyConfig, epsilon: Option<f64>) -> Result<TemplateSet> {
    let mut all = enumerate_templates(cfg)?;
    rank_templates(&mut all, cfg)?;
    let eps = epsilon.unwrap_or_else(|| default_epsilon(&all));
    if !(eps >= 0.0) {
        return Err(Error::validation("epsilon", "must be >= 0"));
    }
    prune(&all, eps, cfg)
}

impl TemplateSet {
    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: usize) -> &Template {
        &self.templates[id]
    }

    /// Every pair (i, j) where i dominates j.
    pub fn dominated_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in &self.templates {
            for b in &self.templates {
                if b.equivalent_resistance > a.equivalent_resistance
                    && b.utilization > a.utilization
                {
                    out.push((a.id, b.id));
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("template set serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: TemplateSet = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        set.technology.validate()?;
        let nl = set.technology.pdn_layers.len();
        for (i, t) in set.templates.iter().enumerate() {
            if t.id != i || t.multipliers.len() != nl || t.pitches.len() != nl {
                return Err(Error::parse(path, format!("template {i} is malformed")));
            }
        }
        if set.templates.is_empty() {
            return Err(Error::EmptySet);
        }
        Ok(set)
    }

    /// Text table: id, pitch per layer, resistance and utilization.
    pub fn report(&self) -> String {
        use std::fmt::Write;
        let cfg = &self.technology;
        let mut s = String::new();
        let _ = write!(s, "{:>3}", "id");
        for l in &cfg.pdn_layers {
            let _ = write!(s, " {:>8}", l.name);
        }
        let _ = writeln!(s, " {:>12} {:>8}", "R_ohm", "U_pct");
        for t in &self.templates {
            let _ = write!(s, "{:>3}", t.id);
            for p in &t.pitches {
                let _ = write!(s, " {:>8.1}", p);
            }
            let _ = writeln!(
                s,
                " {:>12.6e} {:>8.3}",
                t.equivalent_resistance,
                t.utilization * 100.0
            );
        }
        let _ = writeln!(
            s,
            "epsilon {:.6e} ohm, {} templates",
            self.epsilon,
            self.len()
        );
        s
    }
}
