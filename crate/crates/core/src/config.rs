// SPDX-License-Identifier: Apache-2.0
//! Technology description shared by every stage of the flow.
//!
//! A configuration is a single JSON document. Lengths are micrometres,
//! resistances ohms, currents amps and the EM limit amps per square
//! centimetre. See `docs/config-schema.md` for the field-by-field schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer nanometres, used for every geometric key so stripe positions
/// compare exactly.
pub type Nm = i64;

pub fn to_nm(um: f64) -> Nm {
    (um * 1000.0).round() as Nm
}

pub fn from_nm(nm: Nm) -> f64 {
    nm as f64 / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Horizontal,
    Vertical,
}

impl Direction {
    pub fn other(self) -> Self {
        match self {
            Direction::Horizontal => Direction::Vertical,
            Direction::Vertical => Direction::Horizontal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub direction: Direction,
    /// Ohms per square.
    pub sheet_resistance: f64,
    pub thickness: f64,
    pub min_track_pitch: f64,
    pub stripe_width: f64,
    /// Densest stripe pitch. For layers that do not vary across templates
    /// this is the only pitch used.
    pub pitch_dense: f64,
    #[serde(default)]
    pub macro_blocked: bool,
}

impl LayerSpec {
    /// Routing tracks covered by one stripe.
    pub fn tracks_per_stripe(&self) -> u64 {
        let w = to_nm(self.stripe_width);
        let t = to_nm(self.min_track_pitch);
        ((w + t - 1) / t) as u64
    }

    /// Resistance of a stripe segment of the given length.
    pub fn segment_resistance(&self, length_um: f64) -> f64 {
        self.sheet_resistance * length_um / self.stripe_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnologyConfig {
    pub name: String,
    /// Bottom to top.
    pub pdn_layers: Vec<LayerSpec>,
    pub variable_layers: Vec<String>,
    pub region_size: f64,
    pub bump_pitch: f64,
    /// Micrometres per pixel of every feature map.
    pub map_resolution: f64,
    /// Static IR drop limit d_c, volts.
    pub ir_limit_dc: f64,
    /// EM current density limit J_c, A/cm^2.
    pub em_limit_jc: f64,
    /// Ohms per via at a stripe crossing.
    pub via_resistance: f64,
    pub bump_resistance: f64,
    /// Supply voltage. Defaults to 100 * ir_limit_dc so that d_c is 1% of VDD.
    #[serde(default)]
    pub vdd: Option<f64>,
    /// Attach loads to the second PDN layer and drop the lowest layer from
    /// the conductance matrix.
    #[serde(default)]
    pub lump_lowest_layer: bool,
}

impl TechnologyConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TechnologyConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TechnologyConfig =
            serde_json::from_str(text).map_err(|e| Error::parse("<string>", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn vdd(&self) -> f64 {
        self.vdd.unwrap_or(100.0 * self.ir_limit_dc)
    }

    pub fn region_px(&self) -> usize {
        (to_nm(self.region_size) / to_nm(self.map_resolution)) as usize
    }

    /// Side length, in pixels, of a 3x3-region window.
    pub fn window_px(&self) -> usize {
        3 * self.region_px()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.pdn_layers.iter().position(|l| l.name == name)
    }

    pub fn is_variable(&self, layer: usize) -> bool {
        self.variable_layers
            .iter()
            .any(|v| v == &self.pdn_layers[layer].name)
    }

    /// Indices of variable layers in bottom-to-top order.
    pub fn variable_indices(&self) -> Vec<usize> {
        (0..self.pdn_layers.len())
            .filter(|&i| self.is_variable(i))
            .collect()
    }

    /// Lowest layer that carries loads.
    pub fn load_layer(&self) -> usize {
        usize::from(self.lump_lowest_layer)
    }

    pub fn first_unblocked_layer(&self) -> usize {
        self.pdn_layers
            .iter()
            .position(|l| !l.macro_blocked)
            .unwrap_or(self.pdn_layers.len() - 1)
    }

    pub fn highest_blocked_layer(&self) -> Option<usize> {
        self.pdn_layers.iter().rposition(|l| l.macro_blocked)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::validation("name", "must not be empty"));
        }
        if self.pdn_layers.len() < 2 {
            return Err(Error::validation("pdn_layers", "need at least two layers"));
        }
        positive("region_size", self.region_size)?;
        positive("bump_pitch", self.bump_pitch)?;
        positive("map_resolution", self.map_resolution)?;
        positive("ir_limit_dc", self.ir_limit_dc)?;
        positive("em_limit_jc", self.em_limit_jc)?;
        positive("via_resistance", self.via_resistance)?;
        positive("bump_resistance", self.bump_resistance)?;
        if let Some(v) = self.vdd {
            positive("vdd", v)?;
        }

        let region = to_nm(self.region_size);
        if region % to_nm(self.map_resolution) != 0 {
            return Err(Error::validation(
                "map_resolution",
                format!(
                    "region_size {} is not an integer multiple of {}",
                    self.region_size, self.map_resolution
                ),
            ));
        }
        let ratio = self.region_size / self.bump_pitch;
        if !(0.5..=2.0).contains(&ratio) {
            return Err(Error::validation(
                "region_size",
                format!(
                    "region_size {} must be within a factor of 2 of bump_pitch {}",
                    self.region_size, self.bump_pitch
                ),
            ));
        }

        for (i, layer) in self.pdn_layers.iter().enumerate() {
            let f = |s: &str| format!("pdn_layers[{i}].{s}");
            if layer.name.trim().is_empty() {
                return Err(Error::validation(f("name"), "must not be empty"));
            }
            if self.pdn_layers[..i].iter().any(|l| l.name == layer.name) {
                return Err(Error::validation(f("name"), "duplicate layer name"));
            }
            positive(&f("sheet_resistance"), layer.sheet_resistance)?;
            positive(&f("thickness"), layer.thickness)?;
            positive(&f("min_track_pitch"), layer.min_track_pitch)?;
            positive(&f("stripe_width"), layer.stripe_width)?;
            positive(&f("pitch_dense"), layer.pitch_dense)?;
            let pitch = to_nm(layer.pitch_dense);
            if pitch % to_nm(layer.min_track_pitch) != 0 {
                return Err(Error::validation(
                    f("pitch_dense"),
                    "not an integer multiple of min_track_pitch",
                ));
            }
            if pitch % 2 != 0 {
                return Err(Error::validation(
                    f("pitch_dense"),
                    "must be an even number of nanometres",
                ));
            }
            if region % pitch != 0 {
                return Err(Error::validation(
                    f("pitch_dense"),
                    format!("region_size {} is not a multiple of it", self.region_size),
                ));
            }
            if layer.tracks_per_stripe() as i64 * to_nm(layer.min_track_pitch) > pitch {
                return Err(Error::validation(
                    f("stripe_width"),
                    "stripe does not fit within the dense pitch",
                ));
            }
            if i > 0 && self.pdn_layers[i - 1].direction == layer.direction {
                return Err(Error::validation(
                    f("direction"),
                    "adjacent PDN layers must alternate direction",
                ));
            }
        }

        let blocked: Vec<bool> = self.pdn_layers.iter().map(|l| l.macro_blocked).collect();
        if let Some(first_open) = blocked.iter().position(|b| !b) {
            if blocked[first_open..].iter().any(|&b| b) {
                return Err(Error::validation(
                    "pdn_layers",
                    "macro-blocked layers must form a bottom prefix of the stack",
                ));
            }
        } else {
            return Err(Error::validation(
                "pdn_layers",
                "at least one layer must be unblocked by macros",
            ));
        }

        if self.variable_layers.is_empty() {
            return Err(Error::validation(
                "variable_layers",
                "at least one layer must vary across templates",
            ));
        }
        for (i, name) in self.variable_layers.iter().enumerate() {
            if self.layer_index(name).is_none() {
                return Err(Error::validation(
                    format!("variable_layers[{i}]"),
                    format!("unknown layer `{name}`"),
                ));
            }
            if self.variable_layers[..i].contains(name) {
                return Err(Error::validation(
                    format!("variable_layers[{i}]"),
                    "duplicate layer",
                ));
            }
        }
        if self.lump_lowest_layer && self.pdn_layers.len() < 3 {
            return Err(Error::validation(
                "lump_lowest_layer",
                "needs at least three PDN layers",
            ));
        }
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be > 0, got {v}")))
    }
}
