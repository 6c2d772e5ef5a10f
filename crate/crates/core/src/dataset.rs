// SPDX-License-Identifier: Apache-2.0
//! Labeled datasets: SA labels per region and stage, plus window export.
//!
//! On disk:
//!
//! ```text
//! <dir>/manifest.json   DatasetManifest
//! <dir>/labels.csv      benchmark,region_row,region_col,stage,template_id
//! ```
//!
//! `export_windows` adds `windows/<bench>/<stage>/<row>_<col>/<channel>.pdnm`,
//! one PDNM1 map per channel of every record.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{Benchmark, Stage};
use crate::config::TechnologyConfig;
use crate::error::{Error, Result};
use crate::features::{extract_window, CHANNEL_NAMES};
use crate::grid::Assignment;
use crate::sa::BenchLabels;

pub const DATASET_FORMAT: &str = "pdn-labels/1";
const MANIFEST: &str = "manifest.json";
const LABELS: &str = "labels.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub benchmark: String,
    pub region_row: usize,
    pub region_col: usize,
    pub stage: Stage,
    pub template_id: usize,
}

/// Outcome of labeling one stage of one benchmark. Wall-clock times are
/// left out so that reruns produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub ok: bool,
    pub feasible: bool,
    pub cost: Option<f64>,
    pub solves: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub floorplan: StageOutcome,
    pub placement: Option<StageOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub technology: String,
    pub templates: usize,
    pub seed: u64,
    pub benchmarks: Vec<BenchEntry>,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub manifest: DatasetManifest,
    pub records: Vec<LabelRecord>,
}

fn outcome(r: &Result<crate::sa::AnnealResult>) -> StageOutcome {
    match r {
        Ok(a) => StageOutcome {
            ok: true,
            feasible: a.feasible,
            cost: Some(a.breakdown.total),
            solves: a.solves,
            error: None,
        },
        Err(e) => StageOutcome {
            ok: false,
            feasible: false,
            cost: None,
            solves: 0,
            error: Some(e.to_string()),
        },
    }
}

fn push_records(out: &mut Vec<LabelRecord>, name: &str, stage: Stage, a: &Assignment) {
    for ((row, col), &id) in a.iter_cells() {
        out.push(LabelRecord {
            benchmark: name.to_string(),
            region_row: row,
            region_col: col,
            stage,
            template_id: id,
        });
    }
}

impl LabeledDataset {
    /// Build from labeling outcomes. Failed stages are recorded in the
    /// manifest and contribute no records; infeasible results are kept
    /// out of the records too.
    /// `shapes` holds the (rows, cols) region grid of each benchmark.
    pub fn from_labels(
        labels: &[BenchLabels],
        shapes: &[(usize, usize)],
        technology: &str,
        templates: usize,
        seed: u64,
    ) -> Self {
        let mut records = Vec::new();
        let mut entries = Vec::new();
        for (l, &(rows, cols)) in labels.iter().zip(shapes) {
            if let Ok(fp) = &l.floorplan {
                if fp.feasible {
                    push_records(&mut records, &l.name, Stage::Floorplan, &fp.assignment);
                }
            }
            if let Some(Ok(pl)) = &l.placement {
                if pl.feasible {
                    push_records(&mut records, &l.name, Stage::Placement, &pl.assignment);
                }
            }
            entries.push(BenchEntry {
                name: l.name.clone(),
                rows,
                cols,
                floorplan: outcome(&l.floorplan),
                placement: l.placement.as_ref().map(outcome),
            });
        }
        Self {
            manifest: DatasetManifest {
                format: DATASET_FORMAT.into(),
                technology: technology.into(),
                templates,
                seed,
                records: records.len(),
                benchmarks: entries,
            },
            records,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(LABELS);
        let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", p.display()));
        let mut w = csv::Writer::from_path(&p).map_err(csv_err)?;
        for r in &self.records {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::parse(&p, e))?;
        if manifest.format != DATASET_FORMAT {
            return Err(Error::parse(
                &p,
                format!("unknown format `{}`", manifest.format),
            ));
        }
        let p = dir.join(LABELS);
        let mut r = csv::Reader::from_path(&p).map_err(|e| Error::parse(&p, e))?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<LabelRecord>, _>>()
            .map_err(|e| Error::parse(&p, e))?;
        if records.len() != manifest.records {
            return Err(Error::parse(
                &p,
                format!(
                    "{} records, manifest says {}",
                    records.len(),
                    manifest.records
                ),
            ));
        }
        Ok(Self { manifest, records })
    }

    /// Labels of one benchmark and stage as an assignment.
    pub fn assignment(&self, bench: &str, stage: Stage) -> Option<Assignment> {
        let e = self.manifest.benchmarks.iter().find(|e| e.name == bench)?;
        let mut a = Assignment::uniform(e.rows, e.cols, usize::MAX);
        let mut seen = 0;
        for r in self
            .records
            .iter()
            .filter(|r| r.benchmark == bench && r.stage == stage)
        {
            if r.region_row < e.rows && r.region_col < e.cols {
                a.set(r.region_row, r.region_col, r.template_id);
                seen += 1;
            }
        }
        (seen == a.len() && a.values.iter().all(|&v| v != usize::MAX)).then_some(a)
    }

    pub fn count(&self, stage: Stage) -> usize {
        self.records.iter().filter(|r| r.stage == stage).count()
    }
}

/// Benchmark directories under `root` (those holding a manifest), sorted
/// by name.
pub fn benchmark_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut out = Vec::new();
    for e in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let e = e.map_err(|e| Error::io(root, e))?;
        let p = e.path();
        if p.is_dir() && p.join(MANIFEST).is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Write every record's window as PDNM1 channel maps. Placement windows
/// carry the floorplan labels as their template plane, so a placement
/// record is only exported when its floorplan labels exist. Returns the
/// number of windows written.
pub fn export_windows(
    ds: &LabeledDataset,
    benches: &[Benchmark],
    cfg: &TechnologyConfig,
    out: impl AsRef<Path>,
) -> Result<usize> {
    let out = out.as_ref();
    let mut written = 0;
    for b in benches {
        let name = &b.manifest.name;
        let fp = ds.assignment(name, Stage::Floorplan);
        for stage in [Stage::Floorplan, Stage::Placement] {
            let Some(labels) = ds.assignment(name, stage) else {
                continue;
            };
            let stack = match stage {
                Stage::Floorplan => b.feature_stack(cfg, stage, None)?,
                Stage::Placement => {
                    let Some(fp) = &fp else { continue };
                    b.feature_stack(cfg, stage, Some((fp, ds.manifest.templates)))?
                }
            };
            for ((row, col), _) in labels.iter_cells() {
                let win = extract_window(&stack, cfg, row, col);
                let dir = out
                    .join(name)
                    .join(stage.as_str())
                    .join(format!("{row}_{col}"));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for c in 0..win.channels {
                    win.channel_map(c, stack.resolution())
                        .save(dir.join(format!("{}.pdnm", CHANNEL_NAMES[c])))?;
                }
                written += 1;
            }
        }
    }
    Ok(written)
}
