// SPDX-License-Identifier: Apache-2.0
//! Subcommand implementations. Each writes one run manifest into its output
//! directory; with `resume` set, a directory whose manifest matches the
//! current inputs is left alone.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use pdnforge::bench::{generate_corpus, Benchmark, GenParams, Stage};
use pdnforge::cnn::{synthesize, CnnModel};
use pdnforge::config::TechnologyConfig;
use pdnforge::dataset::{benchmark_dirs, export_windows, LabeledDataset};
use pdnforge::grid::Assignment;
use pdnforge::metrics::{evaluate as eval_report, grid_to_map, write_heatmap_ppm};
use pdnforge::sa::{fresh_system, label_many, SaParams};
use pdnforge::solver::{is_safe, j_map, solve_with, summary, EmMode};
use pdnforge::templates::{build_template_set, TemplateSet};

use crate::manifest::{hash_path, RunManifest};
use crate::{Common, EmArg, LabelMode};

fn load_cfg(m: &mut RunManifest, path: &Path) -> Result<TechnologyConfig> {
    let cfg = TechnologyConfig::load(path)?;
    m.config_hash = Some(hash_path(path)?);
    Ok(cfg)
}

fn load_templates(m: &mut RunManifest, path: &Path, cfg: &TechnologyConfig) -> Result<TemplateSet> {
    let tset = TemplateSet::load(path)?;
    if &tset.technology != cfg {
        return Err(pdnforge::Error::Validation {
            field: "templates".into(),
            msg: format!(
                "{} was built for configuration `{}`, not the one given",
                path.display(),
                tset.technology.name
            ),
        }
        .into());
    }
    m.input("templates", path)?;
    Ok(tset)
}

/// `base` with the keys of the JSON object in `path` laid over it.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, path: Option<&Path>) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let Some(p) = path {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let over: Value = serde_json::from_str(&text).map_err(|e| pdnforge::Error::Parse {
            path: p.to_path_buf(),
            msg: e.to_string(),
        })?;
        let Value::Object(over) = over else {
            return Err(pdnforge::Error::Parse {
                path: p.to_path_buf(),
                msg: "expected a JSON object".into(),
            }
            .into());
        };
        let obj = v
            .as_object_mut()
            .expect("parameters serialize to an object");
        for (k, val) in over {
            if !obj.contains_key(&k) {
                return Err(pdnforge::Error::Parse {
                    path: p.to_path_buf(),
                    msg: format!("unknown parameter `{k}`"),
                }
                .into());
            }
            obj.insert(k, val);
        }
    }
    serde_json::from_value(v).map_err(|e| {
        pdnforge::Error::Parse {
            path: path.map(Path::to_path_buf).unwrap_or_default(),
            msg: e.to_string(),
        }
        .into()
    })
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn skip(m: &RunManifest, dir: &Path, resume: bool) -> bool {
    if resume && m.is_done(dir) {
        eprintln!("{}: {} is up to date", m.command, dir.display());
        return true;
    }
    false
}

pub fn templates(c: &Common, epsilon: Option<f64>, resume: bool) -> Result<()> {
    let mut m = RunManifest::new("templates");
    let cfg = load_cfg(&mut m, &c.config)?;
    m.parameters = json!({ "epsilon": epsilon });
    if skip(&m, &c.out, resume) {
        return Ok(());
    }
    mkdir(&c.out)?;
    let tset = m.timed("build", || Ok(build_template_set(&cfg, epsilon)?))?;
    tset.save(c.out.join("templates.json"))?;
    let report = tset.report();
    write(&c.out.join("report.txt"), &report)?;
    print!("{report}");
    m.finish(&c.out)?;
    Ok(())
}

pub fn gen(c: &Common, count: usize, seed: u64, params: Option<&Path>, resume: bool) -> Result<()> {
    let mut m = RunManifest::new("gen");
    let cfg = load_cfg(&mut m, &c.config)?;
    let mut p = overlay(&GenParams::for_technology(&cfg), params)?;
    p.seed = seed;
    p.validate()?;
    m.seed = Some(seed);
    m.parameters = json!({ "count": count, "generator": p });
    if skip(&m, &c.out, resume) {
        return Ok(());
    }
    mkdir(&c.out)?;
    let benches = m.timed("generate", || {
        Ok(generate_corpus(&cfg, &p, seed, count, c.workers())?)
    })?;
    m.timed("write", || {
        for (i, b) in benches.into_iter().enumerate() {
            let b = b.with_context(|| format!("generating benchmark {i}"))?;
            b.save(c.out.join(&b.manifest.name))?;
        }
        Ok(())
    })?;
    eprintln!("gen: wrote {count} benchmarks to {}", c.out.display());
    m.finish(&c.out)?;
    Ok(())
}

pub fn analyze(
    c: &Common,
    bench: &Path,
    assignment: &Path,
    templates: &Path,
    stage: Stage,
    em: EmArg,
) -> Result<()> {
    let mut m = RunManifest::new("analyze");
    let cfg = load_cfg(&mut m, &c.config)?;
    let tset = load_templates(&mut m, templates, &cfg)?;
    let b = Benchmark::load(bench)?;
    let a = Assignment::load(assignment)?;
    m.input("benchmark", bench)?;
    m.input("assignment", assignment)?;
    let mode = match em {
        EmArg::Mean => EmMode::Mean,
        EmArg::Max => EmMode::Max,
    };
    m.parameters = json!({ "stage": stage, "em": mode });
    mkdir(&c.out)?;
    let sys = m.timed("assemble", || Ok(fresh_system(&b, &cfg, &tset, stage, &a)?))?;
    let res = m.timed("solve", || Ok(solve_with(&sys, mode)?))?;
    let safety = is_safe(&res, &cfg);
    res.ir_drop_map.save(c.out.join("ir_drop.pdnm"))?;
    j_map(&res, &sys).save(c.out.join("em_density.pdnm"))?;
    let text = summary(&res, &cfg);
    write(&c.out.join("summary.txt"), &text)?;
    write(
        &c.out.join("safety.json"),
        &serde_json::to_string_pretty(&safety)?,
    )?;
    print!("{text}");
    m.finish(&c.out)?;
    if !safety.safe {
        return Err(pdnforge::Error::Infeasible(format!(
            "assignment has {} IR/EM violations",
            safety.violations.len()
        ))
        .into());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn label(
    c: &Common,
    benchmarks: &Path,
    templates: &Path,
    mode: LabelMode,
    seed: u64,
    sa_params: Option<&Path>,
    resume: bool,
) -> Result<()> {
    let mut m = RunManifest::new("label");
    let cfg = load_cfg(&mut m, &c.config)?;
    let tset = load_templates(&mut m, templates, &cfg)?;
    let mut p = overlay(&SaParams::default(), sa_params)?;
    p.seed = seed;
    p.validate()?;
    m.input("benchmarks", benchmarks)?;
    m.seed = Some(seed);
    let placement = matches!(mode, LabelMode::Both);
    m.parameters = json!({ "placement": placement, "sa": p });
    if skip(&m, &c.out, resume) {
        return Ok(());
    }
    mkdir(&c.out.join("assignments"))?;
    let dirs = benchmark_dirs(benchmarks)?;
    let workers = c.workers();
    let mut labels = Vec::with_capacity(dirs.len());
    let mut shapes = Vec::with_capacity(dirs.len());
    m.timed("anneal", || {
        // bounded batches keep only a few benchmarks in memory
        for chunk in dirs.chunks(2 * workers) {
            let benches = chunk
                .iter()
                .map(Benchmark::load)
                .collect::<pdnforge::Result<Vec<_>>>()?;
            for l in label_many(&benches, &cfg, &tset, &p, placement, workers)? {
                let mut line = format!("label: {}", l.name);
                for (stage, r) in [
                    (Stage::Floorplan, Some(&l.floorplan)),
                    (Stage::Placement, l.placement.as_ref()),
                ] {
                    match r {
                        Some(Ok(a)) => {
                            a.assignment.save(c.out.join("assignments").join(format!(
                                "{}_{}.json",
                                l.name,
                                stage.as_str()
                            )))?;
                            line += &format!(
                                " {} cost {:.3}{} ({:.1}s)",
                                stage.as_str(),
                                a.breakdown.total,
                                if a.feasible { "" } else { " INFEASIBLE" },
                                a.elapsed.as_secs_f64()
                            );
                        }
                        Some(Err(e)) => line += &format!(" {} failed: {e}", stage.as_str()),
                        None => {}
                    }
                }
                eprintln!("{line}");
                labels.push(l);
            }
            shapes.extend(benches.iter().map(|b| (b.rows(), b.cols())));
        }
        Ok(())
    })?;
    let ds = LabeledDataset::from_labels(&labels, &shapes, &cfg.name, tset.len(), seed);
    ds.save(&c.out)?;
    eprintln!(
        "label: {} floorplan and {} placement records",
        ds.count(Stage::Floorplan),
        ds.count(Stage::Placement)
    );
    m.finish(&c.out)?;
    Ok(())
}

pub fn export(c: &Common, dataset: &Path, benchmarks: &Path, resume: bool) -> Result<()> {
    let mut m = RunManifest::new("export-dataset");
    let cfg = load_cfg(&mut m, &c.config)?;
    m.input("dataset", dataset)?;
    m.input("benchmarks", benchmarks)?;
    if skip(&m, &c.out, resume) {
        return Ok(());
    }
    let ds = LabeledDataset::load(dataset)?;
    mkdir(&c.out)?;
    ds.save(&c.out)?;
    let windows = c.out.join("windows");
    let n = m.timed("export", || {
        let mut n = 0;
        for e in &ds.manifest.benchmarks {
            let b = Benchmark::load(benchmarks.join(&e.name))?;
            n += export_windows(&ds, std::slice::from_ref(&b), &cfg, &windows)?;
        }
        Ok(n)
    })?;
    eprintln!("export-dataset: {n} windows");
    m.finish(&c.out)?;
    Ok(())
}

pub fn infer(
    c: &Common,
    bench: &Path,
    fp_model: &Path,
    pl_model: &Path,
    templates: &Path,
    resume: bool,
) -> Result<()> {
    let mut m = RunManifest::new("infer");
    let cfg = load_cfg(&mut m, &c.config)?;
    let tset = load_templates(&mut m, templates, &cfg)?;
    m.input("benchmark", bench)?;
    m.input("fp_model", fp_model)?;
    m.input("pl_model", pl_model)?;
    if skip(&m, &c.out, resume) {
        return Ok(());
    }
    let b = Benchmark::load(bench)?;
    let fp = CnnModel::load(fp_model)?;
    let pl = CnnModel::load(pl_model)?;
    mkdir(&c.out)?;
    let s = m.timed("synthesize", || Ok(synthesize(&b, &cfg, &tset, &fp, &pl)?))?;
    s.floorplan.save(c.out.join("floorplan.json"))?;
    s.placement.save(c.out.join("placement.json"))?;
    let mut csv = String::from("stage,region_row,region_col,template_id,logits\n");
    for (stage, preds) in [
        (Stage::Floorplan, &s.floorplan_predictions),
        (Stage::Placement, &s.placement_predictions),
    ] {
        for (i, p) in preds.iter().enumerate() {
            let logits: Vec<String> = p.logits.iter().map(|v| v.to_string()).collect();
            csv += &format!(
                "{},{},{},{},{}\n",
                stage.as_str(),
                i / b.cols(),
                i % b.cols(),
                p.template,
                logits.join(" ")
            );
        }
    }
    write(&c.out.join("predictions.csv"), &csv)?;
    eprintln!(
        "infer: {} regions in {:.3}s",
        b.regions(),
        s.elapsed.as_secs_f64()
    );
    m.finish(&c.out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    c: &Common,
    bench: &Path,
    assignment: &Path,
    sa_label: Option<&Path>,
    templates: &Path,
    stage: Stage,
    plots: bool,
    resume: bool,
) -> Result<()> {
    let mut m = RunManifest::new("evaluate");
    let cfg = load_cfg(&mut m, &c.config)?;
    let tset = load_templates(&mut m, templates, &cfg)?;
    m.input("benchmark", bench)?;
    m.input("assignment", assignment)?;
    if let Some(p) = sa_label {
        m.input("sa_label", p)?;
    }
    m.parameters = json!({ "stage": stage, "plots": plots });
    if skip(&m, &c.out, resume) {
        return Ok(());
    }
    let b = Benchmark::load(bench)?;
    let a = Assignment::load(assignment)?;
    let sa = sa_label.map(Assignment::load).transpose()?;
    mkdir(&c.out)?;
    let r = m.timed("evaluate", || {
        Ok(eval_report(&b, &cfg, &tset, stage, &a, sa.as_ref())?)
    })?;
    let text = r.to_text();
    write(&c.out.join("report.txt"), &text)?;
    write(
        &c.out.join("report.json"),
        &serde_json::to_string_pretty(&r)?,
    )?;
    r.write_delta_csv(c.out.join("delta_c_r.csv"))?;
    if plots {
        if let Some(ir) = &r.ir_drop_map {
            write_heatmap_ppm(ir, c.out.join("ir_drop.ppm"))?;
        }
        write_heatmap_ppm(&grid_to_map(&r.delta_c_r, 32), c.out.join("delta_c_r.ppm"))?;
    }
    print!("{text}");
    m.finish(&c.out)?;
    Ok(())
}

pub struct PipelineArgs {
    pub count: usize,
    pub seed: u64,
    pub epsilon: Option<f64>,
    pub params: Option<PathBuf>,
    pub sa_params: Option<PathBuf>,
    pub fp_model: Option<PathBuf>,
    pub pl_model: Option<PathBuf>,
    pub export: bool,
}

pub fn pipeline(c: &Common, a: &PipelineArgs) -> Result<()> {
    let sub = |name: &str| Common {
        out: c.out.join(name),
        ..c.clone()
    };
    let phase = |name: &str| {
        format!(
            "pipeline phase `{name}` failed; see {}",
            c.out.join(name).display()
        )
    };

    let t = sub("templates");
    templates(&t, a.epsilon, true).with_context(|| phase("templates"))?;
    let tfile = t.out.join("templates.json");

    let g = sub("benchmarks");
    gen(&g, a.count, a.seed, a.params.as_deref(), true).with_context(|| phase("benchmarks"))?;

    let l = sub("labels");
    label(
        &l,
        &g.out,
        &tfile,
        LabelMode::Both,
        a.seed,
        a.sa_params.as_deref(),
        true,
    )
    .with_context(|| phase("labels"))?;

    if a.export {
        export(&sub("dataset"), &l.out, &g.out, true).with_context(|| phase("dataset"))?;
    }

    let (Some(fp), Some(pl)) = (&a.fp_model, &a.pl_model) else {
        eprintln!("pipeline: no models given, stopping after labeling");
        return Ok(());
    };
    for dir in benchmark_dirs(&g.out)? {
        let name = dir
            .file_name()
            .expect("named")
            .to_string_lossy()
            .to_string();
        let inf = sub(&format!("inference/{name}"));
        infer(&inf, &dir, fp, pl, &tfile, true)
            .with_context(|| phase(&format!("inference/{name}")))?;
        let label_file = l
            .out
            .join("assignments")
            .join(format!("{name}_placement.json"));
        let ev = sub(&format!("evaluation/{name}"));
        evaluate(
            &ev,
            &dir,
            &inf.out.join("placement.json"),
            label_file.is_file().then_some(label_file.as_path()),
            &tfile,
            Stage::Placement,
            true,
            true,
        )
        .with_context(|| phase(&format!("evaluation/{name}")))?;
    }
    Ok(())
}
