// SPDX-License-Identifier: Apache-2.0
//! `pdn-forge`: templates, benchmark generation, labeling, inference and
//! evaluation from the command line.
//!
//! Exit codes: 0 success, 1 other failure, 2 parse or I/O error,
//! 3 validation error, 4 solver error, 5 infeasible or unsafe result.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "pdn-forge", version, about = "Template-based PDN synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Technology configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl Common {
    pub fn workers(&self) -> usize {
        self.workers.unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum StageArg {
    Floorplan,
    Placement,
}

impl From<StageArg> for pdnforge::bench::Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Floorplan => Self::Floorplan,
            StageArg::Placement => Self::Placement,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum LabelMode {
    Floorplan,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum EmArg {
    Mean,
    Max,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate, rank and prune the template library.
    Templates {
        #[command(flatten)]
        common: Common,
        /// Pruning tolerance in ohms (default: 2% of the resistance range).
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Generate synthetic benchmarks.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON object overriding generator parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Solve one assignment and check IR and EM limits.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long, value_enum, default_value = "placement")]
        stage: StageArg,
        #[arg(long, value_enum, default_value = "mean")]
        em: EmArg,
    },
    /// Label benchmarks with simulated annealing.
    Label {
        #[command(flatten)]
        common: Common,
        /// Directory of benchmark directories.
        #[arg(long)]
        benchmarks: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: LabelMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON object overriding annealing parameters.
        #[arg(long)]
        sa_params: Option<PathBuf>,
    },
    /// Write the window of every labeled record as PDNM1 channel maps.
    ExportDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        benchmarks: PathBuf,
    },
    /// Two-stage CNN synthesis of one benchmark.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        fp_model: PathBuf,
        #[arg(long)]
        pl_model: PathBuf,
        #[arg(long)]
        templates: PathBuf,
    },
    /// Compare an assignment against the best uniform baseline.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        sa_label: Option<PathBuf>,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long, value_enum, default_value = "placement")]
        stage: StageArg,
        /// Also write PPM heat maps.
        #[arg(long)]
        plots: bool,
    },
    /// templates, gen, label and export; infer and evaluate when models are
    /// given. Finished phases are skipped on rerun.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        sa_params: Option<PathBuf>,
        #[arg(long)]
        fp_model: Option<PathBuf>,
        #[arg(long)]
        pl_model: Option<PathBuf>,
        /// Skip writing window files.
        #[arg(long)]
        no_export: bool,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use pdnforge::Error as E;
    for cause in e.chain() {
        if let Some(pe) = cause.downcast_ref::<E>() {
            return match pe {
                E::Parse { .. } | E::Io { .. } | E::Format(_) => 2,
                E::Solver(_) | E::Disconnected { .. } | E::IncrementalMismatch(_) => 4,
                E::Infeasible(_) => 5,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Templates { common, epsilon } => commands::templates(&common, epsilon, false),
        Command::Gen {
            common,
            count,
            seed,
            params,
        } => commands::gen(&common, count, seed, params.as_deref(), false),
        Command::Analyze {
            common,
            benchmark,
            assignment,
            templates,
            stage,
            em,
        } => commands::analyze(
            &common,
            &benchmark,
            &assignment,
            &templates,
            stage.into(),
            em,
        ),
        Command::Label {
            common,
            benchmarks,
            templates,
            mode,
            seed,
            sa_params,
        } => commands::label(
            &common,
            &benchmarks,
            &templates,
            mode,
            seed,
            sa_params.as_deref(),
            false,
        ),
        Command::ExportDataset {
            common,
            dataset,
            benchmarks,
        } => commands::export(&common, &dataset, &benchmarks, false),
        Command::Infer {
            common,
            benchmark,
            fp_model,
            pl_model,
            templates,
        } => commands::infer(&common, &benchmark, &fp_model, &pl_model, &templates, false),
        Command::Evaluate {
            common,
            benchmark,
            assignment,
            sa_label,
            templates,
            stage,
            plots,
        } => commands::evaluate(
            &common,
            &benchmark,
            &assignment,
            sa_label.as_deref(),
            &templates,
            stage.into(),
            plots,
            false,
        ),
        Command::Pipeline {
            common,
            count,
            seed,
            epsilon,
            params,
            sa_params,
            fp_model,
            pl_model,
            no_export,
        } => commands::pipeline(
            &common,
            &commands::PipelineArgs {
                count,
                seed,
                epsilon,
                params,
                sa_params,
                fp_model,
                pl_model,
                export: !no_export,
            },
        ),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
