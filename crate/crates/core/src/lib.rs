// SPDX-License-Identifier: Apache-2.0
//! Template-based power delivery network synthesis.
//!
//! The crate covers the whole flow short of CNN training: technology
//! configuration, template enumeration and pruning, conductance assembly and
//! static IR/EM analysis, synthetic benchmark generation, the annealing
//! labeler, CNN inference and the evaluation metrics.

// Index loops mirror the math; negated float comparisons deliberately catch NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cnn;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod grf;
pub mod grid;
pub mod maps;
pub mod metrics;
pub mod sa;
pub mod solver;
pub mod sparse;
pub mod templates;

pub use error::{Error, Result};
