//! Evaluation of pixel-wise regression uncertainty: sparsification curves and
//! AUSE, AUROC over reliability labels, and the usual depth / optical-flow
//! error metrics. Also ships a small dense-network engine and a 1D experiment
//! comparing a post-hoc error-predicting side learner with MC-Dropout,
//! ensembles and heteroscedastic single networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod reference;
pub mod sparsify;
pub mod toy1d;

pub use error::{Error, Result};
