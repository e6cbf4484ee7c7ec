//! Day-ahead operational planning for radial distribution feeders.
//!
//! The pipeline solves a relaxed second-order-cone OPF with a transformer
//! aging cost, rebuilds the exact power flow at the optimal net demands,
//! differentiates it, and splits each nodal marginal cost into substation
//! energy, marginal losses, congestion and transformer-degradation parts.

// `!(x <= y)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod der;
pub mod dlmc;
pub mod error;
pub mod network;
pub mod opf;
pub mod pipeline;
pub mod power_flow;
pub mod report;
pub mod sensitivity;
pub mod thermal;

pub use error::{Error, ErrorClass, Result};
