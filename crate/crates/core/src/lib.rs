//! Gaussian-state simulation of the QND Faraday interface between light
//! and atomic ensembles: entanglement and memory protocols, decoherence
//! models, calibration formulas, resonance spectroscopy and Monte Carlo
//! measurement trajectories.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod csvio;
pub mod decoherence;
pub mod error;
pub mod gaussian;
pub mod grid;
pub mod interface;
pub mod montecarlo;
pub mod protocols;
pub mod report;
pub mod spectroscopy;
pub mod stark;

pub use error::{Error, Result};
pub use gaussian::{GaussianState, ModeLabel, Quadrature, SymplecticMap};
