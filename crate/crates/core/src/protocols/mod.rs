//! Entanglement and quantum-memory protocols built on the Gaussian engine.

pub mod entanglement;
pub mod memory;

pub use entanglement::{
    entangle_conditional, entangle_unconditional, minimize_conditional_variance, ConditionalEstimate,
    EntanglementReport, Evaluation,
};
pub use memory::{
    classical_fidelity_bound, memory_fidelity, memory_readout, memory_store, MemoryReport, ReadoutStats,
};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gaussian::{ModeLabel, SymplecticMap};

/// Measurement-and-feedback step `P_A -= g X_L` on `(atom, light)`.
///
/// Written as the symplectic map of `H ∝ g X_A X_L`, which also kicks the
/// light's `P`; that light is discarded afterwards, so only the atomic
/// displacement matters.
pub fn feedback_map(gain: f64, atom: &ModeLabel, light: &ModeLabel) -> Result<SymplecticMap> {
    if !gain.is_finite() {
        return Err(Error::invalid("feedback gain must be finite"));
    }
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        1.0,   0.0, 0.0,   0.0,
        0.0,   1.0, -gain, 0.0,
        0.0,   0.0, 1.0,   0.0,
        -gain, 0.0, 0.0,   1.0,
    ]);
    SymplecticMap::new(vec![atom.clone(), light.clone()], m, None)
}
