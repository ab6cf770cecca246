//! Unit conventions.
//!
//! Energies and rates are in meV with ħ = 1, so times come out in ħ/meV.
//! Conversions are always explicit; nothing in the crate rescales silently.

/// ħ in meV·ps, i.e. one ħ/meV expressed in picoseconds.
pub const HBAR_MEV_PS: f64 = 0.658_211_956_9;

/// ħc in meV·µm.
pub const HBAR_C_MEV_UM: f64 = 197.326_980_4;

/// Converts a time in ħ/meV to picoseconds.
pub fn tau_to_ps(tau: f64) -> f64 {
    tau * HBAR_MEV_PS
}

/// Converts a time in picoseconds to ħ/meV.
pub fn ps_to_tau(ps: f64) -> f64 {
    ps / HBAR_MEV_PS
}

/// A length in micrometres.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Micrometers(pub f64);
