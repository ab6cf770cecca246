//! Linear and two-photon response of a two-dimensional exciton coupled to a
//! zero-dimensional cavity mode.
//!
//! All energies and rates are in meV with ħ = 1, measured from the bare
//! `k = 0` exciton. Times are in ħ/meV; see [`units`] for the conversion to
//! picoseconds.
//!
//! The crate is organised along the physics pipeline:
//!
//! * [`model`]: parameters and the closed-form two-mode polariton algebra.
//! * [`selfenergy`]: the non-Markovian disorder self-energy (Born and
//!   self-consistent Born) with Kramers-Kronig validation.
//! * [`linear`]: Green's functions, transmission spectra and line metrics.
//! * [`twophoton`]: the pair bubble, T-matrix and g²(τ) in the weak-drive limit.
//! * [`oracle`]: a brute-force truncated Fock-space reference built on a
//!   discretized bath.
//! * [`config`] and [`harness`]: run configuration, presets and CSV output
//!   used by the `xblockade` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod harness;
pub mod linear;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod selfenergy;
pub mod twophoton;
pub mod units;

pub use error::{Error, Result};
pub use model::{polariton_data, Drive, PolaritonData, SystemParams};
pub use selfenergy::{DisorderParams, GridSpec, SelfEnergyTable};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
