//! Working unit system.
//!
//! Every formula in the crate carries `HBAR` and `K_B` explicitly so that a
//! different unit convention only needs these two constants changed. Masses
//! and lengths are in user units; temperatures are in energy units when
//! `K_B = 1`.

/// Reduced Planck constant.
pub const HBAR: f64 = 1.0;

/// Boltzmann constant.
pub const K_B: f64 = 1.0;
