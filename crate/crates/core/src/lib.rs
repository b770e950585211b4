//! Momentum-lattice transport of a fast quantum particle through a dilute
//! thermal gas.
//!
//! Three backends share one rate operator `W_q(k)`:
//!
//! * [`master`]: the simplified Redfield equation and its Lindblad
//!   factorization, acting on a full momentum-basis density matrix;
//! * [`boltzmann`]: the linear Boltzmann equation on a Wigner distribution,
//!   with an optional spatial coordinate in one dimension.
//!
//! [`lattice`], [`bath`] and [`potential`] hold the physical inputs,
//! [`rates`] tabulates `W` and its principal-value partner, and [`cli`]
//! drives everything from a JSON configuration.

// `!(x > 0.0)` is used deliberately so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod boltzmann;
pub mod cli;
pub mod error;
pub mod lattice;
pub mod master;
pub mod potential;
pub mod rates;
pub(crate) mod quad;
pub mod units;

pub use error::{Error, Result};
