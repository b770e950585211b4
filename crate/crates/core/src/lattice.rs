//! Finite cubic quantization box and its truncated momentum basis.
//!
//! Wavevectors are `(2π/L)·idx` with every component of `idx` in
//! `-n_max..=n_max`. The basis is stored flat in row-major order: the first
//! axis is the slowest, and each component is shifted by `n_max` before the
//! mixed-radix encoding. `offset` and `index` are inverse bijections.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::HBAR;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub dim: usize,
    pub box_length: f64,
    pub n_max: i64,
}

/// Result of applying a momentum kick to a basis index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Kick {
    Inside(Vec<i64>),
    OutOfBasis,
}

impl LatticeSpec {
    pub fn new(dim: usize, box_length: f64, n_max: i64) -> Result<Self> {
        let spec = LatticeSpec { dim, box_length, n_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::domain("lattice dimension must be at least 1"));
        }
        if !(self.box_length.is_finite() && self.box_length > 0.0) {
            return Err(Error::domain(format!(
                "box length must be positive, got {}",
                self.box_length
            )));
        }
        if self.n_max < 1 {
            return Err(Error::domain(format!("n_max must be at least 1, got {}", self.n_max)));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.box_length.powi(self.dim as i32)
    }

    /// Lattice spacing `Δk = 2π/L`.
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.box_length
    }

    /// Number of modes per axis, `2·n_max + 1`.
    pub fn side(&self) -> usize {
        (2 * self.n_max + 1) as usize
    }

    pub fn size(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    /// Phase-space weight `V/(2π)^d` of one lattice mode.
    pub fn continuum_weight(&self) -> f64 {
        (self.box_length / (2.0 * PI)).powi(self.dim as i32)
    }

    pub fn contains(&self, idx: &[i64]) -> bool {
        idx.len() == self.dim && idx.iter().all(|&i| i.abs() <= self.n_max)
    }

    pub fn offset(&self, idx: &[i64]) -> Option<usize> {
        if !self.contains(idx) {
            return None;
        }
        let side = self.side();
        Some(
            idx.iter()
                .fold(0usize, |acc, &i| acc * side + (i + self.n_max) as usize),
        )
    }

    pub fn index(&self, offset: usize) -> Vec<i64> {
        let side = self.side();
        let mut idx = vec![0i64; self.dim];
        let mut rest = offset;
        for slot in idx.iter_mut().rev() {
            *slot = (rest % side) as i64 - self.n_max;
            rest /= side;
        }
        idx
    }

    /// All basis indices in offset order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.size()).map(move |o| self.index(o))
    }

    pub fn wavevector(&self, idx: &[i64]) -> Result<Vec<f64>> {
        if !self.contains(idx) {
            return Err(Error::BasisBounds { index: idx.to_vec(), n_max: self.n_max });
        }
        Ok(self.wavevector_unchecked(idx))
    }

    /// `(2π/L)·idx` without the truncation check; used for kicks `q`, which
    /// live on the same lattice but may exceed `n_max`.
    pub fn wavevector_unchecked(&self, idx: &[i64]) -> Vec<f64> {
        let dk = self.spacing();
        idx.iter().map(|&i| dk * i as f64).collect()
    }

    pub fn wavevector_at(&self, offset: usize) -> Vec<f64> {
        self.wavevector_unchecked(&self.index(offset))
    }

    pub fn kick_index(&self, idx: &[i64], q_idx: &[i64]) -> Kick {
        let moved: Vec<i64> = idx.iter().zip(q_idx).map(|(a, b)| a + b).collect();
        if self.contains(&moved) {
            Kick::Inside(moved)
        } else {
            Kick::OutOfBasis
        }
    }

    /// Offset of `index(offset) + q_idx`, or `None` when the kick leaves the basis.
    pub fn kick_offset(&self, offset: usize, q_idx: &[i64]) -> Option<usize> {
        match self.kick_index(&self.index(offset), q_idx) {
            Kick::Inside(idx) => self.offset(&idx),
            Kick::OutOfBasis => None,
        }
    }

    /// Nearest lattice index to an arbitrary wavevector (not range checked).
    pub fn nearest_index(&self, k: &[f64]) -> Vec<i64> {
        let dk = self.spacing();
        k.iter().map(|&x| (x / dk).round() as i64).collect()
    }

    /// Kinetic energies of every basis state for a particle of the given mass.
    pub fn energies(&self, mass: f64) -> Result<Vec<f64>> {
        (0..self.size())
            .map(|o| kinetic_energy(&self.wavevector_at(o), mass))
            .collect()
    }
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ħ²‖k‖²/(2m)`.
pub fn kinetic_energy(k: &[f64], mass: f64) -> Result<f64> {
    if !(mass > 0.0) {
        return Err(Error::domain(format!("mass must be positive, got {mass}")));
    }
    Ok(HBAR * HBAR * norm_sq(k) / (2.0 * mass))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSpec {
    pub mass: f64,
    pub k0: Vec<f64>,
    /// Momentum-space width of the initial packet; zero selects a plane wave.
    #[serde(default)]
    pub sigma_k: f64,
}

impl ParticleSpec {
    /// Checks the invariants and returns the lattice index of `k0`.
    pub fn validate(&self, lattice: &LatticeSpec) -> Result<Vec<i64>> {
        if !(self.mass > 0.0) {
            return Err(Error::domain(format!("particle mass must be positive, got {}", self.mass)));
        }
        if !(self.sigma_k >= 0.0) {
            return Err(Error::domain(format!("sigma_k must be non-negative, got {}", self.sigma_k)));
        }
        if self.k0.len() != lattice.dim {
            return Err(Error::Config(format!(
                "k0 has {} components but the lattice has dimension {}",
                self.k0.len(),
                lattice.dim
            )));
        }
        let idx = lattice.nearest_index(&self.k0);
        let snapped = lattice.wavevector_unchecked(&idx);
        let scale = self.k0.iter().fold(lattice.spacing(), |m, x| m.max(x.abs()));
        let off = self.k0.iter().zip(&snapped).any(|(a, b)| (a - b).abs() > 1e-9 * scale);
        if off || !lattice.contains(&idx) {
            return Err(Error::Validation(format!(
                "k0 = {:?} is not a basis wavevector; nearest lattice point is {:?} (index {:?}{})",
                self.k0,
                snapped,
                idx,
                if lattice.contains(&idx) { "" } else { ", outside n_max" }
            )));
        }
        Ok(idx)
    }

    pub fn speed(&self, k: &[f64]) -> Vec<f64> {
        k.iter().map(|x| HBAR * x / self.mass).collect()
    }
}
