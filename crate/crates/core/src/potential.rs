//! Particle–scatterer interaction: the radial potential, binary-collision
//! kinematics, golden-rule rates and Born cross sections.
//!
//! A shape must supply a radial profile `u(r)`, a closed-form Fourier
//! transform `ũ(q) = ∫ u(r) e^{-iq·r} d^d r` and a range `R`. Only the
//! Gaussian bump `u0·exp(-r²/2R²)` ships.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bath::BathSpec;
use crate::error::{Error, Result};
use crate::lattice::{dot, norm_sq, LatticeSpec};
use crate::quad;
use crate::units::HBAR;

/// Above this `R/ς` the potential is flagged as not short-ranged.
pub const SHORT_RANGE_THRESHOLD: f64 = 0.1;
/// Below this `k·ℓ_scat` the weak-scattering flag is cleared.
pub const WEAK_SCATTERING_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    #[serde(default)]
    pub shape: Shape,
    /// `u0`, an energy; either sign.
    pub strength: f64,
    /// `R`.
    pub range: f64,
}

impl PotentialModel {
    pub fn gaussian(strength: f64, range: f64) -> Result<Self> {
        let m = PotentialModel { shape: Shape::Gaussian, strength, range };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.strength.is_finite() {
            return Err(Error::domain("potential strength must be finite"));
        }
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(Error::domain(format!("potential range must be positive, got {}", self.range)));
        }
        Ok(())
    }

    pub fn radial(&self, r: f64) -> f64 {
        match self.shape {
            Shape::Gaussian => self.strength * (-r * r / (2.0 * self.range * self.range)).exp(),
        }
    }

    /// `ũ(q)`, real and even for radial shapes.
    pub fn fourier(&self, q: &[f64]) -> f64 {
        self.fourier_sq_norm(norm_sq(q), q.len())
    }

    pub(crate) fn fourier_sq_norm(&self, q2: f64, dim: usize) -> f64 {
        match self.shape {
            Shape::Gaussian => {
                let r = self.range;
                self.strength
                    * (2.0 * PI * r * r).powf(dim as f64 / 2.0)
                    * (-q2 * r * r / 2.0).exp()
            }
        }
    }

    pub fn short_range_ratio(&self, bath: &BathSpec, dim: usize) -> f64 {
        self.range / bath.spacing(dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Masses {
    pub particle: f64,
    pub bath: f64,
}

impl Masses {
    pub fn reduced(&self) -> f64 {
        self.particle * self.bath / (self.particle + self.bath)
    }

    pub fn total(&self) -> f64 {
        self.particle + self.bath
    }
}

/// Center-of-mass description of a particle–scatterer pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryKinematics {
    pub reduced_mass: f64,
    pub total_mass: f64,
    pub k_rel: Vec<f64>,
    pub k_total: Vec<f64>,
    masses: Masses,
}

impl BinaryKinematics {
    pub fn new(masses: Masses, k_s: &[f64], k_b: &[f64]) -> Self {
        let m_tot = masses.total();
        let k_rel = k_s
            .iter()
            .zip(k_b)
            .map(|(s, b)| (masses.bath * s - masses.particle * b) / m_tot)
            .collect();
        let k_total = k_s.iter().zip(k_b).map(|(s, b)| s + b).collect();
        BinaryKinematics { reduced_mass: masses.reduced(), total_mass: m_tot, k_rel, k_total, masses }
    }

    /// Lab-frame momenta after the pair leaves with relative wavevector `k_out`.
    pub fn outgoing(&self, k_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let fs = self.masses.particle / self.total_mass;
        let fb = self.masses.bath / self.total_mass;
        let ks = self.k_total.iter().zip(k_out).map(|(kt, k)| fs * kt + k).collect();
        let kb = self.k_total.iter().zip(k_out).map(|(kt, k)| fb * kt - k).collect();
        (ks, kb)
    }
}

/// `D_q = E_{k_S+q} + E_{k_B-q} - E_{k_S} - E_{k_B}`.
pub fn energy_difference(q: &[f64], k_s: &[f64], k_b: &[f64], masses: Masses) -> f64 {
    // (k+q)² - k² = 2k·q + q², evaluated without cancellation
    let q2 = norm_sq(q);
    let ds = 2.0 * dot(k_s, q) + q2;
    let db = -2.0 * dot(k_b, q) + q2;
    HBAR * HBAR * (ds / (2.0 * masses.particle) + db / (2.0 * masses.bath))
}

/// Center-of-mass form `(ħ²/2m)[(k+q)² - k²]`.
pub fn energy_difference_cm(q: &[f64], k_rel: &[f64], reduced_mass: f64) -> f64 {
    HBAR * HBAR * (2.0 * dot(k_rel, q) + norm_sq(q)) / (2.0 * reduced_mass)
}

/// `D_q` for lattice indices, with the index algebra done in integers so that
/// reversing a collision negates the result bit for bit.
pub fn energy_difference_indexed(
    lattice: &LatticeSpec,
    q: &[i64],
    k_s: &[i64],
    k_b: &[i64],
    masses: Masses,
) -> f64 {
    let sq = |v: &mut dyn Iterator<Item = i64>| v.map(|x| x * x).sum::<i64>();
    let ds = sq(&mut k_s.iter().zip(q).map(|(a, b)| a + b)) - sq(&mut k_s.iter().copied());
    let db = sq(&mut k_b.iter().zip(q).map(|(a, b)| a - b)) - sq(&mut k_b.iter().copied());
    let dk = lattice.spacing();
    HBAR * HBAR * dk * dk / 2.0 * (ds as f64 / masses.particle + db as f64 / masses.bath)
}

/// Normalized Gaussian of standard deviation `eps`; stands in for `δ(x)`.
pub fn gaussian_delta(x: f64, eps: f64) -> f64 {
    (-x * x / (2.0 * eps * eps)).exp() / (eps * (2.0 * PI).sqrt())
}

/// Default energy broadening `ħ² k Δk / m`: one lattice step of energy at wavenumber `k`.
pub fn default_broadening(k: f64, lattice: &LatticeSpec, mass: f64) -> f64 {
    HBAR * HBAR * k * lattice.spacing() / mass
}

/// Golden-rule rate `(2π/ħ)(1/V²)|ũ(q)|² δ_ε(D_q)` for one scatterer.
pub fn binary_rate(
    model: &PotentialModel,
    lattice: &LatticeSpec,
    masses: Masses,
    q: &[i64],
    k_s: &[i64],
    k_b: &[i64],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("energy broadening must be positive, got {eps}")));
    }
    let d = energy_difference_indexed(lattice, q, k_s, k_b, masses);
    let u = model.fourier(&lattice.wavevector_unchecked(q));
    let v = lattice.volume();
    Ok(2.0 * PI / HBAR / (v * v) * u * u * gaussian_delta(d, eps))
}

/// Born differential cross section `(π/2)·k^{d-3}/(2π)^d·|(2m/ħ²)ũ(kΩ - k_rel)|²`.
pub fn diff_cross_section(
    model: &PotentialModel,
    reduced_mass: f64,
    omega: &[f64],
    k_rel: &[f64],
) -> Result<f64> {
    let dim = k_rel.len();
    if omega.len() != dim {
        return Err(Error::Config("direction and relative wavevector differ in dimension".into()));
    }
    if (norm_sq(omega) - 1.0).abs() > 1e-9 {
        return Err(Error::domain("scattering direction must be a unit vector"));
    }
    let k = norm_sq(k_rel).sqrt();
    if k == 0.0 && dim < 3 {
        return Err(Error::domain(format!("cross section is singular at k = 0 in d = {dim}")));
    }
    let q2: f64 = omega.iter().zip(k_rel).map(|(o, kr)| (k * o - kr).powi(2)).sum();
    Ok(diff_cross_section_at(model, reduced_mass, dim, k, q2))
}

fn diff_cross_section_at(model: &PotentialModel, m: f64, dim: usize, k: f64, q2: f64) -> f64 {
    let amp = 2.0 * m / (HBAR * HBAR) * model.fourier_sq_norm(q2, dim);
    PI / 2.0 * k.powi(dim as i32 - 3) / (2.0 * PI).powi(dim as i32) * amp * amp
}

/// Surface area of the unit sphere in `R^n`.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * sphere_area(n - 2) / (n - 2) as f64,
    }
}

/// Total cross section `∮ dσ/dΩ dΩ`, integrated over the polar angle from
/// the incident direction (radial potentials make the azimuths trivial).
pub fn total_cross_section(model: &PotentialModel, reduced_mass: f64, dim: usize, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::domain(format!("total cross section needs k > 0, got {k}")));
    }
    let at = |q2: f64| diff_cross_section_at(model, reduced_mass, dim, k, q2);
    match dim {
        0 => Err(Error::domain("dimension must be at least 1")),
        1 => Ok(at(0.0) + at(4.0 * k * k)),
        _ => {
            let integrand = |theta: f64| {
                theta.sin().powi(dim as i32 - 2) * at(2.0 * k * k * (1.0 - theta.cos()))
            };
            let est = quad::integrate(integrand, 0.0, PI, 0.0, 1e-13)?;
            Ok(sphere_area(dim - 1) * est.value)
        }
    }
}

/// Closed form of the d = 3 Gaussian total cross section,
/// `2π²(m u0 R³/ħ²)²(1 - e^{-4k²R²})/(k²R²)`.
pub fn total_cross_section_gaussian_3d(model: &PotentialModel, reduced_mass: f64, k: f64) -> f64 {
    let r = model.range;
    let x = k * k * r * r;
    let c = reduced_mass * model.strength * r.powi(3) / (HBAR * HBAR);
    let shape = if x == 0.0 { 4.0 } else { -(-4.0 * x).exp_m1() / x };
    2.0 * PI * PI * c * c * shape
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanFreePath {
    /// `1/(nσ)`; infinite when the cross section vanishes.
    pub length: f64,
    /// `k·ℓ_scat`.
    pub k_lscat: f64,
    pub weak_scattering: bool,
}

pub fn mean_free_path(
    bath: &BathSpec,
    model: &PotentialModel,
    reduced_mass: f64,
    dim: usize,
    k: f64,
) -> Result<MeanFreePath> {
    let sigma = total_cross_section(model, reduced_mass, dim, k)?;
    let length = if sigma == 0.0 { f64::INFINITY } else { 1.0 / (bath.density * sigma) };
    let k_lscat = k * length;
    Ok(MeanFreePath { length, k_lscat, weak_scattering: k_lscat >= WEAK_SCATTERING_THRESHOLD })
}
