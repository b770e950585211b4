//! Ideal classical gas of scatterers at thermal equilibrium.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{dot, norm_sq, LatticeSpec};
use crate::units::{HBAR, K_B};

/// Above this `λ_th/ς` the gas is flagged as leaving the classical regime.
pub const CLASSICAL_GAS_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    pub temperature: f64,
    pub mass: f64,
    /// Scatterers per unit volume.
    pub density: f64,
}

impl BathSpec {
    pub fn new(temperature: f64, mass: f64, density: f64) -> Result<Self> {
        let b = BathSpec { temperature, mass, density };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("temperature", self.temperature),
            ("bath mass", self.mass),
            ("density", self.density),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        1.0 / (K_B * self.temperature)
    }

    /// `k_th = sqrt(2π m_B k_B T)/ħ`.
    pub fn thermal_wavenumber(&self) -> f64 {
        (2.0 * PI * self.mass * K_B * self.temperature).sqrt() / HBAR
    }

    pub fn thermal_wavelength(&self) -> f64 {
        2.0 * PI / self.thermal_wavenumber()
    }

    /// Standard deviation of one Cartesian component of the bath wavevector.
    pub fn momentum_width(&self) -> f64 {
        (self.mass / self.beta()).sqrt() / HBAR
    }

    /// Mean interparticle distance `ς = n^(-1/d)`.
    pub fn spacing(&self, dim: usize) -> f64 {
        self.density.powf(-1.0 / dim as f64)
    }

    pub fn classical_ratio(&self, dim: usize) -> f64 {
        self.thermal_wavelength() / self.spacing(dim)
    }

    pub fn is_classical(&self, dim: usize) -> bool {
        self.classical_ratio(dim) <= CLASSICAL_GAS_THRESHOLD
    }

    /// Maxwell–Boltzmann occupation of one lattice mode, `(λ_th^d/V)·exp(-π k²/k_th²)`.
    pub fn mb_weight(&self, lattice: &LatticeSpec, k: &[f64]) -> f64 {
        let kth = self.thermal_wavenumber();
        let lam = self.thermal_wavelength();
        lam.powi(lattice.dim as i32) / lattice.volume() * (-PI * norm_sq(k) / (kth * kth)).exp()
    }

    /// `Σ_k mb_weight(k) − 1` over the truncated basis.
    pub fn normalization_defect(&self, lattice: &LatticeSpec) -> f64 {
        let s: f64 = (0..lattice.size())
            .map(|o| self.mb_weight(lattice, &lattice.wavevector_at(o)))
            .sum();
        s - 1.0
    }

    /// Position-space one-body density matrix `⟨x|ρ_B|x'⟩`.
    pub fn position_density(&self, lattice: &LatticeSpec, x: &[f64], xp: &[f64]) -> Complex64 {
        let kth = self.thermal_wavenumber();
        let r2: f64 = x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum();
        Complex64::new((-kth * kth * r2 / (4.0 * PI)).exp() / lattice.volume(), 0.0)
    }

    pub fn coherence_length(&self, dim: usize) -> f64 {
        self.thermal_wavelength() * (dim as f64 / (4.0 * PI)).sqrt()
    }

    /// Closed-form correlation function
    /// `κ_q(τ) = exp(-iħq²τ/2m_B)·exp(-q²τ²/(2β m_B))`.
    pub fn bath_correlation(&self, q: &[f64], tau: f64) -> Complex64 {
        let q2 = norm_sq(q);
        let phase = -HBAR * q2 * tau / (2.0 * self.mass);
        let decay = (-q2 * tau * tau / (2.0 * self.beta() * self.mass)).exp();
        Complex64::from_polar(decay, phase)
    }

    /// Direct lattice sum of `exp(-i(E_{k-q} - E_k)τ/ħ)·ρ_B(k)` over the basis.
    pub fn bath_correlation_lattice_oracle(
        &self,
        lattice: &LatticeSpec,
        q: &[f64],
        tau: f64,
    ) -> Complex64 {
        let q2 = norm_sq(q);
        (0..lattice.size())
            .map(|o| {
                let kb = lattice.wavevector_at(o);
                // E_{k-q} - E_k = ħ²(q² - 2 q·k)/(2 m_B)
                let de = HBAR * HBAR * (q2 - 2.0 * dot(q, &kb)) / (2.0 * self.mass);
                Complex64::from_polar(self.mb_weight(lattice, &kb), -de * tau / HBAR)
            })
            .sum()
    }

    /// `τ_B = sqrt(β m_B / q²)`.
    pub fn bath_correlation_time(&self, q: &[f64]) -> Result<f64> {
        let q2 = norm_sq(q);
        if q2 == 0.0 {
            return Err(Error::domain("bath correlation time is undefined for q = 0"));
        }
        Ok((self.beta() * self.mass / q2).sqrt())
    }

    /// Root-mean-square bath speed `v_B = sqrt(d/(β m_B))`.
    pub fn rms_speed(&self, dim: usize) -> f64 {
        (dim as f64 / (self.beta() * self.mass)).sqrt()
    }

    pub fn coverage(&self, lattice: &LatticeSpec) -> Coverage {
        let required = 6.0 * self.thermal_wavenumber() / (2.0 * PI).sqrt();
        let actual = lattice.n_max as f64 * lattice.spacing();
        Coverage { required, actual, sufficient: actual >= required }
    }
}

/// Whether the truncated basis spans ±6 thermal standard deviations per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub required: f64,
    pub actual: f64,
    pub sufficient: bool,
}

/// Basis-renormalized Boltzmann populations `∝ exp(-β E_k)` of a particle of mass `mass`.
pub fn thermal_populations(bath: &BathSpec, lattice: &LatticeSpec, mass: f64) -> Result<Vec<f64>> {
    let beta = bath.beta();
    let energies = lattice.energies(mass)?;
    let e_min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = energies.iter().map(|e| (-beta * (e - e_min)).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_bath() -> BathSpec {
        BathSpec::new(1.0, 1.0, 0.01).unwrap()
    }

    #[test]
    fn thermal_wavenumber_examples() {
        let b = unit_bath();
        assert_relative_eq!(b.thermal_wavenumber(), 2.5066282746310002, max_relative = 1e-14);
        let hot = BathSpec::new(2.0, 1.0, 0.01).unwrap();
        assert_relative_eq!(
            hot.thermal_wavenumber() / b.thermal_wavenumber(),
            2f64.sqrt(),
            max_relative = 1e-14
        );
        assert_relative_eq!(b.thermal_wavelength() * b.thermal_wavenumber(), 2.0 * PI);
        assert_relative_eq!(b.beta() * K_B * b.temperature, 1.0);
    }

    #[test]
    fn mb_weight_normalized_and_even() {
        let b = unit_bath();
        // L·k_th ≈ 100 and n_max·Δk = 12.6 > 6 k_th/sqrt(2π) = 6
        let l = LatticeSpec::new(1, 40.0, 80).unwrap();
        assert!(b.coverage(&l).sufficient);
        assert!(b.normalization_defect(&l).abs() < 1e-6);
        let w0 = b.mb_weight(&l, &[0.0]);
        assert_relative_eq!(w0, b.thermal_wavelength() / l.volume());
        let k = l.wavevector(&[7]).unwrap();
        let mk = l.wavevector(&[-7]).unwrap();
        assert_eq!(b.mb_weight(&l, &k), b.mb_weight(&l, &mk));
    }

    #[test]
    fn position_density_examples() {
        let b = unit_bath();
        let l = LatticeSpec::new(3, 10.0, 2).unwrap();
        let x = [0.3, -1.0, 2.0];
        assert_relative_eq!(b.position_density(&l, &x, &x).re, 1.0 / l.volume());
        let lam = b.thermal_wavelength();
        let xp = [0.3 + lam, -1.0, 2.0];
        assert_relative_eq!(
            b.position_density(&l, &x, &xp).re,
            (-PI).exp() / l.volume(),
            max_relative = 1e-13
        );
        assert_eq!(b.position_density(&l, &[0.0, 0.0, 0.0], &[1e3, 0.0, 0.0]).re, 0.0);
    }

    #[test]
    fn coherence_length_examples() {
        let b = unit_bath();
        let lam = b.thermal_wavelength();
        assert_relative_eq!(b.coherence_length(3) / lam, 0.4886025119029199, max_relative = 1e-14);
        assert_relative_eq!(b.coherence_length(1), lam / (2.0 * PI.sqrt()), max_relative = 1e-14);
        assert_relative_eq!(b.coherence_length(4) / b.coherence_length(1), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn correlation_examples() {
        let b = BathSpec::new(0.7, 1.3, 0.01).unwrap();
        let q = [0.4, -0.9];
        assert_eq!(b.bath_correlation(&q, 0.0), Complex64::new(1.0, 0.0));
        assert_eq!(b.bath_correlation(&[0.0, 0.0], 3.0), Complex64::new(1.0, 0.0));
        let tau_b = b.bath_correlation_time(&q).unwrap();
        assert!((b.bath_correlation(&q, tau_b).norm() - (-0.5f64).exp()).abs() < 1e-12);
        assert!(b.bath_correlation_time(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn correlation_time_examples() {
        let b = unit_bath();
        assert_relative_eq!(b.bath_correlation_time(&[1.0]).unwrap(), 1.0);
        assert_relative_eq!(
            b.bath_correlation_time(&[2.0]).unwrap(),
            0.5 * b.bath_correlation_time(&[1.0]).unwrap()
        );
        // τ_B = sqrt(d)/(v_B q): at q = 1/R this is sqrt(d) R / v_B
        let r = 0.7;
        for d in 1..=3 {
            let q: Vec<f64> = (0..d).map(|i| if i == 0 { 1.0 / r } else { 0.0 }).collect();
            let tau = b.bath_correlation_time(&q).unwrap();
            let bound = r / b.rms_speed(d);
            assert_relative_eq!(tau / bound, (d as f64).sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn lattice_oracle_zero_kick_is_normalization() {
        let b = unit_bath();
        let l = LatticeSpec::new(1, 40.0, 80).unwrap();
        let k = b.bath_correlation_lattice_oracle(&l, &[0.0], 2.0);
        assert!((k.re - 1.0).abs() < 1e-9 && k.im.abs() < 1e-15);
    }

    #[test]
    fn thermal_populations_sum_to_one() {
        let b = unit_bath();
        let l = LatticeSpec::new(2, 10.0, 6).unwrap();
        let p = thermal_populations(&b, &l, 2.0).unwrap();
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, max_relative = 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn correlation_modulus_nonincreasing(q in 0.01f64..5.0, t1 in 0.0f64..10.0, dt in 0.0f64..10.0) {
                let b = BathSpec::new(1.3, 0.8, 0.1).unwrap();
                let a = b.bath_correlation(&[q], t1).norm();
                let c = b.bath_correlation(&[q], t1 + dt).norm();
                prop_assert!(c <= a * (1.0 + 1e-15));
                prop_assert!(a <= 1.0 + 1e-15);
            }

            #[test]
            fn correlation_even_in_q(qx in -3.0f64..3.0, qy in -3.0f64..3.0, t in 0.0f64..5.0) {
                let b = BathSpec::new(1.3, 0.8, 0.1).unwrap();
                prop_assert_eq!(b.bath_correlation(&[qx, qy], t), b.bath_correlation(&[-qx, -qy], t));
            }
        }
    }
}
