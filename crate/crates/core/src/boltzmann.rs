//! Linear Boltzmann transport on Wigner distributions.
//!
//! The homogeneous solver works in any dimension on momentum populations.
//! Position-resolved transport is one-dimensional: the Wigner field lives on
//! an `N × N` grid (`N = 2 n_max + 1`) of positions `r_n = nL/N` and basis
//! momenta, and is advanced by Strang splitting of exact spectral advection
//! and local collisions.
//!
//! The discrete transform keeps only even separations `s = 2m` so that
//! `k ± s/2` stays on the lattice:
//!
//! ```text
//! f(r_n, k_j) = (1/N) Σ_m ρ_{j+m, j-m} e^{2i m Δk r_n}
//! ```
//!
//! Since `0 < |2m| < N` for every nonzero `m`, summing over `n` leaves exactly
//! `ρ_jj`. The field is periodic in `r` with period `L/2`.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, ParticleSpec};
use crate::master::{Backend, DensityMatrix, EvolutionConfig, TRACE_RENORMALIZE_THRESHOLD};
use crate::rates::{RateTable, OUT_OF_BASIS};
use crate::units::HBAR;

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionVector {
    lattice: LatticeSpec,
    values: Vec<f64>,
}

impl DistributionVector {
    pub fn new(lattice: &LatticeSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.size() {
            return Err(Error::Config(format!(
                "distribution has {} entries, basis has {}",
                values.len(),
                lattice.size()
            )));
        }
        Ok(DistributionVector { lattice: lattice.clone(), values })
    }

    pub fn plane_wave(lattice: &LatticeSpec, index: &[i64]) -> Result<Self> {
        let o = lattice
            .offset(index)
            .ok_or_else(|| Error::BasisBounds { index: index.to_vec(), n_max: lattice.n_max })?;
        let mut values = vec![0.0; lattice.size()];
        values[o] = 1.0;
        Ok(DistributionVector { lattice: lattice.clone(), values })
    }

    pub fn from_density_matrix(rho: &DensityMatrix) -> Self {
        DistributionVector { lattice: rho.lattice().clone(), values: rho.populations() }
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean_energy(&self, mass: f64) -> Result<f64> {
        let e = self.lattice.energies(mass)?;
        Ok(self.values.iter().zip(&e).map(|(f, e)| f * e).sum())
    }
}

/// `D(f‖π) = Σ f ln(f/π)` over entries with `f > 0`.
pub fn relative_entropy(f: &[f64], reference: &[f64]) -> f64 {
    f.iter()
        .zip(reference)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, p)| x * (x / p).ln())
        .sum()
}

fn check_lattice(lattice: &LatticeSpec, table: &RateTable) -> Result<()> {
    if lattice != table.lattice() {
        return Err(Error::Config("distribution and rate table live on different lattices".into()));
    }
    Ok(())
}

fn collide_into(f: &[f64], table: &RateTable, out: &mut [f64]) {
    let escape = table.escape_rates();
    let kicks = table.num_kicks();
    for (b, slot) in out.iter_mut().enumerate() {
        // same arithmetic and order as the density-matrix diagonal
        *slot = -0.5 * (escape[b] + escape[b]) * f[b];
        for a in (0..kicks).rev() {
            let s = table.destination(table.reverse_kick(a), b);
            if s == OUT_OF_BASIS || f[s] == 0.0 {
                continue;
            }
            let ws = table.rate(a, s);
            *slot += 0.5 * (ws + ws) * f[s];
        }
    }
}

/// `ḟ(k) = Σ_q [W_q(k-q) f(k-q) - W_q(k) f(k)]` over in-basis kicks.
pub fn collision_rhs(f: &DistributionVector, table: &RateTable) -> Result<Vec<f64>> {
    check_lattice(&f.lattice, table)?;
    let mut out = vec![0.0; f.values.len()];
    collide_into(&f.values, table, &mut out);
    Ok(out)
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

fn rk4_collide(y: &[f64], table: &RateTable, dt: f64) -> Vec<f64> {
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    collide_into(y, table, &mut k1);
    collide_into(&axpy(y, 0.5 * dt, &k1), table, &mut k2);
    collide_into(&axpy(y, 0.5 * dt, &k2), table, &mut k3);
    collide_into(&axpy(y, dt, &k3), table, &mut k4);
    let h = dt / 6.0;
    (0..n)
        .map(|i| y[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct BoltzmannTrajectory {
    pub times: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
    pub mean_energy: Vec<f64>,
    /// Relative entropy against the supplied reference, when one was given.
    pub relative_entropy: Vec<f64>,
    pub final_state: DistributionVector,
    pub norm_drift_max: f64,
    pub renormalizations: usize,
    pub min_value_min: f64,
}

/// Homogeneous transport: RK4 on [`collision_rhs`], renormalizing only when
/// the total drifts beyond `1e-12`. Records populations, `⟨E⟩` and, with a
/// `reference` distribution, the relative entropy.
pub fn evolve_boltzmann(
    f0: &DistributionVector,
    config: &EvolutionConfig,
    table: &RateTable,
    particle: &ParticleSpec,
    reference: Option<&[f64]>,
) -> Result<BoltzmannTrajectory> {
    config.validate()?;
    check_lattice(&f0.lattice, table)?;
    let steps = config.steps();
    let mut y = f0.values.clone();
    let energy = |v: &[f64]| -> Result<f64> {
        DistributionVector { lattice: f0.lattice.clone(), values: v.to_vec() }.mean_energy(particle.mass)
    };
    let mut traj = BoltzmannTrajectory {
        times: vec![0.0],
        populations: vec![y.clone()],
        mean_energy: vec![energy(&y)?],
        relative_entropy: reference.map(|r| vec![relative_entropy(&y, r)]).unwrap_or_default(),
        final_state: f0.clone(),
        norm_drift_max: (f0.total() - 1.0).abs(),
        renormalizations: 0,
        min_value_min: y.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    for i in 0..steps {
        let mut next = rk4_collide(&y, table, config.dt);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Integration {
                t: (i + 1) as f64 * config.dt,
                reason: "non-finite population".into(),
            });
        }
        let total: f64 = next.iter().sum();
        let drift = (total - 1.0).abs();
        traj.norm_drift_max = traj.norm_drift_max.max(drift);
        if drift > TRACE_RENORMALIZE_THRESHOLD {
            next.iter_mut().for_each(|x| *x /= total);
            traj.renormalizations += 1;
        }
        y = next;
        traj.min_value_min = traj.min_value_min.min(y.iter().cloned().fold(f64::INFINITY, f64::min));
        if (i + 1) % config.record_every == 0 || i + 1 == steps {
            traj.times.push((i + 1) as f64 * config.dt);
            traj.mean_energy.push(energy(&y)?);
            if let Some(r) = reference {
                traj.relative_entropy.push(relative_entropy(&y, r));
            }
            traj.populations.push(y.clone());
        }
    }
    traj.final_state = DistributionVector { lattice: f0.lattice.clone(), values: y };
    Ok(traj)
}

/// Position-resolved Wigner distribution in one dimension, indexed `(r, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerField {
    lattice: LatticeSpec,
    r_grid: Vec<f64>,
    values: Array2<f64>,
    /// Largest imaginary part discarded by the transform.
    pub imag_residual: f64,
}

fn require_1d(lattice: &LatticeSpec) -> Result<()> {
    if lattice.dim != 1 {
        return Err(Error::Config(format!(
            "position-resolved transport is one-dimensional, lattice has d = {}",
            lattice.dim
        )));
    }
    Ok(())
}

fn position_grid(lattice: &LatticeSpec) -> Vec<f64> {
    let n = lattice.size();
    (0..n).map(|i| i as f64 * lattice.box_length / n as f64).collect()
}

impl WignerField {
    /// Spatially uniform field with the given momentum marginal.
    pub fn uniform(f: &DistributionVector) -> Result<Self> {
        require_1d(&f.lattice)?;
        let n = f.lattice.size();
        let values = Array2::from_shape_fn((n, n), |(_, j)| f.values[j] / n as f64);
        Ok(WignerField { lattice: f.lattice.clone(), r_grid: position_grid(&f.lattice), values, imag_residual: 0.0 })
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn r_grid(&self) -> &[f64] {
        &self.r_grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// `Σ_r f(r, k)`.
    pub fn momentum_marginal(&self) -> Vec<f64> {
        self.values.sum_axis(Axis(0)).to_vec()
    }

    /// `Σ_k f(r, k)`.
    pub fn position_marginal(&self) -> Vec<f64> {
        self.values.sum_axis(Axis(1)).to_vec()
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn mean_energy(&self, mass: f64) -> Result<f64> {
        let e = self.lattice.energies(mass)?;
        Ok(self.momentum_marginal().iter().zip(&e).map(|(f, e)| f * e).sum())
    }
}

/// Discrete Wigner transform of a one-dimensional density matrix.
pub fn wigner_transform(rho: &DensityMatrix) -> Result<WignerField> {
    let lattice = rho.lattice();
    require_1d(lattice)?;
    let n = lattice.size();
    let nm = lattice.n_max as usize;
    let data = rho.data();
    let r_grid = position_grid(lattice);
    let dk = lattice.spacing();
    let mut values = Array2::zeros((n, n));
    let mut imag: f64 = 0.0;
    for j in 0..n {
        // separations keeping both j ± m inside the basis
        let m_max = j.min(n - 1 - j).min(nm);
        for (ri, &r) in r_grid.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..=m_max {
                let phase = 2.0 * m as f64 * dk * r;
                let e = Complex64::from_polar(1.0, phase);
                acc += data[[j + m, j - m]] * e;
                if m > 0 {
                    acc += data[[j - m, j + m]] * e.conj();
                }
            }
            acc /= n as f64;
            values[[ri, j]] = acc.re;
            imag = imag.max(acc.im.abs());
        }
    }
    Ok(WignerField { lattice: lattice.clone(), r_grid, values, imag_residual: imag })
}

/// Cached FFT plans for slice shifts on an `N`-point periodic grid.
struct Shifter {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Shifter {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Shifter { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    /// `g(r) = f(r - d)` on a grid of period `period`, treating `f` as band-limited.
    fn shift(&self, slice: &mut [f64], d: f64, period: f64) {
        let n = slice.len();
        let mut buf: Vec<Complex64> = slice.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        let half = (n as i64 - 1) / 2;
        for (p, c) in buf.iter_mut().enumerate() {
            // symmetric wavenumbers; N odd so there is no Nyquist bin
            let pp = if p as i64 > half { p as i64 - n as i64 } else { p as i64 };
            let kappa = 2.0 * std::f64::consts::PI * pp as f64 / period;
            *c *= Complex64::from_polar(1.0, -kappa * d);
        }
        self.inverse.process(&mut buf);
        for (x, c) in slice.iter_mut().zip(&buf) {
            *x = c.re / n as f64;
        }
    }
}

fn advect_with(field: &WignerField, particle: &ParticleSpec, dt: f64, shifter: &Shifter) -> WignerField {
    let n = field.lattice.size();
    let l = field.lattice.box_length;
    let mut t = field.values.t().as_standard_layout().to_owned();
    t.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, slice)| {
            let k = field.lattice.wavevector_at(j)[0];
            let v = HBAR * k / particle.mass;
            if v != 0.0 {
                shifter.shift(slice, v * dt, l);
            }
        });
    WignerField {
        lattice: field.lattice.clone(),
        r_grid: field.r_grid.clone(),
        values: t.t().as_standard_layout().to_owned(),
        imag_residual: field.imag_residual,
    }
}

/// Free streaming `f(r, k) → f(r - v_k dt, k)` by a spectral shift of each
/// momentum slice on the periodic position grid.
pub fn advect(field: &WignerField, particle: &ParticleSpec, dt: f64) -> Result<WignerField> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    Ok(advect_with(field, particle, dt, &Shifter::new(field.lattice.size())))
}

fn collide_field(field: &WignerField, table: &RateTable, dt: f64) -> WignerField {
    let n = field.lattice.size();
    let mut values = field.values.as_standard_layout().to_owned();
    values
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .for_each(|row| {
            let next = rk4_collide(row, table, dt);
            row.copy_from_slice(&next);
        });
    WignerField { values, ..field.clone() }
}

/// One Strang step: half advection, a full RK4 collision step at every
/// position, half advection.
pub fn strang_step(field: &WignerField, table: &RateTable, particle: &ParticleSpec, dt: f64) -> Result<WignerField> {
    check_lattice(&field.lattice, table)?;
    let shifter = Shifter::new(field.lattice.size());
    let half = advect_with(field, particle, 0.5 * dt, &shifter);
    let collided = collide_field(&half, table, dt);
    Ok(advect_with(&collided, particle, 0.5 * dt, &shifter))
}

#[derive(Debug, Clone)]
pub struct SpatialTrajectory {
    pub times: Vec<f64>,
    pub marginals: Vec<Vec<f64>>,
    pub mean_energy: Vec<f64>,
    pub final_state: WignerField,
    pub norm_drift_max: f64,
    pub renormalizations: usize,
}

/// Position-resolved transport by repeated [`strang_step`].
pub fn evolve_spatial(
    field0: &WignerField,
    config: &EvolutionConfig,
    table: &RateTable,
    particle: &ParticleSpec,
) -> Result<SpatialTrajectory> {
    config.validate()?;
    check_lattice(&field0.lattice, table)?;
    if config.backend != Backend::BoltzmannDiagonal {
        return Err(Error::Config("spatial transport runs on the Boltzmann backend".into()));
    }
    let shifter = Shifter::new(field0.lattice.size());
    let dt = config.dt;
    let mut field = field0.clone();
    let mut traj = SpatialTrajectory {
        times: vec![0.0],
        marginals: vec![field.momentum_marginal()],
        mean_energy: vec![field.mean_energy(particle.mass)?],
        final_state: field0.clone(),
        norm_drift_max: (field0.total() - 1.0).abs(),
        renormalizations: 0,
    };
    for i in 0..config.steps() {
        let half = advect_with(&field, particle, 0.5 * dt, &shifter);
        let collided = collide_field(&half, table, dt);
        let mut next = advect_with(&collided, particle, 0.5 * dt, &shifter);
        if next.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Integration { t: (i + 1) as f64 * dt, reason: "non-finite Wigner value".into() });
        }
        let total = next.total();
        let drift = (total - 1.0).abs();
        traj.norm_drift_max = traj.norm_drift_max.max(drift);
        if drift > TRACE_RENORMALIZE_THRESHOLD {
            next.values.mapv_inplace(|x| x / total);
            traj.renormalizations += 1;
        }
        field = next;
        if (i + 1) % config.record_every == 0 || i + 1 == config.steps() {
            traj.times.push((i + 1) as f64 * dt);
            traj.marginals.push(field.momentum_marginal());
            traj.mean_energy.push(field.mean_energy(particle.mass)?);
        }
    }
    traj.final_state = field;
    Ok(traj)
}

/// Size of the neglected second-order gradient term relative to the retained
/// one for kick `q` at momentum `k`:
/// `max_r |W''_q(k)/8 · ∂²_r f(r, k)| / max_r |W_q(k) f(r, k)|`,
/// with both derivatives by centred second differences. Returns infinity
/// when the retained term vanishes.
pub fn curvature_correction_estimate(rho: &DensityMatrix, table: &RateTable, q: &[i64], k: &[i64]) -> Result<f64> {
    let lattice = table.lattice();
    require_1d(lattice)?;
    check_lattice(rho.lattice(), table)?;
    let a = table
        .kicks()
        .iter()
        .position(|p| p.as_slice() == q)
        .ok_or_else(|| Error::domain(format!("kick {q:?} is not in the table")))?;
    let (lo, mid, hi) = (
        lattice.offset(&[k[0] - 1]),
        lattice.offset(k),
        lattice.offset(&[k[0] + 1]),
    );
    let (Some(lo), Some(mid), Some(hi)) = (lo, mid, hi) else {
        return Err(Error::domain(format!("k = {k:?} has no neighbours inside the basis")));
    };
    let dk = lattice.spacing();
    let w = table.rate(a, mid);
    let w2 = (table.rate(a, hi) - 2.0 * w + table.rate(a, lo)) / (dk * dk);
    let field = wigner_transform(rho)?;
    let n = lattice.size();
    let hr = lattice.box_length / n as f64;
    let col = field.values.column(mid);
    let mut kept: f64 = 0.0;
    let mut dropped: f64 = 0.0;
    for i in 0..n {
        let f = col[i];
        let fpp = (col[(i + 1) % n] - 2.0 * f + col[(i + n - 1) % n]) / (hr * hr);
        kept = kept.max((w * f).abs());
        dropped = dropped.max((w2 / 8.0 * fpp).abs());
    }
    if kept == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(dropped / kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{thermal_populations, BathSpec};
    use crate::master::redfield_rhs;
    use crate::potential::PotentialModel;
    use crate::rates::{build_rate_table, Medium};
    use approx::assert_relative_eq;

    fn setup(u0: f64) -> (Medium, LatticeSpec, RateTable, ParticleSpec) {
        let m = Medium::new(BathSpec::new(1.0, 0.5, 0.01).unwrap(), PotentialModel::gaussian(u0, 1.0).unwrap(), 1.0)
            .unwrap();
        let l = LatticeSpec::new(1, 30.0, 16).unwrap();
        let t = build_rate_table(&m, &l, 8, 1.0).unwrap();
        let p = ParticleSpec { mass: 1.0, k0: l.wavevector_unchecked(&[8]), sigma_k: 0.0 };
        (m, l, t, p)
    }

    #[test]
    fn collision_rhs_matches_redfield_diagonal_exactly() {
        let (m, l, t, p) = setup(3.0);
        let mut vals = thermal_populations(&m.bath, &l, 1.0).unwrap();
        vals[20] += 0.3;
        vals[3] = 0.0;
        let f = DistributionVector::new(&l, vals.clone()).unwrap();
        let rho = DensityMatrix::from_populations(&l, &vals).unwrap();
        let a = collision_rhs(&f, &t).unwrap();
        let b = redfield_rhs(&rho, &t, &p).unwrap();
        for (i, ai) in a.iter().enumerate() {
            assert_eq!(*ai, b.data()[[i, i]].re);
        }
    }

    #[test]
    fn thermal_is_fixed_point_and_zero_potential_is_inert() {
        let (m, l, t, _) = setup(3.0);
        let th = DistributionVector::new(&l, thermal_populations(&m.bath, &l, 1.0).unwrap()).unwrap();
        let scale = collision_rhs(&DistributionVector::plane_wave(&l, &[8]).unwrap(), &t)
            .unwrap()
            .iter()
            .fold(0.0f64, |a, b| a.max(b.abs()));
        let d = collision_rhs(&th, &t).unwrap();
        assert!(d.iter().all(|x| x.abs() <= 1e-8 * scale));
        let (_, l0, t0, _) = setup(0.0);
        let pw = DistributionVector::plane_wave(&l0, &[5]).unwrap();
        assert!(collision_rhs(&pw, &t0).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn homogeneous_relaxation_decreases_entropy() {
        let (m, l, t, p) = setup(3.0);
        let th = thermal_populations(&m.bath, &l, 1.0).unwrap();
        let cfg = EvolutionConfig { backend: Backend::BoltzmannDiagonal, dt: 0.05, t_end: 20.0, record_every: 10, spatial: false };
        let tr = evolve_boltzmann(&DistributionVector::plane_wave(&l, &[8]).unwrap(), &cfg, &t, &p, Some(&th)).unwrap();
        assert!(tr.relative_entropy.windows(2).all(|w| w[1] <= w[0]));
        assert!(tr.min_value_min >= -1e-12);
        assert!(tr.norm_drift_max < 1e-12);
    }

    #[test]
    fn wigner_of_plane_wave_is_flat() {
        let l = LatticeSpec::new(1, 20.0, 6).unwrap();
        let rho = DensityMatrix::plane_wave(&l, &[2]).unwrap();
        let w = wigner_transform(&rho).unwrap();
        let j = l.offset(&[2]).unwrap();
        let n = l.size() as f64;
        for r in 0..l.size() {
            for k in 0..l.size() {
                let expect = if k == j { 1.0 / n } else { 0.0 };
                assert!((w.values()[[r, k]] - expect).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn wigner_marginal_and_fringes() {
        let l = LatticeSpec::new(1, 20.0, 8).unwrap();
        let s = 0.5f64.sqrt();
        let rho = DensityMatrix::superposition(
            &l,
            &[(vec![-2], Complex64::new(s, 0.0)), (vec![4], Complex64::new(0.0, s))],
        )
        .unwrap();
        let w = wigner_transform(&rho).unwrap();
        assert!(w.imag_residual < 1e-15);
        for (a, b) in w.momentum_marginal().iter().zip(rho.populations()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(w.min_value() < 0.0);
        // fringe at k = 1: (i/2)e^{6iΔk r} - (i/2)e^{-6iΔk r} = -sin(6Δk r)
        let j = l.offset(&[1]).unwrap();
        let n = l.size() as f64;
        for (i, &r) in w.r_grid().iter().enumerate() {
            let expect = -(6.0 * l.spacing() * r).sin() / n;
            assert!((w.values()[[i, j]] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn advection_examples() {
        let l = LatticeSpec::new(1, 20.0, 8).unwrap();
        let n = l.size();
        let p = ParticleSpec { mass: 1.0, k0: vec![0.0], sigma_k: 0.0 };
        let values = Array2::from_shape_fn((n, n), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 100.0);
        let field = WignerField { lattice: l.clone(), r_grid: position_grid(&l), values, imag_residual: 0.0 };
        // one cell per step for the slice with v = L/N / dt
        let j = l.offset(&[3]).unwrap();
        let v = HBAR * l.wavevector_at(j)[0] / p.mass;
        let dt = (l.box_length / n as f64) / v;
        let moved = advect(&field, &p, dt).unwrap();
        for i in 0..n {
            assert!((moved.values()[[(i + 1) % n, j]] - field.values()[[i, j]]).abs() < 1e-13);
        }
        let zero = l.offset(&[0]).unwrap();
        for i in 0..n {
            assert_eq!(moved.values()[[i, zero]], field.values()[[i, zero]]);
        }
        let halves = advect(&advect(&field, &p, 0.37).unwrap(), &p, 0.37).unwrap();
        let whole = advect(&field, &p, 0.74).unwrap();
        for (a, b) in halves.values().iter().zip(whole.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in moved.momentum_marginal().iter().zip(field.momentum_marginal()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_field_follows_homogeneous_path() {
        let (_, l, t, p) = setup(3.0);
        let f0 = DistributionVector::plane_wave(&l, &[8]).unwrap();
        let cfg = EvolutionConfig { backend: Backend::BoltzmannDiagonal, dt: 0.05, t_end: 2.0, record_every: 5, spatial: true };
        let hom = evolve_boltzmann(&f0, &cfg, &t, &p, None).unwrap();
        let sp = evolve_spatial(&WignerField::uniform(&f0).unwrap(), &cfg, &t, &p).unwrap();
        for (a, b) in hom.populations.iter().zip(&sp.marginals) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn curvature_estimate_examples() {
        let (m, _, _, _) = setup(3.0);
        let l = LatticeSpec::new(1, 2.0 * std::f64::consts::PI / 0.1, 64).unwrap();
        let t = build_rate_table(&m, &l, 6, 1.0).unwrap();
        let pw = DensityMatrix::plane_wave(&l, &[30]).unwrap();
        assert_eq!(curvature_correction_estimate(&pw, &t, &[2], &[30]).unwrap(), 0.0);
        let flat = RateTable::from_fn(&l, 3, |_, _| Ok(0.2)).unwrap();
        let k0 = l.wavevector_unchecked(&[30]);
        let narrow = DensityMatrix::gaussian_packet(&l, &k0, 0.3).unwrap();
        assert_eq!(curvature_correction_estimate(&narrow, &flat, &[1], &[30]).unwrap(), 0.0);
        let wide = DensityMatrix::gaussian_packet(&l, &k0, 0.6).unwrap();
        let r1 = curvature_correction_estimate(&narrow, &t, &[2], &[30]).unwrap();
        let r2 = curvature_correction_estimate(&wide, &t, &[2], &[30]).unwrap();
        assert_relative_eq!(r2 / r1, 4.0, max_relative = 0.25);
        // nothing at k: the retained term vanishes
        assert_eq!(curvature_correction_estimate(&pw, &t, &[2], &[10]).unwrap(), f64::INFINITY);
        assert!(curvature_correction_estimate(&pw, &t, &[2], &[64]).is_err());
    }

    #[test]
    fn spatial_requires_one_dimension() {
        let l = LatticeSpec::new(2, 10.0, 2).unwrap();
        assert!(wigner_transform(&DensityMatrix::plane_wave(&l, &[0, 0]).unwrap()).is_err());
    }
}
