//! Density-matrix dynamics in the momentum basis.
//!
//! Both generators share the free Liouvillian and the loss anticommutator
//! `-½{W_q, ρ}`; they differ in the gain coefficient attached to
//! `ρ_{k-q,k'-q}`:
//!
//! * Redfield: `½(W_q(k-q) + W_q(k'-q))`
//! * Lindblad: `√W_q(k-q)·√W_q(k'-q)`
//!
//! Their difference is the correction `½(√W_q(k-q) - √W_q(k'-q))²ρ_{k-q,k'-q}`.
//! Kicks that would leave the truncated basis are dropped from both the
//! gain and the loss, so the trace is conserved exactly.
//!
//! Gain contributions are accumulated row by row with the kick list walked
//! from last to first. Every element and its transpose therefore see the
//! same summation order, which keeps `ρ` Hermitian to the last bit, and the
//! diagonal matches [`crate::boltzmann::collision_rhs`] exactly.

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{thermal_populations, BathSpec};
use crate::error::{Error, Result};
use crate::lattice::{norm_sq, LatticeSpec, ParticleSpec};
use crate::rates::{RateTable, OUT_OF_BASIS};
use crate::units::HBAR;

/// Drift of `Tr ρ` beyond which a step renormalizes.
pub const TRACE_RENORMALIZE_THRESHOLD: f64 = 1e-12;
/// `dt·max Γ` must not exceed this.
pub const RATE_STEP_BOUND: f64 = 0.1;
/// Above this `dt·ω_max` the free oscillation of coherences is poorly resolved by RK4.
pub const FREE_STEP_WARNING: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    lattice: LatticeSpec,
    data: Array2<Complex64>,
}

impl DensityMatrix {
    pub fn zeros(lattice: &LatticeSpec) -> Self {
        let n = lattice.size();
        DensityMatrix { lattice: lattice.clone(), data: Array2::zeros((n, n)) }
    }

    pub fn from_array(lattice: &LatticeSpec, data: Array2<Complex64>) -> Result<Self> {
        let n = lattice.size();
        if data.dim() != (n, n) {
            return Err(Error::Config(format!("matrix shape {:?} does not match basis size {n}", data.dim())));
        }
        Ok(DensityMatrix { lattice: lattice.clone(), data: data.as_standard_layout().to_owned() })
    }

    /// `|k0⟩⟨k0|`.
    pub fn plane_wave(lattice: &LatticeSpec, index: &[i64]) -> Result<Self> {
        let o = lattice
            .offset(index)
            .ok_or_else(|| Error::BasisBounds { index: index.to_vec(), n_max: lattice.n_max })?;
        let mut rho = Self::zeros(lattice);
        rho.data[[o, o]] = Complex64::new(1.0, 0.0);
        Ok(rho)
    }

    /// Pure state from amplitudes on basis indices (normalized here).
    pub fn superposition(lattice: &LatticeSpec, terms: &[(Vec<i64>, Complex64)]) -> Result<Self> {
        let mut psi = vec![Complex64::new(0.0, 0.0); lattice.size()];
        for (idx, c) in terms {
            let o = lattice
                .offset(idx)
                .ok_or_else(|| Error::BasisBounds { index: idx.clone(), n_max: lattice.n_max })?;
            psi[o] += c;
        }
        Self::pure(lattice, psi)
    }

    /// Gaussian packet `ψ(k) ∝ exp(-|k - k0|²/(4σ_k²))` centred at the origin
    /// in position; amplitudes further than `10σ_k` along any axis are zero.
    pub fn gaussian_packet(lattice: &LatticeSpec, k0: &[f64], sigma_k: f64) -> Result<Self> {
        if !(sigma_k > 0.0) {
            return Err(Error::domain(format!("packet width must be positive, got {sigma_k}")));
        }
        let psi: Vec<Complex64> = (0..lattice.size())
            .map(|o| {
                let k = lattice.wavevector_at(o);
                let far = k.iter().zip(k0).any(|(a, b)| (a - b).abs() > 10.0 * sigma_k);
                let d2: f64 = k.iter().zip(k0).map(|(a, b)| (a - b).powi(2)).sum();
                let amp = if far { 0.0 } else { (-d2 / (4.0 * sigma_k * sigma_k)).exp() };
                Complex64::new(amp, 0.0)
            })
            .collect();
        Self::pure(lattice, psi)
    }

    fn pure(lattice: &LatticeSpec, mut psi: Vec<Complex64>) -> Result<Self> {
        let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::domain("state has no amplitude inside the basis"));
        }
        psi.iter_mut().for_each(|c| *c /= norm);
        let n = psi.len();
        let data = Array2::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj());
        Ok(DensityMatrix { lattice: lattice.clone(), data })
    }

    pub fn from_populations(lattice: &LatticeSpec, p: &[f64]) -> Result<Self> {
        if p.len() != lattice.size() {
            return Err(Error::Config("population vector does not match the basis".into()));
        }
        let mut rho = Self::zeros(lattice);
        for (i, &x) in p.iter().enumerate() {
            rho.data[[i, i]] = Complex64::new(x, 0.0);
        }
        Ok(rho)
    }

    /// Diagonal Maxwell–Boltzmann state renormalized on the basis.
    pub fn thermal(bath: &BathSpec, lattice: &LatticeSpec, mass: f64) -> Result<Self> {
        Self::from_populations(lattice, &thermal_populations(bath, lattice, mass)?)
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.data.diag().iter().map(|c| c.re).collect()
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().iter().map(|c| c.re).sum()
    }

    /// `max |ρ - ρ†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[[i, j]] - self.data[[j, i]].conj()).norm());
            }
        }
        worst
    }

    /// Replaces `ρ` by `(ρ + ρ†)/2`.
    pub fn hermitize(&mut self) {
        let n = self.dim();
        for i in 0..n {
            for j in i..n {
                let avg = (self.data[[i, j]] + self.data[[j, i]].conj()) * 0.5;
                self.data[[i, j]] = avg;
                self.data[[j, i]] = avg.conj();
            }
        }
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Eigenvalues of the Hermitized matrix, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let n = self.dim();
        let m = DMatrix::from_fn(n, n, |i, j| (self.data[[i, j]] + self.data[[j, i]].conj()) * 0.5);
        let mut ev: Vec<f64> = m
            .try_symmetric_eigen(f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numeric { what: "Hermitian eigensolve did not converge".into(), residual: f64::NAN })?
            .eigenvalues
            .iter()
            .copied()
            .collect();
        if ev.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric { what: "non-finite eigenvalue".into(), residual: f64::NAN });
        }
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Redfield,
    Lindblad,
    BoltzmannDiagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub backend: Backend,
    pub dt: f64,
    pub t_end: f64,
    /// Steps between observable records.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Position-resolved Boltzmann transport (one dimension only).
    #[serde(default)]
    pub spatial: bool,
}

fn default_record_every() -> usize {
    1
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::Validation(format!("t_end = {} must be at least dt = {}", self.t_end, self.dt)));
        }
        if self.record_every == 0 {
            return Err(Error::Validation("record_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps covering `t_end`, rounded to the nearest whole step.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeStepReport {
    pub max_escape_rate: f64,
    pub rate_bound: f64,
    pub max_frequency: f64,
    pub free_phase_per_step: f64,
    pub warnings: Vec<String>,
}

/// Checks `dt ≤ 0.1/max Γ` (an error) and the free-oscillation resolution
/// `dt·ω_max` (a warning; it only matters for coherent states).
pub fn validate_time_step(config: &EvolutionConfig, table: &RateTable, particle: &ParticleSpec) -> Result<TimeStepReport> {
    config.validate()?;
    let max_escape_rate = table.max_escape_rate();
    let rate_bound = if max_escape_rate > 0.0 { RATE_STEP_BOUND / max_escape_rate } else { f64::INFINITY };
    if config.dt > rate_bound {
        return Err(Error::Validation(format!(
            "dt = {} exceeds 0.1/max rate = {rate_bound:.6e} (max escape rate {max_escape_rate:.6e})",
            config.dt
        )));
    }
    let energies = table.lattice().energies(particle.mass)?;
    let e_max = energies.iter().cloned().fold(0.0, f64::max);
    let e_min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_frequency = (e_max - e_min) / HBAR;
    let free_phase_per_step = max_frequency * config.dt;
    let mut warnings = Vec::new();
    if config.backend != Backend::BoltzmannDiagonal && free_phase_per_step > FREE_STEP_WARNING {
        let msg = format!(
            "dt·ω_max = {free_phase_per_step:.3} exceeds {FREE_STEP_WARNING}; coherences oscillate faster than the step resolves"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(TimeStepReport { max_escape_rate, rate_bound, max_frequency, free_phase_per_step, warnings })
}

fn check_lattice(rho: &DensityMatrix, table: &RateTable) -> Result<()> {
    if rho.lattice() != table.lattice() {
        return Err(Error::Config("density matrix and rate table live on different lattices".into()));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Gain {
    Redfield,
    Lindblad,
    Correction,
}

fn generator(rho: &DensityMatrix, table: &RateTable, particle: &ParticleSpec, gain: Gain) -> Result<DensityMatrix> {
    check_lattice(rho, table)?;
    let lattice = table.lattice();
    let n = lattice.size();
    let energies = lattice.energies(particle.mass)?;
    let escape = table.escape_rates();
    let src = rho.data.as_slice().expect("standard layout");
    // nonzero column span of each row of ρ; exact zeros contribute nothing to the gain
    let span: Vec<Option<(usize, usize)>> = src
        .chunks(n)
        .map(|row| {
            let nz = |c: &Complex64| c.re != 0.0 || c.im != 0.0;
            Some((row.iter().position(nz)?, row.iter().rposition(nz)?))
        })
        .collect();
    let kicks = table.num_kicks();
    let with_free_and_loss = !matches!(gain, Gain::Correction);

    let mut out = Array2::<Complex64>::zeros((n, n));
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(b, row)| {
            if with_free_and_loss {
                for (b2, slot) in row.iter_mut().enumerate() {
                    let x = src[b * n + b2];
                    let loss = -0.5 * (escape[b] + escape[b2]);
                    let omega = (energies[b] - energies[b2]) / HBAR;
                    // -(i ω) x + loss·x
                    *slot = Complex64::new(loss * x.re + omega * x.im, loss * x.im - omega * x.re);
                }
            }
            for a in (0..kicks).rev() {
                let back = table.reverse_kick(a);
                let s = table.destination(back, b);
                if s == OUT_OF_BASIS {
                    continue;
                }
                let Some((lo, hi)) = span[s] else { continue };
                let ws = table.rate(a, s);
                let rs = table.sqrt_rate(a, s);
                // offsets are linear in the index, so the kick shifts every column by b - s
                let shift = b as i64 - s as i64;
                let first = (lo as i64 + shift).max(0) as usize;
                let last = ((hi as i64 + shift).min(n as i64 - 1)).max(-1);
                if last < first as i64 {
                    continue;
                }
                for (b2, slot) in row.iter_mut().enumerate().take(last as usize + 1).skip(first) {
                    let s2 = table.destination(back, b2);
                    if s2 == OUT_OF_BASIS {
                        continue;
                    }
                    let c = match gain {
                        Gain::Redfield => 0.5 * (ws + table.rate(a, s2)),
                        Gain::Lindblad => rs * table.sqrt_rate(a, s2),
                        Gain::Correction => {
                            let d = rs - table.sqrt_rate(a, s2);
                            0.5 * d * d
                        }
                    };
                    let x = src[s * n + s2];
                    *slot = Complex64::new(slot.re + c * x.re, slot.im + c * x.im);
                }
            }
        });
    Ok(DensityMatrix { lattice: lattice.clone(), data: out })
}

/// Simplified Redfield generator `dρ/dt`.
pub fn redfield_rhs(rho: &DensityMatrix, table: &RateTable, particle: &ParticleSpec) -> Result<DensityMatrix> {
    generator(rho, table, particle, Gain::Redfield)
}

/// Lindblad generator with jump amplitudes `√W_q` (zero phase).
pub fn lindblad_rhs(rho: &DensityMatrix, table: &RateTable, particle: &ParticleSpec) -> Result<DensityMatrix> {
    generator(rho, table, particle, Gain::Lindblad)
}

/// Redfield minus Lindblad, evaluated directly as
/// `Σ_q ½(√W_q(k-q) - √W_q(k'-q))²ρ_{k-q,k'-q}`.
pub fn correction_i(rho: &DensityMatrix, table: &RateTable, particle: &ParticleSpec) -> Result<DensityMatrix> {
    generator(rho, table, particle, Gain::Correction)
}

/// Gain part of the Redfield generator alone, the scale the correction is compared with.
pub fn redfield_gain(rho: &DensityMatrix, table: &RateTable, particle: &ParticleSpec) -> Result<DensityMatrix> {
    let full = redfield_rhs(rho, table, particle)?;
    let lattice = table.lattice();
    let n = lattice.size();
    let energies = lattice.energies(particle.mass)?;
    let escape = table.escape_rates();
    let mut data = full.data;
    for b in 0..n {
        for b2 in 0..n {
            let x = rho.data[[b, b2]];
            let loss = -0.5 * (escape[b] + escape[b2]);
            let omega = (energies[b] - energies[b2]) / HBAR;
            data[[b, b2]] -= Complex64::new(loss * x.re + omega * x.im, loss * x.im - omega * x.re);
        }
    }
    Ok(DensityMatrix { lattice: lattice.clone(), data })
}

/// Symmetric and antisymmetric gradient tensors of the jump amplitude,
/// `S_ij = ∂_i√W ∂_j√W` and `A_ij` (zero for real amplitudes), from central
/// differences of `w` with step `h` around `k0`.
pub fn gradient_tensors_with(w: impl Fn(&[f64]) -> f64, k0: &[f64], h: f64) -> (Array2<f64>, Array2<f64>) {
    let d = k0.len();
    let grad: Vec<f64> = (0..d)
        .map(|i| {
            let mut kp = k0.to_vec();
            let mut km = k0.to_vec();
            kp[i] += h;
            km[i] -= h;
            (w(&kp).sqrt() - w(&km).sqrt()) / (2.0 * h)
        })
        .collect();
    let s = Array2::from_shape_fn((d, d), |(i, j)| grad[i] * grad[j]);
    (s, Array2::zeros((d, d)))
}

/// [`gradient_tensors_with`] on the table, stepping one lattice spacing.
pub fn gradient_tensors(table: &RateTable, q: &[i64], k0: &[i64]) -> Result<(Array2<f64>, Array2<f64>)> {
    let lattice = table.lattice();
    let a = table
        .kicks()
        .iter()
        .position(|p| p.as_slice() == q)
        .ok_or_else(|| Error::domain(format!("kick {q:?} is not in the table")))?;
    let d = lattice.dim;
    for i in 0..d {
        let mut up = k0.to_vec();
        let mut down = k0.to_vec();
        up[i] += 1;
        down[i] -= 1;
        if !lattice.contains(&up) || !lattice.contains(&down) {
            return Err(Error::domain(format!("k0 = {k0:?} has no neighbours along axis {i}")));
        }
    }
    let dk = lattice.spacing();
    let lookup = |k: &[f64]| {
        let idx = lattice.nearest_index(k);
        table.rate(a, lattice.offset(&idx).expect("neighbour checked"))
    };
    Ok(gradient_tensors_with(lookup, &lattice.wavevector_unchecked(k0), dk))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableRecord {
    pub t: f64,
    pub trace: f64,
    pub hermiticity_defect: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub mean_energy: f64,
    pub mean_momentum: Vec<f64>,
    pub purity: f64,
    pub l1_coherence: f64,
}

impl ObservableRecord {
    pub fn csv_header(dim: usize) -> String {
        let mut cols = vec![
            "t".to_string(),
            "trace".into(),
            "hermiticity_defect".into(),
            "min_eigenvalue".into(),
            "max_eigenvalue".into(),
            "mean_energy".into(),
        ];
        cols.extend((0..dim).map(|i| format!("mean_momentum_{i}")));
        cols.extend(["purity".into(), "l1_coherence".into()]);
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut v = vec![
            self.t,
            self.trace,
            self.hermiticity_defect,
            self.min_eigenvalue,
            self.max_eigenvalue,
            self.mean_energy,
        ];
        v.extend(&self.mean_momentum);
        v.extend([self.purity, self.l1_coherence]);
        v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
    }
}

pub fn observables(rho: &DensityMatrix, particle: &ParticleSpec, t: f64) -> Result<ObservableRecord> {
    let lattice = rho.lattice();
    let n = rho.dim();
    let energies = lattice.energies(particle.mass)?;
    let pops = rho.populations();
    let mean_energy = pops.iter().zip(&energies).map(|(p, e)| p * e).sum();
    let mut mean_momentum = vec![0.0; lattice.dim];
    for (o, p) in pops.iter().enumerate() {
        for (m, k) in mean_momentum.iter_mut().zip(lattice.wavevector_at(o)) {
            *m += p * k;
        }
    }
    let mut purity = 0.0;
    let mut l1 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = rho.data[[i, j]];
            purity += x.norm_sqr();
            if i != j {
                l1 += x.norm();
            }
        }
    }
    let ev = rho.eigenvalues()?;
    Ok(ObservableRecord {
        t,
        trace: rho.trace(),
        hermiticity_defect: rho.hermiticity_defect(),
        min_eigenvalue: ev[0],
        max_eigenvalue: ev[n - 1],
        mean_energy,
        mean_momentum,
        purity,
        l1_coherence: l1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    /// `max |ρ - ρ†|` before the symmetric projection.
    pub hermiticity_defect: f64,
    /// `|Tr ρ - 1|` before any renormalization.
    pub trace_drift: f64,
    pub renormalized: bool,
}

fn axpy(y: &Array2<Complex64>, h: f64, k: &Array2<Complex64>) -> Array2<Complex64> {
    let mut out = y.clone();
    out.zip_mut_with(k, |o, kv| *o = Complex64::new(o.re + h * kv.re, o.im + h * kv.im));
    out
}

fn rhs_for(backend: Backend, rho: &DensityMatrix, table: &RateTable, particle: &ParticleSpec) -> Result<DensityMatrix> {
    match backend {
        Backend::Redfield => redfield_rhs(rho, table, particle),
        Backend::Lindblad => lindblad_rhs(rho, table, particle),
        Backend::BoltzmannDiagonal => {
            Err(Error::Config("the Boltzmann backend evolves distributions, not density matrices".into()))
        }
    }
}

/// One classical RK4 step followed by Hermitian projection and, if the trace
/// drifted beyond [`TRACE_RENORMALIZE_THRESHOLD`], renormalization. On
/// failure the input state is untouched.
pub fn step(
    rho: &DensityMatrix,
    config: &EvolutionConfig,
    table: &RateTable,
    particle: &ParticleSpec,
    t: f64,
) -> Result<(DensityMatrix, StepReport)> {
    let dt = config.dt;
    let wrap = |data| DensityMatrix { lattice: rho.lattice.clone(), data };
    let k1 = rhs_for(config.backend, rho, table, particle)?.data;
    let k2 = rhs_for(config.backend, &wrap(axpy(&rho.data, 0.5 * dt, &k1)), table, particle)?.data;
    let k3 = rhs_for(config.backend, &wrap(axpy(&rho.data, 0.5 * dt, &k2)), table, particle)?.data;
    let k4 = rhs_for(config.backend, &wrap(axpy(&rho.data, dt, &k3)), table, particle)?.data;
    let mut next = rho.data.clone();
    let h = dt / 6.0;
    for (((y, a), (b, c)), d) in next.iter_mut().zip(k1.iter()).zip(k2.iter().zip(k3.iter())).zip(k4.iter()) {
        let sr = a.re + 2.0 * b.re + 2.0 * c.re + d.re;
        let si = a.im + 2.0 * b.im + 2.0 * c.im + d.im;
        *y = Complex64::new(y.re + h * sr, y.im + h * si);
    }
    if next.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(Error::Integration { t: t + dt, reason: "non-finite density-matrix element".into() });
    }
    let mut out = wrap(next);
    let hermiticity_defect = out.hermiticity_defect();
    out.hermitize();
    let tr = out.trace();
    let trace_drift = (tr - 1.0).abs();
    let renormalized = trace_drift > TRACE_RENORMALIZE_THRESHOLD;
    if renormalized {
        log::debug!("t = {}: renormalizing trace drift {trace_drift:.3e}", t + dt);
        out.data.mapv_inplace(|c| c / tr);
    }
    Ok((out, StepReport { hermiticity_defect, trace_drift, renormalized }))
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<ObservableRecord>,
    /// `(t, populations)` at every record.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub final_state: DensityMatrix,
    pub trace_drift_max: f64,
    pub hermiticity_defect_max: f64,
    pub renormalizations: usize,
    pub min_eigenvalue_min: f64,
}

/// Integrates from `t = 0` to `t_end`, recording observables every
/// `record_every` steps (and at both ends).
pub fn evolve(
    rho0: &DensityMatrix,
    config: &EvolutionConfig,
    table: &RateTable,
    particle: &ParticleSpec,
) -> Result<Trajectory> {
    config.validate()?;
    check_lattice(rho0, table)?;
    let steps = config.steps();
    let mut rho = rho0.clone();
    let first = observables(&rho, particle, 0.0)?;
    let mut traj = Trajectory {
        min_eigenvalue_min: first.min_eigenvalue,
        snapshots: vec![(0.0, rho.populations())],
        records: vec![first],
        final_state: rho0.clone(),
        trace_drift_max: (rho0.trace() - 1.0).abs(),
        hermiticity_defect_max: rho0.hermiticity_defect(),
        renormalizations: 0,
    };
    for i in 0..steps {
        let t = i as f64 * config.dt;
        let (next, report) = step(&rho, config, table, particle, t)?;
        rho = next;
        traj.trace_drift_max = traj.trace_drift_max.max(report.trace_drift);
        traj.hermiticity_defect_max = traj.hermiticity_defect_max.max(report.hermiticity_defect);
        traj.renormalizations += usize::from(report.renormalized);
        if (i + 1) % config.record_every == 0 || i + 1 == steps {
            let t_now = (i + 1) as f64 * config.dt;
            let rec = observables(&rho, particle, t_now)?;
            traj.min_eigenvalue_min = traj.min_eigenvalue_min.min(rec.min_eigenvalue);
            traj.snapshots.push((t_now, rho.populations()));
            traj.records.push(rec);
        }
    }
    traj.final_state = rho;
    Ok(traj)
}

/// Mean squared momentum spread `⟨|k - ⟨k⟩|²⟩` of the populations.
pub fn momentum_variance(rho: &DensityMatrix) -> f64 {
    let lattice = rho.lattice();
    let pops = rho.populations();
    let mut mean = vec![0.0; lattice.dim];
    let mut second = 0.0;
    for (o, p) in pops.iter().enumerate() {
        let k = lattice.wavevector_at(o);
        second += p * norm_sq(&k);
        mean.iter_mut().zip(&k).for_each(|(m, x)| *m += p * x);
    }
    second - norm_sq(&mean)
}
