//! Bath-averaged collision kernels.
//!
//! `W_q(k)` is the rate for the kick `k → k + q` of the particle, averaged
//! over a Maxwell–Boltzmann gas of scatterers. Integrating the energy delta
//! over the bath velocity component along `q` leaves a Gaussian in
//!
//! ```text
//! u* = m_B ω/(ħ|q|) + |q|/2,      ħω = E_{k+q} - E_k,
//! ```
//!
//! so that `W_q(k) = (2π/ħ)(n/V)|ũ(q)|²·(m_B/ħ²|q|)·φ_s(u*)` with `φ_s` the
//! one-axis bath density of width `s = sqrt(m_B k_B T)/ħ`. The companion
//! principal-value operator replaces `φ_s(u*)` by its Hilbert transform,
//! which is a Dawson function.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use errorfunctions::RealErrorFunctions;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::BathSpec;
use crate::error::{Error, Result};
use crate::lattice::{dot, kinetic_energy, norm_sq, LatticeSpec, ParticleSpec};
use crate::potential::{self, BinaryKinematics, Masses, PotentialModel};
use crate::quad;
use crate::units::HBAR;

/// Default ceiling on `leakage bound / mean total rate`.
pub const DEFAULT_LEAKAGE_FRACTION: f64 = 1e-3;
/// Upper limit on stored `(q, k)` pairs.
const MAX_TABLE_ENTRIES: usize = 200_000_000;
/// Marker for a kick that leaves the basis.
pub const OUT_OF_BASIS: usize = usize::MAX;

/// Everything a collision kernel needs besides the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    pub bath: BathSpec,
    pub potential: PotentialModel,
    pub particle_mass: f64,
}

impl Medium {
    pub fn new(bath: BathSpec, potential: PotentialModel, particle_mass: f64) -> Result<Self> {
        bath.validate()?;
        potential.validate()?;
        if !(particle_mass.is_finite() && particle_mass > 0.0) {
            return Err(Error::domain(format!("particle mass must be positive, got {particle_mass}")));
        }
        Ok(Medium { bath, potential, particle_mass })
    }

    pub fn masses(&self) -> Masses {
        Masses { particle: self.particle_mass, bath: self.bath.mass }
    }

    /// `u*`: the bath velocity component along `q̂` (in wavenumber units) that
    /// makes the kick `k → k + q` conserve energy.
    pub fn shell_point(&self, q: &[f64], k: &[f64]) -> f64 {
        let qn = norm_sq(q).sqrt();
        // m_B ω/(ħ|q|) with ħω = ħ²(2k·q + q²)/(2m_S)
        let omega_term = self.bath.mass * (2.0 * dot(k, q) + qn * qn) / (2.0 * self.particle_mass * qn);
        omega_term + qn / 2.0
    }

    /// `(2π/ħ)(n/V)|ũ(q)|²·m_B/(ħ²|q|)`, the kick-dependent prefactor of `W`.
    fn prefactor(&self, lattice: &LatticeSpec, q: &[f64]) -> f64 {
        let u = self.potential.fourier(q);
        let qn = norm_sq(q).sqrt();
        2.0 * PI / HBAR * self.bath.density / lattice.volume() * u * u * self.bath.mass
            / (HBAR * HBAR * qn)
    }
}

fn check_kick(q: &[f64]) -> Result<()> {
    if norm_sq(q) == 0.0 {
        return Err(Error::domain("the zero kick carries no rate"));
    }
    Ok(())
}

fn normal_pdf(x: f64, s: f64) -> f64 {
    (-x * x / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
}

/// `W_q(k)` in closed form.
pub fn rate_w_analytic(medium: &Medium, lattice: &LatticeSpec, q: &[f64], k: &[f64]) -> Result<f64> {
    check_kick(q)?;
    let s = medium.bath.momentum_width();
    Ok(medium.prefactor(lattice, q) * normal_pdf(medium.shell_point(q, k), s))
}

/// `∂W_q(k)/∂k_i = -W·βħ²u*·q_i/(m_S|q|)`.
pub fn rate_w_gradient_analytic(
    medium: &Medium,
    lattice: &LatticeSpec,
    q: &[f64],
    k: &[f64],
) -> Result<Vec<f64>> {
    let w = rate_w_analytic(medium, lattice, q, k)?;
    let u = medium.shell_point(q, k);
    let qn = norm_sq(q).sqrt();
    let c = -w * medium.bath.beta() * HBAR * HBAR * u / (medium.particle_mass * qn);
    Ok(q.iter().map(|qi| c * qi).collect())
}

/// Brute-force bath trace: `Σ_{k_B} N·w_q(k_S, k_B; ε)·P(k_B)` over every
/// lattice wavevector, with `N = nV` scatterers.
pub fn rate_w_lattice_oracle(
    medium: &Medium,
    lattice: &LatticeSpec,
    q: &[i64],
    k: &[i64],
    eps: f64,
) -> Result<f64> {
    if q.iter().all(|&x| x == 0) {
        return Err(Error::domain("the zero kick carries no rate"));
    }
    let n_scatterers = medium.bath.density * lattice.volume();
    let masses = medium.masses();
    let mut total = 0.0;
    for kb in lattice.indices() {
        let p = medium.bath.mb_weight(lattice, &lattice.wavevector_unchecked(&kb));
        if p == 0.0 {
            continue;
        }
        total += p * potential::binary_rate(&medium.potential, lattice, masses, q, k, &kb, eps)?;
    }
    Ok(n_scatterers * total)
}

/// Extrapolates `f(ε), f(ε/2), f(ε/4), …` to `ε → 0` assuming an even
/// expansion in `ε`.
pub fn richardson_eps2(values: &[f64]) -> f64 {
    let mut row = values.to_vec();
    let mut factor = 4.0;
    for _ in 1..values.len() {
        row = row.windows(2).map(|w| w[1] + (w[1] - w[0]) / (factor - 1.0)).collect();
        factor *= 4.0;
    }
    row[0]
}

/// Lattice oracle at `ε, ε/2, ε/4, ε/8`, Richardson-extrapolated in `ε²`.
///
/// The oracle lattice must resolve the narrowest bath slice:
/// `m_B ε/(8ħ²|q|)` should exceed its spacing by a few.
pub fn rate_w_lattice_extrapolated(
    medium: &Medium,
    lattice: &LatticeSpec,
    q: &[i64],
    k: &[i64],
    eps: f64,
) -> Result<f64> {
    let vals = (0..4)
        .map(|i| rate_w_lattice_oracle(medium, lattice, q, k, eps / f64::from(1 << i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(richardson_eps2(&vals))
}

/// Orthonormal basis of the complement of `u` (unit vector).
fn perpendicular_basis(u: &[f64]) -> Vec<Vec<f64>> {
    let dim = u.len();
    let mut basis: Vec<Vec<f64>> = vec![u.to_vec()];
    for axis in 0..dim {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let n = norm_sq(&v).sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
        if basis.len() == dim {
            break;
        }
    }
    basis.split_off(1)
}

/// `W_q(k)` through the Born cross section: the flux `n·v·dσ/dΩ` of bath
/// particles whose collision produces the kick `q`, integrated over the bath
/// velocities transverse to `q` by Gauss–Hermite quadrature.
pub fn rate_w_from_cross_section(
    medium: &Medium,
    lattice: &LatticeSpec,
    q: &[f64],
    k: &[f64],
) -> Result<f64> {
    check_kick(q)?;
    let dim = q.len();
    let masses = medium.masses();
    let m_tot = masses.total();
    let qn = norm_sq(q).sqrt();
    let q_hat: Vec<f64> = q.iter().map(|x| x / qn).collect();
    let s = medium.bath.momentum_width();
    // the energy shell fixes the bath component along q̂
    let x0 = (masses.bath * dot(k, &q_hat) + m_tot * qn / 2.0) / masses.particle;
    let perp = perpendicular_basis(&q_hat);

    let integrand = |z: &[f64]| -> Result<f64> {
        let kb: Vec<f64> = (0..dim)
            .map(|i| x0 * q_hat[i] + perp.iter().zip(z).map(|(e, zj)| s * zj * e[i]).sum::<f64>())
            .collect();
        let kin = BinaryKinematics::new(masses, k, &kb);
        let kr = norm_sq(&kin.k_rel).sqrt();
        let omega: Vec<f64> = kin.k_rel.iter().zip(q).map(|(a, b)| (a + b) / kr).collect();
        let dsigma = potential::diff_cross_section(&medium.potential, kin.reduced_mass, &omega, &kin.k_rel)?;
        let v = HBAR * kr / kin.reduced_mass;
        Ok(v * dsigma * m_tot * kr / (masses.particle * qn) / kr.powi(dim as i32 - 1))
    };

    // density of the bath component along q̂ at x0; the transverse average
    // is taken under the unit-normal rule
    let along = normal_pdf(x0, s);
    let transverse = if dim == 1 {
        integrand(&[])?
    } else {
        let mut err = None;
        let value = quad::normal_expectation(dim - 1, 16, |z| match integrand(z) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        value
    };
    let d_gamma_d_q = medium.bath.density * along * transverse;
    Ok((2.0 * PI).powi(dim as i32) / lattice.volume() * d_gamma_d_q)
}

/// `PV ∫ φ_s(x)/(u - x) dx` by pole-symmetric pairing,
/// `∫_0^T [φ_s(u - t) - φ_s(u + t)]/t dt`, truncated where both tails are
/// below `e^{-72}` of the peak.
pub fn pv_bath_integral(u: f64, s: f64) -> Result<f64> {
    let upper = u.abs() + 12.0 * s;
    let f = |t: f64| {
        if t == 0.0 {
            // limit: -2φ'(u)
            2.0 * u / (s * s) * normal_pdf(u, s)
        } else {
            (normal_pdf(u - t, s) - normal_pdf(u + t, s)) / t
        }
    };
    let est = quad::integrate(f, 0.0, upper, 1e-12 / s, 1e-12)?;
    if est.error > 1e-8 {
        return Err(Error::Numeric { what: "principal-value bath integral".into(), residual: est.error });
    }
    Ok(est.value)
}

/// Closed form of [`pv_bath_integral`]: `√2·F(u/(√2 s))/s` with `F` the Dawson function.
pub fn pv_bath_integral_dawson(u: f64, s: f64) -> f64 {
    std::f64::consts::SQRT_2 * (u / (std::f64::consts::SQRT_2 * s)).dawson() / s
}

fn pv_prefactor(medium: &Medium, lattice: &LatticeSpec, q: &[f64]) -> f64 {
    let u = medium.potential.fourier(q);
    let qn = norm_sq(q).sqrt();
    medium.bath.density / (HBAR * lattice.volume()) * u * u * medium.bath.mass / (HBAR * HBAR * qn)
}

/// Principal-value operator `Y_q(k) = (n/ħV)|ũ(q)|²⟨PV 1/D_q⟩_B` by quadrature.
pub fn pv_y(medium: &Medium, lattice: &LatticeSpec, q: &[f64], k: &[f64]) -> Result<f64> {
    check_kick(q)?;
    let pre = pv_prefactor(medium, lattice, q);
    if pre == 0.0 {
        return Ok(0.0);
    }
    let s = medium.bath.momentum_width();
    Ok(pre * pv_bath_integral(medium.shell_point(q, k), s)?)
}

/// `Y_q(k)` through the Dawson function.
pub fn pv_y_dawson(medium: &Medium, lattice: &LatticeSpec, q: &[f64], k: &[f64]) -> Result<f64> {
    check_kick(q)?;
    let s = medium.bath.momentum_width();
    Ok(pv_prefactor(medium, lattice, q) * pv_bath_integral_dawson(medium.shell_point(q, k), s))
}

/// Smallest per-axis kick bound with `q_cutoff·Δk·R ≥ 4`, capped at `2 n_max`
/// (larger kicks never land inside the basis).
pub fn default_q_cutoff(lattice: &LatticeSpec, model: &PotentialModel) -> i64 {
    let c = (4.0 / (lattice.spacing() * model.range)).ceil() as i64;
    c.clamp(1, 2 * lattice.n_max.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Upper bound on `Σ_{q outside the cutoff} W_q(k)`, uniform in `k`.
    pub bound: f64,
    /// Mean over the basis of the stored total rate `Σ_q W_q(k)`.
    pub reference_rate: f64,
    pub fraction: f64,
    pub threshold: f64,
    pub exceeded: bool,
}

/// Gaussian-tail bound on the rate discarded by the kick cutoff. `|ũ(q)|²`
/// factorizes over axes and the bath factor is largest at the smallest
/// excluded `|q|`, so the excluded sum is at most
/// `(2π/ħ)(n/V)|ũ(0)|²·G_max·(S^d - S_in^d)` with `S = Σ_j e^{-(jΔkR)²}`.
pub fn leakage_bound(medium: &Medium, lattice: &LatticeSpec, q_cutoff: i64) -> f64 {
    let dim = lattice.dim;
    let dk = lattice.spacing();
    let r = medium.potential.range;
    let term = |j: i64| (-(j as f64 * dk * r).powi(2)).exp();
    let mut tail = 0.0;
    let mut j = q_cutoff + 1;
    loop {
        let t = term(j);
        tail += 2.0 * t;
        if t < 1e-30 * tail || t == 0.0 {
            break;
        }
        j += 1;
    }
    let inner: f64 = (-q_cutoff..=q_cutoff).map(term).sum();
    let outer_sum = (inner + tail).powi(dim as i32) - inner.powi(dim as i32);
    let q_min = (q_cutoff + 1) as f64 * dk;
    let zero = vec![0.0; dim];
    let u0 = medium.potential.fourier(&zero);
    let s = medium.bath.momentum_width();
    let g_max = medium.bath.mass / (HBAR * HBAR * q_min) / (s * (2.0 * PI).sqrt());
    2.0 * PI / HBAR * medium.bath.density / lattice.volume() * u0 * u0 * g_max * outer_sum
}

/// Tabulated `W_q(k)` for every kick `0 < |q_i| ≤ q_cutoff` and basis state `k`.
#[derive(Debug, Clone)]
pub struct RateTable {
    lattice: LatticeSpec,
    q_cutoff: i64,
    kicks: Vec<Vec<i64>>,
    /// Position of `-q` in `kicks`.
    reverse: Vec<usize>,
    /// `rates[kick * size + k]`.
    rates: Vec<f64>,
    sqrt_rates: Vec<f64>,
    /// Offset of `k + q`, or [`OUT_OF_BASIS`].
    dest: Vec<usize>,
    escape: Vec<f64>,
    dropped: Vec<f64>,
    leakage: Option<LeakageReport>,
    warnings: Vec<String>,
}

fn kick_list(dim: usize, q_cutoff: i64) -> Vec<Vec<i64>> {
    let side = (2 * q_cutoff + 1) as usize;
    let total = side.pow(dim as u32);
    (0..total)
        .map(|mut o| {
            let mut idx = vec![0i64; dim];
            for slot in idx.iter_mut().rev() {
                *slot = (o % side) as i64 - q_cutoff;
                o /= side;
            }
            idx
        })
        .filter(|q| q.iter().any(|&x| x != 0))
        .collect()
}

impl RateTable {
    /// Builds a table from an arbitrary kernel `f(q_index, k_index)`.
    pub fn from_fn(
        lattice: &LatticeSpec,
        q_cutoff: i64,
        f: impl Fn(&[i64], &[i64]) -> Result<f64> + Sync,
    ) -> Result<Self> {
        lattice.validate()?;
        if q_cutoff < 1 {
            return Err(Error::domain(format!("q_cutoff must be at least 1, got {q_cutoff}")));
        }
        let kicks = kick_list(lattice.dim, q_cutoff);
        let size = lattice.size();
        if kicks.len().saturating_mul(size) > MAX_TABLE_ENTRIES {
            return Err(Error::Config(format!(
                "rate table would hold {} x {} entries; reduce n_max or q_cutoff",
                kicks.len(),
                size
            )));
        }
        let indices: Vec<Vec<i64>> = lattice.indices().collect();
        let rows = kicks
            .par_iter()
            .map(|q| {
                indices
                    .iter()
                    .map(|k| {
                        let w = f(q, k)?;
                        if !(w.is_finite() && w >= 0.0) {
                            return Err(Error::Numeric {
                                what: format!("rate W at q = {q:?}, k = {k:?} is {w}"),
                                residual: w,
                            });
                        }
                        Ok(w)
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(lattice.clone(), q_cutoff, kicks, rows.concat())
    }

    fn assemble(lattice: LatticeSpec, q_cutoff: i64, kicks: Vec<Vec<i64>>, rates: Vec<f64>) -> Result<Self> {
        let size = lattice.size();
        if rates.len() != kicks.len() * size {
            return Err(Error::Config("rate table has the wrong number of entries".into()));
        }
        let position = |q: &[i64]| kicks.iter().position(|p| p.as_slice() == q);
        let reverse = kicks
            .iter()
            .map(|q| {
                let neg: Vec<i64> = q.iter().map(|x| -x).collect();
                position(&neg).ok_or_else(|| Error::Config(format!("kick {neg:?} missing")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut dest = vec![OUT_OF_BASIS; rates.len()];
        let mut escape = vec![0.0; size];
        let mut dropped = vec![0.0; size];
        for (a, q) in kicks.iter().enumerate() {
            for k in 0..size {
                let w = rates[a * size + k];
                match lattice.kick_offset(k, q) {
                    Some(b) => {
                        dest[a * size + k] = b;
                        escape[k] += w;
                    }
                    None => dropped[k] += w,
                }
            }
        }
        let sqrt_rates = rates.iter().map(|w| w.sqrt()).collect();
        Ok(RateTable {
            lattice,
            q_cutoff,
            kicks,
            reverse,
            rates,
            sqrt_rates,
            dest,
            escape,
            dropped,
            leakage: None,
            warnings: Vec::new(),
        })
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn q_cutoff(&self) -> i64 {
        self.q_cutoff
    }

    pub fn kicks(&self) -> &[Vec<i64>] {
        &self.kicks
    }

    pub fn num_kicks(&self) -> usize {
        self.kicks.len()
    }

    /// Index of `-q` for the kick at position `a`.
    pub fn reverse_kick(&self, a: usize) -> usize {
        self.reverse[a]
    }

    /// `W` for kick position `a` at basis offset `k`.
    #[inline]
    pub fn rate(&self, a: usize, k: usize) -> f64 {
        self.rates[a * self.lattice.size() + k]
    }

    #[inline]
    pub fn sqrt_rate(&self, a: usize, k: usize) -> f64 {
        self.sqrt_rates[a * self.lattice.size() + k]
    }

    /// Offset of `k + q_a`, or [`OUT_OF_BASIS`].
    #[inline]
    pub fn destination(&self, a: usize, k: usize) -> usize {
        self.dest[a * self.lattice.size() + k]
    }

    /// `W` at explicit indices; `None` for the zero kick or a kick beyond the cutoff.
    pub fn get(&self, q: &[i64], k: &[i64]) -> Option<f64> {
        let a = self.kicks.iter().position(|p| p.as_slice() == q)?;
        let o = self.lattice.offset(k)?;
        Some(self.rate(a, o))
    }

    /// In-basis escape rate `Γ(k) = Σ_q W_q(k)` over kicks that stay in the basis.
    pub fn escape_rates(&self) -> &[f64] {
        &self.escape
    }

    /// Rate into kicks that would leave the basis; dropped from the dynamics.
    pub fn dropped_rates(&self) -> &[f64] {
        &self.dropped
    }

    pub fn max_escape_rate(&self) -> f64 {
        self.escape.iter().cloned().fold(0.0, f64::max)
    }

    pub fn leakage(&self) -> Option<&LeakageReport> {
        self.leakage.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Computes and stores the kick-cutoff leakage report.
    pub fn attach_leakage(&mut self, medium: &Medium, threshold: f64) {
        let bound = leakage_bound(medium, &self.lattice, self.q_cutoff);
        let size = self.lattice.size() as f64;
        let reference_rate =
            self.escape.iter().zip(&self.dropped).map(|(a, b)| a + b).sum::<f64>() / size;
        let fraction = if reference_rate > 0.0 {
            bound / reference_rate
        } else if bound == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let exceeded = fraction > threshold;
        if exceeded {
            let msg = format!(
                "kick cutoff {} leaks up to {fraction:.3e} of the mean total rate (threshold {threshold:.1e})",
                self.q_cutoff
            );
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
        self.leakage = Some(LeakageReport { bound, reference_rate, fraction, threshold, exceeded });
    }

    /// Largest relative violation of `W_q(k)e^{-βE_k} = W_{-q}(k+q)e^{-βE_{k+q}}`
    /// over in-basis pairs, evaluated in log space. Pairs where either rate has
    /// underflowed below `1e-280` are skipped.
    pub fn detailed_balance_defect(&self, bath: &BathSpec, particle_mass: f64) -> Result<f64> {
        let size = self.lattice.size();
        let energies = self.lattice.energies(particle_mass)?;
        let beta = bath.beta();
        let mut worst: f64 = 0.0;
        for a in 0..self.kicks.len() {
            let r = self.reverse[a];
            for k in 0..size {
                let b = self.destination(a, k);
                if b == OUT_OF_BASIS {
                    continue;
                }
                let fwd = self.rate(a, k);
                let back = self.rate(r, b);
                if fwd < 1e-280 || back < 1e-280 {
                    continue;
                }
                let log_defect = fwd.ln() - back.ln() + beta * (energies[b] - energies[k]);
                worst = worst.max(log_defect.exp_m1().abs());
            }
        }
        Ok(worst)
    }

    /// Writes the documented text format: a `d,L,n_max,q_cutoff` header and
    /// its values, then one `q_index,k_index,rate` row per entry. Multi-axis
    /// indices are `;`-separated.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let l = &self.lattice;
        writeln!(out, "d,L,n_max,q_cutoff")?;
        writeln!(out, "{},{:e},{},{}", l.dim, l.box_length, l.n_max, self.q_cutoff)?;
        writeln!(out, "q_index,k_index,rate")?;
        let join = |v: &[i64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let size = l.size();
        for (a, q) in self.kicks.iter().enumerate() {
            let qs = join(q);
            for k in 0..size {
                writeln!(out, "{qs},{},{:e}", join(&l.index(k)), self.rates[a * size + k])?;
            }
        }
        Ok(())
    }

    pub fn read_csv(input: impl BufRead) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::Schema(format!("rate table line {line}: {what}"));
        let mut lines = input.lines();
        let mut next = |n: usize| -> Result<String> {
            lines.next().ok_or_else(|| bad(n, "unexpected end of file"))?.map_err(Error::from)
        };
        if next(1)?.trim() != "d,L,n_max,q_cutoff" {
            return Err(bad(1, "expected header d,L,n_max,q_cutoff"));
        }
        let meta = next(2)?;
        let fields: Vec<&str> = meta.trim().split(',').collect();
        if fields.len() != 4 {
            return Err(bad(2, "expected four fields"));
        }
        let dim: usize = fields[0].parse().map_err(|_| bad(2, "bad dimension"))?;
        let box_length: f64 = fields[1].parse().map_err(|_| bad(2, "bad box length"))?;
        let n_max: i64 = fields[2].parse().map_err(|_| bad(2, "bad n_max"))?;
        let q_cutoff: i64 = fields[3].parse().map_err(|_| bad(2, "bad q_cutoff"))?;
        let lattice = LatticeSpec::new(dim, box_length, n_max)?;
        if next(3)?.trim() != "q_index,k_index,rate" {
            return Err(bad(3, "expected header q_index,k_index,rate"));
        }
        let kicks = kick_list(dim, q_cutoff);
        let size = lattice.size();
        let mut rates = vec![f64::NAN; kicks.len() * size];
        let parse_idx = |s: &str, n: usize| -> Result<Vec<i64>> {
            let v = s
                .split(';')
                .map(|x| x.parse::<i64>().map_err(|_| bad(n, "bad index")))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != dim {
                return Err(bad(n, "index has the wrong dimension"));
            }
            Ok(v)
        };
        let side = (2 * q_cutoff + 1) as usize;
        let centre = (side.pow(dim as u32) - 1) / 2;
        for (n, line) in (4..).zip(lines.by_ref()) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.trim().split(',').collect();
            if parts.len() != 3 {
                return Err(bad(n, "expected three fields"));
            }
            let q = parse_idx(parts[0], n)?;
            let k = parse_idx(parts[1], n)?;
            let w: f64 = parts[2].parse().map_err(|_| bad(n, "bad rate"))?;
            if q.iter().any(|x| x.abs() > q_cutoff) || q.iter().all(|&x| x == 0) {
                return Err(bad(n, "kick outside the table"));
            }
            let ko = lattice.offset(&k).ok_or_else(|| bad(n, "k index outside the basis"))?;
            let qo = q.iter().fold(0usize, |acc, &x| acc * side + (x + q_cutoff) as usize);
            // the zero kick is omitted from the list
            let a = if qo > centre { qo - 1 } else { qo };
            if !(w.is_finite() && w >= 0.0) {
                return Err(bad(n, "rate must be finite and nonnegative"));
            }
            rates[a * size + ko] = w;
        }
        if rates.iter().any(|w| w.is_nan()) {
            return Err(Error::Schema("rate table is missing entries".into()));
        }
        Self::assemble(lattice, q_cutoff, kicks, rates)
    }
}

/// Tabulates [`rate_w_analytic`] and attaches the leakage report.
pub fn build_rate_table(
    medium: &Medium,
    lattice: &LatticeSpec,
    q_cutoff: i64,
    leakage_fraction: f64,
) -> Result<RateTable> {
    let mut table = RateTable::from_fn(lattice, q_cutoff, |q, k| {
        rate_w_analytic(medium, lattice, &lattice.wavevector_unchecked(q), &lattice.wavevector_unchecked(k))
    })?;
    table.attach_leakage(medium, leakage_fraction);
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PvCorrection {
    /// Bath-averaged total cross section `σ0 = ⟨σ(|k_rel|)⟩_B`.
    pub sigma0: f64,
    /// `nσ0/k0`.
    pub scattering_parameter: f64,
    /// `Π(k0) = -2 Σ_q Y_q(k0)`, summed over the kick cube.
    pub pi_measured: f64,
    /// `-ħΠ(k0)/(2E_{k0})`: the shift relative to the free Liouvillian.
    pub fractional_shift: f64,
    /// `fractional_shift / (nσ0/k0)`; absent when `σ0 = 0`.
    pub prefactor_c: Option<f64>,
}

/// Directly summed principal-value shift on a plane wave at `k0`, compared
/// with the scale `nσ0/k0`.
///
/// For a linear `Π(k) ≈ -(1/ħ)·C·(nσ0/k0)·E_k` near `k0`, the ratio
/// `-ħΠ(k0)·m_S/(ħ²k0²)` is `C·nσ0/k0`.
pub fn pv_velocity_correction(
    medium: &Medium,
    particle: &ParticleSpec,
    lattice: &LatticeSpec,
    q_cutoff: i64,
) -> Result<PvCorrection> {
    let k0 = &particle.k0;
    let k0n = norm_sq(k0).sqrt();
    if k0n == 0.0 {
        return Err(Error::domain("the velocity correction needs a moving particle"));
    }
    if k0.len() != lattice.dim {
        return Err(Error::Config("k0 and lattice differ in dimension".into()));
    }
    let masses = medium.masses();
    let kicks = kick_list(lattice.dim, q_cutoff);
    let y_sum = kicks
        .par_iter()
        .map(|q| pv_y(medium, lattice, &lattice.wavevector_unchecked(q), k0))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum::<f64>();
    let pi_measured = -2.0 * y_sum;

    let s = medium.bath.momentum_width();
    let dim = lattice.dim;
    let mut err = None;
    let sigma0 = quad::normal_expectation(dim, 24, |z| {
        let kb: Vec<f64> = z.iter().map(|x| s * x).collect();
        let kin = BinaryKinematics::new(masses, k0, &kb);
        let kr = norm_sq(&kin.k_rel).sqrt();
        match potential::total_cross_section(&medium.potential, kin.reduced_mass, dim, kr) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let scattering_parameter = medium.bath.density * sigma0 / k0n;
    let energy = kinetic_energy(k0, particle.mass)?;
    // P = [Π, ρ] against the free term -(i/ħ)[H, ρ]: compare Π with H/ħ
    let fractional_shift = -HBAR * pi_measured / (2.0 * energy);
    let prefactor_c = (sigma0 > 0.0).then(|| fractional_shift / scattering_parameter);
    Ok(PvCorrection { sigma0, scattering_parameter, pi_measured, fractional_shift, prefactor_c })
}
