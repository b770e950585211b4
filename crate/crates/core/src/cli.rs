//! Command-line orchestration: JSON configuration, regime checks, rate-table
//! caching, backend dispatch and CSV/JSON output.
//!
//! # Configuration
//!
//! ```json
//! {
//!   "lattice":   { "dim": 1, "box_length": 40.0, "n_max": 64 },
//!   "bath":      { "temperature": 1.0, "mass": 0.5, "density": 0.01 },
//!   "particle":  { "mass": 1.0, "k0_index": [45], "sigma_k": 0.0 },
//!   "potential": { "shape": "gaussian", "strength": 2.0, "range": 0.3 },
//!   "evolution": { "backend": "redfield", "dt": 0.01, "t_end": 5.0, "record_every": 10 },
//!   "initial":   { "kind": "particle" },
//!   "rates":     { "q_cutoff": 20, "leakage_fraction": 1e-3 },
//!   "outputs":   { "observables": true, "final_state": true, "plot_data": true,
//!                  "snapshot_every": 50, "pv_correction": false },
//!   "seed": 0
//! }
//! ```
//!
//! `particle` takes either `k0` (a basis wavevector) or `k0_index`.
//! `initial`, `rates`, `outputs` and `seed` are optional. `initial.kind` is
//! `particle` (plane wave, or a Gaussian packet when `sigma_k > 0`),
//! `superposition` (equal-weight plane waves at `indices`) or `thermal`.
//! Backends are `redfield`, `lindblad` and `boltzmann-diagonal`; the last
//! accepts `"spatial": true` in one dimension.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bath::{thermal_populations, BathSpec, Coverage, CLASSICAL_GAS_THRESHOLD};
use crate::boltzmann::{evolve_boltzmann, evolve_spatial, wigner_transform, DistributionVector, WignerField};
use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, ParticleSpec};
use crate::master::{evolve, validate_time_step, Backend, DensityMatrix, EvolutionConfig, ObservableRecord, TimeStepReport};
use crate::potential::{mean_free_path, PotentialModel, SHORT_RANGE_THRESHOLD, WEAK_SCATTERING_THRESHOLD};
use crate::rates::{
    build_rate_table, default_q_cutoff, pv_velocity_correction, LeakageReport, Medium, PvCorrection, RateTable,
    DEFAULT_LEAKAGE_FRACTION,
};

/// Bumped whenever the tabulated kernel changes meaning.
const CACHE_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric { .. } | Error::Integration { .. } => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Particle,
    Superposition {
        indices: Vec<Vec<i64>>,
    },
    Thermal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    /// Largest kick component kept; defaults to `R·qc·Δk ≥ 4`.
    #[serde(default)]
    pub q_cutoff: Option<i64>,
    #[serde(default = "default_leakage")]
    pub leakage_fraction: f64,
}

fn default_leakage() -> f64 {
    DEFAULT_LEAKAGE_FRACTION
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection { q_cutoff: None, leakage_fraction: DEFAULT_LEAKAGE_FRACTION }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default = "yes")]
    pub observables: bool,
    #[serde(default = "yes")]
    pub final_state: bool,
    #[serde(default = "yes")]
    pub plot_data: bool,
    /// Steps between population snapshots; a multiple of `record_every`.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
    #[serde(default)]
    pub pv_correction: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection { observables: true, final_state: true, plot_data: true, snapshot_every: None, pv_correction: false }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParticleInput {
    mass: f64,
    #[serde(default)]
    k0: Option<Vec<f64>>,
    #[serde(default)]
    k0_index: Option<Vec<i64>>,
    #[serde(default)]
    sigma_k: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    lattice: LatticeSpec,
    bath: BathSpec,
    particle: ParticleInput,
    potential: PotentialModel,
    evolution: EvolutionConfig,
    #[serde(default)]
    initial: InitialState,
    #[serde(default)]
    rates: RatesSection,
    #[serde(default)]
    outputs: OutputsSection,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub lattice: LatticeSpec,
    pub bath: BathSpec,
    pub particle: ParticleSpec,
    pub potential: PotentialModel,
    pub evolution: EvolutionConfig,
    pub initial: InitialState,
    pub rates: RatesSection,
    pub outputs: OutputsSection,
    /// Reserved for stochastic backends.
    pub seed: u64,
}

impl RunConfig {
    pub fn k0_index(&self) -> Result<Vec<i64>> {
        self.particle.validate(&self.lattice)
    }

    pub fn medium(&self) -> Result<Medium> {
        Medium::new(self.bath.clone(), self.potential.clone(), self.particle.mass)
    }

    pub fn q_cutoff(&self) -> i64 {
        self.rates.q_cutoff.unwrap_or_else(|| default_q_cutoff(&self.lattice, &self.potential))
    }

    pub fn snapshot_every(&self) -> usize {
        self.outputs.snapshot_every.unwrap_or(self.evolution.record_every)
    }
}

/// Parses and statically validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    raw.lattice.validate()?;
    raw.bath.validate()?;
    raw.potential.validate()?;
    raw.evolution.validate()?;
    let lattice = raw.lattice;
    let k0 = match (raw.particle.k0, raw.particle.k0_index) {
        (Some(_), Some(_)) => return Err(Error::Config("particle takes `k0` or `k0_index`, not both".into())),
        (None, None) => return Err(Error::Schema("missing field `particle.k0` (or `particle.k0_index`)".into())),
        (Some(k), None) => k,
        (None, Some(idx)) => {
            if idx.len() != lattice.dim {
                return Err(Error::Config(format!(
                    "k0_index has {} components but the lattice has dimension {}",
                    idx.len(),
                    lattice.dim
                )));
            }
            lattice.wavevector(&idx)?
        }
    };
    let particle = ParticleSpec { mass: raw.particle.mass, k0, sigma_k: raw.particle.sigma_k };
    particle.validate(&lattice)?;
    if let InitialState::Superposition { indices } = &raw.initial {
        if indices.is_empty() {
            return Err(Error::Config("a superposition needs at least one index".into()));
        }
        for idx in indices {
            if idx.len() != lattice.dim || !lattice.contains(idx) {
                return Err(Error::BasisBounds { index: idx.clone(), n_max: lattice.n_max });
            }
        }
    }
    if raw.evolution.spatial {
        if raw.evolution.backend != Backend::BoltzmannDiagonal {
            return Err(Error::Validation("spatial transport requires the boltzmann-diagonal backend".into()));
        }
        if lattice.dim != 1 {
            return Err(Error::Validation(format!("spatial transport is one-dimensional, got d = {}", lattice.dim)));
        }
    }
    if let Some(q) = raw.rates.q_cutoff {
        if q < 1 || q > 2 * lattice.n_max {
            return Err(Error::Validation(format!("q_cutoff = {q} must lie in [1, 2 n_max = {}]", 2 * lattice.n_max)));
        }
    }
    if !(raw.rates.leakage_fraction > 0.0) {
        return Err(Error::Validation("leakage_fraction must be positive".into()));
    }
    if let Some(s) = raw.outputs.snapshot_every {
        if s == 0 || s % raw.evolution.record_every != 0 {
            return Err(Error::Validation(format!(
                "snapshot_every = {s} must be a positive multiple of record_every = {}",
                raw.evolution.record_every
            )));
        }
    }
    Ok(RunConfig {
        lattice,
        bath: raw.bath,
        particle,
        potential: raw.potential,
        evolution: raw.evolution,
        initial: raw.initial,
        rates: raw.rates,
        outputs: raw.outputs,
        seed: raw.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeFlag {
    pub value: f64,
    pub threshold: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeFlags {
    /// `λ_th/ς ≤ 0.1`.
    pub classical_gas: RegimeFlag,
    /// `k0·ℓ_scat ≥ 10`.
    pub weak_scattering: RegimeFlag,
    /// `R/ς ≤ 0.1`.
    pub short_range: RegimeFlag,
    /// `n_max·Δk` against six bath standard deviations.
    pub coverage: Coverage,
    /// Kick-cutoff leakage within its threshold.
    pub truncation: RegimeFlag,
}

impl RegimeFlags {
    pub fn all_ok(&self) -> bool {
        self.classical_gas.ok && self.weak_scattering.ok && self.short_range.ok && self.coverage.sufficient && self.truncation.ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheInfo {
    pub key: String,
    pub path: PathBuf,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub k0_index: Vec<i64>,
    pub q_cutoff: i64,
    pub num_kicks: usize,
    pub regime: RegimeFlags,
    pub leakage: LeakageReport,
    pub time_step: TimeStepReport,
    pub cache: Option<CacheInfo>,
    pub warnings: Vec<String>,
}

/// A validated configuration with its rate table.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub medium: Medium,
    pub table: RateTable,
    pub report: ValidationReport,
}

fn regime_flags(config: &RunConfig, medium: &Medium, leakage: &LeakageReport) -> Result<RegimeFlags> {
    let dim = config.lattice.dim;
    let k0 = crate::lattice::norm_sq(&config.particle.k0).sqrt();
    let mfp = mean_free_path(&config.bath, &config.potential, medium.masses().reduced(), dim, k0)?;
    let classical = config.bath.classical_ratio(dim);
    let short = config.potential.short_range_ratio(&config.bath, dim);
    Ok(RegimeFlags {
        classical_gas: RegimeFlag { value: classical, threshold: CLASSICAL_GAS_THRESHOLD, ok: classical <= CLASSICAL_GAS_THRESHOLD },
        weak_scattering: RegimeFlag { value: mfp.k_lscat, threshold: WEAK_SCATTERING_THRESHOLD, ok: mfp.weak_scattering },
        short_range: RegimeFlag { value: short, threshold: SHORT_RANGE_THRESHOLD, ok: short <= SHORT_RANGE_THRESHOLD },
        coverage: config.bath.coverage(&config.lattice),
        truncation: RegimeFlag { value: leakage.fraction, threshold: leakage.threshold, ok: !leakage.exceeded },
    })
}

fn cache_key(config: &RunConfig, q_cutoff: i64) -> Result<String> {
    let inputs = serde_json::json!({
        "version": CACHE_VERSION,
        "lattice": config.lattice,
        "bath": config.bath,
        "potential": config.potential,
        "particle_mass": config.particle.mass,
        "q_cutoff": q_cutoff,
    });
    let text = serde_json::to_string(&inputs).map_err(|e| Error::Schema(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn cached_table(config: &RunConfig, medium: &Medium, q_cutoff: i64, dir: &Path) -> Result<(RateTable, CacheInfo)> {
    let key = cache_key(config, q_cutoff)?;
    let path = dir.join(format!("{key}.csv"));
    if path.exists() {
        let read = RateTable::read_csv(BufReader::new(fs::File::open(&path)?));
        match read {
            Ok(mut t) if t.lattice() == &config.lattice && t.q_cutoff() == q_cutoff => {
                t.attach_leakage(medium, config.rates.leakage_fraction);
                log::info!("rate table loaded from {}", path.display());
                return Ok((t, CacheInfo { key, path, hit: true }));
            }
            Ok(_) => log::warn!("cached table {} does not match the configuration; rebuilding", path.display()),
            Err(e) => log::warn!("cached table {} is unreadable ({e}); rebuilding", path.display()),
        }
    }
    let table = build_rate_table(medium, &config.lattice, q_cutoff, config.rates.leakage_fraction)?;
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!("{key}.csv.tmp"));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        table.write_csv(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, &path)?;
    let meta = serde_json::json!({
        "key": key,
        "generator": format!("qtransport {}", env!("CARGO_PKG_VERSION")),
        "cache_version": CACHE_VERSION,
        "lattice": config.lattice,
        "bath": config.bath,
        "potential": config.potential,
        "particle_mass": config.particle.mass,
        "q_cutoff": q_cutoff,
    });
    fs::write(dir.join(format!("{key}.json")), serde_json::to_string_pretty(&meta).map_err(|e| Error::Schema(e.to_string()))?)?;
    Ok((table, CacheInfo { key, path, hit: false }))
}

/// Builds (or loads from `cache_dir`) the rate table and runs the cross-field
/// checks: `dt ≤ 0.1/max rate` and the regime flags.
pub fn prepare(config: RunConfig, cache_dir: Option<&Path>) -> Result<LoadedConfig> {
    let k0_index = config.k0_index()?;
    let medium = config.medium()?;
    let q_cutoff = config.q_cutoff();
    let (table, cache) = match cache_dir {
        Some(dir) => {
            let (t, c) = cached_table(&config, &medium, q_cutoff, dir)?;
            (t, Some(c))
        }
        None => (build_rate_table(&medium, &config.lattice, q_cutoff, config.rates.leakage_fraction)?, None),
    };
    let time_step = validate_time_step(&config.evolution, &table, &config.particle)?;
    let leakage = table
        .leakage()
        .cloned()
        .ok_or_else(|| Error::Config("rate table carries no leakage report".into()))?;
    let regime = regime_flags(&config, &medium, &leakage)?;
    let mut warnings: Vec<String> = table.warnings().to_vec();
    warnings.extend(time_step.warnings.iter().cloned());
    for (name, ok) in [
        ("classical gas", regime.classical_gas.ok),
        ("weak scattering", regime.weak_scattering.ok),
        ("short range", regime.short_range.ok),
        ("thermal coverage", regime.coverage.sufficient),
    ] {
        if !ok {
            let msg = format!("{name} regime condition is not met");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let report = ValidationReport {
        k0_index,
        q_cutoff,
        num_kicks: table.num_kicks(),
        regime,
        leakage,
        time_step,
        cache,
        warnings,
    };
    Ok(LoadedConfig { config, medium, table, report })
}

/// Reads, parses and validates a configuration file, building its rate table
/// in memory.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    load_config_with_cache(path, None)
}

pub fn load_config_with_cache(path: &Path, cache_dir: Option<&Path>) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path)?;
    prepare(parse_config(&text)?, cache_dir)
}

pub fn initial_state(config: &RunConfig) -> Result<DensityMatrix> {
    let lattice = &config.lattice;
    match &config.initial {
        InitialState::Particle if config.particle.sigma_k > 0.0 => {
            DensityMatrix::gaussian_packet(lattice, &config.particle.k0, config.particle.sigma_k)
        }
        InitialState::Particle => DensityMatrix::plane_wave(lattice, &config.k0_index()?),
        InitialState::Superposition { indices } => {
            let a = Complex64::new(1.0 / (indices.len() as f64).sqrt(), 0.0);
            let terms: Vec<(Vec<i64>, Complex64)> = indices.iter().map(|i| (i.clone(), a)).collect();
            DensityMatrix::superposition(lattice, &terms)
        }
        InitialState::Thermal => DensityMatrix::thermal(&config.bath, lattice, config.particle.mass),
    }
}

fn csv_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

/// Writes `header` then one line per row; an empty `rows` leaves a header-only file.
pub fn write_csv_rows(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{header}").map_err(csv_err)?;
    for r in rows {
        writeln!(w, "{r}").map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

fn join_idx(idx: &[i64]) -> String {
    idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn index_header(prefix: &str, dim: usize) -> String {
    (0..dim).map(|i| format!("{prefix}_{i}")).collect::<Vec<_>>().join(",")
}

fn population_rows<'a>(
    lattice: &'a LatticeSpec,
    snapshots: impl IntoIterator<Item = (f64, &'a [f64])> + 'a,
) -> impl Iterator<Item = String> + 'a {
    snapshots.into_iter().flat_map(move |(t, pops)| {
        pops.iter()
            .enumerate()
            .map(move |(o, f)| format!("{},{},{}", fmt(t), join_idx(&lattice.index(o)), fmt(*f)))
    })
}

/// Recorded `(t, populations)` pairs.
type PopulationSeries = Vec<(f64, Vec<f64>)>;

fn keep_snapshot(t: f64, dt: f64, every: usize, last: bool) -> bool {
    last || ((t / dt).round() as usize).is_multiple_of(every)
}

fn write_populations(dir: &Path, name: &str, lattice: &LatticeSpec, snaps: &[(f64, Vec<f64>)], every: usize, dt: f64) -> Result<()> {
    let n = snaps.len();
    let kept: Vec<(f64, &[f64])> = snaps
        .iter()
        .enumerate()
        .filter(|(i, (t, _))| keep_snapshot(*t, dt, every, *i + 1 == n))
        .map(|(_, (t, p))| (*t, p.as_slice()))
        .collect();
    write_csv_rows(
        &dir.join(name),
        &format!("t,{},f", index_header("k_index", lattice.dim)),
        population_rows(lattice, kept),
    )
}

fn write_wigner(path: &Path, fields: &[(f64, &WignerField)]) -> Result<()> {
    let rows = fields.iter().flat_map(|(t, w)| {
        let lat = w.lattice();
        let v = w.values();
        let r = w.r_grid();
        (0..v.nrows()).flat_map(move |i| {
            (0..v.ncols()).map(move |j| {
                format!(
                    "{},{},{},{},{},{}",
                    fmt(*t),
                    i,
                    lat.index(j)[0],
                    fmt(r[i]),
                    fmt(lat.wavevector_at(j)[0]),
                    fmt(v[[i, j]])
                )
            })
        })
    });
    write_csv_rows(path, "t,r_index,k_index,r,k,f", rows)
}

fn write_density_matrix(path: &Path, rho: &DensityMatrix) -> Result<()> {
    let lat = rho.lattice();
    let d = lat.dim;
    let data = rho.data();
    let n = rho.dim();
    let rows = (0..n).flat_map(|i| {
        (0..n).map(move |j| {
            let x = data[[i, j]];
            format!("{},{},{},{}", join_idx(&lat.index(i)), join_idx(&lat.index(j)), fmt(x.re), fmt(x.im))
        })
    });
    write_csv_rows(path, &format!("{},{},re,im", index_header("row", d), index_header("col", d)), rows)
}

fn write_observables(path: &Path, dim: usize, records: &[ObservableRecord]) -> Result<()> {
    write_csv_rows(path, &ObservableRecord::csv_header(dim), records.iter().map(|r| r.csv_row()))
}

fn write_series(path: &Path, name: &str, points: impl IntoIterator<Item = (f64, f64)>) -> Result<()> {
    write_csv_rows(path, &format!("t,{name}"), points.into_iter().map(|(t, v)| format!("{},{}", fmt(t), fmt(v))))
}

/// Diagnostics common to every backend.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendStats {
    pub backend: Backend,
    pub steps: usize,
    pub trace_drift_max: f64,
    pub hermiticity_defect_max: f64,
    /// Smallest eigenvalue (coherent backends) or population (Boltzmann).
    pub min_eigenvalue_min: f64,
    pub renormalizations: usize,
    pub final_mean_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub verb: String,
    pub version: String,
    pub config: RunConfig,
    pub regime: RegimeFlags,
    pub leakage: LeakageReport,
    pub time_step: TimeStepReport,
    pub q_cutoff: i64,
    pub cache: Option<CacheInfo>,
    pub backends: Vec<BackendStats>,
    pub trace_drift_max: f64,
    pub hermiticity_defect_max: f64,
    pub min_eigenvalue_min: f64,
    /// Largest population discrepancy between backends (`compare` only).
    pub max_population_discrepancy: Option<f64>,
    pub pv_correction: Option<PvCorrection>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Outputs<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }
}

fn run_coherent(
    loaded: &LoadedConfig,
    backend: Backend,
    rho0: &DensityMatrix,
    out: &mut Outputs,
    suffix: &str,
) -> Result<(BackendStats, PopulationSeries)> {
    let cfg = &loaded.config;
    let evo = EvolutionConfig { backend, ..cfg.evolution.clone() };
    let traj = evolve(rho0, &evo, &loaded.table, &cfg.particle)?;
    let dim = cfg.lattice.dim;
    if cfg.outputs.observables {
        write_observables(&out.path(&format!("observables{suffix}.csv")), dim, &traj.records)?;
    }
    if cfg.outputs.plot_data {
        write_populations(out.dir, &format!("populations{suffix}.csv"), &cfg.lattice, &traj.snapshots, cfg.snapshot_every(), evo.dt)?;
        out.written.push(format!("populations{suffix}.csv"));
        let series = |f: fn(&ObservableRecord) -> f64| traj.records.iter().map(move |r| (r.t, f(r)));
        write_series(&out.path(&format!("energy{suffix}.csv")), "mean_energy", series(|r| r.mean_energy))?;
        write_series(&out.path(&format!("purity{suffix}.csv")), "purity", series(|r| r.purity))?;
        write_series(&out.path(&format!("coherence{suffix}.csv")), "l1_coherence", series(|r| r.l1_coherence))?;
        write_series(&out.path(&format!("min_eigenvalue{suffix}.csv")), "min_eigenvalue", series(|r| r.min_eigenvalue))?;
        if dim == 1 {
            let w0 = wigner_transform(rho0)?;
            let w1 = wigner_transform(&traj.final_state)?;
            let t_end = traj.records.last().map_or(0.0, |r| r.t);
            write_wigner(&out.path(&format!("wigner{suffix}.csv")), &[(0.0, &w0), (t_end, &w1)])?;
        }
    }
    if cfg.outputs.final_state {
        write_density_matrix(&out.path(&format!("final_state{suffix}.csv")), &traj.final_state)?;
    }
    let stats = BackendStats {
        backend,
        steps: evo.steps(),
        trace_drift_max: traj.trace_drift_max,
        hermiticity_defect_max: traj.hermiticity_defect_max,
        min_eigenvalue_min: traj.min_eigenvalue_min,
        renormalizations: traj.renormalizations,
        final_mean_energy: traj.records.last().map_or(f64::NAN, |r| r.mean_energy),
    };
    Ok((stats, traj.snapshots))
}

fn run_homogeneous(
    loaded: &LoadedConfig,
    rho0: &DensityMatrix,
    out: &mut Outputs,
    suffix: &str,
) -> Result<(BackendStats, PopulationSeries)> {
    let cfg = &loaded.config;
    let evo = EvolutionConfig { backend: Backend::BoltzmannDiagonal, spatial: false, ..cfg.evolution.clone() };
    if rho0.data().indexed_iter().any(|((i, j), x)| i != j && x.norm() > 0.0) {
        log::warn!("the Boltzmann backend keeps only the populations of the initial state");
    }
    let f0 = DistributionVector::from_density_matrix(rho0);
    let thermal = thermal_populations(&cfg.bath, &cfg.lattice, cfg.particle.mass)?;
    let traj = evolve_boltzmann(&f0, &evo, &loaded.table, &cfg.particle, Some(&thermal))?;
    let snaps: PopulationSeries = traj.times.iter().cloned().zip(traj.populations.iter().cloned()).collect();
    if cfg.outputs.observables {
        let rows = (0..traj.times.len()).map(|i| {
            let p = &traj.populations[i];
            format!(
                "{},{},{},{},{}",
                fmt(traj.times[i]),
                fmt(p.iter().sum()),
                fmt(p.iter().cloned().fold(f64::INFINITY, f64::min)),
                fmt(traj.mean_energy[i]),
                fmt(traj.relative_entropy[i])
            )
        });
        write_csv_rows(&out.path(&format!("observables{suffix}.csv")), "t,total,min_population,mean_energy,relative_entropy", rows)?;
    }
    if cfg.outputs.plot_data {
        write_populations(out.dir, &format!("populations{suffix}.csv"), &cfg.lattice, &snaps, cfg.snapshot_every(), evo.dt)?;
        out.written.push(format!("populations{suffix}.csv"));
        write_series(&out.path(&format!("energy{suffix}.csv")), "mean_energy", traj.times.iter().cloned().zip(traj.mean_energy.iter().cloned()))?;
        write_series(
            &out.path(&format!("relative_entropy{suffix}.csv")),
            "relative_entropy",
            traj.times.iter().cloned().zip(traj.relative_entropy.iter().cloned()),
        )?;
    }
    if cfg.outputs.final_state {
        let lat = &cfg.lattice;
        write_csv_rows(
            &out.path(&format!("final_state{suffix}.csv")),
            &format!("{},f", index_header("k_index", lat.dim)),
            traj.final_state.values().iter().enumerate().map(|(o, f)| format!("{},{}", join_idx(&lat.index(o)), fmt(*f))),
        )?;
    }
    let stats = BackendStats {
        backend: Backend::BoltzmannDiagonal,
        steps: evo.steps(),
        trace_drift_max: traj.norm_drift_max,
        hermiticity_defect_max: 0.0,
        min_eigenvalue_min: traj.min_value_min,
        renormalizations: traj.renormalizations,
        final_mean_energy: *traj.mean_energy.last().unwrap_or(&f64::NAN),
    };
    Ok((stats, snaps))
}

fn run_spatial(loaded: &LoadedConfig, rho0: &DensityMatrix, out: &mut Outputs) -> Result<BackendStats> {
    let cfg = &loaded.config;
    let w0 = wigner_transform(rho0)?;
    let traj = evolve_spatial(&w0, &cfg.evolution, &loaded.table, &cfg.particle)?;
    let snaps: PopulationSeries = traj.times.iter().cloned().zip(traj.marginals.iter().cloned()).collect();
    if cfg.outputs.observables {
        write_series(&out.path("energy.csv"), "mean_energy", traj.times.iter().cloned().zip(traj.mean_energy.iter().cloned()))?;
    }
    if cfg.outputs.plot_data {
        write_populations(out.dir, "populations.csv", &cfg.lattice, &snaps, cfg.snapshot_every(), cfg.evolution.dt)?;
        out.written.push("populations.csv".into());
        let t_end = *traj.times.last().unwrap_or(&0.0);
        write_wigner(&out.path("wigner.csv"), &[(0.0, &w0), (t_end, &traj.final_state)])?;
    }
    if cfg.outputs.final_state {
        write_wigner(&out.path("final_state.csv"), &[(*traj.times.last().unwrap_or(&0.0), &traj.final_state)])?;
    }
    Ok(BackendStats {
        backend: Backend::BoltzmannDiagonal,
        steps: cfg.evolution.steps(),
        trace_drift_max: traj.norm_drift_max,
        hermiticity_defect_max: 0.0,
        min_eigenvalue_min: traj.final_state.min_value(),
        renormalizations: traj.renormalizations,
        final_mean_energy: *traj.mean_energy.last().unwrap_or(&f64::NAN),
    })
}

fn max_discrepancy(a: &[(f64, Vec<f64>)], b: &[(f64, Vec<f64>)]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|((_, x), (_, y))| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
        .collect()
}

fn summarize(loaded: &LoadedConfig, verb: &str, backends: Vec<BackendStats>, out: Outputs, start: Instant) -> Result<RunSummary> {
    let cfg = &loaded.config;
    let pv_correction = if cfg.outputs.pv_correction {
        Some(pv_velocity_correction(&loaded.medium, &cfg.particle, &cfg.lattice, loaded.report.q_cutoff)?)
    } else {
        None
    };
    let fold = |f: fn(&BackendStats) -> f64, init: f64, g: fn(f64, f64) -> f64| backends.iter().map(f).fold(init, g);
    let mut written = out.written;
    written.push("summary.json".into());
    Ok(RunSummary {
        verb: verb.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        regime: loaded.report.regime.clone(),
        leakage: loaded.report.leakage.clone(),
        time_step: loaded.report.time_step.clone(),
        q_cutoff: loaded.report.q_cutoff,
        cache: loaded.report.cache.clone(),
        trace_drift_max: fold(|b| b.trace_drift_max, 0.0, f64::max),
        hermiticity_defect_max: fold(|b| b.hermiticity_defect_max, 0.0, f64::max),
        min_eigenvalue_min: fold(|b| b.min_eigenvalue_min, f64::INFINITY, f64::min),
        backends,
        max_population_discrepancy: None,
        pv_correction,
        warnings: loaded.report.warnings.clone(),
        outputs: written,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn write_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).map_err(|e| Error::Schema(e.to_string()))?;
    fs::write(dir.join("summary.json"), text)?;
    Ok(())
}

/// Runs the configured backend and writes every output into `out_dir`.
pub fn run(loaded: &LoadedConfig, out_dir: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    fs::create_dir_all(out_dir)?;
    let cfg = &loaded.config;
    let rho0 = initial_state(cfg)?;
    let mut out = Outputs { dir: out_dir, written: Vec::new() };
    let stats = match (cfg.evolution.backend, cfg.evolution.spatial) {
        (Backend::BoltzmannDiagonal, true) => run_spatial(loaded, &rho0, &mut out)?,
        (Backend::BoltzmannDiagonal, false) => run_homogeneous(loaded, &rho0, &mut out, "")?.0,
        (b, _) => run_coherent(loaded, b, &rho0, &mut out, "")?.0,
    };
    let summary = summarize(loaded, "run", vec![stats], out, start)?;
    write_summary(out_dir, &summary)?;
    Ok(summary)
}

/// Runs Redfield, Lindblad and homogeneous Boltzmann from the same initial
/// state and writes the per-record population discrepancies to `compare.csv`.
pub fn compare(loaded: &LoadedConfig, out_dir: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    fs::create_dir_all(out_dir)?;
    let rho0 = initial_state(&loaded.config)?;
    let mut out = Outputs { dir: out_dir, written: Vec::new() };
    let (rs, rp) = run_coherent(loaded, Backend::Redfield, &rho0, &mut out, "_redfield")?;
    let (ls, lp) = run_coherent(loaded, Backend::Lindblad, &rho0, &mut out, "_lindblad")?;
    let (bs, bp) = run_homogeneous(loaded, &rho0, &mut out, "_boltzmann")?;
    let rl = max_discrepancy(&rp, &lp);
    let rb = max_discrepancy(&rp, &bp);
    let lb = max_discrepancy(&lp, &bp);
    let rows = (0..rl.len()).map(|i| format!("{},{},{},{}", fmt(rp[i].0), fmt(rl[i]), fmt(rb[i]), fmt(lb[i])));
    write_csv_rows(&out.path("compare.csv"), "t,redfield_lindblad,redfield_boltzmann,lindblad_boltzmann", rows)?;
    let worst = rl.iter().chain(&rb).chain(&lb).cloned().fold(0.0, f64::max);
    let mut summary = summarize(loaded, "compare", vec![rs, ls, bs], out, start)?;
    summary.max_population_discrepancy = Some(worst);
    write_summary(out_dir, &summary)?;
    Ok(summary)
}

#[derive(Debug, Parser)]
#[command(name = "qtransport", version, about = "Momentum-lattice transport of a fast particle through a thermal gas")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Directory for CSV and JSON outputs.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Rate-table cache; defaults to `<out-dir>/table-cache`.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Only report errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the configuration, build the rate table and print the validation report.
    Validate { config: PathBuf },
    /// Build or load the cached rate table and copy it to the output directory.
    Table { config: PathBuf },
    /// Run the configured backend.
    Run { config: PathBuf },
    /// Run every backend from the same initial state.
    Compare { config: PathBuf },
}

fn execute(cli: &Cli) -> Result<()> {
    let cache = cli.cache_dir.clone().unwrap_or_else(|| cli.out_dir.join("table-cache"));
    let say = |s: String| {
        if !cli.quiet {
            println!("{s}");
        }
    };
    match &cli.command {
        Command::Validate { config } => {
            let loaded = load_config_with_cache(config, Some(&cache))?;
            say(pretty(&loaded.report)?);
        }
        Command::Table { config } => {
            let loaded = load_config_with_cache(config, Some(&cache))?;
            fs::create_dir_all(&cli.out_dir)?;
            let path = cli.out_dir.join("rate_table.csv");
            let mut w = BufWriter::new(fs::File::create(&path)?);
            loaded.table.write_csv(&mut w)?;
            w.flush()?;
            say(pretty(&loaded.report)?);
        }
        Command::Run { config } => {
            let loaded = load_config_with_cache(config, Some(&cache))?;
            let s = run(&loaded, &cli.out_dir)?;
            say(format!(
                "run finished in {:.2} s; trace drift {:.3e}; summary in {}",
                s.wall_time_s,
                s.trace_drift_max,
                cli.out_dir.join("summary.json").display()
            ));
        }
        Command::Compare { config } => {
            let loaded = load_config_with_cache(config, Some(&cache))?;
            let s = compare(&loaded, &cli.out_dir)?;
            say(format!(
                "compare finished in {:.2} s; max population discrepancy {:.3e}; summary in {}",
                s.wall_time_s,
                s.max_population_discrepancy.unwrap_or(f64::NAN),
                cli.out_dir.join("summary.json").display()
            ));
        }
    }
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Schema(e.to_string()))
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::from_default_env().filter_level(level).try_init();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "lattice": { "dim": 1, "box_length": 30.0, "n_max": 12 },
        "bath": { "temperature": 1.0, "mass": 0.5, "density": 0.01 },
        "particle": { "mass": 1.0, "k0_index": [6] },
        "potential": { "strength": 1.0, "range": 0.3 },
        "evolution": { "backend": "redfield", "dt": 0.01, "t_end": 0.1 }
    }"#;

    #[test]
    fn defaults_are_applied() {
        let c = parse_config(BASE).unwrap();
        assert_eq!(c.initial, InitialState::Particle);
        assert_eq!(c.rates, RatesSection::default());
        assert!(c.outputs.observables && c.outputs.plot_data && !c.outputs.pv_correction);
        assert_eq!(c.evolution.record_every, 1);
        assert_eq!(c.particle.k0, c.lattice.wavevector(&[6]).unwrap());
    }

    #[test]
    fn missing_field_is_named() {
        let text = BASE.replace(r#""range": 0.3"#, r#""rng": 0.3"#);
        match parse_config(&text) {
            Err(Error::Schema(m)) => assert!(m.contains("rng") || m.contains("range"), "{m}"),
            other => panic!("{other:?}"),
        }
        let text = BASE.replace(r#""k0_index": [6]"#, r#""sigma_k": 0.0"#);
        match parse_config(&text) {
            Err(Error::Schema(m)) => assert!(m.contains("k0"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn off_lattice_k0_suggests_nearest() {
        let text = BASE.replace(r#""k0_index": [6]"#, r#""k0": [1.3]"#);
        match parse_config(&text) {
            Err(Error::Validation(m)) => assert!(m.contains("nearest"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oversized_dt_cites_rate_bound() {
        let text = BASE.replace(r#""strength": 1.0"#, r#""strength": 1000.0"#).replace(r#""dt": 0.01"#, r#""dt": 0.5"#);
        let text = text.replace(r#""t_end": 0.1"#, r#""t_end": 1.0"#);
        match prepare(parse_config(&text).unwrap(), None) {
            Err(Error::Validation(m)) => assert!(m.contains("0.1/max rate"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Validation("x".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::Schema("x".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::Numeric { what: "x".into(), residual: 1.0 }), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::Integration { t: 0.0, reason: "x".into() }), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), EXIT_IO);
    }

    #[test]
    fn empty_rows_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_csv_rows(&p, "t,f", std::iter::empty()).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "t,f\n");
        write_populations(dir.path(), "p.csv", &LatticeSpec::new(1, 10.0, 2).unwrap(), &[], 1, 0.1).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("p.csv")).unwrap(), "t,k_index_0,f\n");
    }

    #[test]
    fn spatial_needs_boltzmann_in_one_dimension() {
        let text = BASE.replace(r#""t_end": 0.1"#, r#""t_end": 0.1, "spatial": true"#);
        assert!(matches!(parse_config(&text), Err(Error::Validation(_))));
    }
}
