//! Command orchestration behind the `squid-dephasing` binary. Each command
//! writes its data files plus `config_echo.json` into the output directory
//! and returns the paths it wrote.

pub mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::RunConfig;

use crate::analysis::{
    bandwidth_sweep, fit_damped_cosine, fit_exponential_decay, variance_sweep, write_sweep_csv, BandwidthHold,
    FitResult, SweepBase, SweepResult, SweepRow,
};
use crate::coupling::{coupling_report, CouplingReport};
use crate::device::{extract_two_state, well_geometry, DeviceParams, TwoStateParams, WellGeometry, MICRO};
use crate::ensemble::{run_ensemble, trajectory_seed, write_ensemble_csv, EnsembleResult};
use crate::error::{Error, Result};
use crate::evolution::{prepare_initial_state, run_trajectory, write_trajectory_csv, PreparedState};
use crate::noise::{generate_noise_trace, NoiseChannel, NoiseSpec};
use crate::spectrum::{load_or_build_table, solve_eigenbasis, tunnel_splitting, BasisTable};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const UNITS: &str = "time ns; angular frequency and energy/hbar rad/ns; flux bias uPhi0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    Variance,
    Bandwidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Evolve { debug_trajectories: bool },
    Sweep(SweepMode),
    Coupling,
    DumpTable,
}

/// Provenance written at the top of every output.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool_version: &'static str,
    pub config_sha256: String,
    pub master_seed: u64,
    pub units: &'static str,
}

impl Header {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            tool_version: VERSION,
            config_sha256: config.hash(),
            master_seed: config.master_seed,
            units: UNITS,
        }
    }

    pub fn csv(&self) -> String {
        format!(
            "# squid-dephasing {}\n# config_sha256 {}\n# master_seed {}\n# units: {}\n",
            self.tool_version, self.config_sha256, self.master_seed, self.units
        )
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    header: &'a Header,
    #[serde(flatten)]
    body: T,
}

struct Outputs {
    dir: PathBuf,
    header: Header,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&config.output_dir)?;
        let mut out = Self {
            dir: config.output_dir.clone(),
            header: Header::new(config),
            written: Vec::new(),
        };
        out.file("config_echo.json", |w| {
            w.write_all(config.echo().as_bytes())?;
            writeln!(w)?;
            Ok(())
        })?;
        Ok(out)
    }

    fn file(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, body: T) -> Result<()> {
        let doc = Document {
            header: &self.header,
            body,
        };
        let text = serde_json::to_string_pretty(&doc)?;
        self.file(name, |w| {
            w.write_all(text.as_bytes())?;
            writeln!(w)?;
            Ok(())
        })
    }
}

pub fn run(config: &RunConfig, command: Command) -> Result<Vec<PathBuf>> {
    let mut out = Outputs::new(config)?;
    match command {
        Command::Spectrum => spectrum(config, &mut out)?,
        Command::Evolve { debug_trajectories } => evolve(config, debug_trajectories, &mut out)?,
        Command::Sweep(mode) => sweep(config, mode, &mut out)?,
        Command::Coupling => coupling(config, &mut out)?,
        Command::DumpTable => dump_table(config, &mut out)?,
    }
    Ok(out.written)
}

#[derive(Serialize)]
struct DeviceSummary {
    inductance_ph: f64,
    capacitance_ff: f64,
    critical_current_ua: f64,
    flux_bias: f64,
    beta_l: f64,
    lc_frequency_rad_per_ns: f64,
    harmonic_oracle: bool,
}

impl DeviceSummary {
    fn new(params: &DeviceParams) -> Self {
        let (l, c, ic) = params.to_practical();
        Self {
            inductance_ph: l,
            capacitance_ff: c,
            critical_current_ua: ic,
            flux_bias: params.flux_bias,
            beta_l: params.beta_l(),
            lc_frequency_rad_per_ns: params.lc_frequency(),
            harmonic_oracle: params.harmonic_oracle,
        }
    }
}

#[derive(Serialize)]
struct SpectrumSummary {
    device: DeviceSummary,
    n_levels: usize,
    splitting_rad_per_ns: f64,
    splitting_ghz: f64,
    /// Largest relative deviation of a level spacing from ω_LC (harmonic runs).
    max_spacing_deviation_from_lc: Option<f64>,
    wells: Option<WellGeometry>,
    two_state: Option<TwoStateParams>,
}

fn spectrum(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let params = config.device.resolve(&config.grid)?;
    let n_levels = config.table.n_levels;
    let basis = solve_eigenbasis(&params, &config.grid, n_levels)?;
    let e = &basis.energies;
    let header = out.header.csv();
    out.file("spectrum_levels.csv", |w| {
        w.write_all(header.as_bytes())?;
        writeln!(w, "level,energy_rad_per_ns,above_ground_rad_per_ns,spacing_rad_per_ns")?;
        for (n, en) in e.iter().enumerate() {
            let spacing = if n > 0 { en - e[n - 1] } else { 0.0 };
            writeln!(w, "{n},{en},{},{spacing}", en - e[0])?;
        }
        Ok(())
    })?;
    out.file("spectrum_vectors.csv", |w| {
        w.write_all(header.as_bytes())?;
        write!(w, "phi")?;
        for n in 0..n_levels {
            write!(w, ",psi_{n}")?;
        }
        writeln!(w)?;
        for (i, phi) in config.grid.points().iter().enumerate() {
            write!(w, "{phi}")?;
            for v in &basis.vectors {
                write!(w, ",{}", v[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;

    let omega_lc = params.lc_frequency();
    let max_spacing_deviation_from_lc = params.harmonic_oracle.then(|| {
        e.windows(2)
            .map(|p| ((p[1] - p[0]) / omega_lc - 1.0).abs())
            .fold(0.0, f64::max)
    });
    let (wells, two_state) = if params.harmonic_oracle || params.beta_l() <= 1.0 {
        (None, None)
    } else {
        let degenerate = solve_eigenbasis(&params.with_flux_bias(0.5), &config.grid, 2)?;
        (
            Some(well_geometry(&params)?),
            Some(extract_two_state(&params, &degenerate.energies, e)?),
        )
    };
    let splitting = e[1] - e[0];
    out.json(
        "spectrum_summary.json",
        SpectrumSummary {
            device: DeviceSummary::new(&params),
            n_levels,
            splitting_rad_per_ns: splitting,
            splitting_ghz: splitting / (2.0 * std::f64::consts::PI),
            max_spacing_deviation_from_lc,
            wells,
            two_state,
        },
    )
}

/// Calibrated (or given) device and the cached table covering `max_sigma`.
fn device_and_table(config: &RunConfig, max_sigma: f64) -> Result<(DeviceParams, BasisTable)> {
    let params = config.device.resolve(&config.grid)?;
    let spec = config.table_spec(max_sigma);
    let table = load_or_build_table(Some(&config.cache_dir()), &params, &config.grid, &spec)?;
    Ok((params, table))
}

fn doublet(table: &BasisTable) -> f64 {
    let e = &table.entry(table.center()).energies;
    e[1] - e[0]
}

#[derive(Serialize)]
struct InitialSummary {
    offset_microphi0: f64,
    two_level_weight: f64,
    mean_flux: f64,
}

impl InitialSummary {
    fn new(config: &RunConfig, prepared: &PreparedState) -> Self {
        Self {
            offset_microphi0: config.propagation.initial_bias_offset,
            two_level_weight: prepared.two_level_weight,
            mean_flux: prepared.mean_flux,
        }
    }
}

#[derive(Serialize)]
struct EvolveSummary {
    device: DeviceSummary,
    splitting_rad_per_ns: f64,
    initial_state: InitialSummary,
    n_trajectories: usize,
    sigma_microphi0: f64,
    cutoff_rad_per_ns: f64,
    fit: Option<FitResult>,
    fit_error: Option<String>,
    /// Exponential rate of |ρ₀₁(t)| and its half-width.
    coherence_decay_rate: Option<(f64, f64)>,
    leakage_max: f64,
    clamped_steps: usize,
    total_steps: usize,
    flux_seeds: Vec<u64>,
    critical_current_seeds: Vec<u64>,
}

fn evolve(config: &RunConfig, debug_trajectories: bool, out: &mut Outputs) -> Result<()> {
    let (params, table) = device_and_table(config, config.noise.sigma_microphi0)?;
    let prepared = prepare_initial_state(&table, config.propagation.initial_bias_offset)?;
    let ensemble = config.ensemble_config();
    let result = run_ensemble(&table, &ensemble, &prepared.state)?;
    let header = out.header.csv();
    out.file("ensemble.csv", |w| write_ensemble_csv(&result, &header, w))?;

    if debug_trajectories {
        for index in 0..ensemble.n_trajectories {
            let seed = |channel| trajectory_seed(ensemble.master_seed, index as u64, channel);
            let trace = |sigma, cutoff, channel| {
                generate_noise_trace(&NoiseSpec {
                    sigma,
                    cutoff,
                    sample_interval: ensemble.propagation.dt,
                    n_steps: ensemble.propagation.n_steps,
                    seed: seed(channel),
                    channel,
                })
                .map(|t| t.samples)
            };
            let flux = trace(ensemble.flux_noise.sigma, ensemble.flux_noise.cutoff, NoiseChannel::FluxBias)?;
            let ic = match ensemble.critical_current_noise {
                Some(n) => Some(trace(n.sigma, n.cutoff, NoiseChannel::CriticalCurrent)?),
                None => None,
            };
            let t = run_trajectory(&table, &ensemble.propagation, &prepared.state, &flux, ic.as_deref())?;
            out.file(&format!("trajectories/trajectory_{index:04}.csv"), |w| {
                write_trajectory_csv(&t, &header, w)
            })?;
        }
    }

    let (fit, fit_error) = match fit_damped_cosine(&result.times, &result.p_mean, config.sweep.phase_mode) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let coherence: Vec<f64> = result.rho.iter().map(|r| r[0][1].norm()).collect();
    let EnsembleResult {
        leakage_max,
        clamped_steps,
        total_steps,
        flux_seeds,
        critical_current_seeds,
        ..
    } = result;
    out.json(
        "evolve_summary.json",
        EvolveSummary {
            device: DeviceSummary::new(&params),
            splitting_rad_per_ns: doublet(&table),
            initial_state: InitialSummary::new(config, &prepared),
            n_trajectories: ensemble.n_trajectories,
            sigma_microphi0: ensemble.flux_noise.sigma,
            cutoff_rad_per_ns: ensemble.flux_noise.cutoff,
            fit,
            fit_error,
            coherence_decay_rate: fit_exponential_decay(&result.times, &coherence).ok(),
            leakage_max,
            clamped_steps,
            total_steps,
            flux_seeds,
            critical_current_seeds,
        },
    )
}

#[derive(Serialize)]
struct SweepSummary {
    device: DeviceSummary,
    splitting_rad_per_ns: f64,
    initial_state: InitialSummary,
    n_trajectories: usize,
    #[serde(flatten)]
    result: SweepResult,
}

fn progress(label: &'static str) -> impl FnMut(&SweepRow, &EnsembleResult) {
    move |row, _| match &row.fit {
        Some(f) => eprintln!(
            "{label} {}: D_phi = {:.6} +/- {:.6} 1/ns, omega0 = {:.6} rad/ns",
            row.value, f.decay_rate, f.decay_rate_ci, f.omega
        ),
        None => eprintln!(
            "{label} {}: fit failed ({})",
            row.value,
            row.fit_error.as_deref().unwrap_or("unknown")
        ),
    }
}

fn sweep(config: &RunConfig, mode: SweepMode, out: &mut Outputs) -> Result<()> {
    let s = &config.sweep;
    let max_sigma = match mode {
        SweepMode::Variance => s.sigmas_microphi0.iter().copied().fold(0.0, f64::max),
        SweepMode::Bandwidth => {
            let sigma = config.noise.sigma_microphi0;
            match s.hold {
                BandwidthHold::Sigma => sigma,
                BandwidthHold::SpectralDensity { reference_cutoff } => {
                    let params = config.device.resolve(&config.grid)?;
                    let split = tunnel_splitting(&params.with_flux_bias(0.5), &config.grid)?;
                    let top = s.bandwidth_cutoffs(split).into_iter().fold(0.0, f64::max);
                    sigma * (top / reference_cutoff).max(1.0).sqrt()
                }
            }
        }
    };
    let (params, table) = device_and_table(config, max_sigma)?;
    let prepared = prepare_initial_state(&table, config.propagation.initial_bias_offset)?;
    let splitting = doublet(&table);
    let base = SweepBase {
        table: &table,
        initial: &prepared.state,
        ensemble: config.ensemble_config(),
        splitting,
        phase_mode: s.phase_mode,
    };
    let (name, result) = match mode {
        SweepMode::Variance => ("variance", variance_sweep(&base, &s.sigmas_microphi0, progress("sigma"))?),
        SweepMode::Bandwidth => (
            "bandwidth",
            bandwidth_sweep(
                &base,
                &s.bandwidth_cutoffs(splitting),
                config.noise.sigma_microphi0,
                s.hold,
                progress("cutoff"),
            )?,
        ),
    };
    let header = out.header.csv();
    out.file(&format!("sweep_{name}.csv"), |w| write_sweep_csv(&result, &header, w))?;
    out.json(
        &format!("sweep_{name}.json"),
        SweepSummary {
            device: DeviceSummary::new(&params),
            splitting_rad_per_ns: splitting,
            initial_state: InitialSummary::new(config, &prepared),
            n_trajectories: config.ensemble.n_trajectories,
            result,
        },
    )
}

#[derive(Serialize)]
struct CouplingSummary {
    note: &'static str,
    #[serde(flatten)]
    report: CouplingReport,
}

pub const COUPLING_NOTE: &str =
    "order-of-magnitude estimate: the flux of a single pulse is treated as the noise standard deviation";

fn coupling(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let c = &config.coupling;
    let report = coupling_report(
        c.mutual_inductance_fh,
        c.pulse_current_ua,
        c.pulse_duration_ps,
        c.target_coherence_ns,
        &c.power_law(),
    )?;
    println!("{}", coupling_text(&report));
    out.json(
        "coupling.json",
        CouplingSummary {
            note: COUPLING_NOTE,
            report,
        },
    )
}

pub fn coupling_text(r: &CouplingReport) -> String {
    format!(
        "pulse flux: M = {} fH x I = {} uA -> {:.2} uPhi0 (pulse {} ps)\n\
         power law: D_phi = {:.4e} * sigma^{:.3} 1/ns\n\
         predicted D_phi at that flux: {:.4e} 1/ns (1/D_phi = {:.4e} ns)\n\
         target coherence {} ns -> sigma {:.3} uPhi0 -> M threshold {:.4} fH\n\
         {COUPLING_NOTE}",
        r.mutual_inductance_fh,
        r.pulse_current_ua,
        r.pulse_flux_microphi0,
        r.pulse_duration_ps,
        r.power_law.coefficient,
        r.power_law.exponent,
        r.predicted_rate,
        1.0 / r.predicted_rate,
        r.target_coherence_ns,
        r.threshold_sigma_microphi0,
        r.threshold_mutual_inductance_fh,
    )
}

#[derive(Serialize)]
struct TableSummary {
    device: DeviceSummary,
    cache_key: String,
    entries: usize,
    bias_half_range_microphi0: f64,
    bias_step_microphi0: f64,
    ic_half_range: f64,
    n_levels: usize,
    reference_levels: usize,
    reference_leakage: f64,
}

fn dump_table(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let (params, table) = device_and_table(config, config.noise.sigma_microphi0)?;
    out.file("table.bin", |w| table.write_binary(w))?;
    let header = out.header.csv();
    out.file("table_entries.csv", |w| {
        w.write_all(header.as_bytes())?;
        write!(w, "bias_offset_microphi0,ic_scale")?;
        for n in 0..table.n_levels() {
            write!(w, ",E_{n}")?;
        }
        writeln!(w)?;
        for entry in table.entries() {
            write!(w, "{},{}", (entry.bias - 0.5) / MICRO, entry.ic_scale)?;
            for e in &entry.energies {
                write!(w, ",{e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    out.json(
        "table_summary.json",
        TableSummary {
            device: DeviceSummary::new(&params),
            cache_key: BasisTable::cache_key(&table.params, &table.grid, &table.spec),
            entries: table.len(),
            bias_half_range_microphi0: table.bias_half_range() / MICRO,
            bias_step_microphi0: table.spec.bias_step / MICRO,
            ic_half_range: table.ic_half_range(),
            n_levels: table.n_levels(),
            reference_levels: table.spec.reference_levels,
            reference_leakage: table.reference_leakage,
        },
    )
}

/// Paths of regular files under `dir`, sorted, relative to `dir`.
pub fn list_outputs(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, acc)?;
            } else {
                acc.push(path.strip_prefix(root).unwrap_or(&path).to_path_buf());
            }
        }
        Ok(())
    }
    let mut acc = Vec::new();
    walk(dir, dir, &mut acc).map_err(Error::from)?;
    acc.sort();
    Ok(acc)
}
