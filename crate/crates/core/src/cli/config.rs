//! JSON run configuration. Every section is optional; missing keys take the
//! defaults below and the echo written with each run shows them all.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{BandwidthHold, PhaseMode, PowerLaw};
use crate::device::DeviceParams;
use crate::ensemble::{ChannelNoise, EnsembleConfig};
use crate::error::{Error, Result};
use crate::evolution::PropagationConfig;
use crate::spectrum::{calibrate_critical_current, default_reference_levels, FluxGrid, SplittingReading, TableSpec};

pub const DEFAULT_MASTER_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub device: DeviceSection,
    pub grid: FluxGrid,
    pub table: TableSection,
    pub propagation: PropagationConfig,
    pub noise: NoiseSection,
    pub ensemble: EnsembleSection,
    pub sweep: SweepSection,
    pub coupling: CouplingSection,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            device: DeviceSection::default(),
            grid: FluxGrid::default(),
            table: TableSection::default(),
            propagation: PropagationConfig::default(),
            noise: NoiseSection::default(),
            ensemble: EnsembleSection::default(),
            sweep: SweepSection::default(),
            coupling: CouplingSection::default(),
            master_seed: DEFAULT_MASTER_SEED,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Exactly one of `critical_current_ua` and `calibrate_to_ghz` may be set;
/// with neither, the device is calibrated to 0.28.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSection {
    pub inductance_ph: f64,
    pub capacitance_ff: f64,
    pub critical_current_ua: Option<f64>,
    /// Read according to `splitting_reading`.
    pub calibrate_to_ghz: Option<f64>,
    pub splitting_reading: SplittingReading,
    /// Only used by `spectrum`; the table is always centred on Φ₀/2.
    pub flux_bias: f64,
    pub harmonic_oracle: bool,
}

impl Default for DeviceSection {
    fn default() -> Self {
        Self {
            inductance_ph: 240.0,
            capacitance_ff: 100.0,
            critical_current_ua: None,
            calibrate_to_ghz: None,
            splitting_reading: SplittingReading::Cyclic,
            flux_bias: 0.5,
            harmonic_oracle: false,
        }
    }
}

pub const DEFAULT_CALIBRATION_GHZ: f64 = 0.28;
/// Starting I_c for calibration; the bracket is set by β_L, not by this value.
const CALIBRATION_SEED_UA: f64 = 1.6;

impl DeviceSection {
    /// Device at `flux_bias` with I_c either given or calibrated on `grid`.
    pub fn resolve(&self, grid: &FluxGrid) -> Result<DeviceParams> {
        let build = |ic_ua: f64| {
            let mut p = DeviceParams::from_practical(self.inductance_ph, self.capacitance_ff, ic_ua, self.flux_bias);
            p.harmonic_oracle = self.harmonic_oracle;
            p
        };
        let params = match (self.critical_current_ua, self.calibrate_to_ghz) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "device: set either critical_current_ua or calibrate_to_ghz, not both".into(),
                ))
            }
            (Some(ic), None) => build(ic),
            (None, target) => {
                if self.harmonic_oracle {
                    return Err(Error::Config(
                        "device: harmonic_oracle needs an explicit critical_current_ua".into(),
                    ));
                }
                let target = self
                    .splitting_reading
                    .target_rad_per_ns(target.unwrap_or(DEFAULT_CALIBRATION_GHZ));
                let seed = build(CALIBRATION_SEED_UA);
                seed.with_critical_current(calibrate_critical_current(&seed, grid, target)?)
            }
        };
        params.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSection {
    pub n_levels: usize,
    /// Defaults to `2·n_levels + 4`.
    pub reference_levels: Option<usize>,
    pub bias_step_microphi0: f64,
    /// Defaults to six times the largest flux σ the command uses (at least 1 µΦ₀).
    pub bias_half_range_microphi0: Option<f64>,
    /// Fractional; defaults to six times the critical-current σ, or 0 without that channel.
    pub ic_half_range: Option<f64>,
    pub ic_step: f64,
    /// Defaults to `<output_dir>/cache`; excluded from the config hash.
    pub cache_dir: Option<PathBuf>,
}

impl Default for TableSection {
    fn default() -> Self {
        Self {
            n_levels: 10,
            reference_levels: None,
            bias_step_microphi0: 0.1,
            bias_half_range_microphi0: None,
            ic_half_range: None,
            ic_step: 1e-4,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// Fraction of I_c.
    pub sigma: f64,
    pub cutoff_rad_per_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub sigma_microphi0: f64,
    pub cutoff_rad_per_ns: f64,
    pub critical_current: Option<ChannelSection>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            sigma_microphi0: 10.0,
            cutoff_rad_per_ns: 2.0 * PI * 4.0,
            critical_current: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub n_trajectories: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { n_trajectories: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub sigmas_microphi0: Vec<f64>,
    /// Sub-splitting cutoffs as multiples of the zero-noise ω₀.
    pub cutoff_ratios: Vec<f64>,
    /// Absolute cutoffs added to the bandwidth sweep.
    pub cutoffs_rad_per_ns: Vec<f64>,
    pub hold: BandwidthHold,
    pub phase_mode: PhaseMode,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sigmas_microphi0: vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 16.0],
            cutoff_ratios: vec![0.2, 0.5, 0.8],
            cutoffs_rad_per_ns: vec![2.0 * PI, 2.0 * PI * 2.0, 2.0 * PI * 4.0],
            hold: BandwidthHold::Sigma,
            phase_mode: PhaseMode::Fixed,
        }
    }
}

impl SweepSection {
    pub fn bandwidth_cutoffs(&self, splitting: f64) -> Vec<f64> {
        let mut all: Vec<f64> = self.cutoff_ratios.iter().map(|r| r * splitting).collect();
        all.extend(&self.cutoffs_rad_per_ns);
        all
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingSection {
    pub mutual_inductance_fh: f64,
    pub pulse_current_ua: f64,
    pub pulse_duration_ps: f64,
    pub target_coherence_ns: f64,
    /// k in 1/(ns·µΦ₀^p).
    pub coefficient: f64,
    pub exponent: f64,
}

impl Default for CouplingSection {
    fn default() -> Self {
        let law = PowerLaw::reference();
        Self {
            mutual_inductance_fh: 10.0,
            pulse_current_ua: 150.0,
            pulse_duration_ps: 3.0,
            target_coherence_ns: 20.0,
            coefficient: law.coefficient,
            exponent: law.exponent,
        }
    }
}

impl CouplingSection {
    pub fn power_law(&self) -> PowerLaw {
        PowerLaw {
            coefficient: self.coefficient,
            exponent: self.exponent,
            ..PowerLaw::reference()
        }
    }
}

impl RunConfig {
    /// Parses JSON; type and key errors carry the dotted path of the key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the echo with output locations cleared.
    pub fn hash(&self) -> String {
        let mut stripped = self.clone();
        stripped.output_dir = PathBuf::new();
        stripped.table.cache_dir = None;
        let digest = Sha256::digest(stripped.echo().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.table
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }

    /// Table covering six standard deviations of the largest flux σ in use.
    pub fn table_spec(&self, max_flux_sigma: f64) -> TableSpec {
        let t = &self.table;
        let bias_half_range = t
            .bias_half_range_microphi0
            .unwrap_or_else(|| (6.0 * max_flux_sigma).max(1.0));
        let ic_half_range = t.ic_half_range.unwrap_or_else(|| {
            self.noise
                .critical_current
                .map_or(0.0, |c| (6.0 * c.sigma).max(t.ic_step))
        });
        TableSpec {
            bias_half_range: bias_half_range * 1e-6,
            bias_step: t.bias_step_microphi0 * 1e-6,
            n_levels: t.n_levels,
            reference_levels: t.reference_levels.unwrap_or_else(|| default_reference_levels(t.n_levels)),
            ic_half_range,
            ic_step: t.ic_step,
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            n_trajectories: self.ensemble.n_trajectories,
            master_seed: self.master_seed,
            propagation: self.propagation,
            flux_noise: ChannelNoise {
                sigma: self.noise.sigma_microphi0,
                cutoff: self.noise.cutoff_rad_per_ns,
            },
            critical_current_noise: self.noise.critical_current.map(|c| ChannelNoise {
                sigma: c.sigma,
                cutoff: c.cutoff_rad_per_ns,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips_with_defaults_materialized() {
        let config = RunConfig::from_json("{}").unwrap();
        assert_eq!(config, RunConfig::default());
        let echo = config.echo();
        assert!(echo.contains("\"n_trajectories\": 50"));
        assert!(echo.contains("\"dt\": 0.1"));
        assert_eq!(RunConfig::from_json(&echo).unwrap(), config);
    }

    #[test]
    fn hash_ignores_output_locations_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        b.table.cache_dir = Some(PathBuf::from("cache"));
        assert_eq!(a.hash(), b.hash());
        b.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn table_spec_covers_six_sigma() {
        let config = RunConfig::default();
        assert_eq!(config.table_spec(16.0), TableSpec::for_flux_sigma(16.0, 10));
        assert_eq!(config.table_spec(0.0).bias_half_range, 1e-6);
        let mut ic = config.clone();
        ic.noise.critical_current = Some(ChannelSection {
            sigma: 1e-3,
            cutoff_rad_per_ns: 1.0,
        });
        assert!((ic.table_spec(10.0).ic_half_range - 6e-3).abs() < 1e-15);
    }

    #[test]
    fn explicit_and_calibrated_current_conflict() {
        let config = RunConfig::from_json(r#"{"device": {"critical_current_ua": 1.6, "calibrate_to_ghz": 0.3}}"#).unwrap();
        assert!(matches!(config.device.resolve(&FluxGrid::default()), Err(Error::Config(_))));
    }
}
