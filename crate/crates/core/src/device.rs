//! rf-SQUID device model: physical constants, parameters, the double-well
//! potential and two-state diagnostics.
//!
//! Internal units: time in ns, energies as angular frequencies `E/ħ` in
//! rad/ns, flux as a dimensionless fraction of the flux quantum. Device
//! parameters themselves are kept in SI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Superconducting flux quantum h/2e in Wb.
pub const FLUX_QUANTUM: f64 = 2.067_833_848e-15;
/// Reduced Planck constant in J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Seconds per nanosecond; multiplies rad/s into rad/ns.
const NS: f64 = 1e-9;

pub const PICO: f64 = 1e-12;
pub const FEMTO: f64 = 1e-15;
pub const MICRO: f64 = 1e-6;

/// Physical parameters of a single-junction rf-SQUID.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Junction capacitance in F.
    pub capacitance: f64,
    /// Loop inductance in H.
    pub inductance: f64,
    /// Junction critical current in A.
    pub critical_current: f64,
    /// External flux bias in units of the flux quantum.
    pub flux_bias: f64,
    /// Permits `beta_L <= 1` (single-well, harmonic limit at `I_c = 0`).
    #[serde(default)]
    pub harmonic_oracle: bool,
}

/// Hamiltonian energy scales, all in rad/ns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyScales {
    /// ħ/(2CΦ₀²): prefactor of `-d²/dφ²`.
    pub kinetic: f64,
    /// Φ₀²/(2Lħ): prefactor of `(φ - φ_x)²`.
    pub inductive: f64,
    /// I_cΦ₀/(2πħ): prefactor of `-cos(2πφ)`.
    pub josephson: f64,
}

impl DeviceParams {
    /// Builds parameters from laboratory units: pH, fF, µA.
    pub fn from_practical(inductance_ph: f64, capacitance_ff: f64, critical_current_ua: f64, flux_bias: f64) -> Self {
        Self {
            capacitance: capacitance_ff * FEMTO,
            inductance: inductance_ph * PICO,
            critical_current: critical_current_ua * MICRO,
            flux_bias,
            harmonic_oracle: false,
        }
    }

    /// Returns `(L in pH, C in fF, I_c in µA)`.
    pub fn to_practical(&self) -> (f64, f64, f64) {
        (
            self.inductance / PICO,
            self.capacitance / FEMTO,
            self.critical_current / MICRO,
        )
    }

    pub fn energy_scales(&self) -> EnergyScales {
        EnergyScales {
            kinetic: HBAR / (2.0 * self.capacitance * FLUX_QUANTUM * FLUX_QUANTUM) * NS,
            inductive: FLUX_QUANTUM * FLUX_QUANTUM / (2.0 * self.inductance * HBAR) * NS,
            josephson: self.critical_current * FLUX_QUANTUM / (2.0 * std::f64::consts::PI * HBAR) * NS,
        }
    }

    /// Inverse of [`DeviceParams::energy_scales`].
    pub fn from_energy_scales(scales: EnergyScales, flux_bias: f64) -> Self {
        let phi0_sq = FLUX_QUANTUM * FLUX_QUANTUM;
        Self {
            capacitance: HBAR * NS / (2.0 * scales.kinetic * phi0_sq),
            inductance: phi0_sq * NS / (2.0 * scales.inductive * HBAR),
            critical_current: scales.josephson * 2.0 * std::f64::consts::PI * HBAR / (FLUX_QUANTUM * NS),
            flux_bias,
            harmonic_oracle: false,
        }
    }

    /// Screening parameter β_L = 2πLI_c/Φ₀.
    pub fn beta_l(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.inductance * self.critical_current / FLUX_QUANTUM
    }

    /// LC oscillation frequency 1/√(LC) in rad/ns.
    pub fn lc_frequency(&self) -> f64 {
        NS / (self.inductance * self.capacitance).sqrt()
    }

    pub fn with_flux_bias(&self, flux_bias: f64) -> Self {
        Self { flux_bias, ..*self }
    }

    pub fn with_critical_current(&self, critical_current: f64) -> Self {
        Self { critical_current, ..*self }
    }

    /// Rescales the Josephson term, as an effective-`I_c` fluctuation does.
    pub fn with_critical_current_scale(&self, scale: f64) -> Self {
        self.with_critical_current(self.critical_current * scale)
    }

    pub fn validate(self) -> Result<Self> {
        let checks = [
            ("capacitance", self.capacitance),
            ("inductance", self.inductance),
        ];
        for (name, value) in checks {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveParameter { name, value });
            }
        }
        if !(self.critical_current >= 0.0 && self.critical_current.is_finite()) {
            return Err(Error::NonPositiveParameter {
                name: "critical_current",
                value: self.critical_current,
            });
        }
        if !self.flux_bias.is_finite() {
            return Err(Error::Config(format!("flux_bias is not finite ({})", self.flux_bias)));
        }
        let beta = self.beta_l();
        if beta <= 1.0 && !self.harmonic_oracle {
            return Err(Error::NotDoubleWell { beta });
        }
        Ok(self)
    }

    /// U(φ)/ħ in rad/ns.
    pub fn potential_energy(&self, flux: f64) -> f64 {
        let s = self.energy_scales();
        let d = flux - self.flux_bias;
        s.inductive * d * d - s.josephson * (2.0 * std::f64::consts::PI * flux).cos()
    }

    /// dU/dφ divided by ħ, in rad/ns per Φ₀.
    pub fn potential_gradient(&self, flux: f64) -> f64 {
        let s = self.energy_scales();
        let tau = 2.0 * std::f64::consts::PI;
        2.0 * s.inductive * (flux - self.flux_bias) + s.josephson * tau * (tau * flux).sin()
    }
}

/// Stationary points of the double-well potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WellGeometry {
    pub left_min: f64,
    pub right_min: f64,
    pub barrier_top: f64,
    /// Barrier seen from the shallower well, rad/ns.
    pub barrier_height: f64,
    /// U(right_min) - U(left_min), rad/ns. Negative when the right well is deeper.
    pub depth_difference: f64,
    /// Circulating current Φ₀·(φ_R − φ_L)/(2L) in A.
    pub persistent_current: f64,
}

/// Locates both minima and the barrier top by bisection on dU/dφ.
///
/// The gradient is monotone on each branch: increasing outside the
/// inflection points `1/2 ± arccos(1/β)/2π`, decreasing between them.
pub fn well_geometry(params: &DeviceParams) -> Result<WellGeometry> {
    let beta = params.beta_l();
    if beta <= 1.0 {
        return Err(Error::NotDoubleWell { beta });
    }
    let half_gap = (1.0 / beta).acos() / (2.0 * std::f64::consts::PI);
    let inflect_lo = 0.5 - half_gap;
    let inflect_hi = 0.5 + half_gap;
    let grad = |x: f64| params.potential_gradient(x);

    let not_double = || Error::NotDoubleWell { beta };
    let barrier_top = bisect_root(grad, inflect_lo, inflect_hi).ok_or_else(not_double)?;
    let left_min = bisect_root(grad, inflect_hi - 1.0, inflect_lo).ok_or_else(not_double)?;
    let right_min = bisect_root(grad, inflect_hi, inflect_lo + 1.0).ok_or_else(not_double)?;

    let u_top = params.potential_energy(barrier_top);
    let u_left = params.potential_energy(left_min);
    let u_right = params.potential_energy(right_min);
    Ok(WellGeometry {
        left_min,
        right_min,
        barrier_top,
        barrier_height: u_top - u_left.max(u_right),
        depth_difference: u_right - u_left,
        persistent_current: FLUX_QUANTUM * (right_min - left_min) / (2.0 * params.inductance),
    })
}

/// Root of `f` on `[a, b]` by bisection to floating-point resolution.
/// Returns `None` without a sign change.
fn bisect_root(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Two-state reduction of the lowest doublet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoStateParams {
    /// Δ in rad/ns.
    pub tunnel_splitting: f64,
    /// ε in rad/ns; positive when the right well is deeper.
    pub asymmetry: f64,
}

/// Relative slack allowed when the biased splitting dips below the
/// degeneracy splitting through round-off.
const SPLITTING_SLACK: f64 = 1e-9;

/// Δ from the degeneracy-point doublet, ε from the doublet at `params.flux_bias`.
///
/// Both slices hold ascending eigenenergies (rad/ns) with at least two entries.
pub fn extract_two_state(params: &DeviceParams, at_degeneracy: &[f64], at_bias: &[f64]) -> Result<TwoStateParams> {
    if at_degeneracy.len() < 2 || at_bias.len() < 2 {
        return Err(Error::InvalidSpectrum("need the two lowest levels".into()));
    }
    let delta = at_degeneracy[1] - at_degeneracy[0];
    let split = at_bias[1] - at_bias[0];
    if !(delta > 0.0) {
        return Err(Error::InvalidSpectrum(format!("degeneracy splitting {delta} is not positive")));
    }
    if split < delta * (1.0 - SPLITTING_SLACK) {
        return Err(Error::InvalidSpectrum(format!(
            "splitting at bias ({split}) below degeneracy splitting ({delta})"
        )));
    }
    let magnitude = (split * split - delta * delta).max(0.0).sqrt();
    let sign = if params.flux_bias > 0.5 {
        1.0
    } else if params.flux_bias < 0.5 {
        -1.0
    } else {
        0.0
    };
    Ok(TwoStateParams {
        tunnel_splitting: delta,
        asymmetry: sign * magnitude,
    })
}
