//! Mutual-inductance arithmetic between an SFQ pulse source and the qubit
//! loop.
//!
//! The threshold inversion treats the flux of a single pulse as the noise
//! standard deviation σ_φ. The result is an order-of-magnitude estimate,
//! not a spectral model of a pulse train.

use serde::{Deserialize, Serialize};

use crate::analysis::PowerLaw;
use crate::device::{FEMTO, FLUX_QUANTUM, MICRO};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    /// H.
    pub mutual_inductance: f64,
    /// A.
    pub pulse_peak_current: f64,
    /// ps; not used in any formula.
    pub pulse_duration: f64,
}

impl CouplingParams {
    pub fn from_practical(mutual_inductance_fh: f64, pulse_current_ua: f64, pulse_duration_ps: f64) -> Self {
        Self {
            mutual_inductance: mutual_inductance_fh * FEMTO,
            pulse_peak_current: pulse_current_ua * MICRO,
            pulse_duration: pulse_duration_ps,
        }
    }

    pub fn validate(self) -> Result<Self> {
        for (name, value) in [
            ("mutual_inductance", self.mutual_inductance),
            ("pulse_peak_current", self.pulse_peak_current),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative (got {value})")));
            }
        }
        Ok(self)
    }
}

/// `M·I/Φ₀` in µΦ₀.
pub fn pulse_flux(coupling: &CouplingParams) -> f64 {
    coupling.mutual_inductance * coupling.pulse_peak_current / FLUX_QUANTUM / MICRO
}

/// Largest M (in fH) for which `law(M·I/Φ₀) ≤ target_rate` (1/ns), with the
/// pulse current in µA.
pub fn mutual_inductance_threshold(target_rate: f64, pulse_current_ua: f64, law: Option<&PowerLaw>) -> Result<f64> {
    let law = law.ok_or(Error::NoFitAvailable)?;
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::Config(format!(
            "target dephasing rate must be positive and finite (got {target_rate}); no finite threshold exists"
        )));
    }
    if !(pulse_current_ua > 0.0 && pulse_current_ua.is_finite()) {
        return Err(Error::NonPositiveParameter {
            name: "pulse_current",
            value: pulse_current_ua,
        });
    }
    if !(law.coefficient > 0.0 && law.exponent > 0.0) {
        return Err(Error::Config(format!(
            "power law needs positive coefficient and exponent (got {}, {})",
            law.coefficient, law.exponent
        )));
    }
    let sigma = law.invert(target_rate);
    Ok(sigma * MICRO * FLUX_QUANTUM / (pulse_current_ua * MICRO) / FEMTO)
}

/// Forward and inverse arithmetic gathered for a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingReport {
    pub mutual_inductance_fh: f64,
    pub pulse_current_ua: f64,
    pub pulse_duration_ps: f64,
    pub pulse_flux_microphi0: f64,
    pub target_coherence_ns: f64,
    pub power_law: PowerLaw,
    /// σ_φ at the target rate, µΦ₀.
    pub threshold_sigma_microphi0: f64,
    pub threshold_mutual_inductance_fh: f64,
    /// Rate predicted for the given M if its pulse flux were σ_φ, 1/ns.
    pub predicted_rate: f64,
}

pub fn coupling_report(
    mutual_inductance_fh: f64,
    pulse_current_ua: f64,
    pulse_duration_ps: f64,
    target_coherence_ns: f64,
    law: &PowerLaw,
) -> Result<CouplingReport> {
    let params = CouplingParams::from_practical(mutual_inductance_fh, pulse_current_ua, pulse_duration_ps).validate()?;
    if !(target_coherence_ns > 0.0) {
        return Err(Error::NonPositiveParameter {
            name: "target_coherence_ns",
            value: target_coherence_ns,
        });
    }
    let flux = pulse_flux(&params);
    let rate = 1.0 / target_coherence_ns;
    Ok(CouplingReport {
        mutual_inductance_fh,
        pulse_current_ua,
        pulse_duration_ps,
        pulse_flux_microphi0: flux,
        target_coherence_ns,
        power_law: *law,
        threshold_sigma_microphi0: law.invert(rate),
        threshold_mutual_inductance_fh: mutual_inductance_threshold(rate, pulse_current_ua, Some(law))?,
        predicted_rate: law.evaluate(flux),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic() {
        // 10 fH · 150 µA = 1.5e-18 Wb.
        let flux = pulse_flux(&CouplingParams::from_practical(10.0, 150.0, 3.0));
        assert!((flux - 1.5e-18 / 2.067833848e-15 * 1e6).abs() < 1e-9);
        assert!((flux - 725.4).abs() < 0.05);
        let small = pulse_flux(&CouplingParams::from_practical(0.1, 150.0, 3.0));
        assert!((small - 7.254).abs() < 1e-3);
        assert_eq!(pulse_flux(&CouplingParams::from_practical(0.0, 150.0, 3.0)), 0.0);
    }

    #[test]
    fn threshold_for_twenty_nanoseconds() {
        let law = PowerLaw::reference();
        let m = mutual_inductance_threshold(1.0 / 20.0, 150.0, Some(&law)).unwrap();
        // σ = √(0.05/3.63e-4) = 11.736 µΦ₀; M = σΦ₀/I.
        let sigma = (0.05f64 / 3.63e-4).sqrt();
        let expected = sigma * 1e-6 * 2.067833848e-15 / 150e-6 / 1e-15;
        assert!((m - expected).abs() < 1e-12 * expected);
        assert!((m - 0.1618).abs() < 5e-4);
    }

    #[test]
    fn threshold_errors() {
        let law = PowerLaw::reference();
        assert!(matches!(
            mutual_inductance_threshold(0.05, 150.0, None),
            Err(Error::NoFitAvailable)
        ));
        assert!(mutual_inductance_threshold(0.0, 150.0, Some(&law)).is_err());
        assert!(mutual_inductance_threshold(0.05, 0.0, Some(&law)).is_err());
    }

    #[test]
    fn doubling_current_halves_threshold() {
        let law = PowerLaw::reference();
        let a = mutual_inductance_threshold(0.05, 150.0, Some(&law)).unwrap();
        let b = mutual_inductance_threshold(0.05, 300.0, Some(&law)).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-12 * a);
    }

    proptest::proptest! {
        #[test]
        fn pulse_flux_is_bilinear(m in 0.0f64..100.0, i in 0.0f64..1000.0, s in 0.0f64..10.0) {
            let base = pulse_flux(&CouplingParams::from_practical(m, i, 1.0));
            let scaled_m = pulse_flux(&CouplingParams::from_practical(s * m, i, 1.0));
            let scaled_i = pulse_flux(&CouplingParams::from_practical(m, s * i, 1.0));
            proptest::prop_assert!((scaled_m - s * base).abs() <= 1e-12 * (1.0 + s * base));
            proptest::prop_assert!((scaled_i - s * base).abs() <= 1e-12 * (1.0 + s * base));
        }

        #[test]
        fn inversion_round_trips(rate in 1e-4f64..1.0, current in 1.0f64..1000.0, k in 1e-5f64..1e-2, p in 0.5f64..3.0) {
            let law = PowerLaw { coefficient: k, exponent: p, coefficient_se: 0.0, exponent_se: 0.0, r_squared: 1.0 };
            let m = mutual_inductance_threshold(rate, current, Some(&law)).unwrap();
            let flux = pulse_flux(&CouplingParams::from_practical(m, current, 1.0));
            let back = law.evaluate(flux);
            proptest::prop_assert!((back - rate).abs() <= 1e-9 * rate);
        }
    }
}
