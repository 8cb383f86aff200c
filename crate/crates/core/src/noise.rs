//! Band-limited Gaussian noise synthesis and Welch spectral estimation.
//!
//! A trace is built in the frequency domain: independent complex Gaussian
//! coefficients on every in-band bin (DC excluded), Hermitian mirror, inverse
//! FFT. The synthesis length is at least [`MIN_SYNTHESIS_LEN`] so short
//! traces still resolve low cutoffs; the trace is the leading `n_steps`
//! samples of that periodic realization.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SYNTHESIS_LEN: usize = 8192;
pub const MIN_PSD_LEN: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseChannel {
    /// σ_z: flux-bias fluctuations, samples in µΦ₀.
    FluxBias,
    /// σ_x: fractional critical-current fluctuations.
    CriticalCurrent,
}

impl NoiseChannel {
    pub fn id(self) -> u64 {
        match self {
            NoiseChannel::FluxBias => 0,
            NoiseChannel::CriticalCurrent => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation: µΦ₀ on the flux channel, a fraction on the I_c channel.
    pub sigma: f64,
    /// Cutoff ω_c in rad/ns.
    pub cutoff: f64,
    /// Δt in ns.
    pub sample_interval: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub channel: NoiseChannel,
}

impl NoiseSpec {
    pub fn nyquist(&self) -> f64 {
        PI / self.sample_interval
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidNoiseSpec(format!("sigma must be >= 0 (got {})", self.sigma)));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(Error::InvalidNoiseSpec(format!(
                "sample interval must be positive (got {})",
                self.sample_interval
            )));
        }
        if self.n_steps < 2 {
            return Err(Error::InvalidNoiseSpec(format!("n_steps must be >= 2 (got {})", self.n_steps)));
        }
        let nyquist = self.nyquist();
        if !(self.cutoff > 0.0) {
            return Err(Error::InvalidNoiseSpec(format!("cutoff must be positive (got {})", self.cutoff)));
        }
        if self.cutoff > nyquist * (1.0 + 1e-12) {
            return Err(Error::NyquistViolation {
                cutoff: self.cutoff,
                nyquist,
            });
        }
        Ok(())
    }

    pub fn synthesis_len(&self) -> usize {
        self.n_steps.max(MIN_SYNTHESIS_LEN)
    }
}

/// Relative in-band power spectral density.
pub trait SpectralShape: Sync {
    fn weight(&self, omega: f64, cutoff: f64) -> f64;
}

/// White noise up to the cutoff.
#[derive(Debug, Clone, Copy, Default)]
pub struct Flat;

impl SpectralShape for Flat {
    fn weight(&self, _omega: f64, _cutoff: f64) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrace {
    pub samples: Vec<f64>,
    pub spec: NoiseSpec,
}

impl NoiseTrace {
    pub fn sample_variance(&self) -> f64 {
        sample_variance(&self.samples)
    }
}

pub fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn generate_noise_trace(spec: &NoiseSpec) -> Result<NoiseTrace> {
    generate_with_shape(spec, &Flat)
}

/// Synthesizes a trace whose PSD follows `shape` on `(0, ω_c]` and vanishes
/// above, scaled so the process variance is exactly `sigma²`.
///
/// Coefficients are drawn in ascending frequency order, so two specs that
/// differ only in cutoff share their low-frequency content.
pub fn generate_with_shape(spec: &NoiseSpec, shape: &dyn SpectralShape) -> Result<NoiseTrace> {
    spec.validate()?;
    if spec.sigma == 0.0 {
        return Ok(NoiseTrace {
            samples: vec![0.0; spec.n_steps],
            spec: *spec,
        });
    }
    let m = spec.synthesis_len();
    let bin = 2.0 * PI / (m as f64 * spec.sample_interval);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); m];
    let mut power = 0.0;
    let half = m / 2;
    for k in 1..=half {
        let omega = k as f64 * bin;
        if omega > spec.cutoff * (1.0 + 1e-12) {
            break;
        }
        let w = shape.weight(omega, spec.cutoff);
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidNoiseSpec(format!("spectral weight {w} at {omega} rad/ns")));
        }
        let re: f64 = StandardNormal.sample(&mut rng);
        if 2 * k == m {
            spectrum[k] = Complex64::new(re * (2.0 * w).sqrt(), 0.0);
            power += 2.0 * w;
        } else {
            let im: f64 = StandardNormal.sample(&mut rng);
            let c = Complex64::new(re, im) * w.sqrt();
            spectrum[k] = c;
            spectrum[m - k] = c.conj();
            power += 4.0 * w;
        }
    }
    if power == 0.0 {
        return Err(Error::InvalidNoiseSpec(format!(
            "cutoff {} rad/ns is below the first frequency bin {bin} rad/ns",
            spec.cutoff
        )));
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut spectrum);
    // Unit-variance process: var = power / m², then scale to sigma.
    let unit = 1.0 / power.sqrt();
    let samples = spectrum[..spec.n_steps]
        .iter()
        .map(|c| spec.sigma * (c.re * unit))
        .collect();
    Ok(NoiseTrace { samples, spec: *spec })
}

/// One-sided power spectral density on ω ≥ 0.
///
/// Units are (sample units)² per rad/ns; `Σ density · bin_width` equals the
/// window-weighted mean power of the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub omega: Vec<f64>,
    pub density: Vec<f64>,
    pub bin_width: f64,
    pub segments: usize,
}

impl PsdEstimate {
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width
    }
}

/// Welch estimate: Hann-windowed segments with 50% overlap.
pub fn estimate_psd(trace: &NoiseTrace) -> Result<PsdEstimate> {
    let x = &trace.samples;
    if x.len() < MIN_PSD_LEN {
        return Err(Error::TraceTooShort {
            len: x.len(),
            min: MIN_PSD_LEN,
        });
    }
    let seg = (x.len() / 4).next_power_of_two().clamp(256, 4096).min(x.len());
    let hop = seg / 2;
    let window: Vec<f64> = (0..seg)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / seg as f64).cos())
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let n_bins = seg / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut segments = 0;
    let mut start = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); seg];
    while start + seg <= x.len() {
        for (b, (v, w)) in buf.iter_mut().zip(x[start..start + seg].iter().zip(&window)) {
            *b = Complex64::new(v * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let dt = trace.spec.sample_interval;
    let bin_width = 2.0 * PI / (seg as f64 * dt);
    let norm = 1.0 / (segments as f64 * seg as f64 * window_power * bin_width);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let fold = if k == 0 || 2 * k == seg { 1.0 } else { 2.0 };
            fold * a * norm
        })
        .collect();
    Ok(PsdEstimate {
        omega: (0..n_bins).map(|k| k as f64 * bin_width).collect(),
        density,
        bin_width,
        segments,
    })
}

pub fn write_trace_csv(trace: &NoiseTrace, header: &str, mut out: impl Write) -> Result<()> {
    out.write_all(header.as_bytes())?;
    writeln!(out, "step,value")?;
    for (i, v) in trace.samples.iter().enumerate() {
        writeln!(out, "{i},{v:e}")?;
    }
    Ok(())
}

pub fn write_psd_csv(psd: &PsdEstimate, header: &str, mut out: impl Write) -> Result<()> {
    out.write_all(header.as_bytes())?;
    writeln!(out, "omega_rad_per_ns,density")?;
    for (w, s) in psd.omega.iter().zip(&psd.density) {
        writeln!(out, "{w:e},{s:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(sigma: f64, seed: u64) -> NoiseSpec {
        NoiseSpec {
            sigma,
            cutoff: 2.0 * PI * 4.0,
            sample_interval: 0.1,
            n_steps: 4096,
            seed,
            channel: NoiseChannel::FluxBias,
        }
    }

    #[test]
    fn zero_sigma_gives_zero_trace() {
        let t = generate_noise_trace(&spec(0.0, 3)).unwrap();
        assert!(t.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_cutoff_above_nyquist() {
        let mut s = spec(1.0, 1);
        s.cutoff = 40.0;
        assert!(matches!(generate_noise_trace(&s), Err(Error::NyquistViolation { .. })));
        s.cutoff = PI / 0.1;
        assert!(generate_noise_trace(&s).is_ok());
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut s = spec(-1.0, 1);
        assert!(generate_noise_trace(&s).is_err());
        s.sigma = 1.0;
        s.n_steps = 1;
        assert!(generate_noise_trace(&s).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_noise_trace(&spec(10.0, 42)).unwrap();
        let b = generate_noise_trace(&spec(10.0, 42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_are_uncorrelated() {
        let n = 8192;
        for seed in 0..20u64 {
            let mut s1 = spec(1.0, seed);
            s1.n_steps = n;
            let mut s2 = s1;
            s2.seed = seed + 1000;
            let a = generate_noise_trace(&s1).unwrap().samples;
            let b = generate_noise_trace(&s2).unwrap().samples;
            let r = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
                / (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|y| y * y).sum::<f64>()).sqrt();
            assert!(r.abs() < 4.0 / (n as f64).sqrt(), "seed {seed}: r = {r}");
        }
    }

    #[test]
    fn welch_integrates_to_variance() {
        let mut s = spec(7.0, 9);
        s.n_steps = 100_000;
        let t = generate_noise_trace(&s).unwrap();
        let psd = estimate_psd(&t).unwrap();
        let var = t.samples.iter().map(|v| v * v).sum::<f64>() / t.samples.len() as f64;
        assert!((psd.integral() / var - 1.0).abs() < 0.02, "{} vs {var}", psd.integral());
    }

    #[test]
    fn welch_of_zero_trace_is_zero() {
        let t = generate_noise_trace(&spec(0.0, 1)).unwrap();
        let psd = estimate_psd(&t).unwrap();
        assert!(psd.density.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn welch_rejects_short_trace() {
        let mut s = spec(1.0, 1);
        s.n_steps = 500;
        let t = generate_noise_trace(&s).unwrap();
        assert!(matches!(estimate_psd(&t), Err(Error::TraceTooShort { .. })));
    }

    #[test]
    fn welch_flat_in_band() {
        // Each Welch bin averages `segments` roughly independent chi-square(2)
        // periodogram values, so its relative scatter is about 1/sqrt(K).
        let mut s = spec(1.0, 5);
        s.n_steps = 200_000;
        let t = generate_noise_trace(&s).unwrap();
        let psd = estimate_psd(&t).unwrap();
        let level = 1.0 / s.cutoff;
        let bound = 5.0 / (psd.segments as f64).sqrt();
        let guard = 4.0 * psd.bin_width;
        for (w, d) in psd.omega.iter().zip(&psd.density) {
            if *w > guard && *w < s.cutoff - guard {
                assert!((d / level - 1.0).abs() < bound, "omega {w}: {d} vs {level}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scales_linearly_with_sigma(k in 0.01f64..100.0, seed in any::<u64>()) {
            let base = generate_noise_trace(&spec(1.5, seed)).unwrap();
            let scaled = generate_noise_trace(&spec(1.5 * k, seed)).unwrap();
            for (a, b) in base.samples.iter().zip(&scaled.samples) {
                prop_assert!((k * a - b).abs() <= 1e-13 * (k * a).abs().max(1e-300) + 1e-300);
            }
        }
    }
}
