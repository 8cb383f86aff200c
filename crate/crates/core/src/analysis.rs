//! Damped-cosine fits of ensemble traces, power-law fits, and the variance
//! and bandwidth sweeps built on them.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::ensemble::{run_ensemble, ChannelNoise, EnsembleConfig, EnsembleResult};
use crate::error::{Error, Result};
use crate::evolution::QuantumState;
use crate::spectrum::BasisTable;

const MAX_ITERATIONS: usize = 500;
const MIN_PERIODS: f64 = 3.0;

/// Fitted `A·exp(−D t)·cos(ω t + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// D_φ in 1/ns, constrained ≥ 0.
    pub decay_rate: f64,
    /// ω₀ in rad/ns.
    pub omega: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub residual_rms: f64,
    /// One-standard-error half-widths from the linearized covariance.
    pub decay_rate_ci: f64,
    pub omega_ci: f64,
    pub amplitude_ci: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Starting point of a fit; `phase` is only used when the phase is free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStart {
    pub decay_rate: f64,
    pub omega: f64,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// Phase pinned at π.
    #[default]
    Fixed,
    /// Phase fitted as a fourth parameter (diagnostic).
    Free,
}

/// Least-squares outcome in a generic parameter vector.
struct Solution {
    params: Vec<f64>,
    rss: f64,
    jtj: DMatrix<f64>,
    converged: bool,
    iterations: usize,
}

/// Levenberg-Marquardt with multiplicative damping. `model` fills the
/// gradient and returns the model value at `t`. Parameters with a lower
/// bound are clamped after every step.
fn levenberg_marquardt(
    t: &[f64],
    y: &[f64],
    start: &[f64],
    lower: &[Option<f64>],
    model: &dyn Fn(&[f64], f64, &mut [f64]) -> f64,
) -> Solution {
    let m = start.len();
    let mut p = start.to_vec();
    let mut grad = vec![0.0; m];
    let evaluate = |p: &[f64], grad: &mut [f64]| -> (DMatrix<f64>, DVector<f64>, f64) {
        let mut jtj = DMatrix::zeros(m, m);
        let mut jtr = DVector::zeros(m);
        let mut rss = 0.0;
        for (&ti, &yi) in t.iter().zip(y) {
            let r = yi - model(p, ti, grad);
            rss += r * r;
            for a in 0..m {
                jtr[a] += grad[a] * r;
                for b in 0..=a {
                    jtj[(a, b)] += grad[a] * grad[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                jtj[(b, a)] = jtj[(a, b)];
            }
        }
        (jtj, jtr, rss)
    };
    let (mut jtj, mut jtr, mut rss) = evaluate(&p, &mut grad);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut a = jtj.clone();
        for k in 0..m {
            a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
        }
        let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
            continue;
        };
        let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
        for (x, lo) in trial.iter_mut().zip(lower) {
            if let Some(lo) = lo {
                *x = x.max(*lo);
            }
        }
        let (tj, tr, trss) = evaluate(&trial, &mut grad);
        if trss.is_finite() && trss <= rss {
            let shift = trial
                .iter()
                .zip(&p)
                .map(|(a, b)| (a - b).abs() / (b.abs() + 1e-12))
                .fold(0.0, f64::max);
            let gain = rss - trss;
            p = trial;
            jtj = tj;
            jtr = tr;
            let previous = rss;
            rss = trss;
            lambda = (lambda / 3.0).max(1e-15);
            if shift < 1e-12 || gain <= 1e-15 * previous || rss == 0.0 {
                converged = true;
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e16 {
                // No descent direction left: at a (possibly bound) minimum.
                converged = true;
                break;
            }
        }
    }
    Solution {
        params: p,
        rss,
        jtj,
        converged,
        iterations,
    }
}

fn damped_cosine(phase: Option<f64>) -> impl Fn(&[f64], f64, &mut [f64]) -> f64 {
    move |p: &[f64], t: f64, grad: &mut [f64]| {
        let (d, w, a) = (p[0], p[1], p[2]);
        let phi = phase.unwrap_or_else(|| p[3]);
        let env = (-d * t).exp();
        let (s, c) = (w * t + phi).sin_cos();
        let value = a * env * c;
        grad[0] = -t * value;
        grad[1] = -a * env * t * s;
        grad[2] = env * c;
        if phase.is_none() {
            grad[3] = -a * env * s;
        }
        value
    }
}

/// Data-driven start: ω from the spectral peak, D from the log-envelope
/// slope, A from the first extremum.
pub fn initial_guess(t: &[f64], y: &[f64]) -> Result<FitStart> {
    let n = y.len();
    if n < 8 || t.len() != n {
        return Err(Error::InsufficientPeriods { periods: 0.0 });
    }
    let dt = t[1] - t[0];
    let duration = t[n - 1] - t[0];
    let mean = y.iter().sum::<f64>() / n as f64;
    let m = (16 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = (0..m)
        .map(|k| Complex64::new(if k < n { y[k] - mean } else { 0.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let mag: Vec<f64> = buf[..m / 2].iter().map(|c| c.norm()).collect();
    let peak = (1..m / 2 - 1)
        .max_by(|&a, &b| mag[a].total_cmp(&mag[b]))
        .unwrap_or(1);
    let (l, c, r) = (mag[peak - 1], mag[peak], mag[peak + 1]);
    let denom = l - 2.0 * c + r;
    let offset = if denom != 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
    let omega = 2.0 * PI * (peak as f64 + offset) / (m as f64 * dt);
    let periods = omega * duration / (2.0 * PI);
    if !(periods >= MIN_PERIODS) {
        return Err(Error::InsufficientPeriods { periods });
    }

    // Largest |y| in each half-period window.
    let half = PI / omega;
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    let mut k = 0;
    while k < n {
        let end_t = t[k] + half;
        let mut best = (t[k], y[k].abs());
        while k < n && t[k] < end_t {
            if y[k].abs() > best.1 {
                best = (t[k], y[k].abs());
            }
            k += 1;
        }
        if best.1 > 1e-12 {
            peaks.push(best);
        }
    }
    let decay_rate = if peaks.len() >= 2 {
        let xs: Vec<f64> = peaks.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = peaks.iter().map(|p| p.1.ln()).collect();
        (-linear_fit(&xs, &ys).slope).max(0.0)
    } else {
        0.0
    };
    let (t_first, a_first) = peaks.first().copied().unwrap_or((t[0], 1.0));
    let i = t.iter().position(|&x| x >= t_first).unwrap_or(0);
    let shape = (omega * t_first + PI).cos();
    let sign = if y[i] * shape >= 0.0 { 1.0 } else { -1.0 };
    Ok(FitStart {
        decay_rate,
        omega,
        amplitude: sign * a_first * (decay_rate * t_first).exp(),
        phase: PI,
    })
}

/// Fits `A·exp(−D t)·cos(ω t + π)` (or a free phase) with three perturbed
/// restarts around the data-driven guess, keeping the best residual.
pub fn fit_damped_cosine(t: &[f64], y: &[f64], mode: PhaseMode) -> Result<FitResult> {
    let guess = initial_guess(t, y)?;
    let starts = [
        guess,
        FitStart {
            decay_rate: guess.decay_rate * 1.25 + 0.002,
            omega: guess.omega * 1.01,
            amplitude: guess.amplitude * 0.9,
            ..guess
        },
        FitStart {
            decay_rate: guess.decay_rate * 0.75,
            omega: guess.omega * 0.99,
            amplitude: guess.amplitude * 1.1,
            ..guess
        },
        FitStart {
            decay_rate: guess.decay_rate * 1.5 + 0.01,
            omega: guess.omega * 1.003,
            amplitude: guess.amplitude,
            ..guess
        },
    ];
    let mut best: Option<FitResult> = None;
    for start in starts {
        let Ok(fit) = fit_damped_cosine_from(t, y, start, mode) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some(b) => fit.residual_rms < b.residual_rms,
        };
        if better {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::FitDiverged("no start produced a finite fit".into()))
}

/// One Levenberg-Marquardt run from `start`.
pub fn fit_damped_cosine_from(t: &[f64], y: &[f64], start: FitStart, mode: PhaseMode) -> Result<FitResult> {
    let n = t.len();
    let (params, lower, phase): (Vec<f64>, Vec<Option<f64>>, Option<f64>) = match mode {
        PhaseMode::Fixed => (
            vec![start.decay_rate.max(0.0), start.omega, start.amplitude],
            vec![Some(0.0), None, None],
            Some(PI),
        ),
        PhaseMode::Free => (
            vec![start.decay_rate.max(0.0), start.omega, start.amplitude, start.phase],
            vec![Some(0.0), None, None, None],
            None,
        ),
    };
    let m = params.len();
    if n <= m {
        return Err(Error::InsufficientPeriods { periods: 0.0 });
    }
    let model = damped_cosine(phase);
    let sol = levenberg_marquardt(t, y, &params, &lower, &model);
    if !sol.params.iter().all(|x| x.is_finite()) || !sol.rss.is_finite() {
        return Err(Error::FitDiverged(format!("non-finite parameters {:?}", sol.params)));
    }
    let s2 = sol.rss / (n - m) as f64;
    let half_widths = sol
        .jtj
        .clone()
        .try_inverse()
        .map(|cov| (0..m).map(|k| (s2 * cov[(k, k)]).max(0.0).sqrt()).collect::<Vec<_>>())
        .unwrap_or_else(|| vec![f64::INFINITY; m]);
    let (mut omega, mut amplitude) = (sol.params[1], sol.params[2]);
    let mut phase_out = phase.unwrap_or_else(|| sol.params[3]);
    // Canonical sign ω > 0; cos(−ωt + π) = cos(ωt + π).
    if omega < 0.0 {
        omega = -omega;
        if mode == PhaseMode::Free {
            phase_out = -phase_out;
        }
    }
    if mode == PhaseMode::Free {
        if amplitude < 0.0 {
            amplitude = -amplitude;
            phase_out += PI;
        }
        phase_out = phase_out.rem_euclid(2.0 * PI);
    }
    Ok(FitResult {
        decay_rate: sol.params[0],
        omega,
        amplitude,
        phase: phase_out,
        residual_rms: (sol.rss / n as f64).sqrt(),
        decay_rate_ci: half_widths[0],
        omega_ci: half_widths[1],
        amplitude_ci: half_widths[2],
        converged: sol.converged,
        iterations: sol.iterations,
    })
}

/// Fits `A·exp(−D t)` to a positive envelope (e.g. `|ρ₀₁(t)|`); returns
/// `(D, half-width)`.
pub fn fit_exponential_decay(t: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = t.len();
    if n < 3 {
        return Err(Error::InsufficientRows { need: 3, have: n });
    }
    let logs: Vec<f64> = y.iter().map(|v| v.max(1e-300).ln()).collect();
    let line = linear_fit(t, &logs);
    let start = [(-line.slope).max(0.0), line.intercept.exp()];
    let model = |p: &[f64], t: f64, grad: &mut [f64]| {
        let e = (-p[0] * t).exp();
        grad[0] = -t * p[1] * e;
        grad[1] = e;
        p[1] * e
    };
    let sol = levenberg_marquardt(t, y, &start, &[Some(0.0), None], &model);
    let s2 = sol.rss / (n - 2) as f64;
    let ci = sol
        .jtj
        .try_inverse()
        .map_or(f64::INFINITY, |cov| (s2 * cov[(0, 0)]).max(0.0).sqrt());
    Ok((sol.params[0], ci))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = intercept + slope·x`; standard errors are NaN
/// with only two points.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let s2 = if x.len() > 2 { ssr / (n - 2.0) } else { f64::NAN };
    LinearFit {
        slope,
        intercept,
        slope_se: (s2 / sxx).sqrt(),
        intercept_se: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
        r_squared: if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 },
    }
}

/// `D = k·x^p` with standard errors from the log-log regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub coefficient: f64,
    pub exponent: f64,
    pub coefficient_se: f64,
    pub exponent_se: f64,
    pub r_squared: f64,
}

impl PowerLaw {
    /// `D_φ = 3.63·10⁻⁴ σ²` (σ in µΦ₀, D in 1/ns).
    pub fn reference() -> Self {
        Self {
            coefficient: 3.63e-4,
            exponent: 2.0,
            coefficient_se: 0.0,
            exponent_se: 0.0,
            r_squared: 1.0,
        }
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        self.coefficient * x.powf(self.exponent)
    }

    /// Inverse of [`PowerLaw::evaluate`].
    pub fn invert(&self, d: f64) -> f64 {
        (d / self.coefficient).powf(1.0 / self.exponent)
    }
}

pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLaw> {
    let usable: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientRows {
            need: 2,
            have: usable.len(),
        });
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
    let line = linear_fit(&lx, &ly);
    let coefficient = line.intercept.exp();
    Ok(PowerLaw {
        coefficient,
        exponent: line.slope,
        coefficient_se: coefficient * line.intercept_se,
        exponent_se: line.slope_se,
        r_squared: line.r_squared,
    })
}

/// Everything a sweep point needs besides the swept value.
#[derive(Debug, Clone, Copy)]
pub struct SweepBase<'a> {
    pub table: &'a BasisTable,
    pub initial: &'a QuantumState,
    pub ensemble: EnsembleConfig,
    /// Zero-noise doublet splitting, rad/ns.
    pub splitting: f64,
    pub phase_mode: PhaseMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// σ in µΦ₀.
    Sigma,
    /// ω_c in rad/ns.
    Cutoff,
}

/// What stays fixed while the cutoff moves.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthHold {
    /// σ is the same for every cutoff.
    #[default]
    Sigma,
    /// The flat PSD level is held: σ² ∝ ω_c, equal to the base σ at this cutoff.
    SpectralDensity { reference_cutoff: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub sigma: f64,
    pub cutoff: f64,
    pub seed: u64,
    pub fit: Option<FitResult>,
    /// Why the fit failed, when it did.
    pub fit_error: Option<String>,
    /// Whether the row entered the power-law fit.
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSummary {
    pub splitting: f64,
    /// Rows with ω_c ≤ ω₀.
    pub sub_rows: usize,
    pub sub_monotone_increasing: bool,
    pub sub_linear: Option<LinearFit>,
    /// Rows with ω_c > ω₀.
    pub super_rows: usize,
    /// `(max − min)/mean` of D over the super-ω₀ rows.
    pub super_relative_spread: Option<f64>,
    /// Fitted ω minus the zero-noise splitting for the sub-ω₀ rows.
    pub sub_frequency_pull: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
    pub power_law: Option<PowerLaw>,
    pub power_law_error: Option<String>,
    pub bandwidth: Option<BandwidthSummary>,
}

/// One ensemble and its fit; fit failures are recorded on the row.
fn sweep_point(base: &SweepBase<'_>, value: f64, sigma: f64, cutoff: f64) -> Result<(SweepRow, EnsembleResult)> {
    let mut config = base.ensemble;
    config.flux_noise = ChannelNoise { sigma, cutoff };
    let result = run_ensemble(base.table, &config, base.initial)?;
    let (fit, fit_error) = match fit_damped_cosine(&result.times, &result.p_mean, base.phase_mode) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok((
        SweepRow {
            value,
            sigma,
            cutoff,
            seed: config.master_seed,
            fit,
            fit_error,
            used: false,
        },
        result,
    ))
}

/// One ensemble and fit per σ (µΦ₀), then `D = k σ^p` over rows whose fit
/// converged with D above three half-widths.
pub fn variance_sweep(
    base: &SweepBase<'_>,
    sigmas: &[f64],
    mut progress: impl FnMut(&SweepRow, &EnsembleResult),
) -> Result<SweepResult> {
    if sigmas.is_empty() {
        return Err(Error::Config("variance sweep needs at least one sigma".into()));
    }
    let mut values = sigmas.to_vec();
    values.sort_by(f64::total_cmp);
    let cutoff = base.ensemble.flux_noise.cutoff;
    let mut rows = Vec::with_capacity(values.len());
    for &sigma in &values {
        let (row, result) = sweep_point(base, sigma, sigma, cutoff)?;
        progress(&row, &result);
        rows.push(row);
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for row in rows.iter_mut() {
        if let Some(f) = &row.fit {
            if f.converged && f.decay_rate > 3.0 * f.decay_rate_ci && row.value > 0.0 {
                row.used = true;
                xs.push(row.value);
                ys.push(f.decay_rate);
            }
        }
    }
    let (power_law, power_law_error) = match fit_power_law(&xs, &ys) {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(SweepResult {
        variable: SweepVariable::Sigma,
        rows,
        power_law,
        power_law_error,
        bandwidth: None,
    })
}

/// One ensemble and fit per cutoff (rad/ns) at base σ `sigma` (µΦ₀).
pub fn bandwidth_sweep(
    base: &SweepBase<'_>,
    cutoffs: &[f64],
    sigma: f64,
    hold: BandwidthHold,
    mut progress: impl FnMut(&SweepRow, &EnsembleResult),
) -> Result<SweepResult> {
    if cutoffs.is_empty() {
        return Err(Error::Config("bandwidth sweep needs at least one cutoff".into()));
    }
    let mut values = cutoffs.to_vec();
    values.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(values.len());
    for &cutoff in &values {
        let row_sigma = match hold {
            BandwidthHold::Sigma => sigma,
            BandwidthHold::SpectralDensity { reference_cutoff } => sigma * (cutoff / reference_cutoff).sqrt(),
        };
        let (row, result) = sweep_point(base, cutoff, row_sigma, cutoff)?;
        progress(&row, &result);
        rows.push(row);
    }
    let summary = summarize_bandwidth(&rows, base.splitting);
    Ok(SweepResult {
        variable: SweepVariable::Cutoff,
        rows,
        power_law: None,
        power_law_error: None,
        bandwidth: Some(summary),
    })
}

fn summarize_bandwidth(rows: &[SweepRow], splitting: f64) -> BandwidthSummary {
    let fitted = |sub: bool| -> Vec<(f64, FitResult)> {
        rows.iter()
            .filter(|r| (r.cutoff <= splitting) == sub)
            .filter_map(|r| r.fit.map(|f| (r.cutoff, f)))
            .collect()
    };
    let sub = fitted(true);
    let sup = fitted(false);
    let sub_d: Vec<f64> = sub.iter().map(|(_, f)| f.decay_rate).collect();
    let sub_x: Vec<f64> = sub.iter().map(|(c, _)| *c).collect();
    let sup_d: Vec<f64> = sup.iter().map(|(_, f)| f.decay_rate).collect();
    let super_relative_spread = (sup_d.len() >= 2).then(|| {
        let max = sup_d.iter().copied().fold(f64::MIN, f64::max);
        let min = sup_d.iter().copied().fold(f64::MAX, f64::min);
        (max - min) / (sup_d.iter().sum::<f64>() / sup_d.len() as f64)
    });
    BandwidthSummary {
        splitting,
        sub_rows: rows.iter().filter(|r| r.cutoff <= splitting).count(),
        sub_monotone_increasing: sub_d.len() >= 2 && sub_d.windows(2).all(|w| w[1] > w[0]),
        sub_linear: (sub_d.len() >= 2).then(|| linear_fit(&sub_x, &sub_d)),
        super_rows: rows.iter().filter(|r| r.cutoff > splitting).count(),
        super_relative_spread,
        sub_frequency_pull: sub.iter().map(|(_, f)| f.omega - splitting).collect(),
    }
}

/// Columns: `sigma_or_cutoff, D_phi, D_phi_ci, omega0, omega0_ci,
/// residual_rms, converged, seed`. Failed fits leave the numeric fields empty.
pub fn write_sweep_csv(result: &SweepResult, header: &str, mut out: impl Write) -> Result<()> {
    out.write_all(header.as_bytes())?;
    writeln!(out, "sigma_or_cutoff,D_phi,D_phi_ci,omega0,omega0_ci,residual_rms,converged,seed")?;
    for row in &result.rows {
        match &row.fit {
            Some(f) => writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                row.value, f.decay_rate, f.decay_rate_ci, f.omega, f.omega_ci, f.residual_rms, f.converged, row.seed
            )?,
            None => writeln!(out, "{},,,,,,false,{}", row.value, row.seed)?,
        }
    }
    Ok(())
}
