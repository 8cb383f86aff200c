//! Ensembles of independent noisy trajectories averaged into the mean flux
//! observable and the two-level reduced density matrix.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{run_trajectory, PropagationConfig, QuantumState, Trajectory};
use crate::noise::{generate_noise_trace, NoiseChannel, NoiseSpec};
use crate::spectrum::BasisTable;

pub const MIN_MEAN_TWO_LEVEL_WEIGHT: f64 = 0.95;
pub const CLAMP_BUDGET: f64 = 1e-3;

/// Noise on one channel: σ (µΦ₀ for flux, a fraction for I_c) and cutoff in rad/ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelNoise {
    pub sigma: f64,
    pub cutoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub propagation: PropagationConfig,
    pub flux_noise: ChannelNoise,
    pub critical_current_noise: Option<ChannelNoise>,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories < 1 {
            return Err(Error::Config("ensemble needs at least one trajectory".into()));
        }
        Ok(())
    }

    fn noise_spec(&self, channel: NoiseChannel, noise: ChannelNoise, index: usize) -> NoiseSpec {
        NoiseSpec {
            sigma: noise.sigma,
            cutoff: noise.cutoff,
            sample_interval: self.propagation.dt,
            n_steps: self.propagation.n_steps,
            seed: trajectory_seed(self.master_seed, index as u64, channel),
            channel,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise seed of one trajectory on one channel; independent of scheduling.
pub fn trajectory_seed(master_seed: u64, index: u64, channel: NoiseChannel) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ index) ^ channel.id())
}

/// 2×2 Hermitian matrix in the symmetric two-level basis, row-major.
pub type Density = [[Complex64; 2]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub p_mean: Vec<f64>,
    pub rho: Vec<Density>,
    /// Mean two-level weight `|s₀|² + |s₁|²` per sample.
    pub two_level_weight: Vec<f64>,
    pub leakage_mean: Vec<f64>,
    pub flux_seeds: Vec<u64>,
    pub critical_current_seeds: Vec<u64>,
    pub leakage_max: f64,
    pub clamped_steps: usize,
    pub total_steps: usize,
}

/// `Σ s sᴴ / Σ (|s₀|² + |s₁|²)` over members, Hermitian by construction.
pub fn reduced_density_matrix(members: &[[Complex64; 2]]) -> Result<Density> {
    if members.is_empty() {
        return Err(Error::Config("density matrix of an empty ensemble".into()));
    }
    let (rho, weight) = accumulate(members.iter());
    let mean = weight / members.len() as f64;
    if !(mean >= MIN_MEAN_TWO_LEVEL_WEIGHT) {
        return Err(Error::TwoLevelWeightDeficit { weight: mean });
    }
    Ok(normalize(rho, weight))
}

fn accumulate<'a>(members: impl Iterator<Item = &'a [Complex64; 2]>) -> (Density, f64) {
    let zero = Complex64::new(0.0, 0.0);
    let (mut r00, mut r11, mut r01) = (0.0, 0.0, zero);
    for s in members {
        r00 += s[0].norm_sqr();
        r11 += s[1].norm_sqr();
        r01 += s[0] * s[1].conj();
    }
    (
        [[Complex64::new(r00, 0.0), r01], [r01.conj(), Complex64::new(r11, 0.0)]],
        r00 + r11,
    )
}

fn normalize(mut rho: Density, weight: f64) -> Density {
    for row in rho.iter_mut() {
        for x in row.iter_mut() {
            *x /= weight;
        }
    }
    rho
}

/// Eigenvalues of a 2×2 Hermitian matrix, ascending.
pub fn density_eigenvalues(rho: &Density) -> [f64; 2] {
    let a = rho[0][0].re;
    let d = rho[1][1].re;
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d).powi(2) + rho[0][1].norm_sqr()).sqrt();
    [mean - r, mean + r]
}

/// Runs `config.n_trajectories` members in parallel and reduces them in
/// index order.
pub fn run_ensemble(table: &BasisTable, config: &EnsembleConfig, initial: &QuantumState) -> Result<EnsembleResult> {
    config.validate()?;
    config.propagation.validate(table)?;
    let member = |index: usize| -> Result<(Trajectory, u64, u64)> {
        let flux_spec = config.noise_spec(NoiseChannel::FluxBias, config.flux_noise, index);
        let flux = generate_noise_trace(&flux_spec)?;
        let (ic, ic_seed) = match config.critical_current_noise {
            Some(noise) => {
                let spec = config.noise_spec(NoiseChannel::CriticalCurrent, noise, index);
                (Some(generate_noise_trace(&spec)?.samples), spec.seed)
            }
            None => (None, 0),
        };
        let trajectory = run_trajectory(table, &config.propagation, initial, &flux.samples, ic.as_deref())?;
        Ok((trajectory, flux_spec.seed, ic_seed))
    };
    let members: Vec<(Trajectory, u64, u64)> = (0..config.n_trajectories)
        .into_par_iter()
        .map(|index| {
            member(index).map_err(|e| Error::Trajectory {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    reduce(members, config)
}

fn reduce(members: Vec<(Trajectory, u64, u64)>, config: &EnsembleConfig) -> Result<EnsembleResult> {
    let n = members.len() as f64;
    let samples = members[0].0.len();
    let mut result = EnsembleResult {
        times: members[0].0.times.clone(),
        p_mean: Vec::with_capacity(samples),
        rho: Vec::with_capacity(samples),
        two_level_weight: Vec::with_capacity(samples),
        leakage_mean: Vec::with_capacity(samples),
        flux_seeds: members.iter().map(|m| m.1).collect(),
        critical_current_seeds: if config.critical_current_noise.is_some() {
            members.iter().map(|m| m.2).collect()
        } else {
            Vec::new()
        },
        leakage_max: members.iter().map(|m| m.0.leakage_total).fold(0.0, f64::max),
        clamped_steps: members.iter().map(|m| m.0.clamped_steps).sum(),
        total_steps: members.len() * config.propagation.n_steps,
    };
    if result.clamped_steps as f64 > CLAMP_BUDGET * result.total_steps as f64 {
        return Err(Error::ClampBudgetExceeded {
            clamped: result.clamped_steps,
            total: result.total_steps,
        });
    }
    for k in 0..samples {
        let p: f64 = members.iter().map(|m| m.0.observable[k]).sum::<f64>() / n;
        let leak: f64 = members.iter().map(|m| m.0.leakage[k]).sum::<f64>() / n;
        let (rho, weight) = accumulate(members.iter().map(|m| &m.0.two_level[k]));
        let mean_weight = weight / n;
        if !(mean_weight >= MIN_MEAN_TWO_LEVEL_WEIGHT) {
            return Err(Error::TwoLevelWeightDeficit { weight: mean_weight });
        }
        result.p_mean.push(p);
        result.leakage_mean.push(leak);
        result.two_level_weight.push(mean_weight);
        result.rho.push(normalize(rho, weight));
    }
    Ok(result)
}

/// Columns: `t_ns, P_mean, re_rho01, im_rho01, rho00, leakage_mean`.
pub fn write_ensemble_csv(result: &EnsembleResult, header: &str, mut out: impl Write) -> Result<()> {
    out.write_all(header.as_bytes())?;
    writeln!(out, "t_ns,P_mean,re_rho01,im_rho01,rho00,leakage_mean")?;
    for k in 0..result.times.len() {
        let rho = &result.rho[k];
        writeln!(
            out,
            "{},{},{},{},{},{}",
            result.times[k], result.p_mean[k], rho[0][1].re, rho[0][1].im, rho[0][0].re, result.leakage_mean[k]
        )?;
    }
    Ok(())
}

/// Fixed rotation to the flux (left/right) basis: `|R⟩, |L⟩ = (|0⟩ ± |1⟩)/√2`.
pub fn to_flux_basis(rho: &Density) -> Density {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let u = [[h, h], [h, -h]];
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[i][j] += u[i][k] * rho[k][l] * u[j][l];
                }
            }
        }
    }
    out
}
