//! Single stochastic trajectories: initial-state preparation and the
//! per-step projection propagator over a [`BasisTable`].
//!
//! A state is held as amplitudes over the eigenbasis of its current table
//! entry. Each step looks up the entry for the perturbed Hamiltonian,
//! projects onto it through the stored reference-basis coefficients,
//! renormalizes, and applies `exp(−i(E_n − E_ref)Δt)`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{solve_eigenbasis, BasisTable, TableIndex};

pub const STEP_LEAKAGE_LIMIT: f64 = 1e-6;
pub const RUN_LEAKAGE_LIMIT: f64 = 1e-3;
pub const MIN_TWO_LEVEL_WEIGHT: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationConfig {
    /// ns.
    pub dt: f64,
    pub n_steps: usize,
    /// µΦ₀ below Φ₀/2.
    pub initial_bias_offset: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            n_steps: 350,
            initial_bias_offset: 1000.0,
        }
    }
}

impl PropagationConfig {
    pub fn duration(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    /// The doublet phase per step must stay below π at every table entry.
    pub fn validate(&self, table: &BasisTable) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::NonPositiveParameter {
                name: "dt",
                value: self.dt,
            });
        }
        if self.n_steps < 2 {
            return Err(Error::Config(format!("n_steps must be at least 2 (got {})", self.n_steps)));
        }
        if !(self.initial_bias_offset >= 0.0 && self.initial_bias_offset.is_finite()) {
            return Err(Error::Config(format!(
                "initial_bias_offset must be non-negative (got {})",
                self.initial_bias_offset
            )));
        }
        let widest = table
            .entries()
            .iter()
            .map(|e| e.energies[1] - e.energies[0])
            .fold(0.0, f64::max);
        if widest * self.dt >= PI {
            return Err(Error::Config(format!(
                "dt = {} ns aliases the doublet splitting {widest:.4} rad/ns",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Amplitudes over the eigenbasis of table entry `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    pub coefficients: Vec<Complex64>,
    pub index: TableIndex,
    /// ns.
    pub time: f64,
    /// Norm discarded by projections so far.
    pub leakage: f64,
}

impl QuantumState {
    pub fn norm_sqr(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Amplitudes on the two lowest symmetric-bias levels.
    pub fn two_level(&self, table: &BasisTable) -> [Complex64; 2] {
        [
            table.reference_amplitude(self.index, 0, &self.coefficients),
            table.reference_amplitude(self.index, 1, &self.coefficients),
        ]
    }
}

/// `2·Re(s₀ s₁*)`: the two-level flux expectation, −1 for the left well.
pub fn flux_observable(s: [Complex64; 2]) -> f64 {
    2.0 * (s[0] * s[1].conj()).re
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedState {
    pub state: QuantumState,
    /// `|c₀|² + |c₁|²` before renormalization to the kept levels.
    pub two_level_weight: f64,
    /// ⟨φ⟩ of the prepared state, in Φ₀.
    pub mean_flux: f64,
}

/// Ground state at `Φ₀/2 − offset`, expanded in the symmetric-bias basis.
///
/// The offset ground state is solved directly on the table's grid; the
/// offset usually lies far outside the table's bias range.
pub fn prepare_initial_state(table: &BasisTable, offset_microphi0: f64) -> Result<PreparedState> {
    let grid = table.grid;
    let bias = 0.5 - offset_microphi0 * 1e-6;
    let lo = grid.center - grid.half_width;
    if !(offset_microphi0 >= 0.0) || bias <= lo {
        return Err(Error::OffsetOutOfGrid {
            offset_microphi0,
        });
    }
    let center = table.center();
    let ground = if offset_microphi0 == 0.0 {
        table.reference.vectors[0].clone()
    } else {
        let tilted = table.params.with_flux_bias(bias);
        solve_eigenbasis(&tilted, &grid, 1)?.vectors.swap_remove(0)
    };
    let reference = table.reference.project(&ground);
    let w = table.width();
    let entry = table.entry(center);
    let mut coefficients: Vec<Complex64> = (0..table.n_levels())
        .map(|j| Complex64::new(dot(entry.row(j, w), &reference), 0.0))
        .collect();
    let kept: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
    let two_level_weight = coefficients[0].norm_sqr() + coefficients[1].norm_sqr();
    if two_level_weight <= MIN_TWO_LEVEL_WEIGHT {
        return Err(Error::ExcessiveHigherLevelWeight {
            weight: two_level_weight,
        });
    }
    let scale = 1.0 / kept.sqrt();
    coefficients.iter_mut().for_each(|c| *c *= scale);

    let mut amplitudes = vec![0.0; w];
    for (j, c) in coefficients.iter().enumerate() {
        for (a, r) in amplitudes.iter_mut().zip(entry.row(j, w)) {
            *a += c.re * r;
        }
    }
    let h = table.reference.spacing;
    let mut wave = vec![0.0; grid.n_points];
    for (a, v) in amplitudes.iter().zip(&table.reference.vectors) {
        for (x, vi) in wave.iter_mut().zip(v) {
            *x += a * vi;
        }
    }
    let norm: f64 = h * wave.iter().map(|x| x * x).sum::<f64>();
    let mean_flux = h * wave
        .iter()
        .enumerate()
        .map(|(i, x)| grid.point(i) * x * x)
        .sum::<f64>()
        / norm;

    Ok(PreparedState {
        state: QuantumState {
            coefficients,
            index: center,
            time: 0.0,
            leakage: 0.0,
        },
        two_level_weight,
        mean_flux,
    })
}

/// What one step did besides evolving the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub leakage: f64,
    pub clamped: bool,
}

/// Advances `state` by `dt` (which may be negative) under the Hamiltonian at
/// `Φ₀/2 + flux_offset` (µΦ₀) and critical-current deviation `ic_deviation`.
pub fn propagate_step(
    state: &mut QuantumState,
    table: &BasisTable,
    flux_offset: f64,
    ic_deviation: f64,
    dt: f64,
) -> Result<StepReport> {
    let (target, clamped) = table.lookup(flux_offset * 1e-6, ic_deviation);
    let mut leakage = 0.0;
    if target != state.index {
        let n = table.n_levels();
        let overlap = table.overlap(state.index, target);
        let projected: Vec<Complex64> = (0..n)
            .map(|i| {
                overlap[i * n..(i + 1) * n]
                    .iter()
                    .zip(&state.coefficients)
                    .map(|(o, c)| c * o)
                    .sum()
            })
            .collect();
        let before = state.norm_sqr();
        let after: f64 = projected.iter().map(|c| c.norm_sqr()).sum();
        leakage = (1.0 - after / before).max(0.0);
        if leakage > STEP_LEAKAGE_LIMIT {
            return Err(Error::LeakageBudgetExceeded(format!(
                "step leakage {leakage:.3e} at t = {:.2} ns exceeds {STEP_LEAKAGE_LIMIT:.0e}",
                state.time
            )));
        }
        let scale = 1.0 / after.sqrt();
        state.coefficients = projected.into_iter().map(|c| c * scale).collect();
        state.index = target;
        state.leakage += leakage;
        if state.leakage > RUN_LEAKAGE_LIMIT {
            return Err(Error::LeakageBudgetExceeded(format!(
                "accumulated leakage {:.3e} exceeds {RUN_LEAKAGE_LIMIT:.0e}",
                state.leakage
            )));
        }
    }
    let e_ref = table.entry(table.center()).energies[0];
    let energies = &table.entry(target).energies;
    for (c, e) in state.coefficients.iter_mut().zip(energies) {
        *c *= Complex64::from_polar(1.0, -(e - e_ref) * dt);
    }
    state.time += dt;
    Ok(StepReport { leakage, clamped })
}

/// Per-sample record of one realization; sample `k` is at `t = k·Δt`,
/// `k = 0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub observable: Vec<f64>,
    pub two_level: Vec<[Complex64; 2]>,
    pub populations: Vec<Vec<f64>>,
    /// Accumulated leakage at each sample.
    pub leakage: Vec<f64>,
    pub leakage_total: f64,
    pub max_step_leakage: f64,
    pub clamped_steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Runs `config.n_steps` steps; step `k` (1-based) uses noise sample `k − 1`.
/// Flux samples are in µΦ₀, critical-current samples are fractions.
pub fn run_trajectory(
    table: &BasisTable,
    config: &PropagationConfig,
    initial: &QuantumState,
    flux: &[f64],
    critical_current: Option<&[f64]>,
) -> Result<Trajectory> {
    let n = config.n_steps;
    if flux.len() < n {
        return Err(Error::Config(format!(
            "flux trace has {} samples, need {n}",
            flux.len()
        )));
    }
    if let Some(ic) = critical_current {
        if ic.len() < n {
            return Err(Error::Config(format!(
                "critical-current trace has {} samples, need {n}",
                ic.len()
            )));
        }
        if table.ic_scales.len() < 2 {
            return Err(Error::Config(
                "critical-current noise needs a table with a critical-current axis".into(),
            ));
        }
    }
    let mut state = initial.clone();
    let mut out = Trajectory {
        times: Vec::with_capacity(n + 1),
        observable: Vec::with_capacity(n + 1),
        two_level: Vec::with_capacity(n + 1),
        populations: Vec::with_capacity(n + 1),
        leakage: Vec::with_capacity(n + 1),
        leakage_total: 0.0,
        max_step_leakage: 0.0,
        clamped_steps: 0,
    };
    let record = |out: &mut Trajectory, state: &QuantumState, t: f64| {
        let s = state.two_level(table);
        out.times.push(t);
        out.observable.push(flux_observable(s));
        out.two_level.push(s);
        out.populations.push(state.populations());
        out.leakage.push(state.leakage);
    };
    record(&mut out, &state, initial.time);
    for k in 0..n {
        let ic = critical_current.map_or(0.0, |t| t[k]);
        let report = propagate_step(&mut state, table, flux[k], ic, config.dt)?;
        out.max_step_leakage = out.max_step_leakage.max(report.leakage);
        out.clamped_steps += report.clamped as usize;
        record(&mut out, &state, initial.time + (k + 1) as f64 * config.dt);
    }
    out.leakage_total = state.leakage;
    Ok(out)
}

/// Columns: `t_ns, P, leakage, pop_0, …`.
pub fn write_trajectory_csv(trajectory: &Trajectory, header: &str, mut out: impl Write) -> Result<()> {
    out.write_all(header.as_bytes())?;
    let levels = trajectory.populations.first().map_or(0, Vec::len);
    write!(out, "t_ns,P,leakage")?;
    for i in 0..levels {
        write!(out, ",pop_{i}")?;
    }
    writeln!(out)?;
    for k in 0..trajectory.len() {
        write!(
            out,
            "{},{},{}",
            trajectory.times[k], trajectory.observable[k], trajectory.leakage[k]
        )?;
        for p in &trajectory.populations[k] {
            write!(out, ",{p}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
