//! Finite-difference discretization of the rf-SQUID Hamiltonian, low-lying
//! eigenpairs, and the gauge-fixed eigenbasis lookup table used by the
//! propagator.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device::{well_geometry, DeviceParams};
use crate::error::{Error, Result};
use crate::tridiag::SymTridiagonal;

pub const MIN_GRID_POINTS: usize = 501;
pub const MAX_LEVELS: usize = 32;
const SWEEP_RUN: usize = 64;

/// Uniform flux grid, dimensionless in Φ₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxGrid {
    pub n_points: usize,
    pub center: f64,
    pub half_width: f64,
}

impl Default for FluxGrid {
    fn default() -> Self {
        Self {
            n_points: 2001,
            center: 0.5,
            half_width: 0.4,
        }
    }
}

impl FluxGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.center - self.half_width + i as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < MIN_GRID_POINTS || self.n_points % 2 == 0 {
            return Err(Error::InvalidGrid(format!(
                "n_points must be odd and at least {MIN_GRID_POINTS} (got {})",
                self.n_points
            )));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) || !self.center.is_finite() {
            return Err(Error::InvalidGrid(format!("bad extent: half_width {}", self.half_width)));
        }
        Ok(())
    }

    /// Both wells must sit at least five grid steps inside the boundary.
    pub fn check_coverage(&self, params: &DeviceParams) -> Result<()> {
        if params.beta_l() <= 1.0 {
            return Ok(());
        }
        let g = well_geometry(params)?;
        let margin = 5.0 * self.spacing();
        let lo = self.center - self.half_width + margin;
        let hi = self.center + self.half_width - margin;
        if g.left_min < lo || g.right_min > hi {
            return Err(Error::InvalidGrid(format!(
                "grid [{:.4}, {:.4}] does not contain the minima at {:.4} and {:.4} with margin",
                self.center - self.half_width,
                self.center + self.half_width,
                g.left_min,
                g.right_min
            )));
        }
        Ok(())
    }
}

/// h-weighted inner product of two grid functions.
pub fn grid_inner(a: &[f64], b: &[f64], spacing: f64) -> f64 {
    spacing * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Discretized `H/ħ` in rad/ns with a three-point Laplacian.
pub fn build_hamiltonian(params: &DeviceParams, grid: &FluxGrid) -> Result<SymTridiagonal> {
    grid.validate()?;
    let h = grid.spacing();
    let kinetic = params.energy_scales().kinetic;
    let omega = params.lc_frequency();
    // Leading three-point error for a harmonic level of energy ω/2.
    let estimate = h * h * (0.5 * omega).powi(2) / (12.0 * kinetic);
    let limit = 1e-4 * omega;
    if estimate > limit {
        return Err(Error::GridTooCoarse { estimate, limit });
    }
    let off_value = -kinetic / (h * h);
    let diag = (0..grid.n_points)
        .map(|i| 2.0 * kinetic / (h * h) + params.potential_energy(grid.point(i)))
        .collect();
    Ok(SymTridiagonal::new(diag, vec![off_value; grid.n_points - 1]))
}

/// Low-lying eigenpairs at one bias and critical-current scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub bias: f64,
    pub critical_current_scale: f64,
    /// rad/ns, ascending.
    pub energies: Vec<f64>,
    /// Grid-sampled wavefunctions, orthonormal under [`grid_inner`].
    pub vectors: Vec<Vec<f64>>,
    pub spacing: f64,
}

impl EigenBasis {
    pub fn n_levels(&self) -> usize {
        self.energies.len()
    }

    pub fn overlap(&self, i: usize, other: &EigenBasis, j: usize) -> f64 {
        grid_inner(&self.vectors[i], &other.vectors[j], self.spacing)
    }

    /// Coefficients of a grid function in this basis.
    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|v| grid_inner(v, f, self.spacing)).collect()
    }

    pub fn splitting(&self) -> f64 {
        self.energies[1] - self.energies[0]
    }
}

/// Lowest `n_levels` eigenpairs of the discretized Hamiltonian at `params.flux_bias`.
///
/// Gauge: each eigenvector's outermost significant lobe on the right is
/// positive, so the odd partner of the symmetric doublet is positive in the
/// right well.
pub fn solve_eigenbasis(params: &DeviceParams, grid: &FluxGrid, n_levels: usize) -> Result<EigenBasis> {
    solve_scaled(params, grid, n_levels, 1.0, None)
}

fn solve_scaled(
    params: &DeviceParams,
    grid: &FluxGrid,
    n_levels: usize,
    ic_scale: f64,
    guesses: Option<&[f64]>,
) -> Result<EigenBasis> {
    if n_levels == 0 || n_levels > MAX_LEVELS {
        return Err(Error::Config(format!("n_levels must be in 1..={MAX_LEVELS} (got {n_levels})")));
    }
    let scaled = params.with_critical_current_scale(ic_scale);
    let hamiltonian = build_hamiltonian(&scaled, grid)?;
    let (energies, raw) = match guesses {
        Some(g) => hamiltonian.eigenpairs_from_guesses(&g[..n_levels])?,
        None => hamiltonian.lowest_eigenpairs(n_levels)?,
    };

    let edge = scaled
        .potential_energy(grid.point(0))
        .min(scaled.potential_energy(grid.point(grid.n_points - 1)));
    let floor = (0..grid.n_points)
        .map(|i| scaled.potential_energy(grid.point(i)))
        .fold(f64::INFINITY, f64::min);
    for (level, &energy) in energies.iter().enumerate() {
        if edge - energy < 0.05 * (edge - floor) {
            return Err(Error::LevelsAboveBarrierEdge { level, energy, edge });
        }
    }

    let h = grid.spacing();
    let scale = 1.0 / h.sqrt();
    let vectors = raw
        .into_iter()
        .map(|mut v| {
            let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let outer = v.iter().rev().find(|x| x.abs() > 1e-3 * peak).copied().unwrap_or(1.0);
            let sign = if outer < 0.0 { -scale } else { scale };
            v.iter_mut().for_each(|x| *x *= sign);
            v
        })
        .collect();
    Ok(EigenBasis {
        bias: params.flux_bias,
        critical_current_scale: ic_scale,
        energies,
        vectors,
        spacing: h,
    })
}

/// Lowest-doublet splitting `(E₁ − E₀)/ħ` in rad/ns.
pub fn tunnel_splitting(params: &DeviceParams, grid: &FluxGrid) -> Result<f64> {
    Ok(solve_eigenbasis(params, grid, 2)?.splitting())
}

/// How the calibration target relates to the doublet splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplittingReading {
    /// The quoted frequency is ω₀/2π, in GHz.
    #[default]
    Cyclic,
    /// The quoted number is ω₀ itself, in rad/ns.
    Angular,
}

impl SplittingReading {
    pub fn target_rad_per_ns(self, quoted: f64) -> f64 {
        match self {
            SplittingReading::Cyclic => 2.0 * PI * quoted,
            SplittingReading::Angular => quoted,
        }
    }
}

const CALIBRATION_BETA_RANGE: (f64, f64) = (1.05, 2.0);
const CALIBRATION_RTOL: f64 = 1e-7;

/// Bisects `I_c` within β_L ∈ [1.05, 2] so the doublet splitting hits `target` rad/ns.
pub fn calibrate_critical_current(params: &DeviceParams, grid: &FluxGrid, target: f64) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::BracketFailure(format!("target splitting {target} is not positive")));
    }
    let symmetric = params.with_flux_bias(0.5);
    if !(symmetric.capacitance > 0.0 && symmetric.inductance > 0.0) {
        return Err(Error::NonPositiveParameter {
            name: "capacitance/inductance",
            value: symmetric.capacitance.min(symmetric.inductance),
        });
    }
    let ic_for_beta = |beta: f64| beta * crate::device::FLUX_QUANTUM / (2.0 * PI * params.inductance);
    let split_at = |ic: f64| tunnel_splitting(&symmetric.with_critical_current(ic), grid);

    if params.beta_l() > 1.0 {
        if let Ok(current) = split_at(params.critical_current) {
            if (current - target).abs() <= CALIBRATION_RTOL * target {
                return Ok(params.critical_current);
            }
        }
    }

    let (beta_lo, beta_hi) = CALIBRATION_BETA_RANGE;
    let (mut lo, mut hi) = (ic_for_beta(beta_lo), ic_for_beta(beta_hi));
    let probes: Vec<f64> = (0..=8).map(|k| lo + (hi - lo) * k as f64 / 8.0).collect();
    let splits = probes.iter().map(|&ic| split_at(ic)).collect::<Result<Vec<_>>>()?;
    for w in splits.windows(2) {
        if w[1] > w[0] * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::BracketFailure(format!(
                "splitting not monotone in I_c on the bracket ({} -> {})",
                w[0], w[1]
            )));
        }
    }
    let (s_lo, s_hi) = (splits[0], splits[8]);
    if target > s_lo || target < s_hi {
        return Err(Error::BracketFailure(format!(
            "target {target:.6} rad/ns outside [{s_hi:.3e}, {s_lo:.6}] reachable for beta_L in [{beta_lo}, {beta_hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = split_at(mid)?;
        if (s - target).abs() <= CALIBRATION_RTOL * target || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if s > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Extent and resolution of a basis table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    /// Half-width of the bias axis about Φ₀/2, in Φ₀.
    pub bias_half_range: f64,
    /// Bias step, in Φ₀.
    pub bias_step: f64,
    pub n_levels: usize,
    /// Levels of the symmetric-bias basis every entry is expanded in.
    pub reference_levels: usize,
    /// Half-width of the critical-current scale axis about 1 (0 disables it).
    pub ic_half_range: f64,
    pub ic_step: f64,
}

impl TableSpec {
    /// Table covering ±6σ of flux noise (σ in µΦ₀) with the default resolution.
    pub fn for_flux_sigma(sigma_microphi0: f64, n_levels: usize) -> Self {
        Self {
            bias_half_range: (6.0 * sigma_microphi0 * 1e-6).max(1e-6),
            bias_step: 1e-7,
            n_levels,
            reference_levels: default_reference_levels(n_levels),
            ic_half_range: 0.0,
            ic_step: 1e-4,
        }
    }

    fn bias_count(&self) -> usize {
        2 * (self.bias_half_range / self.bias_step).round() as usize + 1
    }

    fn ic_count(&self) -> usize {
        if self.ic_half_range > 0.0 {
            2 * (self.ic_half_range / self.ic_step).round() as usize + 1
        } else {
            1
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.bias_step > 0.0) || !(self.bias_half_range >= self.bias_step) {
            return Err(Error::RangeTooNarrow(format!(
                "bias half-range {} must be at least one step {}",
                self.bias_half_range, self.bias_step
            )));
        }
        if self.ic_half_range < 0.0 || (self.ic_half_range > 0.0 && !(self.ic_half_range >= self.ic_step)) {
            return Err(Error::RangeTooNarrow(format!(
                "critical-current half-range {} must be at least one step {}",
                self.ic_half_range, self.ic_step
            )));
        }
        if self.n_levels < 2 || self.n_levels > MAX_LEVELS {
            return Err(Error::Config(format!("n_levels must be in 2..={MAX_LEVELS}")));
        }
        if self.reference_levels < self.n_levels || self.reference_levels > MAX_LEVELS {
            return Err(Error::Config(format!(
                "reference_levels must be in {}..={MAX_LEVELS}",
                self.n_levels
            )));
        }
        Ok(())
    }
}

pub fn default_reference_levels(n_levels: usize) -> usize {
    (2 * n_levels + 4).min(MAX_LEVELS).max(n_levels)
}

/// One table entry: the eigenbasis at a given bias and critical-current
/// scale, expanded in the table's reference basis.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub bias: f64,
    pub ic_scale: f64,
    pub energies: Vec<f64>,
    /// `n_levels × reference_levels`, row-major; row `i` is level `i`.
    pub coefficients: Vec<f64>,
}

impl TableEntry {
    pub fn row(&self, level: usize, width: usize) -> &[f64] {
        &self.coefficients[level * width..(level + 1) * width]
    }
}

/// Eigenbases tabulated over flux bias (and optionally critical-current
/// scale), sharing one grid and a common reference basis.
///
/// Each entry's eigenvectors are stored as coefficients over the
/// eigenbasis at Φ₀/2, unscaled `I_c`, so overlaps between entries are short
/// dot products. Entries are gauge-fixed by sign continuity outward from
/// the center.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub params: DeviceParams,
    pub grid: FluxGrid,
    pub spec: TableSpec,
    pub reference: EigenBasis,
    pub biases: Vec<f64>,
    pub ic_scales: Vec<f64>,
    entries: Vec<TableEntry>,
    /// Largest norm deficit of an entry eigenvector within the reference span.
    pub reference_leakage: f64,
}

/// Position in the table: `(bias index, ic-scale index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TableIndex {
    pub bias: usize,
    pub ic: usize,
}

impl BasisTable {
    pub fn n_levels(&self) -> usize {
        self.spec.n_levels
    }

    pub fn width(&self) -> usize {
        self.spec.reference_levels
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    pub fn entry(&self, index: TableIndex) -> &TableEntry {
        &self.entries[index.ic * self.biases.len() + index.bias]
    }

    /// Index of the Φ₀/2, unscaled entry.
    pub fn center(&self) -> TableIndex {
        TableIndex {
            bias: self.biases.len() / 2,
            ic: self.ic_scales.len() / 2,
        }
    }

    /// Covered bias excursion about Φ₀/2, in Φ₀.
    pub fn bias_half_range(&self) -> f64 {
        self.biases[self.biases.len() - 1] - 0.5
    }

    pub fn ic_half_range(&self) -> f64 {
        self.ic_scales[self.ic_scales.len() - 1] - 1.0
    }

    /// Nearest entry to a bias offset from Φ₀/2 (in Φ₀) and a fractional
    /// critical-current deviation. The flag reports clamping at the table edge.
    pub fn lookup(&self, bias_offset: f64, ic_deviation: f64) -> (TableIndex, bool) {
        let (b, clamp_b) = nearest(bias_offset, self.spec.bias_step, self.biases.len());
        let (i, clamp_i) = if self.ic_scales.len() > 1 {
            nearest(ic_deviation, self.spec.ic_step, self.ic_scales.len())
        } else {
            (0, false)
        };
        (TableIndex { bias: b, ic: i }, clamp_b || clamp_i)
    }

    /// `⟨to_i | from_j⟩` as an `n_levels × n_levels` row-major matrix.
    pub fn overlap(&self, from: TableIndex, to: TableIndex) -> Vec<f64> {
        let n = self.n_levels();
        let w = self.width();
        let (a, b) = (self.entry(from), self.entry(to));
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let bi = b.row(i, w);
            for j in 0..n {
                out[i * n + j] = dot(bi, a.row(j, w));
            }
        }
        out
    }

    /// Reference-basis amplitude of level `reference_level` for a state given
    /// by real/imaginary coefficient arrays in entry `index`.
    pub fn reference_amplitude(&self, index: TableIndex, level: usize, state: &[num_complex::Complex64]) -> num_complex::Complex64 {
        let w = self.width();
        let e = self.entry(index);
        state
            .iter()
            .enumerate()
            .map(|(j, c)| c * e.coefficients[j * w + level])
            .sum()
    }

    /// Content hash of everything that determines the table.
    pub fn cache_key(params: &DeviceParams, grid: &FluxGrid, spec: &TableSpec) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"basis-table-v1");
        for x in [
            params.capacitance,
            params.inductance,
            params.critical_current,
            grid.center,
            grid.half_width,
            spec.bias_half_range,
            spec.bias_step,
            spec.ic_half_range,
            spec.ic_step,
        ] {
            hasher.update(x.to_bits().to_le_bytes());
        }
        for n in [grid.n_points, spec.n_levels, spec.reference_levels] {
            hasher.update((n as u64).to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes the table in a little-endian binary layout that round-trips bit-for-bit.
    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"SQBT0001");
        let put_f = |buf: &mut Vec<u8>, x: f64| buf.extend_from_slice(&x.to_bits().to_le_bytes());
        let put_u = |buf: &mut Vec<u8>, x: usize| buf.extend_from_slice(&(x as u64).to_le_bytes());
        for x in [
            self.params.capacitance,
            self.params.inductance,
            self.params.critical_current,
            self.params.flux_bias,
            self.grid.center,
            self.grid.half_width,
            self.spec.bias_half_range,
            self.spec.bias_step,
            self.spec.ic_half_range,
            self.spec.ic_step,
            self.reference_leakage,
            self.reference.spacing,
        ] {
            put_f(&mut buf, x);
        }
        for n in [
            self.grid.n_points,
            self.spec.n_levels,
            self.spec.reference_levels,
            self.biases.len(),
            self.ic_scales.len(),
        ] {
            put_u(&mut buf, n);
        }
        buf.push(self.params.harmonic_oracle as u8);
        for &e in &self.reference.energies {
            put_f(&mut buf, e);
        }
        for v in &self.reference.vectors {
            for &x in v {
                put_f(&mut buf, x);
            }
        }
        for entry in &self.entries {
            put_f(&mut buf, entry.bias);
            put_f(&mut buf, entry.ic_scale);
            for &e in &entry.energies {
                put_f(&mut buf, e);
            }
            for &c in &entry.coefficients {
                put_f(&mut buf, c);
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        let mut r = ByteReader { buf: &buf, pos: 0 };
        if r.take(8)? != b"SQBT0001" {
            return Err(Error::Config("not a basis-table cache file".into()));
        }
        let mut f = [0.0; 12];
        for x in f.iter_mut() {
            *x = r.f64()?;
        }
        let mut u = [0usize; 5];
        for x in u.iter_mut() {
            *x = r.u64()? as usize;
        }
        let harmonic_oracle = r.take(1)?[0] != 0;
        let params = DeviceParams {
            capacitance: f[0],
            inductance: f[1],
            critical_current: f[2],
            flux_bias: f[3],
            harmonic_oracle,
        };
        let grid = FluxGrid {
            n_points: u[0],
            center: f[4],
            half_width: f[5],
        };
        let spec = TableSpec {
            bias_half_range: f[6],
            bias_step: f[7],
            n_levels: u[1],
            reference_levels: u[2],
            ic_half_range: f[8],
            ic_step: f[9],
        };
        let (n_bias, n_ic) = (u[3], u[4]);
        let reference_energies = (0..spec.reference_levels).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let reference_vectors = (0..spec.reference_levels)
            .map(|_| (0..grid.n_points).map(|_| r.f64()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let reference = EigenBasis {
            bias: 0.5,
            critical_current_scale: 1.0,
            energies: reference_energies,
            vectors: reference_vectors,
            spacing: f[11],
        };
        let mut entries = Vec::with_capacity(n_bias * n_ic);
        for _ in 0..n_bias * n_ic {
            let bias = r.f64()?;
            let ic_scale = r.f64()?;
            let energies = (0..spec.n_levels).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let coefficients = (0..spec.n_levels * spec.reference_levels)
                .map(|_| r.f64())
                .collect::<Result<Vec<_>>>()?;
            entries.push(TableEntry {
                bias,
                ic_scale,
                energies,
                coefficients,
            });
        }
        if r.pos != buf.len() {
            return Err(Error::Config("trailing bytes in basis-table cache".into()));
        }
        let biases = entries[..n_bias].iter().map(|e| e.bias).collect();
        let ic_scales = (0..n_ic).map(|k| entries[k * n_bias].ic_scale).collect();
        Ok(Self {
            params,
            grid,
            spec,
            reference,
            biases,
            ic_scales,
            entries,
            reference_leakage: f[10],
        })
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Config("truncated basis-table cache".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nearest(offset: f64, step: f64, count: usize) -> (usize, bool) {
    let half = (count / 2) as f64;
    let k = (offset / step).round();
    if k < -half {
        (0, true)
    } else if k > half {
        (count - 1, true)
    } else if k.is_nan() {
        (count / 2, true)
    } else {
        ((k + half) as usize, false)
    }
}

/// Solves the eigenbasis at every table point (in parallel), expands each in
/// the symmetric-bias reference basis and fixes signs by continuity.
pub fn build_basis_table(params: &DeviceParams, grid: &FluxGrid, spec: &TableSpec) -> Result<BasisTable> {
    spec.validate()?;
    grid.validate()?;
    let params = params.validate()?.with_flux_bias(0.5);
    grid.check_coverage(&params)?;

    let reference = solve_eigenbasis(&params, grid, spec.reference_levels)?;
    let n_bias = spec.bias_count();
    let n_ic = spec.ic_count();
    let biases: Vec<f64> = (0..n_bias)
        .map(|k| 0.5 + (k as f64 - (n_bias / 2) as f64) * spec.bias_step)
        .collect();
    let ic_scales: Vec<f64> = (0..n_ic)
        .map(|k| 1.0 + (k as f64 - (n_ic / 2) as f64) * spec.ic_step)
        .collect();

    // Fixed-size runs along the bias axis: the first entry of each run is
    // bisected, the rest start from their left neighbour's energies. The
    // chunking does not depend on the thread count, so results are
    // reproducible bit-for-bit.
    let runs: Vec<(usize, usize)> = (0..n_ic)
        .flat_map(|ic| (0..n_bias).step_by(SWEEP_RUN).map(move |start| (ic, start)))
        .collect();
    let solved: Vec<(TableEntry, f64)> = runs
        .par_iter()
        .map(|&(ic, start)| {
            let scale = ic_scales[ic];
            let mut out = Vec::with_capacity(SWEEP_RUN);
            let mut guesses: Option<Vec<f64>> = None;
            for &bias in &biases[start..(start + SWEEP_RUN).min(n_bias)] {
                let basis = solve_scaled(
                    &params.with_flux_bias(bias),
                    grid,
                    spec.n_levels,
                    scale,
                    guesses.as_deref(),
                )?;
                let mut coefficients = Vec::with_capacity(spec.n_levels * spec.reference_levels);
                let mut worst: f64 = 0.0;
                for v in &basis.vectors {
                    let row = reference.project(v);
                    worst = worst.max(1.0 - dot(&row, &row));
                    coefficients.extend(row);
                }
                guesses = Some(basis.energies.clone());
                out.push((
                    TableEntry {
                        bias,
                        ic_scale: scale,
                        energies: basis.energies,
                        coefficients,
                    },
                    worst,
                ));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let reference_leakage = solved.iter().map(|(_, l)| *l).fold(0.0, f64::max);
    let mut entries: Vec<TableEntry> = solved.into_iter().map(|(e, _)| e).collect();
    fix_gauge(&mut entries, n_bias, n_ic, spec.n_levels, spec.reference_levels);

    Ok(BasisTable {
        params,
        grid: *grid,
        spec: *spec,
        reference,
        biases,
        ic_scales,
        entries,
        reference_leakage,
    })
}

fn fix_gauge(entries: &mut [TableEntry], n_bias: usize, n_ic: usize, n_levels: usize, width: usize) {
    let at = |b: usize, i: usize| i * n_bias + b;
    let (cb, ci) = (n_bias / 2, n_ic / 2);

    // Anchor: the center entry matches the reference basis sign.
    let center = at(cb, ci);
    for level in 0..n_levels {
        if entries[center].coefficients[level * width + level] < 0.0 {
            flip_row(&mut entries[center], level, width);
        }
    }
    let align = |entries: &mut [TableEntry], target: usize, anchor: usize| {
        for level in 0..n_levels {
            let s = dot(entries[target].row(level, width), entries[anchor].row(level, width));
            if s < 0.0 {
                flip_row(&mut entries[target], level, width);
            }
        }
    };
    for b in (cb + 1)..n_bias {
        align(entries, at(b, ci), at(b - 1, ci));
    }
    for b in (0..cb).rev() {
        align(entries, at(b, ci), at(b + 1, ci));
    }
    for b in 0..n_bias {
        for i in (ci + 1)..n_ic {
            align(entries, at(b, i), at(b, i - 1));
        }
        for i in (0..ci).rev() {
            align(entries, at(b, i), at(b, i + 1));
        }
    }
}

fn flip_row(entry: &mut TableEntry, level: usize, width: usize) {
    entry.coefficients[level * width..(level + 1) * width]
        .iter_mut()
        .for_each(|c| *c = -*c);
}

/// Loads a cached table keyed by content hash, or builds and stores it.
pub fn load_or_build_table(
    cache_dir: Option<&Path>,
    params: &DeviceParams,
    grid: &FluxGrid,
    spec: &TableSpec,
) -> Result<BasisTable> {
    let Some(dir) = cache_dir else {
        return build_basis_table(params, grid, spec);
    };
    let path = dir.join(format!("table-{}.bin", BasisTable::cache_key(params, grid, spec)));
    if path.exists() {
        let file = std::fs::File::open(&path)?;
        return BasisTable::read_binary(std::io::BufReader::new(file));
    }
    let table = build_basis_table(params, grid, spec)?;
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    {
        let file = std::fs::File::create(&tmp)?;
        let mut w = std::io::BufWriter::new(file);
        table.write_binary(&mut w)?;
        w.flush()?;
    }
    std::fs::rename(tmp, &path)?;
    Ok(table)
}
