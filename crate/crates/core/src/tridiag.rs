//! Lowest eigenpairs of a real symmetric tridiagonal matrix by Sturm-sequence
//! bisection followed by inverse iteration.

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix stored as its diagonal and sub-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
    off_sq: Vec<f64>,
    pivmin: f64,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert!(!diag.is_empty(), "empty matrix");
        assert_eq!(off.len() + 1, diag.len(), "off-diagonal must have n-1 entries");
        let off_sq: Vec<f64> = off.iter().map(|e| e * e).collect();
        let max_off_sq = off_sq.iter().fold(0.0f64, |m, &e| m.max(e));
        let pivmin = f64::MIN_POSITIVE.max(f64::MIN_POSITIVE * max_off_sq);
        Self {
            diag,
            off,
            off_sq,
            pivmin,
        }
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off(&self) -> &[f64] {
        &self.off
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// y = T x
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y: Vec<f64> = self.diag.iter().zip(x).map(|(d, v)| d * v).collect();
        for i in 0..n.saturating_sub(1) {
            y[i] += self.off[i] * x[i + 1];
            y[i + 1] += self.off[i] * x[i];
        }
        y
    }

    /// Gershgorin interval containing the whole spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
            let right = if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - left - right);
            hi = hi.max(self.diag[i] + left + right);
        }
        (lo, hi)
    }

    fn norm_bound(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        lo.abs().max(hi.abs())
    }

    /// Number of eigenvalues strictly below `x`.
    pub fn count_below(&self, x: f64) -> usize {
        let pivmin = self.pivmin;
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.len() {
            q = self.diag[i] - x - self.off_sq[i - 1] / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k`-th smallest eigenvalue (0-based), bisected to round-off.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let span = hi - lo;
        lo -= 1e-12 * span + f64::MIN_POSITIVE;
        hi += 1e-12 * span + f64::MIN_POSITIVE;
        for _ in 0..256 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Lowest `k` eigenpairs, ascending, with Euclidean-orthonormal vectors.
    pub fn lowest_eigenpairs(&self, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = self.len();
        assert!(k <= n, "requested {k} eigenpairs of a {n}x{n} matrix");
        let values: Vec<f64> = (0..k).map(|j| self.eigenvalue(j)).collect();
        let norm = self.norm_bound().max(f64::MIN_POSITIVE);
        let tolerance = 64.0 * (n as f64).sqrt() * f64::EPSILON * norm;
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(k);
        for (level, &lambda) in values.iter().enumerate() {
            let v = self.inverse_iteration(lambda, &vectors, level)?;
            let residual = residual_norm(self, &v, lambda);
            if !(residual <= tolerance) {
                return Err(Error::ConvergenceFailure { level, residual });
            }
            vectors.push(v);
        }
        Ok((values, vectors))
    }

    /// Lowest `guesses.len()` eigenpairs by Rayleigh-quotient iteration
    /// started from approximate eigenvalues (e.g. those of a nearby matrix).
    ///
    /// Each converged value is confirmed to be the expected level with two
    /// Sturm counts; a level that fails the check is recomputed by bisection.
    pub fn eigenpairs_from_guesses(&self, guesses: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = self.len();
        assert!(guesses.len() <= n);
        let norm = self.norm_bound().max(f64::MIN_POSITIVE);
        let tolerance = 64.0 * (n as f64).sqrt() * f64::EPSILON * norm;
        let mut values = Vec::with_capacity(guesses.len());
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(guesses.len());
        for (level, &guess) in guesses.iter().enumerate() {
            let (mut lambda, mut v) = self.rayleigh_iteration(guess, &vectors, level)?;
            let margin = 1e-6 * (1.0 + lambda.abs());
            let confirmed = residual_norm(self, &v, lambda) <= tolerance
                && self.count_below(lambda - margin) == level
                && self.count_below(lambda + margin) == level + 1;
            if !confirmed {
                lambda = self.eigenvalue(level);
                v = self.inverse_iteration(lambda, &vectors, level)?;
            }
            let residual = residual_norm(self, &v, lambda);
            if !(residual <= tolerance) {
                return Err(Error::ConvergenceFailure { level, residual });
            }
            values.push(lambda);
            vectors.push(v);
        }
        Ok((values, vectors))
    }

    fn rayleigh_iteration(&self, guess: f64, previous: &[Vec<f64>], seed: usize) -> Result<(f64, Vec<f64>)> {
        let n = self.len();
        let mut shift = guess;
        let mut x = start_vector(n, seed);
        // Bisection resolves eigenvalues to a few ulps of the norm; RQI need
        // not do better.
        let settle = 8.0 * f64::EPSILON * self.norm_bound();
        for _ in 0..8 {
            ShiftedLu::factor(self, shift).solve_in_place(&mut x);
            orthonormalize_against(&mut x, previous).ok_or(Error::ConvergenceFailure {
                level: seed,
                residual: f64::NAN,
            })?;
            let next = dot(&x, &self.apply(&x));
            let settled = (next - shift).abs() <= settle;
            shift = next;
            if settled {
                break;
            }
        }
        Ok((shift, x))
    }

    fn inverse_iteration(&self, lambda: f64, previous: &[Vec<f64>], seed: usize) -> Result<Vec<f64>> {
        let n = self.len();
        let lu = ShiftedLu::factor(self, lambda);
        let mut x = start_vector(n, seed);
        for _ in 0..4 {
            lu.solve_in_place(&mut x);
            orthonormalize_against(&mut x, previous).ok_or(Error::ConvergenceFailure {
                level: seed,
                residual: f64::NAN,
            })?;
        }
        Ok(x)
    }
}

/// Removes components along `previous` (twice, for nearly degenerate
/// doublets) and normalizes. `None` if nothing is left.
fn orthonormalize_against(x: &mut [f64], previous: &[Vec<f64>]) -> Option<()> {
    for _ in 0..2 {
        for p in previous {
            let proj = dot(p, x);
            for (xi, pi) in x.iter_mut().zip(p) {
                *xi -= proj * pi;
            }
        }
    }
    let nrm = dot(x, x).sqrt();
    if !(nrm > 0.0 && nrm.is_finite()) {
        return None;
    }
    x.iter_mut().for_each(|v| *v /= nrm);
    Some(())
}

fn residual_norm(t: &SymTridiagonal, v: &[f64], lambda: f64) -> f64 {
    t.apply(v)
        .iter()
        .zip(v)
        .map(|(tv, vi)| (tv - lambda * vi).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Deterministic, non-degenerate start vector.
fn start_vector(n: usize, seed: usize) -> Vec<f64> {
    let mut state = 0x9E37_79B9_7F4A_7C15u64 ^ (seed as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

/// LU factorization with partial pivoting of `T - λI`. Row interchanges
/// give U a second super-diagonal.
struct ShiftedLu {
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    mult: Vec<f64>,
    swapped: Vec<bool>,
}

impl ShiftedLu {
    fn factor(t: &SymTridiagonal, lambda: f64) -> Self {
        let n = t.len();
        let tiny = f64::EPSILON * t.norm_bound().max(f64::MIN_POSITIVE);
        let mut u0: Vec<f64> = t.diag.iter().map(|d| d - lambda).collect();
        let mut u1: Vec<f64> = t.off.clone();
        let mut u2 = vec![0.0; n.saturating_sub(2)];
        let mut mult = vec![0.0; n.saturating_sub(1)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        // `below` is the current sub-diagonal entry of row k+1.
        for k in 0..n.saturating_sub(1) {
            let below = t.off[k];
            if below.abs() > u0[k].abs() {
                swapped[k] = true;
                let m = u0[k] / below;
                mult[k] = m;
                // swap rows k and k+1
                let next_diag = t.diag[k + 1] - lambda;
                let next_sup = if k + 1 < n - 1 { t.off[k + 1] } else { 0.0 };
                let a1 = u1[k];
                u0[k] = below;
                u1[k] = next_diag;
                if k < n - 2 {
                    u2[k] = next_sup;
                }
                u0[k + 1] = a1 - m * next_diag;
                if k + 1 < n - 1 {
                    u1[k + 1] = -m * next_sup;
                }
            } else {
                let pivot = if u0[k] == 0.0 { tiny } else { u0[k] };
                u0[k] = pivot;
                let m = below / pivot;
                mult[k] = m;
                u0[k + 1] -= m * u1[k];
            }
        }
        if let Some(last) = u0.last_mut() {
            if *last == 0.0 {
                *last = tiny;
            }
        }
        for p in u0.iter_mut() {
            if p.abs() < tiny {
                *p = tiny.copysign(if *p == 0.0 { 1.0 } else { *p });
            }
        }
        Self { u0, u1, u2, mult, swapped }
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let n = b.len();
        for k in 0..n.saturating_sub(1) {
            if self.swapped[k] {
                b.swap(k, k + 1);
            }
            b[k + 1] -= self.mult[k] * b[k];
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            if k + 1 < n {
                s -= self.u1[k] * b[k + 1];
            }
            if k + 2 < n {
                s -= self.u2[k] * b[k + 2];
            }
            b[k] = s / self.u0[k];
        }
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 && scale.is_finite() {
            b.iter_mut().for_each(|v| *v /= scale);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn dense(t: &SymTridiagonal) -> DMatrix<f64> {
        let n = t.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = t.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = t.off[i];
                m[(i + 1, i)] = t.off[i];
            }
        }
        m
    }

    fn sample(n: usize) -> SymTridiagonal {
        let diag = (0..n).map(|i| ((i * 7919) % 97) as f64 / 13.0 - 3.0).collect();
        let off = (0..n - 1).map(|i| ((i * 104_729) % 89) as f64 / 31.0 - 1.2).collect();
        SymTridiagonal::new(diag, off)
    }

    #[test]
    fn matches_dense_eigensolver() {
        let t = sample(120);
        let eig = SymmetricEigen::new(dense(&t));
        let mut reference: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        reference.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (values, vectors) = t.lowest_eigenpairs(8).unwrap();
        for (v, r) in values.iter().zip(&reference) {
            assert!((v - r).abs() < 1e-11, "{v} vs {r}");
        }
        for i in 0..8 {
            for j in 0..8 {
                let d = dot(&vectors[i], &vectors[j]);
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guessed_solver_agrees_with_bisection() {
        let t = sample(150);
        let (exact, exact_vecs) = t.lowest_eigenpairs(6).unwrap();
        let guesses: Vec<f64> = exact.iter().map(|e| e + 0.01).collect();
        let (values, vectors) = t.eigenpairs_from_guesses(&guesses).unwrap();
        for k in 0..6 {
            assert!((values[k] - exact[k]).abs() < 1e-11);
            assert!((dot(&vectors[k], &exact_vecs[k]).abs() - 1.0).abs() < 1e-10);
        }
        // wildly wrong guesses fall back to bisection
        let (values, _) = t.eigenpairs_from_guesses(&[100.0; 6]).unwrap();
        for k in 0..6 {
            assert!((values[k] - exact[k]).abs() < 1e-11);
        }
    }

    #[test]
    fn sturm_count_is_monotone() {
        let t = sample(50);
        let (lo, hi) = t.gershgorin();
        assert_eq!(t.count_below(lo - 1.0), 0);
        assert_eq!(t.count_below(hi + 1.0), 50);
        let mut last = 0;
        for i in 0..200 {
            let c = t.count_below(lo + (hi - lo) * i as f64 / 199.0);
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn near_degenerate_pair_stays_orthogonal() {
        // Two weakly coupled copies of the same well produce a tiny splitting.
        let n = 201;
        let diag: Vec<f64> = (0..n)
            .map(|i| {
                let x = (i as f64 - 100.0) / 25.0;
                2.0 + 0.5 * (x * x - 9.0).powi(2)
            })
            .collect();
        let t = SymTridiagonal::new(diag, vec![-1.0; n - 1]);
        let (values, vectors) = t.lowest_eigenpairs(2).unwrap();
        assert!(values[1] - values[0] < 1e-3);
        assert!(dot(&vectors[0], &vectors[1]).abs() < 1e-10);
    }
}
