mod common;

use std::f64::consts::PI;

use squid_dephasing::device::{extract_two_state, well_geometry, DeviceParams, FLUX_QUANTUM, HBAR};
use squid_dephasing::error::Error;
use squid_dephasing::spectrum::{
    build_basis_table, build_hamiltonian, calibrate_critical_current, grid_inner, load_or_build_table,
    solve_eigenbasis, tunnel_splitting, BasisTable, FluxGrid, TableIndex, TableSpec,
};
use squid_dephasing::tridiag::SymTridiagonal;

fn harmonic() -> DeviceParams {
    let mut p = DeviceParams::from_practical(240.0, 100.0, 0.0, 0.5);
    p.harmonic_oracle = true;
    p
}

#[test]
fn harmonic_spacings_match_lc_frequency() {
    let p = harmonic();
    let omega = 1.0 / (p.inductance * p.capacitance).sqrt() * 1e-9;
    assert!((omega - p.lc_frequency()).abs() < 1e-12 * omega);
    let basis = solve_eigenbasis(&p, &FluxGrid::default(), 6).unwrap();
    for w in basis.energies.windows(2) {
        let rel = ((w[1] - w[0]) - omega).abs() / omega;
        assert!(rel < 1e-4, "spacing {} vs {omega}: {rel:e}", w[1] - w[0]);
    }
    // Zero-point energy sits at ω/2 above the potential floor.
    assert!((basis.energies[0] - 0.5 * omega).abs() < 1e-4 * omega);
}

#[test]
fn harmonic_ground_state_is_the_analytic_gaussian() {
    let p = harmonic();
    let grid = FluxGrid::default();
    let basis = solve_eigenbasis(&p, &grid, 1).unwrap();
    let s = p.energy_scales();
    // H = −k ∂² + m (φ − φ_x)²  ⇒  ψ₀ ∝ exp(−√(m/k)(φ − φ_x)²/2).
    let a = (s.inductive / s.kinetic).sqrt();
    let h = grid.spacing();
    let mut gauss: Vec<f64> = grid.points().iter().map(|x| (-0.5 * a * (x - 0.5).powi(2)).exp()).collect();
    let norm = grid_inner(&gauss, &gauss, h).sqrt();
    gauss.iter_mut().for_each(|g| *g /= norm);
    let overlap = grid_inner(&basis.vectors[0], &gauss, h).abs();
    assert!(overlap > 1.0 - 1e-6, "overlap {overlap}");
}

#[test]
fn hamiltonian_is_symmetric_with_documented_entries() {
    let p = common::calibrated();
    let grid = FluxGrid::default();
    let h = build_hamiltonian(&p, &grid).unwrap();
    let k = p.energy_scales().kinetic;
    let step = grid.spacing();
    for (i, d) in h.diag().iter().enumerate() {
        let expected = 2.0 * k / (step * step) + p.potential_energy(grid.point(i));
        assert_eq!(*d, expected);
    }
    assert!(h.off().iter().all(|&o| o == -k / (step * step)));
    // Upper and lower bands are one array, so A = Aᵀ exactly; check via products.
    let x: Vec<f64> = (0..grid.n_points).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
    let y: Vec<f64> = (0..grid.n_points).map(|i| ((i * 104729) % 97) as f64 / 97.0).collect();
    let xay: f64 = x.iter().zip(h.apply(&y)).map(|(a, b)| a * b).sum();
    let yax: f64 = y.iter().zip(h.apply(&x)).map(|(a, b)| a * b).sum();
    assert!((xay - yax).abs() <= 1e-9 * xay.abs());
}

#[test]
fn coarse_grid_is_rejected() {
    let grid = FluxGrid {
        n_points: 501,
        center: 0.5,
        half_width: 3.0,
    };
    assert!(matches!(
        build_hamiltonian(&common::calibrated(), &grid),
        Err(Error::GridTooCoarse { .. })
    ));
}

#[test]
fn levels_near_the_grid_edge_are_rejected() {
    let grid = FluxGrid {
        n_points: 1001,
        center: 0.5,
        half_width: 0.16,
    };
    let err = solve_eigenbasis(&common::calibrated(), &grid, 30).unwrap_err();
    assert!(matches!(err, Error::LevelsAboveBarrierEdge { .. }), "{err}");
}

#[test]
fn eigenvectors_alternate_parity_at_degeneracy() {
    let basis = solve_eigenbasis(&common::calibrated(), &FluxGrid::default(), 10).unwrap();
    for (n, v) in basis.vectors.iter().enumerate() {
        let mirrored: Vec<f64> = v.iter().rev().copied().collect();
        let parity = grid_inner(v, &mirrored, basis.spacing);
        let expected = if n % 2 == 0 { 1.0 } else { -1.0 };
        assert!((parity - expected).abs() < 1e-9, "level {n}: parity {parity}");
    }
}

#[test]
fn eigenvectors_are_orthonormal() {
    let p = common::calibrated().with_flux_bias(0.5 + 3e-5);
    let basis = solve_eigenbasis(&p, &FluxGrid::default(), 10).unwrap();
    for i in 0..10 {
        for j in 0..10 {
            let g = basis.overlap(i, &basis, j);
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((g - want).abs() < 1e-9, "<{i}|{j}> = {g}");
        }
    }
}

#[test]
fn splitting_self_converges_under_grid_doubling() {
    let p = common::calibrated();
    let coarse = tunnel_splitting(&p, &FluxGrid::default()).unwrap();
    let fine = tunnel_splitting(
        &p,
        &FluxGrid {
            n_points: 4001,
            ..FluxGrid::default()
        },
    )
    .unwrap();
    assert!(((fine - coarse) / fine).abs() < 1e-5, "{coarse} vs {fine}");
}

#[test]
fn calibrated_doublet_is_280_mhz() {
    let p = common::calibrated();
    let split = tunnel_splitting(&p, &FluxGrid::default()).unwrap();
    let ghz = split / (2.0 * PI);
    assert!((ghz - common::TARGET_GHZ).abs() < 1e-3 * common::TARGET_GHZ, "{ghz}");
    let beta = p.beta_l();
    assert!(beta > 1.0 && beta < 2.0, "beta {beta}");
}

#[test]
fn calibration_is_reproducible_and_a_fixed_point() {
    let grid = FluxGrid::default();
    let p = common::calibrated();
    let again = calibrate_critical_current(
        &DeviceParams::from_practical(240.0, 100.0, 1.3, 0.5),
        &grid,
        2.0 * PI * common::TARGET_GHZ,
    )
    .unwrap();
    assert!(((again - p.critical_current) / again).abs() < 1e-4);
    let current = tunnel_splitting(&p, &grid).unwrap();
    assert_eq!(calibrate_critical_current(&p, &grid, current).unwrap(), p.critical_current);
}

#[test]
fn unreachable_calibration_target_fails() {
    let p = common::calibrated();
    let plasma = p.lc_frequency();
    assert!(matches!(
        calibrate_critical_current(&p, &FluxGrid::default(), 10.0 * plasma),
        Err(Error::BracketFailure(_))
    ));
}

/// Ground energies of the isolated wells: the grid split at Φ₀/2 with a
/// hard wall, so no tunnelling mixes them.
fn well_energies(p: &DeviceParams, grid: &FluxGrid) -> (f64, f64) {
    let h = build_hamiltonian(p, grid).unwrap();
    let mid = grid.n_points / 2;
    let left = SymTridiagonal::new(h.diag()[..mid].to_vec(), h.off()[..mid - 1].to_vec());
    let right = SymTridiagonal::new(h.diag()[mid + 1..].to_vec(), h.off()[mid + 1..].to_vec());
    (left.eigenvalue(0), right.eigenvalue(0))
}

fn asymmetry_slope(p: &DeviceParams, grid: &FluxGrid) -> f64 {
    let d = 1e-6;
    let (lp, rp) = well_energies(&p.with_flux_bias(0.5 + d), grid);
    let (lm, rm) = well_energies(&p.with_flux_bias(0.5 - d), grid);
    ((lp - rp) - (lm - rm)) / (2.0 * d)
}

#[test]
fn asymmetry_matches_well_energy_slope() {
    let grid = FluxGrid::default();
    let p = common::calibrated();
    let slope = asymmetry_slope(&p, &grid);
    let degenerate = solve_eigenbasis(&p, &grid, 2).unwrap().energies;
    let at = p.with_flux_bias(0.5 + 1e-4);
    let biased = solve_eigenbasis(&at, &grid, 2).unwrap().energies;
    let two = extract_two_state(&at, &degenerate, &biased).unwrap();
    assert!(two.asymmetry > 0.0);
    let estimate = slope * 1e-4;
    assert!(((two.asymmetry - estimate) / estimate).abs() < 0.10, "{} vs {estimate}", two.asymmetry);

    // The classical persistent current sets the same scale.
    let g = well_geometry(&p).unwrap();
    let classical = 2.0 * g.persistent_current * FLUX_QUANTUM / HBAR * 1e-9;
    assert!((slope / classical - 1.0).abs() < 0.25, "{slope} vs {classical}");
}

#[test]
fn table_entry_count_follows_range_and_step() {
    let spec = TableSpec {
        bias_half_range: 60e-6,
        bias_step: 1e-7,
        n_levels: 2,
        reference_levels: 4,
        ic_half_range: 0.0,
        ic_step: 1e-4,
    };
    let table = build_basis_table(&common::calibrated(), &FluxGrid::default(), &spec).unwrap();
    assert_eq!(table.len(), 1201);
    assert_eq!(table.biases.len(), 1201);
    assert!((table.bias_half_range() - 60e-6).abs() < 1e-15);
}

#[test]
fn too_narrow_range_is_rejected() {
    let spec = TableSpec {
        bias_half_range: 0.0,
        ..TableSpec::for_flux_sigma(1.0, 10)
    };
    assert!(matches!(
        build_basis_table(&common::calibrated(), &FluxGrid::default(), &spec),
        Err(Error::RangeTooNarrow(_))
    ));
}

fn doublet(table: &BasisTable, b: usize) -> f64 {
    let e = &table.entry(TableIndex { bias: b, ic: 0 }).energies;
    e[1] - e[0]
}

#[test]
fn table_splitting_is_minimal_at_degeneracy() {
    let table = common::default_table();
    let center = table.center().bias;
    let min = (0..table.biases.len())
        .min_by(|&a, &b| doublet(table, a).total_cmp(&doublet(table, b)))
        .unwrap();
    assert_eq!(min, center);
}

#[test]
fn table_splitting_follows_two_state_form() {
    let table = common::default_table();
    let p = common::calibrated();
    let slope = asymmetry_slope(&p, &table.grid);
    let c = table.center().bias;
    let delta = doublet(table, c);
    for k in 1..=100 {
        for b in [c - k, c + k] {
            let eps = slope * (table.biases[b] - 0.5);
            let split = doublet(table, b);
            let model = delta * delta + eps * eps;
            assert!(((split * split - model) / model).abs() < 0.05, "bias {}: {split}", table.biases[b]);
        }
    }
}

#[test]
fn table_rows_are_orthonormal_and_gauge_continuous() {
    let table = common::default_table();
    let w = table.width();
    let n = table.n_levels();
    assert!(table.reference_leakage < 1e-12, "{}", table.reference_leakage);
    for (k, entry) in table.entries().iter().enumerate() {
        for i in 0..n {
            for j in 0..=i {
                let g: f64 = entry.row(i, w).iter().zip(entry.row(j, w)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-9, "entry {k}: <{i}|{j}> = {g}");
            }
        }
    }
    for b in 0..table.biases.len() - 1 {
        let o = table.overlap(TableIndex { bias: b, ic: 0 }, TableIndex { bias: b + 1, ic: 0 });
        for i in 0..n {
            assert!(o[i * n + i] > 0.0, "level {i} flips sign between {b} and {}", b + 1);
        }
    }
}

#[test]
fn adjacent_projection_round_trip_keeps_norm() {
    let table = common::default_table();
    let n = table.n_levels();
    let mut worst: f64 = 0.0;
    for b in 0..table.biases.len() - 1 {
        let (here, next) = (TableIndex { bias: b, ic: 0 }, TableIndex { bias: b + 1, ic: 0 });
        let forward = table.overlap(here, next);
        for level in 0..n {
            // Column `level` of ⟨next_i|here_level⟩, projected back onto `here`.
            let there: Vec<f64> = (0..n).map(|i| forward[i * n + level]).collect();
            let back = table.overlap(next, here);
            let returned: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| back[i * n + j] * there[j]).sum())
                .collect();
            let norm: f64 = returned.iter().map(|x| x * x).sum();
            worst = worst.max(1.0 - norm);
        }
    }
    assert!(worst < 1e-6, "worst round-trip loss {worst:e}");
}

#[test]
fn lowest_levels_move_no_faster_than_the_persistent_current_allows() {
    let table = common::default_table();
    let p = common::calibrated();
    let g = well_geometry(&p).unwrap();
    let bound = 2.0 * (g.persistent_current * FLUX_QUANTUM / HBAR * 1e-9) * table.spec.bias_step;
    for b in 0..table.biases.len() - 1 {
        let (e0, e1) = (
            &table.entry(TableIndex { bias: b, ic: 0 }).energies,
            &table.entry(TableIndex { bias: b + 1, ic: 0 }).energies,
        );
        for level in 0..2 {
            assert!((e0[level] - e1[level]).abs() <= bound, "level {level} at {b}");
        }
    }
}

#[test]
fn lookup_rounds_to_nearest_and_flags_clamping() {
    let table = common::default_table();
    let c = table.center();
    assert_eq!(table.lookup(0.0, 0.0), (c, false));
    assert_eq!(table.lookup(0.26e-6, 0.0).0.bias, c.bias + 3);
    assert_eq!(table.lookup(-0.24e-6, 0.0).0.bias, c.bias - 2);
    let (edge, clamped) = table.lookup(1.0e-3, 0.0);
    assert!(clamped);
    assert_eq!(edge.bias, table.biases.len() - 1);
    assert_eq!(table.lookup(-1.0e-3, 0.0), (TableIndex { bias: 0, ic: 0 }, true));
}

#[test]
fn cached_table_is_bit_identical_to_a_rebuild() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TableSpec::for_flux_sigma(0.5, 10);
    let p = common::calibrated();
    let grid = FluxGrid::default();
    let built = load_or_build_table(Some(dir.path()), &p, &grid, &spec).unwrap();
    let cached = load_or_build_table(Some(dir.path()), &p, &grid, &spec).unwrap();
    let rebuilt = build_basis_table(&p, &grid, &spec).unwrap();
    let bytes = |t: &BasisTable| {
        let mut v = Vec::new();
        t.write_binary(&mut v).unwrap();
        v
    };
    assert_eq!(bytes(&built), bytes(&cached));
    assert_eq!(bytes(&rebuilt), bytes(&cached));
    assert_eq!(cached.entries(), rebuilt.entries());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn cache_key_tracks_every_input() {
    let p = common::calibrated();
    let grid = FluxGrid::default();
    let spec = TableSpec::for_flux_sigma(10.0, 10);
    let key = BasisTable::cache_key(&p, &grid, &spec);
    assert_ne!(key, BasisTable::cache_key(&p.with_critical_current_scale(1.0001), &grid, &spec));
    assert_ne!(key, BasisTable::cache_key(&p, &FluxGrid { n_points: 2003, ..grid }, &spec));
    assert_ne!(key, BasisTable::cache_key(&p, &grid, &TableSpec { n_levels: 8, ..spec }));
    assert_ne!(key, BasisTable::cache_key(&p, &grid, &TableSpec::for_flux_sigma(11.0, 10)));
}

#[test]
fn critical_current_axis_scales_the_barrier() {
    let spec = TableSpec {
        bias_half_range: 2e-7,
        bias_step: 1e-7,
        n_levels: 4,
        reference_levels: 12,
        ic_half_range: 0.02,
        ic_step: 0.01,
    };
    let table = build_basis_table(&common::calibrated(), &FluxGrid::default(), &spec).unwrap();
    assert_eq!(table.ic_scales.len(), 5);
    assert_eq!(table.len(), 25);
    let c = table.center();
    let split = |ic: usize| {
        let e = &table.entry(TableIndex { bias: c.bias, ic }).energies;
        e[1] - e[0]
    };
    // A taller barrier (larger I_c) suppresses tunnelling.
    for ic in 0..4 {
        assert!(split(ic + 1) < split(ic));
    }
    assert!(table.reference_leakage < 1e-8, "{}", table.reference_leakage);
}
