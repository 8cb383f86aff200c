mod common;

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use squid_dephasing::analysis::{fit_damped_cosine, fit_exponential_decay, PhaseMode};
use squid_dephasing::ensemble::{
    density_eigenvalues, reduced_density_matrix, run_ensemble, to_flux_basis, trajectory_seed, write_ensemble_csv,
    ChannelNoise, EnsembleConfig, EnsembleResult,
};
use squid_dephasing::error::Error;
use squid_dephasing::evolution::{prepare_initial_state, PropagationConfig, QuantumState};
use squid_dephasing::noise::NoiseChannel;
use squid_dephasing::spectrum::{build_basis_table, FluxGrid, TableSpec};
use statrs::distribution::{ContinuousCDF, StudentsT};

fn config(sigma: f64, n: usize, seed: u64) -> EnsembleConfig {
    EnsembleConfig {
        n_trajectories: n,
        master_seed: seed,
        propagation: PropagationConfig::default(),
        flux_noise: ChannelNoise {
            sigma,
            cutoff: 2.0 * PI * 4.0,
        },
        critical_current_noise: None,
    }
}

fn initial() -> QuantumState {
    prepare_initial_state(common::default_table(), 1000.0).unwrap().state
}

fn check_density(result: &EnsembleResult) {
    for rho in &result.rho {
        assert!((rho[0][1] - rho[1][0].conj()).norm() < 1e-12);
        assert!(rho[0][0].im.abs() < 1e-12 && rho[1][1].im.abs() < 1e-12);
        assert!((rho[0][0].re + rho[1][1].re - 1.0).abs() < 1e-9);
        assert!(density_eigenvalues(rho)[0] >= -1e-9);
    }
}

fn coherence(result: &EnsembleResult) -> Vec<f64> {
    result.rho.iter().map(|r| r[0][1].norm()).collect()
}

/// Spearman rank correlation with its one-sided p-value for a negative trend.
fn spearman_negative(x: &[f64], y: &[f64]) -> (f64, f64) {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
    let var: f64 = rx.iter().map(|a| (a - mean).powi(2)).sum();
    let rho = cov / var;
    let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
    let p = StudentsT::new(0.0, 1.0, n - 2.0).unwrap().cdf(t);
    (rho, p)
}

#[test]
fn noiseless_members_stay_coherent() {
    let table = common::default_table();
    let initial = initial();
    let result = run_ensemble(table, &config(0.0, 4, 1), &initial).unwrap();
    check_density(&result);
    let c = coherence(&result);
    for x in &c {
        assert!((x - c[0]).abs() < 1e-12);
    }
    assert!((c[0] - 0.5).abs() < 0.01, "{}", c[0]);
    let fit = fit_damped_cosine(&result.times, &result.p_mean, PhaseMode::Fixed).unwrap();
    assert!(fit.decay_rate < 1e-6, "{}", fit.decay_rate);
}

#[test]
fn single_member_gives_a_pure_state() {
    let result = run_ensemble(common::default_table(), &config(10.0, 1, 9), &initial()).unwrap();
    check_density(&result);
    for rho in &result.rho {
        let [lo, hi] = density_eigenvalues(rho);
        assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }
}

#[test]
fn reduced_density_examples() {
    let s = [Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)];
    let rho = reduced_density_matrix(&[s, s, s]).unwrap();
    let [lo, hi] = density_eigenvalues(&rho);
    assert!(lo.abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);

    let a = [Complex64::new(FRAC_1_SQRT_2, 0.0), Complex64::new(FRAC_1_SQRT_2, 0.0)];
    let b = [a[0], -a[1]];
    assert_eq!(reduced_density_matrix(&[a, b]).unwrap()[0][1], Complex64::new(0.0, 0.0));

    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 400;
        let members: Vec<[Complex64; 2]> = (0..n)
            .map(|_| {
                let theta = rng.random_range(0.0..2.0 * PI);
                [a[0], Complex64::from_polar(FRAC_1_SQRT_2, theta)]
            })
            .collect();
        let rho = reduced_density_matrix(&members).unwrap();
        assert!(rho[0][1].norm() < 2.0 / (n as f64).sqrt());
    }

    let weak = [Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)];
    assert!(matches!(
        reduced_density_matrix(&[weak]),
        Err(Error::TwoLevelWeightDeficit { .. })
    ));
    assert!(reduced_density_matrix(&[]).is_err());
}

#[test]
fn flux_basis_rotation_localizes_the_initial_state() {
    let result = run_ensemble(common::default_table(), &config(0.0, 2, 1), &initial()).unwrap();
    let flux = to_flux_basis(&result.rho[0]);
    // Left-localized start: almost all weight on |L⟩.
    assert!(flux[1][1].re > 0.99, "{:?}", flux);
    let back = to_flux_basis(&flux);
    for i in 0..2 {
        for j in 0..2 {
            assert!((back[i][j] - result.rho[0][i][j]).norm() < 1e-15);
        }
    }
}

#[test]
fn mean_observable_matches_the_coherence() {
    let result = run_ensemble(common::default_table(), &config(10.0, 50, 3), &initial()).unwrap();
    check_density(&result);
    for k in 0..result.times.len() {
        let from_rho = 2.0 * result.rho[k][0][1].re * result.two_level_weight[k];
        assert!((result.p_mean[k] - from_rho).abs() < 1e-9);
    }
    assert!(result.leakage_max < 1e-3);
    assert_eq!(result.total_steps, 50 * 350);
    for (i, seed) in result.flux_seeds.iter().enumerate() {
        assert_eq!(*seed, trajectory_seed(3, i as u64, NoiseChannel::FluxBias));
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let table = common::default_table();
    let initial = initial();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ensemble(table, &config(8.0, 12, 77), &initial).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a, b);
    assert_eq!(a, run_ensemble(table, &config(8.0, 12, 77), &initial).unwrap());
}

#[test]
fn seeds_are_distinct_per_member_and_channel() {
    let mut seen = std::collections::HashSet::new();
    for master in [0u64, 1, 2] {
        for index in 0..100 {
            for channel in [NoiseChannel::FluxBias, NoiseChannel::CriticalCurrent] {
                assert!(seen.insert(trajectory_seed(master, index, channel)));
            }
        }
    }
}

#[test]
fn coherence_decays_under_noise() {
    let table = common::default_table();
    let initial = initial();
    for sigma in [4.0, 10.0] {
        for seed in [1, 2, 3] {
            let result = run_ensemble(table, &config(sigma, 50, seed), &initial).unwrap();
            check_density(&result);
            let (rho, p) = spearman_negative(&result.times, &coherence(&result));
            assert!(p < 0.05, "σ = {sigma}, seed {seed}: Spearman {rho}, p = {p}");
        }
    }
}

#[test]
fn coherence_decay_agrees_with_the_fitted_rate() {
    let table = common::default_table();
    let result = run_ensemble(table, &config(10.0, 50, 1), &initial()).unwrap();
    let (d_rho, ci_rho) = fit_exponential_decay(&result.times, &coherence(&result)).unwrap();
    let fit = fit_damped_cosine(&result.times, &result.p_mean, PhaseMode::Fixed).unwrap();
    let joint = (ci_rho.powi(2) + fit.decay_rate_ci.powi(2)).sqrt();
    assert!(d_rho > 0.0 && fit.decay_rate > 0.0);
    assert!(
        (d_rho - fit.decay_rate).abs() < 3.0 * joint,
        "{d_rho} ± {ci_rho} vs {} ± {}",
        fit.decay_rate,
        fit.decay_rate_ci
    );
}

#[test]
fn narrow_table_exceeds_the_clamp_budget() {
    let spec = TableSpec {
        bias_half_range: 2e-6,
        bias_step: 1e-7,
        n_levels: 4,
        reference_levels: 12,
        ic_half_range: 0.0,
        ic_step: 1e-4,
    };
    let table = build_basis_table(&common::calibrated(), &FluxGrid::default(), &spec).unwrap();
    let initial = prepare_initial_state(&table, 1000.0).unwrap().state;
    let err = run_ensemble(&table, &config(10.0, 4, 1), &initial).unwrap_err();
    assert!(matches!(err, Error::ClampBudgetExceeded { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn failing_member_is_named() {
    let spec = TableSpec {
        bias_half_range: 2e-7,
        bias_step: 1e-7,
        n_levels: 4,
        reference_levels: 12,
        ic_half_range: 0.01,
        ic_step: 1e-3,
    };
    let table = build_basis_table(&common::calibrated(), &FluxGrid::default(), &spec).unwrap();
    let initial = prepare_initial_state(&table, 1000.0).unwrap().state;
    let mut cfg = config(0.0, 3, 1);
    cfg.critical_current_noise = Some(ChannelNoise {
        sigma: 0.003,
        cutoff: 2.0 * PI * 4.0,
    });
    match run_ensemble(&table, &cfg, &initial).unwrap_err() {
        err @ Error::Trajectory { index, .. } => {
            assert!(index < 3);
            assert_eq!(err.exit_code(), 4);
            assert!(err.to_string().contains(&format!("trajectory {index}")));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn empty_ensemble_is_rejected() {
    let err = run_ensemble(common::default_table(), &config(1.0, 0, 1), &initial()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn csv_columns() {
    let result = run_ensemble(common::default_table(), &config(2.0, 2, 1), &initial()).unwrap();
    let mut out = Vec::new();
    write_ensemble_csv(&result, "", &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t_ns,P_mean,re_rho01,im_rho01,rho00,leakage_mean"));
    assert_eq!(lines.count(), 351);
}

proptest::proptest! {
    #[test]
    fn reduced_density_is_a_valid_state(
        members in proptest::collection::vec((0.0f64..1.0, 0.0f64..6.3, 0.0f64..6.3, 0.975f64..=1.0), 1..40)
    ) {
        let states: Vec<[Complex64; 2]> = members
            .iter()
            .map(|&(mix, a, b, w)| {
                let (c0, c1) = (mix.sqrt() * w.sqrt(), (1.0 - mix).sqrt() * w.sqrt());
                [Complex64::from_polar(c0, a), Complex64::from_polar(c1, b)]
            })
            .collect();
        let rho = reduced_density_matrix(&states).unwrap();
        proptest::prop_assert!((rho[0][1] - rho[1][0].conj()).norm() < 1e-12);
        proptest::prop_assert!((rho[0][0].re + rho[1][1].re - 1.0).abs() < 1e-9);
        let [lo, hi] = density_eigenvalues(&rho);
        proptest::prop_assert!(lo >= -1e-9 && hi <= 1.0 + 1e-9);
    }
}
