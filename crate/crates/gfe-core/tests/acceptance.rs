//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with its runtime (visible under `--nocapture`).
//!
//! The tests share a lock so each criterion gets the machine to itself and
//! the runtime budgets are meaningful.

mod common;

use std::sync::Mutex;
use std::time::Instant;

use gfe_core::estimator::{
    assignment_step, gfe_fit, GfeOptions, UpdateRule,
};
use gfe_core::inference::{
    bootstrap, match_labels, proportional_effect, BootstrapConfig, MatchMode,
};
use gfe_core::panel::{within_transform, PanelData, PanelRow};
use gfe_core::regression::{fit_2wfe, fit_time_effects, TimeDummyCoding};
use gfe_core::simulation::{monte_carlo, simulate_panel, McConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

static EXCLUSIVE: Mutex<()> = Mutex::new(());

fn run_exclusive<F: FnOnce()>(number: u32, name: &str, budget_secs: f64, body: F) {
    let guard = EXCLUSIVE.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
    let start = Instant::now();
    body();
    let elapsed = start.elapsed().as_secs_f64();
    drop(guard);
    println!(
        "criterion {:2} {:<28} PASS in {:7.2}s (budget {:.0}s)",
        number, name, elapsed, budget_secs
    );
    assert!(
        elapsed < budget_secs,
        "criterion {} exceeded its {:.0}s budget: {:.2}s",
        number,
        budget_secs,
        elapsed
    );
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Criterion 1: the three time-dummy codings agree on balanced panels.
#[test]
fn criterion_01_balanced_coding_equivalence() {
    run_exclusive(1, "balanced coding equivalence", 10.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for trial in 0..100 {
            let n = rng.gen_range(5..=50);
            let t = rng.gen_range(3..=12);
            let k = rng.gen_range(0..=3);
            let panel = common::random_balanced_panel(n, t, k, 7000 + trial);
            let dp = within_transform(&panel);
            let full = fit_time_effects(&dp, TimeDummyCoding::Full).unwrap();
            let omit = fit_time_effects(&dp, TimeDummyCoding::OmitFirst).unwrap();
            let demeaned = fit_time_effects(&dp, TimeDummyCoding::UnitDemeaned).unwrap();
            for other in [&omit, &demeaned] {
                assert!(max_abs_diff(&full.theta, &other.theta) < 1e-10);
                assert!(max_abs_diff(&full.alpha_tilde, &other.alpha_tilde) < 1e-10);
            }
        }
    });
}

/// Criterion 2: on the two-period counter-example dataset the full-dummy
/// coding sums to exactly 1/6 and the unit-demeaned coding to exactly 0.
#[test]
fn criterion_02_counter_example_exactness() {
    run_exclusive(2, "counter-example exactness", 1.0, || {
        let rows: Vec<PanelRow> = [("1", 1, 1.0), ("1", 2, 2.0), ("2", 1, 3.0), ("3", 1, 4.0), ("3", 2, 5.0)]
            .iter()
            .map(|&(unit, period, outcome)| PanelRow {
                unit: unit.to_string(),
                period,
                outcome,
                covariates: vec![],
            })
            .collect();
        let panel = PanelData::from_rows(&rows, &[]).unwrap();
        let dp = within_transform(&panel);
        let full = fit_time_effects(&dp, TimeDummyCoding::Full).unwrap();
        let sum_full: f64 = full.alpha_dot.iter().sum();
        assert!((sum_full - 1.0 / 6.0).abs() <= 1e-12, "sum {}", sum_full);
        let demeaned = fit_time_effects(&dp, TimeDummyCoding::UnitDemeaned).unwrap();
        let sum_demeaned: f64 = demeaned.alpha_dot.iter().sum();
        assert!(sum_demeaned.abs() <= 1e-12, "sum {}", sum_demeaned);
    });
}

/// Criterion 3: with one group, the modified fit equals two-way fixed
/// effects and the unmodified fit equals the full-dummy regression, on
/// unbalanced panels.
#[test]
fn criterion_03_one_group_oracle() {
    run_exclusive(3, "one-group oracle", 30.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        for trial in 0..50 {
            let n = rng.gen_range(20..=50);
            let t = rng.gen_range(4..=10);
            let k = rng.gen_range(1..=3);
            let panel = common::random_unbalanced_panel(n, t, k, 8000 + trial);

            let modified = gfe_fit(&panel, &GfeOptions::new(1, 2, trial)).unwrap();
            let reference = fit_2wfe(&panel).unwrap();
            assert!(max_abs_diff(&modified.theta, &reference.theta) < 1e-10);
            assert!(max_abs_diff(modified.profiles.row(0), &reference.alpha_dot) < 1e-10);

            let unmodified = gfe_fit(
                &panel,
                &GfeOptions::new(1, 2, trial).with_update(UpdateRule::Unmodified),
            )
            .unwrap();
            let dp = within_transform(&panel);
            let full = fit_time_effects(&dp, TimeDummyCoding::Full).unwrap();
            assert!(max_abs_diff(&unmodified.theta, &full.theta) < 1e-10);
            assert!(max_abs_diff(unmodified.profiles.row(0), &full.alpha_dot) < 1e-10);
        }
    });
}

/// Criterion 4: the objective never rises across iterations and the
/// returned grouping is a fixed point of the assignment step.
#[test]
fn criterion_04_monotonicity_and_fixed_point() {
    run_exclusive(4, "monotone, fixed-point fits", 120.0, || {
        for trial in 0..100u64 {
            let panel = common::random_unbalanced_panel(200, 8, 1, 9000 + trial);
            let est = gfe_fit(&panel, &GfeOptions::new(3, 2, trial)).unwrap();
            for w in est.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "objective rose: {:?}", w);
            }
            assert!(est.converged, "trial {} did not converge", trial);
            let dp = within_transform(&panel);
            let again = assignment_step(&dp, &est.theta, &est.profiles, &est.assignment);
            assert_eq!(again, est.assignment, "assignment not a fixed point");
        }
    });
}

/// Criterion 5: with zero noise and well-separated profiles the estimator
/// recovers the grouping and parameters exactly, for 20 of 20 seeds.
#[test]
fn criterion_05_zero_noise_recovery() {
    run_exclusive(5, "zero-noise exact recovery", 120.0, || {
        let spec = common::zero_noise_dgp();
        // Well-separated: every pair of shifted profiles at least 1 apart.
        let shifted = gfe_core::shift_profiles(&spec.profiles);
        for a in 0..shifted.len() {
            for b in a + 1..shifted.len() {
                let d: f64 = shifted[a]
                    .iter()
                    .zip(&shifted[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 1.0, "profiles {} and {} too close: {}", a, b, d);
            }
        }
        let mut config = McConfig::new(20, 3, 50, 505);
        config.match_mode = Some(MatchMode::Exhaustive);
        let result = monte_carlo(&spec, &config).unwrap();
        assert!(result.failures.is_empty());
        assert_eq!(result.replications.len(), 20);
        for rep in &result.replications {
            assert_eq!(rep.misclassification, 0.0, "seed {} misclassified", rep.index);
            assert!(max_abs_diff(&rep.theta, &spec.theta) < 1e-8);
            assert!(rep.objective < 1e-12, "objective {}", rep.objective);
        }
    });
}

/// Criterion 6: on a noisy, correlated four-group model the grouped fit is
/// nearly unbiased while the one-group fit is visibly biased.
#[test]
#[allow(clippy::needless_range_loop)]
fn criterion_06_noisy_recovery_and_debiasing() {
    run_exclusive(6, "noisy recovery, de-biasing", 1800.0, || {
        let spec = common::stability_dgp(2000);
        let config = McConfig::new(50, 4, 100, 606);
        let result = monte_carlo(&spec, &config).unwrap();
        assert!(result.failures.is_empty());
        assert!(
            result.mean_misclassification < 0.05,
            "mean misclassification {}",
            result.mean_misclassification
        );

        // One-group estimates on the same fifty panels.
        let k = spec.theta.len();
        let mut theta_g1_mean = vec![0.0; k];
        for rep in &result.replications {
            let (panel, _) = simulate_panel(&spec, rep.sim_seed).unwrap();
            let one_group = fit_2wfe(&panel).unwrap();
            for j in 0..k {
                theta_g1_mean[j] += one_group.theta[j] / result.replications.len() as f64;
            }
        }

        for j in 0..k {
            let bias = (result.theta_mean[j] - spec.theta[j]).abs();
            assert!(bias < 0.02, "covariate {} bias {}", j, bias);
            let bias_g1 = (theta_g1_mean[j] - spec.theta[j]).abs();
            assert!(
                bias_g1 > 3.0 * bias,
                "covariate {}: one-group bias {} not 3x grouped bias {}",
                j,
                bias_g1,
                bias
            );
        }
    });
}

/// Criterion 7: generated covariates hit their per-group correlation
/// targets at large-panel dimensions.
#[test]
fn criterion_07_correlation_fidelity() {
    run_exclusive(7, "generator correlation targets", 60.0, || {
        let spec = common::correlation_dgp();
        let (panel, truth) = simulate_panel(&spec, 707).unwrap();
        let panel = &panel;
        assert_eq!(panel.n_units(), 9516);
        assert_eq!(panel.n_periods(), 12);
        for g in 0..spec.profiles.len() {
            let members: Vec<usize> = (0..panel.n_units())
                .filter(|&i| truth.gamma.label(i) == g)
                .collect();
            let alphas: Vec<f64> = members
                .iter()
                .flat_map(|&i| panel.observed(i).iter().map(|&ti| spec.profiles[g][ti]))
                .collect();
            for kk in 0..spec.theta.len() {
                let xs: Vec<f64> = members
                    .iter()
                    .flat_map(|&i| {
                        (0..panel.t_i(i)).map(move |pos| panel.covariates_at(i, pos)[kk])
                    })
                    .collect();
                let r = common::pearson_oracle(&xs, &alphas);
                let target = spec.rho[kk][g];
                assert!(
                    (r - target).abs() <= 0.02,
                    "rho[{}][{}] = {} vs target {}",
                    kk,
                    g,
                    r,
                    target
                );
            }
        }
    });
}

/// Criterion 8: assignment-mode label matching attains the exhaustive
/// optimum; identity and reversal are matched exactly.
#[test]
fn criterion_08_label_matching() {
    run_exclusive(8, "label matching optimality", 30.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        for trial in 0..1000 {
            let g = rng.gen_range(2..=7);
            let t = rng.gen_range(3..=12);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..g)
                    .map(|_| (0..t).map(|_| StandardNormal.sample(rng)).collect())
                    .collect()
            };
            let reference = draw(&mut rng);
            let candidate = draw(&mut rng);
            let exhaustive = match_labels(&reference, &candidate, MatchMode::Exhaustive).unwrap();
            let assignment = match_labels(&reference, &candidate, MatchMode::Assignment).unwrap();
            let scale = 1.0 + exhaustive.aggregate_distance.abs();
            assert!(
                (exhaustive.aggregate_distance - assignment.aggregate_distance).abs()
                    <= 1e-10 * scale,
                "trial {}: {} vs {}",
                trial,
                exhaustive.aggregate_distance,
                assignment.aggregate_distance
            );

            let identity = match_labels(&reference, &reference, MatchMode::Assignment).unwrap();
            assert_eq!(identity.mapping, (0..g).collect::<Vec<_>>());
            assert_eq!(identity.aggregate_distance, 0.0);
            let reversed: Vec<Vec<f64>> = reference.iter().rev().cloned().collect();
            let unreversed = match_labels(&reference, &reversed, MatchMode::Assignment).unwrap();
            assert_eq!(unreversed.mapping, (0..g).rev().collect::<Vec<_>>());
            assert_eq!(unreversed.aggregate_distance, 0.0);
        }
    });
}

/// Criterion 9: element-wise 95% bootstrap intervals for shifted profiles
/// cover the generative values at close to nominal rate.
#[test]
fn criterion_09_bootstrap_coverage() {
    run_exclusive(9, "bootstrap interval coverage", 7200.0, || {
        let spec = common::stability_dgp(2000);
        let trials = 30;
        let mut covered = 0usize;
        let mut cells = 0usize;
        for trial in 0..trials {
            let (panel, truth) = simulate_panel(&spec, 90_000 + trial).unwrap();
            let mut config = BootstrapConfig::new(4, 200, 12, 50_000 + trial);
            config.match_mode = Some(MatchMode::Exhaustive);
            let result = bootstrap(&panel, &config).unwrap();

            // Express the truth in the reference fit's labels.
            let reference_shifted = result.reference.profiles.shifted();
            let to_reference = match_labels(
                &truth.shifted_profiles,
                &reference_shifted,
                MatchMode::Exhaustive,
            )
            .unwrap();
            for (g_true, &g_ref) in to_reference.mapping.iter().enumerate() {
                for t in 0..spec.profiles[0].len() {
                    let (lo, hi) = result.intervals_profiles[g_ref][t];
                    let truth_value = truth.shifted_profiles[g_true][t];
                    cells += 1;
                    if truth_value >= lo && truth_value <= hi {
                        covered += 1;
                    }
                }
            }
        }
        let rate = covered as f64 / cells as f64;
        println!("    coverage {}/{} = {:.3}", covered, cells, rate);
        assert!(
            (0.90..=1.0).contains(&rate),
            "coverage {:.3} outside [0.90, 1.00]",
            rate
        );
    });
}

/// Criterion 10: log-scale interpretation helpers reproduce the printed
/// proportional effects.
#[test]
fn criterion_10_interpretation_helpers() {
    run_exclusive(10, "interpretation helpers", 1.0, || {
        assert!((proportional_effect(0.144, 0.1) - 0.01450).abs() <= 1e-5);
        assert!((proportional_effect(-0.147, 0.1) - (-0.01460)).abs() <= 1e-5);
        assert!((0.1_f64.exp() - 1.0 - 0.10517).abs() <= 1e-5);
    });
}
