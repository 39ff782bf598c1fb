//! Shared fixtures for the integration and acceptance suites.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use gfe_core::panel::{PanelData, PanelRow};
use gfe_core::simulation::{equal_norm_profiles, DgpSpec, GroupAllocation, Missingness};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Balanced panel with one set of common time effects, unit intercepts, and
/// Gaussian noise; no group structure.
pub fn random_balanced_panel(n: usize, t: usize, k: usize, seed: u64) -> PanelData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let alpha: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut rows = Vec::with_capacity(n * t);
    for i in 0..n {
        let c: f64 = rng.gen_range(-2.0..2.0);
        for ti in 0..t {
            let x: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let outcome =
                x.iter().zip(&theta).map(|(xv, th)| xv * th).sum::<f64>() + c + alpha[ti] + 0.5 * noise;
            rows.push(PanelRow {
                unit: format!("u{:04}", i),
                period: ti as i64 + 1,
                outcome,
                covariates: x,
            });
        }
    }
    let names: Vec<String> = (1..=k).map(|j| format!("x{}", j)).collect();
    PanelData::from_rows(&rows, &names).unwrap()
}

/// Unbalanced panel with per-unit contiguous observation windows, the usual
/// shape when different sources cover different spans. The first two units
/// observe every period so the axis is always fully covered.
pub fn random_unbalanced_panel(n: usize, t: usize, k: usize, seed: u64) -> PanelData {
    assert!(n >= 3 && t >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let alpha: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut rows = Vec::new();
    for i in 0..n {
        let (start, len) = if i < 2 {
            (0, t)
        } else {
            let start = rng.gen_range(0..t - 1);
            let len = rng.gen_range(2..=t - start);
            (start, len)
        };
        let c: f64 = rng.gen_range(-2.0..2.0);
        for ti in start..start + len {
            let x: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let outcome =
                x.iter().zip(&theta).map(|(xv, th)| xv * th).sum::<f64>() + c + alpha[ti] + 0.5 * noise;
            rows.push(PanelRow {
                unit: format!("u{:04}", i),
                period: ti as i64 + 1,
                outcome,
                covariates: x,
            });
        }
    }
    let names: Vec<String> = (1..=k).map(|j| format!("x{}", j)).collect();
    PanelData::from_rows(&rows, &names).unwrap()
}

/// Mean pairwise per-period root-mean-square distance between profile rows.
pub fn mean_pairwise_rms_gap(profiles: &[Vec<f64>]) -> f64 {
    let g = profiles.len();
    let t = profiles[0].len() as f64;
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..g {
        for b in a + 1..g {
            let ss: f64 = profiles[a]
                .iter()
                .zip(&profiles[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            total += (ss / t).sqrt();
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Four-group generative model sized like a large administrative panel,
/// with noise calibrated so the typical per-period gap between profiles is
/// about three noise standard deviations and covariates correlated with the
/// profiles. Used by the recovery and bootstrap-coverage checks.
pub fn stability_dgp(n_units: usize) -> DgpSpec {
    let profiles = equal_norm_profiles(4, 12, 0.5);
    let sigma_v = mean_pairwise_rms_gap(&profiles) / 3.0;
    DgpSpec {
        theta: vec![0.5, -0.5],
        profiles,
        allocation: GroupAllocation::Shares(vec![0.25; 4]),
        sigma_x: vec![1.0, 1.0],
        sigma_v,
        rho: vec![
            vec![0.4, 0.3, 0.2, 0.35],
            vec![-0.3, -0.25, -0.2, -0.3],
        ],
        n_units,
        missingness: Missingness::Balanced,
    }
}

/// Three well-separated groups with no noise: the estimator must recover
/// everything exactly.
pub fn zero_noise_dgp() -> DgpSpec {
    DgpSpec {
        theta: vec![0.7],
        profiles: equal_norm_profiles(3, 12, 0.5),
        allocation: GroupAllocation::Shares(vec![0.34, 0.33, 0.33]),
        sigma_x: vec![1.0],
        sigma_v: 0.0,
        rho: vec![vec![0.2, 0.0, -0.2]],
        n_units: 300,
        missingness: Missingness::Balanced,
    }
}

/// Correlation-fidelity model at large-administrative-panel dimensions:
/// N = 9516 units over T = 12 periods, a spread of correlation targets per
/// (covariate, group).
pub fn correlation_dgp() -> DgpSpec {
    DgpSpec {
        theta: vec![0.144, -0.147],
        profiles: equal_norm_profiles(4, 12, 0.5),
        allocation: GroupAllocation::Shares(vec![0.25; 4]),
        sigma_x: vec![1.0, 0.8],
        sigma_v: 0.3,
        rho: vec![
            vec![0.0, 0.2, 0.4, -0.4],
            vec![0.5, -0.5, 0.25, -0.1],
        ],
        n_units: 9516,
        missingness: Missingness::Balanced,
    }
}

/// Plain Pearson correlation, written out directly so checks against it are
/// independent of the library's statistics helpers.
pub fn pearson_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}
