//! Inference on fitted group time profiles: profile shifting, label matching
//! across independent estimations, the unit-resampling bootstrap with
//! percentile intervals, and interpretation helpers.
//!
//! Group labels are only identified up to permutation, so independent runs
//! of the estimator can assign the same economic group different labels.
//! Before comparing profiles across runs, labels are aligned by minimizing
//! the sum over groups of Euclidean distances between shifted profiles,
//! either by enumerating all G! permutations or by solving the equivalent
//! linear assignment problem (Munkres 1957).

use itertools::Itertools;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{gfe_fit, GfeEstimate, GfeOptions, GroupAssignment, UpdateRule};
use crate::panel::{PanelData, PanelRow};
use crate::rng::derive_seed;
use crate::stats;

/// An element-wise (lower, upper) interval.
pub type Interval = (f64, f64);

/// Shift each profile row to begin at zero: row g becomes
/// `row - row[0]`. The first column is exactly zero.
pub fn shift_profiles(alpha_dot: &[Vec<f64>]) -> Vec<Vec<f64>> {
    alpha_dot
        .iter()
        .map(|row| {
            let first = row[0];
            row.iter().map(|v| v - first).collect()
        })
        .collect()
}

/// Proportional change implied by a log-scale effect: `exp(coef * delta_log) - 1`.
pub fn proportional_effect(coef: f64, delta_log: f64) -> f64 {
    (coef * delta_log).exp() - 1.0
}

/// How the optimal label permutation is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Enumerate all G! permutations; ties break toward the
    /// lexicographically smallest permutation.
    Exhaustive,
    /// Solve the G x G linear assignment problem; returns the same aggregate
    /// distance as the exhaustive search.
    Assignment,
}

/// Exhaustive enumeration is cheap through G = 8 (8! = 40320); beyond that
/// the assignment solver takes over.
pub fn default_match_mode(group_count: usize) -> MatchMode {
    if group_count <= 8 {
        MatchMode::Exhaustive
    } else {
        MatchMode::Assignment
    }
}

/// A bijection on group labels together with its aggregate matching
/// distance. `mapping[g]` is the candidate row aligned to reference row g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPermutation {
    pub mapping: Vec<usize>,
    pub aggregate_distance: f64,
}

impl LabelPermutation {
    /// Whether the mapping is a bijection on 0..G.
    pub fn is_bijection(&self) -> bool {
        let g = self.mapping.len();
        let mut seen = vec![false; g];
        self.mapping.iter().all(|&h| {
            h < g && !std::mem::replace(&mut seen[h], true)
        })
    }

    /// Reorder candidate profile rows into reference labeling.
    pub fn apply_to_profiles(&self, candidate: &[Vec<f64>]) -> Vec<Vec<f64>> {
        debug_assert!(self.is_bijection());
        self.mapping.iter().map(|&h| candidate[h].clone()).collect()
    }

    /// Relabel a candidate assignment into reference labeling.
    pub fn apply_to_assignment(&self, assignment: &GroupAssignment) -> GroupAssignment {
        debug_assert!(self.is_bijection());
        assignment.relabeled(&self.mapping)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `sum_g ||candidate[mapping[g]] - reference[g]||_2`, the quantity the
/// matching minimizes.
pub fn aggregate_distance(reference: &[Vec<f64>], candidate: &[Vec<f64>], mapping: &[usize]) -> f64 {
    mapping
        .iter()
        .enumerate()
        .map(|(g, &h)| euclidean(&reference[g], &candidate[h]))
        .sum()
}

/// Shortest-augmenting-path solution of the square assignment problem;
/// returns the column assigned to each row, minimizing total cost. O(n^3).
fn solve_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut col_row = vec![0usize; n + 1]; // row matched to column j, 1-based; 0 = free
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_col = vec![0usize; n];
    for j in 1..=n {
        if col_row[j] > 0 {
            row_col[col_row[j] - 1] = j - 1;
        }
    }
    row_col
}

/// Minimum assignment cost on `cost` restricted to `rows` x `cols`.
fn assignment_cost(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let sub: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| cost[r][c]).collect())
        .collect();
    let sol = solve_assignment(&sub);
    sol.iter().enumerate().map(|(r, &c)| sub[r][c]).sum()
}

/// Among cost-optimal assignments, pick the lexicographically smallest
/// mapping by fixing columns row by row whenever a completion stays optimal.
fn lexicographic_optimal(cost: &[Vec<f64>], optimum: f64) -> Vec<usize> {
    let n = cost.len();
    let tol = 1e-12 * (1.0 + optimum.abs());
    let mut mapping = Vec::with_capacity(n);
    let mut free: Vec<usize> = (0..n).collect();
    let mut prefix = 0.0;
    for g in 0..n {
        let rest_rows: Vec<usize> = (g + 1..n).collect();
        let mut chosen = None;
        for (slot, &h) in free.iter().enumerate() {
            let rest_cols: Vec<usize> =
                free.iter().enumerate().filter(|&(s, _)| s != slot).map(|(_, &c)| c).collect();
            let total = prefix + cost[g][h] + assignment_cost(cost, &rest_rows, &rest_cols);
            if total <= optimum + tol {
                chosen = Some((slot, h));
                break;
            }
        }
        let (slot, h) = chosen.expect("an optimal completion exists");
        prefix += cost[g][h];
        mapping.push(h);
        free.remove(slot);
    }
    mapping
}

/// Find the permutation of candidate labels minimizing the sum of Euclidean
/// distances between matched profiles, aggregated across all G rows.
///
/// Both search modes return the same aggregate distance; ties break toward
/// the lexicographically smallest permutation.
///
/// # Errors
///
/// The two profile sets must have the same dimensions.
pub fn match_labels(
    reference: &[Vec<f64>],
    candidate: &[Vec<f64>],
    mode: MatchMode,
) -> Result<LabelPermutation> {
    let g = reference.len();
    if g == 0 || candidate.len() != g {
        return Err(Error::invalid(format!(
            "profile sets must have the same group count ({} vs {})",
            g,
            candidate.len()
        )));
    }
    let t = reference[0].len();
    if reference.iter().chain(candidate.iter()).any(|row| row.len() != t) {
        return Err(Error::invalid("profile rows must share one period length"));
    }

    let cost: Vec<Vec<f64>> = (0..g)
        .map(|r| (0..g).map(|c| euclidean(&reference[r], &candidate[c])).collect())
        .collect();

    let mapping = match mode {
        MatchMode::Exhaustive => {
            let mut best: Option<(f64, Vec<usize>)> = None;
            for perm in (0..g).permutations(g) {
                let d: f64 = perm.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, perm));
                }
            }
            best.expect("at least one permutation").1
        }
        MatchMode::Assignment => {
            let raw = solve_assignment(&cost);
            let optimum: f64 = raw.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
            lexicographic_optimal(&cost, optimum)
        }
    };

    let d = mapping.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
    Ok(LabelPermutation {
        mapping,
        aggregate_distance: d,
    })
}

/// Configuration for the unit-resampling bootstrap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub group_count: usize,
    /// Number of replications B.
    pub replications: usize,
    /// Starts per fit, both for the reference fit and each replication.
    pub n_starts: usize,
    pub seed: u64,
    /// Lower and upper percentile in percent, e.g. (2.5, 97.5).
    pub percentiles: (f64, f64),
    /// `None` picks exhaustive search for G <= 8, assignment above.
    pub match_mode: Option<MatchMode>,
    pub update: UpdateRule,
    pub max_iter: usize,
}

impl BootstrapConfig {
    pub fn new(group_count: usize, replications: usize, n_starts: usize, seed: u64) -> Self {
        BootstrapConfig {
            group_count,
            replications,
            n_starts,
            seed,
            percentiles: (2.5, 97.5),
            match_mode: None,
            update: UpdateRule::Modified,
            max_iter: 100,
        }
    }
}

/// Matched per-replication estimates and element-wise percentile intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Requested replication count B.
    pub replications: usize,
    /// Fit on the original sample whose labels anchor the matching.
    pub reference: GfeEstimate,
    /// Replication indices (1-based) of the successful rows below.
    pub successful: Vec<usize>,
    /// Covariate effects per successful replication.
    pub matched_thetas: Vec<Vec<f64>>,
    /// Shifted profiles per successful replication, after label matching.
    pub matched_profiles: Vec<Vec<Vec<f64>>>,
    /// Element-wise (lower, upper) per covariate.
    pub intervals_theta: Vec<Interval>,
    /// Element-wise (lower, upper) per (group, period) of the shifted
    /// profiles.
    pub intervals_profiles: Vec<Vec<Interval>>,
    /// Failed replications with reasons; excluded from the intervals.
    pub failures: Vec<(usize, String)>,
    pub percentiles: (f64, f64),
}

impl BootstrapResult {
    /// Recompute element-wise intervals from the stored matched estimates at
    /// different percentiles (in percent).
    pub fn intervals_at(&self, lower: f64, upper: f64) -> (Vec<Interval>, Vec<Vec<Interval>>) {
        let k = self.reference.theta.len();
        let g = self.reference.profiles.group_count();
        let t = self.reference.profiles.n_periods();
        let theta = (0..k)
            .map(|j| {
                let vals: Vec<f64> = self.matched_thetas.iter().map(|th| th[j]).collect();
                (
                    stats::quantile(&vals, lower / 100.0),
                    stats::quantile(&vals, upper / 100.0),
                )
            })
            .collect();
        let profiles = (0..g)
            .map(|gi| {
                (0..t)
                    .map(|ti| {
                        let vals: Vec<f64> =
                            self.matched_profiles.iter().map(|p| p[gi][ti]).collect();
                        (
                            stats::quantile(&vals, lower / 100.0),
                            stats::quantile(&vals, upper / 100.0),
                        )
                    })
                    .collect()
            })
            .collect();
        (theta, profiles)
    }
}

/// Build the replicate panel for one bootstrap draw: sampled units become
/// distinct synthetic units (so duplicates are demeaned independently), and
/// the original period axis is kept so profiles stay comparable.
fn replicate_panel(panel: &PanelData, sampled: &[usize]) -> Result<PanelData> {
    let mut rows = Vec::with_capacity(panel.n_observations());
    for (slot, &i) in sampled.iter().enumerate() {
        let id = format!("{}#{}", panel.unit_ids()[i], slot);
        for (pos, &ti) in panel.observed(i).iter().enumerate() {
            rows.push(PanelRow {
                unit: id.clone(),
                period: panel.period_ids()[ti],
                outcome: panel.outcome(i)[pos],
                covariates: panel.covariates_at(i, pos).to_vec(),
            });
        }
    }
    PanelData::from_rows_with_axis(&rows, panel.covariate_names(), panel.period_ids())
}

/// Unit-resampling bootstrap with label matching.
///
/// The model is first fit on the original sample; its labels are fixed as
/// the reference. Each replication samples N units with replacement (all of
/// a sampled unit's observations come along), refits with a fresh derived
/// seed and the same number of starts, shifts the profiles, and aligns them
/// to the reference by [`match_labels`]. Intervals are element-wise
/// empirical percentiles, with linear interpolation, across the successful
/// replications.
///
/// # Errors
///
/// A replication that fails (for example rank deficiency after an unlucky
/// resample) is recorded and excluded; if more than 10% of replications
/// fail, the whole call errors.
pub fn bootstrap(panel: &PanelData, config: &BootstrapConfig) -> Result<BootstrapResult> {
    bootstrap_with_sampler(panel, config, |b| {
        let sample_seed = derive_seed(derive_seed(config.seed, b as u64), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        (0..panel.n_units())
            .map(|_| rng.gen_range(0..panel.n_units()))
            .collect()
    })
}

/// [`bootstrap`] with an injectable unit sampler, used by tests to force
/// specific resamples. `sampler(b)` returns the unit indices for
/// replication b (1-based).
pub fn bootstrap_with_sampler(
    panel: &PanelData,
    config: &BootstrapConfig,
    sampler: impl Fn(usize) -> Vec<usize> + Sync,
) -> Result<BootstrapResult> {
    if config.replications == 0 {
        return Err(Error::invalid("bootstrap needs at least one replication"));
    }
    let (lo, hi) = config.percentiles;
    if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
        return Err(Error::invalid("percentiles must satisfy 0 <= lower < upper <= 100"));
    }

    let reference_opts = GfeOptions {
        group_count: config.group_count,
        n_starts: config.n_starts,
        seed: derive_seed(config.seed, 0),
        max_iter: config.max_iter,
        update: config.update,
    };
    let reference = gfe_fit(panel, &reference_opts)?;
    let reference_shifted = reference.profiles.shifted();
    let mode = config
        .match_mode
        .unwrap_or_else(|| default_match_mode(config.group_count));

    type RepOutcome = Result<(Vec<f64>, Vec<Vec<f64>>)>;
    let runs: Vec<(usize, RepOutcome)> = (1..=config.replications)
        .into_par_iter()
        .map(|b| {
            let run = (|| {
                let sampled = sampler(b);
                let replicate = replicate_panel(panel, &sampled)?;
                let fit_seed = derive_seed(derive_seed(config.seed, b as u64), 2);
                let opts = GfeOptions {
                    group_count: config.group_count,
                    n_starts: config.n_starts,
                    seed: fit_seed,
                    max_iter: config.max_iter,
                    update: config.update,
                };
                let est = gfe_fit(&replicate, &opts)?;
                let shifted = est.profiles.shifted();
                let perm = match_labels(&reference_shifted, &shifted, mode)?;
                Ok((est.theta, perm.apply_to_profiles(&shifted)))
            })();
            (b, run)
        })
        .collect();

    let mut successful = Vec::new();
    let mut matched_thetas = Vec::new();
    let mut matched_profiles = Vec::new();
    let mut failures = Vec::new();
    for (b, run) in runs {
        match run {
            Ok((theta, profiles)) => {
                successful.push(b);
                matched_thetas.push(theta);
                matched_profiles.push(profiles);
            }
            Err(e) => failures.push((b, e.to_string())),
        }
    }
    if failures.len() * 10 > config.replications {
        return Err(Error::BootstrapFailureBudget {
            failed: failures.len(),
            total: config.replications,
        });
    }

    let mut result = BootstrapResult {
        replications: config.replications,
        reference,
        successful,
        matched_thetas,
        matched_profiles,
        intervals_theta: Vec::new(),
        intervals_profiles: Vec::new(),
        failures,
        percentiles: config.percentiles,
    };
    let (theta_iv, profile_iv) = result.intervals_at(lo, hi);
    result.intervals_theta = theta_iv;
    result.intervals_profiles = profile_iv;
    Ok(result)
}

/// Extra variables to summarize by group, beyond the panel's own outcome and
/// covariates.
#[derive(Debug, Clone, Default)]
pub struct ExtraColumns {
    /// One value per unit, e.g. time-invariant characteristics.
    pub per_unit: Vec<(String, Vec<f64>)>,
    /// One value per observation, in unit-major observation order.
    pub per_observation: Vec<(String, Vec<f64>)>,
}

/// Distribution summary of one variable within one group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryStats {
    fn from_values(values: &[f64]) -> SummaryStats {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in summaries"));
        SummaryStats {
            count: sorted.len(),
            mean: stats::mean(&sorted),
            sd: stats::sample_sd(&sorted),
            median: stats::quantile_sorted(&sorted, 0.5),
            q1: stats::quantile_sorted(&sorted, 0.25),
            q3: stats::quantile_sorted(&sorted, 0.75),
            min: sorted.first().copied().unwrap_or(f64::NAN),
            max: sorted.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableSummary {
    pub variable: String,
    pub stats: SummaryStats,
}

/// Per-group statistics table: membership plus distribution summaries for
/// each variable. Quartiles interpolate linearly between order statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSummary {
    /// 1-based group label.
    pub group: usize,
    pub unit_count: usize,
    /// Share of all units.
    pub share: f64,
    pub variables: Vec<VariableSummary>,
}

/// Summarize the outcome, every covariate, and any extra columns within each
/// group of the assignment.
pub fn group_summaries(
    panel: &PanelData,
    gamma: &GroupAssignment,
    extra: &ExtraColumns,
) -> Result<Vec<GroupSummary>> {
    if gamma.n_units() != panel.n_units() {
        return Err(Error::invalid(format!(
            "assignment covers {} units but the panel has {}",
            gamma.n_units(),
            panel.n_units()
        )));
    }
    for (name, values) in &extra.per_unit {
        if values.len() != panel.n_units() {
            return Err(Error::invalid(format!(
                "per-unit column `{}` has {} values, expected {}",
                name,
                values.len(),
                panel.n_units()
            )));
        }
    }
    for (name, values) in &extra.per_observation {
        if values.len() != panel.n_observations() {
            return Err(Error::invalid(format!(
                "per-observation column `{}` has {} values, expected {}",
                name,
                values.len(),
                panel.n_observations()
            )));
        }
    }

    let n = panel.n_units();
    let offsets = {
        let mut acc = 0;
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            v.push(acc);
            acc += panel.t_i(i);
        }
        v
    };

    let mut out = Vec::with_capacity(gamma.group_count());
    for g in 0..gamma.group_count() {
        let members: Vec<usize> = (0..n).filter(|&i| gamma.label(i) == g).collect();
        let mut variables = Vec::new();

        let outcome: Vec<f64> = members
            .iter()
            .flat_map(|&i| panel.outcome(i).iter().copied())
            .collect();
        variables.push(VariableSummary {
            variable: "y".to_string(),
            stats: SummaryStats::from_values(&outcome),
        });
        for (j, name) in panel.covariate_names().iter().enumerate() {
            let values: Vec<f64> = members
                .iter()
                .flat_map(|&i| (0..panel.t_i(i)).map(move |pos| panel.covariates_at(i, pos)[j]))
                .collect();
            variables.push(VariableSummary {
                variable: name.clone(),
                stats: SummaryStats::from_values(&values),
            });
        }
        for (name, values) in &extra.per_unit {
            let subset: Vec<f64> = members.iter().map(|&i| values[i]).collect();
            variables.push(VariableSummary {
                variable: name.clone(),
                stats: SummaryStats::from_values(&subset),
            });
        }
        for (name, values) in &extra.per_observation {
            let subset: Vec<f64> = members
                .iter()
                .flat_map(|&i| values[offsets[i]..offsets[i] + panel.t_i(i)].iter().copied())
                .collect();
            variables.push(VariableSummary {
                variable: name.clone(),
                stats: SummaryStats::from_values(&subset),
            });
        }

        out.push(GroupSummary {
            group: g + 1,
            unit_count: members.len(),
            share: members.len() as f64 / n as f64,
            variables,
        });
    }
    Ok(out)
}
