//! Grouped fixed-effects estimation by alternating minimization, after
//! Bonhomme and Manresa (2015), "Grouped Patterns of Heterogeneity in Panel
//! Data".
//!
//! Units belong to one of G latent groups sharing a time profile. The fit
//! alternates a grouping step (each unit moves to the group with the
//! smallest sum of squared residuals) with a parameter step (least squares
//! for the covariate effects and all group profiles given the grouping),
//! restarted from many random initializations.
//!
//! The default parameter step interacts group identity with per-unit
//! demeaned time dummies, so the one-group model reproduces a standard
//! two-way fixed-effects fit even on unbalanced panels and every estimated
//! profile sums to zero over time. The unmodified step (raw time dummies)
//! is kept for comparison runs; on balanced data the two coincide.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{within_transform, DemeanedPanel, PanelData};
use crate::regression::{alpha_dot_from_relative, fit_2wfe, least_squares_named};
use crate::rng::derive_seed;

/// Which parameter-update step the fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// Group identity interacted with T-1 per-unit demeaned time dummies,
    /// then converted to zero-sum profiles. One group equals two-way fixed
    /// effects on any panel.
    Modified,
    /// Group identity interacted with T raw time dummies. Kept for
    /// robustness comparisons; differs from `Modified` only on unbalanced
    /// panels.
    Unmodified,
}

/// A grouping of units into `group_count` groups, labels `0..group_count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    labels: Vec<usize>,
    group_count: usize,
}

impl GroupAssignment {
    pub fn new(labels: Vec<usize>, group_count: usize) -> Result<GroupAssignment> {
        if group_count == 0 {
            return Err(Error::invalid("group count must be at least 1"));
        }
        if let Some(&bad) = labels.iter().find(|&&g| g >= group_count) {
            return Err(Error::invalid(format!(
                "label {} out of range for {} groups",
                bad, group_count
            )));
        }
        Ok(GroupAssignment { labels, group_count })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, unit: usize) -> usize {
        self.labels[unit]
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn n_units(&self) -> usize {
        self.labels.len()
    }

    /// Units per group.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.group_count];
        for &g in &self.labels {
            counts[g] += 1;
        }
        counts
    }

    /// Groups with no members, ascending.
    pub fn empty_groups(&self) -> Vec<usize> {
        self.counts()
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c == 0)
            .map(|(g, _)| g)
            .collect()
    }

    /// Apply a relabeling: the unit labeled `g` becomes `mapping^{-1}(g)`,
    /// i.e. `mapping[new] == old`. Used when aligning labels across fits.
    pub fn relabeled(&self, mapping: &[usize]) -> GroupAssignment {
        let mut inverse = vec![0; self.group_count];
        for (new, &old) in mapping.iter().enumerate() {
            inverse[old] = new;
        }
        GroupAssignment {
            labels: self.labels.iter().map(|&g| inverse[g]).collect(),
            group_count: self.group_count,
        }
    }
}

/// G time profiles over the global period axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTimeProfiles {
    alpha_dot: Vec<Vec<f64>>,
}

impl GroupTimeProfiles {
    pub fn new(alpha_dot: Vec<Vec<f64>>) -> Result<GroupTimeProfiles> {
        if alpha_dot.is_empty() {
            return Err(Error::invalid("profiles need at least one group"));
        }
        let t = alpha_dot[0].len();
        if t == 0 || alpha_dot.iter().any(|row| row.len() != t) {
            return Err(Error::invalid("profile rows must share a nonzero length"));
        }
        Ok(GroupTimeProfiles { alpha_dot })
    }

    pub fn group_count(&self) -> usize {
        self.alpha_dot.len()
    }

    pub fn n_periods(&self) -> usize {
        self.alpha_dot[0].len()
    }

    pub fn alpha_dot(&self) -> &[Vec<f64>] {
        &self.alpha_dot
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.alpha_dot[g]
    }

    /// Profiles shifted to begin at zero: row g minus its first entry.
    pub fn shifted(&self) -> Vec<Vec<f64>> {
        crate::inference::shift_profiles(&self.alpha_dot)
    }

    /// Rows reordered by `mapping`: new row g is old row `mapping[g]`.
    pub fn permuted(&self, mapping: &[usize]) -> GroupTimeProfiles {
        GroupTimeProfiles {
            alpha_dot: mapping.iter().map(|&old| self.alpha_dot[old].clone()).collect(),
        }
    }
}

/// A fitted grouped fixed-effects model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GfeEstimate {
    pub theta: Vec<f64>,
    pub profiles: GroupTimeProfiles,
    pub assignment: GroupAssignment,
    /// Sum of squared residuals at the returned parameters.
    pub objective: f64,
    /// Parameter steps taken by the winning start.
    pub iterations: usize,
    pub converged: bool,
    /// Index of the winning start within the multi-start run.
    pub start_index: usize,
    /// Seed of the multi-start run, and the winning start's derived seed.
    pub seed: u64,
    pub start_seed: u64,
    /// Objective after each parameter step, non-increasing.
    pub objective_trace: Vec<f64>,
    pub update: UpdateRule,
}

/// Options for a grouped fixed-effects fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GfeOptions {
    pub group_count: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub update: UpdateRule,
}

impl GfeOptions {
    pub fn new(group_count: usize, n_starts: usize, seed: u64) -> GfeOptions {
        GfeOptions {
            group_count,
            n_starts,
            seed,
            max_iter: 100,
            update: UpdateRule::Modified,
        }
    }

    pub fn with_update(mut self, update: UpdateRule) -> GfeOptions {
        self.update = update;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> GfeOptions {
        self.max_iter = max_iter;
        self
    }
}

/// Starting point for a single run: covariate effects and an initial
/// grouping. Profiles are initialized from these by a profile-only least
/// squares step.
#[derive(Debug, Clone)]
pub struct StartInit {
    pub theta: Vec<f64>,
    pub assignment: GroupAssignment,
}

/// Per-unit residuals `demeaned outcome - demeaned covariates * theta`,
/// concatenated in unit-major observation order.
fn residuals(dp: &DemeanedPanel, theta: &[f64]) -> Vec<f64> {
    let panel = dp.as_panel();
    let mut out = Vec::with_capacity(panel.n_observations());
    for i in 0..panel.n_units() {
        for pos in 0..panel.t_i(i) {
            let xb: f64 = panel
                .covariates_at(i, pos)
                .iter()
                .zip(theta)
                .map(|(x, th)| x * th)
                .sum();
            out.push(panel.outcome(i)[pos] - xb);
        }
    }
    out
}

/// Offsets of each unit's first observation within the flat residual vector.
fn unit_offsets(panel: &PanelData) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(panel.n_units() + 1);
    let mut acc = 0;
    for i in 0..panel.n_units() {
        offsets.push(acc);
        acc += panel.t_i(i);
    }
    offsets.push(acc);
    offsets
}

fn unit_ssr(
    panel: &PanelData,
    resid: &[f64],
    offset: usize,
    unit: usize,
    profiles: &GroupTimeProfiles,
    g: usize,
    update: UpdateRule,
) -> f64 {
    let observed = panel.observed(unit);
    let row = profiles.row(g);
    let correction = match update {
        UpdateRule::Modified => {
            observed.iter().map(|&s| row[s]).sum::<f64>() / observed.len() as f64
        }
        UpdateRule::Unmodified => 0.0,
    };
    observed
        .iter()
        .enumerate()
        .map(|(pos, &t)| {
            let e = resid[offset + pos] - (row[t] - correction);
            e * e
        })
        .sum()
}

/// Sum of squared residuals of one unit against group `g`'s profile:
/// `sum_t (resid_it - (a_gt - mean of a_g over the unit's periods))^2`.
///
/// The subtraction demeans the candidate profile over the unit's own
/// observed periods, matching the fitted values implied by per-unit demeaned
/// dummy columns; for balanced units the correction is zero because the
/// profile row sums to zero.
pub fn unit_group_ssr(
    dp: &DemeanedPanel,
    unit: usize,
    theta: &[f64],
    profiles: &GroupTimeProfiles,
    g: usize,
) -> f64 {
    let panel = dp.as_panel();
    let mut resid = Vec::with_capacity(panel.t_i(unit));
    for pos in 0..panel.t_i(unit) {
        let xb: f64 = panel
            .covariates_at(unit, pos)
            .iter()
            .zip(theta)
            .map(|(x, th)| x * th)
            .sum();
        resid.push(panel.outcome(unit)[pos] - xb);
    }
    unit_ssr(panel, &resid, 0, unit, profiles, g, UpdateRule::Modified)
}

fn assignment_step_with(
    dp: &DemeanedPanel,
    theta: &[f64],
    profiles: &GroupTimeProfiles,
    prev: &GroupAssignment,
    update: UpdateRule,
) -> GroupAssignment {
    let panel = dp.as_panel();
    let resid = residuals(dp, theta);
    let offsets = unit_offsets(panel);
    let g_count = profiles.group_count();
    let labels = (0..panel.n_units())
        .map(|i| {
            // Units observed once have all-zero demeaned rows; any group fits
            // them identically, so they keep their previous label.
            if panel.is_singleton(i) {
                return prev.label(i);
            }
            let mut best = 0;
            let mut best_ssr = f64::INFINITY;
            for g in 0..g_count {
                let ssr = unit_ssr(panel, &resid, offsets[i], i, profiles, g, update);
                if ssr < best_ssr {
                    best_ssr = ssr;
                    best = g;
                }
            }
            best
        })
        .collect();
    GroupAssignment {
        labels,
        group_count: g_count,
    }
}

/// Reassign every unit to its best-fitting group given the parameters. Ties
/// break toward the smallest label; units observed once keep their previous
/// label.
pub fn assignment_step(
    dp: &DemeanedPanel,
    theta: &[f64],
    profiles: &GroupTimeProfiles,
    prev: &GroupAssignment,
) -> GroupAssignment {
    assignment_step_with(dp, theta, profiles, prev, UpdateRule::Modified)
}

/// Dummy-block width per group for each update rule.
fn block_width(update: UpdateRule, t: usize) -> usize {
    match update {
        UpdateRule::Modified => t - 1,
        UpdateRule::Unmodified => t,
    }
}

/// Validate that every group is populated and every (group, period) cell has
/// informative observations; both conditions are required for the group-time
/// design to have full rank.
fn check_cells(panel: &PanelData, gamma: &GroupAssignment, update: UpdateRule) -> Result<()> {
    let g_count = gamma.group_count();
    let t = panel.n_periods();
    if let Some(&g) = gamma.empty_groups().first() {
        return Err(Error::EmptyGroup(g + 1));
    }
    // Under the modified rule, units observed once have identically zero
    // dummy rows and cannot hold a cell up.
    let mut cells = vec![vec![0usize; t]; g_count];
    for i in 0..panel.n_units() {
        if update == UpdateRule::Modified && panel.is_singleton(i) {
            continue;
        }
        let g = gamma.label(i);
        for &ti in panel.observed(i) {
            cells[g][ti] += 1;
        }
    }
    for (g, row) in cells.iter().enumerate() {
        for (ti, &count) in row.iter().enumerate() {
            if count == 0 {
                return Err(Error::EmptyCell {
                    group: g + 1,
                    period: panel.period_ids()[ti].to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Index of the dummy column for (group g, period index ti) within the full
/// parameter vector; `None` for the omitted first period under the modified
/// rule.
fn dummy_column(k: usize, d: usize, g: usize, ti: usize, update: UpdateRule) -> Option<usize> {
    match update {
        UpdateRule::Modified => {
            if ti == 0 {
                None
            } else {
                Some(k + g * d + ti - 1)
            }
        }
        UpdateRule::Unmodified => Some(k + g * d + ti),
    }
}

/// Fill `entries` with the sparse design row of one observation.
#[allow(clippy::too_many_arguments)]
fn design_row(
    panel: &PanelData,
    unit: usize,
    pos: usize,
    ti: usize,
    g: usize,
    k: usize,
    d: usize,
    update: UpdateRule,
    entries: &mut Vec<(usize, f64)>,
) {
    entries.clear();
    for (j, &x) in panel.covariates_at(unit, pos).iter().enumerate() {
        entries.push((j, x));
    }
    match update {
        UpdateRule::Modified => {
            let observed = panel.observed(unit);
            let t_i = observed.len() as f64;
            for &s in observed {
                if s > 0 {
                    entries.push((k + g * d + s - 1, -1.0 / t_i));
                }
            }
            if let Some(col) = dummy_column(k, d, g, ti, update) {
                // Combine the indicator with the demeaning term already pushed.
                if let Some(entry) = entries.iter_mut().find(|(c, _)| *c == col) {
                    entry.1 += 1.0;
                } else {
                    entries.push((col, 1.0));
                }
            }
        }
        UpdateRule::Unmodified => {
            entries.push((dummy_column(k, d, g, ti, update).expect("raw dummy column"), 1.0));
        }
    }
}

fn solve_normal_equations(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Option<DVector<f64>> {
    gram.clone().cholesky().map(|ch| ch.solve(rhs))
}

/// Assemble the dense design, used as a fallback to diagnose rank problems
/// with named columns.
fn dense_design(
    dp: &DemeanedPanel,
    gamma: &GroupAssignment,
    update: UpdateRule,
) -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
    let panel = dp.as_panel();
    let k = panel.n_covariates();
    let t = panel.n_periods();
    let d = block_width(update, t);
    let p = k + gamma.group_count() * d;
    let mut design = DMatrix::zeros(panel.n_observations(), p);
    let mut response = DVector::zeros(panel.n_observations());
    let mut entries = Vec::new();
    let mut row = 0;
    for i in 0..panel.n_units() {
        let g = gamma.label(i);
        for (pos, &ti) in panel.observed(i).iter().enumerate() {
            design_row(panel, i, pos, ti, g, k, d, update, &mut entries);
            for &(c, v) in &entries {
                design[(row, c)] = v;
            }
            response[row] = panel.outcome(i)[pos];
            row += 1;
        }
    }
    let mut names: Vec<String> = panel.covariate_names().to_vec();
    for g in 0..gamma.group_count() {
        let first = match update {
            UpdateRule::Modified => 1,
            UpdateRule::Unmodified => 0,
        };
        for &pid in &panel.period_ids()[first..] {
            names.push(format!("group {} x period {}", g + 1, pid));
        }
    }
    (design, response, names)
}

fn parameter_step_with(
    dp: &DemeanedPanel,
    gamma: &GroupAssignment,
    update: UpdateRule,
) -> Result<(Vec<f64>, GroupTimeProfiles)> {
    let panel = dp.as_panel();
    check_cells(panel, gamma, update)?;

    let k = panel.n_covariates();
    let t = panel.n_periods();
    let g_count = gamma.group_count();
    let d = block_width(update, t);
    let p = k + g_count * d;

    // The group-time columns are sparse and block-structured, and within a
    // unit the demeaning part of every dummy column is the same, so each
    // unit's normal-equation contribution has a closed form. This is the
    // inner loop of every fit; results must match the dense least-squares
    // route, which the tests check.
    let mut upper = vec![0.0_f64; p * p];
    let mut rhs_buf = vec![0.0_f64; p];
    for i in 0..panel.n_units() {
        let g = gamma.label(i);
        let observed = panel.observed(i);
        let offset = k + g * d;
        match update {
            UpdateRule::Modified => {
                let inv = 1.0 / observed.len() as f64;
                // Covariate sums and the plain covariate block.
                let mut sum_x = vec![0.0_f64; k];
                let mut sum_y = 0.0_f64;
                for pos in 0..observed.len() {
                    let y = panel.outcome(i)[pos];
                    sum_y += y;
                    let xs = panel.covariates_at(i, pos);
                    for j in 0..k {
                        let xj = xs[j];
                        sum_x[j] += xj;
                        rhs_buf[j] += xj * y;
                        for j2 in j..k {
                            upper[j * p + j2] += xj * xs[j2];
                        }
                    }
                }
                // Dummy columns: delta(s) = 1{t = s} - 1/T_i over observed
                // periods, zero elsewhere; period 1 has no column.
                for (pos, &s) in observed.iter().enumerate() {
                    if s == 0 {
                        continue;
                    }
                    let col = offset + s - 1;
                    let y = panel.outcome(i)[pos];
                    rhs_buf[col] += y - sum_y * inv;
                    let xs = panel.covariates_at(i, pos);
                    for j in 0..k {
                        upper[j * p + col] += xs[j] - sum_x[j] * inv;
                    }
                    upper[col * p + col] += 1.0 - inv;
                    for &s2 in observed {
                        if s2 > s {
                            upper[col * p + (offset + s2 - 1)] -= inv;
                        }
                    }
                }
            }
            UpdateRule::Unmodified => {
                for (pos, &s) in observed.iter().enumerate() {
                    let col = offset + s;
                    let y = panel.outcome(i)[pos];
                    let xs = panel.covariates_at(i, pos);
                    rhs_buf[col] += y;
                    upper[col * p + col] += 1.0;
                    for j in 0..k {
                        let xj = xs[j];
                        rhs_buf[j] += xj * y;
                        upper[j * p + col] += xj;
                        for j2 in j..k {
                            upper[j * p + j2] += xj * xs[j2];
                        }
                    }
                }
            }
        }
    }
    let gram = DMatrix::from_fn(p, p, |r, c| if r <= c { upper[r * p + c] } else { upper[c * p + r] });
    let rhs = DVector::from_vec(rhs_buf);

    let beta = match solve_normal_equations(&gram, &rhs) {
        Some(beta) => beta,
        None => {
            // Not positive definite: fall back to the rank-revealing dense
            // route for a named diagnosis (or a solution, if it finds one).
            let (design, response, names) = dense_design(dp, gamma, update);
            DVector::from_vec(least_squares_named(&design, &response, &names)?)
        }
    };

    let theta = beta.as_slice()[..k].to_vec();
    let mut alpha_dot = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let block = &beta.as_slice()[k + g * d..k + (g + 1) * d];
        match update {
            UpdateRule::Modified => alpha_dot.push(alpha_dot_from_relative(block)),
            UpdateRule::Unmodified => alpha_dot.push(block.to_vec()),
        }
    }
    Ok((theta, GroupTimeProfiles { alpha_dot }))
}

/// Estimate covariate effects and all group profiles by least squares given
/// a grouping, with the modified (zero-sum) coding: k covariate columns plus
/// G blocks of T-1 per-unit demeaned dummies, converted per group to
/// zero-sum length-T profiles.
///
/// # Errors
///
/// Empty groups and (group, period) cells with no informative observations
/// are rejected; other rank deficiencies are reported with column names.
pub fn parameter_step(
    dp: &DemeanedPanel,
    gamma: &GroupAssignment,
) -> Result<(Vec<f64>, GroupTimeProfiles)> {
    parameter_step_with(dp, gamma, UpdateRule::Modified)
}

/// Parameter step with raw group-by-period dummies and no zero-sum
/// conversion. With one group this reproduces the full-dummy regression, so
/// on unbalanced panels the profile rows generally do not sum to zero.
pub fn unmodified_parameter_step(
    dp: &DemeanedPanel,
    gamma: &GroupAssignment,
) -> Result<(Vec<f64>, GroupTimeProfiles)> {
    parameter_step_with(dp, gamma, UpdateRule::Unmodified)
}

/// Profiles-only least squares given fixed covariate effects: regress the
/// residual on each group's dummy block. Used to initialize profiles from a
/// drawn theta and a random grouping.
fn profile_step(
    dp: &DemeanedPanel,
    gamma: &GroupAssignment,
    theta: &[f64],
    update: UpdateRule,
) -> Result<GroupTimeProfiles> {
    let panel = dp.as_panel();
    check_cells(panel, gamma, update)?;
    let t = panel.n_periods();
    let d = block_width(update, t);
    let g_count = gamma.group_count();
    let resid = residuals(dp, theta);
    let offsets = unit_offsets(panel);

    // Group blocks are mutually orthogonal, so solve per group.
    let mut grams = vec![DMatrix::<f64>::zeros(d, d); g_count];
    let mut rhs = vec![DVector::<f64>::zeros(d); g_count];
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(t);
    for i in 0..panel.n_units() {
        let g = gamma.label(i);
        for (pos, &ti) in panel.observed(i).iter().enumerate() {
            // Group 0 in design_row yields block-local column indices.
            design_row(panel, i, pos, ti, 0, 0, d, update, &mut entries);
            let r = resid[offsets[i] + pos];
            for &(a, va) in &entries {
                rhs[g][a] += va * r;
                for &(b, vb) in &entries {
                    grams[g][(a, b)] += va * vb;
                }
            }
        }
    }

    let mut alpha_dot = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let beta = solve_normal_equations(&grams[g], &rhs[g]).ok_or_else(|| {
            Error::RankDeficient(vec![format!("group {} time dummies", g + 1)])
        })?;
        match update {
            UpdateRule::Modified => alpha_dot.push(alpha_dot_from_relative(beta.as_slice())),
            UpdateRule::Unmodified => alpha_dot.push(beta.as_slice().to_vec()),
        }
    }
    Ok(GroupTimeProfiles { alpha_dot })
}

/// Sum of squared residuals of the full model at the given parameters.
pub fn recompute_objective(
    dp: &DemeanedPanel,
    theta: &[f64],
    profiles: &GroupTimeProfiles,
    gamma: &GroupAssignment,
    update: UpdateRule,
) -> f64 {
    let panel = dp.as_panel();
    let resid = residuals(dp, theta);
    let offsets = unit_offsets(panel);
    (0..panel.n_units())
        .map(|i| unit_ssr(panel, &resid, offsets[i], i, profiles, gamma.label(i), update))
        .sum()
}

/// Move the worst-fitting units into empty groups so all G groups stay live.
/// Candidates must not empty their own group; the unit with the largest
/// current residual sum wins, ties toward the smallest unit index.
fn repair_empty_groups(
    dp: &DemeanedPanel,
    theta: &[f64],
    profiles: &GroupTimeProfiles,
    gamma: GroupAssignment,
    update: UpdateRule,
) -> GroupAssignment {
    let empties = gamma.empty_groups();
    if empties.is_empty() {
        return gamma;
    }
    let panel = dp.as_panel();
    let resid = residuals(dp, theta);
    let offsets = unit_offsets(panel);
    let mut labels = gamma.labels;
    let mut counts = vec![0usize; gamma.group_count];
    for &g in &labels {
        counts[g] += 1;
    }
    let ssr: Vec<f64> = (0..panel.n_units())
        .map(|i| unit_ssr(panel, &resid, offsets[i], i, profiles, labels[i], update))
        .collect();
    for g in empties {
        let mut pick: Option<usize> = None;
        for i in 0..panel.n_units() {
            if counts[labels[i]] < 2 {
                continue;
            }
            match pick {
                Some(best) if ssr[i] <= ssr[best] => {}
                _ => pick = Some(i),
            }
        }
        if let Some(i) = pick {
            counts[labels[i]] -= 1;
            labels[i] = g;
            counts[g] += 1;
        }
    }
    GroupAssignment {
        labels,
        group_count: gamma.group_count,
    }
}

/// Deterministic repair used before any parameters exist: empty groups take
/// the first unit from the currently largest group.
fn repair_initial(gamma: GroupAssignment) -> GroupAssignment {
    let empties = gamma.empty_groups();
    if empties.is_empty() {
        return gamma;
    }
    let mut labels = gamma.labels;
    let mut counts = vec![0usize; gamma.group_count];
    for &g in &labels {
        counts[g] += 1;
    }
    for g in empties {
        let donor = (0..counts.len()).max_by_key(|&h| counts[h]).expect("groups exist");
        if counts[donor] < 2 {
            continue;
        }
        if let Some(i) = (0..labels.len()).find(|&i| labels[i] == donor) {
            counts[donor] -= 1;
            labels[i] = g;
            counts[g] += 1;
        }
    }
    GroupAssignment {
        labels,
        group_count: gamma.group_count,
    }
}

fn fit_single_demeaned(
    dp: &DemeanedPanel,
    init: &StartInit,
    opts: &GfeOptions,
) -> Result<GfeEstimate> {
    let panel = dp.as_panel();
    if init.assignment.n_units() != panel.n_units() {
        return Err(Error::invalid("initial assignment length must equal unit count"));
    }
    if init.theta.len() != panel.n_covariates() {
        return Err(Error::invalid("initial theta length must equal covariate count"));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }

    let mut gamma = repair_initial(init.assignment.clone());
    let mut theta = init.theta.clone();
    let mut profiles = profile_step(dp, &gamma, &theta, opts.update)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    loop {
        let plain = assignment_step_with(dp, &theta, &profiles, &gamma, opts.update);
        if iterations > 0 && plain == gamma {
            converged = true;
            break;
        }
        gamma = repair_empty_groups(dp, &theta, &profiles, plain, opts.update);
        let (new_theta, new_profiles) = parameter_step_with(dp, &gamma, opts.update)?;
        theta = new_theta;
        profiles = new_profiles;
        iterations += 1;
        trace.push(recompute_objective(dp, &theta, &profiles, &gamma, opts.update));
        if iterations >= opts.max_iter {
            break;
        }
    }

    let objective = *trace.last().expect("at least one parameter step");
    Ok(GfeEstimate {
        theta,
        profiles,
        assignment: gamma,
        objective,
        iterations,
        converged,
        start_index: 0,
        seed: opts.seed,
        start_seed: opts.seed,
        objective_trace: trace,
        update: opts.update,
    })
}

/// One run of the alternating minimization from an explicit starting point.
///
/// The grouping and parameters alternate until the grouping is unchanged
/// between consecutive iterations or `max_iter` parameter steps have run; in
/// the latter case the estimate is returned with `converged == false`. The
/// objective after each parameter step is recorded and is non-increasing.
/// Empty groups are repaired by moving in the unit with the largest current
/// residual sum.
pub fn gfe_fit_single(
    panel: &PanelData,
    init: &StartInit,
    opts: &GfeOptions,
) -> Result<GfeEstimate> {
    let dp = within_transform(panel);
    fit_single_demeaned(&dp, init, opts)
}

fn draw_start(
    anchor_theta: &[f64],
    n_units: usize,
    g_count: usize,
    seed: u64,
) -> StartInit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = anchor_theta
        .iter()
        .map(|&c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            c + c.abs() * z
        })
        .collect();
    let labels = (0..n_units).map(|_| rng.gen_range(0..g_count)).collect();
    StartInit {
        theta,
        assignment: GroupAssignment {
            labels,
            group_count: g_count,
        },
    }
}

/// Multi-start grouped fixed-effects fit.
///
/// Each start draws covariate effects from independent Gaussians centered at
/// the two-way fixed-effects estimates with standard deviations equal to
/// their magnitudes, pairs them with a uniformly random grouping, and runs
/// [`gfe_fit_single`]. Starts get deterministic sub-seeds, so the result is
/// reproducible from `(panel, options)` alone and independent of how starts
/// are scheduled across threads. The estimate with the smallest objective
/// wins, ties broken by the lowest start index.
///
/// # Errors
///
/// Rank errors from the two-way fixed-effects anchor fit propagate; if every
/// start fails, the first start's error is returned.
pub fn gfe_fit(panel: &PanelData, opts: &GfeOptions) -> Result<GfeEstimate> {
    if opts.n_starts == 0 {
        return Err(Error::invalid("n_starts must be at least 1"));
    }
    if opts.group_count == 0 {
        return Err(Error::invalid("group count must be at least 1"));
    }
    if opts.group_count > panel.n_units() {
        return Err(Error::invalid(format!(
            "{} groups requested but the panel has only {} units",
            opts.group_count,
            panel.n_units()
        )));
    }
    let anchor = fit_2wfe(panel)?;
    let dp = within_transform(panel);

    let runs: Vec<(usize, u64, Result<GfeEstimate>)> = (0..opts.n_starts)
        .into_par_iter()
        .map(|s| {
            let start_seed = derive_seed(opts.seed, s as u64);
            let init = draw_start(
                &anchor.theta,
                panel.n_units(),
                opts.group_count,
                start_seed,
            );
            (s, start_seed, fit_single_demeaned(&dp, &init, opts))
        })
        .collect();

    let mut best: Option<GfeEstimate> = None;
    let mut first_err: Option<Error> = None;
    for (s, start_seed, run) in runs {
        match run {
            Ok(mut est) => {
                est.start_index = s;
                est.start_seed = start_seed;
                est.seed = opts.seed;
                let better = match &best {
                    None => true,
                    Some(b) => est.objective < b.objective,
                };
                if better {
                    best = Some(est);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one start ran"))
}

/// One entry of a G sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GSweepEntry {
    pub group_count: usize,
    pub estimate: GfeEstimate,
}

/// Fit the model independently for each requested group count, the data
/// behind coefficient-stability plots used to choose G.
pub fn g_sweep(
    panel: &PanelData,
    g_range: &[usize],
    n_starts: usize,
    seed: u64,
    update: UpdateRule,
) -> Result<Vec<GSweepEntry>> {
    if g_range.is_empty() {
        return Err(Error::invalid("group range must be nonempty"));
    }
    g_range
        .iter()
        .map(|&g| {
            let opts = GfeOptions::new(g, n_starts, derive_seed(seed, g as u64)).with_update(update);
            gfe_fit(panel, &opts).map(|estimate| GSweepEntry {
                group_count: g,
                estimate,
            })
        })
        .collect()
}

/// Serializable view of an estimate with unit and covariate names attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub group_count: usize,
    pub periods: Vec<i64>,
    pub covariates: Vec<CovariateEstimate>,
    pub alpha_dot: Vec<Vec<f64>>,
    pub alpha_shifted: Vec<Vec<f64>>,
    /// Unit id to 1-based group label.
    pub gamma: std::collections::BTreeMap<String, usize>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    pub start_index: usize,
    pub start_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateEstimate {
    pub name: String,
    pub estimate: f64,
}

impl GfeEstimate {
    /// Attach names from the source panel for serialization. Group labels
    /// are reported 1-based.
    pub fn to_report(&self, panel: &PanelData) -> EstimateReport {
        EstimateReport {
            group_count: self.profiles.group_count(),
            periods: panel.period_ids().to_vec(),
            covariates: panel
                .covariate_names()
                .iter()
                .zip(&self.theta)
                .map(|(name, &estimate)| CovariateEstimate {
                    name: name.clone(),
                    estimate,
                })
                .collect(),
            alpha_dot: self.profiles.alpha_dot().to_vec(),
            alpha_shifted: self.profiles.shifted(),
            gamma: panel
                .unit_ids()
                .iter()
                .zip(self.assignment.labels())
                .map(|(unit, &g)| (unit.clone(), g + 1))
                .collect(),
            objective: self.objective,
            iterations: self.iterations,
            converged: self.converged,
            seed: self.seed,
            start_index: self.start_index,
            start_seed: self.start_seed,
        }
    }
}
