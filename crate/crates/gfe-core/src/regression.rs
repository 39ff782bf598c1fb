//! Least-squares machinery and time-effect estimation on demeaned panels.
//!
//! Three equivalent dummy codings for the time effects are provided; they
//! agree on balanced panels but differ on unbalanced ones, where only the
//! unit-demeaned coding keeps the recovered effects summing to zero. The
//! unit-demeaned coding is what standard two-way fixed-effects
//! implementations compute, and serves as the one-group reference fit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{demeaned_time_dummies, within_transform, DemeanedPanel, PanelData};

/// Relative threshold under which a pivoted-QR diagonal entry is treated as
/// zero when deciding the design rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// How the time effects are coded in the regression design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeDummyCoding {
    /// All T time dummies, no constant; coefficients are the demeaned
    /// effects directly (method 1).
    Full,
    /// T-1 dummies omitting the first period, plus a constant; dummy
    /// coefficients are effects relative to period 1 (method 2).
    OmitFirst,
    /// T-1 time dummies within-transformed per unit, no constant; relative
    /// effects are estimated and the level is pinned by a zero-sum
    /// conversion (method 3).
    UnitDemeaned,
}

/// Estimated covariate effects and time effects from a single regression.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEffectEstimate {
    /// Covariate effects, one per covariate.
    pub theta: Vec<f64>,
    /// Time-demeaned effects, length T.
    pub alpha_dot: Vec<f64>,
    /// Effects relative to the first period, length T-1; entry `t - 2`
    /// equals `alpha_dot[t] - alpha_dot[0]` by construction.
    pub alpha_tilde: Vec<f64>,
    /// Which coding produced the estimate.
    pub coding: TimeDummyCoding,
}

/// Minimize the residual sum of squares of `design * beta - response`.
///
/// Uses a column-pivoted QR factorization so that rank deficiency is
/// detected reliably on dummy-heavy designs. Diagonal entries of R below
/// [`RANK_TOLERANCE`] times the largest are treated as zero.
///
/// # Errors
///
/// Rank-deficient designs are rejected, naming the dependent columns by
/// index.
pub fn least_squares(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<Vec<f64>> {
    let names: Vec<String> = (0..design.ncols()).map(|j| format!("column {}", j)).collect();
    least_squares_named(design, response, &names)
}

/// [`least_squares`] with caller-supplied column names for error reporting.
pub fn least_squares_named(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    names: &[String],
) -> Result<Vec<f64>> {
    let n = design.nrows();
    let p = design.ncols();
    assert_eq!(names.len(), p, "one name per design column");
    if n < p {
        return Err(Error::invalid(format!(
            "least squares needs at least as many rows as columns ({} rows, {} columns)",
            n, p
        )));
    }
    if p == 0 {
        return Ok(Vec::new());
    }

    let qr = design.clone().col_piv_qr();
    // Track which original column each permuted column came from.
    let mut order = DMatrix::<f64>::from_fn(1, p, |_, j| j as f64);
    qr.p().permute_columns(&mut order);
    let order: Vec<usize> = order.iter().map(|&v| v as usize).collect();

    let (q, r, _) = qr.unpack();
    let scale = r[(0, 0)].abs();
    let rank = (0..p)
        .take_while(|&i| r[(i, i)].abs() > RANK_TOLERANCE * scale && scale > 0.0)
        .count();
    if rank < p {
        let mut dependent: Vec<String> = order[rank..].iter().map(|&j| names[j].clone()).collect();
        dependent.sort();
        return Err(Error::RankDeficient(dependent));
    }

    let qty = q.transpose() * response;
    let mut permuted = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = qty[i];
        for j in (i + 1)..p {
            s -= r[(i, j)] * permuted[j];
        }
        permuted[i] = s / r[(i, i)];
    }
    let mut beta = vec![0.0; p];
    for (j, &src) in order.iter().enumerate() {
        beta[src] = permuted[j];
    }
    Ok(beta)
}

/// One design row per observation: demeaned covariates followed by the time
/// columns for the requested coding.
fn build_design(
    dp: &DemeanedPanel,
    coding: TimeDummyCoding,
) -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
    let panel = dp.as_panel();
    let n = panel.n_observations();
    let k = panel.n_covariates();
    let t = panel.n_periods();
    let p = match coding {
        TimeDummyCoding::Full => k + t,
        TimeDummyCoding::OmitFirst => k + t, // constant + T-1 dummies
        TimeDummyCoding::UnitDemeaned => k + t - 1,
    };

    let mut design = DMatrix::zeros(n, p);
    let mut response = DVector::zeros(n);
    let mut row = 0;
    for i in 0..panel.n_units() {
        for (pos, &ti) in panel.observed(i).iter().enumerate() {
            response[row] = panel.outcome(i)[pos];
            for (j, &x) in panel.covariates_at(i, pos).iter().enumerate() {
                design[(row, j)] = x;
            }
            match coding {
                TimeDummyCoding::Full => {
                    design[(row, k + ti)] = 1.0;
                }
                TimeDummyCoding::OmitFirst => {
                    design[(row, k)] = 1.0;
                    if ti > 0 {
                        design[(row, k + ti)] = 1.0;
                    }
                }
                TimeDummyCoding::UnitDemeaned => {
                    for (s, v) in demeaned_time_dummies(panel, i, ti).iter().enumerate() {
                        design[(row, k + s)] = *v;
                    }
                }
            }
            row += 1;
        }
    }

    let mut names: Vec<String> = panel.covariate_names().to_vec();
    match coding {
        TimeDummyCoding::Full => {
            for &pid in panel.period_ids() {
                names.push(format!("period {}", pid));
            }
        }
        TimeDummyCoding::OmitFirst => {
            names.push("constant".to_string());
            for &pid in &panel.period_ids()[1..] {
                names.push(format!("period {}", pid));
            }
        }
        TimeDummyCoding::UnitDemeaned => {
            for &pid in &panel.period_ids()[1..] {
                names.push(format!("period {}", pid));
            }
        }
    }

    (design, response, names)
}

/// Estimate covariate and time effects on a demeaned panel under the chosen
/// coding.
///
/// All codings report both the length-T effects `alpha_dot` and the T-1
/// relative effects `alpha_tilde`. [`TimeDummyCoding::Full`] reports
/// `alpha_dot` directly and differences it; the other two report relative
/// effects directly. For [`TimeDummyCoding::UnitDemeaned`] the first-period
/// level is `-(1/T) * sum(alpha_tilde)`, which forces the `alpha_dot` values
/// to sum to zero on any panel.
///
/// # Errors
///
/// A period with no observations across all units is rejected as an empty
/// period; rank-deficient designs are rejected with the dependent columns.
pub fn fit_time_effects(dp: &DemeanedPanel, coding: TimeDummyCoding) -> Result<TimeEffectEstimate> {
    let panel = dp.as_panel();
    let t = panel.n_periods();
    let k = panel.n_covariates();
    for ti in 0..t {
        if panel.period_count(ti) == 0 {
            return Err(Error::EmptyPeriod(panel.period_ids()[ti].to_string()));
        }
    }

    let (design, response, names) = build_design(dp, coding);
    let beta = least_squares_named(&design, &response, &names)?;
    let theta = beta[..k].to_vec();

    let (alpha_dot, alpha_tilde) = match coding {
        TimeDummyCoding::Full => {
            let alpha_dot = beta[k..].to_vec();
            let alpha_tilde = alpha_dot[1..].iter().map(|a| a - alpha_dot[0]).collect();
            (alpha_dot, alpha_tilde)
        }
        TimeDummyCoding::OmitFirst => {
            let constant = beta[k];
            let alpha_tilde: Vec<f64> = beta[k + 1..].to_vec();
            let mut alpha_dot = vec![constant];
            alpha_dot.extend(alpha_tilde.iter().map(|a| constant + a));
            (alpha_dot, alpha_tilde)
        }
        TimeDummyCoding::UnitDemeaned => {
            let alpha_tilde: Vec<f64> = beta[k..].to_vec();
            (alpha_dot_from_relative(&alpha_tilde), alpha_tilde)
        }
    };

    Ok(TimeEffectEstimate {
        theta,
        alpha_dot,
        alpha_tilde,
        coding,
    })
}

/// Reconstruct the length-T effects from T-1 relative effects so that the
/// result sums to zero: the first value is `-(1/T) * sum(alpha_tilde)`.
pub fn alpha_dot_from_relative(alpha_tilde: &[f64]) -> Vec<f64> {
    let t = alpha_tilde.len() + 1;
    let first = -alpha_tilde.iter().sum::<f64>() / t as f64;
    let mut alpha_dot = vec![first];
    alpha_dot.extend(alpha_tilde.iter().map(|a| first + a));
    alpha_dot
}

/// Standard two-way fixed-effects fit: within-transform, then estimate with
/// the unit-demeaned time coding. This is the one-group reference for the
/// grouped estimator, on balanced and unbalanced panels alike.
pub fn fit_2wfe(panel: &PanelData) -> Result<TimeEffectEstimate> {
    let dp = within_transform(panel);
    fit_time_effects(&dp, TimeDummyCoding::UnitDemeaned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{missing_cell_panel, PanelRow};
    use approx::assert_abs_diff_eq;

    #[test]
    fn least_squares_identity() {
        let design = DMatrix::identity(2, 2);
        let response = DVector::from_row_slice(&[3.0, 7.0]);
        assert_eq!(least_squares(&design, &response).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn least_squares_ones_column_gives_mean() {
        let design = DMatrix::from_element(3, 1, 1.0);
        let response = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let beta = least_squares(&design, &response).unwrap();
        assert_abs_diff_eq!(beta[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_rejects_collinear_design() {
        let design = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let response = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let err = least_squares(&design, &response).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)));
    }

    #[test]
    fn full_coding_on_missing_cell_dataset() {
        // Period means of the demeaned outcome: (-1/2 + 0 - 1/2)/3 and
        // (1/2 + 1/2)/2.
        let dp = within_transform(&missing_cell_panel());
        let est = fit_time_effects(&dp, TimeDummyCoding::Full).unwrap();
        assert_abs_diff_eq!(est.alpha_dot[0], -1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.alpha_dot[1], 0.5, epsilon = 1e-12);
        let sum: f64 = est.alpha_dot.iter().sum();
        assert_abs_diff_eq!(sum, 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn unit_demeaned_coding_sums_to_zero_on_missing_cell_dataset() {
        let dp = within_transform(&missing_cell_panel());
        let est = fit_time_effects(&dp, TimeDummyCoding::UnitDemeaned).unwrap();
        assert_abs_diff_eq!(est.alpha_tilde[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.alpha_dot[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(est.alpha_dot[1], 0.5, epsilon = 1e-12);
        let sum: f64 = est.alpha_dot.iter().sum();
        assert_abs_diff_eq!(sum, 0.0, epsilon = 1e-12);
    }

    fn balanced_panel() -> PanelData {
        // 4 units, 3 periods, one covariate; distinct unit levels.
        let mut rows = Vec::new();
        for (i, level) in [0.0_f64, 1.0, -2.0, 0.5].iter().enumerate() {
            for t in 1..=3_i64 {
                let x = (i as f64 + 1.0) * t as f64 * 0.3 - 1.0;
                let alpha = [0.4, -0.1, -0.3][(t - 1) as usize];
                rows.push(PanelRow {
                    unit: format!("u{}", i),
                    period: t,
                    outcome: 2.0 * x + level + alpha + ((i * 3 + t as usize) % 5) as f64 * 0.11,
                    covariates: vec![x],
                });
            }
        }
        PanelData::from_rows(&rows, &["x".to_string()]).unwrap()
    }

    #[test]
    fn codings_agree_on_balanced_panel() {
        let dp = within_transform(&balanced_panel());
        let full = fit_time_effects(&dp, TimeDummyCoding::Full).unwrap();
        let omit = fit_time_effects(&dp, TimeDummyCoding::OmitFirst).unwrap();
        let demeaned = fit_time_effects(&dp, TimeDummyCoding::UnitDemeaned).unwrap();
        for other in [&omit, &demeaned] {
            for (a, b) in full.theta.iter().zip(&other.theta) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
            for (a, b) in full.alpha_tilde.iter().zip(&other.alpha_tilde) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
        // Constant term of the omitted-first coding equals the derived
        // first-period level of the unit-demeaned coding on balanced data.
        assert_abs_diff_eq!(omit.alpha_dot[0], demeaned.alpha_dot[0], epsilon = 1e-10);
    }

    #[test]
    fn two_way_fe_recovers_noiseless_theta() {
        // y = 2 x + alpha_t + c_i with no noise.
        let alphas = [0.5, -0.2, 0.1, -0.4];
        let mut rows = Vec::new();
        for i in 0..6 {
            let c = i as f64 * 0.7 - 2.0;
            // Unbalanced: unit 0 skips the last period, unit 1 the first.
            for t in 1..=4_i64 {
                if (i == 0 && t == 4) || (i == 1 && t == 1) {
                    continue;
                }
                let x = ((i * 7 + t as usize * 3) % 11) as f64 * 0.25 - 1.0;
                rows.push(PanelRow {
                    unit: format!("u{}", i),
                    period: t,
                    outcome: 2.0 * x + alphas[(t - 1) as usize] + c,
                    covariates: vec![x],
                });
            }
        }
        let panel = PanelData::from_rows(&rows, &["x".to_string()]).unwrap();
        let est = fit_2wfe(&panel).unwrap();
        assert_abs_diff_eq!(est.theta[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn collinear_covariate_is_rejected() {
        // Covariate equal to the period-2 dummy.
        let mut rows = Vec::new();
        for i in 0..3 {
            for t in 1..=3_i64 {
                rows.push(PanelRow {
                    unit: format!("u{}", i),
                    period: t,
                    outcome: (i as f64) + (t as f64) * 0.5,
                    covariates: vec![if t == 2 { 1.0 } else { 0.0 }],
                });
            }
        }
        let panel = PanelData::from_rows(&rows, &["d2".to_string()]).unwrap();
        let err = fit_2wfe(&panel).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)));
    }

    #[test]
    fn empty_period_is_reported() {
        let rows: Vec<PanelRow> = [(1_i64, 1.0), (3, 2.0)]
            .iter()
            .map(|&(t, y)| PanelRow {
                unit: "a".into(),
                period: t,
                outcome: y,
                covariates: vec![],
            })
            .collect();
        let panel = crate::panel::PanelData::from_rows_with_axis(&rows, &[], &[1, 2, 3]).unwrap();
        let err = fit_time_effects(&within_transform(&panel), TimeDummyCoding::Full).unwrap_err();
        assert!(matches!(err, Error::EmptyPeriod(ref p) if p == "2"));
    }
}
