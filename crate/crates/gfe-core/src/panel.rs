//! Long-format panel data: validation, CSV ingestion, and the within
//! transformation for balanced and unbalanced panels.
//!
//! Missingness is encoded by row absence. A unit's observed periods form a
//! subset of the global period axis, which is the sorted set of all period
//! values seen anywhere in the data. Partial rows (an observed cell with a
//! missing outcome or covariate) are rejected rather than imputed.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// One observation in long format, used to assemble a [`PanelData`].
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub unit: String,
    pub period: i64,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

/// Column names used when reading or writing panel CSV files.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub unit: String,
    pub period: String,
    pub outcome: String,
    /// Covariate columns in declared order. `None` means: every header column
    /// other than unit/period/outcome, in header order.
    pub covariates: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            unit: "unit".to_string(),
            period: "period".to_string(),
            outcome: "y".to_string(),
            covariates: None,
        }
    }
}

/// Per-unit observation block. Periods are strictly increasing indices into
/// the global period axis.
#[derive(Debug, Clone, PartialEq)]
struct UnitSeries {
    periods: Vec<usize>,
    outcome: Vec<f64>,
    /// Row-major, `periods.len() * k` values.
    covariates: Vec<f64>,
}

/// A validated, possibly unbalanced panel.
///
/// Units are kept in first-appearance order; the period axis is the sorted
/// set of distinct period values. Every stored observation carries the
/// outcome and all covariates. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    unit_ids: Vec<String>,
    period_ids: Vec<i64>,
    covariate_names: Vec<String>,
    units: Vec<UnitSeries>,
}

impl PanelData {
    /// Assemble and validate a panel from long-format rows. The period axis
    /// is the sorted set of period values seen in the rows.
    ///
    /// # Errors
    ///
    /// Rejects duplicate (unit, period) pairs and empty inputs.
    pub fn from_rows(rows: &[PanelRow], covariate_names: &[String]) -> Result<PanelData> {
        if rows.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let mut axis: Vec<i64> = rows.iter().map(|r| r.period).collect();
        axis.sort_unstable();
        axis.dedup();
        Self::from_rows_with_axis(rows, covariate_names, &axis)
    }

    /// Like [`PanelData::from_rows`] but with an explicit period axis, which
    /// may contain periods no row observes. Resampled panels use this so
    /// their profiles stay comparable with the source panel's axis.
    pub fn from_rows_with_axis(
        rows: &[PanelRow],
        covariate_names: &[String],
        period_axis: &[i64],
    ) -> Result<PanelData> {
        if rows.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let k = covariate_names.len();
        for row in rows {
            if row.covariates.len() != k {
                return Err(Error::invalid(format!(
                    "row for unit `{}` period `{}` has {} covariates, expected {}",
                    row.unit,
                    row.period,
                    row.covariates.len(),
                    k
                )));
            }
        }

        let mut unit_index: HashMap<&str, usize> = HashMap::new();
        let mut unit_ids: Vec<String> = Vec::new();
        for row in rows {
            if !unit_index.contains_key(row.unit.as_str()) {
                unit_index.insert(row.unit.as_str(), unit_ids.len());
                unit_ids.push(row.unit.clone());
            }
        }

        let mut period_ids: Vec<i64> = period_axis.to_vec();
        period_ids.sort_unstable();
        period_ids.dedup();
        let period_index: HashMap<i64, usize> =
            period_ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();

        let mut per_unit: Vec<Vec<(usize, f64, &[f64])>> = vec![Vec::new(); unit_ids.len()];
        let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(rows.len());
        for row in rows {
            let ui = unit_index[row.unit.as_str()];
            let ti = *period_index.get(&row.period).ok_or_else(|| {
                Error::invalid(format!(
                    "period `{}` is not on the supplied period axis",
                    row.period
                ))
            })?;
            if !seen.insert((ui, ti)) {
                return Err(Error::DuplicateObservation {
                    unit: row.unit.clone(),
                    period: row.period.to_string(),
                });
            }
            per_unit[ui].push((ti, row.outcome, row.covariates.as_slice()));
        }

        let units = per_unit
            .into_iter()
            .map(|mut obs| {
                obs.sort_by_key(|&(ti, _, _)| ti);
                let mut series = UnitSeries {
                    periods: Vec::with_capacity(obs.len()),
                    outcome: Vec::with_capacity(obs.len()),
                    covariates: Vec::with_capacity(obs.len() * k),
                };
                for (ti, y, x) in obs {
                    series.periods.push(ti);
                    series.outcome.push(y);
                    series.covariates.extend_from_slice(x);
                }
                series
            })
            .collect();

        Ok(PanelData {
            unit_ids,
            period_ids,
            covariate_names: covariate_names.to_vec(),
            units,
        })
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.period_ids.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Total number of observations across all units.
    pub fn n_observations(&self) -> usize {
        self.units.iter().map(|u| u.periods.len()).sum()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn period_ids(&self) -> &[i64] {
        &self.period_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Period indices (into the global axis) observed by unit `i`, ascending.
    pub fn observed(&self, i: usize) -> &[usize] {
        &self.units[i].periods
    }

    /// Number of observed periods for unit `i`.
    pub fn t_i(&self, i: usize) -> usize {
        self.units[i].periods.len()
    }

    /// Outcome values for unit `i`, aligned with [`PanelData::observed`].
    pub fn outcome(&self, i: usize) -> &[f64] {
        &self.units[i].outcome
    }

    /// Covariate vector for unit `i` at its `pos`-th observed period.
    pub fn covariates_at(&self, i: usize, pos: usize) -> &[f64] {
        let k = self.n_covariates();
        &self.units[i].covariates[pos * k..(pos + 1) * k]
    }

    /// Whether unit `i` is observed in exactly one period. Such units carry
    /// no information after demeaning: their demeaned rows are all zero.
    pub fn is_singleton(&self, i: usize) -> bool {
        self.t_i(i) == 1
    }

    /// Indices of units observed in exactly one period.
    pub fn singleton_units(&self) -> Vec<usize> {
        (0..self.n_units()).filter(|&i| self.is_singleton(i)).collect()
    }

    /// True when every unit observes every period.
    pub fn is_balanced(&self) -> bool {
        let t = self.n_periods();
        self.units.iter().all(|u| u.periods.len() == t)
    }

    /// Number of units observed in period index `t`.
    pub fn period_count(&self, t: usize) -> usize {
        self.units
            .iter()
            .filter(|u| u.periods.binary_search(&t).is_ok())
            .count()
    }

    /// Write the panel in long format; header is `unit,period,y` followed by
    /// the covariate names. Floats are printed with round-trip precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("unit,period,y");
        for name in &self.covariate_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, series) in self.units.iter().enumerate() {
            for (pos, &ti) in series.periods.iter().enumerate() {
                write!(
                    out,
                    "{},{},{}",
                    self.unit_ids[i], self.period_ids[ti], series.outcome[pos]
                )
                .expect("write to string");
                for &v in self.covariates_at(i, pos) {
                    write!(out, ",{}", v).expect("write to string");
                }
                out.push('\n');
            }
        }
        std::fs::write(path, out).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// A panel with every variable centered around its unit-specific mean, the
/// mean taken over each unit's observed periods only.
///
/// Demeaning eliminates time-constant unit effects; the per-unit means are
/// retained for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct DemeanedPanel {
    data: PanelData,
    outcome_means: Vec<f64>,
    /// Row-major `n_units * k`.
    covariate_means: Vec<f64>,
}

impl DemeanedPanel {
    /// Treat already-centered data as demeaned, recording zero means. The
    /// synthetic generator emits centered values directly, so its output can
    /// skip the transform.
    pub fn from_centered(data: PanelData) -> DemeanedPanel {
        let n = data.n_units();
        let k = data.n_covariates();
        DemeanedPanel {
            data,
            outcome_means: vec![0.0; n],
            covariate_means: vec![0.0; n * k],
        }
    }

    /// The demeaned values, in the same shape as the source panel.
    pub fn as_panel(&self) -> &PanelData {
        &self.data
    }

    /// Stored mean of the outcome for unit `i`.
    pub fn outcome_mean(&self, i: usize) -> f64 {
        self.outcome_means[i]
    }

    /// Stored covariate means for unit `i`.
    pub fn covariate_means(&self, i: usize) -> &[f64] {
        let k = self.data.n_covariates();
        &self.covariate_means[i * k..(i + 1) * k]
    }
}

/// Center every variable around its unit mean, computed over the unit's
/// observed periods. Units observed once yield all-zero rows; they are kept
/// and can be listed via [`PanelData::singleton_units`].
///
/// Means use a two-pass computation; all arithmetic is in `f64`.
pub fn within_transform(panel: &PanelData) -> DemeanedPanel {
    let k = panel.n_covariates();
    let n = panel.n_units();
    let mut outcome_means = Vec::with_capacity(n);
    let mut covariate_means = Vec::with_capacity(n * k);
    let mut units = Vec::with_capacity(n);

    for i in 0..n {
        let t_i = panel.t_i(i) as f64;
        let y_mean = panel.outcome(i).iter().sum::<f64>() / t_i;
        let mut x_mean = vec![0.0; k];
        for pos in 0..panel.t_i(i) {
            for (j, &v) in panel.covariates_at(i, pos).iter().enumerate() {
                x_mean[j] += v;
            }
        }
        for m in &mut x_mean {
            *m /= t_i;
        }

        let series = &panel.units[i];
        let mut demeaned = UnitSeries {
            periods: series.periods.clone(),
            outcome: series.outcome.iter().map(|&y| y - y_mean).collect(),
            covariates: Vec::with_capacity(series.covariates.len()),
        };
        for pos in 0..panel.t_i(i) {
            for (j, &v) in panel.covariates_at(i, pos).iter().enumerate() {
                demeaned.covariates.push(v - x_mean[j]);
            }
        }

        outcome_means.push(y_mean);
        covariate_means.extend_from_slice(&x_mean);
        units.push(demeaned);
    }

    DemeanedPanel {
        data: PanelData {
            unit_ids: panel.unit_ids.clone(),
            period_ids: panel.period_ids.clone(),
            covariate_names: panel.covariate_names.clone(),
            units,
        },
        outcome_means,
        covariate_means,
    }
}

/// Time dummies for periods 2..T, within-transformed for one unit exactly
/// like any other variable: coordinate `s` (0-based `s - 2`) equals
/// `1{t = s} - 1{s observed by unit} / T_i`.
///
/// `t` is an index into the global period axis and must be observed by the
/// unit; violating this is a caller bug.
pub fn demeaned_time_dummies(panel: &PanelData, unit: usize, t: usize) -> Vec<f64> {
    let observed = panel.observed(unit);
    assert!(
        observed.binary_search(&t).is_ok(),
        "period index {} not observed by unit {}",
        t,
        unit
    );
    let t_i = observed.len() as f64;
    (1..panel.n_periods())
        .map(|s| {
            let indicator = if t == s { 1.0 } else { 0.0 };
            let mean = if observed.binary_search(&s).is_ok() {
                1.0 / t_i
            } else {
                0.0
            };
            indicator - mean
        })
        .collect()
}

enum PeriodValue {
    Int(i64),
    Date(NaiveDate),
}

fn parse_period(raw: &str, row: usize) -> Result<PeriodValue> {
    if let Ok(v) = raw.trim().parse::<i64>() {
        return Ok(PeriodValue::Int(v));
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d") {
        return Ok(PeriodValue::Date(d));
    }
    Err(Error::InvalidPeriod {
        row,
        value: raw.to_string(),
    })
}

fn parse_value(raw: &str, row: usize, column: &str) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::PartialRow {
            row,
            column: column.to_string(),
        });
    }
    trimmed.parse::<f64>().map_err(|_| Error::NonNumeric {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Read a long-format panel CSV.
///
/// The header must contain the schema's unit, period, and outcome columns;
/// covariate columns are either the declared list or every remaining column.
/// Period values must all parse as integers, or all as ISO dates, which are
/// mapped to consecutive integers 1..T in date order.
///
/// # Errors
///
/// Duplicate (unit, period) rows, non-numeric or empty cells, and unparsable
/// periods are rejected with the offending row number (header is row 1).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<PanelData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.display().to_string(),
            source,
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.display().to_string(),
            source,
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let unit_col = col(&schema.unit)?;
    let period_col = col(&schema.period)?;
    let outcome_col = col(&schema.outcome)?;

    let covariate_names: Vec<String> = match &schema.covariates {
        Some(names) => {
            for name in names {
                col(name)?;
            }
            names.clone()
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != unit_col && i != period_col && i != outcome_col)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let covariate_cols: Vec<usize> = covariate_names
        .iter()
        .map(|name| col(name))
        .collect::<Result<_>>()?;

    struct RawRow {
        unit: String,
        period: PeriodValue,
        outcome: f64,
        covariates: Vec<f64>,
    }

    let mut raw_rows: Vec<RawRow> = Vec::new();
    let mut saw_int = false;
    let mut saw_date = false;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2; // header is row 1
        let record = record.map_err(|source| Error::Csv {
            path: path.display().to_string(),
            source,
        })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let period = parse_period(field(period_col), row)?;
        match period {
            PeriodValue::Int(_) => saw_int = true,
            PeriodValue::Date(_) => saw_date = true,
        }
        let outcome = parse_value(field(outcome_col), row, &schema.outcome)?;
        let covariates = covariate_cols
            .iter()
            .zip(&covariate_names)
            .map(|(&c, name)| parse_value(field(c), row, name))
            .collect::<Result<Vec<f64>>>()?;
        raw_rows.push(RawRow {
            unit: field(unit_col).to_string(),
            period,
            outcome,
            covariates,
        });
    }
    if saw_int && saw_date {
        return Err(Error::invalid(
            "period column mixes integer and date values",
        ));
    }

    // Dates become consecutive integers 1..T in date order.
    let date_rank: HashMap<NaiveDate, i64> = if saw_date {
        let mut dates: Vec<NaiveDate> = raw_rows
            .iter()
            .map(|r| match r.period {
                PeriodValue::Date(d) => d,
                PeriodValue::Int(_) => unreachable!(),
            })
            .collect();
        dates.sort_unstable();
        dates.dedup();
        dates
            .into_iter()
            .enumerate()
            .map(|(i, d)| (d, i as i64 + 1))
            .collect()
    } else {
        HashMap::new()
    };

    let rows: Vec<PanelRow> = raw_rows
        .into_iter()
        .map(|r| PanelRow {
            unit: r.unit,
            period: match r.period {
                PeriodValue::Int(v) => v,
                PeriodValue::Date(d) => date_rank[&d],
            },
            outcome: r.outcome,
            covariates: r.covariates,
        })
        .collect();

    PanelData::from_rows(&rows, &covariate_names)
}

/// The two-period, three-unit panel with one missing cell used throughout
/// the regression tests: y = 1,2 / 3,. / 4,5.
#[cfg(test)]
pub(crate) fn missing_cell_panel() -> PanelData {
    let rows: Vec<PanelRow> = [("1", 1, 1.0), ("1", 2, 2.0), ("2", 1, 3.0), ("3", 1, 4.0), ("3", 2, 5.0)]
        .iter()
        .map(|&(unit, period, outcome)| PanelRow {
            unit: unit.to_string(),
            period,
            outcome,
            covariates: vec![],
        })
        .collect();
    PanelData::from_rows(&rows, &[]).unwrap()
}
