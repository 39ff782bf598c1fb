//! `gfe`: grouped fixed-effects estimation from the command line.
//!
//! Subcommands: fit | sweep | bootstrap | simulate | mc | summarize. Every
//! stochastic command takes an explicit seed and writes a manifest echoing
//! its full configuration, so results are reproducible from the manifest
//! alone. Exit codes: 0 success, 1 estimation failure, 2 usage or I/O
//! failure.

mod output;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gfe_core::estimator::{g_sweep, gfe_fit, GfeOptions, GroupAssignment, UpdateRule};
use gfe_core::inference::{
    bootstrap, group_summaries, BootstrapConfig, ExtraColumns, MatchMode,
};
use gfe_core::panel::{load_csv, CsvSchema, PanelData};
use gfe_core::simulation::{monte_carlo, simulate_panel, DgpSpec, McConfig};

use output::{profile_svg, CsvBuilder, OutputTracker};

#[derive(Parser)]
#[command(
    name = "gfe",
    version,
    about = "Grouped fixed-effects estimation for panel data"
)]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model for one group count and write the estimate.
    Fit(FitArgs),
    /// Fit across a range of group counts and emit stability tables.
    Sweep(SweepArgs),
    /// Unit-resampling bootstrap with label-matched percentile intervals.
    Bootstrap(BootstrapArgs),
    /// Draw one synthetic panel from a generative spec.
    Simulate(SimulateArgs),
    /// Monte Carlo: simulate, fit, and score many synthetic panels.
    Mc(McArgs),
    /// Per-group summary statistics for a panel and a grouping.
    Summarize(SummarizeArgs),
}

#[derive(Args, Serialize)]
struct InputArgs {
    /// Input panel CSV in long format.
    #[arg(long)]
    input: PathBuf,
    /// Unit id column.
    #[arg(long, default_value = "unit")]
    unit_col: String,
    /// Period column (integers or ISO dates).
    #[arg(long, default_value = "period")]
    time_col: String,
    /// Outcome column.
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Comma-separated covariate columns; all remaining columns if omitted.
    #[arg(long, value_delimiter = ',')]
    x_cols: Option<Vec<String>>,
}

impl InputArgs {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            unit: self.unit_col.clone(),
            period: self.time_col.clone(),
            outcome: self.y_col.clone(),
            covariates: self.x_cols.clone(),
        }
    }

    fn load(&self) -> Result<PanelData, gfe_core::Error> {
        load_csv(&self.input, &self.schema())
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Modified,
    Unmodified,
}

impl From<MethodArg> for UpdateRule {
    fn from(value: MethodArg) -> UpdateRule {
        match value {
            MethodArg::Modified => UpdateRule::Modified,
            MethodArg::Unmodified => UpdateRule::Unmodified,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MatchArg {
    Exhaustive,
    Assignment,
}

impl From<MatchArg> for MatchMode {
    fn from(value: MatchArg) -> MatchMode {
        match value {
            MatchArg::Exhaustive => MatchMode::Exhaustive,
            MatchArg::Assignment => MatchMode::Assignment,
        }
    }
}

fn parse_percentiles(raw: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 2 {
        return Err("expected two comma-separated percentiles, e.g. 2.5,97.5".into());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| "lower percentile is not a number")?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| "upper percentile is not a number")?;
    Ok((lo, hi))
}

/// "1-10" or a comma list "1,3,7"; values must be at least 1.
fn parse_group_range(raw: &str) -> Result<Vec<usize>, String> {
    let parse_one = |s: &str| -> Result<usize, String> {
        s.trim().parse::<usize>().map_err(|_| format!("`{}` is not a group count", s))
    };
    let values: Vec<usize> = if let Some((a, b)) = raw.split_once('-') {
        let lo = parse_one(a)?;
        let hi = parse_one(b)?;
        if lo > hi {
            return Err("range lower bound exceeds upper bound".into());
        }
        (lo..=hi).collect()
    } else {
        raw.split(',').map(parse_one).collect::<Result<_, _>>()?
    };
    if values.contains(&0) {
        return Err("group counts must be at least 1".into());
    }
    Ok(values)
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of latent groups.
    #[arg(long)]
    groups: usize,
    /// Random starts.
    #[arg(long, default_value_t = 100)]
    starts: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Modified)]
    method: MethodArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write an SVG line chart of the shifted profiles.
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Group counts: a range "1-10" or a list "1,3,7".
    #[arg(long)]
    group_range: String,
    #[arg(long, default_value_t = 100)]
    starts: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Modified)]
    method: MethodArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Serialize)]
struct BootstrapArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    groups: usize,
    /// Bootstrap replications B.
    #[arg(long)]
    reps: usize,
    #[arg(long, default_value_t = 100)]
    starts: usize,
    #[arg(long)]
    seed: u64,
    /// Lower and upper percentile, in percent.
    #[arg(long, default_value = "2.5,97.5", value_parser = parse_percentiles)]
    percentiles: (f64, f64),
    /// Label-matching mode; exhaustive for G <= 8 by default.
    #[arg(long = "match", value_enum)]
    match_mode: Option<MatchArg>,
    #[arg(long, value_enum, default_value_t = MethodArg::Modified)]
    method: MethodArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// JSON generative specification.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct McArgs {
    /// JSON generative specification.
    #[arg(long)]
    spec: PathBuf,
    /// Number of simulated datasets M.
    #[arg(long)]
    sims: usize,
    /// Groups to fit; must match the spec's group count.
    #[arg(long)]
    groups: usize,
    #[arg(long, default_value_t = 100)]
    starts: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "2.5,97.5", value_parser = parse_percentiles)]
    percentiles: (f64, f64),
    #[arg(long = "match", value_enum)]
    match_mode: Option<MatchArg>,
    #[arg(long, value_enum, default_value_t = MethodArg::Modified)]
    method: MethodArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SummarizeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Grouping CSV with columns unit,group (1-based labels), e.g. the
    /// gamma.csv a fit wrote. If omitted, a fresh fit supplies the grouping.
    #[arg(long)]
    gamma: Option<PathBuf>,
    /// Groups for a fresh fit when --gamma is not given.
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long, default_value_t = 100)]
    starts: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = MethodArg::Modified)]
    method: MethodArg,
    /// Extra per-observation columns from the input CSV to summarize.
    #[arg(long, value_delimiter = ',')]
    extra_cols: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

fn float(v: f64) -> String {
    format!("{}", v)
}

fn write_profiles_csv(
    tracker: &mut OutputTracker,
    name: &str,
    periods: &[i64],
    alpha_dot: &[Vec<f64>],
    shifted: &[Vec<f64>],
) -> anyhow::Result<()> {
    let mut csv = CsvBuilder::new("group,period,alpha_dot,alpha_shifted");
    for (g, (dot_row, shift_row)) in alpha_dot.iter().zip(shifted).enumerate() {
        for (ti, &period) in periods.iter().enumerate() {
            csv.row(&[
                (g + 1).to_string(),
                period.to_string(),
                float(dot_row[ti]),
                float(shift_row[ti]),
            ]);
        }
    }
    tracker.write_text(name, &csv.finish())?;
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> anyhow::Result<()> {
    let panel = args.input.load()?;
    let opts = GfeOptions::new(args.groups, args.starts, args.seed).with_update(args.method.into());
    let estimate = gfe_fit(&panel, &opts)?;
    let report = estimate.to_report(&panel);

    let mut tracker = OutputTracker::create(&args.out)?;
    let run = (|| -> anyhow::Result<()> {
        tracker.write_json("estimate.json", &report)?;
        write_profiles_csv(
            &mut tracker,
            "profiles.csv",
            panel.period_ids(),
            estimate.profiles.alpha_dot(),
            &estimate.profiles.shifted(),
        )?;
        let mut gamma = CsvBuilder::new("unit,group");
        for (unit, &g) in panel.unit_ids().iter().zip(estimate.assignment.labels()) {
            gamma.row(&[unit.clone(), (g + 1).to_string()]);
        }
        tracker.write_text("gamma.csv", &gamma.finish())?;
        if args.svg {
            let svg = profile_svg(panel.period_ids(), &estimate.profiles.shifted());
            tracker.write_text("profiles.svg", &svg)?;
        }
        Ok(())
    })();
    match run {
        Ok(()) => tracker.finalize("fit", args),
        Err(e) => {
            tracker.discard();
            Err(e)
        }
    }
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let g_range = parse_group_range(&args.group_range)
        .map_err(|m| gfe_core::Error::invalid(format!("--group-range: {}", m)))?;
    let panel = args.input.load()?;
    let sweep = g_sweep(&panel, &g_range, args.starts, args.seed, args.method.into())?;

    let mut tracker = OutputTracker::create(&args.out)?;
    let run = (|| -> anyhow::Result<()> {
        let mut estimates = CsvBuilder::new("groups,covariate,estimate");
        let mut objectives = CsvBuilder::new("groups,objective,iterations,converged");
        for entry in &sweep {
            for (name, &value) in panel.covariate_names().iter().zip(&entry.estimate.theta) {
                estimates.row(&[entry.group_count.to_string(), name.clone(), float(value)]);
            }
            objectives.row(&[
                entry.group_count.to_string(),
                float(entry.estimate.objective),
                entry.estimate.iterations.to_string(),
                entry.estimate.converged.to_string(),
            ]);
        }
        tracker.write_text("estimates_by_g.csv", &estimates.finish())?;
        tracker.write_text("objectives.csv", &objectives.finish())?;
        for entry in &sweep {
            write_profiles_csv(
                &mut tracker,
                &format!("profiles_g{}.csv", entry.group_count),
                panel.period_ids(),
                entry.estimate.profiles.alpha_dot(),
                &entry.estimate.profiles.shifted(),
            )?;
            if args.svg {
                let svg = profile_svg(panel.period_ids(), &entry.estimate.profiles.shifted());
                tracker.write_text(&format!("profiles_g{}.svg", entry.group_count), &svg)?;
            }
        }
        Ok(())
    })();
    match run {
        Ok(()) => tracker.finalize("sweep", args),
        Err(e) => {
            tracker.discard();
            Err(e)
        }
    }
}

fn cmd_bootstrap(args: &BootstrapArgs) -> anyhow::Result<()> {
    let panel = args.input.load()?;
    let mut config = BootstrapConfig::new(args.groups, args.reps, args.starts, args.seed);
    config.percentiles = args.percentiles;
    config.match_mode = args.match_mode.map(Into::into);
    config.update = args.method.into();
    let result = bootstrap(&panel, &config)?;

    let mut tracker = OutputTracker::create(&args.out)?;
    let run = (|| -> anyhow::Result<()> {
        tracker.write_json("bootstrap.json", &result)?;

        let mut theta = CsvBuilder::new("covariate,estimate,lower,upper");
        for (j, name) in panel.covariate_names().iter().enumerate() {
            let (lo, hi) = result.intervals_theta[j];
            theta.row(&[
                name.clone(),
                float(result.reference.theta[j]),
                float(lo),
                float(hi),
            ]);
        }
        tracker.write_text("intervals_theta.csv", &theta.finish())?;

        let reference_shifted = result.reference.profiles.shifted();
        let mut profiles = CsvBuilder::new("group,period,estimate,lower,upper");
        for (g, row) in result.intervals_profiles.iter().enumerate() {
            for (ti, &period) in panel.period_ids().iter().enumerate() {
                let (lo, hi) = row[ti];
                profiles.row(&[
                    (g + 1).to_string(),
                    period.to_string(),
                    float(reference_shifted[g][ti]),
                    float(lo),
                    float(hi),
                ]);
            }
        }
        tracker.write_text("intervals_profiles.csv", &profiles.finish())?;

        let mut matched = CsvBuilder::new("replication,group,period,value");
        for (row_idx, &b) in result.successful.iter().enumerate() {
            for (g, prow) in result.matched_profiles[row_idx].iter().enumerate() {
                for (ti, &period) in panel.period_ids().iter().enumerate() {
                    matched.row(&[
                        b.to_string(),
                        (g + 1).to_string(),
                        period.to_string(),
                        float(prow[ti]),
                    ]);
                }
            }
        }
        tracker.write_text("matched_profiles.csv", &matched.finish())?;
        Ok(())
    })();
    match run {
        Ok(()) => tracker.finalize("bootstrap", args),
        Err(e) => {
            tracker.discard();
            Err(e)
        }
    }
}

fn read_spec(path: &Path) -> anyhow::Result<DgpSpec> {
    let text = std::fs::read_to_string(path).map_err(|source| gfe_core::Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let spec: DgpSpec = serde_json::from_str(&text)
        .map_err(|e| gfe_core::Error::invalid(format!("invalid spec JSON: {}", e)))?;
    spec.validate()?;
    Ok(spec)
}

fn cmd_simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let spec = read_spec(&args.spec)?;
    let (panel, truth) = simulate_panel(&spec, args.seed)?;
    let mut tracker = OutputTracker::create(&args.out)?;
    let run = (|| -> anyhow::Result<()> {
        let panel_path = tracker.dir().join("panel.csv");
        panel.write_csv(&panel_path)?;
        tracker.note_external(panel_path);
        tracker.write_json("truth.json", &truth)?;
        Ok(())
    })();
    match run {
        Ok(()) => tracker.finalize("simulate", args),
        Err(e) => {
            tracker.discard();
            Err(e)
        }
    }
}

fn cmd_mc(args: &McArgs) -> anyhow::Result<()> {
    let spec = read_spec(&args.spec)?;
    let mut config = McConfig::new(args.sims, args.groups, args.starts, args.seed);
    config.percentiles = args.percentiles;
    config.match_mode = args.match_mode.map(Into::into);
    config.update = args.method.into();
    let result = monte_carlo(&spec, &config)?;

    let mut tracker = OutputTracker::create(&args.out)?;
    let run = (|| -> anyhow::Result<()> {
        tracker.write_json("mc.json", &result)?;

        let k = spec.n_covariates();
        let mut header = "replication,sim_seed,converged,objective,misclassification".to_string();
        for j in 1..=k {
            header.push_str(&format!(",theta_x{}", j));
        }
        let mut scores = CsvBuilder::new(&header);
        for rep in &result.replications {
            let mut fields = vec![
                rep.index.to_string(),
                rep.sim_seed.to_string(),
                rep.converged.to_string(),
                float(rep.objective),
                float(rep.misclassification),
            ];
            fields.extend(rep.theta.iter().map(|&v| float(v)));
            scores.row(&fields);
        }
        tracker.write_text("scores.csv", &scores.finish())?;

        let mut bands = CsvBuilder::new("group,period,truth_shifted,lower,upper");
        let truth_shifted = gfe_core::shift_profiles(&spec.profiles);
        for (g, row) in result.profile_intervals.iter().enumerate() {
            for (ti, &(lo, hi)) in row.iter().enumerate() {
                bands.row(&[
                    (g + 1).to_string(),
                    (ti + 1).to_string(),
                    float(truth_shifted[g][ti]),
                    float(lo),
                    float(hi),
                ]);
            }
        }
        tracker.write_text("profile_bands.csv", &bands.finish())?;
        Ok(())
    })();
    match run {
        Ok(()) => tracker.finalize("mc", args),
        Err(e) => {
            tracker.discard();
            Err(e)
        }
    }
}

/// Read a unit,group CSV (1-based labels) into an assignment aligned with
/// the panel's unit order.
fn read_gamma(path: &Path, panel: &PanelData) -> anyhow::Result<GroupAssignment> {
    let text = std::fs::read_to_string(path).map_err(|source| gfe_core::Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut by_unit: HashMap<String, usize> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue; // header
        }
        let (unit, group) = line.rsplit_once(',').ok_or_else(|| {
            gfe_core::Error::invalid(format!("gamma line {} lacks a comma", idx + 1))
        })?;
        let label: usize = group.trim().parse().map_err(|_| {
            gfe_core::Error::invalid(format!("gamma line {}: `{}` is not a group", idx + 1, group))
        })?;
        if label == 0 {
            return Err(gfe_core::Error::invalid("group labels are 1-based").into());
        }
        by_unit.insert(unit.to_string(), label - 1);
    }
    let known: std::collections::HashSet<&str> =
        panel.unit_ids().iter().map(|s| s.as_str()).collect();
    if let Some(bad) = by_unit.keys().find(|u| !known.contains(u.as_str())) {
        return Err(gfe_core::Error::UnknownUnit(bad.clone()).into());
    }
    let labels = panel
        .unit_ids()
        .iter()
        .map(|unit| {
            by_unit.get(unit).copied().ok_or_else(|| {
                gfe_core::Error::invalid(format!("gamma file does not cover unit `{}`", unit))
            })
        })
        .collect::<Result<Vec<usize>, _>>()?;
    let group_count = labels.iter().max().map_or(1, |&g| g + 1);
    Ok(GroupAssignment::new(labels, group_count)?)
}

/// Pull named per-observation columns out of the input CSV, aligned with
/// the panel's unit-major observation order.
fn read_extra_columns(
    args: &InputArgs,
    panel: &PanelData,
    names: &[String],
) -> anyhow::Result<ExtraColumns> {
    if names.is_empty() {
        return Ok(ExtraColumns::default());
    }
    let schema = CsvSchema {
        unit: args.unit_col.clone(),
        period: args.time_col.clone(),
        outcome: args.y_col.clone(),
        covariates: Some(names.to_vec()),
    };
    let shadow = load_csv(&args.input, &schema)?;
    let mut per_observation = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let mut values = Vec::with_capacity(panel.n_observations());
        for i in 0..shadow.n_units() {
            for pos in 0..shadow.t_i(i) {
                values.push(shadow.covariates_at(i, pos)[j]);
            }
        }
        per_observation.push((name.clone(), values));
    }
    Ok(ExtraColumns {
        per_unit: Vec::new(),
        per_observation,
    })
}

fn cmd_summarize(args: &SummarizeArgs) -> anyhow::Result<()> {
    let panel = args.input.load()?;
    let gamma = match (&args.gamma, args.groups) {
        (Some(path), _) => read_gamma(path, &panel)?,
        (None, Some(groups)) => {
            let seed = args.seed.ok_or_else(|| {
                gfe_core::Error::invalid("--seed is required when fitting a fresh grouping")
            })?;
            let opts = GfeOptions::new(groups, args.starts, seed).with_update(args.method.into());
            gfe_fit(&panel, &opts)?.assignment
        }
        (None, None) => {
            return Err(gfe_core::Error::invalid("either --gamma or --groups is required").into())
        }
    };
    let extra = read_extra_columns(&args.input, &panel, args.extra_cols.as_deref().unwrap_or(&[]))?;
    let summaries = group_summaries(&panel, &gamma, &extra)?;

    let mut tracker = OutputTracker::create(&args.out)?;
    let run = (|| -> anyhow::Result<()> {
        tracker.write_json("summary.json", &summaries)?;
        let mut csv =
            CsvBuilder::new("group,unit_count,share,variable,count,mean,sd,median,q1,q3,min,max");
        for summary in &summaries {
            for var in &summary.variables {
                csv.row(&[
                    summary.group.to_string(),
                    summary.unit_count.to_string(),
                    float(summary.share),
                    var.variable.clone(),
                    var.stats.count.to_string(),
                    float(var.stats.mean),
                    float(var.stats.sd),
                    float(var.stats.median),
                    float(var.stats.q1),
                    float(var.stats.q3),
                    float(var.stats.min),
                    float(var.stats.max),
                ]);
            }
        }
        tracker.write_text("summary.csv", &csv.finish())?;
        Ok(())
    })();
    match run {
        Ok(()) => tracker.finalize("summarize", args),
        Err(e) => {
            tracker.discard();
            Err(e)
        }
    }
}

/// Estimation failures exit 1; bad input, unreadable files, and invalid
/// configurations exit 2.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    use gfe_core::Error::*;
    match err.downcast_ref::<gfe_core::Error>() {
        Some(RankDeficient(_)) | Some(EmptyPeriod(_)) | Some(EmptyGroup(_))
        | Some(EmptyCell { .. }) | Some(BootstrapFailureBudget { .. }) => 1,
        Some(_) => 2,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Results do not depend on the pool size; this only bounds CPU use.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let result = match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Bootstrap(args) => cmd_bootstrap(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Mc(args) => cmd_mc(args),
        Command::Summarize(args) => cmd_summarize(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err);
            ExitCode::from(exit_code_for(&err))
        }
    }
}
