//! Grouped fixed-effects estimation for panel data.
//!
//! A linear panel model in which every unit belongs to one of G latent
//! groups sharing a time profile is fit by alternating minimization over
//! the grouping and the parameters, with multi-start search over random
//! initializations. The crate covers the full workflow:
//!
//! - [`panel`]: long-format panel model, CSV ingestion, and the within
//!   transformation for unbalanced panels;
//! - [`regression`]: rank-revealing least squares and time-effect codings,
//!   including the two-way fixed-effects reference fit;
//! - [`estimator`]: the alternating fit, with a parameter step that keeps
//!   the one-group case exactly equal to two-way fixed effects on
//!   unbalanced data and every profile summing to zero over time;
//! - [`inference`]: label matching across independent estimations, the
//!   unit-resampling bootstrap with percentile intervals, and per-group
//!   summaries;
//! - [`simulation`]: a generative model with controlled covariate-profile
//!   correlation and a Monte Carlo harness for end-to-end validation.

pub mod error;
pub mod estimator;
pub mod inference;
pub mod panel;
pub mod regression;
mod rng;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
pub use estimator::{
    assignment_step, g_sweep, gfe_fit, gfe_fit_single, parameter_step, recompute_objective,
    unit_group_ssr, unmodified_parameter_step, EstimateReport, GSweepEntry, GfeEstimate,
    GfeOptions, GroupAssignment, GroupTimeProfiles, StartInit, UpdateRule,
};
pub use inference::{
    bootstrap, default_match_mode, group_summaries, match_labels, proportional_effect,
    shift_profiles, BootstrapConfig, BootstrapResult, ExtraColumns, GroupSummary, LabelPermutation,
    MatchMode, SummaryStats,
};
pub use panel::{
    demeaned_time_dummies, load_csv, within_transform, CsvSchema, DemeanedPanel, PanelData,
    PanelRow,
};
pub use regression::{fit_2wfe, fit_time_effects, least_squares, TimeDummyCoding, TimeEffectEstimate};
pub use simulation::{
    equal_norm_profiles, estimate_rho, estimate_rho_from_fit, monte_carlo, simulate_panel,
    DgpSpec, GroundTruth, GroupAllocation, McConfig, MonteCarloResult, Missingness, RhoCell,
};
