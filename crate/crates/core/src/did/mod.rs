//! Four-group difference-in-differences: sample construction, the
//! inverse-probability-weighted ATET, the OLS baseline, and stratified
//! bootstrap inference.

mod bootstrap;
mod ipw;
mod ols;
mod sample;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::CalendarError;
use crate::exec::Execution;
use crate::glm::GlmError;
use crate::panel::{Outcome, Quality};
use crate::transforms::TransformError;

pub use bootstrap::{bootstrap_se, BootstrapResult};
pub use ipw::{estimate_ipw_did, ipw_did_detail, IpwDetail, IpwOptions};
pub use ols::estimate_ols_did;
pub use sample::{build_sample, means_did, prepare_outcomes, DidSample, PreparedOutcomes};

/// One of the four (D, T) cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cell {
    /// D=1, T=1: treated series in the protected phase.
    TreatedPost,
    TreatedPre,
    ControlPost,
    ControlPre,
}

impl Cell {
    pub const ALL: [Cell; 4] = [
        Cell::TreatedPost,
        Cell::TreatedPre,
        Cell::ControlPost,
        Cell::ControlPre,
    ];

    /// Comparison groups reweighted toward the treated-post covariate distribution.
    pub const COMPARISONS: [Cell; 3] = [Cell::TreatedPre, Cell::ControlPost, Cell::ControlPre];

    pub fn of(d: bool, t: bool) -> Cell {
        match (d, t) {
            (true, true) => Cell::TreatedPost,
            (true, false) => Cell::TreatedPre,
            (false, true) => Cell::ControlPost,
            (false, false) => Cell::ControlPre,
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn d(&self) -> bool {
        matches!(self, Cell::TreatedPost | Cell::TreatedPre)
    }

    pub fn t(&self) -> bool {
        matches!(self, Cell::TreatedPost | Cell::ControlPost)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D={},T={}", u8::from(self.d()), u8::from(self.t()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DidError {
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error(transparent)]
    Overlap(#[from] TransformError),
    #[error("no observations for series {0}")]
    EmptySeries(String),
    #[error("empty cell ({0}): too few harvest weeks to estimate")]
    EmptyCell(Cell),
    #[error("cell ({cell}) has {n} observations, fewer than the minimum {min}")]
    TooFewObservations { cell: Cell, n: usize, min: usize },
    #[error("no season has the required pre-protection weeks in both series")]
    NoPlaceboSeasons,
    #[error("propensity fit for ({group}) vs (D=1,T=1): {source}")]
    Propensity { group: Cell, source: GlmError },
    #[error("propensity fit for ({0}) vs (D=1,T=1) did not converge")]
    NotConverged(Cell),
    #[error("trimming removed every observation of ({0})")]
    TrimExhausted(Cell),
    #[error(transparent)]
    Ols(GlmError),
    #[error("{failed} of {reps} bootstrap replicates failed")]
    BootstrapDegenerate { failed: usize, reps: usize },
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

impl DidError {
    /// Infeasible tasks lack the data to estimate; they are not failures.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            DidError::Overlap(_)
                | DidError::EmptySeries(_)
                | DidError::EmptyCell(_)
                | DidError::TooFewObservations { .. }
                | DidError::NoPlaceboSeasons
        )
    }

    /// Short machine-readable status, e.g. `empty_cell(D=1,T=0)`.
    pub fn status_code(&self) -> String {
        match self {
            DidError::Calendar(_) => "calendar_miss".into(),
            DidError::Overlap(_) => "empty_overlap".into(),
            DidError::EmptySeries(_) => "empty_series".into(),
            DidError::EmptyCell(c) => format!("empty_cell({c})"),
            DidError::TooFewObservations { cell, .. } => format!("too_few({cell})"),
            DidError::NoPlaceboSeasons => "no_placebo_seasons".into(),
            DidError::Propensity {
                source: GlmError::Separation { .. },
                ..
            } => "separation".into(),
            DidError::Propensity { .. } | DidError::NotConverged(_) => "propensity".into(),
            DidError::TrimExhausted(c) => format!("trim_exhausted({c})"),
            DidError::Ols(_) => "ols".into(),
            DidError::BootstrapDegenerate { .. } => "bootstrap_degenerate".into(),
            DidError::InvalidTask(_) => "invalid_task".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesSelector {
    pub product: String,
    pub quality: Quality,
    pub country: String,
    /// `None` pools all regions of the country.
    #[serde(default)]
    pub region: Option<String>,
}

impl SeriesSelector {
    pub fn new(product: impl Into<String>, quality: Quality, country: impl Into<String>) -> Self {
        SeriesSelector {
            product: product.into(),
            quality,
            country: country.into(),
            region: None,
        }
    }
}

impl fmt::Display for SeriesSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.product, self.quality, self.country)?;
        if let Some(r) = &self.region {
            write!(f, "/{r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariates {
    None,
    SeasonalFe,
    SeasonalPlusBiweeklyFe,
}

impl Covariates {
    pub fn has_seasons(&self) -> bool {
        !matches!(self, Covariates::None)
    }
}

/// How biweekly dummies are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiweekMode {
    /// Weeks 1-2 after the season start form biweek 1, and so on.
    Season,
    /// ISO weeks 1-2 of the year form biweek 1, and so on.
    CalendarYear,
}

/// Which observations the propensity threshold removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimTarget {
    /// Comparison-group observations whose pairwise score exceeds the threshold.
    Comparison,
    /// Treated-post observations whose score exceeds the threshold in any fit.
    TreatedPost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationTask {
    pub treated: SeriesSelector,
    pub control: SeriesSelector,
    pub outcome: Outcome,
    pub trim_threshold: f64,
    pub trim_target: TrimTarget,
    pub covariates: Covariates,
    pub biweek_mode: BiweekMode,
    pub min_cell_size: usize,
    pub bootstrap_reps: usize,
    pub seed: u64,
}

pub const DEFAULT_TRIM: f64 = 0.95;
pub const DEFAULT_MIN_CELL: usize = 4;

impl EstimationTask {
    pub fn new(treated: SeriesSelector, control: SeriesSelector, outcome: Outcome) -> Self {
        EstimationTask {
            treated,
            control,
            outcome,
            trim_threshold: DEFAULT_TRIM,
            trim_target: TrimTarget::Comparison,
            covariates: Covariates::SeasonalFe,
            biweek_mode: BiweekMode::Season,
            min_cell_size: DEFAULT_MIN_CELL,
            bootstrap_reps: 199,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DidError> {
        if !(self.trim_threshold > 0.0 && self.trim_threshold <= 1.0) {
            return Err(DidError::InvalidTask(format!(
                "trim threshold {} outside (0, 1]",
                self.trim_threshold
            )));
        }
        if self.bootstrap_reps == 1 {
            return Err(DidError::InvalidTask("bootstrap needs at least 2 replicates".into()));
        }
        Ok(())
    }

    pub fn ipw_options(&self) -> IpwOptions {
        IpwOptions {
            trim_threshold: self.trim_threshold,
            trim_target: self.trim_target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ipw,
    Ols,
    /// Plain 2x2 cell means (no covariates).
    Means,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ipw => "ipw",
            Method::Ols => "ols",
            Method::Means => "means",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub se: f64,
    pub p_value: f64,
    pub ci_normal: (f64, f64),
    pub ci_percentile: Option<(f64, f64)>,
    /// Successful bootstrap replicates; 0 for analytic standard errors.
    pub reps: usize,
    pub failed_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub atet: f64,
    pub inference: Option<Inference>,
    /// Counts in [`Cell::ALL`] order, before trimming.
    pub n_by_cell: [usize; 4],
    pub n_trimmed_by_cell: [usize; 4],
    pub method: Method,
}

impl EffectEstimate {
    pub fn se(&self) -> Option<f64> {
        self.inference.as_ref().map(|i| i.se)
    }

    pub fn p_value(&self) -> Option<f64> {
        self.inference.as_ref().map(|i| i.p_value)
    }

    pub fn trimmed(&self) -> usize {
        self.n_trimmed_by_cell.iter().sum()
    }

    fn with_bootstrap(mut self, b: &BootstrapResult) -> Self {
        self.inference = Some(Inference {
            se: b.se,
            p_value: b.p_value,
            ci_normal: b.ci_normal,
            ci_percentile: Some(b.ci_percentile),
            reps: b.reps_ok,
            failed_reps: b.reps_failed,
        });
        self
    }
}

/// IPW point estimate plus stratified-bootstrap inference when the task asks
/// for replicates.
pub fn estimate_ipw_with_bootstrap(
    sample: &DidSample,
    task: &EstimationTask,
    exec: Execution,
) -> Result<EffectEstimate, DidError> {
    task.validate()?;
    let opts = task.ipw_options();
    let point = estimate_ipw_did(sample, &opts)?;
    if task.bootstrap_reps < 2 {
        return Ok(point);
    }
    let boot = bootstrap_se(
        sample,
        point.atet,
        |s| ipw_did_detail(s, &opts).map(|d| d.atet),
        task.bootstrap_reps,
        task.seed,
        exec,
    )?;
    Ok(point.with_bootstrap(&boot))
}

/// 2x2 cell-means DiD with stratified-bootstrap inference.
pub fn estimate_means_with_bootstrap(
    sample: &DidSample,
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<EffectEstimate, DidError> {
    sample.check_cells(1)?;
    let point = EffectEstimate {
        atet: means_did(sample),
        inference: None,
        n_by_cell: sample.cell_counts(),
        n_trimmed_by_cell: [0; 4],
        method: Method::Means,
    };
    if reps < 2 {
        return Ok(point);
    }
    let boot = bootstrap_se(sample, point.atet, |s| Ok(means_did(s)), reps, seed, exec)?;
    Ok(point.with_bootstrap(&boot))
}

#[cfg(test)]
mod tests;
