use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::did::{BiweekMode, Covariates, EstimationTask, SeriesSelector, TrimTarget};
use crate::panel::{Outcome, Panel, Quality};
use crate::calendar::ProtectionCalendar;

use super::CliError;

/// One or more paths; TOML accepts a string or an array of strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Paths {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl Paths {
    pub fn to_vec(&self) -> Vec<PathBuf> {
        match self {
            Paths::One(p) => vec![p.clone()],
            Paths::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub product: String,
    /// Both qualities when omitted.
    #[serde(default)]
    pub quality: Option<Quality>,
    #[serde(default)]
    pub treated_country: Option<String>,
    pub control_country: String,
    /// Defaults to the treated product.
    #[serde(default)]
    pub control_product: Option<String>,
    #[serde(default)]
    pub control_region: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskList {
    /// Only `"all-pairs"` is accepted.
    Matcher(String),
    List(Vec<TaskSpec>),
}

pub const ALL_PAIRS: &str = "all-pairs";

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_reps() -> usize {
    199
}
fn default_trims() -> Vec<f64> {
    vec![crate::did::DEFAULT_TRIM]
}
fn default_outcomes() -> Vec<Outcome> {
    vec![Outcome::Level, Outcome::Volatility]
}
fn default_treated() -> String {
    "CH".into()
}
fn default_covariates() -> Covariates {
    Covariates::SeasonalFe
}
fn default_biweek() -> BiweekMode {
    BiweekMode::Season
}
fn default_trim_target() -> TrimTarget {
    TrimTarget::Comparison
}
fn default_min_cell() -> usize {
    crate::did::DEFAULT_MIN_CELL
}
fn yes() -> bool {
    true
}

/// Batch configuration. Every default is serialized back into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub prices: Paths,
    pub calendar: PathBuf,
    #[serde(default)]
    pub attributes: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_reps")]
    pub bootstrap_reps: usize,
    #[serde(default = "default_trims")]
    pub trim: Vec<f64>,
    #[serde(default = "default_trim_target")]
    pub trim_target: TrimTarget,
    #[serde(default = "default_outcomes")]
    pub outcomes: Vec<Outcome>,
    #[serde(default = "default_covariates")]
    pub covariates: Covariates,
    #[serde(default = "default_biweek")]
    pub biweek_mode: BiweekMode,
    #[serde(default = "default_min_cell")]
    pub min_cell_size: usize,
    #[serde(default = "default_treated")]
    pub treated_country: String,
    #[serde(default = "yes")]
    pub ols: bool,
    #[serde(default = "yes")]
    pub placebo: bool,
    #[serde(default)]
    pub rolling: bool,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub skip_bad_rows: bool,
    pub tasks: TaskList,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trim: Option<f64>,
    pub reps: Option<usize>,
    pub workers: Option<usize>,
    pub skip_bad_rows: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path`, resolving relative input and output paths against its
    /// directory, and applies `overrides`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        cfg.prices = match &cfg.prices {
            Paths::One(p) => Paths::One(resolve(p)),
            Paths::Many(v) => Paths::Many(v.iter().map(resolve).collect()),
        };
        cfg.calendar = resolve(&cfg.calendar);
        cfg.attributes = cfg.attributes.as_ref().map(resolve);
        cfg.output_dir = resolve(&cfg.output_dir);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(t) = o.trim {
            self.trim = vec![t];
        }
        if let Some(r) = o.reps {
            self.bootstrap_reps = r;
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        self.skip_bad_rows |= o.skip_bad_rows;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.bootstrap_reps >= 2 && self.seed.is_none() {
            return bad("a seed is required when bootstrap_reps >= 2".into());
        }
        if self.bootstrap_reps == 1 {
            return bad("bootstrap_reps must be 0 or at least 2".into());
        }
        if self.trim.is_empty() {
            return bad("at least one trim threshold is required".into());
        }
        if let Some(t) = self.trim.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return bad(format!("trim threshold {t} outside (0, 1]"));
        }
        if self.trim.iter().enumerate().any(|(i, t)| self.trim[..i].contains(t)) {
            return bad("trim thresholds must be distinct".into());
        }
        if self.outcomes.is_empty() {
            return bad("at least one outcome is required".into());
        }
        match &self.tasks {
            TaskList::Matcher(m) if m != ALL_PAIRS => bad(format!("tasks must be a list or \"{ALL_PAIRS}\", got \"{m}\"")),
            TaskList::List(v) if v.is_empty() => bad("empty task list".into()),
            _ => Ok(()),
        }
    }

    /// Concrete series pairs, sorted and deduplicated.
    pub fn pairs(&self, panel: &Panel, calendar: &ProtectionCalendar) -> Vec<(SeriesSelector, SeriesSelector)> {
        let mut out = BTreeSet::new();
        match &self.tasks {
            TaskList::List(specs) => {
                for spec in specs {
                    let qualities = match spec.quality {
                        Some(q) => vec![q],
                        None => vec![Quality::Conventional, Quality::Organic],
                    };
                    for q in qualities {
                        let treated = SeriesSelector::new(
                            spec.product.clone(),
                            q,
                            spec.treated_country.clone().unwrap_or_else(|| self.treated_country.clone()),
                        );
                        let mut control = SeriesSelector::new(
                            spec.control_product.clone().unwrap_or_else(|| spec.product.clone()),
                            q,
                            spec.control_country.clone(),
                        );
                        control.region = spec.control_region.clone();
                        out.insert((treated, control));
                    }
                }
            }
            TaskList::Matcher(_) => {
                let series: BTreeSet<(String, Quality, String)> = panel
                    .series_keys()
                    .into_iter()
                    .map(|k| (k.product.clone(), k.quality, k.country.clone()))
                    .collect();
                for (product, quality, country) in &series {
                    if *country != self.treated_country || calendar.window(product).is_err() {
                        continue;
                    }
                    for (p2, q2, c2) in &series {
                        if p2 == product && q2 == quality && c2 != country {
                            out.insert((
                                SeriesSelector::new(product.clone(), *quality, country.clone()),
                                SeriesSelector::new(p2.clone(), *q2, c2.clone()),
                            ));
                        }
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    /// Estimation tasks for every pair and outcome, sorted by key, with
    /// per-task seeds derived from the master seed.
    pub fn tasks(&self, panel: &Panel, calendar: &ProtectionCalendar) -> Vec<(String, EstimationTask)> {
        let mut out = Vec::new();
        for (treated, control) in self.pairs(panel, calendar) {
            for &outcome in &self.outcomes {
                let mut task = EstimationTask::new(treated.clone(), control.clone(), outcome);
                task.trim_target = self.trim_target;
                task.covariates = self.covariates;
                task.biweek_mode = self.biweek_mode;
                task.min_cell_size = self.min_cell_size;
                task.bootstrap_reps = self.bootstrap_reps;
                let key = task_key(&task);
                task.seed = task_seed(self.seed.unwrap_or(0), &key);
                out.push((key, task));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

/// Stable identifier of a task, independent of trim threshold and seed.
pub fn task_key(task: &EstimationTask) -> String {
    format!("{}|{}|{}", task.treated, task.control, task.outcome.as_str())
}

/// First eight bytes of SHA-256 over the master seed and task key.
pub fn task_seed(master: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
