//! Batch front end: ingestion, synthetic data, estimation runs and reports.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::calendar::ProtectionCalendar;
use crate::diagnostics::{
    describe_distribution, descriptive_outcomes, descriptives_to_csv, heterogeneity_regression,
    heterogeneity_to_csv, join_effects_attributes, pretrend_placebo, rolling_biweekly_effects,
    rolling_to_csv,
};
use crate::did::{
    build_sample, estimate_ipw_with_bootstrap, estimate_ols_did, DidError, EffectEstimate, EstimationTask, Method,
};
use crate::exec::{map_slice, with_workers, Execution};
use crate::io::{self, EffectRow};
use crate::panel::Panel;
use crate::simgen::{generate_panel, true_effect, SimConfig};

pub use config::{task_key, task_seed, Overrides, Paths, RunConfig, TaskList, TaskSpec, ALL_PAIRS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_TASK_FAILED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        match e {
            io::IoError::Rejected { errors, .. } => {
                CliError::Io(errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))
            }
            other => CliError::Io(other.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Reads all price files and the calendar named in `cfg`.
pub fn load_inputs(cfg: &RunConfig, log: &mut String) -> Result<(Panel, ProtectionCalendar), CliError> {
    let mut panel = Panel::default();
    for path in cfg.prices.to_vec() {
        let report = io::read_prices_file(&path, cfg.skip_bad_rows)?;
        let _ = write!(log, "{}: {}", path.display(), report.summary());
        for r in &report.rejected {
            let _ = writeln!(log, "  skipped {r}");
        }
        panel = panel
            .merge(report.panel)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    let calendar = ProtectionCalendar::from_reader(io::open(&cfg.calendar)?)
        .map_err(|e| CliError::Io(format!("{}: {e}", cfg.calendar.display())))?;
    if let Some(attrs) = &cfg.attributes {
        io::read_attributes(io::open(attrs)?, &attrs.display().to_string())?;
    }
    Ok((panel, calendar))
}

/// `ingest`: validates price files and prints row counts.
pub fn ingest(paths: &[PathBuf], skip_bad_rows: bool) -> Result<String, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("no price files given".into()));
    }
    let mut out = String::new();
    let mut total = Panel::default();
    for path in paths {
        let report = io::read_prices_file(path, skip_bad_rows)?;
        let _ = write!(out, "{}: {}", path.display(), report.summary());
        for r in &report.rejected {
            let _ = writeln!(out, "  skipped {r}");
        }
        total = total
            .merge(report.panel)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    if paths.len() > 1 {
        let _ = writeln!(out, "total kept: {} ({})", total.len(), io::counts_line(&total.count_by_country()));
    }
    Ok(out)
}

/// `simulate`: writes `prices.csv`, `calendar.csv` and `truth.json`.
pub fn simulate(config: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Result<String, CliError> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            toml::from_str::<SimConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let sim = generate_panel(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let truth = true_effect(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let panel = sim.merged();
    write_file(&out_dir.join("prices.csv"), &io::prices_to_csv(&panel))?;
    write_file(&out_dir.join("calendar.csv"), &sim.calendar.to_csv_string())?;
    let truth_json = serde_json::json!({ "true_atet": truth, "config": cfg });
    write_file(
        &out_dir.join("truth.json"),
        &(serde_json::to_string_pretty(&truth_json).expect("serializable") + "\n"),
    )?;
    Ok(format!("wrote {} rows to {}; true ATET {truth}\n", panel.len(), out_dir.display()))
}

#[derive(Debug, Clone, Serialize)]
struct TaskStatus {
    key: String,
    treated: String,
    control: String,
    outcome: String,
    seed: u64,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropped_seasons: Option<Vec<i32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    placebo: Option<String>,
}

struct TaskOutput {
    effects: Vec<EffectRow>,
    pretrend: Option<EffectRow>,
    rolling: String,
    status: TaskStatus,
    failed: bool,
}

fn status_of(err: &DidError) -> (String, bool) {
    if err.is_infeasible() {
        (format!("infeasible: {}", err.status_code()), false)
    } else {
        (format!("failed: {}", err.status_code()), true)
    }
}

fn effect_row(task: &EstimationTask, estimate: EffectEstimate) -> EffectRow {
    let control = if task.control.product == task.treated.product {
        task.control.country.clone()
    } else {
        format!("{}/{}", task.control.country, task.control.product)
    };
    let reps = estimate.inference.as_ref().map_or(0, |i| i.reps);
    let estimate_method = estimate.method;
    EffectRow {
        product: task.treated.product.clone(),
        quality: task.treated.quality,
        control_country: control,
        outcome: task.outcome,
        method: estimate.method.as_str().to_string(),
        estimate,
        reps,
        seed: task.seed,
        trim: (estimate_method == Method::Ipw).then_some(task.trim_threshold),
    }
}

struct Plan<'a> {
    cfg: &'a RunConfig,
    panel: &'a Panel,
    calendar: &'a ProtectionCalendar,
    estimate: bool,
    placebo: bool,
}

fn run_task(plan: &Plan, key: &str, task: &EstimationTask) -> TaskOutput {
    let mut status = TaskStatus {
        key: key.to_string(),
        treated: task.treated.to_string(),
        control: task.control.to_string(),
        outcome: task.outcome.as_str().to_string(),
        seed: task.seed,
        status: "ok".into(),
        message: None,
        dropped_seasons: None,
        placebo: None,
    };
    let mut out = TaskOutput {
        effects: Vec::new(),
        pretrend: None,
        rolling: String::new(),
        status: status.clone(),
        failed: false,
    };
    let exec = Execution::Parallel;
    let fail = |status: &mut TaskStatus, err: &DidError, failed: &mut bool| {
        if status.status == "ok" {
            let (s, hard) = status_of(err);
            status.status = s;
            status.message = Some(err.to_string());
            *failed |= hard;
        }
    };

    if plan.estimate {
        match build_sample(task, plan.panel, plan.calendar) {
            Ok(sample) => {
                if !sample.dropped_seasons.is_empty() {
                    status.dropped_seasons = Some(sample.dropped_seasons.clone());
                }
                for &trim in &plan.cfg.trim {
                    let mut t = task.clone();
                    t.trim_threshold = trim;
                    match estimate_ipw_with_bootstrap(&sample, &t, exec) {
                        Ok(e) => out.effects.push(effect_row(&t, e)),
                        Err(err) => fail(&mut status, &err, &mut out.failed),
                    }
                }
                if plan.cfg.ols {
                    match estimate_ols_did(&sample) {
                        Ok(e) => out.effects.push(effect_row(task, e)),
                        Err(err) => fail(&mut status, &err, &mut out.failed),
                    }
                }
            }
            Err(err) => fail(&mut status, &err, &mut out.failed),
        }
    }
    if plan.placebo {
        match pretrend_placebo(task, plan.panel, plan.calendar, exec) {
            Ok(e) => {
                status.placebo = Some("ok".into());
                out.pretrend = Some(effect_row(task, e));
            }
            Err(err) => {
                let (s, hard) = status_of(&err);
                status.placebo = Some(s);
                out.failed |= hard;
            }
        }
        if plan.cfg.rolling {
            let label = format!("{},{},{},{}", task.treated.product, task.treated.quality, task.control.country, task.outcome.as_str());
            match rolling_biweekly_effects(task, plan.panel, plan.calendar, exec) {
                Ok(effects) => out.rolling = rolling_to_csv(&label, &effects),
                Err(err) => out.rolling = format!("{label},NA,NA,NA,NA,{}\n", err.status_code()),
            }
        }
    }
    out.status = status;
    out
}

/// Outcome of a batch: a log for stderr and whether any task hard-failed.
#[derive(Debug)]
pub struct RunSummary {
    pub log: String,
    pub tasks: usize,
    pub failed: usize,
    pub infeasible: usize,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failed > 0 {
            EXIT_TASK_FAILED
        } else {
            EXIT_OK
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Effects, placebo tests, descriptives and manifest.
    Full,
    /// Placebo tests only.
    Pretrend,
}

/// `run` and `pretrend`: executes every task and writes the reports.
pub fn run(cfg: &RunConfig, mode: RunMode) -> Result<RunSummary, CliError> {
    let mut log = String::new();
    let (panel, calendar) = load_inputs(cfg, &mut log)?;
    let tasks = cfg.tasks(&panel, &calendar);
    if tasks.is_empty() {
        return Err(CliError::Config("the task list matches no series".into()));
    }
    let plan = Plan {
        cfg,
        panel: &panel,
        calendar: &calendar,
        estimate: mode == RunMode::Full,
        placebo: mode == RunMode::Pretrend || cfg.placebo,
    };
    let outputs = with_workers(cfg.workers, || {
        map_slice(&tasks, Execution::Parallel, |(key, task)| run_task(&plan, key, task))
    });

    let dir = &cfg.output_dir;
    let effects: Vec<EffectRow> = outputs.iter().flat_map(|o| o.effects.iter().cloned()).collect();
    let pretrends: Vec<EffectRow> = outputs.iter().filter_map(|o| o.pretrend.clone()).collect();
    if plan.estimate {
        // The effect table has no trim column, so each extra threshold gets
        // its own file.
        let primary = cfg.trim[0];
        let main: Vec<EffectRow> = effects.iter().filter(|r| r.trim.is_none_or(|t| t == primary)).cloned().collect();
        write_file(&dir.join("effects.csv"), &io::effects_to_csv(&main))?;
        for &trim in &cfg.trim[1..] {
            let rows: Vec<EffectRow> = effects.iter().filter(|r| r.trim == Some(trim)).cloned().collect();
            write_file(&dir.join(format!("effects_trim{trim}.csv")), &io::effects_to_csv(&rows))?;
        }
        write_file(&dir.join("intervals.csv"), &io::intervals_to_csv(&effects))?;
        let (level, vol, missing) = descriptive_outcomes(&panel, &calendar);
        for p in missing {
            let _ = writeln!(log, "describe: no calendar entry for {p}; skipped");
        }
        write_file(&dir.join("descriptives.csv"), &descriptives_to_csv(&describe_distribution(&level, &vol)))?;
    }
    if plan.placebo {
        write_file(&dir.join("pretrends.csv"), &io::effects_to_csv(&pretrends))?;
    }
    if plan.placebo && cfg.rolling {
        let mut s = String::from("product,quality,control_country,outcome,biweek,atet,se,p,status\n");
        for o in &outputs {
            s.push_str(&o.rolling);
        }
        write_file(&dir.join("rolling.csv"), &s)?;
    }

    let statuses: Vec<&TaskStatus> = outputs.iter().map(|o| &o.status).collect();
    let failed = outputs.iter().filter(|o| o.failed).count();
    let infeasible = statuses.iter().filter(|s| s.status.starts_with("infeasible")).count();
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "mode": match mode { RunMode::Full => "run", RunMode::Pretrend => "pretrend" },
        "seed": cfg.seed,
        "config": cfg,
        "rows": panel.len(),
        "rows_by_country": panel.count_by_country(),
        "tasks": statuses,
    });
    let name = if mode == RunMode::Full { "manifest.json" } else { "pretrend_manifest.json" };
    write_file(&dir.join(name), &(serde_json::to_string_pretty(&manifest).expect("serializable") + "\n"))?;
    for s in &statuses {
        if s.status != "ok" {
            let _ = writeln!(log, "{}: {}", s.key, s.status);
        }
    }
    let _ = writeln!(
        log,
        "{} task(s): {} ok, {} infeasible, {} failed; reports in {}",
        tasks.len(),
        tasks.len() - failed - infeasible,
        infeasible,
        failed,
        dir.display()
    );
    Ok(RunSummary {
        log,
        tasks: tasks.len(),
        failed,
        infeasible,
    })
}

/// `describe`: writes `descriptives.csv`.
pub fn describe(cfg: &RunConfig) -> Result<String, CliError> {
    let mut log = String::new();
    let (panel, calendar) = load_inputs(cfg, &mut log)?;
    let (level, vol, missing) = descriptive_outcomes(&panel, &calendar);
    for p in missing {
        let _ = writeln!(log, "no calendar entry for {p}; skipped");
    }
    let path = cfg.output_dir.join("descriptives.csv");
    write_file(&path, &descriptives_to_csv(&describe_distribution(&level, &vol)))?;
    let _ = writeln!(log, "wrote {}", path.display());
    Ok(log)
}

/// `heterogeneity`: regresses effects on attributes and writes
/// `heterogeneity.csv` to `out`.
pub fn heterogeneity(effects: &Path, attributes: &Path, method: &str, out: &Path) -> Result<String, CliError> {
    let eff = io::read_effects(io::open(effects)?, &effects.display().to_string())?;
    let attrs = io::read_attributes(io::open(attributes)?, &attributes.display().to_string())?;
    let rows = join_effects_attributes(&eff, &attrs, method);
    if rows.is_empty() {
        return Err(CliError::Config(format!("no `{method}` effects in {}", effects.display())));
    }
    let cols = heterogeneity_regression(&rows);
    write_file(out, &heterogeneity_to_csv(&cols))?;
    let mut log = String::new();
    for c in &cols {
        let _ = writeln!(
            log,
            "{} {}: {} effects, {} dropped for missing attributes{}",
            c.outcome.as_str(),
            c.subsample.as_str(),
            c.n_effects,
            c.n_missing,
            match &c.fit {
                Ok(_) => String::new(),
                Err(e) => format!(" ({e})"),
            }
        );
    }
    let _ = writeln!(log, "wrote {}", out.display());
    Ok(log)
}
