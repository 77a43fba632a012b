use std::collections::{BTreeMap, BTreeSet};

use crate::calendar::{PhaseLabel, ProtectionCalendar, ProtectionWindow};
use crate::glm::DesignMatrix;
use crate::panel::{apply_boundary_exclusion, label_observations, Outcome, Panel};
use crate::transforms::{
    compute_volatility, restrict_to_production_weeks, standardize_prices, OutcomeObservation,
};
use crate::week::IsoWeek;

use super::{BiweekMode, Cell, Covariates, DidError, EstimationTask};

/// Analysis sample: outcome, group D, phase T and covariate dummies per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DidSample {
    pub y: Vec<f64>,
    pub d: Vec<bool>,
    pub t: Vec<bool>,
    /// Covariates without intercept.
    pub x: DesignMatrix,
    pub season: Vec<i32>,
    pub week: Vec<Option<IsoWeek>>,
    /// Seasons removed because they lacked one of the four cells.
    pub dropped_seasons: Vec<i32>,
}

impl DidSample {
    pub fn new(y: Vec<f64>, d: Vec<bool>, t: Vec<bool>, x: DesignMatrix) -> Result<Self, DidError> {
        let n = y.len();
        if d.len() != n || t.len() != n || x.nrows() != n {
            return Err(DidError::InvalidTask(format!(
                "sample columns differ in length: y={n}, d={}, t={}, x={}",
                d.len(),
                t.len(),
                x.nrows()
            )));
        }
        Ok(DidSample {
            y,
            d,
            t,
            x,
            season: vec![0; n],
            week: vec![None; n],
            dropped_seasons: Vec::new(),
        })
    }

    /// Sample without covariates.
    pub fn from_cells(y: Vec<f64>, d: Vec<bool>, t: Vec<bool>) -> Result<Self, DidError> {
        let n = y.len();
        DidSample::new(y, d, t, DesignMatrix::empty(n))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn cell(&self, i: usize) -> Cell {
        Cell::of(self.d[i], self.t[i])
    }

    /// Row indices per cell, in [`Cell::ALL`] order.
    pub fn cell_indices(&self) -> [Vec<usize>; 4] {
        let mut out: [Vec<usize>; 4] = Default::default();
        for i in 0..self.len() {
            out[self.cell(i).index()].push(i);
        }
        out
    }

    pub fn cell_counts(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for i in 0..self.len() {
            out[self.cell(i).index()] += 1;
        }
        out
    }

    pub fn cell_means(&self) -> [f64; 4] {
        let mut sums = [0.0; 4];
        let counts = self.cell_counts();
        for i in 0..self.len() {
            sums[self.cell(i).index()] += self.y[i];
        }
        std::array::from_fn(|c| sums[c] / counts[c] as f64)
    }

    pub fn check_cells(&self, min: usize) -> Result<(), DidError> {
        let counts = self.cell_counts();
        for cell in Cell::ALL {
            if counts[cell.index()] == 0 {
                return Err(DidError::EmptyCell(cell));
            }
        }
        for cell in Cell::ALL {
            let n = counts[cell.index()];
            if n < min {
                return Err(DidError::TooFewObservations { cell, n, min });
            }
        }
        Ok(())
    }

    pub fn subset(&self, rows: &[usize]) -> DidSample {
        DidSample {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            d: rows.iter().map(|&i| self.d[i]).collect(),
            t: rows.iter().map(|&i| self.t[i]).collect(),
            x: self.x.select_rows(rows),
            season: rows.iter().map(|&i| self.season[i]).collect(),
            week: rows.iter().map(|&i| self.week[i]).collect(),
            dropped_seasons: self.dropped_seasons.clone(),
        }
    }
}

/// `(Y11 - Y10) - (Y01 - Y00)` on plain cell means.
pub fn means_did(sample: &DidSample) -> f64 {
    let m = sample.cell_means();
    (m[0] - m[1]) - (m[2] - m[3])
}

/// Outcome observations for both series of a task, after labeling, boundary
/// exclusion, production-week restriction and the outcome transform.
#[derive(Debug, Clone)]
pub struct PreparedOutcomes {
    pub window: ProtectionWindow,
    pub treated: Vec<OutcomeObservation>,
    pub control: Vec<OutcomeObservation>,
    pub volatility_gaps: usize,
    pub volatility_transitions: usize,
}

pub fn prepare_outcomes(
    task: &EstimationTask,
    panel: &Panel,
    calendar: &ProtectionCalendar,
) -> Result<PreparedOutcomes, DidError> {
    if task.treated == task.control {
        return Err(DidError::InvalidTask("treated and control series are identical".into()));
    }
    let window = *calendar.window(&task.treated.product)?;
    let select = |s: &super::SeriesSelector| {
        panel.select(&s.product, s.quality, &s.country, s.region.as_deref())
    };
    let treated_raw = select(&task.treated);
    if treated_raw.is_empty() {
        return Err(DidError::EmptySeries(task.treated.to_string()));
    }
    let control_raw = select(&task.control);
    if control_raw.is_empty() {
        return Err(DidError::EmptySeries(task.control.to_string()));
    }
    let treated = label_observations(treated_raw, calendar, &task.treated.product)?;
    let control = label_observations(control_raw, calendar, &task.treated.product)?;
    let control = restrict_to_production_weeks(&control, &treated)?;
    let treated = apply_boundary_exclusion(&treated, task.outcome);
    let control = apply_boundary_exclusion(&control, task.outcome);

    let mut prepared = PreparedOutcomes {
        window,
        treated: Vec::new(),
        control: Vec::new(),
        volatility_gaps: 0,
        volatility_transitions: 0,
    };
    match task.outcome {
        Outcome::Level => {
            prepared.treated = standardize_prices(&treated);
            prepared.control = standardize_prices(&control);
        }
        Outcome::Volatility => {
            let t = compute_volatility(&treated);
            let c = compute_volatility(&control);
            prepared.volatility_gaps = t.gaps + c.gaps;
            prepared.volatility_transitions = t.transitions + c.transitions;
            prepared.treated = t.observations;
            prepared.control = c.observations;
        }
    }
    Ok(prepared)
}

/// Builds the four-group sample for `task`.
pub fn build_sample(
    task: &EstimationTask,
    panel: &Panel,
    calendar: &ProtectionCalendar,
) -> Result<DidSample, DidError> {
    let prepared = prepare_outcomes(task, panel, calendar)?;
    let sample = sample_from_outcomes(&prepared, task.covariates, task.biweek_mode)?;
    sample.check_cells(task.min_cell_size)?;
    Ok(sample)
}

fn sample_from_outcomes(
    prepared: &PreparedOutcomes,
    covariates: Covariates,
    biweek_mode: BiweekMode,
) -> Result<DidSample, DidError> {
    let rows: Vec<(bool, &OutcomeObservation)> = prepared
        .treated
        .iter()
        .map(|o| (true, o))
        .chain(prepared.control.iter().map(|o| (false, o)))
        .filter(|(_, o)| o.phase != PhaseLabel::Boundary)
        .collect();

    let mut present = [false; 4];
    for (d, o) in &rows {
        present[Cell::of(*d, o.phase == PhaseLabel::Protected).index()] = true;
    }
    if let Some(cell) = Cell::ALL.into_iter().find(|c| !present[c.index()]) {
        return Err(DidError::EmptyCell(cell));
    }

    // Seasons missing any (D, T) cell have no comparable observations under
    // season fixed effects.
    let mut dropped_seasons = Vec::new();
    let rows: Vec<_> = if covariates.has_seasons() {
        let mut cells: BTreeMap<i32, [bool; 4]> = BTreeMap::new();
        for (d, o) in &rows {
            let c = Cell::of(*d, o.phase == PhaseLabel::Protected);
            cells.entry(o.season.index).or_default()[c.index()] = true;
        }
        dropped_seasons = cells
            .iter()
            .filter(|(_, seen)| !seen.iter().all(|&s| s))
            .map(|(&s, _)| s)
            .collect();
        rows.into_iter()
            .filter(|(_, o)| !dropped_seasons.contains(&o.season.index))
            .collect()
    } else {
        rows
    };

    let n = rows.len();
    let y: Vec<f64> = rows.iter().map(|(_, o)| o.value).collect();
    let d: Vec<bool> = rows.iter().map(|(d, _)| *d).collect();
    let t: Vec<bool> = rows.iter().map(|(_, o)| o.phase == PhaseLabel::Protected).collect();
    let season: Vec<i32> = rows.iter().map(|(_, o)| o.season.index).collect();
    let week: Vec<Option<IsoWeek>> = rows.iter().map(|(_, o)| Some(o.week)).collect();

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    if covariates.has_seasons() {
        columns.extend(dummies(&season, |s| format!("season_{s}")));
    }
    if covariates == Covariates::SeasonalPlusBiweeklyFe {
        let biweek: Vec<i64> = rows
            .iter()
            .map(|(_, o)| match biweek_mode {
                BiweekMode::Season => {
                    prepared.window.season_start(o.season.index).weeks_until(&o.week) / 2 + 1
                }
                BiweekMode::CalendarYear => i64::from(o.week.week() - 1) / 2 + 1,
            })
            .collect();
        columns.extend(dummies(&biweek, |b| format!("biweek_{b:02}")));
    }
    let x = DesignMatrix::from_columns(n, columns).map_err(DidError::Ols)?;
    let mut sample = DidSample::new(y, d, t, x)?;
    sample.season = season;
    sample.week = week;
    sample.dropped_seasons = dropped_seasons;
    Ok(sample)
}

/// Indicator columns for every level but the smallest (the reference).
fn dummies<K: Ord + Copy>(keys: &[K], name: impl Fn(K) -> String) -> Vec<(String, Vec<f64>)> {
    let levels: BTreeSet<K> = keys.iter().copied().collect();
    levels
        .into_iter()
        .skip(1)
        .map(|level| {
            let col = keys.iter().map(|&k| if k == level { 1.0 } else { 0.0 }).collect();
            (name(level), col)
        })
        .collect()
}
