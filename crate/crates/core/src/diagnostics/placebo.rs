use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::calendar::{PhaseLabel, ProtectionCalendar, ProtectionWindow};
use crate::did::{
    estimate_means_with_bootstrap, prepare_outcomes, Cell, DidError, DidSample, EffectEstimate,
    EstimationTask,
};
use crate::exec::Execution;
use crate::panel::Panel;
use crate::transforms::OutcomeObservation;
use crate::week::IsoWeek;

/// The `count` non-boundary weeks before `year`'s first protected week,
/// nearest first (offsets -1, -2, ...).
pub fn pre_protection_weeks(window: &ProtectionWindow, year: i32, count: usize) -> Vec<IsoWeek> {
    let mut out = Vec::with_capacity(count);
    let mut w = window.first_protected_week(year).pred();
    while out.len() < count {
        if window.label(w) != PhaseLabel::Boundary {
            out.push(w);
        }
        w = w.pred();
    }
    out
}

fn protected_weeks(window: &ProtectionWindow, year: i32) -> Vec<IsoWeek> {
    let mut out = Vec::new();
    let mut w = window.first_protected_week(year);
    while window.label(w) == PhaseLabel::Protected {
        out.push(w);
        w = w.succ();
    }
    out
}

fn by_week(obs: &[OutcomeObservation]) -> BTreeMap<IsoWeek, Vec<f64>> {
    let mut out: BTreeMap<IsoWeek, Vec<f64>> = BTreeMap::new();
    for o in obs {
        out.entry(o.week).or_default().push(o.value);
    }
    out
}

#[derive(Default)]
struct Rows {
    y: Vec<f64>,
    d: Vec<bool>,
    t: Vec<bool>,
}

impl Rows {
    fn push_week(&mut self, values: &[f64], d: bool, t: bool) {
        for &v in values {
            self.y.push(v);
            self.d.push(d);
            self.t.push(t);
        }
    }

    fn into_sample(self) -> Result<DidSample, DidError> {
        DidSample::from_cells(self.y, self.d, self.t)
    }
}

/// Placebo DiD on the four weeks before protection: offsets -2 and -1 play
/// the post period, -4 and -3 the pre period. Seasons missing any of these
/// weeks in either series are dropped.
pub fn pretrend_placebo(
    task: &EstimationTask,
    panel: &Panel,
    calendar: &ProtectionCalendar,
    exec: Execution,
) -> Result<EffectEstimate, DidError> {
    task.validate()?;
    let prepared = prepare_outcomes(task, panel, calendar)?;
    let treated = by_week(&prepared.treated);
    let control = by_week(&prepared.control);
    let seasons: BTreeSet<i32> = prepared.treated.iter().map(|o| o.season.index).collect();

    let mut rows = Rows::default();
    let mut used = 0;
    for s in seasons {
        let weeks = pre_protection_weeks(&prepared.window, s, 4);
        let complete = weeks
            .iter()
            .all(|w| treated.contains_key(w) && control.contains_key(w));
        if !complete {
            continue;
        }
        used += 1;
        for (k, w) in weeks.iter().enumerate() {
            let pseudo_post = k < 2;
            rows.push_week(&treated[w], true, pseudo_post);
            rows.push_week(&control[w], false, pseudo_post);
        }
    }
    if used == 0 {
        return Err(DidError::NoPlaceboSeasons);
    }
    estimate_means_with_bootstrap(&rows.into_sample()?, task.bootstrap_reps, task.seed, exec)
}

/// Effect for one biweek of the protected phase, or why it could not be
/// estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct BiweekEffect {
    /// 1-based biweek of the protected phase.
    pub biweek: usize,
    pub result: Result<EffectEstimate, DidError>,
}

/// DiD of each protected biweek against the two weeks before protection.
pub fn rolling_biweekly_effects(
    task: &EstimationTask,
    panel: &Panel,
    calendar: &ProtectionCalendar,
    exec: Execution,
) -> Result<Vec<BiweekEffect>, DidError> {
    task.validate()?;
    let prepared = prepare_outcomes(task, panel, calendar)?;
    let treated = by_week(&prepared.treated);
    let control = by_week(&prepared.control);
    let seasons: BTreeSet<i32> = prepared.treated.iter().map(|o| o.season.index).collect();

    let mut eligible: Vec<(Vec<IsoWeek>, Vec<IsoWeek>)> = Vec::new();
    for s in seasons {
        let pre = pre_protection_weeks(&prepared.window, s, 2);
        if pre.iter().all(|w| treated.contains_key(w) && control.contains_key(w)) {
            eligible.push((pre, protected_weeks(&prepared.window, s)));
        }
    }
    if eligible.is_empty() {
        return Err(DidError::NoPlaceboSeasons);
    }
    let biweeks = eligible
        .iter()
        .map(|(_, p)| p.len().div_ceil(2))
        .max()
        .unwrap_or(0);

    let mut out = Vec::with_capacity(biweeks);
    for b in 1..=biweeks {
        let mut rows = Rows::default();
        for (pre, protected) in &eligible {
            let post: Vec<&IsoWeek> = protected.iter().skip(2 * (b - 1)).take(2).collect();
            let has = |m: &BTreeMap<IsoWeek, Vec<f64>>| post.iter().any(|w| m.contains_key(w));
            if !(has(&treated) && has(&control)) {
                continue;
            }
            for w in pre {
                rows.push_week(&treated[w], true, false);
                rows.push_week(&control[w], false, false);
            }
            for w in post {
                rows.push_week(treated.get(w).map_or(&[][..], |v| v), true, true);
                rows.push_week(control.get(w).map_or(&[][..], |v| v), false, true);
            }
        }
        let result = if rows.y.is_empty() {
            Err(DidError::EmptyCell(Cell::TreatedPost))
        } else {
            rows.into_sample().and_then(|s| {
                estimate_means_with_bootstrap(&s, task.bootstrap_reps, task.seed.wrapping_add(b as u64), exec)
            })
        };
        out.push(BiweekEffect { biweek: b, result });
    }
    Ok(out)
}

/// `biweek,atet,se,p,status` with `NA` for infeasible biweeks.
pub fn rolling_to_csv(label: &str, effects: &[BiweekEffect]) -> String {
    let mut s = String::new();
    for e in effects {
        match &e.result {
            Ok(est) => {
                let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x}"));
                let _ = writeln!(s, "{label},{},{},{},{},ok", e.biweek, est.atet, f(est.se()), f(est.p_value()));
            }
            Err(err) => {
                let _ = writeln!(s, "{label},{},NA,NA,NA,{}", e.biweek, err.status_code());
            }
        }
    }
    s
}
