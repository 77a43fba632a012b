//! Outcome construction: season-standardized price levels and week-to-week
//! volatility, plus restriction of control series to treated production weeks.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::calendar::{PhaseLabel, SeasonId};
use crate::panel::{LabeledObservation, Quality, SeriesKey};
use crate::week::IsoWeek;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransformError {
    #[error("no common production weeks between treated {treated} and control {control}")]
    EmptyOverlap { treated: String, control: String },
}

/// One analysis-ready outcome value (standardized level or volatility).
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeObservation {
    pub series: SeriesKey,
    pub week: IsoWeek,
    pub phase: PhaseLabel,
    pub season: SeasonId,
    pub value: f64,
}

/// Standardization cell: season, product, quality and country.
type CellKey = (i32, String, Quality, String);

fn cell_of(o: &LabeledObservation) -> CellKey {
    (
        o.season.index,
        o.series.product.clone(),
        o.series.quality,
        o.series.country.clone(),
    )
}

/// `100 * price / mean(price)` within each (season, product, quality, country)
/// cell, using the unweighted mean of the weekly prices present.
pub fn standardize_prices(panel: &[LabeledObservation]) -> Vec<OutcomeObservation> {
    let mut sums: BTreeMap<CellKey, (f64, usize)> = BTreeMap::new();
    for o in panel {
        let e = sums.entry(cell_of(o)).or_insert((0.0, 0));
        e.0 += o.price;
        e.1 += 1;
    }
    panel
        .iter()
        .map(|o| {
            let (sum, n) = sums[&cell_of(o)];
            OutcomeObservation {
                series: o.series.clone(),
                week: o.week,
                phase: o.phase,
                season: o.season.clone(),
                value: 100.0 * o.price / (sum / n as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VolatilityOutput {
    pub observations: Vec<OutcomeObservation>,
    /// Weeks whose previous week has no price.
    pub gaps: usize,
    /// Weeks whose change from the previous week crosses a phase transition.
    pub transitions: usize,
}

/// `|p_w / p_{w-1} - 1|` on raw prices, per series, for consecutive weeks in
/// the same (non-Boundary) phase.
pub fn compute_volatility(panel: &[LabeledObservation]) -> VolatilityOutput {
    let mut by_series: BTreeMap<&SeriesKey, Vec<&LabeledObservation>> = BTreeMap::new();
    for o in panel {
        by_series.entry(&o.series).or_default().push(o);
    }
    let mut out = VolatilityOutput::default();
    for series in by_series.values_mut() {
        series.sort_by_key(|o| o.week);
        for pair in series.windows(2) {
            let (prev, cur) = (pair[0], pair[1]);
            if prev.week.succ() != cur.week {
                out.gaps += 1;
                continue;
            }
            if cur.phase == PhaseLabel::Boundary
                || prev.phase != cur.phase
                || !cur.change_valid
            {
                out.transitions += 1;
                continue;
            }
            out.observations.push(OutcomeObservation {
                series: cur.series.clone(),
                week: cur.week,
                phase: cur.phase,
                season: cur.season.clone(),
                value: (cur.price / prev.price - 1.0).abs(),
            });
        }
    }
    out
}

/// Keeps control observations only in (ISO year, week) pairs where the treated
/// series has an observation.
pub fn restrict_to_production_weeks(
    control: &[LabeledObservation],
    treated: &[LabeledObservation],
) -> Result<Vec<LabeledObservation>, TransformError> {
    let weeks: HashSet<IsoWeek> = treated.iter().map(|o| o.week).collect();
    let kept: Vec<LabeledObservation> = control
        .iter()
        .filter(|o| weeks.contains(&o.week))
        .cloned()
        .collect();
    if kept.is_empty() {
        let name = |s: &[LabeledObservation]| {
            s.first()
                .map(|o| o.series.to_string())
                .unwrap_or_else(|| "<empty>".to_string())
        };
        return Err(TransformError::EmptyOverlap {
            treated: name(treated),
            control: name(control),
        });
    }
    Ok(kept)
}
