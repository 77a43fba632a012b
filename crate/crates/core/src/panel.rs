//! Weekly price panels and phase labeling.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{CalendarError, PhaseLabel, ProtectionCalendar, SeasonId};
use crate::week::IsoWeek;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Conventional,
    Organic,
}

impl Quality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quality::Conventional => "conventional",
            Quality::Organic => "organic",
        }
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conventional" => Ok(Quality::Conventional),
            "organic" => Ok(Quality::Organic),
            other => Err(format!("quality must be `conventional` or `organic`, got `{other}`")),
        }
    }
}

/// Which outcome a panel is being prepared for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Level,
    Volatility,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Level => "level",
            Outcome::Volatility => "volatility",
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "level" => Ok(Outcome::Level),
            "volatility" => Ok(Outcome::Volatility),
            other => Err(format!("outcome must be `level` or `volatility`, got `{other}`")),
        }
    }
}

/// Identifies one weekly price series.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub product: String,
    pub quality: Quality,
    pub country: String,
    pub region: Option<String>,
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.product, self.quality, self.country)?;
        if let Some(r) = &self.region {
            write!(f, "/{r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceObservation {
    pub series: SeriesKey,
    pub week: IsoWeek,
    pub price: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum PanelError {
    #[error("non-positive price {price} for {series} in {week}")]
    NonPositivePrice {
        series: SeriesKey,
        week: IsoWeek,
        price: f64,
    },
    #[error("duplicate observation for {series} in {week}")]
    Duplicate { series: SeriesKey, week: IsoWeek },
}

/// A validated set of observations: prices are positive and
/// (series, week) is unique. Observations are kept sorted by series then week.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Panel {
    obs: Vec<PriceObservation>,
}

impl Panel {
    pub fn new(mut obs: Vec<PriceObservation>) -> Result<Self, PanelError> {
        for o in &obs {
            if !(o.price > 0.0 && o.price.is_finite()) {
                return Err(PanelError::NonPositivePrice {
                    series: o.series.clone(),
                    week: o.week,
                    price: o.price,
                });
            }
        }
        obs.sort_by(|a, b| (&a.series, a.week).cmp(&(&b.series, b.week)));
        for pair in obs.windows(2) {
            if pair[0].series == pair[1].series && pair[0].week == pair[1].week {
                return Err(PanelError::Duplicate {
                    series: pair[0].series.clone(),
                    week: pair[0].week,
                });
            }
        }
        Ok(Panel { obs })
    }

    pub fn observations(&self) -> &[PriceObservation] {
        &self.obs
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn series_keys(&self) -> Vec<&SeriesKey> {
        let mut keys: Vec<&SeriesKey> = self.obs.iter().map(|o| &o.series).collect();
        keys.dedup();
        keys
    }

    /// Observations matching product, quality and country; `region: None`
    /// pools every region of the country.
    pub fn select(
        &self,
        product: &str,
        quality: Quality,
        country: &str,
        region: Option<&str>,
    ) -> Vec<&PriceObservation> {
        self.obs
            .iter()
            .filter(|o| {
                o.series.product == product
                    && o.series.quality == quality
                    && o.series.country == country
                    && region.is_none_or(|r| o.series.region.as_deref() == Some(r))
            })
            .collect()
    }

    pub fn count_by_country(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for o in &self.obs {
            *out.entry(o.series.country.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn merge(self, other: Panel) -> Result<Panel, PanelError> {
        let mut obs = self.obs;
        obs.extend(other.obs);
        Panel::new(obs)
    }
}

/// An observation with its phase and season under some product's calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledObservation {
    pub series: SeriesKey,
    pub week: IsoWeek,
    pub price: f64,
    pub phase: PhaseLabel,
    pub season: SeasonId,
    /// Whether the change from the previous week may enter a volatility
    /// measure. Set by [`apply_boundary_exclusion`].
    pub change_valid: bool,
}

/// Labels every observation with `calendar_product`'s window. Control series
/// are labeled with the treated product's calendar.
pub fn label_observations<'a>(
    obs: impl IntoIterator<Item = &'a PriceObservation>,
    calendar: &ProtectionCalendar,
    calendar_product: &str,
) -> Result<Vec<LabeledObservation>, CalendarError> {
    let window = calendar.window(calendar_product)?;
    Ok(obs
        .into_iter()
        .map(|o| LabeledObservation {
            series: o.series.clone(),
            week: o.week,
            price: o.price,
            phase: window.label(o.week),
            season: SeasonId {
                product: calendar_product.to_string(),
                index: window.season_of(o.week),
            },
            change_valid: true,
        })
        .collect())
}

/// Phase of a single observation under the calendar entry of its own product.
pub fn label_phase(
    obs: &PriceObservation,
    calendar: &ProtectionCalendar,
) -> Result<PhaseLabel, CalendarError> {
    calendar.label_week(&obs.series.product, obs.week)
}

pub fn assign_season(
    obs: &PriceObservation,
    calendar: &ProtectionCalendar,
) -> Result<SeasonId, CalendarError> {
    calendar.season_of(&obs.series.product, obs.week)
}

/// Drops Boundary weeks. For the volatility outcome, also marks as invalid
/// every week-to-week change whose previous week is missing, is a Boundary
/// week, or lies in the other phase.
pub fn apply_boundary_exclusion(
    panel: &[LabeledObservation],
    outcome: Outcome,
) -> Vec<LabeledObservation> {
    if outcome == Outcome::Level {
        return panel
            .iter()
            .filter(|o| o.phase != PhaseLabel::Boundary)
            .cloned()
            .collect();
    }
    let by_key: HashMap<(&SeriesKey, IsoWeek), PhaseLabel> = panel
        .iter()
        .map(|o| ((&o.series, o.week), o.phase))
        .collect();
    panel
        .iter()
        .filter(|o| o.phase != PhaseLabel::Boundary)
        .map(|o| {
            let prev = by_key.get(&(&o.series, o.week.pred()));
            let mut out = o.clone();
            out.change_valid = o.change_valid && prev == Some(&o.phase);
            out
        })
        .collect()
}
