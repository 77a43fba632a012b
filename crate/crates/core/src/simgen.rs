//! Synthetic weekly price panels with a known treatment effect.
//!
//! Values are built on the standardized index scale: for each series and
//! season the index is `trend + offset + effect + divergence + noise`,
//! re-centered so that its mean over the weeks that survive the estimation
//! pipeline is exactly 100. Raw prices are the index times a positive
//! season-level factor, so standardization recovers the index and the
//! within-season difference-in-differences recovers the injected effect.

use chrono::Datelike;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{MonthDay, PhaseLabel, ProtectionCalendar, ProtectionWindow};
use crate::panel::{Panel, PriceObservation, Quality, SeriesKey};
use crate::week::IsoWeek;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("non-positive index {value:.3} for series {series} in {week}; enable truncation or reduce noise")]
    NonPositive {
        series: String,
        week: IsoWeek,
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub product: String,
    pub quality: Quality,
    pub treated_country: String,
    pub control_country: String,
    /// ISO year of the first season.
    pub first_year: i32,
    pub n_seasons: usize,
    /// ISO week in which each season's production window starts.
    pub first_week: u32,
    pub weeks_per_season: usize,
    /// First and last protected week, as offsets into the production window.
    /// The calendar is anchored on `first_year`, so later years start mid-week.
    pub protected_window: (u32, u32),
    pub base_price_treated: f64,
    pub base_price_control: f64,
    /// Index units added to both groups, by week offset (missing entries are 0).
    pub common_trend: Vec<f64>,
    /// Standard deviation of the log season-level factor on raw prices.
    pub season_shocks_sd: f64,
    /// One season-level factor for both groups instead of one per group.
    pub shared_season_shocks: bool,
    /// Index units added to every treated week.
    pub group_offset: f64,
    pub noise_sd: f64,
    /// Index units added to treated protected weeks.
    pub true_atet: f64,
    /// Replaces `true_atet` by an effect rising linearly from the first to the
    /// last protected week of each season.
    pub effect_ramp: Option<(f64, f64)>,
    /// Extra index units per week offset for the treated group only; breaks
    /// common trends.
    pub trend_divergence: f64,
    pub missing_week_prob: f64,
    /// Clamp non-positive index values to 1 instead of failing.
    pub truncate: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            product: "synthetic".into(),
            quality: Quality::Conventional,
            treated_country: "CH".into(),
            control_country: "DE".into(),
            first_year: 2014,
            n_seasons: 6,
            first_week: 14,
            weeks_per_season: 30,
            protected_window: (8, 21),
            base_price_treated: 3.0,
            base_price_control: 1.5,
            common_trend: Vec::new(),
            season_shocks_sd: 0.1,
            shared_season_shocks: false,
            group_offset: 0.0,
            noise_sd: 2.0,
            true_atet: 20.0,
            effect_ramp: None,
            trend_divergence: 0.0,
            missing_week_prob: 0.0,
            truncate: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPanels {
    pub treated: Panel,
    pub control: Panel,
    pub calendar: ProtectionCalendar,
}

impl SimPanels {
    pub fn merged(&self) -> Panel {
        self.treated
            .clone()
            .merge(self.control.clone())
            .expect("treated and control series are distinct")
    }
}

/// Week layout of one season, shared by generation and the closed-form truth.
struct SeasonLayout {
    year: i32,
    weeks: Vec<IsoWeek>,
    labels: Vec<PhaseLabel>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        let (start, end) = self.protected_window;
        if self.n_seasons == 0 || self.weeks_per_season < 4 {
            return bad("need at least one season and four weeks per season");
        }
        if !(start >= 1 && start <= end && (end as usize) + 1 < self.weeks_per_season) {
            return bad("protected_window must lie strictly inside the season");
        }
        if self.first_week < 1 || self.first_week as usize + self.weeks_per_season - 1 > 52 {
            return bad("production weeks must fit within ISO weeks 1..52");
        }
        if !(self.base_price_treated > 0.0 && self.base_price_control > 0.0) {
            return bad("base prices must be positive");
        }
        if self.noise_sd < 0.0 || self.season_shocks_sd < 0.0 {
            return bad("standard deviations must be non-negative");
        }
        if !(0.0..1.0).contains(&self.missing_week_prob) {
            return bad("missing_week_prob must lie in [0, 1)");
        }
        if self.treated_country == self.control_country {
            return bad("treated and control countries must differ");
        }
        Ok(())
    }

    pub fn window(&self) -> ProtectionWindow {
        let (start, end) = self.protected_window;
        let first = IsoWeek::new(self.first_year, self.first_week + start).expect("validated");
        let last = IsoWeek::new(self.first_year, self.first_week + end).expect("validated");
        let (m, d) = MonthDay::of(first.monday());
        let (em, ed) = MonthDay::of(last.sunday());
        ProtectionWindow {
            start: MonthDay::new(m, d).expect("date exists"),
            end: MonthDay::new(em, ed).expect("date exists"),
        }
    }

    pub fn calendar(&self) -> ProtectionCalendar {
        let w = self.window();
        let mut cal = ProtectionCalendar::new();
        cal.insert(self.product.clone(), w.start, w.end)
            .expect("window lies within one year");
        cal
    }

    fn layouts(&self) -> Result<Vec<SeasonLayout>, SimError> {
        let window = self.window();
        (0..self.n_seasons)
            .map(|s| {
                let year = self.first_year + s as i32;
                let weeks: Vec<IsoWeek> = (0..self.weeks_per_season)
                    .map(|j| IsoWeek::new(year, self.first_week + j as u32).expect("validated"))
                    .collect();
                if weeks.iter().any(|w| window.season_of(*w) != year) {
                    return Err(SimError::Config(format!(
                        "production weeks of {year} cross a season boundary"
                    )));
                }
                if window.start.in_year(year).year() != year {
                    return Err(SimError::Config("protected window leaves its year".into()));
                }
                let labels = weeks.iter().map(|w| window.label(*w)).collect();
                Ok(SeasonLayout { year, weeks, labels })
            })
            .collect()
    }

    fn effect_at(&self, protected_rank: usize, protected_total: usize) -> f64 {
        match self.effect_ramp {
            Some((from, to)) if protected_total > 1 => {
                from + (to - from) * protected_rank as f64 / (protected_total - 1) as f64
            }
            Some((from, _)) => from,
            None => self.true_atet,
        }
    }

    fn trend_at(&self, offset: usize) -> f64 {
        self.common_trend.get(offset).copied().unwrap_or(0.0)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates the treated and control panels and their calendar.
pub fn generate_panel(cfg: &SimConfig) -> Result<SimPanels, SimError> {
    cfg.validate()?;
    let layouts = cfg.layouts()?;
    let key = |country: &str| SeriesKey {
        product: cfg.product.clone(),
        quality: cfg.quality,
        country: country.to_string(),
        region: None,
    };
    let keys = [key(&cfg.treated_country), key(&cfg.control_country)];
    let bases = [cfg.base_price_treated, cfg.base_price_control];
    let mut out: [Vec<PriceObservation>; 2] = Default::default();

    for (s, layout) in layouts.iter().enumerate() {
        let nweeks = layout.weeks.len();
        // Streams: group g, season s -> 2 * s + g; shared shocks use a third range.
        let mut streams: Vec<ChaCha8Rng> =
            (0..2).map(|g| rng_for(cfg.seed, (2 * s + g) as u64)).collect();
        let mut present = [vec![true; nweeks], vec![true; nweeks]];
        let mut noise = [vec![0.0; nweeks], vec![0.0; nweeks]];
        let mut shock = [0.0f64; 2];
        for g in 0..2 {
            let rng = &mut streams[g];
            for j in 0..nweeks {
                present[g][j] = rng.random::<f64>() >= cfg.missing_week_prob;
            }
            for j in 0..nweeks {
                let z: f64 = rng.sample(StandardNormal);
                noise[g][j] = cfg.noise_sd * z;
            }
            let z: f64 = rng.sample(StandardNormal);
            shock[g] = cfg.season_shocks_sd * z;
        }
        if cfg.shared_season_shocks {
            let mut rng = rng_for(cfg.seed, (1u64 << 32) + s as u64);
            let z: f64 = rng.sample(StandardNormal);
            shock = [cfg.season_shocks_sd * z; 2];
        }

        let protected_total = layout.labels.iter().filter(|l| **l == PhaseLabel::Protected).count();
        let mut rank = 0;
        let effects: Vec<f64> = layout
            .labels
            .iter()
            .map(|l| {
                if *l == PhaseLabel::Protected {
                    rank += 1;
                    cfg.effect_at(rank - 1, protected_total)
                } else {
                    0.0
                }
            })
            .collect();

        for g in 0..2 {
            let treated = g == 0;
            let index: Vec<f64> = (0..nweeks)
                .map(|j| {
                    let mut u = cfg.trend_at(j) + noise[g][j];
                    if treated {
                        u += cfg.group_offset + effects[j] + cfg.trend_divergence * j as f64;
                    }
                    u
                })
                .collect();
            // Weeks that reach standardization: non-boundary, and for the
            // control only weeks where the treated series is observed.
            let survives = |j: usize| {
                present[g][j]
                    && layout.labels[j] != PhaseLabel::Boundary
                    && (treated || present[0][j])
            };
            let kept: Vec<f64> = (0..nweeks).filter(|&j| survives(j)).map(|j| index[j]).collect();
            let center = if kept.is_empty() {
                0.0
            } else {
                kept.iter().sum::<f64>() / kept.len() as f64
            };
            let level = bases[g] * shock[g].exp();
            for j in 0..nweeks {
                if !present[g][j] {
                    continue;
                }
                let mut value = index[j] - center + 100.0;
                if value <= 0.0 {
                    if !cfg.truncate {
                        return Err(SimError::NonPositive {
                            series: keys[g].to_string(),
                            week: layout.weeks[j],
                            value,
                        });
                    }
                    value = 1.0;
                }
                out[g].push(PriceObservation {
                    series: keys[g].clone(),
                    week: layout.weeks[j],
                    price: level * value / 100.0,
                });
            }
        }
        debug_assert_eq!(layout.year, cfg.first_year + s as i32);
    }

    let [treated, control] = out;
    Ok(SimPanels {
        treated: Panel::new(treated).expect("generated prices are positive and unique"),
        control: Panel::new(control).expect("generated prices are positive and unique"),
        calendar: cfg.calendar(),
    })
}

/// Within-season effect in season `layout`: mean injected effect over treated
/// protected weeks plus the divergence bias `delta * (mean protected offset -
/// mean unprotected offset)`.
fn season_truth(cfg: &SimConfig, layout: &SeasonLayout) -> (f64, usize) {
    let protected: Vec<usize> = (0..layout.weeks.len())
        .filter(|&j| layout.labels[j] == PhaseLabel::Protected)
        .collect();
    let unprotected: Vec<usize> = (0..layout.weeks.len())
        .filter(|&j| layout.labels[j] == PhaseLabel::Unprotected)
        .collect();
    let total = protected.len();
    let mean_effect =
        (0..total).map(|r| cfg.effect_at(r, total)).sum::<f64>() / total as f64;
    let mean_pos = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
    let bias = cfg.trend_divergence * (mean_pos(&protected) - mean_pos(&unprotected));
    (mean_effect + bias, total)
}

/// Standardized-scale ATET that season-fixed-effect IPW-DiD recovers from a
/// noise-free, fully observed panel: per-season effects weighted by the
/// number of treated protected weeks.
pub fn true_effect(cfg: &SimConfig) -> Result<f64, SimError> {
    cfg.validate()?;
    let mut num = 0.0;
    let mut den = 0usize;
    for layout in cfg.layouts()? {
        let (tau, n) = season_truth(cfg, &layout);
        num += tau * n as f64;
        den += n;
    }
    Ok(num / den as f64)
}

/// Mean injected effect in each biweek of the protected phase, pooled over
/// seasons (no divergence term).
pub fn true_biweek_effects(cfg: &SimConfig) -> Result<Vec<f64>, SimError> {
    cfg.validate()?;
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for layout in cfg.layouts()? {
        let total = layout.labels.iter().filter(|l| **l == PhaseLabel::Protected).count();
        for r in 0..total {
            let b = r / 2;
            if sums.len() <= b {
                sums.resize(b + 1, (0.0, 0));
            }
            sums[b].0 += cfg.effect_at(r, total);
            sums[b].1 += 1;
        }
    }
    Ok(sums.into_iter().map(|(s, n)| s / n as f64).collect())
}
