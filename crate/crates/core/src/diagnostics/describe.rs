use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::calendar::{PhaseLabel, ProtectionCalendar};
use crate::panel::{apply_boundary_exclusion, label_observations, Outcome, Panel};
use crate::stats::quantile_sorted;
use crate::transforms::{compute_volatility, standardize_prices, OutcomeObservation};

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptiveRow {
    pub country: String,
    pub phase: PhaseLabel,
    pub measure: Outcome,
    /// Number of (product, quality, country, season, phase) units.
    pub n: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Level and volatility outcomes for every series in the panel, each labeled
/// with its own product's window. Products without a calendar entry are
/// returned in the third slot.
pub fn descriptive_outcomes(
    panel: &Panel,
    calendar: &ProtectionCalendar,
) -> (Vec<OutcomeObservation>, Vec<OutcomeObservation>, Vec<String>) {
    let mut by_product: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for o in panel.observations() {
        by_product.entry(o.series.product.as_str()).or_default().push(o);
    }
    let mut level = Vec::new();
    let mut volatility = Vec::new();
    let mut missing = Vec::new();
    for (product, obs) in by_product {
        let Ok(labeled) = label_observations(obs.iter().copied(), calendar, product) else {
            missing.push(product.to_string());
            continue;
        };
        level.extend(standardize_prices(&apply_boundary_exclusion(&labeled, Outcome::Level)));
        volatility.extend(compute_volatility(&apply_boundary_exclusion(&labeled, Outcome::Volatility)).observations);
    }
    (level, volatility, missing)
}

type Unit = (String, String, String, i32, PhaseLabel);

fn unit_means(obs: &[OutcomeObservation]) -> BTreeMap<Unit, f64> {
    let mut values: BTreeMap<Unit, Vec<f64>> = BTreeMap::new();
    for o in obs {
        if o.phase == PhaseLabel::Boundary {
            continue;
        }
        let key = (
            o.series.product.clone(),
            o.series.quality.as_str().to_string(),
            o.series.country.clone(),
            o.season.index,
            o.phase,
        );
        values.entry(key).or_default().push(o.value);
    }
    values
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            (k.clone(), v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Distribution of unit averages per country, phase and measure. Values are
/// sorted before summation so the result does not depend on input order.
pub fn describe_distribution(
    level: &[OutcomeObservation],
    volatility: &[OutcomeObservation],
) -> Vec<DescriptiveRow> {
    let mut out = Vec::new();
    for (measure, obs) in [(Outcome::Level, level), (Outcome::Volatility, volatility)] {
        let mut groups: BTreeMap<(String, PhaseLabel), Vec<f64>> = BTreeMap::new();
        for ((_, _, country, _, phase), m) in unit_means(obs) {
            groups.entry((country, phase)).or_default().push(m);
        }
        for ((country, phase), mut v) in groups {
            v.sort_by(f64::total_cmp);
            out.push(DescriptiveRow {
                country,
                phase,
                measure,
                n: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                q1: quantile_sorted(&v, 0.25),
                median: quantile_sorted(&v, 0.5),
                q3: quantile_sorted(&v, 0.75),
            });
        }
    }
    out.sort_by(|a, b| {
        (&a.country, a.measure.as_str(), a.phase).cmp(&(&b.country, b.measure.as_str(), b.phase))
    });
    out
}

pub fn descriptives_to_csv(rows: &[DescriptiveRow]) -> String {
    let mut s = String::from("country,phase,measure,n,mean,q1,median,q3\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.country,
            r.phase.as_str(),
            r.measure.as_str(),
            r.n,
            r.mean,
            r.q1,
            r.median,
            r.q3
        );
    }
    s
}
