use std::collections::HashMap;
use std::fmt::Write as _;

use crate::glm::{fit_ols, DesignMatrix, FitResult, GlmError, INTERCEPT};
use crate::io::{AttributeRecord, EffectRecord};
use crate::panel::{Outcome, Quality};

/// Regressors in column order; `conventional` enters the pooled columns only.
pub const HETEROGENEITY_TERMS: [&str; 7] = [
    "conventional",
    "germany",
    "italy",
    "harvested_once",
    "storability",
    "market_share",
    "days_protection",
];

/// An estimated effect with the attributes of its product and comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectAttributeRow {
    pub product: String,
    pub quality: Quality,
    pub comparison: String,
    pub outcome: Outcome,
    pub effect: f64,
    pub harvested_once: Option<f64>,
    pub storability: Option<f64>,
    pub market_share: Option<f64>,
    pub days_protection: Option<f64>,
}

impl EffectAttributeRow {
    fn attributes(&self) -> Option<[f64; 4]> {
        Some([
            self.harvested_once?,
            self.storability?,
            self.market_share?,
            self.days_protection?,
        ])
    }
}

fn is_country(code: &str, iso: &str, name: &str) -> bool {
    code.eq_ignore_ascii_case(iso) || code.eq_ignore_ascii_case(name)
}

/// Attaches attributes to effects by (product, quality, comparison). Effects
/// without an attribute record keep all attributes missing.
pub fn join_effects_attributes(
    effects: &[EffectRecord],
    attributes: &[AttributeRecord],
    method: &str,
) -> Vec<EffectAttributeRow> {
    let index: HashMap<(&str, Quality, &str), &AttributeRecord> = attributes
        .iter()
        .map(|a| ((a.product.as_str(), a.quality, a.comparison.as_str()), a))
        .collect();
    effects
        .iter()
        .filter(|e| e.method == method)
        .map(|e| {
            let a = index.get(&(e.product.as_str(), e.quality, e.control_country.as_str()));
            EffectAttributeRow {
                product: e.product.clone(),
                quality: e.quality,
                comparison: e.control_country.clone(),
                outcome: e.outcome,
                effect: e.atet,
                harvested_once: a.and_then(|a| a.harvested_once),
                storability: a.and_then(|a| a.storability_weeks),
                market_share: a.and_then(|a| a.market_share_pct),
                days_protection: a.and_then(|a| a.days_protection),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsample {
    Pooled,
    Conventional,
    Organic,
}

impl Subsample {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subsample::Pooled => "pooled",
            Subsample::Conventional => "conventional",
            Subsample::Organic => "organic",
        }
    }

    fn admits(&self, q: Quality) -> bool {
        match self {
            Subsample::Pooled => true,
            Subsample::Conventional => q == Quality::Conventional,
            Subsample::Organic => q == Quality::Organic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneityColumn {
    pub outcome: Outcome,
    pub subsample: Subsample,
    /// Effects in the subsample before listwise deletion.
    pub n_effects: usize,
    /// Effects dropped because an attribute was missing.
    pub n_missing: usize,
    pub fit: Result<FitResult, GlmError>,
}

fn fit_column(rows: &[&EffectAttributeRow], subsample: Subsample) -> (usize, Result<FitResult, GlmError>) {
    let complete: Vec<(&EffectAttributeRow, [f64; 4])> =
        rows.iter().filter_map(|r| r.attributes().map(|a| (*r, a))).collect();
    let n = complete.len();
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let indicator = |f: &dyn Fn(&EffectAttributeRow) -> bool| -> Vec<f64> {
        complete.iter().map(|(r, _)| f64::from(u8::from(f(r)))).collect()
    };
    if subsample == Subsample::Pooled {
        columns.push(("conventional".into(), indicator(&|r| r.quality == Quality::Conventional)));
    }
    columns.push(("germany".into(), indicator(&|r| is_country(&r.comparison, "DE", "Germany"))));
    columns.push(("italy".into(), indicator(&|r| is_country(&r.comparison, "IT", "Italy"))));
    for (j, name) in ["harvested_once", "storability", "market_share", "days_protection"].iter().enumerate() {
        columns.push((name.to_string(), complete.iter().map(|(_, a)| a[j]).collect()));
    }
    let k = columns.len() + 1;
    if n < k + 1 {
        return (rows.len() - n, Err(GlmError::InsufficientRows { n, k }));
    }
    let y: Vec<f64> = complete.iter().map(|(r, _)| r.effect).collect();
    let fit = DesignMatrix::from_columns(n, columns).and_then(|x| fit_ols(&x.with_intercept(), &y));
    (rows.len() - n, fit)
}

/// OLS of effects on product and comparison attributes for each outcome in
/// the pooled, conventional and organic subsamples, with listwise deletion of
/// effects that lack an attribute.
pub fn heterogeneity_regression(rows: &[EffectAttributeRow]) -> Vec<HeterogeneityColumn> {
    let mut out = Vec::new();
    for outcome in [Outcome::Level, Outcome::Volatility] {
        for subsample in [Subsample::Pooled, Subsample::Conventional, Subsample::Organic] {
            let sel: Vec<&EffectAttributeRow> = rows
                .iter()
                .filter(|r| r.outcome == outcome && subsample.admits(r.quality))
                .collect();
            let (n_missing, fit) = fit_column(&sel, subsample);
            out.push(HeterogeneityColumn {
                outcome,
                subsample,
                n_effects: sel.len(),
                n_missing,
                fit,
            });
        }
    }
    out
}

/// `outcome,subsample,term,coef,se,n_used,n_missing,status`.
pub fn heterogeneity_to_csv(columns: &[HeterogeneityColumn]) -> String {
    let mut s = String::from("outcome,subsample,term,coef,se,n_used,n_missing,status\n");
    for c in columns {
        let used = c.n_effects - c.n_missing;
        match &c.fit {
            Ok(fit) => {
                for (i, name) in fit.names.iter().enumerate() {
                    let term = if name == INTERCEPT { "intercept" } else { name };
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{},ok",
                        c.outcome.as_str(),
                        c.subsample.as_str(),
                        term,
                        fit.coefficients[i],
                        fit.standard_errors[i],
                        used,
                        c.n_missing
                    );
                }
            }
            Err(e) => {
                let _ = writeln!(
                    s,
                    "{},{},NA,NA,NA,{},{},\"{}\"",
                    c.outcome.as_str(),
                    c.subsample.as_str(),
                    used,
                    c.n_missing,
                    e.to_string().replace('"', "'")
                );
            }
        }
    }
    s
}
