//! Pre-trend placebo tests, rolling biweekly effects, descriptive statistics
//! and the effect-heterogeneity regression.

mod describe;
mod heterogeneity;
mod placebo;

pub use describe::{describe_distribution, descriptive_outcomes, descriptives_to_csv, DescriptiveRow};
pub use heterogeneity::{
    heterogeneity_regression, heterogeneity_to_csv, join_effects_attributes, EffectAttributeRow,
    HeterogeneityColumn, Subsample, HETEROGENEITY_TERMS,
};
pub use placebo::{
    pre_protection_weeks, pretrend_placebo, rolling_biweekly_effects, rolling_to_csv, BiweekEffect,
};
