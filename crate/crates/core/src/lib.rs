//! Difference-in-differences estimation of the effect of fixed seasonal
//! protection windows on weekly producer prices.
//!
//! The pipeline labels each weekly observation by phase (protected,
//! unprotected, or boundary) and season, builds standardized price levels or
//! week-to-week volatility, and estimates the average treatment effect on the
//! treated with inverse-probability-weighted difference-in-differences.
//! [`simgen`] produces synthetic panels with a known effect for validation.

pub mod calendar;
pub mod cli;
pub mod diagnostics;
pub mod did;
pub mod exec;
pub mod glm;
pub mod io;
pub mod panel;
pub mod simgen;
pub mod stats;
pub mod transforms;
pub mod week;

pub use calendar::{PhaseLabel, ProtectionCalendar, SeasonId};
pub use did::{EffectEstimate, EstimationTask};
pub use exec::Execution;
pub use panel::{Outcome, Panel, PriceObservation, Quality};
pub use week::IsoWeek;
