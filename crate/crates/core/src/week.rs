//! ISO-8601 week handling.

use std::fmt;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

/// An ISO-8601 week (`year` is the ISO week-numbering year).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IsoWeek {
    year: i32,
    week: u32,
}

impl IsoWeek {
    /// Returns `None` unless `week` exists in the ISO calendar of `year`.
    pub fn new(year: i32, week: u32) -> Option<Self> {
        NaiveDate::from_isoywd_opt(year, week, Weekday::Mon).map(|_| IsoWeek { year, week })
    }

    /// The ISO week containing `date`.
    pub fn containing(date: NaiveDate) -> Self {
        let iso = date.iso_week();
        IsoWeek {
            year: iso.year(),
            week: iso.week(),
        }
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn week(&self) -> u32 {
        self.week
    }

    pub fn monday(&self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon)
            .expect("IsoWeek is validated on construction")
    }

    pub fn sunday(&self) -> NaiveDate {
        self.monday() + Duration::days(6)
    }

    /// The seven dates Monday..Sunday.
    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let monday = self.monday();
        (0..7).map(move |i| monday + Duration::days(i))
    }

    /// Weeks elapsed since the ISO week containing 0001-01-01 (a Monday).
    pub fn ordinal(&self) -> i64 {
        (i64::from(self.monday().num_days_from_ce()) - 1) / 7
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        let days = i32::try_from(ordinal * 7 + 1).expect("week ordinal out of range");
        let monday = NaiveDate::from_num_days_from_ce_opt(days).expect("week ordinal out of range");
        IsoWeek::containing(monday)
    }

    pub fn succ(&self) -> Self {
        IsoWeek::containing(self.monday() + Duration::days(7))
    }

    pub fn pred(&self) -> Self {
        IsoWeek::containing(self.monday() - Duration::days(7))
    }

    /// Signed number of weeks from `self` to `other`.
    pub fn weeks_until(&self, other: &IsoWeek) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

/// Number of ISO weeks (52 or 53) in `year`.
pub fn weeks_in_year(year: i32) -> u32 {
    // Dec 28 always lies in the last ISO week of its year.
    NaiveDate::from_ymd_opt(year, 12, 28)
        .expect("valid date")
        .iso_week()
        .week()
}

impl fmt::Display for IsoWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}
