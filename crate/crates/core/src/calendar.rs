//! Protection calendars, phase labels and season assignment.
//!
//! A protection window is a fixed month-day range that repeats every year.
//! Weeks are labeled by how many of their seven days fall inside the window,
//! and seasons run from the midpoint between two consecutive windows to the
//! next midpoint.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::week::IsoWeek;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CalendarError {
    #[error("product `{0}` has no protection window in the calendar")]
    UnknownProduct(String),
    #[error("calendar line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("protection window for `{product}` must start before it ends within one year ({start} .. {end})")]
    Wrapping {
        product: String,
        start: MonthDay,
        end: MonthDay,
    },
    #[error("calendar line {line}: duplicate entry for `{product}`")]
    Duplicate { line: usize, product: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MonthDay {
    month: u32,
    day: u32,
}

impl MonthDay {
    /// February 29 is rejected because the window must exist every year.
    pub fn new(month: u32, day: u32) -> Option<Self> {
        // 2021 is not a leap year.
        NaiveDate::from_ymd_opt(2021, month, day).map(|_| MonthDay { month, day })
    }

    pub fn of(date: NaiveDate) -> (u32, u32) {
        (date.month(), date.day())
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn in_year(&self, year: i32) -> NaiveDate {
        NaiveDate::from_ymd_opt(year, self.month, self.day).expect("validated month-day")
    }
}

impl fmt::Display for MonthDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}-{:02}", self.month, self.day)
    }
}

impl FromStr for MonthDay {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (m, d) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| format!("expected MM-DD, got `{s}`"))?;
        if m.len() != 2 || d.len() != 2 {
            return Err(format!("expected MM-DD, got `{s}`"));
        }
        let month: u32 = m.parse().map_err(|_| format!("bad month in `{s}`"))?;
        let day: u32 = d.parse().map_err(|_| format!("bad day in `{s}`"))?;
        MonthDay::new(month, day).ok_or_else(|| format!("`{s}` is not a valid month-day"))
    }
}

/// Inclusive month-day range, identical every year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectionWindow {
    pub start: MonthDay,
    pub end: MonthDay,
}

impl ProtectionWindow {
    pub fn contains(&self, date: NaiveDate) -> bool {
        let md = MonthDay::of(date);
        md >= (self.start.month, self.start.day) && md <= (self.end.month, self.end.day)
    }

    /// ISO week containing the first protected day of `year`'s window.
    pub fn start_week(&self, year: i32) -> IsoWeek {
        IsoWeek::containing(self.start.in_year(year))
    }

    /// ISO week containing the last protected day of `year`'s window.
    pub fn end_week(&self, year: i32) -> IsoWeek {
        IsoWeek::containing(self.end.in_year(year))
    }

    /// First week whose seven days are all protected in `year`'s window.
    pub fn first_protected_week(&self, year: i32) -> IsoWeek {
        let w = self.start_week(year);
        if self.label(w) == PhaseLabel::Protected {
            w
        } else {
            w.succ()
        }
    }

    pub fn label(&self, week: IsoWeek) -> PhaseLabel {
        match week.days().filter(|d| self.contains(*d)).count() {
            7 => PhaseLabel::Protected,
            0 => PhaseLabel::Unprotected,
            _ => PhaseLabel::Boundary,
        }
    }

    /// Ordinal of the first week of the season belonging to `year`'s window.
    fn season_start_ordinal(&self, year: i32) -> i64 {
        let prev_end = self.end_week(year - 1).ordinal();
        let start = self.start_week(year).ordinal();
        // Ties round toward the earlier window.
        prev_end + (start - prev_end).div_euclid(2)
    }

    /// First week of the season anchored on `year`'s window.
    pub fn season_start(&self, year: i32) -> IsoWeek {
        IsoWeek::from_ordinal(self.season_start_ordinal(year))
    }

    /// The season (identified by the year of its window) containing `week`.
    pub fn season_of(&self, week: IsoWeek) -> i32 {
        let ord = week.ordinal();
        let guess = week.monday().year();
        for year in [guess - 1, guess, guess + 1, guess + 2] {
            if self.season_start_ordinal(year) <= ord && ord < self.season_start_ordinal(year + 1) {
                return year;
            }
        }
        unreachable!("seasons partition the timeline")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhaseLabel {
    Protected,
    Unprotected,
    /// The week straddles the start or end of the window.
    Boundary,
}

impl PhaseLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseLabel::Protected => "protected",
            PhaseLabel::Unprotected => "unprotected",
            PhaseLabel::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeasonId {
    pub product: String,
    pub index: i32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtectionCalendar {
    entries: BTreeMap<String, ProtectionWindow>,
}

impl ProtectionCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        product: impl Into<String>,
        start: MonthDay,
        end: MonthDay,
    ) -> Result<(), CalendarError> {
        let product = product.into();
        if start >= end {
            return Err(CalendarError::Wrapping {
                product,
                start,
                end,
            });
        }
        self.entries.insert(product, ProtectionWindow { start, end });
        Ok(())
    }

    pub fn window(&self, product: &str) -> Result<&ProtectionWindow, CalendarError> {
        self.entries
            .get(product)
            .ok_or_else(|| CalendarError::UnknownProduct(product.to_string()))
    }

    pub fn products(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label_week(&self, product: &str, week: IsoWeek) -> Result<PhaseLabel, CalendarError> {
        Ok(self.window(product)?.label(week))
    }

    pub fn season_of(&self, product: &str, week: IsoWeek) -> Result<SeasonId, CalendarError> {
        Ok(SeasonId {
            product: product.to_string(),
            index: self.window(product)?.season_of(week),
        })
    }

    /// Reads `product,start_md,end_md` rows. A header row with exactly those
    /// names, blank lines and `#` comments are skipped.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, CalendarError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut cal = ProtectionCalendar::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| CalendarError::Malformed {
                line: e.position().map_or(i + 1, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(i + 1, |p| p.line() as usize);
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            if i == 0 && &record == &csv::StringRecord::from(vec!["product", "start_md", "end_md"])
            {
                continue;
            }
            if record.len() != 3 {
                return Err(CalendarError::Malformed {
                    line,
                    message: format!("expected 3 fields, found {}", record.len()),
                });
            }
            let product = record[0].to_string();
            if product.is_empty() {
                return Err(CalendarError::Malformed {
                    line,
                    message: "empty product".into(),
                });
            }
            let parse = |s: &str| {
                s.parse::<MonthDay>()
                    .map_err(|message| CalendarError::Malformed { line, message })
            };
            let start = parse(&record[1])?;
            let end = parse(&record[2])?;
            if cal.entries.contains_key(&product) {
                return Err(CalendarError::Duplicate { line, product });
            }
            cal.insert(product, start, end).map_err(|e| CalendarError::Malformed {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(cal)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("product,start_md,end_md\n");
        for (product, w) in &self.entries {
            out.push_str(&format!("{product},{},{}\n", w.start, w.end));
        }
        out
    }
}
