//! Delimited-text readers and writers: price panels, attribute files and
//! effect tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::did::EffectEstimate;
use crate::panel::{Outcome, Panel, PriceObservation, Quality, SeriesKey};
use crate::week::IsoWeek;

pub const PRICE_HEADER: [&str; 7] = ["country", "product", "quality", "region", "year", "iso_week", "price"];
pub const ATTRIBUTE_HEADER: [&str; 7] = [
    "product",
    "quality",
    "comparison",
    "harvested_once",
    "storability_weeks",
    "market_share_pct",
    "days_protection",
];
pub const EFFECT_HEADER: [&str; 15] = [
    "product",
    "quality",
    "control_country",
    "outcome",
    "method",
    "atet",
    "se",
    "p",
    "n11",
    "n10",
    "n01",
    "n00",
    "trimmed",
    "reps",
    "seed",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{file}: {source}")]
    Open {
        file: String,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Row {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:1: header must be `{expected}`, found `{found}`")]
    Header {
        file: String,
        expected: String,
        found: String,
    },
    #[error("{file}:{line}: duplicate key {key} (first seen on line {first_line})")]
    Duplicate {
        file: String,
        line: usize,
        first_line: usize,
        key: String,
    },
    #[error("{file}:{line}: non-positive price `{price}`")]
    NonPositivePrice {
        file: String,
        line: usize,
        price: String,
    },
    #[error("{} rejected row(s) in {file}; first: {}", errors.len(), errors[0])]
    Rejected { file: String, errors: Vec<IoError> },
}

pub fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Open {
        file: path.display().to_string(),
        source,
    })
}

#[derive(Debug)]
pub struct IngestReport {
    pub panel: Panel,
    pub rows_read: usize,
    pub rejected: Vec<IoError>,
}

impl IngestReport {
    pub fn rows_kept(&self) -> usize {
        self.panel.len()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "rows read: {}, kept: {}, rejected: {}\n",
            self.rows_read,
            self.rows_kept(),
            self.rejected.len()
        );
        for (country, n) in self.panel.count_by_country() {
            let _ = writeln!(s, "  {country}: {n}");
        }
        s
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn check_header(file: &str, record: Option<&csv::StringRecord>, expected: &[&str]) -> Result<(), IoError> {
    let found: Vec<&str> = record.map(|r| r.iter().collect()).unwrap_or_default();
    if found != expected {
        return Err(IoError::Header {
            file: file.to_string(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

/// A positive decimal using `.` as separator, e.g. `3.25`.
fn parse_price(s: &str) -> Option<f64> {
    let digits = s.chars().filter(char::is_ascii_digit).count();
    let dots = s.chars().filter(|&c| c == '.').count();
    if digits == 0 || dots > 1 || s.chars().any(|c| !(c.is_ascii_digit() || c == '.')) {
        return None;
    }
    s.parse().ok()
}

/// Reads and validates a price file. With `skip_bad_rows` rejected rows are
/// reported and skipped; otherwise any rejection fails the whole file.
pub fn read_prices<R: Read>(input: R, file: &str, skip_bad_rows: bool) -> Result<IngestReport, IoError> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = records.next().transpose().map_err(|e| IoError::Row {
        file: file.into(),
        line: 1,
        message: e.to_string(),
    })?;
    check_header(file, header.as_ref(), &PRICE_HEADER)?;

    let mut seen: HashMap<(SeriesKey, IsoWeek), usize> = HashMap::new();
    let mut obs = Vec::new();
    let mut rejected = Vec::new();
    let mut rows_read = 0;
    for (i, record) in records.enumerate() {
        let line = i + 2;
        rows_read += 1;
        let row_err = |message: String| IoError::Row {
            file: file.into(),
            line,
            message,
        };
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejected.push(row_err(e.to_string()));
                continue;
            }
        };
        let parsed = (|| {
            if record.len() != PRICE_HEADER.len() {
                return Err(row_err(format!("expected 7 fields, found {}", record.len())));
            }
            let quality: Quality = record[2].parse().map_err(row_err)?;
            let year: i32 = record[4]
                .parse()
                .map_err(|_| row_err(format!("bad year `{}`", &record[4])))?;
            let week_no: u32 = record[5]
                .parse()
                .map_err(|_| row_err(format!("bad iso_week `{}`", &record[5])))?;
            let week = IsoWeek::new(year, week_no)
                .ok_or_else(|| row_err(format!("{year} has no ISO week {week_no}")))?;
            let price = parse_price(&record[6])
                .ok_or_else(|| row_err(format!("price `{}` is not a decimal number", &record[6])))?;
            if price <= 0.0 {
                return Err(IoError::NonPositivePrice {
                    file: file.into(),
                    line,
                    price: record[6].to_string(),
                });
            }
            if record[0].is_empty() || record[1].is_empty() {
                return Err(row_err("country and product are required".into()));
            }
            let series = SeriesKey {
                product: record[1].to_string(),
                quality,
                country: record[0].to_string(),
                region: (!record[3].is_empty()).then(|| record[3].to_string()),
            };
            Ok(PriceObservation { series, week, price })
        })();
        match parsed {
            Ok(o) => {
                let key = (o.series.clone(), o.week);
                if let Some(&first_line) = seen.get(&key) {
                    rejected.push(IoError::Duplicate {
                        file: file.into(),
                        line,
                        first_line,
                        key: format!("{} {}", o.series, o.week),
                    });
                    continue;
                }
                seen.insert(key, line);
                obs.push(o);
            }
            Err(e) => rejected.push(e),
        }
    }
    if !rejected.is_empty() && !skip_bad_rows {
        return Err(IoError::Rejected {
            file: file.into(),
            errors: rejected,
        });
    }
    let panel = Panel::new(obs).expect("rows validated above");
    Ok(IngestReport {
        panel,
        rows_read,
        rejected,
    })
}

pub fn read_prices_file(path: &Path, skip_bad_rows: bool) -> Result<IngestReport, IoError> {
    read_prices(open(path)?, &path.display().to_string(), skip_bad_rows)
}

pub fn prices_to_csv(panel: &Panel) -> String {
    let mut s = PRICE_HEADER.join(",");
    s.push('\n');
    for o in panel.observations() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            o.series.country,
            o.series.product,
            o.series.quality,
            o.series.region.as_deref().unwrap_or(""),
            o.week.year(),
            o.week.week(),
            o.price
        );
    }
    s
}

/// Per-product attributes for the heterogeneity regression. Unknown values
/// are written as `NA` or left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeRecord {
    pub product: String,
    pub quality: Quality,
    pub comparison: String,
    pub harvested_once: Option<f64>,
    pub storability_weeks: Option<f64>,
    pub market_share_pct: Option<f64>,
    pub days_protection: Option<f64>,
}

fn optional_number(s: &str) -> Result<Option<f64>, String> {
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("`{s}` is not a number"))
}

pub fn read_attributes<R: Read>(input: R, file: &str) -> Result<Vec<AttributeRecord>, IoError> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = records.next().transpose().map_err(|e| IoError::Row {
        file: file.into(),
        line: 1,
        message: e.to_string(),
    })?;
    check_header(file, header.as_ref(), &ATTRIBUTE_HEADER)?;
    let mut out = Vec::new();
    let mut seen: HashMap<(String, Quality, String), usize> = HashMap::new();
    for (i, record) in records.enumerate() {
        let line = i + 2;
        let row_err = |message: String| IoError::Row {
            file: file.into(),
            line,
            message,
        };
        let record = record.map_err(|e| row_err(e.to_string()))?;
        if record.len() != ATTRIBUTE_HEADER.len() {
            return Err(row_err(format!("expected 7 fields, found {}", record.len())));
        }
        let quality: Quality = record[1].parse().map_err(row_err)?;
        let num = |j: usize| optional_number(&record[j]).map_err(row_err);
        let rec = AttributeRecord {
            product: record[0].to_string(),
            quality,
            comparison: record[2].to_string(),
            harvested_once: num(3)?,
            storability_weeks: num(4)?,
            market_share_pct: num(5)?,
            days_protection: num(6)?,
        };
        let key = (rec.product.clone(), rec.quality, rec.comparison.clone());
        if let Some(&first_line) = seen.get(&key) {
            return Err(IoError::Duplicate {
                file: file.into(),
                line,
                first_line,
                key: format!("{}/{}/{}", key.0, key.1, key.2),
            });
        }
        seen.insert(key, line);
        out.push(rec);
    }
    Ok(out)
}

/// One row of an effect table.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectRow {
    pub product: String,
    pub quality: Quality,
    pub control_country: String,
    pub outcome: Outcome,
    pub method: String,
    pub estimate: EffectEstimate,
    pub reps: usize,
    pub seed: u64,
    /// Propensity trim threshold; `None` for estimators without trimming.
    pub trim: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => "NA".to_string(),
    }
}

pub fn effects_to_csv(rows: &[EffectRow]) -> String {
    let mut s = EFFECT_HEADER.join(",");
    s.push('\n');
    for r in rows {
        let e = &r.estimate;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.product,
            r.quality,
            r.control_country,
            r.outcome.as_str(),
            r.method,
            fmt_opt(Some(e.atet)),
            fmt_opt(e.se()),
            fmt_opt(e.p_value()),
            e.n_by_cell[0],
            e.n_by_cell[1],
            e.n_by_cell[2],
            e.n_by_cell[3],
            e.trimmed(),
            r.reps,
            r.seed
        );
    }
    s
}

pub const INTERVAL_HEADER: [&str; 16] = [
    "product",
    "quality",
    "control_country",
    "outcome",
    "method",
    "trim",
    "ci_normal_lo",
    "ci_normal_hi",
    "ci_percentile_lo",
    "ci_percentile_hi",
    "reps",
    "failed_reps",
    "trimmed11",
    "trimmed10",
    "trimmed01",
    "trimmed00",
];

/// Confidence intervals and per-cell trim counts for each effect row.
pub fn intervals_to_csv(rows: &[EffectRow]) -> String {
    let mut s = INTERVAL_HEADER.join(",");
    s.push('\n');
    for r in rows {
        let e = &r.estimate;
        let inf = e.inference.as_ref();
        let normal = inf.map(|i| i.ci_normal);
        let pct = inf.and_then(|i| i.ci_percentile);
        let t = e.n_trimmed_by_cell;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.product,
            r.quality,
            r.control_country,
            r.outcome.as_str(),
            r.method,
            fmt_opt(r.trim),
            fmt_opt(normal.map(|c| c.0)),
            fmt_opt(normal.map(|c| c.1)),
            fmt_opt(pct.map(|c| c.0)),
            fmt_opt(pct.map(|c| c.1)),
            r.reps,
            inf.map_or(0, |i| i.failed_reps),
            t[0],
            t[1],
            t[2],
            t[3]
        );
    }
    s
}

/// The columns of an effect table needed downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectRecord {
    pub product: String,
    pub quality: Quality,
    pub control_country: String,
    pub outcome: Outcome,
    pub method: String,
    pub atet: f64,
    pub se: Option<f64>,
}

pub fn read_effects<R: Read>(input: R, file: &str) -> Result<Vec<EffectRecord>, IoError> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = records.next().transpose().map_err(|e| IoError::Row {
        file: file.into(),
        line: 1,
        message: e.to_string(),
    })?;
    check_header(file, header.as_ref(), &EFFECT_HEADER)?;
    let mut out = Vec::new();
    for (i, record) in records.enumerate() {
        let line = i + 2;
        let row_err = |message: String| IoError::Row {
            file: file.into(),
            line,
            message,
        };
        let record = record.map_err(|e| row_err(e.to_string()))?;
        if record.len() != EFFECT_HEADER.len() {
            return Err(row_err(format!("expected 15 fields, found {}", record.len())));
        }
        out.push(EffectRecord {
            product: record[0].to_string(),
            quality: record[1].parse().map_err(row_err)?,
            control_country: record[2].to_string(),
            outcome: record[3].parse().map_err(row_err)?,
            method: record[4].to_string(),
            atet: record[5]
                .parse()
                .map_err(|_| row_err(format!("bad atet `{}`", &record[5])))?,
            se: optional_number(&record[6]).map_err(row_err)?,
        });
    }
    Ok(out)
}

pub fn counts_line(counts: &BTreeMap<String, usize>) -> String {
    counts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}
