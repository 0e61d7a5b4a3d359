//! Event catalogs: ingestion of heterogeneous incident CSVs into a normalized,
//! time-ordered list of marked events on a window `[0, T]` (days).
//!
//! Time resolution is one day. An event dated `d` gets `t = d - window_start`
//! in whole days. The window length `T` counts every calendar day of the
//! window inclusively, so an event on the last day has `t = T - 1` and an
//! optional jitter in `[0, 1)` keeps it inside the window.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// ISO 8601 date format used by the normalized on-disk schema.
pub const ISO_DATE: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("malformed CSV at row {row}: {message}")]
    Csv { row: u64, message: String },
    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),
    #[error("row {row}: cannot parse date `{value}` with format `{format}`")]
    BadDate {
        row: u64,
        value: String,
        format: String,
    },
    #[error("row {row}: invalid mark `{value}` ({reason})")]
    BadMark {
        row: u64,
        value: String,
        reason: &'static str,
    },
    #[error("window end {end} precedes window start {start}")]
    EmptyWindow { start: NaiveDate, end: NaiveDate },
    #[error("event at t = {t} lies outside the window [0, {length}]")]
    OutsideWindow { t: f64, length: f64 },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
}

/// A single marked event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Elapsed days since the window start.
    pub t: f64,
    /// Victim count, excluding the perpetrator.
    pub mark: u32,
    /// Provenance index. For ingested files this is the 1-based CSV line
    /// (the header is line 1); for simulated catalogs it is the generation order.
    pub source_row: u64,
}

/// Calendar month, ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month")
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    pub fn days(self) -> u32 {
        (self.next().first_day() - self.first_day()).num_days() as u32
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Time-ordered marked events on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCatalog {
    events: Vec<Event>,
    window_start: NaiveDate,
    length: f64,
    definition_note: String,
}

impl EventCatalog {
    /// Builds a catalog, sorting events by `(t, source_row)`.
    /// Fails if any event lies outside `[0, length]` or has a zero mark.
    pub fn new(
        mut events: Vec<Event>,
        window_start: NaiveDate,
        length: f64,
        definition_note: impl Into<String>,
    ) -> Result<Self, CatalogError> {
        if !length.is_finite() || length <= 0.0 {
            return Err(CatalogError::InvalidEvent(format!(
                "window length must be positive, got {length}"
            )));
        }
        for e in &events {
            if !(e.t >= 0.0 && e.t <= length) {
                return Err(CatalogError::OutsideWindow { t: e.t, length });
            }
            if e.mark == 0 {
                return Err(CatalogError::InvalidEvent(format!(
                    "source row {} has mark 0",
                    e.source_row
                )));
            }
        }
        sort_events(&mut events);
        Ok(Self {
            events,
            window_start,
            length,
            definition_note: definition_note.into(),
        })
    }

    /// Catalog covering the calendar days `start..=end` inclusively.
    pub fn for_window(
        events: Vec<Event>,
        start: NaiveDate,
        end: NaiveDate,
        definition_note: impl Into<String>,
    ) -> Result<Self, CatalogError> {
        if end < start {
            return Err(CatalogError::EmptyWindow { start, end });
        }
        let length = ((end - start).num_days() + 1) as f64;
        Self::new(events, start, length, definition_note)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.t).collect()
    }

    pub fn marks(&self) -> Vec<u32> {
        self.events.iter().map(|e| e.mark).collect()
    }

    /// Window length `T` in days.
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn window_start(&self) -> NaiveDate {
        self.window_start
    }

    /// Last calendar day touched by the window.
    pub fn window_end(&self) -> NaiveDate {
        let days = (self.length.ceil() as i64 - 1).max(0);
        self.window_start + Duration::days(days)
    }

    pub fn definition_note(&self) -> &str {
        &self.definition_note
    }

    /// Calendar date an elapsed time falls on.
    pub fn date_of(&self, t: f64) -> NaiveDate {
        self.window_start + Duration::days(t.floor() as i64)
    }

    /// Every calendar month overlapping the window, in order.
    pub fn months(&self) -> Vec<Month> {
        months_between(self.window_start, self.window_end())
    }

    /// Returns a copy with each event time moved by a seeded uniform offset in
    /// `[0, 1)`. Offsets are drawn in catalog order, then the catalog is re-sorted.
    /// Times that would pass `T` are clamped to `T`.
    pub fn jittered(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = self.events.clone();
        for e in &mut events {
            let u: f64 = rng.random();
            e.t = (e.t + u).min(self.length);
        }
        sort_events(&mut events);
        Self {
            events,
            ..self.clone()
        }
    }
}

fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.source_row.cmp(&b.source_row)));
}

pub fn months_between(start: NaiveDate, end: NaiveDate) -> Vec<Month> {
    let last = Month::of(end);
    let mut m = Month::of(start);
    let mut out = Vec::new();
    while m <= last {
        out.push(m);
        m = m.next();
    }
    out
}

/// How the mark column is turned into a victim count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkRule {
    /// Use the column value as the victim count.
    AsIs,
    /// The named column flags rows whose count includes the perpetrator;
    /// one is subtracted from those rows.
    ExcludePerpetratorFlagColumn(String),
}

/// Maps a source CSV layout onto the normalized schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaMapping {
    pub date_column: String,
    /// chrono format string, e.g. `%m/%d/%Y`.
    pub date_format: String,
    pub mark_column: String,
    pub mark_rule: MarkRule,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    /// Free text describing the source's inclusion rule, e.g. "3+ killed".
    #[serde(default)]
    pub definition_note: String,
    /// Definitional mark threshold of the source. Rows below it are kept
    /// and counted in the summary.
    #[serde(default)]
    pub mark_threshold: Option<u32>,
}

impl SchemaMapping {
    /// Mapping that reads the normalized `date,victims` schema.
    pub fn normalized(window_start: NaiveDate, window_end: NaiveDate) -> Self {
        Self {
            date_column: "date".into(),
            date_format: ISO_DATE.into(),
            mark_column: "victims".into(),
            mark_rule: MarkRule::AsIs,
            window_start,
            window_end,
            definition_note: String::new(),
            mark_threshold: None,
        }
    }
}

/// Result of [`ingest`].
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub catalog: EventCatalog,
    /// Rows whose date fell outside the mapping's window.
    pub dropped_outside_window: usize,
}

fn parse_date(value: &str, format: &str) -> Option<NaiveDate> {
    let value = value.trim();
    NaiveDate::parse_from_str(value, format).ok().or_else(|| {
        NaiveDateTime::parse_from_str(value, format)
            .ok()
            .map(|dt| dt.date())
    })
}

fn is_truthy(value: &str) -> bool {
    matches!(
        value.trim().to_ascii_lowercase().as_str(),
        "1" | "true" | "yes" | "y" | "t"
    )
}

/// Parses a CSV with a header row into a catalog. Fails fast on the first
/// unparseable row; rows dated outside the window are dropped and counted.
pub fn ingest(csv_bytes: &[u8], mapping: &SchemaMapping) -> Result<Ingested, CatalogError> {
    if mapping.window_end < mapping.window_start {
        return Err(CatalogError::EmptyWindow {
            start: mapping.window_start,
            end: mapping.window_end,
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(csv_bytes);
    let headers = reader.headers().map_err(|e| csv_error(&e, 1))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CatalogError::MissingColumn(name.to_string()))
    };
    let date_idx = column(&mapping.date_column)?;
    let mark_idx = column(&mapping.mark_column)?;
    let flag_idx = match &mapping.mark_rule {
        MarkRule::AsIs => None,
        MarkRule::ExcludePerpetratorFlagColumn(name) => Some(column(name)?),
    };

    let mut events = Vec::new();
    let mut dropped = 0;
    let mut fallback_row = 1u64;
    for record in reader.records() {
        fallback_row += 1;
        let record = record.map_err(|e| csv_error(&e, fallback_row))?;
        let row = record.position().map(|p| p.line()).unwrap_or(fallback_row);

        let raw_date = record.get(date_idx).unwrap_or("");
        let date =
            parse_date(raw_date, &mapping.date_format).ok_or_else(|| CatalogError::BadDate {
                row,
                value: raw_date.to_string(),
                format: mapping.date_format.clone(),
            })?;

        let raw_mark = record.get(mark_idx).unwrap_or("");
        let mut mark: i64 = raw_mark.trim().parse().map_err(|_| CatalogError::BadMark {
            row,
            value: raw_mark.to_string(),
            reason: "not an integer",
        })?;
        if let Some(idx) = flag_idx {
            if is_truthy(record.get(idx).unwrap_or("")) {
                mark -= 1;
            }
        }
        if mark < 1 {
            return Err(CatalogError::BadMark {
                row,
                value: raw_mark.to_string(),
                reason: "victim count must be at least 1",
            });
        }
        let mark = u32::try_from(mark).map_err(|_| CatalogError::BadMark {
            row,
            value: raw_mark.to_string(),
            reason: "out of range",
        })?;

        if date < mapping.window_start || date > mapping.window_end {
            dropped += 1;
            continue;
        }
        events.push(Event {
            t: (date - mapping.window_start).num_days() as f64,
            mark,
            source_row: row,
        });
    }

    let catalog = EventCatalog::for_window(
        events,
        mapping.window_start,
        mapping.window_end,
        mapping.definition_note.clone(),
    )?;
    Ok(Ingested {
        catalog,
        dropped_outside_window: dropped,
    })
}

fn csv_error(e: &csv::Error, fallback_row: u64) -> CatalogError {
    let row = e.position().map(|p| p.line()).unwrap_or(fallback_row);
    CatalogError::Csv {
        row,
        message: e.to_string(),
    }
}

/// Writes the normalized `date,victims` CSV. Fractional parts of `t` are
/// dropped, so a jittered catalog serializes to its day-resolution form.
pub fn to_normalized_csv(catalog: &EventCatalog) -> String {
    let mut out = String::from("date,victims\n");
    for e in catalog.events() {
        out.push_str(&format!(
            "{},{}\n",
            catalog.date_of(e.t).format(ISO_DATE),
            e.mark
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonthCount {
    pub month: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogSummary {
    pub n: usize,
    #[serde(rename = "T")]
    pub length: f64,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub definition_note: String,
    pub mark_min: Option<u32>,
    pub mark_max: Option<u32>,
    /// Count of events per victim count.
    pub mark_distribution: BTreeMap<u32, usize>,
    /// Events below the source's definitional threshold, when one is known.
    pub below_threshold: Option<usize>,
    pub monthly_counts: Vec<MonthCount>,
}

/// Counts per calendar month over the whole window, zero months included.
pub fn monthly_counts(
    catalog: &EventCatalog,
    times: impl IntoIterator<Item = f64>,
) -> Vec<MonthCount> {
    let months = catalog.months();
    let mut counts: BTreeMap<Month, usize> = months.iter().map(|&m| (m, 0)).collect();
    for t in times {
        if let Some(c) = counts.get_mut(&Month::of(catalog.date_of(t))) {
            *c += 1;
        }
    }
    counts
        .into_iter()
        .map(|(m, count)| MonthCount {
            month: m.to_string(),
            count,
        })
        .collect()
}

pub fn summarize(catalog: &EventCatalog, mark_threshold: Option<u32>) -> CatalogSummary {
    let mut mark_distribution = BTreeMap::new();
    for e in catalog.events() {
        *mark_distribution.entry(e.mark).or_insert(0) += 1;
    }
    CatalogSummary {
        n: catalog.len(),
        length: catalog.length(),
        window_start: catalog.window_start(),
        window_end: catalog.window_end(),
        definition_note: catalog.definition_note().to_string(),
        mark_min: mark_distribution.keys().next().copied(),
        mark_max: mark_distribution.keys().next_back().copied(),
        below_threshold: mark_threshold
            .map(|th| catalog.events().iter().filter(|e| e.mark < th).count()),
        monthly_counts: monthly_counts(catalog, catalog.events().iter().map(|e| e.t)),
        mark_distribution,
    }
}
