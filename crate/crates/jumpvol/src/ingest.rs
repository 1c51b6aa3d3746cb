//! Price and announcement files.
//!
//! Prices: CSV `timestamp,price` with ISO-8601 local timestamps on the
//! elementary grid and price levels. Announcements: CSV
//! `date,time,forward_guidance` with an optional trailing `note` column.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use jumpvol_core::grid::SessionGrid;
use jumpvol_core::panel::{AnnouncementEvent, PanelError, PricePanel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::parse_time;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}")]
    Open {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}")]
    Csv { line: u64, source: csv::Error },
    #[error("line {line}: unparseable timestamp {value:?}")]
    Timestamp { line: u64, value: String },
    #[error("line {line}: timestamps not strictly increasing")]
    NonMonotone { line: u64 },
    #[error("line {line}: price {value} is not positive")]
    NonPositive { line: u64, value: f64 },
    #[error("line {line}: {message}")]
    Field { line: u64, message: String },
    #[error("duplicate announcement at {0}")]
    DuplicateEvent(NaiveDateTime),
    #[error("no usable trading days")]
    Empty,
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestConfig {
    pub grid: SessionGrid,
    pub max_missing_frac: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            grid: SessionGrid::default(),
            max_missing_frac: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedDay {
    pub date: NaiveDate,
    pub missing: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    /// Elementary prices filled from a neighbour within the same day.
    pub filled: usize,
    /// Rows whose timestamp is not on the elementary grid of the session.
    pub off_grid: usize,
    pub rejected: Vec<RejectedDay>,
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    timestamp: String,
    price: f64,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

pub fn load_price_panel(
    path: &Path,
    ticker: &str,
    cfg: &IngestConfig,
) -> Result<(PricePanel, IngestReport), IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Open {
        path: path.display().to_string(),
        source,
    })?;
    read_price_panel(file, ticker, cfg)
}

/// Builds a panel of log prices. Missing grid points are forward-filled
/// (back-filled for a missing open) and days missing more than
/// `max_missing_frac` of the grid are dropped and reported.
pub fn read_price_panel<R: Read>(
    reader: R,
    ticker: &str,
    cfg: &IngestConfig,
) -> Result<(PricePanel, IngestReport), IngestError> {
    let grid = &cfg.grid;
    let slots = grid.elementary_per_day() + 1;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|source| IngestError::Csv { line: 1, source })?.clone();
    let mut days: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    let mut report = IngestReport::default();
    let mut last: Option<NaiveDateTime> = None;

    for record in rdr.records() {
        let record = record.map_err(|source| IngestError::Csv { line: 0, source })?;
        let line = line_of(&record);
        let row: PriceRow = record
            .deserialize(Some(&headers))
            .map_err(|source| IngestError::Csv { line, source })?;
        report.rows += 1;
        let ts = parse_timestamp(&row.timestamp).ok_or_else(|| IngestError::Timestamp {
            line,
            value: row.timestamp.clone(),
        })?;
        if last.is_some_and(|prev| ts <= prev) {
            return Err(IngestError::NonMonotone { line });
        }
        last = Some(ts);
        if !row.price.is_finite() || row.price <= 0.0 {
            return Err(IngestError::NonPositive {
                line,
                value: row.price,
            });
        }
        let Some(slot) = grid.elementary_slot(ts.time()) else {
            report.off_grid += 1;
            continue;
        };
        days.entry(ts.date()).or_insert_with(|| vec![None; slots])[slot] = Some(row.price.ln());
    }

    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for (date, prices) in days {
        let missing = prices.iter().filter(|p| p.is_none()).count();
        if missing as f64 > cfg.max_missing_frac * slots as f64 {
            report.rejected.push(RejectedDay { date, missing });
            continue;
        }
        let first = prices.iter().flatten().next().copied().expect("day has a price");
        let mut prev = first;
        let row: Vec<f64> = prices
            .iter()
            .map(|p| {
                let v = p.unwrap_or(prev);
                prev = v;
                v
            })
            .collect();
        report.filled += missing;
        dates.push(date);
        rows.push(row);
    }
    if dates.is_empty() {
        return Err(IngestError::Empty);
    }
    let panel = PricePanel::new(ticker, dates, rows, grid.elementary_minutes())?;
    Ok((panel, report))
}

/// Writes a panel as `timestamp,price` with price levels.
pub fn write_price_csv<W: Write>(
    panel: &PricePanel,
    grid: &SessionGrid,
    writer: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "price"])
        .map_err(|source| IngestError::Csv { line: 0, source })?;
    let step = chrono::Duration::minutes(grid.elementary_minutes() as i64);
    for (date, row) in panel.days().iter().zip(panel.log_prices()) {
        let mut t = date.and_time(grid.open());
        for lp in row {
            w.write_record([
                t.format("%Y-%m-%dT%H:%M:%S").to_string(),
                lp.exp().to_string(),
            ])
            .map_err(|source| IngestError::Csv { line: 0, source })?;
            t += step;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct EventRow {
    date: String,
    time: String,
    forward_guidance: String,
    #[serde(default)]
    note: Option<String>,
}

pub fn load_announcements(path: &Path) -> Result<Vec<AnnouncementEvent>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Open {
        path: path.display().to_string(),
        source,
    })?;
    read_announcements(file)
}

/// Events sorted by timestamp; an empty file gives an empty list.
pub fn read_announcements<R: Read>(reader: R) -> Result<Vec<AnnouncementEvent>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(_) => return Ok(Vec::new()),
    };
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let mut events = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|source| IngestError::Csv { line: 0, source })?;
        let line = line_of(&record);
        let row: EventRow = record
            .deserialize(Some(&headers))
            .map_err(|source| IngestError::Csv { line, source })?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|_| IngestError::Field {
            line,
            message: format!("bad date {:?}", row.date),
        })?;
        let time = parse_time(&row.time).map_err(|e| IngestError::Field {
            line,
            message: e.to_string(),
        })?;
        let forward_guidance = match row.forward_guidance.as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(IngestError::Field {
                    line,
                    message: format!("forward_guidance must be 0 or 1, got {other:?}"),
                })
            }
        };
        events.push(AnnouncementEvent {
            date,
            time,
            forward_guidance,
            note: row.note.unwrap_or_default(),
        });
    }
    events.sort_by_key(|e| e.date.and_time(e.time));
    if let Some(w) = events
        .windows(2)
        .find(|w| w[0].date == w[1].date && w[0].time == w[1].time)
    {
        return Err(IngestError::DuplicateEvent(w[0].date.and_time(w[0].time)));
    }
    Ok(events)
}

pub fn write_announcements<W: Write>(events: &[AnnouncementEvent], writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |source| IngestError::Csv { line: 0, source };
    w.write_record(["date", "time", "forward_guidance", "note"]).map_err(csv_err)?;
    for e in events {
        w.write_record([
            e.date.format("%Y-%m-%d").to_string(),
            e.time.format("%H:%M").to_string(),
            u8::from(e.forward_guidance).to_string(),
            e.note.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
