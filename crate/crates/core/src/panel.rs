//! Price and return panels and the announcement calendar.

use alloc::string::String;
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate, NaiveTime, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::SessionGrid;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PanelError {
    #[error("panel has no days")]
    Empty,
    #[error("days not strictly increasing at row {row}")]
    UnorderedDays { row: usize },
    #[error("row {row} has {found} prices, expected {expected}")]
    RowLength { row: usize, found: usize, expected: usize },
    #[error("non-finite log price at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{days} date labels for {rows} price rows")]
    DayCount { days: usize, rows: usize },
}

/// Log prices on the elementary grid, one row per trading day.
///
/// Column 0 is the opening price and column N* the close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePanel {
    ticker: String,
    days: Vec<NaiveDate>,
    prices: Vec<Vec<f64>>,
    elementary_minutes: u32,
}

impl PricePanel {
    /// Builds a panel from log prices, checking the row invariants.
    pub fn new(
        ticker: impl Into<String>,
        days: Vec<NaiveDate>,
        log_prices: Vec<Vec<f64>>,
        elementary_minutes: u32,
    ) -> Result<Self, PanelError> {
        if days.is_empty() {
            return Err(PanelError::Empty);
        }
        if days.len() != log_prices.len() {
            return Err(PanelError::DayCount {
                days: days.len(),
                rows: log_prices.len(),
            });
        }
        if let Some(row) = days.windows(2).position(|w| w[1] <= w[0]) {
            return Err(PanelError::UnorderedDays { row: row + 1 });
        }
        let expected = log_prices[0].len();
        for (row, prices) in log_prices.iter().enumerate() {
            if prices.len() != expected || expected < 2 {
                return Err(PanelError::RowLength {
                    row,
                    found: prices.len(),
                    expected,
                });
            }
            if let Some(col) = prices.iter().position(|p| !p.is_finite()) {
                return Err(PanelError::NonFinite { row, col });
            }
        }
        Ok(Self {
            ticker: ticker.into(),
            days,
            prices: log_prices,
            elementary_minutes,
        })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn log_prices(&self) -> &[Vec<f64>] {
        &self.prices
    }

    pub fn elementary_minutes(&self) -> u32 {
        self.elementary_minutes
    }

    /// Elementary returns per day (N*).
    pub fn elementary_per_day(&self) -> usize {
        self.prices[0].len() - 1
    }
}

/// Intraday elementary returns and overnight returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub days: Vec<NaiveDate>,
    /// `intraday[t][j-1] = p[t][j] - p[t][j-1]`.
    pub intraday: Vec<Vec<f64>>,
    /// Open of day t minus close of day t-1; zero on the first day.
    pub overnight: Vec<f64>,
}

pub fn compute_returns(panel: &PricePanel) -> ReturnPanel {
    let intraday = panel
        .prices
        .iter()
        .map(|row| row.windows(2).map(|w| w[1] - w[0]).collect())
        .collect();
    let mut overnight = Vec::with_capacity(panel.prices.len());
    overnight.push(0.0);
    for w in panel.prices.windows(2) {
        overnight.push(w[1][0] - w[0][w[0].len() - 1]);
    }
    ReturnPanel {
        days: panel.days.clone(),
        intraday,
        overnight,
    }
}

/// A scheduled policy announcement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnouncementEvent {
    pub date: NaiveDate,
    pub time: NaiveTime,
    pub forward_guidance: bool,
    pub note: String,
}

/// Why an announcement could not be placed on the bin grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Error)]
pub enum Unmatched {
    #[error("announcement falls on a weekend")]
    Weekend,
    #[error("no trading on the announcement date")]
    NoTradingDay,
    #[error("announcement time is outside the session")]
    OutsideSession,
    #[error("no bin starts at or after the announcement time")]
    AfterLastBin,
}

/// Coordinates of the first bin at or after an announcement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BinCoordinate {
    pub day: usize,
    /// Zero-based bin index.
    pub bin: usize,
}

/// Maps an announcement to (day index, first bin starting at or after its time).
///
/// A time exactly on a bin boundary selects that bin.
pub fn map_announcement_to_bin(
    event: &AnnouncementEvent,
    days: &[NaiveDate],
    grid: &SessionGrid,
) -> Result<BinCoordinate, Unmatched> {
    let day = match days.binary_search(&event.date) {
        Ok(day) => day,
        Err(_) if matches!(event.date.weekday(), Weekday::Sat | Weekday::Sun) => {
            return Err(Unmatched::Weekend)
        }
        Err(_) => return Err(Unmatched::NoTradingDay),
    };
    if event.time < grid.open() || event.time >= grid.close() {
        return Err(Unmatched::OutsideSession);
    }
    let bin = grid
        .first_bin_at_or_after(event.time)
        .ok_or(Unmatched::AfterLastBin)?;
    Ok(BinCoordinate { day, bin })
}
