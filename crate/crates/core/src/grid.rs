//! Trading-session geometry: elementary intervals and aggregation bins.

use chrono::{NaiveTime, Timelike};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("session close {close} is not after open {open}")]
    EmptySession { open: NaiveTime, close: NaiveTime },
    #[error("interval lengths must be positive")]
    ZeroInterval,
    #[error("{what} ({len} min) is not a multiple of {unit} min")]
    NotMultiple { what: &'static str, len: u32, unit: u32 },
}

/// Session layout. Times are minutes of the exchange's local clock.
///
/// With the defaults (09:30-16:00, 5-minute elementary returns, 30-minute
/// bins) there are 78 elementary returns per day, 6 per bin and 13 bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SessionGrid {
    open: NaiveTime,
    close: NaiveTime,
    elementary_minutes: u32,
    bin_minutes: u32,
}

impl Default for SessionGrid {
    fn default() -> Self {
        Self {
            open: NaiveTime::from_hms_opt(9, 30, 0).unwrap(),
            close: NaiveTime::from_hms_opt(16, 0, 0).unwrap(),
            elementary_minutes: 5,
            bin_minutes: 30,
        }
    }
}

fn minute_of_day(t: NaiveTime) -> u32 {
    t.num_seconds_from_midnight() / 60
}

impl SessionGrid {
    pub fn new(
        open: NaiveTime,
        close: NaiveTime,
        elementary_minutes: u32,
        bin_minutes: u32,
    ) -> Result<Self, GridError> {
        if close <= open {
            return Err(GridError::EmptySession { open, close });
        }
        if elementary_minutes == 0 || bin_minutes == 0 {
            return Err(GridError::ZeroInterval);
        }
        let session = minute_of_day(close) - minute_of_day(open);
        if !bin_minutes.is_multiple_of(elementary_minutes) {
            return Err(GridError::NotMultiple {
                what: "bin length",
                len: bin_minutes,
                unit: elementary_minutes,
            });
        }
        if !session.is_multiple_of(bin_minutes) {
            return Err(GridError::NotMultiple {
                what: "session length",
                len: session,
                unit: bin_minutes,
            });
        }
        Ok(Self {
            open,
            close,
            elementary_minutes,
            bin_minutes,
        })
    }

    pub fn open(&self) -> NaiveTime {
        self.open
    }

    pub fn close(&self) -> NaiveTime {
        self.close
    }

    pub fn elementary_minutes(&self) -> u32 {
        self.elementary_minutes
    }

    pub fn bin_minutes(&self) -> u32 {
        self.bin_minutes
    }

    fn session_minutes(&self) -> u32 {
        minute_of_day(self.close) - minute_of_day(self.open)
    }

    /// Elementary returns per day (N*).
    pub fn elementary_per_day(&self) -> usize {
        (self.session_minutes() / self.elementary_minutes) as usize
    }

    /// Elementary returns per aggregation bin (M).
    pub fn per_bin(&self) -> usize {
        (self.bin_minutes / self.elementary_minutes) as usize
    }

    /// Aggregation bins per day (N).
    pub fn bins_per_day(&self) -> usize {
        (self.session_minutes() / self.bin_minutes) as usize
    }

    /// Start time of the zero-based bin `i`.
    pub fn bin_start(&self, i: usize) -> NaiveTime {
        self.open + chrono::Duration::minutes(i as i64 * self.bin_minutes as i64)
    }

    /// Position of `t` on the elementary price grid (0 = open, N* = close),
    /// or `None` when `t` is off-grid or outside the session.
    pub fn elementary_slot(&self, t: NaiveTime) -> Option<usize> {
        if t < self.open || t > self.close || t.second() != 0 || t.nanosecond() != 0 {
            return None;
        }
        let offset = minute_of_day(t) - minute_of_day(self.open);
        offset.is_multiple_of(self.elementary_minutes).then(|| (offset / self.elementary_minutes) as usize)
    }

    /// Zero-based index of the first bin whose start is at or after `t`.
    ///
    /// `None` when `t` precedes the open, or when no bin starts at or after
    /// `t` (announcement inside the last bin or after the close).
    pub fn first_bin_at_or_after(&self, t: NaiveTime) -> Option<usize> {
        if t < self.open || t >= self.close {
            return None;
        }
        let secs = (t - self.open).num_seconds() as u64;
        let width = self.bin_minutes as u64 * 60;
        let idx = secs.div_ceil(width) as usize;
        (idx < self.bins_per_day()).then_some(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hm(h: u32, m: u32) -> NaiveTime {
        NaiveTime::from_hms_opt(h, m, 0).unwrap()
    }

    #[test]
    fn default_geometry() {
        let g = SessionGrid::default();
        assert_eq!(g.elementary_per_day(), 78);
        assert_eq!(g.per_bin(), 6);
        assert_eq!(g.bins_per_day(), 13);
        assert_eq!(g.bin_start(12), hm(15, 30));
    }

    #[test]
    fn announcement_bins() {
        let g = SessionGrid::default();
        // 14:00 is the start of the tenth bin (one-based).
        assert_eq!(g.first_bin_at_or_after(hm(14, 0)), Some(9));
        assert_eq!(g.first_bin_at_or_after(hm(9, 30)), Some(0));
        assert_eq!(g.first_bin_at_or_after(hm(14, 1)), Some(10));
        assert_eq!(g.first_bin_at_or_after(hm(15, 30)), Some(12));
        assert_eq!(g.first_bin_at_or_after(hm(15, 59)), None);
        assert_eq!(g.first_bin_at_or_after(hm(8, 30)), None);
        assert_eq!(g.first_bin_at_or_after(hm(16, 0)), None);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(SessionGrid::new(hm(10, 0), hm(9, 0), 5, 30).is_err());
        assert!(SessionGrid::new(hm(9, 30), hm(16, 0), 7, 30).is_err());
        assert!(SessionGrid::new(hm(9, 30), hm(16, 0), 5, 25).is_err());
        assert!(SessionGrid::new(hm(9, 30), hm(16, 0), 0, 30).is_err());
    }

    #[test]
    fn elementary_slots() {
        let g = SessionGrid::default();
        assert_eq!(g.elementary_slot(hm(9, 30)), Some(0));
        assert_eq!(g.elementary_slot(hm(16, 0)), Some(78));
        assert_eq!(g.elementary_slot(hm(9, 32)), None);
        assert_eq!(g.elementary_slot(hm(9, 0)), None);
    }
}
