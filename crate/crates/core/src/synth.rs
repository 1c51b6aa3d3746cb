//! Synthetic elementary price paths with known jumps, time-of-day shape
//! and announcement bursts.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::SessionGrid;
use crate::measures::MeasurePanel;
use crate::panel::{PanelError, PricePanel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("sigma must be positive and finite")]
    Sigma,
    #[error("need at least one day")]
    NoDays,
    #[error("coordinate (day {day}, bin {bin}) is outside the grid")]
    Coordinate { day: usize, bin: usize },
    #[error("volatility path has {got} entries, expected {expected} positive values")]
    VolatilityPath { got: usize, expected: usize },
    #[error("diurnal shape has {got} entries, expected {expected} positive values")]
    Diurnal { got: usize, expected: usize },
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub ticker: String,
    pub days: usize,
    pub first_day: NaiveDate,
    /// Diffusion volatility per elementary interval.
    pub sigma: f64,
    /// Standard deviation of the overnight log-price gap.
    pub overnight_sigma: f64,
    /// Zero-based (day, bin) coordinates receiving a jump.
    pub jump_times: Vec<(usize, usize)>,
    /// Jump magnitude in units of σ√M.
    pub jump_size: f64,
    /// Per-bin volatility multipliers.
    pub diurnal: Option<Vec<f64>>,
    /// Day-major per-bin volatility multipliers on top of the diurnal shape.
    pub volatility_path: Option<Vec<f64>>,
    /// Jumps with individual magnitudes (day, bin, size in units of σ√M).
    pub sized_jumps: Vec<(usize, usize, f64)>,
    /// Bins whose first elementary return carries an announcement burst.
    pub announcement_bins: Vec<(usize, usize)>,
    /// Burst magnitude in units of σ√M.
    pub burst_size: f64,
    pub initial_price: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            ticker: "SYN".into(),
            days: 250,
            first_day: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
            sigma: 1e-3,
            overnight_sigma: 0.0,
            jump_times: Vec::new(),
            jump_size: 10.0,
            diurnal: None,
            volatility_path: None,
            sized_jumps: Vec::new(),
            announcement_bins: Vec::new(),
            burst_size: 5.0,
            initial_price: 100.0,
            seed: 0,
        }
    }
}

/// Generated panel and the bins that truly contain a jump or burst.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub panel: PricePanel,
    /// Day-major jump mask over bins.
    pub jump_mask: Vec<bool>,
}

/// Consecutive weekdays starting at `first` (moved forward off a weekend).
pub fn business_days(first: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = first;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Elementary returns σ·sᵢ·z with z standard normal, plus an additive
/// return of ±size·σ√M at a random position of each jump bin and at the
/// first position of each burst bin. Sized jumps add to the planted jump
/// of their bin. Deterministic per seed.
pub fn gen_paths(spec: &SynthSpec, grid: &SessionGrid) -> Result<SynthOutput, SynthError> {
    if !(spec.sigma > 0.0 && spec.sigma.is_finite()) {
        return Err(SynthError::Sigma);
    }
    if spec.days == 0 {
        return Err(SynthError::NoDays);
    }
    let n = grid.bins_per_day();
    let m = grid.per_bin();
    if let Some(shape) = &spec.diurnal {
        if shape.len() != n || shape.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(SynthError::Diurnal {
                got: shape.len(),
                expected: n,
            });
        }
    }
    if let Some(path) = &spec.volatility_path {
        if path.len() != spec.days * n || path.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(SynthError::VolatilityPath {
                got: path.len(),
                expected: spec.days * n,
            });
        }
    }
    let mut jump_at = vec![0.0; spec.days * n];
    let mut burst_at = vec![0.0; spec.days * n];
    let unit = spec.sigma * libm::sqrt(m as f64);
    for (coords, size, target) in [
        (&spec.jump_times, spec.jump_size, &mut jump_at),
        (&spec.announcement_bins, spec.burst_size, &mut burst_at),
    ] {
        for &(day, bin) in coords {
            if day >= spec.days || bin >= n {
                return Err(SynthError::Coordinate { day, bin });
            }
            target[day * n + bin] = size * unit;
        }
    }
    for &(day, bin, size) in &spec.sized_jumps {
        if day >= spec.days || bin >= n {
            return Err(SynthError::Coordinate { day, bin });
        }
        jump_at[day * n + bin] += size * unit;
    }
    let jump_mask = jump_at
        .iter()
        .zip(&burst_at)
        .map(|(j, b)| *j != 0.0 || *b != 0.0)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut level = libm::log(spec.initial_price);
    let mut prices = Vec::with_capacity(spec.days);
    for day in 0..spec.days {
        if day > 0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            level += spec.overnight_sigma * z;
        }
        let mut row = Vec::with_capacity(n * m + 1);
        row.push(level);
        for bin in 0..n {
            let k = day * n + bin;
            let scale = spec.diurnal.as_ref().map_or(1.0, |s| s[bin])
                * spec.volatility_path.as_ref().map_or(1.0, |p| p[k]);
            let jump_pos = if jump_at[k] != 0.0 {
                Some(rng.random_range(0..m))
            } else {
                None
            };
            for j in 0..m {
                let z: f64 = StandardNormal.sample(&mut rng);
                let mut r = spec.sigma * scale * z;
                if Some(j) == jump_pos {
                    r += signed(&mut rng, jump_at[k]);
                }
                if j == 0 && burst_at[k] != 0.0 {
                    r += signed(&mut rng, burst_at[k]);
                }
                level += r;
                row.push(level);
            }
        }
        prices.push(row);
    }
    let panel = PricePanel::new(
        spec.ticker.clone(),
        business_days(spec.first_day, spec.days),
        prices,
        grid.elementary_minutes(),
    )?;
    Ok(SynthOutput { panel, jump_mask })
}

fn signed(rng: &mut ChaCha8Rng, size: f64) -> f64 {
    if rng.random_bool(0.5) {
        size
    } else {
        -size
    }
}

/// Recall and precision of the significant-jump flags against the mask.
/// Either is NaN when its denominator is zero.
pub fn jump_detection_rates(mask: &[bool], panel: &MeasurePanel) -> (f64, f64) {
    let mut hit = 0usize;
    let mut truth = 0usize;
    let mut flagged = 0usize;
    for (m, b) in mask.iter().zip(&panel.bins) {
        let f = b.sj > 0.0;
        truth += *m as usize;
        flagged += f as usize;
        hit += (*m && f) as usize;
    }
    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    (ratio(hit, truth), ratio(hit, flagged))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let grid = SessionGrid::default();
        let spec = SynthSpec {
            days: 5,
            jump_times: vec![(1, 3)],
            announcement_bins: vec![(2, 9)],
            overnight_sigma: 0.01,
            seed: 4,
            ..Default::default()
        };
        let a = gen_paths(&spec, &grid).unwrap();
        let b = gen_paths(&spec, &grid).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.panel.log_prices().len(), 5);
        assert_eq!(a.panel.log_prices()[0].len(), 79);
        assert_eq!(a.jump_mask.iter().filter(|&&m| m).count(), 2);
        assert!(a.jump_mask[13 + 3] && a.jump_mask[2 * 13 + 9]);
        // Weekends are skipped.
        assert!(a.panel.days().iter().all(|d| d.weekday().number_from_monday() <= 5));
    }

    #[test]
    fn invalid_specs() {
        let grid = SessionGrid::default();
        let bad = |s: SynthSpec| gen_paths(&s, &grid).is_err();
        assert!(bad(SynthSpec { sigma: 0.0, ..Default::default() }));
        assert!(bad(SynthSpec { days: 0, ..Default::default() }));
        assert!(bad(SynthSpec { days: 2, jump_times: vec![(2, 0)], ..Default::default() }));
        assert!(bad(SynthSpec { jump_times: vec![(0, 13)], ..Default::default() }));
        assert!(bad(SynthSpec { diurnal: Some(vec![1.0; 12]), ..Default::default() }));
        assert!(bad(SynthSpec { days: 2, volatility_path: Some(vec![1.0; 13]), ..Default::default() }));
        assert!(bad(SynthSpec { days: 2, sized_jumps: vec![(0, 0, 1.0), (5, 0, 1.0)], ..Default::default() }));
    }

    #[test]
    fn business_day_calendar() {
        let sat = NaiveDate::from_ymd_opt(2021, 6, 19).unwrap();
        let days = business_days(sat, 3);
        assert_eq!(days[0], NaiveDate::from_ymd_opt(2021, 6, 21).unwrap());
        assert_eq!(days[2], NaiveDate::from_ymd_opt(2021, 6, 23).unwrap());
    }
}
