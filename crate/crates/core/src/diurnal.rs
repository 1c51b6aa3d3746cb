//! Time-of-day adjustment with a stable seasonal filter.
//!
//! The profile is estimated on one series (bipower variation by default)
//! and applied multiplicatively to both RV and BV, so per-bin RV/BV ratios
//! and the jump flags are unchanged by the adjustment.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{BinMeasures, MeasurePanel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiurnalError {
    #[error("need at least {needed} days, got {got}")]
    TooFewDays { needed: usize, got: usize },
    #[error("moving-average trend is zero at day {day}, bin {bin}")]
    ZeroTrend { day: usize, bin: usize },
    #[error("seasonal index of bin {bin} is not positive")]
    NonPositiveIndex { bin: usize },
    #[error("profile has {profile} factors but panel has {panel} bins per day")]
    LengthMismatch { profile: usize, panel: usize },
}

/// Which realized series a profile or diagnostic is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Rv,
    #[default]
    Bv,
}

impl MeasureKind {
    fn get(self, b: &BinMeasures) -> f64 {
        match self {
            MeasureKind::Rv => b.rv,
            MeasureKind::Bv => b.bv,
        }
    }
}

/// Per-bin multiplicative scale factors π̂ᵢ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalProfile {
    pub factors: Vec<f64>,
    pub source: MeasureKind,
    /// Mean of the raw seasonal indices before they were scaled to mean one.
    pub normalization: f64,
}

impl SeasonalProfile {
    pub fn identity(bins: usize) -> Self {
        Self {
            factors: vec![1.0; bins],
            source: MeasureKind::Bv,
            normalization: 1.0,
        }
    }

    /// Seasonal indices sᵢ = 1/π̂ᵢ (mean one).
    pub fn indices(&self) -> Vec<f64> {
        self.factors.iter().map(|f| 1.0 / f).collect()
    }
}

/// Centered moving average of span `span` over `x`; the window shrinks to
/// the available observations at both ends. Even spans use the 2×span
/// filter with half weights on the two outermost terms.
fn centered_moving_average(x: &[f64], span: usize) -> Vec<f64> {
    let n = x.len();
    let half = span / 2;
    let even = span.is_multiple_of(2);
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(n - 1);
            let mut num = 0.0;
            let mut den = 0.0;
            for (j, v) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let w = if even && (j + half == k || j == k + half) {
                    0.5
                } else {
                    1.0
                };
                num += w * v;
                den += w;
            }
            num / den
        })
        .collect()
}

/// Estimates π̂ᵢ with a stable seasonal filter: detrend by a centered
/// moving average of one day's length, average the detrended ratios per
/// bin, scale the indices to mean one, and invert.
pub fn estimate_profile(
    panel: &MeasurePanel,
    source: MeasureKind,
) -> Result<SeasonalProfile, DiurnalError> {
    let days = panel.n_days();
    if days < 2 {
        return Err(DiurnalError::TooFewDays { needed: 2, got: days });
    }
    let bins = panel.bins_per_day;
    let series: Vec<f64> = panel.bins.iter().map(|b| source.get(b)).collect();
    let trend = centered_moving_average(&series, bins);

    let mut index = vec![0.0; bins];
    for (k, (x, tr)) in series.iter().zip(&trend).enumerate() {
        if *tr <= 0.0 {
            return Err(DiurnalError::ZeroTrend {
                day: k / bins,
                bin: k % bins,
            });
        }
        index[k % bins] += x / tr;
    }
    for s in &mut index {
        *s /= days as f64;
    }
    let normalization = index.iter().sum::<f64>() / bins as f64;
    let mut factors = Vec::with_capacity(bins);
    for (bin, s) in index.iter().enumerate() {
        let s = s / normalization;
        if !(s > 0.0) || !s.is_finite() {
            return Err(DiurnalError::NonPositiveIndex { bin });
        }
        factors.push(1.0 / s);
    }
    Ok(SeasonalProfile {
        factors,
        source,
        normalization,
    })
}

/// Scales RV and BV of each bin by π̂ᵢ and rebuilds C and SJ from the
/// existing jump flags. The jump statistic is scale free and kept as is.
pub fn apply_profile(
    panel: &MeasurePanel,
    profile: &SeasonalProfile,
) -> Result<MeasurePanel, DiurnalError> {
    if profile.factors.len() != panel.bins_per_day {
        return Err(DiurnalError::LengthMismatch {
            profile: profile.factors.len(),
            panel: panel.bins_per_day,
        });
    }
    let bins = panel
        .bins
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let f = profile.factors[k % panel.bins_per_day];
            let rv = b.rv * f;
            let bv = b.bv * f;
            let (c, sj) = if b.is_jump() && rv > bv {
                let sj = rv - bv;
                (rv - sj, sj)
            } else {
                (rv, 0.0)
            };
            BinMeasures {
                rv,
                bv,
                tq: b.tq * f * f * f * f,
                j_stat: b.j_stat,
                c,
                sj,
                neg: b.neg,
            }
        })
        .collect();
    Ok(MeasurePanel {
        days: panel.days.clone(),
        bins_per_day: panel.bins_per_day,
        bins,
    })
}

/// Bin means and adjacent-bin correlations ρ_{h+1,h} computed across days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinDiagnostics {
    pub series: MeasureKind,
    pub means: Vec<f64>,
    /// `adjacent_corr[h]` correlates bin h+1 with bin h (zero-based), NaN
    /// when either bin has no variation.
    pub adjacent_corr: Vec<f64>,
}

pub const MIN_DIAGNOSTIC_DAYS: usize = 30;

pub fn bin_diagnostics(
    panel: &MeasurePanel,
    series: MeasureKind,
) -> Result<BinDiagnostics, DiurnalError> {
    let days = panel.n_days();
    if days < MIN_DIAGNOSTIC_DAYS {
        return Err(DiurnalError::TooFewDays {
            needed: MIN_DIAGNOSTIC_DAYS,
            got: days,
        });
    }
    let bins = panel.bins_per_day;
    let column = |i: usize| -> Vec<f64> { (0..days).map(|t| series.get(panel.at(t, i))).collect() };
    let columns: Vec<Vec<f64>> = (0..bins).map(column).collect();
    let means: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().sum::<f64>() / days as f64)
        .collect();
    let adjacent_corr = (0..bins.saturating_sub(1))
        .map(|h| correlation(&columns[h], &columns[h + 1], means[h], means[h + 1]))
        .collect();
    Ok(BinDiagnostics {
        series,
        means,
        adjacent_corr,
    })
}

fn correlation(a: &[f64], b: &[f64], ma: f64, mb: f64) -> f64 {
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / libm::sqrt(saa * sbb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;

    fn panel_from(values: &[Vec<f64>]) -> MeasurePanel {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let days = (0..values.len())
            .map(|k| start + chrono::Duration::days(k as i64))
            .collect();
        let bins = values
            .iter()
            .flatten()
            .map(|&v| BinMeasures {
                rv: v,
                bv: v,
                c: v,
                ..Default::default()
            })
            .collect();
        MeasurePanel {
            days,
            bins_per_day: values[0].len(),
            bins,
        }
    }

    #[test]
    fn moving_average_shrinks_at_edges() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ma = centered_moving_average(&x, 3);
        assert_eq!(ma, vec![1.5, 2.0, 3.0, 4.0, 4.5]);
        // Even span: weights (0.5, 1, 0.5) around each point.
        let ma = centered_moving_average(&x, 2);
        assert_eq!(ma[2], 3.0);
        assert_relative_eq!(ma[0], (1.0 + 0.5 * 2.0) / 1.5);
    }

    #[test]
    fn constant_panel_has_unit_profile() {
        let panel = panel_from(&vec![vec![2.0; 13]; 5]);
        let profile = estimate_profile(&panel, MeasureKind::Bv).unwrap();
        for f in &profile.factors {
            assert_relative_eq!(*f, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn identity_profile_is_identity() {
        let values: Vec<Vec<f64>> = (0..4)
            .map(|t| (0..13).map(|i| 1.0 + (t * 13 + i) as f64 * 0.1).collect())
            .collect();
        let panel = panel_from(&values);
        let adjusted = apply_profile(&panel, &SeasonalProfile::identity(13)).unwrap();
        assert_eq!(adjusted, panel);
    }

    #[test]
    fn errors() {
        let panel = panel_from(&[vec![1.0; 13]]);
        assert!(matches!(
            estimate_profile(&panel, MeasureKind::Bv),
            Err(DiurnalError::TooFewDays { .. })
        ));
        let panel = panel_from(&vec![vec![0.0; 13]; 3]);
        assert!(matches!(
            estimate_profile(&panel, MeasureKind::Bv),
            Err(DiurnalError::ZeroTrend { day: 0, bin: 0 })
        ));
        let panel = panel_from(&vec![vec![1.0; 13]; 3]);
        assert!(matches!(
            apply_profile(&panel, &SeasonalProfile::identity(12)),
            Err(DiurnalError::LengthMismatch { .. })
        ));
        assert!(bin_diagnostics(&panel, MeasureKind::Rv).is_err());
    }

    #[test]
    fn duplicated_columns_have_unit_correlation() {
        let values: Vec<Vec<f64>> = (0..40)
            .map(|t| {
                let v = 1.0 + ((t * 7919) % 17) as f64;
                vec![v; 13]
            })
            .collect();
        let d = bin_diagnostics(&panel_from(&values), MeasureKind::Rv).unwrap();
        assert_eq!(d.means.len(), 13);
        assert_eq!(d.adjacent_corr.len(), 12);
        for r in &d.adjacent_corr {
            assert_relative_eq!(*r, 1.0, epsilon = 1e-12);
        }
    }
}
