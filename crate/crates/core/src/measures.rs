//! Realized measures per aggregation bin and the significant-jump split.
//!
//! All stored measures live on the volatility scale: `rv` is the square root
//! of the realized variance and `bv` the square root of the bipower sum, so
//! that `c + sj == rv` holds on one scale.

use alloc::vec::Vec;
use core::f64::consts::PI;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::ReturnPanel;
use crate::special::normal_quantile;

/// Mean absolute value of a standard normal variate, √(2/π).
pub const XI: f64 = 0.797_884_560_802_865_4;

/// Default quantile level of the jump test.
pub const DEFAULT_JUMP_LEVEL: f64 = 0.55;

/// E|Z|^{4/3} for standard normal Z: 2^{2/3} Γ(7/6) / Γ(1/2).
pub fn eta_4_3() -> f64 {
    libm::pow(2.0, 2.0 / 3.0) * libm::tgamma(7.0 / 6.0) / libm::sqrt(PI)
}

/// ξ⁻⁴ + 2ξ⁻² − 5 = π²/4 + π − 5, the asymptotic variance constant of the
/// ratio jump statistic.
pub fn jump_variance_constant() -> f64 {
    let inv2 = 1.0 / (XI * XI);
    inv2 * inv2 + 2.0 * inv2 - 5.0
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("need at least {needed} returns per bin, got {got}")]
    TooFewReturns { needed: usize, got: usize },
    #[error("quantile level {0} outside (0, 1)")]
    Level(f64),
    #[error("day {day}: {len} returns is not a multiple of bin size {per_bin}")]
    Ragged { day: usize, len: usize, per_bin: usize },
    #[error("non-finite return at day {day}, elementary index {index}")]
    NonFinite { day: usize, index: usize },
}

/// √(Σ r²).
pub fn realized_volatility(returns: &[f64]) -> f64 {
    libm::sqrt(returns.iter().map(|r| r * r).sum::<f64>())
}

/// ξ⁻² Σ_{j≥2} |r_j||r_{j-1}|, on the variance scale.
pub fn bipower_sum(returns: &[f64]) -> Result<f64, MeasureError> {
    if returns.len() < 2 {
        return Err(MeasureError::TooFewReturns {
            needed: 2,
            got: returns.len(),
        });
    }
    let s: f64 = returns.windows(2).map(|w| w[0].abs() * w[1].abs()).sum();
    Ok(s / (XI * XI))
}

/// Bipower variation on the volatility scale (square root of [`bipower_sum`]).
pub fn bipower_variation(returns: &[f64]) -> Result<f64, MeasureError> {
    bipower_sum(returns).map(libm::sqrt)
}

/// M⁻¹ η₄/₃⁻³ Σ_{j≥3} |r_j|^{4/3} |r_{j-1}|^{4/3} |r_{j-2}|^{4/3}.
pub fn tripower_quarticity(returns: &[f64]) -> Result<f64, MeasureError> {
    let m = returns.len();
    if m < 3 {
        return Err(MeasureError::TooFewReturns { needed: 3, got: m });
    }
    let p: Vec<f64> = returns
        .iter()
        .map(|r| libm::pow(r.abs(), 4.0 / 3.0))
        .collect();
    let s: f64 = p.windows(3).map(|w| w[0] * w[1] * w[2]).sum();
    let eta = eta_4_3();
    Ok(s / (m as f64 * eta * eta * eta))
}

/// Ratio jump statistic.
///
/// Resolved form:
///
/// ```text
/// J = √M · (RV − BV)/RV / √( (ξ⁻⁴ + 2ξ⁻² − 5) · max(1, IQ / BV²) )
/// ```
///
/// with `rv` the realized variance, `bv` a bipower estimate of integrated
/// variance and `iq` a tripower estimate of integrated quarticity, all on the
/// same (variance) scale. The statistic is scale free and asymptotically
/// standard normal without jumps. `rv == 0` gives 0; `bv == 0 < rv` gives +∞.
pub fn jump_statistic(rv: f64, bv: f64, iq: f64, m: usize) -> f64 {
    if rv <= 0.0 {
        return 0.0;
    }
    if bv <= 0.0 {
        return f64::INFINITY;
    }
    let adjust = (iq / (bv * bv)).max(1.0);
    libm::sqrt(m as f64) * ((rv - bv) / rv) / libm::sqrt(jump_variance_constant() * adjust)
}

/// Splits `rv` into a continuous part and a significant jump.
///
/// Above the threshold the jump is `rv − bv` and the continuous part the
/// remainder, which equals `bv` up to rounding and keeps `c + sj == rv`
/// exact. A flagged bin with `bv ≥ rv` carries no jump.
pub fn decompose(rv: f64, bv: f64, j_stat: f64, threshold: f64) -> (f64, f64) {
    if j_stat > threshold && rv > bv {
        let sj = rv - bv;
        (rv - sj, sj)
    } else {
        (rv, 0.0)
    }
}

/// Standard normal quantile Φ_q used as the jump threshold.
pub fn jump_threshold(level: f64) -> Result<f64, MeasureError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MeasureError::Level(level));
    }
    Ok(normal_quantile(level))
}

/// Realized measures of one bin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BinMeasures {
    pub rv: f64,
    pub bv: f64,
    pub tq: f64,
    pub j_stat: f64,
    pub c: f64,
    pub sj: f64,
    /// Sum of the bin's elementary returns is negative.
    pub neg: bool,
}

impl BinMeasures {
    pub fn is_jump(&self) -> bool {
        self.sj > 0.0
    }
}

/// Measures for one bin's elementary returns.
///
/// The jump statistic uses the finite-sample normalized inputs
/// `M/(M−1) · bipower` and `M³/(M−2) · TQ`, which estimate integrated
/// variance and quarticity without the small-M bias of the raw sums.
pub fn bin_measures(returns: &[f64], threshold: f64) -> Result<BinMeasures, MeasureError> {
    let m = returns.len();
    if m < 3 {
        return Err(MeasureError::TooFewReturns { needed: 3, got: m });
    }
    let mf = m as f64;
    let rv = realized_volatility(returns);
    let bsum = bipower_sum(returns)?;
    let tq = tripower_quarticity(returns)?;
    let j_stat = jump_statistic(
        rv * rv,
        bsum * mf / (mf - 1.0),
        tq * mf * mf * mf / (mf - 2.0),
        m,
    );
    let bv = libm::sqrt(bsum);
    let (c, sj) = decompose(rv, bv, j_stat, threshold);
    Ok(BinMeasures {
        rv,
        bv,
        tq,
        j_stat,
        c,
        sj,
        neg: returns.iter().sum::<f64>() < 0.0,
    })
}

/// Day-major panel of bin measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurePanel {
    pub days: Vec<NaiveDate>,
    pub bins_per_day: usize,
    pub bins: Vec<BinMeasures>,
}

impl MeasurePanel {
    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn at(&self, day: usize, bin: usize) -> &BinMeasures {
        &self.bins[day * self.bins_per_day + bin]
    }

    pub fn day(&self, day: usize) -> &[BinMeasures] {
        &self.bins[day * self.bins_per_day..(day + 1) * self.bins_per_day]
    }

    pub fn jump_count(&self) -> usize {
        self.bins.iter().filter(|b| b.is_jump()).count()
    }

    /// Recomputes the continuous/jump split for a new threshold, leaving the
    /// realized measures untouched.
    pub fn with_threshold(&self, threshold: f64) -> Self {
        let bins = self
            .bins
            .iter()
            .map(|b| {
                let (c, sj) = decompose(b.rv, b.bv, b.j_stat, threshold);
                BinMeasures { c, sj, ..*b }
            })
            .collect();
        Self {
            days: self.days.clone(),
            bins_per_day: self.bins_per_day,
            bins,
        }
    }
}

/// Aggregates every day's elementary returns into bins of `per_bin` returns.
pub fn build_bin_measures(
    returns: &ReturnPanel,
    per_bin: usize,
    threshold: f64,
) -> Result<MeasurePanel, MeasureError> {
    if per_bin < 3 {
        return Err(MeasureError::TooFewReturns {
            needed: 3,
            got: per_bin,
        });
    }
    let mut bins = Vec::new();
    let mut bins_per_day = 0;
    for (day, row) in returns.intraday.iter().enumerate() {
        if row.is_empty() || row.len() % per_bin != 0 {
            return Err(MeasureError::Ragged {
                day,
                len: row.len(),
                per_bin,
            });
        }
        if let Some(index) = row.iter().position(|r| !r.is_finite()) {
            return Err(MeasureError::NonFinite { day, index });
        }
        bins_per_day = row.len() / per_bin;
        for chunk in row.chunks(per_bin) {
            bins.push(bin_measures(chunk, threshold)?);
        }
    }
    Ok(MeasurePanel {
        days: returns.days.clone(),
        bins_per_day,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn constants() {
        assert_relative_eq!(XI, libm::sqrt(2.0 / PI), epsilon = 1e-16);
        // Γ(7/6) = 0.92771933363...
        let eta = 1.587_401_051_968_199_4 * 0.927_719_333_630_039_4 / 1.772_453_850_905_516;
        assert_relative_eq!(eta_4_3(), eta, epsilon = 1e-14);
        // E|Z|^{4/3} by Simpson quadrature of 2∫₀^∞ z^{4/3} φ(z) dz.
        let n = 200_000;
        let h = 14.0 / n as f64;
        let f = |z: f64| libm::pow(z, 4.0 / 3.0) * libm::exp(-z * z / 2.0) / libm::sqrt(2.0 * PI);
        let mut acc = f(0.0) + f(14.0);
        for k in 1..n {
            acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert_relative_eq!(eta_4_3(), 2.0 * acc * h / 3.0, epsilon = 1e-9);
        assert_relative_eq!(jump_variance_constant(), PI * PI / 4.0 + PI - 5.0, epsilon = 1e-14);
    }

    #[test]
    fn realized_volatility_examples() {
        assert_eq!(realized_volatility(&[0.0; 6]), 0.0);
        assert_eq!(realized_volatility(&[3.0, 4.0]), 5.0);
        assert_relative_eq!(
            realized_volatility(&[0.1, -0.2, 0.2, 0.1, -0.1, 0.3]),
            libm::sqrt(0.20),
            epsilon = 1e-15
        );
    }

    #[test]
    fn bipower_examples() {
        assert_eq!(bipower_sum(&[0.0, 0.0, 5.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(bipower_sum(&[1.0, 1.0]).unwrap(), PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(
            bipower_variation(&[1.0, 1.0]).unwrap(),
            1.253_314_137_315_500_3,
            epsilon = 1e-15
        );
        assert!(bipower_sum(&[1.0]).is_err());
    }

    #[test]
    fn tripower_examples() {
        assert_eq!(tripower_quarticity(&[0.0, 2.0, 0.0, 3.0, 0.0]).unwrap(), 0.0);
        assert_eq!(tripower_quarticity(&[1.0, 1.0, 0.0, 0.0]).unwrap(), 0.0);
        let eta = eta_4_3();
        assert_relative_eq!(
            tripower_quarticity(&[1.0, 1.0, 1.0]).unwrap(),
            1.0 / (3.0 * eta * eta * eta),
            epsilon = 1e-15
        );
        let r = [0.3, -0.1, 0.4, 0.2, -0.5, 0.25];
        let scaled: Vec<f64> = r.iter().map(|x| 2.5 * x).collect();
        assert_relative_eq!(
            tripower_quarticity(&scaled).unwrap(),
            libm::pow(2.5, 4.0) * tripower_quarticity(&r).unwrap(),
            max_relative = 1e-13
        );
        assert!(tripower_quarticity(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn jump_statistic_edges() {
        assert_eq!(jump_statistic(2.0, 2.0, 1.0, 6), 0.0);
        assert_eq!(jump_statistic(0.0, 0.0, 0.0, 6), 0.0);
        assert_eq!(jump_statistic(1.0, 0.0, 0.0, 6), f64::INFINITY);
        // Without the max adjustment: √6 · 0.5 / √θ.
        let expected = libm::sqrt(6.0) * 0.5 / libm::sqrt(jump_variance_constant());
        assert_relative_eq!(jump_statistic(2.0, 1.0, 0.5, 6), expected, epsilon = 1e-15);
        // Adjustment kicks in when IQ > BV².
        assert_relative_eq!(
            jump_statistic(2.0, 1.0, 4.0, 6),
            expected / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn threshold_and_decomposition() {
        let phi = jump_threshold(0.55).unwrap();
        assert!((phi - 0.126).abs() < 5e-4);
        assert_eq!(decompose(5.0, 4.0, 0.0, phi), (5.0, 0.0));
        assert_eq!(decompose(5.0, 4.0, 0.2, phi), (4.0, 1.0));
        assert_eq!(decompose(5.0, 6.0, 0.9, phi), (5.0, 0.0));
        assert!(jump_threshold(0.0).is_err());
        assert!(jump_threshold(1.0).is_err());
    }

    #[test]
    fn zero_returns_give_zero_measures() {
        let returns = ReturnPanel {
            days: vec![NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()],
            intraday: vec![vec![0.0; 12]],
            overnight: vec![0.0],
        };
        let panel = build_bin_measures(&returns, 6, 0.126).unwrap();
        assert_eq!(panel.bins.len(), 2);
        for b in &panel.bins {
            assert_eq!((b.rv, b.bv, b.tq, b.j_stat, b.c, b.sj), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
            assert!(!b.neg);
        }
    }

    #[test]
    fn ragged_day_is_rejected() {
        let returns = ReturnPanel {
            days: vec![NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()],
            intraday: vec![vec![0.0; 10]],
            overnight: vec![0.0],
        };
        assert!(matches!(
            build_bin_measures(&returns, 6, 0.126),
            Err(MeasureError::Ragged { .. })
        ));
    }

    #[test]
    fn negative_bin_return_sets_indicator() {
        let m = bin_measures(&[0.1, -0.3, 0.05, 0.0, 0.0, 0.0], 0.126).unwrap();
        assert!(m.neg);
        let m = bin_measures(&[0.1, -0.05, 0.05, 0.0, 0.0, 0.0], 0.126).unwrap();
        assert!(!m.neg);
    }
}
