//! Run configuration read from TOML.
//!
//! Every key is optional. The session keys sit at the top level:
//!
//! ```toml
//! open = "09:30"
//! close = "16:00"
//! elementary_minutes = 5
//! bin_minutes = 30
//! max_missing_frac = 0.2
//! q = 0.55
//!
//! [estimate]
//! spec = "restricted"
//!
//! [simulate]
//! tickers = ["AAA", "BBB", "CCC"]
//! days = 500
//! ```

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use jumpvol_core::ajm::AjmParams;
use jumpvol_core::diurnal::MeasureKind;
use jumpvol_core::fit::{FitOptions, Spec};
use jumpvol_core::grid::SessionGrid;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("invalid time {0:?}, expected HH:MM")]
    Time(String),
    #[error(transparent)]
    Grid(#[from] jumpvol_core::grid::GridError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub open: String,
    pub close: String,
    pub elementary_minutes: u32,
    pub bin_minutes: u32,
    /// Days missing more than this share of elementary prices are dropped.
    pub max_missing_frac: f64,
    /// Quantile level of the jump threshold.
    pub q: f64,
    pub profile_source: MeasureKind,
    pub seed: u64,
    /// Price files; defaults to every CSV under `<out>/prices`.
    pub prices: Vec<PathBuf>,
    /// Announcement file; defaults to `<out>/announcements.csv`.
    pub announcements: Option<PathBuf>,
    pub estimate: EstimateConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            open: "09:30".into(),
            close: "16:00".into(),
            elementary_minutes: 5,
            bin_minutes: 30,
            max_missing_frac: 0.2,
            q: 0.55,
            profile_source: MeasureKind::Bv,
            seed: 0,
            prices: Vec::new(),
            announcements: None,
            estimate: EstimateConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// Spec whose filtered state is exported; both specs are always fitted.
    pub spec: Spec,
    pub starts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub jitter: f64,
    pub ljung_box_lags: Vec<usize>,
    /// Multiplier applied to the measures and overnight returns before
    /// fitting; 1e4 puts log-price volatilities in basis points.
    pub units: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        let f = FitOptions::default();
        Self {
            spec: Spec::Restricted,
            starts: f.starts,
            max_iter: f.max_iter,
            grad_tol: f.grad_tol,
            jitter: f.jitter,
            ljung_box_lags: f.ljung_box_lags,
            units: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub tickers: Vec<String>,
    pub days: usize,
    pub first_day: NaiveDate,
    /// Model driving each ticker's bin-level volatility.
    pub params: AjmParams,
    pub jump_intensity: f64,
    pub jump_scale: f64,
    /// Diffusion volatility per elementary return at the average level.
    pub sigma: f64,
    pub overnight_sigma: f64,
    /// Time-of-day volatility multipliers, one per bin.
    pub diurnal: Option<Vec<f64>>,
    pub announcements: usize,
    /// Announcement release time; the burst lands in the bin containing it.
    pub announcement_time: String,
    /// Share of announcements carrying a common volatility burst.
    pub burst_share: f64,
    /// Mean burst size on the model's volatility scale.
    pub burst_scale: f64,
    /// Relative half-width of each ticker's deviation from the common burst.
    pub burst_noise: f64,
    /// Share of announcements flagged as forward guidance.
    pub forward_guidance_share: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            tickers: vec!["AAA".into(), "BBB".into(), "CCC".into()],
            days: 500,
            first_day: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
            params: AjmParams {
                omega: 0.1173,
                alpha1: 0.2589,
                alpha2: -0.2045,
                beta: 0.8926,
                gamma: 0.0105,
                delta1: 0.0081,
                delta2: -0.0304,
                phi: 0.3509,
                psi: 0.2622,
                theta: 5.6748,
                restricted: false,
            },
            jump_intensity: 0.3,
            jump_scale: 1.0,
            sigma: 1e-3,
            overnight_sigma: 5e-3,
            diurnal: None,
            announcements: 40,
            announcement_time: "14:15".into(),
            burst_share: 0.5,
            burst_scale: 10.0,
            burst_noise: 0.5,
            forward_guidance_share: 0.45,
        }
    }
}

pub fn parse_time(s: &str) -> Result<NaiveTime, ConfigError> {
    NaiveTime::parse_from_str(s, "%H:%M")
        .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M:%S"))
        .map_err(|_| ConfigError::Time(s.into()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source: Box::new(source),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid()?;
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(ConfigError::Invalid(format!("q = {} is outside (0, 1)", self.q)));
        }
        if !(0.0..=1.0).contains(&self.max_missing_frac) {
            return Err(ConfigError::Invalid(format!(
                "max_missing_frac = {} is outside [0, 1]",
                self.max_missing_frac
            )));
        }
        if self.estimate.starts == 0 || self.estimate.ljung_box_lags.is_empty() {
            return Err(ConfigError::Invalid(
                "estimate needs at least one start and one Ljung-Box lag".into(),
            ));
        }
        if !(self.estimate.units > 0.0 && self.estimate.units.is_finite()) {
            return Err(ConfigError::Invalid("estimate.units must be positive".into()));
        }
        parse_time(&self.simulate.announcement_time)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<SessionGrid, ConfigError> {
        Ok(SessionGrid::new(
            parse_time(&self.open)?,
            parse_time(&self.close)?,
            self.elementary_minutes,
            self.bin_minutes,
        )?)
    }

    pub fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions {
            starts: self.estimate.starts,
            max_iter: self.estimate.max_iter,
            grad_tol: self.estimate.grad_tol,
            jitter: self.estimate.jitter,
            seed,
            ljung_box_lags: self.estimate.ljung_box_lags.clone(),
            fixed_theta: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let g = cfg.grid().unwrap();
        assert_eq!(g.bins_per_day(), 13);
    }

    #[test]
    fn partial_toml() {
        let cfg: RunConfig = toml::from_str("q = 0.9\n[estimate]\nspec = \"unrestricted\"\n").unwrap();
        assert_eq!(cfg.q, 0.9);
        assert_eq!(cfg.estimate.spec, Spec::Unrestricted);
        assert_eq!(cfg.bin_minutes, 30);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let cfg = RunConfig {
            q: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            open: "9h30".into(),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
