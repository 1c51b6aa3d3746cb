//! Asymmetric jump multiplicative error model.
//!
//! ```text
//! RV~_k = μ_k ε_k,            ε_k | F_{k-1} ~ Gamma(ϑ, 1/ϑ)
//! μ_k   = ς_k + κ_k
//! ς_k   = ω + α₁C_{k-1} + α₂C_{k-2} + βς_{k-1} + γI⁻_{k-1}C_{k-1}
//!           + δ₁|r*_t| + δ₂C_{k-1}D_{k-1}
//! κ_k   = φμ_{k-1} + ψSJ_{k-1}
//! ```
//!
//! Bins are indexed day-major, so lags of a day's first bin reach into the
//! previous day's last bin. `D` marks a day's first bin and `|r*_t|` is the
//! absolute overnight return of the current day, entering every bin of it.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::MeasurePanel;
use crate::special::{digamma, ln_gamma};

pub const N_PARAMS: usize = 10;

pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "omega", "alpha1", "alpha2", "beta", "gamma", "delta1", "delta2", "phi", "psi", "theta",
];

pub(crate) const OMEGA: usize = 0;
pub(crate) const ALPHA1: usize = 1;
pub(crate) const ALPHA2: usize = 2;
pub(crate) const BETA: usize = 3;
pub(crate) const GAMMA: usize = 4;
pub(crate) const DELTA1: usize = 5;
pub(crate) const DELTA2: usize = 6;
pub(crate) const PHI: usize = 7;
pub(crate) const PSI: usize = 8;
pub(crate) const THETA: usize = 9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AjmError {
    #[error("parameter constraint violated: {0}")]
    Constraint(&'static str),
    #[error("non-finite state at day {day}, bin {bin}")]
    NonFinite { day: usize, bin: usize },
    #[error("{overnight} overnight returns for {days} days")]
    OvernightLength { overnight: usize, days: usize },
    #[error("model data is empty")]
    Empty,
    #[error("invalid simulation setting: {0}")]
    Simulation(&'static str),
}

/// Model coefficients. With `restricted` set the second ARCH lag is fixed
/// at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AjmParams {
    pub omega: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub phi: f64,
    pub psi: f64,
    pub theta: f64,
    pub restricted: bool,
}

impl AjmParams {
    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.omega,
            self.alpha1,
            self.alpha2,
            self.beta,
            self.gamma,
            self.delta1,
            self.delta2,
            self.phi,
            self.psi,
            self.theta,
        ]
    }

    pub fn from_array(v: &[f64; N_PARAMS], restricted: bool) -> Self {
        Self {
            omega: v[OMEGA],
            alpha1: v[ALPHA1],
            alpha2: if restricted { 0.0 } else { v[ALPHA2] },
            beta: v[BETA],
            gamma: v[GAMMA],
            delta1: v[DELTA1],
            delta2: v[DELTA2],
            phi: v[PHI],
            psi: v[PSI],
            theta: v[THETA],
            restricted,
        }
    }

    /// Checks the positivity and ordering constraints.
    pub fn validate(&self) -> Result<(), AjmError> {
        let all_finite = self.to_array().iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(AjmError::Constraint("coefficients must be finite"));
        }
        if !(self.omega > 0.0 && self.alpha1 > 0.0 && self.beta > 0.0 && self.gamma > 0.0) {
            return Err(AjmError::Constraint("omega, alpha1, beta, gamma > 0"));
        }
        if self.restricted && self.alpha2 != 0.0 {
            return Err(AjmError::Constraint("restricted model needs alpha2 = 0"));
        }
        if self.alpha2 <= -self.alpha1 * self.beta {
            return Err(AjmError::Constraint("alpha2 > -alpha1 * beta"));
        }
        if !(0.0 < self.phi && self.phi < self.beta && self.beta < 1.0) {
            return Err(AjmError::Constraint("0 < phi < beta < 1"));
        }
        if self.theta <= 0.0 {
            return Err(AjmError::Constraint("theta > 0"));
        }
        Ok(())
    }

    /// α₁ + α₂ + β + γ/2 + δ₂/13.
    pub fn persistence(&self) -> f64 {
        self.persistence_for(13)
    }

    /// Persistence with the first-bin term spread over `bins_per_day` bins.
    pub fn persistence_for(&self, bins_per_day: usize) -> f64 {
        self.alpha1 + self.alpha2 + self.beta + self.gamma / 2.0
            + self.delta2 / bins_per_day as f64
    }
}

/// Observed series the recursion conditions on, flattened day-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelData {
    pub bins_per_day: usize,
    /// Deseasonalized realized volatility, the modelled variable.
    pub rv: Vec<f64>,
    pub c: Vec<f64>,
    pub sj: Vec<f64>,
    pub neg: Vec<bool>,
    /// |r*_t| per day.
    pub overnight_abs: Vec<f64>,
}

impl ModelData {
    pub fn from_panel(panel: &MeasurePanel, overnight: &[f64]) -> Result<Self, AjmError> {
        if panel.bins.is_empty() {
            return Err(AjmError::Empty);
        }
        if overnight.len() != panel.n_days() {
            return Err(AjmError::OvernightLength {
                overnight: overnight.len(),
                days: panel.n_days(),
            });
        }
        Ok(Self {
            bins_per_day: panel.bins_per_day,
            rv: panel.bins.iter().map(|b| b.rv).collect(),
            c: panel.bins.iter().map(|b| b.c).collect(),
            sj: panel.bins.iter().map(|b| b.sj).collect(),
            neg: panel.bins.iter().map(|b| b.neg).collect(),
            overnight_abs: overnight.iter().map(|r| r.abs()).collect(),
        })
    }

    /// Multiplies every volatility and overnight return by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mul = |v: &[f64]| v.iter().map(|x| x * factor).collect();
        Self {
            bins_per_day: self.bins_per_day,
            rv: mul(&self.rv),
            c: mul(&self.c),
            sj: mul(&self.sj),
            neg: self.neg.clone(),
            overnight_abs: mul(&self.overnight_abs),
        }
    }

    pub fn len(&self) -> usize {
        self.rv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rv.is_empty()
    }

    pub fn n_days(&self) -> usize {
        self.overnight_abs.len()
    }

    pub fn mean_c(&self) -> f64 {
        mean(&self.c)
    }

    pub fn mean_sj(&self) -> f64 {
        mean(&self.sj)
    }

    /// Bins with zero volatility, which the likelihood skips.
    pub fn zero_bins(&self) -> usize {
        self.rv.iter().filter(|&&x| x <= 0.0).count()
    }

    /// Copy restricted to the first `days` days.
    pub fn truncated(&self, days: usize) -> Self {
        let days = days.min(self.n_days());
        let n = days * self.bins_per_day;
        Self {
            bins_per_day: self.bins_per_day,
            rv: self.rv[..n].to_vec(),
            c: self.c[..n].to_vec(),
            sj: self.sj[..n].to_vec(),
            neg: self.neg[..n].to_vec(),
            overnight_abs: self.overnight_abs[..days].to_vec(),
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// Filtered conditional means and their components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AjmState {
    pub mu: Vec<f64>,
    pub varsigma: Vec<f64>,
    pub kappa: Vec<f64>,
    /// RV~/μ per bin.
    pub residuals: Vec<f64>,
    /// Bins where κ came out negative.
    pub negative_kappa: usize,
}

/// Lagged quantities carried from one bin to the next.
#[derive(Debug, Clone, Copy)]
struct Lags {
    c1: f64,
    c2: f64,
    varsigma: f64,
    mu: f64,
    sj: f64,
    neg: bool,
    first: bool,
}

impl Lags {
    /// Pre-sample values: C and ς at the sample mean of C, κ and SJ at the
    /// sample mean of SJ.
    fn initial(mean_c: f64, mean_sj: f64) -> Self {
        Self {
            c1: mean_c,
            c2: mean_c,
            varsigma: mean_c,
            mu: mean_c + mean_sj,
            sj: mean_sj,
            neg: false,
            first: false,
        }
    }
}

#[inline]
fn step(p: &[f64; N_PARAMS], lags: &Lags, overnight_abs: f64) -> (f64, f64) {
    let ind = if lags.neg { 1.0 } else { 0.0 };
    let first = if lags.first { 1.0 } else { 0.0 };
    let varsigma = p[OMEGA]
        + p[ALPHA1] * lags.c1
        + p[ALPHA2] * lags.c2
        + p[BETA] * lags.varsigma
        + p[GAMMA] * ind * lags.c1
        + p[DELTA1] * overnight_abs
        + p[DELTA2] * lags.c1 * first;
    let kappa = p[PHI] * lags.mu + p[PSI] * lags.sj;
    (varsigma, kappa)
}

/// Runs the recursion, calling `visit(k, μ_k, ς_k, κ_k, ∂μ_k/∂θ)` for every
/// bin, with μ_k = ς_k + κ_k exactly.
/// The derivative slice is only filled when `with_grad` is set.
/// Returns early with the failing bin when `visit` returns `false`.
fn walk<F>(p: &[f64; N_PARAMS], data: &ModelData, with_grad: bool, mut visit: F) -> Option<usize>
where
    F: FnMut(usize, f64, f64, f64, &[f64; N_PARAMS]) -> bool,
{
    let n = data.bins_per_day;
    let mut lags = Lags::initial(data.mean_c(), data.mean_sj());
    let mut d_varsigma = [0.0; N_PARAMS];
    let mut d_mu = [0.0; N_PARAMS];
    let zero = [0.0; N_PARAMS];

    for k in 0..data.len() {
        let overnight = data.overnight_abs[k / n];
        let (varsigma, kappa) = step(p, &lags, overnight);
        let mu = varsigma + kappa;

        if with_grad {
            let ind = if lags.neg { 1.0 } else { 0.0 };
            let first = if lags.first { 1.0 } else { 0.0 };
            let mut e = [0.0; N_PARAMS];
            e[OMEGA] = 1.0;
            e[ALPHA1] = lags.c1;
            e[ALPHA2] = lags.c2;
            e[BETA] = lags.varsigma;
            e[GAMMA] = ind * lags.c1;
            e[DELTA1] = overnight;
            e[DELTA2] = lags.c1 * first;
            let mut new_dv = [0.0; N_PARAMS];
            let mut new_dmu = [0.0; N_PARAMS];
            for j in 0..N_PARAMS {
                new_dv[j] = e[j] + p[BETA] * d_varsigma[j];
                let mut dk = p[PHI] * d_mu[j];
                if j == PHI {
                    dk += lags.mu;
                } else if j == PSI {
                    dk += lags.sj;
                }
                new_dmu[j] = new_dv[j] + dk;
            }
            d_varsigma = new_dv;
            d_mu = new_dmu;
        }

        if !visit(k, mu, varsigma, kappa, if with_grad { &d_mu } else { &zero }) {
            return Some(k);
        }

        lags = Lags {
            c1: data.c[k],
            c2: lags.c1,
            varsigma,
            mu,
            sj: data.sj[k],
            neg: data.neg[k],
            first: k % n == 0,
        };
    }
    None
}

/// Filters μ, ς and κ through the sample.
pub fn filter(params: &AjmParams, data: &ModelData) -> Result<AjmState, AjmError> {
    params.validate()?;
    filter_unchecked(&params.to_array(), data)
}

pub(crate) fn filter_unchecked(p: &[f64; N_PARAMS], data: &ModelData) -> Result<AjmState, AjmError> {
    if data.is_empty() {
        return Err(AjmError::Empty);
    }
    let len = data.len();
    let mut state = AjmState {
        mu: Vec::with_capacity(len),
        varsigma: Vec::with_capacity(len),
        kappa: Vec::with_capacity(len),
        residuals: Vec::with_capacity(len),
        negative_kappa: 0,
    };
    let failed = walk(p, data, false, |k, mu, varsigma, kappa, _| {
        if !mu.is_finite() || !varsigma.is_finite() {
            return false;
        }
        if kappa < 0.0 {
            state.negative_kappa += 1;
        }
        state.mu.push(mu);
        state.varsigma.push(varsigma);
        state.kappa.push(kappa);
        state.residuals.push(data.rv[k] / mu);
        true
    });
    if let Some(k) = failed {
        return Err(AjmError::NonFinite {
            day: k / data.bins_per_day,
            bin: k % data.bins_per_day,
        });
    }
    Ok(state)
}

/// ε̂ = RV~/μ per bin.
pub fn residuals(state: &AjmState, data: &ModelData) -> Vec<f64> {
    data.rv.iter().zip(&state.mu).map(|(x, mu)| x / mu).collect()
}

/// Gamma quasi log-likelihood summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLik {
    /// Sum over included bins; −∞ when μ ≤ 0 anywhere.
    pub value: f64,
    /// Bins contributing to the sum.
    pub used: usize,
    /// Zero-volatility bins left out of the sum.
    pub excluded: usize,
}

struct Contribution {
    theta_term: f64,
    ln_theta: f64,
    digamma_theta: f64,
}

impl Contribution {
    fn new(theta: f64) -> Self {
        let ln_theta = libm::log(theta);
        Self {
            theta_term: theta * ln_theta - ln_gamma(theta),
            ln_theta,
            digamma_theta: digamma(theta),
        }
    }

    #[inline]
    fn value(&self, theta: f64, x: f64, mu: f64) -> f64 {
        self.theta_term + (theta - 1.0) * libm::log(x) - theta * libm::log(mu) - theta * x / mu
    }

    /// (∂ℓ/∂μ, ∂ℓ/∂ϑ).
    #[inline]
    fn partials(&self, theta: f64, x: f64, mu: f64) -> (f64, f64) {
        let dmu = theta * (x - mu) / (mu * mu);
        let dtheta = self.ln_theta + 1.0 - self.digamma_theta + libm::log(x) - libm::log(mu) - x / mu;
        (dmu, dtheta)
    }
}

/// Σ [ϑ ln ϑ − ln Γ(ϑ) + (ϑ−1) ln x − ϑ ln μ − ϑ x/μ] over bins with x > 0.
pub fn loglik(params: &AjmParams, data: &ModelData) -> LogLik {
    loglik_array(&params.to_array(), data)
}

pub(crate) fn loglik_array(p: &[f64; N_PARAMS], data: &ModelData) -> LogLik {
    let theta = p[THETA];
    let contrib = Contribution::new(theta);
    let mut value = 0.0;
    let mut used = 0;
    let failed = walk(p, data, false, |k, mu, _, _, _| {
        if !(mu > 0.0) || !mu.is_finite() {
            return false;
        }
        let x = data.rv[k];
        if x > 0.0 {
            value += contrib.value(theta, x, mu);
            used += 1;
        }
        true
    });
    let excluded = data.zero_bins();
    if failed.is_some() || !value.is_finite() {
        value = f64::NEG_INFINITY;
    }
    LogLik {
        value,
        used,
        excluded,
    }
}

/// Log-likelihood and its exact gradient in the natural parameters
/// (ω, α₁, α₂, β, γ, δ₁, δ₂, φ, ψ, ϑ), by forward differentiation of the
/// recursion.
pub fn loglik_gradient(params: &AjmParams, data: &ModelData) -> (LogLik, [f64; N_PARAMS]) {
    loglik_gradient_array(&params.to_array(), data)
}

pub(crate) fn loglik_gradient_array(
    p: &[f64; N_PARAMS],
    data: &ModelData,
) -> (LogLik, [f64; N_PARAMS]) {
    let theta = p[THETA];
    let contrib = Contribution::new(theta);
    let mut value = 0.0;
    let mut used = 0;
    let mut grad = [0.0; N_PARAMS];
    let failed = walk(p, data, true, |k, mu, _, _, dmu| {
        if !(mu > 0.0) || !mu.is_finite() {
            return false;
        }
        let x = data.rv[k];
        if x > 0.0 {
            value += contrib.value(theta, x, mu);
            used += 1;
            let (l_mu, l_theta) = contrib.partials(theta, x, mu);
            for j in 0..THETA {
                grad[j] += l_mu * dmu[j];
            }
            grad[THETA] += l_theta;
        }
        true
    });
    let excluded = data.zero_bins();
    if failed.is_some() || !value.is_finite() {
        return (
            LogLik {
                value: f64::NEG_INFINITY,
                used,
                excluded,
            },
            [f64::NAN; N_PARAMS],
        );
    }
    (
        LogLik {
            value,
            used,
            excluded,
        },
        grad,
    )
}

/// Per-observation score vectors (only bins with positive volatility).
pub fn observation_scores(params: &AjmParams, data: &ModelData) -> Vec<[f64; N_PARAMS]> {
    let p = params.to_array();
    let theta = p[THETA];
    let contrib = Contribution::new(theta);
    let mut scores = Vec::with_capacity(data.len());
    walk(&p, data, true, |k, mu, _, _, dmu| {
        let x = data.rv[k];
        if x > 0.0 && mu > 0.0 {
            let (l_mu, l_theta) = contrib.partials(theta, x, mu);
            let mut s = [0.0; N_PARAMS];
            for j in 0..THETA {
                s[j] = l_mu * dmu[j];
            }
            s[THETA] = l_theta;
            scores.push(s);
        }
        true
    });
    scores
}

/// Settings for simulating from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub days: usize,
    pub bins_per_day: usize,
    pub seed: u64,
    /// Per-bin probability of a significant jump.
    pub jump_intensity: f64,
    /// Mean of the exponential jump size.
    pub jump_scale: f64,
    /// Standard deviation of the Gaussian overnight return.
    pub overnight_sd: f64,
    /// Days simulated and discarded before the returned sample.
    pub burn_in_days: usize,
    /// Extra jump mass added at given (day, bin) coordinates of the sample.
    pub bursts: Vec<Burst>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            days: 500,
            bins_per_day: 13,
            seed: 0,
            jump_intensity: 0.3,
            jump_scale: 1.0,
            overnight_sd: 1.0,
            burn_in_days: 20,
            bursts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub day: usize,
    pub bin: usize,
    pub size: f64,
}

/// Simulated observables together with the latent truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: ModelData,
    pub truth: AjmState,
    /// Bins where the drawn jump exceeded the draw of RV and C was floored.
    pub clamped: usize,
}

/// Smallest share of RV left to the continuous part when a jump draw
/// exceeds the simulated volatility.
const MIN_CONTINUOUS_SHARE: f64 = 0.1;

/// Approximate unconditional mean of μ, used to start the simulation.
fn unconditional_mean(p: &AjmParams, cfg: &SimulationConfig) -> f64 {
    let mean_sj = cfg.jump_intensity * cfg.jump_scale;
    let mean_overnight = cfg.overnight_sd * core::f64::consts::FRAC_2_SQRT_PI / core::f64::consts::SQRT_2;
    let a = p.persistence_for(cfg.bins_per_day) - p.beta;
    let den = (1.0 - p.phi) * (1.0 - p.beta) - a;
    let num = p.omega - a * mean_sj + p.delta1 * mean_overnight + p.psi * mean_sj * (1.0 - p.beta);
    let level = num / den;
    if den > 0.0 && level > mean_sj && level.is_finite() {
        level
    } else {
        p.omega / (1.0 - p.beta) + mean_sj
    }
}

/// Draws a sample path. ε ~ Gamma(ϑ, 1/ϑ); a significant jump occurs with
/// probability `jump_intensity` and has exponential size with mean
/// `jump_scale`; I⁻ ~ Bernoulli(1/2); overnight returns are N(0, sd²).
/// The same seed always gives the same path.
pub fn simulate(params: &AjmParams, cfg: &SimulationConfig) -> Result<Simulation, AjmError> {
    params.validate()?;
    if !(0.0..=1.0).contains(&cfg.jump_intensity) {
        return Err(AjmError::Simulation("jump intensity outside [0, 1]"));
    }
    if cfg.days == 0 || cfg.bins_per_day == 0 {
        return Err(AjmError::Simulation("days and bins per day must be positive"));
    }
    if cfg.jump_intensity > 0.0 && !(cfg.jump_scale > 0.0) {
        return Err(AjmError::Simulation("jump scale must be positive"));
    }
    if !(cfg.overnight_sd >= 0.0) {
        return Err(AjmError::Simulation("overnight sd must be non-negative"));
    }
    if cfg
        .bursts
        .iter()
        .any(|b| b.day >= cfg.days || b.bin >= cfg.bins_per_day || !(b.size >= 0.0))
    {
        return Err(AjmError::Simulation("burst outside the sample grid"));
    }

    let p = params.to_array();
    let n = cfg.bins_per_day;
    let total_days = cfg.days + cfg.burn_in_days;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps_dist = Gamma::new(params.theta, 1.0 / params.theta)
        .map_err(|_| AjmError::Simulation("invalid gamma shape"))?;
    let jump_dist = Exp::new(1.0 / cfg.jump_scale.max(f64::MIN_POSITIVE))
        .map_err(|_| AjmError::Simulation("invalid jump scale"))?;
    let overnight_dist =
        Normal::new(0.0, cfg.overnight_sd).map_err(|_| AjmError::Simulation("invalid overnight sd"))?;

    let mut burst_at = vec![0.0; cfg.days * n];
    for b in &cfg.bursts {
        burst_at[b.day * n + b.bin] += b.size;
    }

    let level = unconditional_mean(params, cfg);
    let mean_sj = cfg.jump_intensity * cfg.jump_scale;
    let mut lags = Lags::initial(level - mean_sj, mean_sj);
    lags.varsigma = level - (p[PHI] * level + p[PSI] * mean_sj);

    let keep = cfg.days * n;
    let mut data = ModelData {
        bins_per_day: n,
        rv: Vec::with_capacity(keep),
        c: Vec::with_capacity(keep),
        sj: Vec::with_capacity(keep),
        neg: Vec::with_capacity(keep),
        overnight_abs: Vec::with_capacity(cfg.days),
    };
    let mut truth = AjmState {
        mu: Vec::with_capacity(keep),
        varsigma: Vec::with_capacity(keep),
        kappa: Vec::with_capacity(keep),
        residuals: Vec::with_capacity(keep),
        negative_kappa: 0,
    };
    let mut clamped = 0;

    for day in 0..total_days {
        let overnight_abs = overnight_dist.sample(&mut rng).abs();
        let in_sample = day >= cfg.burn_in_days;
        if in_sample {
            data.overnight_abs.push(overnight_abs);
        }
        for bin in 0..n {
            let (varsigma, kappa) = step(&p, &lags, overnight_abs);
            let mu = varsigma + kappa;
            if !mu.is_finite() || mu <= 0.0 {
                return Err(AjmError::NonFinite { day, bin });
            }
            let eps = eps_dist.sample(&mut rng);
            let jump = rng.random_bool(cfg.jump_intensity);
            let mut sj = if jump { jump_dist.sample(&mut rng) } else { 0.0 };
            let neg = rng.random_bool(0.5);
            let mut rv = mu * eps;
            if in_sample {
                let extra = burst_at[(day - cfg.burn_in_days) * n + bin];
                sj += extra;
                rv += extra;
            }
            if sj > 0.0 && rv - sj < MIN_CONTINUOUS_SHARE * rv {
                sj = (1.0 - MIN_CONTINUOUS_SHARE) * rv;
                if in_sample {
                    clamped += 1;
                }
            }
            let c = rv - sj;

            if in_sample {
                data.rv.push(rv);
                data.c.push(c);
                data.sj.push(sj);
                data.neg.push(neg);
                truth.mu.push(mu);
                truth.varsigma.push(varsigma);
                truth.kappa.push(kappa);
                truth.residuals.push(rv / mu);
                if kappa < 0.0 {
                    truth.negative_kappa += 1;
                }
            }
            lags = Lags {
                c1: c,
                c2: lags.c1,
                varsigma,
                mu,
                sj,
                neg,
                first: bin == 0,
            };
        }
    }
    Ok(Simulation {
        data,
        truth,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn msft_unrestricted() -> AjmParams {
        AjmParams {
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
        }
    }

    fn only_omega(omega: f64) -> [f64; N_PARAMS] {
        let mut p = [0.0; N_PARAMS];
        p[OMEGA] = omega;
        p[THETA] = 1.0;
        p
    }

    fn small_data() -> ModelData {
        ModelData {
            bins_per_day: 3,
            rv: vec![16.0, 17.0, 15.0, 14.0, 20.0, 16.0],
            c: vec![16.0, 16.0, 15.0, 14.0, 18.0, 16.0],
            sj: vec![0.0, 1.0, 0.0, 0.0, 2.0, 0.0],
            neg: vec![false, true, false, true, false, false],
            overnight_abs: vec![0.4, 1.3],
        }
    }

    #[test]
    fn constant_mean() {
        let state = filter_unchecked(&only_omega(2.0), &small_data()).unwrap();
        for k in 0..6 {
            assert_eq!(state.varsigma[k], 2.0);
            assert_eq!(state.kappa[k], 0.0);
            assert_eq!(state.mu[k], 2.0);
        }
    }

    #[test]
    fn jump_pass_through() {
        let mut p = only_omega(1.0);
        p[PSI] = 1.0;
        let data = small_data();
        let state = filter_unchecked(&p, &data).unwrap();
        assert_eq!(state.kappa[0], data.mean_sj());
        for k in 1..6 {
            assert_eq!(state.kappa[k], data.sj[k - 1]);
        }
    }

    #[test]
    fn mu_is_sum_of_components() {
        let data = small_data();
        let state = filter(&msft_unrestricted(), &data).unwrap();
        for k in 0..data.len() {
            assert_eq!(state.mu[k], state.varsigma[k] + state.kappa[k]);
        }
        assert_eq!(state.negative_kappa, 0);
    }

    #[test]
    fn exponential_case() {
        // Single bin with x = μ and ϑ = 1: −ln μ − 1.
        let data = ModelData {
            bins_per_day: 1,
            rv: vec![3.0],
            c: vec![3.0],
            sj: vec![0.0],
            neg: vec![false],
            overnight_abs: vec![0.0],
        };
        let mut p = only_omega(3.0);
        p[BETA] = 0.0;
        let ll = loglik_array(&p, &data);
        assert_relative_eq!(ll.value, -libm::log(3.0) - 1.0, epsilon = 1e-15);
        assert_eq!(ll.used, 1);
    }

    #[test]
    fn theta_one_reduces_to_exponential_mem() {
        let data = small_data();
        let mut params = msft_unrestricted();
        params.theta = 1.0;
        let state = filter(&params, &data).unwrap();
        let expected: f64 = data
            .rv
            .iter()
            .zip(&state.mu)
            .map(|(x, mu)| -libm::log(*mu) - x / mu)
            .sum();
        assert_relative_eq!(loglik(&params, &data).value, expected, max_relative = 1e-14);
    }

    #[test]
    fn zero_bins_are_excluded() {
        let mut data = small_data();
        data.rv[2] = 0.0;
        let ll = loglik(&msft_unrestricted(), &data);
        assert_eq!(ll.used, 5);
        assert_eq!(ll.excluded, 1);
        assert!(ll.value.is_finite());
    }

    #[test]
    fn nonpositive_mean_is_rejected() {
        let mut p = only_omega(-1.0);
        p[THETA] = 2.0;
        assert_eq!(loglik_array(&p, &small_data()).value, f64::NEG_INFINITY);
    }

    #[test]
    fn residual_ratio() {
        let data = small_data();
        let state = filter(&msft_unrestricted(), &data).unwrap();
        let r = residuals(&state, &data);
        assert_eq!(r, state.residuals);
        let doubled = AjmState {
            mu: state.mu.iter().map(|m| 2.0 * m).collect(),
            ..state.clone()
        };
        for (a, b) in residuals(&doubled, &data).iter().zip(&r) {
            assert_relative_eq!(*a, b / 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn persistence_values() {
        let p = msft_unrestricted();
        // 0.2589 − 0.2045 + 0.8926 + 0.00525 − 0.0023385 = 0.9499115
        assert_relative_eq!(p.persistence(), 0.949_911_538_461_538_4, epsilon = 1e-12);
        assert!((p.persistence() - 0.9499).abs() < 5e-5);
        let mut r = p;
        r.alpha2 = 0.0;
        r.restricted = true;
        assert_relative_eq!(r.persistence(), p.persistence() + 0.2045, epsilon = 1e-12);
        let zero = AjmParams {
            alpha1: 0.0,
            alpha2: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta2: 0.0,
            ..p
        };
        assert_eq!(zero.persistence(), 0.0);
    }

    #[test]
    fn constraints() {
        let p = msft_unrestricted();
        assert!(p.validate().is_ok());
        assert!(AjmParams { phi: 0.95, ..p }.validate().is_err());
        assert!(AjmParams { alpha2: -0.24, ..p }.validate().is_err());
        assert!(AjmParams { omega: 0.0, ..p }.validate().is_err());
        assert!(AjmParams { theta: -1.0, ..p }.validate().is_err());
        assert!(AjmParams { restricted: true, ..p }.validate().is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = SimulationConfig {
            days: 30,
            seed: 7,
            ..Default::default()
        };
        let a = simulate(&msft_unrestricted(), &cfg).unwrap();
        let b = simulate(&msft_unrestricted(), &cfg).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.truth, b.truth);
        let c = simulate(&msft_unrestricted(), &SimulationConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.data.rv, c.data.rv);
    }

    #[test]
    fn simulation_without_jumps() {
        let cfg = SimulationConfig {
            days: 20,
            jump_intensity: 0.0,
            seed: 3,
            ..Default::default()
        };
        let p = msft_unrestricted();
        let sim = simulate(&p, &cfg).unwrap();
        assert!(sim.data.sj.iter().all(|&s| s == 0.0));
        for k in 1..sim.data.len() {
            assert_relative_eq!(sim.truth.kappa[k], p.phi * sim.truth.mu[k - 1], epsilon = 1e-14);
        }
    }

    #[test]
    fn simulation_rejects_bad_settings() {
        let p = msft_unrestricted();
        let bad = SimulationConfig {
            jump_intensity: 1.5,
            ..Default::default()
        };
        assert!(simulate(&p, &bad).is_err());
        let bad = SimulationConfig {
            days: 0,
            ..Default::default()
        };
        assert!(simulate(&p, &bad).is_err());
    }

    #[test]
    fn filter_reproduces_simulated_truth() {
        // With identical initial lags the filter recovers the latent path.
        let p = msft_unrestricted();
        let sim = simulate(
            &p,
            &SimulationConfig {
                days: 50,
                seed: 11,
                ..Default::default()
            },
        )
        .unwrap();
        let state = filter(&p, &sim.data).unwrap();
        let tail = sim.data.len() - 1;
        // The start-up transient dies out geometrically.
        assert_relative_eq!(state.mu[tail], sim.truth.mu[tail], max_relative = 1e-8);
    }
}
