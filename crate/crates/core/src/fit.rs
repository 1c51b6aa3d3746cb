//! Quasi-maximum-likelihood estimation of the AJM, sandwich standard
//! errors and Ljung–Box residual diagnostics.
//!
//! The optimizer works on an unconstrained vector z:
//!
//! ```text
//! ω = e^w   α₁ = e^{a₁}   α₂ = −α₁β + e^{a₂}   β = σ(b)   γ = e^g
//! δ₁, δ₂, ψ free        φ = β σ(f)           ϑ = e^h
//! ```

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ajm::{
    filter_unchecked, loglik_array, loglik_gradient_array, observation_scores, AjmError,
    AjmParams, AjmState, ModelData, ALPHA1, ALPHA2, BETA, DELTA1, DELTA2, GAMMA, N_PARAMS,
    OMEGA, PHI, PSI, THETA,
};
use crate::linalg::{symmetric_pinv, Matrix};
use crate::optim::{minimize, BfgsOptions};
use crate::special::chi_square_sf;

pub const MIN_FIT_BINS: usize = 100;
pub const MIN_LJUNG_BOX: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {needed} bins, got {got}")]
    TooFewBins { needed: usize, got: usize },
    #[error("all volatility observations are zero")]
    AllZero,
    #[error("no start produced a finite likelihood")]
    NoFeasibleStart,
    #[error("need at least {needed} residuals and more than the largest lag, got {got}")]
    TooFewResiduals { needed: usize, got: usize },
    #[error(transparent)]
    Model(#[from] AjmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spec {
    #[default]
    Restricted,
    Unrestricted,
}

impl Spec {
    pub fn is_restricted(self) -> bool {
        self == Spec::Restricted
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Spec::Restricted => "restricted",
            Spec::Unrestricted => "unrestricted",
        }
    }

    /// Indices of the natural parameters estimated under this spec.
    pub fn free_params(self) -> Vec<usize> {
        (0..N_PARAMS)
            .filter(|&j| j != ALPHA2 || !self.is_restricted())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Moment-based start plus `starts - 1` jittered copies.
    pub starts: usize,
    pub max_iter: usize,
    /// Gradient max-norm tolerance for the per-observation objective in z.
    pub grad_tol: f64,
    /// Relative half-width of the multiplicative start jitter.
    pub jitter: f64,
    pub seed: u64,
    pub ljung_box_lags: Vec<usize>,
    /// Holds ϑ at this value instead of estimating it.
    pub fixed_theta: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            max_iter: 500,
            grad_tol: 1e-6,
            jitter: 0.2,
            seed: 0,
            ljung_box_lags: vec![1, 5, 10],
            fixed_theta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LjungBoxRecord {
    pub lag: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Standard errors per natural parameter; `None` for parameters not
/// estimated under the spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub robust: Vec<Option<f64>>,
    /// From the inverse Hessian alone.
    pub naive: Vec<Option<f64>>,
    /// The Hessian needed a pseudo-inverse.
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AjmFit {
    pub spec: Spec,
    pub params: AjmParams,
    pub se: StandardErrors,
    pub loglik: f64,
    pub n_obs: usize,
    pub excluded: usize,
    pub converged: bool,
    pub iterations: usize,
    pub starts_converged: usize,
    pub grad_max_abs: f64,
    pub persistence: f64,
    #[serde(skip)]
    pub state: AjmState,
    pub diagnostics: Vec<LjungBoxRecord>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

/// Maps z to the natural parameters.
pub fn to_natural(z: &[f64; N_PARAMS], spec: Spec) -> AjmParams {
    let beta = sigmoid(z[BETA]);
    let alpha1 = libm::exp(z[ALPHA1]);
    let mut p = [0.0; N_PARAMS];
    p[OMEGA] = libm::exp(z[OMEGA]);
    p[ALPHA1] = alpha1;
    p[ALPHA2] = if spec.is_restricted() {
        0.0
    } else {
        -alpha1 * beta + libm::exp(z[ALPHA2])
    };
    p[BETA] = beta;
    p[GAMMA] = libm::exp(z[GAMMA]);
    p[DELTA1] = z[DELTA1];
    p[DELTA2] = z[DELTA2];
    p[PHI] = beta * sigmoid(z[PHI]);
    p[PSI] = z[PSI];
    p[THETA] = libm::exp(z[THETA]);
    AjmParams::from_array(&p, spec.is_restricted())
}

/// Inverse of [`to_natural`] on the feasible set. Under the restricted
/// spec the α₂ slot of z is set to ln(α₁β), the value placing the
/// unrestricted model at α₂ = 0.
pub fn to_unconstrained(params: &AjmParams) -> Result<[f64; N_PARAMS], AjmError> {
    params.validate()?;
    let p = params.to_array();
    let mut z = [0.0; N_PARAMS];
    z[OMEGA] = libm::log(p[OMEGA]);
    z[ALPHA1] = libm::log(p[ALPHA1]);
    z[ALPHA2] = libm::log(p[ALPHA2] + p[ALPHA1] * p[BETA]);
    z[BETA] = logit(p[BETA]);
    z[GAMMA] = libm::log(p[GAMMA]);
    z[DELTA1] = p[DELTA1];
    z[DELTA2] = p[DELTA2];
    z[PHI] = logit(p[PHI] / p[BETA]);
    z[PSI] = p[PSI];
    z[THETA] = libm::log(p[THETA]);
    Ok(z)
}

/// ∂θ/∂z as `jac[i][j] = ∂θ_i/∂z_j`.
fn jacobian(z: &[f64; N_PARAMS], spec: Spec) -> [[f64; N_PARAMS]; N_PARAMS] {
    let p = to_natural(z, spec).to_array();
    let beta = p[BETA];
    let dbeta = beta * (1.0 - beta);
    let sf = sigmoid(z[PHI]);
    let mut jac = [[0.0; N_PARAMS]; N_PARAMS];
    jac[OMEGA][OMEGA] = p[OMEGA];
    jac[ALPHA1][ALPHA1] = p[ALPHA1];
    if !spec.is_restricted() {
        jac[ALPHA2][ALPHA1] = -p[ALPHA1] * beta;
        jac[ALPHA2][BETA] = -p[ALPHA1] * dbeta;
        jac[ALPHA2][ALPHA2] = libm::exp(z[ALPHA2]);
    }
    jac[BETA][BETA] = dbeta;
    jac[GAMMA][GAMMA] = p[GAMMA];
    jac[DELTA1][DELTA1] = 1.0;
    jac[DELTA2][DELTA2] = 1.0;
    jac[PHI][BETA] = sf * dbeta;
    jac[PHI][PHI] = beta * sf * (1.0 - sf);
    jac[PSI][PSI] = 1.0;
    jac[THETA][THETA] = p[THETA];
    jac
}

/// Natural-parameter starting point from sample moments.
pub fn moment_start(data: &ModelData, spec: Spec) -> AjmParams {
    let m = data.rv.iter().sum::<f64>() / data.len() as f64;
    let mean_sj = data.mean_sj();
    let mean_overnight = data.overnight_abs.iter().sum::<f64>() / data.n_days().max(1) as f64;
    let neg_share = data.neg.iter().filter(|&&b| b).count() as f64 / data.len() as f64;

    let (beta, phi, alpha1, gamma, delta1, delta2, psi) = (0.8, 0.2, 0.2, 0.02, 0.01, -0.03, 0.2);
    let alpha2 = if spec.is_restricted() { 0.0 } else { -0.1 };
    let a = alpha1 + alpha2 + gamma * neg_share + delta2 / data.bins_per_day as f64;
    let omega = (1.0 - beta) * ((1.0 - phi) * m - psi * mean_sj) - a * (m - mean_sj)
        - delta1 * mean_overnight;
    let omega = if omega > 0.0 { omega } else { 0.01 * m.max(1e-8) };

    let var = data
        .rv
        .iter()
        .map(|x| (x / m - 1.0) * (x / m - 1.0))
        .sum::<f64>()
        / (data.len() as f64 - 1.0);
    let theta = if var > 0.0 { (1.0 / var).clamp(0.1, 1e4) } else { 1.0 };

    AjmParams {
        omega,
        alpha1,
        alpha2,
        beta,
        gamma,
        delta1,
        delta2,
        phi,
        psi,
        theta,
        restricted: spec.is_restricted(),
    }
}

/// Per-observation negative log-likelihood over the free coordinates of z.
struct Objective<'a> {
    data: &'a ModelData,
    spec: Spec,
    free: Vec<usize>,
    base: [f64; N_PARAMS],
    scale: f64,
}

impl<'a> Objective<'a> {
    fn new(data: &'a ModelData, spec: Spec, fixed_theta: Option<f64>) -> Self {
        let mut free = spec.free_params();
        let mut base = [0.0; N_PARAMS];
        if let Some(theta) = fixed_theta {
            free.retain(|&j| j != THETA);
            base[THETA] = libm::log(theta);
        }
        let used = data.len() - data.zero_bins();
        Self {
            data,
            spec,
            free,
            base,
            scale: 1.0 / used as f64,
        }
    }

    fn expand(&self, x: &[f64]) -> [f64; N_PARAMS] {
        let mut z = self.base;
        for (k, &j) in self.free.iter().enumerate() {
            z[j] = x[k];
        }
        z
    }

    fn project(&self, z: &[f64; N_PARAMS]) -> Vec<f64> {
        self.free.iter().map(|&j| z[j]).collect()
    }

    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let z = self.expand(x);
        let p = to_natural(&z, self.spec).to_array();
        let (ll, grad) = loglik_gradient_array(&p, self.data);
        if !ll.value.is_finite() {
            return (f64::NAN, vec![f64::NAN; self.free.len()]);
        }
        let jac = jacobian(&z, self.spec);
        let gz = self
            .free
            .iter()
            .map(|&j| -self.scale * (0..N_PARAMS).map(|i| grad[i] * jac[i][j]).sum::<f64>())
            .collect();
        (-self.scale * ll.value, gz)
    }
}

struct Optimum {
    z: [f64; N_PARAMS],
    f: f64,
    grad_max_abs: f64,
    iterations: usize,
    converged: bool,
    starts_converged: usize,
}

fn optimize(
    data: &ModelData,
    spec: Spec,
    opts: &FitOptions,
    extra_starts: &[[f64; N_PARAMS]],
) -> Result<Optimum, FitError> {
    let mut start_params = moment_start(data, spec);
    if let Some(theta) = opts.fixed_theta {
        start_params.theta = theta;
    }
    let z0 = to_unconstrained(&start_params)?;
    let obj = Objective::new(data, spec, opts.fixed_theta);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut starts = vec![obj.project(&z0)];
    for _ in 1..opts.starts.max(1) {
        let x: Vec<f64> = starts[0]
            .iter()
            .map(|v| v * (1.0 + opts.jitter * (2.0 * rng.random::<f64>() - 1.0)))
            .collect();
        starts.push(x);
    }
    starts.extend(extra_starts.iter().map(|z| obj.project(z)));

    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        ..Default::default()
    };
    let mut best: Option<Optimum> = None;
    let mut starts_converged = 0;
    for x0 in &starts {
        let (f0, _) = obj.eval(x0);
        if !f0.is_finite() {
            continue;
        }
        let r = minimize(|x| obj.eval(x), x0, &bfgs);
        if !r.f.is_finite() {
            continue;
        }
        let converged = r.converged();
        if converged {
            starts_converged += 1;
        }
        // Converged runs beat non-converged ones; ties go to the lower objective.
        let better = match &best {
            None => true,
            Some(b) => (converged && !b.converged) || (converged == b.converged && r.f < b.f),
        };
        if better {
            best = Some(Optimum {
                z: obj.expand(&r.x),
                f: r.f,
                grad_max_abs: r.grad_max_abs(),
                iterations: r.iterations,
                converged,
                starts_converged: 0,
            });
        }
    }
    let mut best = best.ok_or(FitError::NoFeasibleStart)?;
    best.starts_converged = starts_converged;
    Ok(best)
}

fn check_data(data: &ModelData) -> Result<(), FitError> {
    if data.len() < MIN_FIT_BINS {
        return Err(FitError::TooFewBins {
            needed: MIN_FIT_BINS,
            got: data.len(),
        });
    }
    if data.zero_bins() == data.len() {
        return Err(FitError::AllZero);
    }
    Ok(())
}

fn finish(data: &ModelData, spec: Spec, opts: &FitOptions, opt: Optimum) -> Result<AjmFit, FitError> {
    let params = to_natural(&opt.z, spec);
    let p = params.to_array();
    let ll = loglik_array(&p, data);
    let state = filter_unchecked(&p, data)?;
    let se = robust_se(&params, data);
    let diagnostics = ljung_box(&state.residuals, &opts.ljung_box_lags)?;
    Ok(AjmFit {
        spec,
        params,
        se,
        loglik: ll.value,
        n_obs: ll.used,
        excluded: ll.excluded,
        converged: opt.converged,
        iterations: opt.iterations,
        starts_converged: opt.starts_converged,
        grad_max_abs: opt.grad_max_abs,
        persistence: params.persistence_for(data.bins_per_day),
        state,
        diagnostics,
    })
}

/// Maximizes the Gamma quasi-likelihood under `spec`. A fit whose best
/// start did not meet the gradient tolerance is returned with
/// `converged = false`.
pub fn fit(data: &ModelData, spec: Spec, opts: &FitOptions) -> Result<AjmFit, FitError> {
    check_data(data)?;
    let opt = optimize(data, spec, opts, &[])?;
    finish(data, spec, opts, opt)
}

/// Fits the restricted model, then the unrestricted one with the
/// restricted optimum as an additional start, so the unrestricted
/// likelihood is never below the restricted one.
pub fn fit_nested(data: &ModelData, opts: &FitOptions) -> Result<(AjmFit, AjmFit), FitError> {
    check_data(data)?;
    let restricted = optimize(data, Spec::Restricted, opts, &[])?;
    let warm = to_unconstrained(&to_natural(&restricted.z, Spec::Restricted))?;
    let unrestricted = optimize(data, Spec::Unrestricted, opts, &[warm])?;
    Ok((
        finish(data, Spec::Restricted, opts, restricted)?,
        finish(data, Spec::Unrestricted, opts, unrestricted)?,
    ))
}

/// Hessian of the total log-likelihood over the free natural parameters,
/// by central differences of the analytic gradient.
pub fn numerical_hessian(params: &AjmParams, data: &ModelData) -> Matrix {
    let free = if params.restricted {
        Spec::Restricted.free_params()
    } else {
        Spec::Unrestricted.free_params()
    };
    let base = params.to_array();
    let k = free.len();
    let mut h = Matrix::zeros(k);
    for (col, &j) in free.iter().enumerate() {
        let step = 1e-4 * base[j].abs().max(1.0);
        let mut up = base;
        let mut down = base;
        up[j] += step;
        down[j] -= step;
        let (_, gu) = loglik_gradient_array(&up, data);
        let (_, gd) = loglik_gradient_array(&down, data);
        for (row, &i) in free.iter().enumerate() {
            h[(row, col)] = (gu[i] - gd[i]) / (2.0 * step);
        }
    }
    h.symmetrized()
}

/// Sandwich H⁻¹ S H⁻¹ with S the summed outer products of the
/// per-observation scores. A singular Hessian is pseudo-inverted and
/// flagged.
pub fn robust_se(params: &AjmParams, data: &ModelData) -> StandardErrors {
    let spec = if params.restricted {
        Spec::Restricted
    } else {
        Spec::Unrestricted
    };
    let free = spec.free_params();
    let k = free.len();
    let h = numerical_hessian(params, data);
    let (h_inv, singular) = symmetric_pinv(&h, 1e-12);

    let mut s = Matrix::zeros(k);
    for score in observation_scores(params, data) {
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                s[(a, b)] += score[i] * score[j];
            }
        }
    }
    let cov = h_inv.matmul(&s).matmul(&h_inv);
    let naive_cov = h_inv.scale(-1.0);

    let mut robust = vec![None; N_PARAMS];
    let mut naive = vec![None; N_PARAMS];
    for (a, &j) in free.iter().enumerate() {
        let v = cov[(a, a)];
        robust[j] = Some(if v >= 0.0 { libm::sqrt(v) } else { f64::NAN });
        let v = naive_cov[(a, a)];
        naive[j] = Some(if v >= 0.0 { libm::sqrt(v) } else { f64::NAN });
    }
    StandardErrors {
        robust,
        naive,
        singular,
    }
}

/// Portmanteau statistic n(n+2) Σ_{k≤L} ρ̂ₖ²/(n−k) with a χ²(L) p-value,
/// for each requested lag L.
pub fn ljung_box(residuals: &[f64], lags: &[usize]) -> Result<Vec<LjungBoxRecord>, FitError> {
    let n = residuals.len();
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if n < MIN_LJUNG_BOX || max_lag >= n {
        return Err(FitError::TooFewResiduals {
            needed: MIN_LJUNG_BOX.max(max_lag + 1),
            got: n,
        });
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = residuals.iter().map(|x| x - mean).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum();
    let nf = n as f64;
    let mut cumulative = vec![0.0; max_lag + 1];
    for k in 1..=max_lag {
        let ck: f64 = dev[k..].iter().zip(&dev[..n - k]).map(|(a, b)| a * b).sum();
        let rho = if c0 > 0.0 { ck / c0 } else { 0.0 };
        cumulative[k] = cumulative[k - 1] + rho * rho / (nf - k as f64);
    }
    Ok(lags
        .iter()
        .map(|&lag| {
            let statistic = nf * (nf + 2.0) * cumulative[lag];
            LjungBoxRecord {
                lag,
                statistic,
                p_value: chi_square_sf(statistic, lag as f64),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ajm::{loglik_gradient, simulate, SimulationConfig};
    use approx::assert_relative_eq;

    fn truth() -> AjmParams {
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

    #[test]
    fn transform_round_trip() {
        for spec in [Spec::Restricted, Spec::Unrestricted] {
            let mut p = truth();
            if spec.is_restricted() {
                p.alpha2 = 0.0;
                p.restricted = true;
            }
            let z = to_unconstrained(&p).unwrap();
            let back = to_natural(&z, spec);
            for (a, b) in back.to_array().iter().zip(p.to_array()) {
                assert_relative_eq!(*a, b, epsilon = 1e-12);
            }
            assert!(back.validate().is_ok());
        }
    }

    #[test]
    fn any_z_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let mut z = [0.0; N_PARAMS];
            for v in &mut z {
                *v = 6.0 * (2.0 * rng.random::<f64>() - 1.0);
            }
            to_natural(&z, Spec::Unrestricted).validate().unwrap();
        }
    }

    #[test]
    fn jacobian_matches_differences() {
        let z = to_unconstrained(&truth()).unwrap();
        let jac = jacobian(&z, Spec::Unrestricted);
        for j in 0..N_PARAMS {
            let h = 1e-6;
            let mut up = z;
            let mut down = z;
            up[j] += h;
            down[j] -= h;
            let pu = to_natural(&up, Spec::Unrestricted).to_array();
            let pd = to_natural(&down, Spec::Unrestricted).to_array();
            for i in 0..N_PARAMS {
                assert_relative_eq!(jac[i][j], (pu[i] - pd[i]) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let sim = simulate(
            &truth(),
            &SimulationConfig {
                days: 40,
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let p = truth();
        let (_, g) = loglik_gradient(&p, &sim.data);
        let base = p.to_array();
        for j in 0..N_PARAMS {
            let h = 1e-6 * base[j].abs();
            let mut up = base;
            let mut down = base;
            up[j] += h;
            down[j] -= h;
            let num = (loglik_array(&up, &sim.data).value - loglik_array(&down, &sim.data).value)
                / (2.0 * h);
            assert!((num - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0), "param {j}: {num} vs {}", g[j]);
        }
    }

    #[test]
    fn ljung_box_power_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = vec![0.0; 5000];
        for k in 1..x.len() {
            x[k] = 0.5 * x[k - 1] + (rng.random::<f64>() - 0.5);
        }
        let lb = ljung_box(&x, &[1, 5, 10]).unwrap();
        assert_eq!(lb.iter().map(|r| r.lag).collect::<Vec<_>>(), vec![1, 5, 10]);
        assert!(lb[0].p_value < 1e-3);
        assert!(ljung_box(&x[..20], &[1]).is_err());
    }

    #[test]
    fn ljung_box_matches_direct_formula() {
        let x: Vec<f64> = (0..60).map(|k| libm::sin(k as f64 * 0.7) + 0.01 * k as f64).collect();
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        let mut q = 0.0;
        for k in 1..=3 {
            let ck: f64 = (k..x.len()).map(|t| (x[t] - m) * (x[t - k] - m)).sum();
            q += (ck / c0).powi(2) / (n - k as f64);
        }
        q *= n * (n + 2.0);
        let lb = ljung_box(&x, &[3]).unwrap();
        assert_relative_eq!(lb[0].statistic, q, max_relative = 1e-12);
    }

    #[test]
    fn rejects_degenerate_data() {
        let data = ModelData {
            bins_per_day: 13,
            rv: vec![0.0; 130],
            c: vec![0.0; 130],
            sj: vec![0.0; 130],
            neg: vec![false; 130],
            overnight_abs: vec![0.0; 10],
        };
        assert_eq!(
            fit(&data, Spec::Restricted, &FitOptions::default()).unwrap_err(),
            FitError::AllZero
        );
        let short = data.truncated(5);
        assert!(matches!(
            fit(&short, Spec::Restricted, &FitOptions::default()),
            Err(FitError::TooFewBins { .. })
        ));
    }
}
