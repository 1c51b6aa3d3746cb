//! Quasi-Newton minimization with a strong-Wolfe line search.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the largest absolute gradient entry falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective decrease falls below this.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            f_tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Stalled,
    LineSearch,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl BfgsResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Gradient
    }

    pub fn grad_max_abs(&self) -> f64 {
        max_abs(&self.grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
}

fn finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

struct Probe {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

/// Minimizes `fg(x) -> (f, ∇f)` from `x0`. Non-finite values are treated
/// as an infeasible step and shrink the trial length.
pub fn minimize<F>(mut fg: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    if !finite(f, &g) {
        return BfgsResult {
            x,
            f,
            grad: g,
            iterations: 0,
            termination: Termination::LineSearch,
        };
    }
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut h, 1.0);
    let mut first = true;

    for iter in 0..opts.max_iter {
        if max_abs(&g) < opts.grad_tol {
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: iter,
                termination: Termination::Gradient,
            };
        }
        let mut d: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            reset(&mut h, 1.0);
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let initial = if first {
            (1.0 / max_abs(&g)).min(1.0)
        } else {
            1.0
        };
        let step = line_search(&mut fg, &x, f, slope, &d, initial);
        let Some(step) = step else {
            if !first {
                // Retry once along steepest descent with a fresh metric.
                reset(&mut h, 1.0);
                first = true;
                continue;
            }
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: iter,
                termination: Termination::LineSearch,
            };
        };
        let s: Vec<f64> = d.iter().map(|v| step.alpha * v).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let f_old = f;
        for i in 0..n {
            x[i] += s[i];
        }
        f = step.f;
        g = step.g;

        let sy = dot(&s, &y);
        if sy > 1e-12 * libm::sqrt(dot(&s, &s) * dot(&y, &y)) {
            if first {
                reset(&mut h, sy / dot(&y, &y));
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
                .collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        first = false;

        if (f_old - f).abs() <= opts.f_tol * f.abs().max(1.0)
            && max_abs(&g) >= opts.grad_tol
            && max_abs(&s) <= 1e-14 * max_abs(&x).max(1.0)
        {
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: iter + 1,
                termination: Termination::Stalled,
            };
        }
    }
    let termination = if max_abs(&g) < opts.grad_tol {
        Termination::Gradient
    } else {
        Termination::MaxIterations
    };
    BfgsResult {
        x,
        f,
        grad: g,
        iterations: opts.max_iter,
        termination,
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn evaluate<F>(fg: &mut F, x: &[f64], d: &[f64], alpha: f64) -> Probe
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let trial: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    let (f, g) = fg(&trial);
    let slope = dot(&g, d);
    Probe { alpha, f, g, slope }
}

/// Bracketing and zoom phases of a strong-Wolfe search.
fn line_search<F>(fg: &mut F, x: &[f64], f0: f64, slope0: f64, d: &[f64], initial: f64) -> Option<Probe>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        slope: slope0,
    };
    let mut alpha = initial;
    for i in 0..40 {
        let cur = evaluate(fg, x, d, alpha);
        if !finite(cur.f, &cur.g) {
            // Infeasible: shrink toward the last good point.
            alpha = prev.alpha + 0.1 * (alpha - prev.alpha);
            if alpha - prev.alpha < 1e-20 {
                return None;
            }
            continue;
        }
        if cur.f > f0 + C1 * alpha * slope0 || (i > 0 && cur.f >= prev.f) {
            return zoom(fg, x, f0, slope0, d, prev, cur);
        }
        if cur.slope.abs() <= -C2 * slope0 {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(fg, x, f0, slope0, d, cur, prev);
        }
        alpha *= 2.0;
        prev = cur;
    }
    None
}

fn zoom<F>(
    fg: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    mut lo: Probe,
    mut hi: Probe,
) -> Option<Probe>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    for _ in 0..60 {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let mut alpha = cubic_min(&lo, &hi).unwrap_or(0.5 * (lo.alpha + hi.alpha));
        let margin = 0.1 * (b - a);
        if !(alpha > a + margin && alpha < b - margin) {
            alpha = 0.5 * (lo.alpha + hi.alpha);
        }
        if (b - a) <= 1e-16 * b.max(1.0) {
            break;
        }
        let cur = evaluate(fg, x, d, alpha);
        if !finite(cur.f, &cur.g) {
            hi = cur;
            hi.f = f64::INFINITY;
            hi.slope = f64::NAN;
            continue;
        }
        if cur.f > f0 + C1 * alpha * slope0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.slope.abs() <= -C2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Accept a sufficient decrease even if curvature was not met.
    (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
}

/// Minimizer of the cubic interpolating both probes' values and slopes.
fn cubic_min(p: &Probe, q: &Probe) -> Option<f64> {
    if !(p.f.is_finite() && q.f.is_finite() && p.slope.is_finite() && q.slope.is_finite()) {
        return None;
    }
    let d1 = p.slope + q.slope - 3.0 * (p.f - q.f) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.alpha - p.alpha).signum() * libm::sqrt(disc);
    let alpha = q.alpha - (q.alpha - p.alpha) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    alpha.is_finite().then_some(alpha)
}
