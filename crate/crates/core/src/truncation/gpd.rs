//! Generalized Pareto fitting for threshold excesses.
//!
//! Probability-weighted moments give a closed-form start; a profile
//! likelihood search over `theta = xi / sigma` refines it when that
//! improves the log-likelihood.

use core::fmt;

use serde::{Deserialize, Serialize};

/// Below this magnitude the shape is treated as exactly 0 (exponential).
pub const XI_ZERO: f64 = 1e-9;

/// MLE is regular only for `xi > -0.5`; refinements below are rejected.
const MLE_MIN_XI: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub xi: f64,
    pub sigma: f64,
    /// Threshold the excesses were measured from.
    pub u: f64,
    pub n_tail: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Pwm,
    PwmMle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub params: GpdParams,
    pub method: FitMethod,
    pub log_likelihood: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GpdError {
    TooFewExcesses(usize),
    InvalidExcess(f64),
    DegenerateExcesses,
    FitFailed,
}

impl fmt::Display for GpdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GpdError::TooFewExcesses(n) => write!(f, "need at least 2 excesses, got {n}"),
            GpdError::InvalidExcess(x) => write!(f, "excess {x} is not a positive finite number"),
            GpdError::DegenerateExcesses => f.write_str("degenerate excesses (all identical)"),
            GpdError::FitFailed => f.write_str("probability-weighted moments gave no valid fit"),
        }
    }
}

impl core::error::Error for GpdError {}

impl GpdParams {
    pub fn with_threshold(self, u: f64) -> Self {
        GpdParams { u, ..self }
    }
}

/// Survival function `P(X > x)` of an excess `x >= 0`.
pub fn gpd_survival(x: f64, params: &GpdParams) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let GpdParams { xi, sigma, .. } = *params;
    if xi.abs() < XI_ZERO {
        return libm::exp(-x / sigma);
    }
    let t = 1.0 + xi * x / sigma;
    if t <= 0.0 {
        // past the upper endpoint of a bounded tail
        return 0.0;
    }
    libm::pow(t, -1.0 / xi).clamp(0.0, 1.0)
}

/// Log-likelihood of `excesses` under `(xi, sigma)`; `-inf` outside the
/// support.
pub fn gpd_log_likelihood(excesses: &[f64], xi: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 || !sigma.is_finite() {
        return f64::NEG_INFINITY;
    }
    let n = excesses.len() as f64;
    if xi.abs() < XI_ZERO {
        return -n * libm::log(sigma) - excesses.iter().sum::<f64>() / sigma;
    }
    let mut acc = 0.0;
    for &x in excesses {
        let t = 1.0 + xi * x / sigma;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += libm::log(t);
    }
    -n * libm::log(sigma) - (1.0 + 1.0 / xi) * acc
}

fn check(excesses: &[f64]) -> Result<(), GpdError> {
    if excesses.len() < 2 {
        return Err(GpdError::TooFewExcesses(excesses.len()));
    }
    if let Some(&bad) = excesses.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(GpdError::InvalidExcess(bad));
    }
    let first = excesses[0];
    if excesses.iter().all(|&x| x == first) {
        return Err(GpdError::DegenerateExcesses);
    }
    Ok(())
}

/// Hosking-Wallis probability-weighted moment estimates `(xi, sigma)`.
pub fn pwm_estimate(excesses: &[f64]) -> Result<(f64, f64), GpdError> {
    check(excesses)?;
    let mut sorted = excesses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let a0 = sorted.iter().sum::<f64>() / n;
    let a1 = sorted
        .iter()
        .enumerate()
        .map(|(j, &x)| (1.0 - (j as f64 + 1.0 - 0.35) / n) * x)
        .sum::<f64>()
        / n;
    let denom = a0 - 2.0 * a1;
    if denom <= 0.0 {
        return Err(GpdError::FitFailed);
    }
    let xi = 2.0 - a0 / denom;
    let sigma = 2.0 * a0 * a1 / denom;
    if !(sigma > 0.0 && sigma.is_finite() && xi.is_finite()) {
        return Err(GpdError::FitFailed);
    }
    Ok((xi, sigma))
}

/// Profile log-likelihood at `theta = xi / sigma`, returning `(ll, xi, sigma)`.
fn profile(excesses: &[f64], theta: f64) -> Option<(f64, f64, f64)> {
    let n = excesses.len() as f64;
    if theta.abs() < 1e-300 {
        let mean = excesses.iter().sum::<f64>() / n;
        return Some((-n * libm::log(mean) - n, 0.0, mean));
    }
    let mut acc = 0.0;
    for &x in excesses {
        let t = 1.0 + theta * x;
        if t <= 0.0 {
            return None;
        }
        acc += libm::log(t);
    }
    let xi = acc / n;
    let sigma = xi / theta;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return None;
    }
    Some((-n * libm::log(sigma) - n * (1.0 + xi), xi, sigma))
}

/// Maximum-likelihood `(ll, xi, sigma)` restricted to `xi >= -0.5`.
fn mle_refine(excesses: &[f64]) -> Option<(f64, f64, f64)> {
    let max = excesses.iter().copied().fold(f64::MIN, f64::max);
    let mean = excesses.iter().sum::<f64>() / excesses.len() as f64;
    let eval = |theta: f64| {
        profile(excesses, theta).filter(|&(ll, xi, _)| ll.is_finite() && xi >= MLE_MIN_XI)
    };

    // grid over the admissible theta range: negative side up to the
    // support limit -1/max, positive side log-spaced on the data scale
    const SIDE: usize = 80;
    let mut grid = alloc::vec::Vec::with_capacity(2 * SIDE + 1);
    for i in 1..=SIDE {
        let frac = i as f64 / (SIDE as f64 + 1.0);
        grid.push(-(1.0 - frac * frac) / max);
    }
    grid.push(0.0);
    for i in 0..SIDE {
        let e = -6.0 + 10.0 * i as f64 / (SIDE as f64 - 1.0);
        grid.push(libm::pow(10.0, e) / mean);
    }
    grid.sort_by(f64::total_cmp);

    let mut best: Option<(usize, f64)> = None;
    for (i, &t) in grid.iter().enumerate() {
        if let Some((ll, _, _)) = eval(t) {
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((i, ll));
            }
        }
    }
    let (bi, _) = best?;
    let mut lo = grid[bi.saturating_sub(1)];
    let mut hi = grid[(bi + 1).min(grid.len() - 1)];

    // golden-section on the bracket; inadmissible points count as -inf
    let score = |t: f64| eval(t).map_or(f64::NEG_INFINITY, |r| r.0);
    let g = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (score(a), score(b));
    for _ in 0..200 {
        if (hi - lo).abs() <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = score(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = score(b);
        }
    }
    let candidates = [grid[bi], a, b];
    candidates
        .iter()
        .filter_map(|&t| eval(t))
        .max_by(|x, y| x.0.total_cmp(&y.0))
}

/// Fits a GPD to positive excesses. `u` is left at 0; callers attach the
/// threshold with [`GpdParams::with_threshold`].
pub fn gpd_fit(excesses: &[f64]) -> Result<GpdFit, GpdError> {
    let (xi0, sigma0) = pwm_estimate(excesses)?;
    let ll0 = gpd_log_likelihood(excesses, xi0, sigma0);
    let (xi, sigma, ll, method) = match mle_refine(excesses) {
        Some((ll, xi, sigma)) if ll > ll0 || !ll0.is_finite() => (xi, sigma, ll, FitMethod::PwmMle),
        _ => (xi0, sigma0, ll0, FitMethod::Pwm),
    };
    Ok(GpdFit {
        params: GpdParams {
            xi,
            sigma,
            u: 0.0,
            n_tail: excesses.len(),
        },
        method,
        log_likelihood: ll,
    })
}
