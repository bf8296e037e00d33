//! Surprise truncation: calibrate top scores against a generalized Pareto
//! model of the score tail and keep the block of scores that the tail
//! model finds improbable.
//!
//! The threshold `u` is the median score and excesses are the scores above
//! it. For each candidate cut `c`, the excesses below the cut form the
//! background tail; a GPD is fitted to them (shape floored at 0) and the
//! lowest kept excess is scored by its survival probability under that
//! fit. The kept prefix is the candidate with the smallest survival if it
//! is below `alpha`, otherwise a single entry. With fewer than four
//! excesses, or no usable fit, the list is truncated by [`elbow`].

use alloc::vec::Vec;

use super::{elbow, gpd_fit, gpd_survival, non_empty, Diagnostics, GpdParams, TruncationError, TruncationResult};
use crate::corpus::quantile_sorted;
use crate::embedding::RankedList;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Fewer exceedances than this fall back to elbow.
const MIN_EXCEEDANCES: usize = 4;
/// Smallest background sample a candidate cut is tested against.
const MIN_BACKGROUND: usize = 3;

fn background_fit(background: &[f64]) -> Option<GpdParams> {
    let fit = gpd_fit(background).ok()?;
    if fit.params.xi >= 0.0 {
        return Some(fit.params);
    }
    // a bounded-tail fit on a handful of points puts anything just above
    // the sample maximum past the endpoint; use the exponential MLE
    let mean = background.iter().sum::<f64>() / background.len() as f64;
    Some(GpdParams {
        xi: 0.0,
        sigma: mean,
        ..fit.params
    })
}

fn fallback(list: &RankedList, name: &str, reason: &str, u: f64, alpha: f64) -> Result<TruncationResult, TruncationError> {
    let mut result = elbow(list)?;
    result.strategy = name.into();
    result.diagnostics.insert("fallback".into(), "elbow".into());
    result.diagnostics.insert("fallback_reason".into(), reason.into());
    result.diagnostics.insert("u".into(), u.into());
    result.diagnostics.insert("alpha".into(), alpha.into());
    Ok(result)
}

pub fn surprise(list: &RankedList, alpha: f64) -> Result<TruncationResult, TruncationError> {
    non_empty(list)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TruncationError::InvalidParameter("alpha must lie in (0, 1)"));
    }
    let name = if alpha == DEFAULT_ALPHA {
        alloc::string::String::from("surprise")
    } else {
        alloc::format!("surprise:{alpha}")
    };
    let scores = list.scores();
    let mut ascending = scores.clone();
    ascending.reverse();
    let u = quantile_sorted(&ascending, 0.5);

    // scores are descending, so the exceedances form a prefix
    let excesses: Vec<f64> = scores.iter().take_while(|&&s| s > u).map(|s| s - u).collect();
    let m = excesses.len();
    if m < MIN_EXCEEDANCES {
        return fallback(list, &name, "too few exceedances", u, alpha);
    }

    let mut best: Option<(usize, f64, GpdParams)> = None;
    for cut in 1..=m - MIN_BACKGROUND {
        let Some(params) = background_fit(&excesses[cut..]) else {
            continue;
        };
        let p = gpd_survival(excesses[cut - 1], &params);
        if best.is_none_or(|(_, bp, _)| p < bp) {
            best = Some((cut, p, params));
        }
    }
    let Some((cut, p, params)) = best else {
        return fallback(list, &name, "tail fit failed", u, alpha);
    };

    let kept = if p < alpha { cut } else { 1 };
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("realization".into(), "reconstructed tail-fit surprise".into());
    diagnostics.insert("fallback".into(), "none".into());
    diagnostics.insert("u".into(), u.into());
    diagnostics.insert("alpha".into(), alpha.into());
    diagnostics.insert("n_exceedances".into(), m.into());
    diagnostics.insert("xi".into(), params.xi.into());
    diagnostics.insert("sigma".into(), params.sigma.into());
    diagnostics.insert("n_tail".into(), params.n_tail.into());
    diagnostics.insert("best_cut".into(), cut.into());
    diagnostics.insert("survival".into(), p.into());
    diagnostics.insert("significant".into(), (p < alpha).into());
    Ok(TruncationResult::prefix(list, kept, name, diagnostics))
}
