//! Ranked-list truncation: decide how many of the top-ranked sentences to
//! keep for a query.
//!
//! Every strategy returns a prefix of its input ordering and keeps at least
//! one entry of a non-empty list. Inputs are [`RankedList`]s, whose
//! descending order is checked when they are built.

mod gpd;
mod surprise;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::CaseStudy;
use crate::embedding::{RankedEntry, RankedList, RankingError};

pub use gpd::{
    gpd_fit, gpd_log_likelihood, gpd_survival, pwm_estimate, FitMethod, GpdError, GpdFit, GpdParams,
};
pub use surprise::{surprise, DEFAULT_ALPHA};

/// Default autocut line-deviation tolerance, as a fraction of the score range.
pub const DEFAULT_JUMP_TOLERANCE: f64 = 0.1;

/// Margin below which an autocut* drop is not considered significant.
pub const DROP_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diagnostic {
    Bool(bool),
    Int(i64),
    Num(f64),
    Text(String),
}

impl From<f64> for Diagnostic {
    fn from(v: f64) -> Self {
        Diagnostic::Num(v)
    }
}
impl From<usize> for Diagnostic {
    fn from(v: usize) -> Self {
        Diagnostic::Int(v as i64)
    }
}
impl From<bool> for Diagnostic {
    fn from(v: bool) -> Self {
        Diagnostic::Bool(v)
    }
}
impl From<&str> for Diagnostic {
    fn from(v: &str) -> Self {
        Diagnostic::Text(v.to_string())
    }
}

pub type Diagnostics = BTreeMap<String, Diagnostic>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationResult {
    pub kept_ids: Vec<u32>,
    pub cut_index: usize,
    pub strategy: String,
    pub diagnostics: Diagnostics,
}

impl TruncationResult {
    fn prefix(list: &RankedList, cut_index: usize, strategy: String, diagnostics: Diagnostics) -> Self {
        TruncationResult {
            kept_ids: list.entries()[..cut_index].iter().map(|e| e.id).collect(),
            cut_index,
            strategy,
            diagnostics,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TruncationError {
    EmptyList,
    ZeroK,
    NExceedsK { n: usize, k: usize },
    InvalidParameter(&'static str),
    Ranking(RankingError),
    Reranker(String),
    UnknownStrategy(String),
}

impl fmt::Display for TruncationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruncationError::EmptyList => f.write_str("empty ranked list"),
            TruncationError::ZeroK => f.write_str("k must be at least 1"),
            TruncationError::NExceedsK { n, k } => write!(f, "n = {n} exceeds k = {k}"),
            TruncationError::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
            TruncationError::Ranking(e) => write!(f, "{e}"),
            TruncationError::Reranker(msg) => write!(f, "reranker failed: {msg}"),
            TruncationError::UnknownStrategy(s) => write!(
                f,
                "unknown strategy {s:?} (expected fixed:<k>, rerank:<k>:<n>, autocut[:<tol>], autocut-star, elbow, surprise[:<alpha>])"
            ),
        }
    }
}

impl core::error::Error for TruncationError {}

impl From<RankingError> for TruncationError {
    fn from(e: RankingError) -> Self {
        TruncationError::Ranking(e)
    }
}

fn non_empty(list: &RankedList) -> Result<(), TruncationError> {
    if list.is_empty() {
        Err(TruncationError::EmptyList)
    } else {
        Ok(())
    }
}

pub fn fixed_k(list: &RankedList, k: usize) -> Result<TruncationResult, TruncationError> {
    if k == 0 {
        return Err(TruncationError::ZeroK);
    }
    let cut = k.min(list.len());
    Ok(TruncationResult::prefix(
        list,
        cut,
        alloc::format!("fixed:{k}"),
        Diagnostics::new(),
    ))
}

/// One candidate handed to a [`Reranker`].
#[derive(Clone, Copy, Debug)]
pub struct RerankCandidate<'a> {
    pub id: u32,
    pub text: &'a str,
    pub score: f64,
}

/// Second-stage scorer over `(query, sentence text)`.
pub trait Reranker: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, query: &str, candidate: RerankCandidate<'_>) -> Result<f64, String>;
}

/// Keeps the first-stage score.
#[derive(Clone, Copy, Debug, Default)]
pub struct PassThrough;

impl Reranker for PassThrough {
    fn name(&self) -> &str {
        "pass-through"
    }
    fn score(&self, _query: &str, candidate: RerankCandidate<'_>) -> Result<f64, String> {
        Ok(candidate.score)
    }
}

/// Re-scores the first `k` entries and re-sorts them with the ranking tie rule.
pub fn rerank(
    list: &RankedList,
    case: &CaseStudy,
    query: &str,
    reranker: &dyn Reranker,
    k: usize,
) -> Result<RankedList, TruncationError> {
    if k == 0 {
        return Err(TruncationError::ZeroK);
    }
    let mut entries = Vec::with_capacity(k.min(list.len()));
    for e in list.entries().iter().take(k) {
        let text = case.sentence(e.id).map_or("", |s| s.text.as_str());
        let score = reranker
            .score(query, RerankCandidate { id: e.id, text, score: e.score })
            .map_err(TruncationError::Reranker)?;
        entries.push(RankedEntry { id: e.id, score });
    }
    Ok(RankedList::from_unsorted(list.case_id(), entries)?)
}

/// Fixed-k retrieval followed by re-ranking; keeps the top `n` of the
/// re-sorted first `k`.
pub fn rerank_then_cut(
    list: &RankedList,
    case: &CaseStudy,
    query: &str,
    reranker: &dyn Reranker,
    k: usize,
    n: usize,
) -> Result<TruncationResult, TruncationError> {
    if n == 0 {
        return Err(TruncationError::ZeroK);
    }
    if n > k {
        return Err(TruncationError::NExceedsK { n, k });
    }
    let reranked = rerank(list, case, query, reranker, k)?;
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("reranker".into(), reranker.name().into());
    diagnostics.insert(
        "reranked_order".into(),
        Diagnostic::Text(join_ids(&reranked.ids())),
    );
    Ok(TruncationResult::prefix(
        &reranked,
        n.min(reranked.len()),
        alloc::format!("rerank:{k}:{n}"),
        diagnostics,
    ))
}

fn join_ids(ids: &[u32]) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&id.to_string());
    }
    s
}

fn keep_all(list: &RankedList, strategy: String, reason: &str) -> TruncationResult {
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("reason".into(), reason.into());
    TruncationResult::prefix(list, list.len(), strategy, diagnostics)
}

/// Cuts before the first score that falls below the straight line from the
/// first to the last score by more than `jump_tolerance` of the score range.
pub fn autocut(list: &RankedList, jump_tolerance: f64) -> Result<TruncationResult, TruncationError> {
    non_empty(list)?;
    if !(jump_tolerance > 0.0 && jump_tolerance.is_finite()) {
        return Err(TruncationError::InvalidParameter("jump tolerance must be positive"));
    }
    let name = if jump_tolerance == DEFAULT_JUMP_TOLERANCE {
        "autocut".to_string()
    } else {
        alloc::format!("autocut:{jump_tolerance}")
    };
    let s = list.scores();
    let n = s.len();
    let (first, last) = (s[0], s[n - 1]);
    if n <= 2 {
        return Ok(keep_all(list, name, "n <= 2"));
    }
    if first == last {
        return Ok(keep_all(list, name, "constant scores"));
    }
    let range = first - last;
    let slack = jump_tolerance * range;
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("jump_tolerance".into(), jump_tolerance.into());
    for (i, &score) in s.iter().enumerate().skip(1) {
        let line = first - range * i as f64 / (n - 1) as f64;
        if score < line - slack {
            diagnostics.insert("divergence_index".into(), (i + 1).into());
            return Ok(TruncationResult::prefix(list, i, name, diagnostics));
        }
    }
    diagnostics.insert("divergence_index".into(), "none".into());
    Ok(TruncationResult::prefix(list, n, name, diagnostics))
}

/// Cuts before the first consecutive drop exceeding the mean drop by more
/// than two population standard deviations of all drops.
pub fn autocut_star(list: &RankedList) -> Result<TruncationResult, TruncationError> {
    non_empty(list)?;
    let name = "autocut-star".to_string();
    let s = list.scores();
    let n = s.len();
    if n <= 2 {
        return Ok(keep_all(list, name, "n <= 2"));
    }
    let drops: Vec<f64> = s.windows(2).map(|w| w[0] - w[1]).collect();
    let m = drops.len() as f64;
    let mean = drops.iter().sum::<f64>() / m;
    let sd = libm::sqrt(drops.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / m);
    let threshold = mean + 2.0 * sd;
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("mean_drop".into(), mean.into());
    diagnostics.insert("sd_drop".into(), sd.into());
    diagnostics.insert("threshold".into(), threshold.into());
    match drops.iter().position(|&d| d > threshold + DROP_EPSILON) {
        Some(j) => {
            // drop j sits between entries j and j + 1 (0-based)
            diagnostics.insert("drop_index".into(), (j + 2).into());
            Ok(TruncationResult::prefix(list, j + 1, name, diagnostics))
        }
        None => {
            diagnostics.insert("drop_index".into(), "none".into());
            Ok(TruncationResult::prefix(list, n, name, diagnostics))
        }
    }
}

/// Knee of the score curve: with ranks and scores min-max normalized to
/// `[0, 1]`, keeps up to the point farthest from the chord joining the
/// first and last points (earliest on ties).
pub fn elbow(list: &RankedList) -> Result<TruncationResult, TruncationError> {
    non_empty(list)?;
    let name = "elbow".to_string();
    let s = list.scores();
    let n = s.len();
    if n <= 2 {
        return Ok(keep_all(list, name, "n <= 2"));
    }
    let (hi, lo) = (s[0], s[n - 1]);
    if hi == lo {
        return Ok(keep_all(list, name, "constant scores"));
    }
    // chord runs from (0, 1) to (1, 0): x + y - 1 = 0
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &score) in s.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        let y = (score - lo) / (hi - lo);
        let d = libm::fabs(x + y - 1.0) / core::f64::consts::SQRT_2;
        if d > best.1 {
            best = (i, d);
        }
    }
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("elbow_position".into(), (best.0 + 1).into());
    diagnostics.insert("chord_distance".into(), best.1.into());
    Ok(TruncationResult::prefix(list, best.0 + 1, name, diagnostics))
}

/// Strategy selection, as written on the command line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    Fixed { k: usize },
    Rerank { k: usize, n: usize },
    Autocut { jump_tolerance: f64 },
    AutocutStar,
    Elbow,
    Surprise { alpha: f64 },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Surprise { alpha: DEFAULT_ALPHA }
    }
}

impl Strategy {
    pub fn apply(
        &self,
        list: &RankedList,
        case: &CaseStudy,
        query: &str,
        reranker: &dyn Reranker,
    ) -> Result<TruncationResult, TruncationError> {
        match *self {
            Strategy::Fixed { k } => fixed_k(list, k),
            Strategy::Rerank { k, n } => rerank_then_cut(list, case, query, reranker, k, n),
            Strategy::Autocut { jump_tolerance } => autocut(list, jump_tolerance),
            Strategy::AutocutStar => autocut_star(list),
            Strategy::Elbow => elbow(list),
            Strategy::Surprise { alpha } => surprise(list, alpha),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Strategy::Fixed { k } => write!(f, "fixed:{k}"),
            Strategy::Rerank { k, n } => write!(f, "rerank:{k}:{n}"),
            Strategy::Autocut { jump_tolerance } if jump_tolerance == DEFAULT_JUMP_TOLERANCE => {
                f.write_str("autocut")
            }
            Strategy::Autocut { jump_tolerance } => write!(f, "autocut:{jump_tolerance}"),
            Strategy::AutocutStar => f.write_str("autocut-star"),
            Strategy::Elbow => f.write_str("elbow"),
            Strategy::Surprise { alpha } if alpha == DEFAULT_ALPHA => f.write_str("surprise"),
            Strategy::Surprise { alpha } => write!(f, "surprise:{alpha}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = TruncationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || TruncationError::UnknownStrategy(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |p: &str| p.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(unknown);
        let real = |p: &str| p.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(unknown);
        let strategy = match parts.as_slice() {
            ["fixed", k] => Strategy::Fixed { k: int(k)? },
            ["rerank", k, n] => {
                let (k, n) = (int(k)?, int(n)?);
                if n > k {
                    return Err(TruncationError::NExceedsK { n, k });
                }
                Strategy::Rerank { k, n }
            }
            ["autocut"] => Strategy::Autocut { jump_tolerance: DEFAULT_JUMP_TOLERANCE },
            ["autocut", t] => {
                let t = real(t)?;
                if t <= 0.0 {
                    return Err(unknown());
                }
                Strategy::Autocut { jump_tolerance: t }
            }
            ["autocut-star"] | ["autocut*"] => Strategy::AutocutStar,
            ["elbow"] => Strategy::Elbow,
            ["surprise"] => Strategy::Surprise { alpha: DEFAULT_ALPHA },
            ["surprise", a] => {
                let a = real(a)?;
                if !(a > 0.0 && a < 1.0) {
                    return Err(unknown());
                }
                Strategy::Surprise { alpha: a }
            }
            _ => return Err(unknown()),
        };
        Ok(strategy)
    }
}
