//! Percentile thresholds over structural scores and the three-way routing
//! decision, plus the relation suggestions attached to borderline triples.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::extraction::{CandidateTriple, TripleKey};
use crate::kge::KgeModel;
use crate::ontology::Ontology;

pub const DEFAULT_LOW_PCT: f64 = 25.0;
pub const DEFAULT_HIGH_PCT: f64 = 70.0;
pub const DEFAULT_WARMUP: u32 = 1;
pub const SUGGESTIONS: usize = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ValidationError {
    #[error("no scores to threshold")]
    EmptyScores,
    #[error("score is not a number")]
    NaNScore,
    #[error("percentile {0} outside [0, 100]")]
    BadPercentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub theta_low: f64,
    pub theta_high: f64,
    pub iteration: u32,
    pub low_pct: f64,
    pub high_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Reject,
    Feedback,
    Accept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub triple: TripleKey,
    pub score: f64,
    pub route: Route,
    /// Top alternative relations within the category; absent during warmup.
    pub diagnostics: Option<Vec<(String, f64)>>,
}

/// 1-based nearest rank ⌈p·n/100⌉, clamped to [1, n].
pub fn nearest_rank(p: f64, n: usize) -> usize {
    // p·n is formed before dividing so 70·10/100 stays exactly 7.
    let r = (p * n as f64 / 100.0).ceil() as usize;
    r.clamp(1, n.max(1))
}

/// Value at the nearest rank of an ascending-sorted slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    sorted[nearest_rank(p, sorted.len()) - 1]
}

pub fn sorted_scores(scores: &[f64]) -> Result<Vec<f64>, ValidationError> {
    if scores.is_empty() {
        return Err(ValidationError::EmptyScores);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ValidationError::NaNScore);
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

pub fn compute_thresholds(scores: &[f64], low_pct: f64, high_pct: f64) -> Result<Thresholds, ValidationError> {
    for p in [low_pct, high_pct] {
        if !(0.0..=100.0).contains(&p) {
            return Err(ValidationError::BadPercentile(p));
        }
    }
    let sorted = sorted_scores(scores)?;
    let theta_low = percentile_sorted(&sorted, low_pct.min(high_pct));
    let theta_high = percentile_sorted(&sorted, high_pct.max(low_pct));
    Ok(Thresholds {
        theta_low,
        theta_high,
        iteration: 0,
        low_pct,
        high_pct,
    })
}

pub fn route(s: f64, th: &Thresholds) -> Route {
    if s >= th.theta_high {
        Route::Accept
    } else if s >= th.theta_low {
        Route::Feedback
    } else {
        Route::Reject
    }
}

/// Relation suggestions for a Feedback triple: none while `iteration <=
/// warmup`, otherwise the top three of its category minus the original.
pub fn diagnose_with(
    triple: &CandidateTriple,
    m: &KgeModel,
    o: &Ontology,
    iteration: u32,
    warmup: u32,
    h: &[f64],
    t: &[f64],
) -> Option<Vec<(String, f64)>> {
    if iteration <= warmup {
        return None;
    }
    let ranked = m.rank_relations_with(h, t, &triple.category, o, usize::MAX).ok()?;
    Some(
        ranked
            .into_iter()
            .filter(|(r, _)| r != &triple.relation)
            .take(SUGGESTIONS)
            .collect(),
    )
}

/// As [`diagnose_with`] using the model's own rows; `None` if either entity is unindexed.
pub fn diagnose(triple: &CandidateTriple, m: &KgeModel, o: &Ontology, iteration: u32, warmup: u32) -> Option<Vec<(String, f64)>> {
    let h = m.entity_vector(&triple.head).ok()?;
    let t = m.entity_vector(&triple.tail).ok()?;
    diagnose_with(triple, m, o, iteration, warmup, h, t)
}

pub fn write_routing_report(path: impl AsRef<Path>, decisions: &[RoutingDecision]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for d in decisions {
        serde_json::to_writer(&mut f, d)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}
