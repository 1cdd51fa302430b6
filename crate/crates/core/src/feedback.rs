//! Two feedback channels between the validator and the extractor.
//!
//! Channel 1 sends borderline triples back to the model with evidence and
//! structural hints; Channel 2 splits scored triples into tiers that decide
//! what augments the embedding model's training set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{KeywordLexicon, SentenceIndex};
use crate::extraction::{canonicalize, CandidateTriple, TripleKey, TripleStatus};
use crate::llm::parse::{first_json_object, text_field};
use crate::llm::{CallTag, ChatRequest, RawTuple};
use crate::ontology::Ontology;
use crate::validation::{percentile_sorted, sorted_scores};

pub const RETRY_LIMIT: u32 = 3;
pub const DEFAULT_EVIDENCE_K: usize = 3;
pub const DEFAULT_BUDGET: usize = 200;

pub const FEEDBACK_SYSTEM: &str =
    "You review knowledge graph triples extracted from Sustainable Development Goal reports.";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeedbackError {
    #[error("no scored triples to split into tiers")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPacket {
    pub triple: CandidateTriple,
    pub score: f64,
    pub threshold: f64,
    /// `None` during cold-start protection.
    pub alternatives: Option<Vec<(String, f64)>>,
    pub evidence: Vec<String>,
    pub attempt: u32,
}

impl FeedbackPacket {
    /// Packet for the next attempt, with up to `k` evidence sentences.
    pub fn build(
        triple: &CandidateTriple,
        score: f64,
        threshold: f64,
        alternatives: Option<Vec<(String, f64)>>,
        index: &SentenceIndex,
        keywords: &KeywordLexicon,
        k: usize,
    ) -> Self {
        let kw = keywords.get(&triple.category).cloned().unwrap_or_default();
        let evidence = index
            .retrieve_evidence(&triple.head, &triple.tail, &kw, k)
            .into_iter()
            .map(|s| s.text)
            .collect();
        Self {
            triple: triple.clone(),
            score,
            threshold,
            alternatives,
            evidence,
            attempt: triple.retries + 1,
        }
    }
}

pub fn subject_of(key: &TripleKey) -> String {
    format!("{}|{}|{}", key.head, key.relation, key.tail)
}

/// Re-extraction prompt: the triple, its structural score against the
/// threshold, embedding-suggested alternatives, numbered evidence and a
/// four-step reasoning instruction.
pub fn build_cot_prompt(p: &FeedbackPacket, o: &Ontology) -> ChatRequest {
    let t = &p.triple;
    let mut u = String::new();
    u.push_str("This triple was flagged by the structural validator and needs a second look.\n\n");
    let _ = writeln!(u, "Original triple: ({}, {}, {})", t.head, t.relation, t.tail);
    let _ = writeln!(u, "Category: {}", t.category);
    let _ = writeln!(u, "Structural score: {:.4} (threshold: {:.4})", p.score, p.threshold);
    if let Some(alts) = &p.alternatives {
        u.push_str("\nAlternative relations ranked by the embedding model:\n");
        for (i, (r, s)) in alts.iter().enumerate() {
            let _ = writeln!(u, "{}. {r} ({s:.4})", i + 1);
        }
    }
    u.push_str("\nEvidence:\n");
    if p.evidence.is_empty() {
        u.push_str("(none found)\n");
    }
    for (i, e) in p.evidence.iter().enumerate() {
        let _ = writeln!(u, "E{}: \"{e}\"", i + 1);
    }
    let allowed: Vec<&str> = o
        .relations_in_category(&t.category)
        .unwrap_or_default()
        .iter()
        .map(|r| r.id.as_str())
        .collect();
    let _ = writeln!(u, "\nRelations allowed in this category: {}", allowed.join(", "));
    u.push_str(
        "\nWork through it step by step:\n\
         1. Does the evidence support the original relation?\n\
         2. Is one of the alternative relations implied by the evidence?\n\
         3. Do the head and tail fit the relation's domain and range?\n\
         4. Output: the corrected triple as JSON {\"head\": ..., \"relation\": ..., \"tail\": ...}, or \"reject\".",
    );
    ChatRequest::new(CallTag::Feedback, FEEDBACK_SYSTEM, u).with_subject(subject_of(&t.key()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum FeedbackOutcome {
    Corrected { triple: CandidateTriple },
    Confirmed,
    Rejected { reason: String },
}

impl FeedbackOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Corrected { .. } => "corrected",
            Self::Confirmed => "confirmed",
            Self::Rejected { .. } => "rejected",
        }
    }
}

fn rejected(reason: impl Into<String>) -> FeedbackOutcome {
    FeedbackOutcome::Rejected { reason: reason.into() }
}

/// Interpret a Channel-1 reply. A JSON triple identical to the original
/// confirms it; a different in-category, schema-valid triple is a
/// correction carrying over the retry count; anything else rejects.
pub fn process_feedback_reply(reply: &str, original: &CandidateTriple, o: &Ontology) -> FeedbackOutcome {
    let Some(obj) = first_json_object(reply) else {
        if reply.to_lowercase().contains("reject") {
            return rejected("model rejected the triple");
        }
        tracing::debug!(triple = %original.key(), "unparseable feedback reply");
        return rejected("unparseable reply");
    };
    let get = |names: &[&str]| text_field(&obj, names);
    let (Some(head), Some(relation), Some(tail)) = (
        get(&["head", "h", "subject"]),
        get(&["relation", "r", "predicate"]),
        get(&["tail", "t", "object"]),
    ) else {
        return rejected("reply JSON lacks head/relation/tail");
    };
    if !o.in_category(&relation, &original.category) {
        return rejected(format!("`{relation}` is outside category {}", original.category));
    }
    let (h, _) = canonicalize(o, &head);
    let (t, _) = canonicalize(o, &tail);
    if TripleKey::new(&h, &relation, &t) == original.key() {
        return FeedbackOutcome::Confirmed;
    }
    let raw = RawTuple {
        head,
        relation: relation.clone(),
        tail,
        evidence: get(&["evidence", "e"]).unwrap_or_else(|| original.evidence.clone()),
        category: original.category.clone(),
        confidence: original.confidence,
    };
    match crate::extraction::make_candidate(o, &raw, &relation, &original.category, original.sources.clone()) {
        Some(mut c) => {
            c.retries = original.retries;
            FeedbackOutcome::Corrected { triple: c }
        }
        None => rejected("correction violates domain/range"),
    }
}

/// True while the triple may be sent again; at the limit it is marked
/// permanently rejected.
pub fn enforce_retry_limit(t: &mut CandidateTriple) -> bool {
    if t.retries < RETRY_LIMIT {
        return true;
    }
    t.status = TripleStatus::Rejected;
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TierConfig {
    /// Share of the score distribution sent straight to training.
    pub top_pct: f64,
    /// Share dropped at the bottom.
    pub bottom_pct: f64,
}

impl Default for TierConfig {
    fn default() -> Self {
        Self {
            top_pct: 30.0,
            bottom_pct: 25.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Channel2Batch {
    pub direct: Vec<TripleKey>,
    /// Middle tier in verification order.
    pub middle: Vec<TripleKey>,
    /// Middle-tier triples the model confirmed or corrected.
    pub verified: Vec<TripleKey>,
    pub rejected: Vec<TripleKey>,
    pub uncertainty: BTreeMap<TripleKey, f64>,
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn uncertainty(scores: &[f64]) -> f64 {
    let n = scores.len();
    if n < 2 {
        return 0.0;
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Verification order: uncertainty descending, low-confidence flag first,
/// confidence ascending, then the triple key.
pub fn verification_order(items: &mut [(&CandidateTriple, f64)], unc: &BTreeMap<TripleKey, f64>) {
    let u = |t: &CandidateTriple| unc.get(&t.key()).copied().unwrap_or(0.0);
    items.sort_by(|(a, _), (b, _)| {
        u(b).total_cmp(&u(a))
            .then(b.priority().cmp(&a.priority()))
            .then(a.confidence.total_cmp(&b.confidence))
            .then(a.key().cmp(&b.key()))
    });
}

/// Split by score: strictly above the (100−top) percentile is direct,
/// strictly below the bottom percentile is dropped, the rest is the middle
/// tier in verification order.
pub fn select_channel2(
    scored: &[(&CandidateTriple, f64)],
    tiers: &TierConfig,
    unc: &BTreeMap<TripleKey, f64>,
) -> Result<Channel2Batch, FeedbackError> {
    let scores: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
    let sorted = sorted_scores(&scores).map_err(|_| FeedbackError::EmptyInput)?;
    let top = percentile_sorted(&sorted, 100.0 - tiers.top_pct);
    let bottom = percentile_sorted(&sorted, tiers.bottom_pct);
    let mut batch = Channel2Batch {
        uncertainty: unc.clone(),
        ..Channel2Batch::default()
    };
    let mut middle = Vec::new();
    for &(t, s) in scored {
        if s > top {
            batch.direct.push(t.key());
        } else if s < bottom {
            batch.rejected.push(t.key());
        } else {
            middle.push((t, s));
        }
    }
    verification_order(&mut middle, unc);
    batch.middle = middle.into_iter().map(|(t, _)| t.key()).collect();
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub iteration: u32,
    pub triple: TripleKey,
    pub attempt: u32,
    pub outcome: String,
    pub prompt_hash: Option<String>,
    pub corrected: Option<TripleKey>,
}

pub fn write_audit_log(path: impl AsRef<Path>, records: &[AuditRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}
