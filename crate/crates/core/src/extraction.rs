//! Hierarchical extraction over chunks: prompt, parse, evidence guard,
//! category-membership validation and out-of-schema remapping.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{chunk_document, Chunk, CorpusError, Document, DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE};
use crate::llm::{
    build_extraction_prompt, build_flat_prompt, build_remap_prompt, default_demos, parse_tuples, Demo, Gateway,
    GatewayError, ParseDiagnostic, PromptConfigError, PromptOptions, RawTuple,
};
use crate::ontology::Ontology;
use crate::util::parallel_map;

/// Confidence below which a triple is reviewed first during feedback.
pub const PRIORITY_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripleStatus {
    Pending,
    Accepted,
    Feedback,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub chunk: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripleKey {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl TripleKey {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

impl std::fmt::Display for TripleKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub head_type: String,
    pub tail_type: String,
    /// True when the type came from relation constraints rather than the alias table.
    pub head_type_inferred: bool,
    pub tail_type_inferred: bool,
    pub evidence: String,
    pub category: String,
    pub confidence: f64,
    pub sources: Vec<Provenance>,
    pub retries: u32,
    pub status: TripleStatus,
}

impl CandidateTriple {
    pub fn key(&self) -> TripleKey {
        TripleKey::new(&self.head, &self.relation, &self.tail)
    }

    /// Low self-assessed confidence: reviewed first in feedback ordering.
    pub fn priority(&self) -> bool {
        self.confidence < PRIORITY_CONFIDENCE
    }
}

/// Trim, NFC-normalize, then substitute through the alias table. Returns the
/// canonical mention and its type when the alias table knows it.
pub fn canonicalize(o: &Ontology, mention: &str) -> (String, Option<String>) {
    let normalized: String = mention.trim().nfc().collect();
    match o.lookup_alias(&normalized) {
        Some(entry) => (entry.canonical.clone(), Some(entry.entity_type.clone())),
        None => (normalized, None),
    }
}

/// Build a typed candidate for `relation`, or `None` if the entity types
/// violate the relation's domain/range.
pub fn make_candidate(o: &Ontology, raw: &RawTuple, relation: &str, category: &str, sources: Vec<Provenance>) -> Option<CandidateTriple> {
    let (head, h_known) = canonicalize(o, &raw.head);
    let (tail, t_known) = canonicalize(o, &raw.tail);
    if head.is_empty() || tail.is_empty() {
        return None;
    }
    let head_type_inferred = h_known.is_none();
    let tail_type_inferred = t_known.is_none();
    let head_type = h_known.or_else(|| o.most_general_type(relation, true).map(String::from))?;
    let tail_type = t_known.or_else(|| o.most_general_type(relation, false).map(String::from))?;
    if !o.check_schema(&head_type, relation, &tail_type).ok()? {
        return None;
    }
    Some(CandidateTriple {
        head,
        relation: relation.to_string(),
        tail,
        head_type,
        tail_type,
        head_type_inferred,
        tail_type_inferred,
        evidence: raw.evidence.clone(),
        category: category.to_string(),
        confidence: raw.confidence,
        sources,
        retries: 0,
        status: TripleStatus::Pending,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub demos: Vec<Demo>,
    pub prompt: PromptOptions,
    /// Single-level prompt without the category-first step (ablation).
    pub flat_prompt: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            chunk_overlap: DEFAULT_CHUNK_OVERLAP,
            demos: default_demos(),
            prompt: PromptOptions::default(),
            flat_prompt: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// A tuple tagged with where it came from and its position for stable ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcedTuple {
    pub tuple: RawTuple,
    pub source: Provenance,
    pub order: (usize, usize, usize),
}

#[derive(Debug, Clone, Default)]
pub struct ChunkExtraction {
    pub tuples: Vec<RawTuple>,
    /// Tuples whose evidence is not a verbatim span of the chunk.
    pub flagged: Vec<RawTuple>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

#[derive(Debug, Clone, Default)]
pub struct MembershipSplit {
    pub candidates: Vec<(CandidateTriple, (usize, usize, usize))>,
    pub oos: Vec<SourcedTuple>,
    /// In-category relations whose entity types break domain/range.
    pub schema_violations: Vec<SourcedTuple>,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusExtraction {
    pub candidates: Vec<CandidateTriple>,
    pub failed_chunks: Vec<Provenance>,
    pub flagged: usize,
    pub oos: usize,
    pub remapped: usize,
    pub schema_violations: usize,
    pub diagnostics: usize,
}

pub struct Extractor<'a> {
    ontology: &'a Ontology,
    gateway: &'a Gateway,
    config: &'a ExtractionConfig,
}

impl<'a> Extractor<'a> {
    pub fn new(ontology: &'a Ontology, gateway: &'a Gateway, config: &'a ExtractionConfig) -> Self {
        Self {
            ontology,
            gateway,
            config,
        }
    }

    /// One prompt per chunk; evidence must be a verbatim substring of the chunk.
    pub fn extract_chunk(&self, chunk: &Chunk) -> Result<ChunkExtraction, ExtractionError> {
        if chunk.text.trim().is_empty() {
            return Ok(ChunkExtraction::default());
        }
        let req = if self.config.flat_prompt {
            build_flat_prompt(chunk, self.ontology, &self.config.demos)?
        } else {
            build_extraction_prompt(chunk, self.ontology, &self.config.demos, &self.config.prompt)?
        };
        let reply = self.gateway.complete(&req)?;
        let (tuples, diagnostics) = parse_tuples(&reply);
        let (tuples, flagged): (Vec<_>, Vec<_>) = tuples
            .into_iter()
            .partition(|t| !t.evidence.is_empty() && chunk.text.contains(t.evidence.as_str()));
        for f in &flagged {
            tracing::debug!(head = %f.head, relation = %f.relation, tail = %f.tail, "evidence not found in chunk");
        }
        Ok(ChunkExtraction {
            tuples,
            flagged,
            diagnostics,
        })
    }

    /// Split into in-category candidates and out-of-schema tuples.
    pub fn validate_category_membership(&self, tuples: Vec<SourcedTuple>) -> MembershipSplit {
        let mut split = MembershipSplit::default();
        for st in tuples {
            let category = self.ontology.resolve_category(&st.tuple.category);
            let Some(category) = category.filter(|c| self.ontology.in_category(&st.tuple.relation, &c.id)) else {
                split.oos.push(st);
                continue;
            };
            match make_candidate(self.ontology, &st.tuple, &st.tuple.relation, &category.id, vec![st.source.clone()]) {
                Some(c) => split.candidates.push((c, st.order)),
                None => split.schema_violations.push(st),
            }
        }
        split
    }

    /// Ask the model to map an out-of-schema relation onto its category's
    /// relations. Anything other than an in-category id drops the tuple.
    pub fn remap_oos(&self, oos: &SourcedTuple) -> Result<Option<CandidateTriple>, ExtractionError> {
        let Some(category) = self.ontology.resolve_category(&oos.tuple.category) else {
            return Ok(None);
        };
        let allowed = self.ontology.relations_in_category(&category.id).unwrap_or_default();
        if allowed.is_empty() {
            return Ok(None);
        }
        let reply = self.gateway.complete(&build_remap_prompt(&oos.tuple, &allowed))?;
        let Some(relation) = parse_relation_reply(&reply, allowed.iter().map(|r| r.id.as_str())) else {
            return Ok(None);
        };
        Ok(make_candidate(self.ontology, &oos.tuple, &relation, &category.id, vec![oos.source.clone()]))
    }

    /// Extract, validate and remap over all chunks of all documents, then
    /// merge duplicates keeping the highest confidence and every source.
    /// Failing chunks are logged and skipped.
    pub fn extract_corpus(&self, docs: &[Document]) -> Result<CorpusExtraction, ExtractionError> {
        let mut chunks = Vec::new();
        for (doc_ord, d) in docs.iter().enumerate() {
            for c in chunk_document(d, self.config.chunk_size, self.config.chunk_overlap)? {
                chunks.push((doc_ord, c));
            }
        }
        let workers = self.gateway.max_in_flight();
        let results = parallel_map(&chunks, workers, |(_, c)| self.extract_chunk(c));

        let mut out = CorpusExtraction::default();
        let mut sourced = Vec::new();
        for ((doc_ord, chunk), res) in chunks.iter().zip(results) {
            let source = Provenance {
                doc_id: chunk.doc_id.clone(),
                chunk: chunk.index,
            };
            match res {
                Ok(ex) => {
                    out.flagged += ex.flagged.len();
                    out.diagnostics += ex.diagnostics.len();
                    for (i, t) in ex.tuples.into_iter().enumerate() {
                        sourced.push(SourcedTuple {
                            tuple: t,
                            source: source.clone(),
                            order: (*doc_ord, chunk.index, i),
                        });
                    }
                }
                Err(ExtractionError::Gateway(e)) => {
                    tracing::warn!(doc = %chunk.doc_id, chunk = chunk.index, error = %e, "chunk extraction failed");
                    out.failed_chunks.push(source);
                }
                Err(e) => return Err(e),
            }
        }

        let split = self.validate_category_membership(sourced);
        out.oos = split.oos.len();
        out.schema_violations = split.schema_violations.len();
        let mut ordered = split.candidates;
        let remaps = parallel_map(&split.oos, workers, |t| self.remap_oos(t));
        for (t, r) in split.oos.iter().zip(remaps) {
            match r {
                Ok(Some(c)) => {
                    out.remapped += 1;
                    ordered.push((c, t.order));
                }
                Ok(None) => {}
                Err(e) => tracing::warn!(error = %e, "remap failed, dropping tuple"),
            }
        }
        ordered.sort_by_key(|a| a.1);
        out.candidates = merge_duplicates(ordered.into_iter().map(|(c, _)| c));
        Ok(out)
    }
}

/// Merge candidates sharing (head, relation, tail): keep the first
/// occurrence's position, the highest-confidence record's fields and the
/// union of sources.
pub fn merge_duplicates(cands: impl IntoIterator<Item = CandidateTriple>) -> Vec<CandidateTriple> {
    let mut out: Vec<CandidateTriple> = Vec::new();
    let mut pos: HashMap<TripleKey, usize> = HashMap::new();
    for c in cands {
        match pos.get(&c.key()) {
            Some(&i) => {
                let existing = &mut out[i];
                let mut sources = std::mem::take(&mut existing.sources);
                for s in &c.sources {
                    if !sources.contains(s) {
                        sources.push(s.clone());
                    }
                }
                if c.confidence > existing.confidence {
                    *existing = c;
                }
                existing.sources = sources;
            }
            None => {
                pos.insert(c.key(), out.len());
                out.push(c);
            }
        }
    }
    out
}

/// First allowed relation id named in a short reply, ignoring quotes and
/// punctuation; `None` for "none"/"no suitable match" or anything unknown.
pub fn parse_relation_reply<'r>(reply: &str, allowed: impl IntoIterator<Item = &'r str>) -> Option<String> {
    let allowed: Vec<&str> = allowed.into_iter().collect();
    reply
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .find(|w| allowed.contains(w))
        .map(String::from)
}

pub fn write_candidates_jsonl(path: impl AsRef<Path>, cands: &[CandidateTriple]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in cands {
        serde_json::to_writer(&mut f, c)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

pub fn read_candidates_jsonl(path: impl AsRef<Path>) -> std::io::Result<Vec<CandidateTriple>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}
