use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::extraction::{CandidateTriple, Provenance, TripleKey};
use crate::feedback::AuditRecord;
use crate::validation::Thresholds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidTriple {
    pub triple: CandidateTriple,
    pub score: f64,
    pub iteration: u32,
    /// Round in which re-validation dropped it, if any.
    pub removed_at: Option<u32>,
}

impl ValidTriple {
    pub fn live_at(&self, round: u32) -> bool {
        self.iteration <= round && self.removed_at.is_none_or(|r| r > round)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub iteration: u32,
    pub pool: usize,
    pub accepted: usize,
    pub feedback: usize,
    pub rejected: usize,
    pub removed: usize,
    pub direct: usize,
    pub confirmed: usize,
    pub corrected: usize,
    pub feedback_calls: usize,
    pub retry_exhausted: usize,
    pub deferred: usize,
    pub valid_total: usize,
    pub growth: f64,
    pub theta_low: Option<f64>,
    pub theta_high: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub t: u32,
    pub max_iterations: u32,
    pub epsilon: f64,
    pub rng_seed: u64,
    /// Every candidate ever seen, with its current status.
    pub candidates: Vec<CandidateTriple>,
    pub seed: Vec<TripleKey>,
    pub valid: Vec<ValidTriple>,
    /// Accumulated embedding training set.
    pub training: Vec<TripleKey>,
    pub thresholds: Vec<Thresholds>,
    pub growth: Vec<f64>,
    pub rounds: Vec<RoundStats>,
    pub converged: bool,
    pub audit: Vec<AuditRecord>,
}

impl PipelineState {
    pub fn live_valid(&self) -> impl Iterator<Item = &ValidTriple> {
        self.valid.iter().filter(|v| v.removed_at.is_none())
    }

    pub fn valid_count(&self) -> usize {
        self.live_valid().count()
    }
}

/// Final graph: entities and validated triples in acceptance order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub entities: Vec<String>,
    pub triples: Vec<GraphTriple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub head_type: String,
    pub tail_type: String,
    pub category: String,
    pub score: f64,
    pub iteration: u32,
    pub evidence: String,
    pub provenance: Vec<Provenance>,
}

impl GraphTriple {
    pub fn key(&self) -> TripleKey {
        TripleKey::new(&self.head, &self.relation, &self.tail)
    }
}

fn provenance_text(p: &[Provenance]) -> String {
    p.iter().map(|s| format!("{}#{}", s.doc_id, s.chunk)).collect::<Vec<_>>().join(";")
}

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

impl KnowledgeGraph {
    pub fn from_state(state: &PipelineState) -> Self {
        let triples: Vec<GraphTriple> = state
            .live_valid()
            .map(|v| GraphTriple {
                head: v.triple.head.clone(),
                relation: v.triple.relation.clone(),
                tail: v.triple.tail.clone(),
                head_type: v.triple.head_type.clone(),
                tail_type: v.triple.tail_type.clone(),
                category: v.triple.category.clone(),
                score: v.score,
                iteration: v.iteration,
                evidence: v.triple.evidence.clone(),
                provenance: v.triple.sources.clone(),
            })
            .collect();
        let mut entities: Vec<String> = triples.iter().flat_map(|t| [t.head.clone(), t.tail.clone()]).collect();
        entities.sort();
        entities.dedup();
        Self { entities, triples }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&serde_json::to_string(t).expect("graph triples serialize"));
            out.push('\n');
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("head\trelation\ttail\tscore\tevidence\tprovenance\n");
        for t in &self.triples {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\t{}\n",
                tsv_field(&t.head),
                tsv_field(&t.relation),
                tsv_field(&t.tail),
                t.score,
                tsv_field(&t.evidence),
                provenance_text(&t.provenance)
            ));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let triples: Vec<GraphTriple> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        let mut entities: Vec<String> = triples.iter().flat_map(|t| [t.head.clone(), t.tail.clone()]).collect();
        entities.sort();
        entities.dedup();
        Ok(Self { entities, triples })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> std::io::Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir.as_ref())?;
        let jsonl = dir.as_ref().join("graph.jsonl");
        let tsv = dir.as_ref().join("graph.tsv");
        fs::write(&jsonl, self.to_jsonl())?;
        fs::write(&tsv, self.to_tsv())?;
        Ok((jsonl, tsv))
    }
}

pub fn iteration_dir(root: &Path, t: u32) -> PathBuf {
    root.join(format!("iter-{t:02}"))
}

/// Latest complete `iter-XX` directory under `root`.
pub fn latest_checkpoint(root: &Path) -> Option<(u32, PathBuf)> {
    let entries = fs::read_dir(root).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let t: u32 = name.strip_prefix("iter-")?.parse().ok()?;
            let p = e.path();
            p.join("state.json").is_file().then_some((t, p))
        })
        .max_by_key(|(t, _)| *t)
}

pub(crate) fn write_state(path: &Path, state: &PipelineState) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, state)?;
    f.write_all(b"\n")
}

pub(crate) fn read_state(path: &Path) -> std::io::Result<PipelineState> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}
