//! Precision/recall and micro/macro F1 against a gold triple set, with exact
//! or embedding-based entity matching, frequency buckets, the per-round
//! convergence table and the human review sample.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::extraction::TripleKey;
use crate::pipeline::{GraphTriple, KnowledgeGraph, PipelineState};
use crate::semantic::{SemanticEncoder, SemanticError};

pub const DEFAULT_SIM_THRESHOLD: f64 = 0.85;
pub const HEAD_MIN: usize = 101;
pub const MEDIUM_MIN: usize = 20;
pub const DEFAULT_REVIEW_SIZE: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("semantic matching needs an encoder")]
    MissingEncoder,
    #[error(transparent)]
    Encoder(#[from] SemanticError),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    Semantic,
}

/// Relations averaged by macro F1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacroScope {
    /// Relations that occur in the gold set.
    Gold,
    /// Every relation passed to [`evaluate`]; absent ones score 0.
    Schema,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub mode: MatchMode,
    pub sim_threshold: f64,
    pub macro_scope: MacroScope,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            mode: MatchMode::Exact,
            sim_threshold: DEFAULT_SIM_THRESHOLD,
            macro_scope: MacroScope::Gold,
        }
    }
}

impl MatchConfig {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn semantic(sim_threshold: f64) -> Self {
        Self {
            mode: MatchMode::Semantic,
            sim_threshold,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Tally {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    fn add(&mut self, o: &Tally) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Result of one-to-one matching: matched (pred, gold) index pairs plus tallies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub total: Tally,
    pub per_relation: BTreeMap<String, Tally>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Head,
    Medium,
    Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: MatchMode,
    pub n_pred: usize,
    pub n_gold: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_relation: BTreeMap<String, RelationScore>,
    /// Micro F1 pooled over the relations of each gold-frequency bucket.
    pub buckets: BTreeMap<Bucket, f64>,
}

/// Trim and NFC-normalize a mention.
pub fn canonical_form(s: &str) -> String {
    s.trim().nfc().collect()
}

fn dedup(triples: &[TripleKey]) -> Vec<TripleKey> {
    let mut seen = BTreeSet::new();
    triples
        .iter()
        .map(|t| TripleKey::new(canonical_form(&t.head), &t.relation, canonical_form(&t.tail)))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Greedy one-to-one matching. Pairs must share the relation; entity
/// similarity is 1 for equal canonical forms, else (semantic mode) the lower
/// of the head and tail cosines. Candidates are consumed by descending
/// similarity, ties by prediction then gold index. Inputs are deduplicated
/// after canonicalization.
pub fn match_triples(
    pred: &[TripleKey],
    gold: &[TripleKey],
    cfg: &MatchConfig,
    enc: Option<&dyn SemanticEncoder>,
) -> Result<Matching, EvalError> {
    let pred = dedup(pred);
    let gold = dedup(gold);
    let vectors = match cfg.mode {
        MatchMode::Exact => BTreeMap::new(),
        MatchMode::Semantic => {
            let enc = enc.ok_or(EvalError::MissingEncoder)?;
            let mut v = BTreeMap::new();
            for m in pred.iter().chain(&gold).flat_map(|t| [&t.head, &t.tail]) {
                if !v.contains_key(m.as_str()) {
                    v.insert(m.as_str(), enc.encode(m)?);
                }
            }
            v
        }
    };
    let sim = |a: &str, b: &str| -> f64 {
        if a == b {
            1.0
        } else if cfg.mode == MatchMode::Semantic {
            cosine(&vectors[a], &vectors[b])
        } else {
            0.0
        }
    };

    let mut gold_by_rel: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, g) in gold.iter().enumerate() {
        gold_by_rel.entry(g.relation.as_str()).or_default().push(j);
    }
    let threshold = match cfg.mode {
        MatchMode::Exact => 1.0,
        MatchMode::Semantic => cfg.sim_threshold,
    };
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for &j in gold_by_rel.get(p.relation.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            let g = &gold[j];
            let s = sim(&p.head, &g.head).min(sim(&p.tail, &g.tail));
            if s >= threshold {
                cands.push((s, i, j));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pred_used = vec![false; pred.len()];
    let mut gold_used = vec![false; gold.len()];
    let mut out = Matching::default();
    for (_, i, j) in cands {
        if !pred_used[i] && !gold_used[j] {
            pred_used[i] = true;
            gold_used[j] = true;
            out.pairs.push((i, j));
        }
    }
    out.pairs.sort_unstable();
    for (i, p) in pred.iter().enumerate() {
        let t = out.per_relation.entry(p.relation.clone()).or_default();
        if pred_used[i] {
            t.tp += 1;
        } else {
            t.fp += 1;
        }
    }
    for (j, g) in gold.iter().enumerate() {
        if !gold_used[j] {
            out.per_relation.entry(g.relation.clone()).or_default().fn_ += 1;
        }
    }
    for t in out.per_relation.values() {
        out.total.add(t);
    }
    Ok(out)
}

/// Head above 100 gold instances, Medium 20..=100, Tail below 20.
pub fn bucket_of(count: usize) -> Bucket {
    if count >= HEAD_MIN {
        Bucket::Head
    } else if count >= MEDIUM_MIN {
        Bucket::Medium
    } else {
        Bucket::Tail
    }
}

pub fn bucket_relations(gold: &[TripleKey]) -> BTreeMap<String, Bucket> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for g in dedup(gold) {
        *counts.entry(g.relation).or_default() += 1;
    }
    counts.into_iter().map(|(r, c)| (r, bucket_of(c))).collect()
}

/// Full report. `schema_relations` is only read for [`MacroScope::Schema`].
pub fn evaluate(
    pred: &[TripleKey],
    gold: &[TripleKey],
    cfg: &MatchConfig,
    enc: Option<&dyn SemanticEncoder>,
    schema_relations: &[String],
) -> Result<EvalReport, EvalError> {
    let m = match_triples(pred, gold, cfg, enc)?;
    let buckets_of = bucket_relations(gold);

    let macro_rel: Vec<&str> = match cfg.macro_scope {
        MacroScope::Gold => buckets_of.keys().map(String::as_str).collect(),
        MacroScope::Schema => schema_relations.iter().map(String::as_str).collect(),
    };
    let macro_f1 = if macro_rel.is_empty() {
        0.0
    } else {
        macro_rel
            .iter()
            .map(|r| m.per_relation.get(*r).map_or(0.0, Tally::f1))
            .sum::<f64>()
            / macro_rel.len() as f64
    };

    let mut pooled: BTreeMap<Bucket, Tally> = BTreeMap::new();
    for (r, b) in &buckets_of {
        if let Some(t) = m.per_relation.get(r) {
            pooled.entry(*b).or_default().add(t);
        }
    }

    Ok(EvalReport {
        mode: cfg.mode,
        n_pred: m.total.tp + m.total.fp,
        n_gold: m.total.tp + m.total.fn_,
        tp: m.total.tp,
        fp: m.total.fp,
        fn_: m.total.fn_,
        precision: m.total.precision(),
        recall: m.total.recall(),
        micro_f1: m.total.f1(),
        macro_f1,
        per_relation: m
            .per_relation
            .iter()
            .map(|(r, t)| {
                (
                    r.clone(),
                    RelationScore {
                        tp: t.tp,
                        fp: t.fp,
                        fn_: t.fn_,
                        f1: t.f1(),
                    },
                )
            })
            .collect(),
        buckets: pooled.into_iter().map(|(b, t)| (b, t.f1())).collect(),
    })
}

impl EvalReport {
    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode       {:?}", self.mode);
        let _ = writeln!(s, "pred/gold  {}/{}", self.n_pred, self.n_gold);
        let _ = writeln!(s, "tp/fp/fn   {}/{}/{}", self.tp, self.fp, self.fn_);
        let _ = writeln!(s, "precision  {:.4}", self.precision);
        let _ = writeln!(s, "recall     {:.4}", self.recall);
        let _ = writeln!(s, "micro F1   {:.4}", self.micro_f1);
        let _ = writeln!(s, "macro F1   {:.4}", self.macro_f1);
        for (b, f) in &self.buckets {
            let _ = writeln!(s, "{:<10} {:.4}", format!("{b:?}"), f);
        }
        let w = self.per_relation.keys().map(|r| r.chars().count()).max().unwrap_or(8).max(8);
        let _ = writeln!(s, "\n{:<w$}  {:>5} {:>5} {:>5} {:>7}", "relation", "tp", "fp", "fn", "f1");
        for (r, t) in &self.per_relation {
            let pad = w - r.chars().count() + r.len();
            let _ = writeln!(s, "{:<pad$}  {:>5} {:>5} {:>5} {:>7.4}", r, t.tp, t.fp, t.fn_, t.f1);
        }
        s
    }
}

/// Reads `{head, relation, tail, ...}` JSON lines; other fields are ignored.
pub fn read_triples(path: impl AsRef<Path>) -> Result<Vec<TripleKey>, EvalError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_triples(&text).map_err(|(line, message)| EvalError::Parse {
        path: path.as_ref().display().to_string(),
        line,
        message,
    })
}

pub fn parse_triples(text: &str) -> Result<Vec<TripleKey>, (usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str::<TripleKey>(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub round: u32,
    pub validated: usize,
    /// Percent of validated triples matched in gold.
    pub precision: f64,
}

/// Per-round validated count and precision of the graph as it stood after
/// each round (removals under re-validation included).
pub fn convergence_report(
    state: &PipelineState,
    gold: &[TripleKey],
    cfg: &MatchConfig,
    enc: Option<&dyn SemanticEncoder>,
) -> Result<Vec<ConvergenceRow>, EvalError> {
    state
        .rounds
        .iter()
        .map(|r| {
            let live: Vec<TripleKey> = state
                .valid
                .iter()
                .filter(|v| v.live_at(r.iteration))
                .map(|v| v.triple.key())
                .collect();
            let m = match_triples(&live, gold, cfg, enc)?;
            Ok(ConvergenceRow {
                round: r.iteration,
                validated: live.len(),
                precision: 100.0 * m.total.precision(),
            })
        })
        .collect()
}

const CONVERGENCE_HEADER: &str = "round  validated  precision(%)";

pub fn render_convergence(rows: &[ConvergenceRow]) -> String {
    let mut s = format!("{CONVERGENCE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{:>5}  {:>9}  {:>12.1}", r.round, r.validated, r.precision);
    }
    s
}

pub fn parse_convergence(text: &str) -> Result<Vec<ConvergenceRow>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CONVERGENCE_HEADER => {}
        other => return Err(format!("bad header {other:?}")),
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let [round, validated, precision] = f[..] else {
                return Err(format!("expected 3 columns: {l:?}"));
            };
            Ok(ConvergenceRow {
                round: round.parse().map_err(|e| format!("{l:?}: {e}"))?,
                validated: validated.parse().map_err(|e| format!("{l:?}: {e}"))?,
                precision: precision.parse().map_err(|e| format!("{l:?}: {e}"))?,
            })
        })
        .collect()
}

/// Seeded sample of `n` graph triples (all if fewer), in graph order.
pub fn review_sample(graph: &KnowledgeGraph, n: usize, seed: u64) -> Vec<GraphTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = n.min(graph.triples.len());
    let mut idx = rand::seq::index::sample(&mut rng, graph.triples.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| graph.triples[i].clone()).collect()
}

/// Review sheet with empty judgement columns.
pub fn review_sheet(rows: &[GraphTriple]) -> String {
    let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
    let mut s = String::from("id\thead\trelation\ttail\tscore\tevidence\tcorrect\tnote\n");
    for (i, t) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.6}\t{}\t\t",
            i + 1,
            clean(&t.head),
            clean(&t.relation),
            clean(&t.tail),
            t.score,
            clean(&t.evidence)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::TableEncoder;
    use proptest::prelude::*;

    fn k(h: &str, r: &str, t: &str) -> TripleKey {
        TripleKey::new(h, r, t)
    }

    #[test]
    fn identity() {
        let g = [k("a", "r", "b")];
        let rep = evaluate(&g, &g, &MatchConfig::exact(), None, &[]).unwrap();
        assert_eq!((rep.tp, rep.fp, rep.fn_), (1, 0, 0));
        assert_eq!((rep.precision, rep.recall, rep.micro_f1, rep.macro_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_counted_confusion() {
        let gold = [k("a", "r", "b"), k("c", "r", "d"), k("e", "s", "f"), k("g", "s", "h")];
        let pred = [k("a", "r", "b"), k("x", "s", "y")];
        let rep = evaluate(&pred, &gold, &MatchConfig::exact(), None, &[]).unwrap();
        assert_eq!(rep.precision, 0.5);
        assert_eq!(rep.recall, 0.25);
        assert!((rep.micro_f1 - 1.0 / 3.0).abs() < 1e-12);
        // r: P=1, R=1/2 → 2/3; s: 0.
        assert!((rep.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    fn region_encoder() -> TableEncoder {
        let mut e = TableEncoder::new(2);
        let a = 0.9f64.acos();
        e.insert("京津冀", vec![1.0, 0.0])
            .insert("京津冀地区", vec![a.cos(), a.sin()])
            .insert("雄安新区", vec![0.0, 1.0]);
        e
    }

    #[test]
    fn semantic_threshold_table() {
        let enc = region_encoder();
        let pred = [k("京津冀地区", "locatedIn", "雄安新区")];
        let gold = [k("京津冀", "locatedIn", "雄安新区")];
        let sem = evaluate(&pred, &gold, &MatchConfig::semantic(0.85), Some(&enc), &[]).unwrap();
        assert_eq!((sem.tp, sem.fp, sem.fn_), (1, 0, 0));
        let strict = evaluate(&pred, &gold, &MatchConfig::semantic(0.95), Some(&enc), &[]).unwrap();
        assert_eq!((strict.tp, strict.fp, strict.fn_), (0, 1, 1));
        let exact = evaluate(&pred, &gold, &MatchConfig::exact(), None, &[]).unwrap();
        assert_eq!((exact.tp, exact.fp, exact.fn_), (0, 1, 1));
        assert!(matches!(
            evaluate(&pred, &gold, &MatchConfig::semantic(0.85), None, &[]),
            Err(EvalError::MissingEncoder)
        ));
    }

    #[test]
    fn relation_must_match() {
        let enc = region_encoder();
        let pred = [k("京津冀", "partOf", "雄安新区")];
        let gold = [k("京津冀", "locatedIn", "雄安新区")];
        let rep = evaluate(&pred, &gold, &MatchConfig::semantic(0.0), Some(&enc), &[]).unwrap();
        assert_eq!(rep.tp, 0);
    }

    #[test]
    fn greedy_prefers_closest_gold() {
        let mut enc = TableEncoder::new(2);
        let at = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin()];
        enc.insert("p", at(0.0)).insert("g1", at(20.0)).insert("g2", at(5.0)).insert("t", at(90.0));
        let pred = [k("p", "r", "t")];
        let gold = [k("g1", "r", "t"), k("g2", "r", "t")];
        let m = match_triples(&pred, &gold, &MatchConfig::semantic(0.85), Some(&enc)).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        assert_eq!((m.total.tp, m.total.fp, m.total.fn_), (1, 0, 1));
    }

    #[test]
    fn canonical_forms_match_exactly() {
        let pred = [k(" Cafe\u{301} ", "r", "b")];
        let gold = [k("Caf\u{e9}", "r", "b")];
        assert_eq!(evaluate(&pred, &gold, &MatchConfig::exact(), None, &[]).unwrap().tp, 1);
    }

    #[test]
    fn buckets() {
        assert_eq!(bucket_of(150), Bucket::Head);
        assert_eq!(bucket_of(101), Bucket::Head);
        assert_eq!(bucket_of(100), Bucket::Medium);
        assert_eq!(bucket_of(20), Bucket::Medium);
        assert_eq!(bucket_of(19), Bucket::Tail);
        let gold: Vec<TripleKey> = (0..25).map(|i| k(&format!("e{i}"), "m", "x")).chain([k("a", "t", "b")]).collect();
        let b = bucket_relations(&gold);
        assert_eq!(b["m"], Bucket::Medium);
        assert_eq!(b["t"], Bucket::Tail);
        let rep = evaluate(&gold[..25], &gold, &MatchConfig::exact(), None, &[]).unwrap();
        assert_eq!(rep.buckets[&Bucket::Medium], 1.0);
        assert_eq!(rep.buckets[&Bucket::Tail], 0.0);
    }

    #[test]
    fn schema_scope_macro() {
        let g = [k("a", "r", "b")];
        let cfg = MatchConfig {
            macro_scope: MacroScope::Schema,
            ..MatchConfig::exact()
        };
        let rels: Vec<String> = ["r", "s", "t", "u"].iter().map(|s| s.to_string()).collect();
        assert_eq!(evaluate(&g, &g, &cfg, None, &rels).unwrap().macro_f1, 0.25);
    }

    #[test]
    fn convergence_table_round_trip() {
        let rows = vec![ConvergenceRow {
            round: 1,
            validated: 12,
            precision: 41.7,
        }];
        let text = render_convergence(&rows);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_convergence(&text).unwrap(), rows);
        assert!(parse_convergence("nope\n").is_err());
    }

    #[test]
    fn review_sample_is_seeded() {
        let graph = KnowledgeGraph {
            entities: vec![],
            triples: (0..500)
                .map(|i| GraphTriple {
                    head: format!("h{i}"),
                    relation: "r".into(),
                    tail: "t".into(),
                    head_type: "X".into(),
                    tail_type: "Y".into(),
                    category: "C".into(),
                    score: 0.5,
                    iteration: 1,
                    evidence: String::new(),
                    provenance: vec![],
                })
                .collect(),
        };
        let a = review_sample(&graph, 200, 7);
        assert_eq!(a.len(), 200);
        assert_eq!(a, review_sample(&graph, 200, 7));
        assert_ne!(a, review_sample(&graph, 200, 8));
        assert_eq!(review_sheet(&a).lines().count(), 201);
        assert_eq!(review_sample(&graph, 900, 7).len(), 500);
    }

    /// Brute force: maximum matching is unique under exact equality, so
    /// tp is the size of the set intersection.
    fn oracle(pred: &[TripleKey], gold: &[TripleKey]) -> (f64, f64) {
        let p: BTreeSet<_> = pred.iter().cloned().collect();
        let g: BTreeSet<_> = gold.iter().cloned().collect();
        let rels: BTreeSet<&String> = g.iter().map(|t| &t.relation).collect();
        let per = |r: Option<&String>| {
            let pp: BTreeSet<_> = p.iter().filter(|t| r.is_none_or(|r| &t.relation == r)).collect();
            let gg: BTreeSet<_> = g.iter().filter(|t| r.is_none_or(|r| &t.relation == r)).collect();
            let tp = pp.intersection(&gg).count();
            let (pr, rc) = (ratio(tp, pp.len()), ratio(tp, gg.len()));
            f1(pr, rc)
        };
        let macro_f1 = if rels.is_empty() { 0.0 } else { rels.iter().map(|r| per(Some(r))).sum::<f64>() / rels.len() as f64 };
        (per(None), macro_f1)
    }

    fn triples(max: usize) -> impl Strategy<Value = Vec<TripleKey>> {
        proptest::collection::vec((0u8..4, 0u8..3, 0u8..4), 0..=max)
            .prop_map(|v| v.into_iter().map(|(h, r, t)| k(&format!("e{h}"), &format!("r{r}"), &format!("e{t}"))).collect())
    }

    proptest! {
        #[test]
        fn f1_matches_confusion_oracle(pred in triples(20), gold in triples(20)) {
            let rep = evaluate(&pred, &gold, &MatchConfig::exact(), None, &[]).unwrap();
            let (micro, macro_f1) = oracle(&pred, &gold);
            prop_assert!((rep.micro_f1 - micro).abs() < 1e-12);
            prop_assert!((rep.macro_f1 - macro_f1).abs() < 1e-12);
        }

        #[test]
        fn swapping_swaps_precision_and_recall(pred in triples(20), gold in triples(20)) {
            let a = evaluate(&pred, &gold, &MatchConfig::exact(), None, &[]).unwrap();
            let b = evaluate(&gold, &pred, &MatchConfig::exact(), None, &[]).unwrap();
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
        }

        #[test]
        fn semantic_at_one_is_exact(pred in triples(20), gold in triples(20)) {
            let mut enc = TableEncoder::new(4);
            for i in 0..4 {
                let mut v = vec![0.0; 4];
                v[i] = 1.0;
                enc.insert(format!("e{i}"), v);
            }
            let s = evaluate(&pred, &gold, &MatchConfig::semantic(1.0), Some(&enc), &[]).unwrap();
            let e = evaluate(&pred, &gold, &MatchConfig::exact(), None, &[]).unwrap();
            prop_assert_eq!((s.tp, s.fp, s.fn_), (e.tp, e.fp, e.fn_));
        }
    }
}
