//! Document ingestion, overlapping chunking and the entity-anchored
//! sentence index used for evidence retrieval.
//!
//! All offsets count Unicode scalar values, never bytes.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::Ontology;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid chunking parameters: size {size}, overlap {overlap}")]
    InvalidParams { size: usize, overlap: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }
}

/// Read a JSON-lines corpus, one document per line. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let mut docs: Vec<Document> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: i + 1, source })?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

pub const DEFAULT_CHUNK_SIZE: usize = 2000;
pub const DEFAULT_CHUNK_OVERLAP: usize = 200;

/// Split a document into windows of `size` characters advancing by
/// `size - overlap`. The last window ends at the document end.
pub fn chunk_document(doc: &Document, size: usize, overlap: usize) -> Result<Vec<Chunk>, CorpusError> {
    if size == 0 || overlap >= size {
        return Err(CorpusError::InvalidParams { size, overlap });
    }
    let chars: Vec<char> = doc.text.chars().collect();
    let n = chars.len();
    let stride = size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        chunks.push(Chunk {
            doc_id: doc.id.clone(),
            index: chunks.len(),
            start,
            end,
            text: chars[start..end].iter().collect(),
        });
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

fn is_cjk_terminal(c: char) -> bool {
    matches!(c, '。' | '！' | '？' | '!' | '?' | '\n')
}

/// Rule-based splitter. CJK terminals, `!`, `?` and newlines always end a
/// sentence; `.` ends one only before whitespace or end of text, so decimals
/// such as `23.04` stay intact. Sentences are trimmed of surrounding whitespace.
pub fn split_sentences(doc_id: &str, text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut begin = 0;
    let push = |from: usize, to: usize, out: &mut Vec<Sentence>| {
        let mut s = from;
        let mut e = to;
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            out.push(Sentence {
                doc_id: doc_id.to_string(),
                start: s,
                end: e,
                text: chars[s..e].iter().collect(),
            });
        }
    };
    for i in 0..chars.len() {
        let c = chars[i];
        let terminal = is_cjk_terminal(c)
            || (c == '.' && chars.get(i + 1).is_none_or(|n| n.is_whitespace()));
        if terminal {
            push(begin, i + 1, &mut out);
            begin = i + 1;
        }
    }
    push(begin, chars.len(), &mut out);
    out
}

/// Character positions (not bytes) of every occurrence of `needle` in `hay`.
fn char_occurrences(hay: &str, needle: &str) -> Vec<(usize, usize)> {
    if needle.is_empty() {
        return Vec::new();
    }
    let needle_len = needle.chars().count();
    let mut out = Vec::new();
    for (byte_pos, _) in hay.match_indices(needle) {
        let start = hay[..byte_pos].chars().count();
        out.push((start, start + needle_len));
    }
    out
}

/// Sentences of a corpus plus postings from canonical mention to sentence ids.
#[derive(Debug, Clone, Default)]
pub struct SentenceIndex {
    sentences: Vec<Sentence>,
    postings: HashMap<String, Vec<usize>>,
    surface_forms: HashMap<String, Vec<String>>,
}

impl SentenceIndex {
    /// Index every sentence and build postings for all alias-table mentions
    /// plus `mentions` (entities observed so far).
    pub fn build<'a>(
        corpus: &[Document],
        ontology: Option<&Ontology>,
        mentions: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let mut sentences = Vec::new();
        for doc in corpus {
            sentences.extend(split_sentences(&doc.id, &doc.text));
        }
        let mut idx = Self {
            sentences,
            postings: HashMap::new(),
            surface_forms: HashMap::new(),
        };
        if let Some(o) = ontology {
            for canonical in o.canonical_mentions() {
                let forms = o.surface_forms(canonical).into_iter().map(String::from).collect();
                idx.add_mention(canonical, forms);
            }
        }
        for m in mentions {
            if !idx.postings.contains_key(m) {
                let forms = match ontology {
                    Some(o) => o.surface_forms(m).into_iter().map(String::from).collect(),
                    None => vec![m.to_string()],
                };
                idx.add_mention(m, forms);
            }
        }
        idx
    }

    fn add_mention(&mut self, canonical: &str, forms: Vec<String>) {
        let ids = self.scan(&forms);
        self.postings.insert(canonical.to_string(), ids);
        self.surface_forms.insert(canonical.to_string(), forms);
    }

    fn scan(&self, forms: &[String]) -> Vec<usize> {
        self.sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| forms.iter().any(|f| !f.is_empty() && s.text.contains(f.as_str())))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    fn forms_of(&self, mention: &str) -> Vec<String> {
        self.surface_forms
            .get(mention)
            .cloned()
            .unwrap_or_else(|| vec![mention.to_string()])
    }

    /// Sentence ids mentioning `mention` or one of its aliases, in corpus order.
    /// Mentions not indexed at build time are scanned on demand.
    pub fn postings(&self, mention: &str) -> Vec<usize> {
        match self.postings.get(mention) {
            Some(p) => p.clone(),
            None => self.scan(&self.forms_of(mention)),
        }
    }

    fn sort_key(&self, id: usize) -> (&str, usize) {
        let s = &self.sentences[id];
        (s.doc_id.as_str(), s.start)
    }

    /// Up to `k` evidence sentences: co-occurrences of both mentions first,
    /// then single-mention sentences by ascending character gap between the
    /// mention and the nearest keyword. Sentences without any keyword come last.
    pub fn retrieve_evidence(&self, head: &str, tail: &str, keywords: &[String], k: usize) -> Vec<Sentence> {
        if k == 0 {
            return Vec::new();
        }
        let hp = self.postings(head);
        let tp = self.postings(tail);
        let mut both: Vec<usize> = hp.iter().copied().filter(|i| tp.contains(i)).collect();
        both.sort_by(|a, b| self.sort_key(*a).cmp(&self.sort_key(*b)));
        let mut out: Vec<usize> = both.iter().copied().take(k).collect();
        if out.len() < k {
            let head_forms = self.forms_of(head);
            let tail_forms = self.forms_of(tail);
            let mut singles: Vec<(usize, usize)> = hp
                .iter()
                .chain(&tp)
                .copied()
                .filter(|i| !both.contains(i))
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .map(|id| {
                    let text = &self.sentences[id].text;
                    let spans: Vec<(usize, usize)> = head_forms
                        .iter()
                        .chain(&tail_forms)
                        .flat_map(|f| char_occurrences(text, f))
                        .collect();
                    (id, keyword_distance(text, &spans, keywords))
                })
                .collect();
            singles.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| self.sort_key(a.0).cmp(&self.sort_key(b.0))));
            out.extend(singles.into_iter().take(k - out.len()).map(|(id, _)| id));
        }
        out.into_iter().map(|i| self.sentences[i].clone()).collect()
    }
}

/// Smallest character gap between any entity span and any keyword span;
/// zero when they overlap, `usize::MAX` when no keyword occurs.
fn keyword_distance(text: &str, entity_spans: &[(usize, usize)], keywords: &[String]) -> usize {
    let mut best = usize::MAX;
    for kw in keywords {
        for (ks, ke) in char_occurrences(text, kw) {
            for &(es, ee) in entity_spans {
                let gap = if ks >= ee {
                    ks - ee
                } else { es.saturating_sub(ke) };
                best = best.min(gap);
            }
        }
    }
    best
}

/// Per-category keyword lists used to rank single-mention evidence.
pub type KeywordLexicon = BTreeMap<String, Vec<String>>;

pub fn default_keywords() -> KeywordLexicon {
    serde_json::from_str(include_str!("../fixtures/keywords.json")).expect("bundled keywords are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_of_len(n: usize) -> Document {
        let text: String = (0..n).map(|i| char::from_u32(0x4e00 + (i % 500) as u32).unwrap()).collect();
        Document::new("d", text)
    }

    #[test]
    fn chunk_5000_chars() {
        let chunks = chunk_document(&doc_of_len(5000), 2000, 200).unwrap();
        let spans: Vec<(usize, usize)> = chunks.iter().map(|c| (c.start, c.end)).collect();
        assert_eq!(spans, vec![(0, 2000), (1800, 3800), (3600, 5000)]);
        assert_eq!(chunks[1].text.chars().count(), 2000);
    }

    #[test]
    fn chunk_short_and_empty() {
        let chunks = chunk_document(&doc_of_len(1500), 2000, 200).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!((chunks[0].start, chunks[0].end), (0, 1500));
        assert!(chunk_document(&doc_of_len(0), 2000, 200).unwrap().is_empty());
    }

    #[test]
    fn chunk_rejects_bad_overlap() {
        assert!(matches!(
            chunk_document(&doc_of_len(10), 200, 200),
            Err(CorpusError::InvalidParams { .. })
        ));
    }

    #[test]
    fn splitter_keeps_decimals() {
        let s = split_sentences("d", "Coverage reached 23.04% in 2020. Next one!\n第三句。");
        let texts: Vec<&str> = s.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, vec!["Coverage reached 23.04% in 2020.", "Next one!", "第三句。"]);
        let chars: Vec<char> = "Coverage reached 23.04% in 2020. Next one!\n第三句。".chars().collect();
        for sent in &s {
            assert_eq!(chars[sent.start..sent.end].iter().collect::<String>(), sent.text);
        }
    }

    #[test]
    fn postings_for_cooccurring_entities() {
        let corpus = vec![Document::new("d", "甲位于乙。丙增长。")];
        let idx = SentenceIndex::build(&corpus, None, ["甲", "乙", "丁"]);
        assert_eq!(idx.postings("甲"), vec![0]);
        assert_eq!(idx.postings("乙"), vec![0]);
        assert!(idx.postings("丁").is_empty());
    }

    #[test]
    fn postings_follow_document_order() {
        let corpus = vec![Document::new("d", "甲一。乙二。甲三。丙四。甲五。")];
        let idx = SentenceIndex::build(&corpus, None, ["甲"]);
        let brute: Vec<usize> = idx
            .sentences()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.text.contains('甲'))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(idx.postings("甲"), brute);
        assert_eq!(brute.len(), 3);
    }

    #[test]
    fn postings_include_aliases() {
        let o = Ontology::default_sdg();
        let corpus = vec![Document::new("d", "中华人民共和国人口众多。青海省面积大。")];
        let idx = SentenceIndex::build(&corpus, Some(&o), std::iter::empty());
        assert_eq!(idx.postings("中国"), vec![0]);
    }

    #[test]
    fn evidence_orders_cooccurrence_then_distance() {
        // sentence 0: co-occurrence; sentence 1: 甲 five chars from 导致;
        // sentence 2: 乙 forty chars from 导致; sentence 3: no entity.
        let filler5 = "一二三四五";
        let filler40: String = std::iter::repeat_n('六', 40).collect();
        let text = format!("甲和乙相关。甲{filler5}导致。乙{filler40}导致。无关句子。");
        let corpus = vec![Document::new("d", text)];
        let idx = SentenceIndex::build(&corpus, None, ["甲", "乙"]);
        let kws = vec!["导致".to_string()];
        let ev = idx.retrieve_evidence("甲", "乙", &kws, 3);
        let starts: Vec<&str> = ev.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(starts.len(), 3);
        assert_eq!(starts[0], "甲和乙相关。");
        assert!(starts[1].starts_with("甲一"));
        assert!(starts[2].starts_with("乙六"));
    }

    #[test]
    fn evidence_empty_when_absent() {
        let corpus = vec![Document::new("d", "完全无关。")];
        let idx = SentenceIndex::build(&corpus, None, std::iter::empty());
        assert!(idx.retrieve_evidence("甲", "乙", &[], 3).is_empty());
    }

    #[test]
    fn bundled_keywords_cover_all_categories() {
        let kw = default_keywords();
        let o = Ontology::default_sdg();
        for c in o.categories() {
            assert!(!kw[&c.id].is_empty(), "{}", c.id);
        }
    }
}
