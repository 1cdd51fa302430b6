use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CallTag, ChatRequest, RawTuple};
use crate::corpus::Chunk;
use crate::ontology::{Ontology, RelationType};

#[derive(Debug, Error, PartialEq)]
pub enum PromptConfigError {
    #[error("expected 3 to 5 few-shot demonstrations, got {0}")]
    DemoCount(usize),
}

/// A few-shot demonstration row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub evidence: String,
    pub category: String,
    pub head: String,
    pub relation: String,
    pub tail: String,
}

pub fn default_demos() -> Vec<Demo> {
    serde_json::from_str(include_str!("../../fixtures/demos.json")).expect("bundled demos are valid")
}

/// Paraphrase-to-relation hint rendered into the extraction prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingGuideline {
    pub phrase: String,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    pub guidelines: Vec<MappingGuideline>,
    pub max_tokens: u32,
}

impl Default for PromptOptions {
    fn default() -> Self {
        let g = |phrase: &str, relation: &str| MappingGuideline {
            phrase: phrase.into(),
            relation: relation.into(),
        };
        Self {
            guidelines: vec![
                g("sourced from", "dataSourceOf"),
                g("located at", "locatedIn"),
                g("来源于", "dataSourceOf"),
                g("位于", "locatedIn"),
                g("采用", "usesMethod"),
                g("导致", "causes"),
                g("加剧", "exacerbates"),
            ],
            max_tokens: 4096,
        }
    }
}

pub const EXTRACTION_SYSTEM: &str =
    "You extract knowledge graph triples from Sustainable Development Goal reports under a fixed schema.";

const OUTPUT_CONTRACT: &str = "Return a JSON array and nothing else. Each element is an object with keys \
\"head\", \"relation\", \"tail\", \"evidence\", \"category\", \"confidence\". \
\"evidence\" must be copied verbatim from the text. \"category\" is one of the category names above. \
\"confidence\" is a number in [0, 1] reflecting how explicitly the text states the relation. \
Return [] when the text states no relation covered by the schema.";

fn relation_line(o: &Ontology, r: &RelationType) -> String {
    let mut line = r.id.clone();
    let side = |types: &[String]| types.join("|");
    if !r.domain.is_empty() || !r.range.is_empty() {
        let d = if r.domain.is_empty() { "*".to_string() } else { side(&r.domain) };
        let g = if r.range.is_empty() { "*".to_string() } else { side(&r.range) };
        let _ = write!(line, " ({d} -> {g})");
    }
    debug_assert!(o.relation(&r.id).is_some());
    line
}

fn render_entity_types(o: &Ontology, out: &mut String) {
    out.push_str("## Entity types\n");
    for t in o.entity_types() {
        let parent = t
            .parent
            .as_deref()
            .map(|p| format!(", subtype of {p}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "- {} ({}{parent}); e.g. {}",
            t.id,
            t.label,
            t.examples.join(", ")
        );
    }
    out.push_str("A constraint naming a type also admits its subtypes.\n\n");
}

fn render_demo(i: usize, d: &Demo, o: &Ontology, out: &mut String) {
    let category = o
        .resolve_category(&d.category)
        .map(|c| c.id.as_str())
        .unwrap_or(d.category.as_str());
    let _ = writeln!(out, "Example {}", i + 1);
    let _ = writeln!(out, "Evidence: {}", d.evidence);
    let _ = writeln!(out, "Category: {category}");
    let _ = writeln!(out, "Triple: ({}, {}, {})", d.head, d.relation, d.tail);
    let record = serde_json::json!({
        "head": d.head, "relation": d.relation, "tail": d.tail,
        "evidence": d.evidence, "category": category, "confidence": 0.9,
    });
    let _ = writeln!(out, "Output: [{record}]\n");
}

fn check_demos(shots: &[Demo]) -> Result<(), PromptConfigError> {
    if !(3..=5).contains(&shots.len()) {
        return Err(PromptConfigError::DemoCount(shots.len()));
    }
    Ok(())
}

/// Coarse-to-fine extraction prompt for one chunk: full schema, the
/// category-first instruction, paraphrase guidelines, demonstrations and the
/// JSON output contract.
pub fn build_extraction_prompt(
    chunk: &Chunk,
    o: &Ontology,
    shots: &[Demo],
    options: &PromptOptions,
) -> Result<ChatRequest, PromptConfigError> {
    check_demos(shots)?;
    let mut u = String::new();
    render_entity_types(o, &mut u);

    let _ = writeln!(u, "## Relation schema ({} categories)", o.categories().len());
    for (i, c) in o.categories().iter().enumerate() {
        let _ = writeln!(u, "{}. {}: {}", i + 1, c.id, c.description);
        let rels = o.relations_in_category(&c.id).unwrap_or_default();
        let lines: Vec<String> = rels.iter().map(|r| relation_line(o, r)).collect();
        let _ = writeln!(u, "   relations: {}", lines.join(", "));
    }
    u.push('\n');

    let _ = writeln!(
        u,
        "## Procedure\nWork coarse-to-fine. For every relation you find, first decide which of the {} \
         categories it falls under, then choose the fine-grained relation only from that category's list. \
         Report both the category and the relation.\n",
        o.categories().len()
    );

    u.push_str("## Mapping guidelines\n");
    for g in &options.guidelines {
        let _ = writeln!(u, "- \"{}\" -> {}", g.phrase, g.relation);
    }
    u.push_str(
        "- Keep the direction of the statement: the head is what the sentence is about, the tail is \
         the value, place, source or object it is linked to.\n\n",
    );

    u.push_str("## Examples\n");
    for (i, d) in shots.iter().enumerate() {
        render_demo(i, d, o, &mut u);
    }

    let _ = writeln!(u, "## Output format\n{OUTPUT_CONTRACT}\n");
    let _ = write!(u, "## Text\n{}", chunk.text);

    let mut req = ChatRequest::new(CallTag::Extract, EXTRACTION_SYSTEM, u);
    req.max_tokens = options.max_tokens;
    Ok(req.with_subject(format!("{}#{}", chunk.doc_id, chunk.index)))
}

/// Single-level baseline prompt: all relations in one flat list, no
/// category-first instruction. Kept for ablation runs.
pub fn build_flat_prompt(chunk: &Chunk, o: &Ontology, shots: &[Demo]) -> Result<ChatRequest, PromptConfigError> {
    check_demos(shots)?;
    let mut u = String::new();
    render_entity_types(o, &mut u);
    let all: Vec<&str> = o.relations().iter().map(|r| r.id.as_str()).collect();
    let _ = writeln!(u, "## Relations\n{}\n", all.join(", "));
    let cats: Vec<&str> = o.categories().iter().map(|c| c.id.as_str()).collect();
    let _ = writeln!(u, "Category names for the \"category\" field: {}\n", cats.join("; "));
    u.push_str("## Examples\n");
    for (i, d) in shots.iter().enumerate() {
        render_demo(i, d, o, &mut u);
    }
    let _ = writeln!(u, "## Output format\n{OUTPUT_CONTRACT}\n");
    let _ = write!(u, "## Text\n{}", chunk.text);
    Ok(ChatRequest::new(CallTag::Extract, EXTRACTION_SYSTEM, u).with_subject(format!("{}#{}", chunk.doc_id, chunk.index)))
}

/// Second-chance prompt for an out-of-schema tuple: choose from exactly the
/// relations of the claimed category, or answer `none`.
pub fn build_remap_prompt(tuple: &RawTuple, allowed: &[&RelationType]) -> ChatRequest {
    let mut u = String::new();
    let _ = writeln!(
        u,
        "The relation `{}` is not part of the schema for category \"{}\".",
        tuple.relation, tuple.category
    );
    let _ = writeln!(u, "Triple: ({}, {}, {})", tuple.head, tuple.relation, tuple.tail);
    let _ = writeln!(u, "Evidence: {}", tuple.evidence);
    u.push_str("Allowed relations:\n");
    for r in allowed {
        let _ = writeln!(u, "- {}", r.id);
    }
    u.push_str(
        "Answer with the single allowed relation closest in meaning to the original, \
         or with `none` if no allowed relation fits.",
    );
    ChatRequest::new(CallTag::Remap, EXTRACTION_SYSTEM, u)
        .with_subject(format!("{}|{}|{}", tuple.head, tuple.relation, tuple.tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(text: &str) -> Chunk {
        Chunk {
            doc_id: "d".into(),
            index: 0,
            start: 0,
            end: text.chars().count(),
            text: text.into(),
        }
    }

    #[test]
    fn prompt_embeds_full_schema() {
        let o = Ontology::default_sdg();
        let req = build_extraction_prompt(&chunk("正文"), &o, &default_demos(), &PromptOptions::default()).unwrap();
        for c in o.categories() {
            assert!(req.user.contains(&c.id), "{}", c.id);
        }
        for r in o.relations() {
            assert!(req.user.contains(&r.id), "{}", r.id);
        }
        assert!(req.user.contains("Forest coverage reached 23.04%."));
        assert!(req.user.contains("Data derived from MODIS satellite."));
        assert!(req.user.contains("\"sourced from\" -> dataSourceOf"));
        assert!(req.user.ends_with("正文"));
        assert_eq!(req.tag, CallTag::Extract);
        assert_eq!(req.temperature, 0.0);
    }

    #[test]
    fn demo_count_is_checked() {
        let o = Ontology::default_sdg();
        let demos = default_demos();
        let opts = PromptOptions::default();
        assert_eq!(
            build_extraction_prompt(&chunk("x"), &o, &[], &opts).unwrap_err(),
            PromptConfigError::DemoCount(0)
        );
        assert!(build_extraction_prompt(&chunk("x"), &o, &demos[..2], &opts).is_err());
        assert!(build_extraction_prompt(&chunk("x"), &o, &demos[..3], &opts).is_ok());
    }

    #[test]
    fn remap_prompt_lists_exactly_the_category() {
        let o = Ontology::default_sdg();
        let allowed = o.relations_in_category("Spatiotemporal").unwrap();
        let t = RawTuple {
            head: "研究区".into(),
            relation: "situatedAt".into(),
            tail: "长江流域".into(),
            evidence: "研究区位于长江流域".into(),
            category: "Spatiotemporal".into(),
            confidence: 0.8,
        };
        let req = build_remap_prompt(&t, &allowed);
        let listed: Vec<&str> = req.user.lines().filter_map(|l| l.strip_prefix("- ")).collect();
        assert_eq!(listed.len(), 11);
        assert!(listed.contains(&"locatedIn"));
        assert!(!listed.contains(&"hasValue"));
    }
}
