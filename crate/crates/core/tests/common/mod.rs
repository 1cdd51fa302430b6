#![allow(dead_code)]

use std::path::{Path, PathBuf};

use leckg::corpus::{load_corpus, Document};
use leckg::llm::{Gateway, MockClient, Scenario};
use leckg::ontology::Ontology;
use leckg::pipeline::PipelineConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub struct Demo {
    pub ontology: Ontology,
    pub docs: Vec<Document>,
    pub scenario: Scenario,
    pub config: PipelineConfig,
}

impl Demo {
    pub fn load() -> Self {
        let dir = fixtures();
        Self {
            ontology: Ontology::load(dir.join("sdg_schema.json")).unwrap(),
            docs: load_corpus(dir.join("demo/corpus.jsonl")).unwrap(),
            scenario: Scenario::load(dir.join("demo/scenario.json")).unwrap(),
            config: PipelineConfig::load(dir.join("demo/config.json")).unwrap(),
        }
    }

    pub fn gateway(&self) -> Gateway {
        Gateway::new(MockClient::new(self.scenario.clone()))
    }
}

/// Relative path → bytes for every file under `root`.
pub fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
