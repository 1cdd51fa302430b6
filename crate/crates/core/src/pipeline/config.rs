use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::extraction::ExtractionConfig;
use crate::feedback::{TierConfig, DEFAULT_BUDGET, DEFAULT_EVIDENCE_K};
use crate::kge::TrainConfig;
use crate::llm::HttpConfig;
use crate::semantic::{HashEncoder, HttpEncoder, SemanticEncoder, DEFAULT_LAMBDA};
use crate::validation::{DEFAULT_HIGH_PCT, DEFAULT_LOW_PCT, DEFAULT_WARMUP};

/// Which threshold admits a triple into the validated graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcceptRule {
    /// `s ≥ θ_high`.
    High,
    /// `s ≥ θ_low`; looser variant for ablation.
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub dim: usize,
    /// HTTP endpoint; falls back to `LECKG_ENC_URL`.
    pub url: Option<String>,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Hash,
            dim: 768,
            url: None,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn build(&self) -> Result<Box<dyn SemanticEncoder>, String> {
        match self.kind {
            EncoderKind::Hash => Ok(Box::new(HashEncoder::new(self.dim, self.seed))),
            EncoderKind::Http => match &self.url {
                Some(u) => Ok(Box::new(HttpEncoder::new(u.clone(), self.dim))),
                None => HttpEncoder::from_env(self.dim)
                    .map(|e| Box::new(e) as Box<dyn SemanticEncoder>)
                    .ok_or_else(|| format!("http encoder needs `url` or {}", crate::semantic::ENV_ENCODER_URL)),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub max_iterations: u32,
    pub epsilon: f64,
    /// Stop as soon as growth drops below `epsilon`.
    pub stop_on_convergence: bool,
    /// Re-score validated triples every round and drop those routed Reject.
    pub revalidate: bool,
    pub low_pct: f64,
    pub high_pct: f64,
    pub accept_at: AcceptRule,
    pub tiers: TierConfig,
    pub warmup: u32,
    pub evidence_k: usize,
    pub feedback_budget: usize,
    pub mc_runs: usize,
    pub drop_rate: f64,
    /// Complex embedding dimension.
    pub dim: usize,
    pub kge: TrainConfig,
    pub warm_start_epochs: usize,
    /// Leading share of documents whose schema-valid extractions seed the model.
    pub seed_fraction: f64,
    pub alignment_holdout: f64,
    pub alignment_lambda: f64,
    pub encoder: EncoderConfig,
    pub extraction: ExtractionConfig,
    pub llm: HttpConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iterations: 4,
            epsilon: 0.01,
            stop_on_convergence: true,
            revalidate: false,
            low_pct: DEFAULT_LOW_PCT,
            high_pct: DEFAULT_HIGH_PCT,
            accept_at: AcceptRule::High,
            tiers: TierConfig::default(),
            warmup: DEFAULT_WARMUP,
            evidence_k: DEFAULT_EVIDENCE_K,
            feedback_budget: DEFAULT_BUDGET,
            mc_runs: 5,
            drop_rate: 0.1,
            dim: 512,
            kge: TrainConfig::default(),
            warm_start_epochs: 20,
            seed_fraction: 0.5,
            alignment_holdout: 0.1,
            alignment_lambda: DEFAULT_LAMBDA,
            encoder: EncoderConfig::default(),
            extraction: ExtractionConfig::default(),
            llm: HttpConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| format!("{}: {e}", path.as_ref().display()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.as_ref().display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Nine re-validating rounds without early stop.
    pub fn analysis_mode(mut self) -> Self {
        self.revalidate = true;
        self.max_iterations = 9;
        self.stop_on_convergence = false;
        self
    }

    /// Seed applied to every randomized component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.kge.seed = seed;
        self.encoder.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let pct = |p: f64| (0.0..=100.0).contains(&p);
        if !pct(self.low_pct) || !pct(self.high_pct) || self.low_pct > self.high_pct {
            return Err(format!("bad routing percentiles {}/{}", self.low_pct, self.high_pct));
        }
        if !pct(self.tiers.top_pct) || !pct(self.tiers.bottom_pct) {
            return Err("tier percentiles must lie in [0, 100]".into());
        }
        if !(self.epsilon >= 0.0) {
            return Err("epsilon must be >= 0".into());
        }
        if self.dim == 0 || self.mc_runs == 0 {
            return Err("dim and mc_runs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err("drop_rate must lie in [0, 1)".into());
        }
        if !(self.seed_fraction > 0.0 && self.seed_fraction <= 1.0) {
            return Err("seed_fraction must lie in (0, 1]".into());
        }
        self.kge.validate().map_err(|e| e.to_string())
    }
}
