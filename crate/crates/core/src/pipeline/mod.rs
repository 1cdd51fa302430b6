//! The extraction/validation loop: cold start, then rounds of
//! score → route → feedback → augment → warm start until growth stalls.

mod config;
mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::{default_keywords, Document, KeywordLexicon, SentenceIndex};
use crate::extraction::{CandidateTriple, ExtractionError, Extractor, TripleKey, TripleStatus};
use crate::feedback::{
    build_cot_prompt, enforce_retry_limit, process_feedback_reply, select_channel2, uncertainty, verification_order,
    AuditRecord, FeedbackOutcome, FeedbackPacket,
};
use crate::kge::{distance, score_vectors, KgeError, KgeModel};
use crate::llm::{Gateway, GatewayError};
use crate::ontology::Ontology;
use crate::semantic::{embed_unseen, fit_alignment, resolve_embedding, stochastic_embeddings, AlignmentMap, SemanticEncoder, SemanticError};
use crate::util::{mix_seed, parallel_map, sigmoid};
use crate::validation::{compute_thresholds, diagnose_with, route, Route, ValidationError};

pub use config::{AcceptRule, EncoderConfig, EncoderKind, PipelineConfig};
pub use state::{iteration_dir, latest_checkpoint, GraphTriple, KnowledgeGraph, PipelineState, RoundStats, ValidTriple};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no schema-valid seed triples after cold-start extraction")]
    EmptySeed,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Kge(#[from] KgeError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Model-side state carried between rounds.
#[derive(Debug, Clone)]
pub struct RunState {
    pub state: PipelineState,
    pub model: KgeModel,
    pub alignment: Option<AlignmentMap>,
}

pub struct Pipeline<'a> {
    docs: &'a [Document],
    ontology: &'a Ontology,
    gateway: &'a Gateway,
    encoder: &'a dyn SemanticEncoder,
    config: PipelineConfig,
    index: SentenceIndex,
    keywords: KeywordLexicon,
    checkpoint_root: Option<PathBuf>,
}

struct Scored {
    /// Index into `state.candidates`, or into `state.valid` for re-validated triples.
    slot: Slot,
    score: f64,
    route: Route,
}

#[derive(Clone, Copy)]
enum Slot {
    Candidate(usize),
    Valid(usize),
}

impl<'a> Pipeline<'a> {
    pub fn new(
        docs: &'a [Document],
        ontology: &'a Ontology,
        gateway: &'a Gateway,
        encoder: &'a dyn SemanticEncoder,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        config.validate().map_err(PipelineError::Config)?;
        Ok(Self {
            docs,
            ontology,
            gateway,
            encoder,
            index: SentenceIndex::build(docs, Some(ontology), std::iter::empty()),
            keywords: default_keywords(),
            config,
            checkpoint_root: None,
        })
    }

    /// Write `iter-XX/` after cold start and every round; resume from the latest one.
    pub fn with_checkpoints(mut self, root: impl Into<PathBuf>) -> Self {
        self.checkpoint_root = Some(root.into());
        self
    }

    pub fn with_keywords(mut self, keywords: KeywordLexicon) -> Self {
        self.keywords = keywords;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn refit_alignment(&self, model: &KgeModel, round: u32) -> Result<Option<AlignmentMap>, PipelineError> {
        if model.entities().is_empty() {
            return Ok(None);
        }
        Ok(Some(fit_alignment(
            self.encoder,
            model,
            model.entities(),
            self.config.alignment_holdout,
            self.config.alignment_lambda,
            mix_seed(self.config.seed, round as u64),
        )?))
    }

    /// Extract the corpus once, seed the model with the schema-valid triples
    /// of the leading document share, train it and fit the projection.
    pub fn cold_start(&self) -> Result<RunState, PipelineError> {
        let extraction = Extractor::new(self.ontology, self.gateway, &self.config.extraction).extract_corpus(self.docs)?;
        let n_seed_docs = ((self.config.seed_fraction * self.docs.len() as f64).ceil() as usize).min(self.docs.len());
        let seed_docs: BTreeSet<&str> = self.docs[..n_seed_docs].iter().map(|d| d.id.as_str()).collect();
        let seed: Vec<&CandidateTriple> = extraction
            .candidates
            .iter()
            .filter(|c| c.sources.iter().any(|s| seed_docs.contains(s.doc_id.as_str())))
            .filter(|c| {
                self.ontology
                    .check_schema(&c.head_type, &c.relation, &c.tail_type)
                    .unwrap_or(false)
            })
            .collect();
        if seed.is_empty() {
            return Err(PipelineError::EmptySeed);
        }
        tracing::info!(
            candidates = extraction.candidates.len(),
            seed = seed.len(),
            failed_chunks = extraction.failed_chunks.len(),
            remapped = extraction.remapped,
            "cold start extraction done"
        );
        let mut model = KgeModel::for_ontology(self.ontology, self.config.dim, &self.config.kge);
        let triples: Vec<(&str, &str, &str)> = seed
            .iter()
            .map(|c| (c.head.as_str(), c.relation.as_str(), c.tail.as_str()))
            .collect();
        let indexed = model.index_triples(&triples)?;
        let report = model.train(&indexed, &self.config.kge)?;
        tracing::info!(initial = report.initial_loss, final_loss = report.final_loss, "cold start training done");
        let alignment = self.refit_alignment(&model, 0)?;
        let state = PipelineState {
            t: 0,
            max_iterations: self.config.max_iterations,
            epsilon: self.config.epsilon,
            rng_seed: self.config.seed,
            seed: seed.iter().map(|c| c.key()).collect(),
            training: seed.iter().map(|c| c.key()).collect(),
            candidates: extraction.candidates,
            ..PipelineState::default()
        };
        let rs = RunState {
            state,
            model,
            alignment,
        };
        self.save_checkpoint(&rs)?;
        Ok(rs)
    }

    fn embeddings(&self, rs: &RunState, mentions: BTreeSet<&str>) -> Result<BTreeMap<String, Vec<f64>>, PipelineError> {
        let list: Vec<&str> = mentions.into_iter().collect();
        let vecs: Vec<Result<Vec<f64>, SemanticError>> = list
            .par_iter()
            .map(|m| resolve_embedding(&rs.model, rs.alignment.as_ref(), self.encoder, m))
            .collect();
        let mut out = BTreeMap::new();
        for (m, v) in list.into_iter().zip(vecs) {
            out.insert(m.to_string(), v?);
        }
        Ok(out)
    }

    /// Sample standard deviation of the score when the encoder input of both
    /// entities is masked; learned rows are shifted by the projection's
    /// response to the mask so known entities are perturbed too.
    fn mc_uncertainty(&self, rs: &RunState, t: &CandidateTriple, hv: &[f64], tv: &[f64], seed: u64) -> Result<f64, PipelineError> {
        let Some(map) = rs.alignment.as_ref() else {
            return Ok(0.0);
        };
        let runs = self.config.mc_runs;
        let perturbed = |mention: &str, base: &[f64]| -> Result<Vec<Vec<f64>>, SemanticError> {
            let clean = embed_unseen(map, self.encoder, mention)?;
            let samples = stochastic_embeddings(map, self.encoder, mention, runs, self.config.drop_rate, seed)?;
            Ok(samples
                .into_iter()
                .map(|s| base.iter().zip(s.iter().zip(&clean)).map(|(b, (x, c))| b + x - c).collect())
                .collect())
        };
        let hs = perturbed(&t.head, hv)?;
        let ts = perturbed(&t.tail, tv)?;
        let phases = rs.model.phases(&t.relation)?;
        let scores: Vec<f64> = hs.iter().zip(&ts).map(|(h, tt)| score_vectors(h, phases, tt)).collect();
        Ok(uncertainty(&scores))
    }

    /// One round. Mutations are applied in candidate order so the result
    /// does not depend on scheduling.
    pub fn run_iteration(&self, rs: &mut RunState) -> Result<RoundStats, PipelineError> {
        let t = rs.state.t + 1;
        let round_seed = mix_seed(self.config.seed, t as u64);
        let valid_before = rs.state.valid_count();
        let mut stats = RoundStats {
            iteration: t,
            ..RoundStats::default()
        };

        let mut slots: Vec<Slot> = rs
            .state
            .candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.status == TripleStatus::Pending)
            .map(|(i, _)| Slot::Candidate(i))
            .collect();
        stats.pool = slots.len();
        if self.config.revalidate {
            slots.extend(
                rs.state
                    .valid
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.removed_at.is_none())
                    .map(|(i, _)| Slot::Valid(i)),
            );
        }

        if slots.is_empty() {
            return self.finish_round(rs, stats, valid_before);
        }

        let triple_at = |state: &PipelineState, s: Slot| -> CandidateTriple {
            match s {
                Slot::Candidate(i) => state.candidates[i].clone(),
                Slot::Valid(i) => state.valid[i].triple.clone(),
            }
        };
        let triples: Vec<CandidateTriple> = slots.iter().map(|&s| triple_at(&rs.state, s)).collect();
        let mentions: BTreeSet<&str> = triples.iter().flat_map(|c| [c.head.as_str(), c.tail.as_str()]).collect();
        let emb = self.embeddings(rs, mentions)?;
        let mut scores = Vec::with_capacity(triples.len());
        for c in &triples {
            let d = distance(&emb[&c.head], rs.model.phases(&c.relation)?, &emb[&c.tail]);
            scores.push(sigmoid(-d));
        }

        let mut th = compute_thresholds(&scores, self.config.low_pct, self.config.high_pct)?;
        th.iteration = t;
        stats.theta_low = Some(th.theta_low);
        stats.theta_high = Some(th.theta_high);
        let accept_th = match self.config.accept_at {
            AcceptRule::High => th,
            AcceptRule::Low => crate::validation::Thresholds {
                theta_high: th.theta_low,
                ..th
            },
        };
        let scored: Vec<Scored> = slots
            .iter()
            .zip(&scores)
            .map(|(&slot, &score)| Scored {
                slot,
                score,
                route: route(score, &accept_th),
            })
            .collect();

        // Routing: pool triples are accepted or dropped; re-validated ones can only be dropped.
        let mut feedback_idx = Vec::new();
        for (k, s) in scored.iter().enumerate() {
            match (s.slot, s.route) {
                (Slot::Candidate(i), Route::Accept) => {
                    let c = &mut rs.state.candidates[i];
                    c.status = TripleStatus::Accepted;
                    rs.state.valid.push(ValidTriple {
                        triple: c.clone(),
                        score: s.score,
                        iteration: t,
                        removed_at: None,
                    });
                    stats.accepted += 1;
                }
                (Slot::Candidate(i), Route::Reject) => {
                    rs.state.candidates[i].status = TripleStatus::Rejected;
                    stats.rejected += 1;
                }
                (Slot::Candidate(_), Route::Feedback) => {
                    feedback_idx.push(k);
                    stats.feedback += 1;
                }
                (Slot::Valid(i), Route::Reject) => {
                    rs.state.valid[i].removed_at = Some(t);
                    stats.removed += 1;
                }
                (Slot::Valid(_), _) => {}
            }
        }

        // Channel 2 tiers over this round's pool.
        let pool_items: Vec<(&CandidateTriple, f64)> = scored
            .iter()
            .zip(&triples)
            .filter(|(s, _)| matches!(s.slot, Slot::Candidate(_)))
            .map(|(s, c)| (c, s.score))
            .collect();
        let unc_values: Vec<Result<f64, PipelineError>> = feedback_idx
            .par_iter()
            .map(|&k| {
                let c = &triples[k];
                self.mc_uncertainty(rs, c, &emb[&c.head], &emb[&c.tail], round_seed)
            })
            .collect();
        let mut unc = BTreeMap::new();
        for (&k, u) in feedback_idx.iter().zip(unc_values) {
            unc.insert(triples[k].key(), u?);
        }
        let mut batch = select_channel2(&pool_items, &self.config.tiers, &unc).map_err(|e| PipelineError::Config(e.to_string()))?;
        stats.direct = batch.direct.len();

        // Channel 1 queue: Feedback-routed triples in verification order.
        let score_of: BTreeMap<TripleKey, f64> = pool_items.iter().map(|(c, s)| (c.key(), *s)).collect();
        let mut queue: Vec<(&CandidateTriple, f64)> = feedback_idx.iter().map(|&k| (&triples[k], scores[k])).collect();
        verification_order(&mut queue, &unc);
        let slot_of: BTreeMap<TripleKey, usize> = scored
            .iter()
            .filter_map(|s| match s.slot {
                Slot::Candidate(i) => Some((rs.state.candidates[i].key(), i)),
                Slot::Valid(_) => None,
            })
            .collect();
        let queue: Vec<usize> = queue.iter().map(|(c, _)| slot_of[&c.key()]).collect();

        let mut to_call = Vec::new();
        for i in queue {
            let c = &mut rs.state.candidates[i];
            if !enforce_retry_limit(c) {
                stats.retry_exhausted += 1;
                rs.state.audit.push(AuditRecord {
                    iteration: t,
                    triple: c.key(),
                    attempt: c.retries,
                    outcome: "retry_exhausted".into(),
                    prompt_hash: None,
                    corrected: None,
                });
            } else if to_call.len() < self.config.feedback_budget {
                to_call.push(i);
            } else {
                stats.deferred += 1;
            }
        }

        let requests: Vec<_> = to_call
            .iter()
            .map(|&i| {
                let c = &rs.state.candidates[i];
                let alternatives = diagnose_with(c, &rs.model, self.ontology, t, self.config.warmup, &emb[&c.head], &emb[&c.tail]);
                let packet = FeedbackPacket::build(
                    c,
                    score_of[&c.key()],
                    th.theta_high,
                    alternatives,
                    &self.index,
                    &self.keywords,
                    self.config.evidence_k,
                );
                build_cot_prompt(&packet, self.ontology)
            })
            .collect();
        let replies = parallel_map(&requests, self.gateway.max_in_flight(), |r| self.gateway.complete(r));
        stats.feedback_calls = requests.len();

        let mut known: BTreeSet<TripleKey> = rs.state.candidates.iter().map(|c| c.key()).collect();
        let mut confirmed = Vec::new();
        for ((&i, req), reply) in to_call.iter().zip(&requests).zip(replies) {
            let reply = reply?;
            let c = &mut rs.state.candidates[i];
            c.retries += 1;
            let original = c.clone();
            let outcome = process_feedback_reply(&reply, &original, self.ontology);
            let mut corrected_key = None;
            match &outcome {
                FeedbackOutcome::Confirmed => {
                    confirmed.push(original.key());
                    batch.verified.push(original.key());
                    stats.confirmed += 1;
                }
                FeedbackOutcome::Corrected { triple } => {
                    c.status = TripleStatus::Rejected;
                    corrected_key = Some(triple.key());
                    batch.verified.push(triple.key());
                    stats.corrected += 1;
                    if known.insert(triple.key()) {
                        rs.state.candidates.push(triple.clone());
                    }
                }
                FeedbackOutcome::Rejected { reason } => {
                    tracing::debug!(triple = %original.key(), reason, "feedback rejected");
                    c.status = TripleStatus::Rejected;
                }
            }
            rs.state.audit.push(AuditRecord {
                iteration: t,
                triple: original.key(),
                attempt: original.retries,
                outcome: outcome.label().into(),
                prompt_hash: Some(req.prompt_hash()),
                corrected: corrected_key,
            });
        }
        rs.state.thresholds.push(th);

        // Augment and warm-start.
        let in_training: BTreeSet<TripleKey> = rs.state.training.iter().cloned().collect();
        let mut augmentation: Vec<TripleKey> = Vec::new();
        for k in batch.direct.iter().chain(&confirmed) {
            if !in_training.contains(k) && !augmentation.contains(k) {
                augmentation.push(k.clone());
            }
        }
        if !augmentation.is_empty() && self.config.warm_start_epochs > 0 {
            for k in &augmentation {
                for e in [&k.head, &k.tail] {
                    if !rs.model.contains_entity(e) {
                        let init = match rs.alignment.as_ref() {
                            Some(map) => Some(embed_unseen(map, self.encoder, e)?),
                            None => None,
                        };
                        rs.model.add_entity(e, init.as_deref())?;
                    }
                }
            }
            rs.state.training.extend(augmentation);
            let triples: Vec<(&str, &str, &str)> = rs
                .state
                .training
                .iter()
                .map(|k| (k.head.as_str(), k.relation.as_str(), k.tail.as_str()))
                .collect();
            let indexed = rs.model.index_triples(&triples)?;
            let mut cfg = self.config.kge.clone();
            cfg.seed = round_seed;
            rs.model.warm_start(&indexed, &cfg, self.config.warm_start_epochs)?;
            rs.alignment = self.refit_alignment(&rs.model, t)?;
        }
        self.finish_round(rs, stats, valid_before)
    }

    fn finish_round(&self, rs: &mut RunState, mut stats: RoundStats, valid_before: usize) -> Result<RoundStats, PipelineError> {
        let valid_now = rs.state.valid_count();
        stats.valid_total = valid_now;
        stats.growth = (valid_now as f64 - valid_before as f64) / valid_before.max(1) as f64;
        rs.state.t = stats.iteration;
        rs.state.growth.push(stats.growth);
        rs.state.converged = stats.growth < self.config.epsilon;
        rs.state.rounds.push(stats.clone());
        tracing::info!(
            round = stats.iteration,
            pool = stats.pool,
            accepted = stats.accepted,
            feedback = stats.feedback,
            rejected = stats.rejected,
            calls = stats.feedback_calls,
            valid = stats.valid_total,
            growth = stats.growth,
            "round finished"
        );
        self.save_checkpoint(rs)?;
        Ok(stats)
    }

    fn should_continue(&self, rs: &RunState) -> bool {
        rs.state.t < self.config.max_iterations && !(rs.state.converged && self.config.stop_on_convergence)
    }

    /// Resume from the latest checkpoint if one exists, else cold start.
    pub fn start(&self) -> Result<RunState, PipelineError> {
        if let Some(root) = &self.checkpoint_root {
            if let Some((t, dir)) = latest_checkpoint(root) {
                tracing::info!(round = t, dir = %dir.display(), "resuming from checkpoint");
                return load_checkpoint(&dir);
            }
        }
        self.cold_start()
    }

    /// Run rounds until convergence or the iteration cap; returns the final state.
    pub fn run(&self) -> Result<RunState, PipelineError> {
        let mut rs = self.start()?;
        while self.should_continue(&rs) {
            self.run_iteration(&mut rs)?;
        }
        Ok(rs)
    }

    /// Run at most `rounds` further rounds (used to simulate interruption).
    pub fn run_rounds(&self, rounds: u32) -> Result<RunState, PipelineError> {
        let mut rs = self.start()?;
        for _ in 0..rounds {
            if !self.should_continue(&rs) {
                break;
            }
            self.run_iteration(&mut rs)?;
        }
        Ok(rs)
    }

    fn save_checkpoint(&self, rs: &RunState) -> Result<(), PipelineError> {
        let Some(root) = &self.checkpoint_root else {
            return Ok(());
        };
        fs::create_dir_all(root)?;
        let dir = iteration_dir(root, rs.state.t);
        let tmp = root.join(format!(".iter-{:02}.tmp", rs.state.t));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        rs.model.save(tmp.join("kge.ckpt"))?;
        if let Some(a) = &rs.alignment {
            a.save(tmp.join("align.ckpt"))?;
        }
        state::write_state(&tmp.join("state.json"), &rs.state)?;
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&tmp, &dir)?;
        Ok(())
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<RunState, PipelineError> {
    let state = state::read_state(&dir.join("state.json"))?;
    let model = KgeModel::load(dir.join("kge.ckpt"))?;
    let align_path = dir.join("align.ckpt");
    let alignment = if align_path.is_file() {
        Some(AlignmentMap::load(align_path)?)
    } else {
        None
    };
    Ok(RunState {
        state,
        model,
        alignment,
    })
}
