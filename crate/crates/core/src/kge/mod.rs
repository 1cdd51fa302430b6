//! RotatE embeddings: entities are complex vectors, relations are element-wise
//! rotations stored as phase vectors, and a triple scores σ(−‖h∘r−t‖).
//!
//! Entity rows use the layout `[re_0..re_{d-1}, im_0..im_{d-1}]`.

mod checkpoint;
mod train;

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ontology::{Ontology, OntologyError};
use crate::util::{fnv1a, sigmoid};

pub use train::{example_gradient, example_loss, Gradient, Negative, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum KgeError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("embedding has length {got}, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Checkpoint(#[from] crate::container::ContainerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Multiply the learning rate by `decay_factor` every `decay_every` epochs (0 disables).
    pub decay_every: usize,
    pub decay_factor: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 12.0,
            alpha: 1.0,
            negatives: 64,
            batch_size: 256,
            epochs: 500,
            lr: 1e-4,
            decay_every: 250,
            decay_factor: 0.1,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), KgeError> {
        let bad = |m: &str| Err(KgeError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0) {
            return bad("gamma must be > 0");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr > 0.0) || !self.alpha.is_finite() {
            return bad("lr must be > 0 and alpha finite");
        }
        Ok(())
    }

    /// Uniform init half-width for entity components.
    pub fn init_scale(&self, dim: usize) -> f64 {
        (self.gamma + 2.0) / dim as f64
    }
}

/// Index-level triple used by training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexedTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgeModel {
    dim: usize,
    init_scale: f64,
    seed: u64,
    entities: Vec<String>,
    entity_index: HashMap<String, usize>,
    /// Row-major, stride `2 * dim`.
    entity_emb: Vec<f64>,
    relations: Vec<String>,
    relation_index: HashMap<String, usize>,
    /// Row-major, stride `dim`, each phase wrapped into (−π, π].
    phases: Vec<f64>,
    step: u64,
    lr: f64,
}

pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta - 2.0 * PI * (theta / (2.0 * PI)).round();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

fn seeded(seed: u64, kind: &str, name: &str) -> ChaCha8Rng {
    let mut key = kind.as_bytes().to_vec();
    key.push(0);
    key.extend_from_slice(name.as_bytes());
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&key))
}

/// Distance ‖h∘r−t‖ over ℝ²ᵈ for row-layout entity vectors and a phase vector.
pub fn distance(h: &[f64], phase: &[f64], t: &[f64]) -> f64 {
    let d = phase.len();
    let mut acc = 0.0;
    for j in 0..d {
        let (c, s) = (phase[j].cos(), phase[j].sin());
        let ur = h[j] * c - h[d + j] * s - t[j];
        let ui = h[j] * s + h[d + j] * c - t[d + j];
        acc += ur * ur + ui * ui;
    }
    acc.sqrt()
}

pub fn score_vectors(h: &[f64], phase: &[f64], t: &[f64]) -> f64 {
    sigmoid(-distance(h, phase, t))
}

impl KgeModel {
    /// Empty model with one phase row per relation id and no entities.
    pub fn new<S: AsRef<str>>(dim: usize, relations: &[S], init_scale: f64, seed: u64) -> Self {
        assert!(dim > 0, "dimension must be positive");
        let mut m = Self {
            dim,
            init_scale,
            seed,
            entities: Vec::new(),
            entity_index: HashMap::new(),
            entity_emb: Vec::new(),
            relations: Vec::new(),
            relation_index: HashMap::new(),
            phases: Vec::new(),
            step: 0,
            lr: 0.0,
        };
        for r in relations {
            m.add_relation(r.as_ref());
        }
        m
    }

    /// Model with a relation row for every relation in the schema.
    pub fn for_ontology(o: &Ontology, dim: usize, cfg: &TrainConfig) -> Self {
        let ids: Vec<&str> = o.relations().iter().map(|r| r.id.as_str()).collect();
        Self::new(dim, &ids, cfg.init_scale(dim), cfg.seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn contains_entity(&self, name: &str) -> bool {
        self.entity_index.contains_key(name)
    }

    pub fn entity_row(&self, i: usize) -> &[f64] {
        &self.entity_emb[i * 2 * self.dim..(i + 1) * 2 * self.dim]
    }

    pub fn entity_row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = 2 * self.dim;
        &mut self.entity_emb[i * w..(i + 1) * w]
    }

    pub fn entity_vector(&self, name: &str) -> Result<&[f64], KgeError> {
        let i = self.entity_id(name).ok_or_else(|| KgeError::UnknownEntity(name.into()))?;
        Ok(self.entity_row(i))
    }

    pub fn phase_row(&self, r: usize) -> &[f64] {
        &self.phases[r * self.dim..(r + 1) * self.dim]
    }

    /// Sets a relation's phases, wrapping each into (−π, π].
    pub fn set_phase_row(&mut self, r: usize, phases: &[f64]) {
        let d = self.dim;
        for (dst, src) in self.phases[r * d..(r + 1) * d].iter_mut().zip(phases) {
            *dst = wrap_phase(*src);
        }
    }

    pub fn phases(&self, relation: &str) -> Result<&[f64], KgeError> {
        let r = self
            .relation_id(relation)
            .ok_or_else(|| KgeError::UnknownRelation(relation.into()))?;
        Ok(self.phase_row(r))
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.entity_emb, &mut self.phases)
    }

    pub(crate) fn params(&self) -> (&[f64], &[f64]) {
        (&self.entity_emb, &self.phases)
    }

    pub(crate) fn set_trainer_state(&mut self, step: u64, lr: f64) {
        self.step = step;
        self.lr = lr;
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        if let Some(i) = self.relation_id(name) {
            return i;
        }
        let mut rng = seeded(self.seed, "rel", name);
        for _ in 0..self.dim {
            self.phases.push(wrap_phase(rng.random_range(-PI..PI)));
        }
        let i = self.relations.len();
        self.relations.push(name.to_string());
        self.relation_index.insert(name.to_string(), i);
        i
    }

    /// Append an entity row. `init` overrides the seeded uniform init; known
    /// entities keep their row and the init is ignored.
    pub fn add_entity(&mut self, name: &str, init: Option<&[f64]>) -> Result<usize, KgeError> {
        if let Some(i) = self.entity_id(name) {
            return Ok(i);
        }
        match init {
            Some(v) => {
                if v.len() != 2 * self.dim {
                    return Err(KgeError::Shape {
                        expected: 2 * self.dim,
                        got: v.len(),
                    });
                }
                self.entity_emb.extend_from_slice(v);
            }
            None => {
                let mut rng = seeded(self.seed, "ent", name);
                let e = self.init_scale;
                for _ in 0..2 * self.dim {
                    self.entity_emb.push(rng.random_range(-e..=e));
                }
            }
        }
        let i = self.entities.len();
        self.entities.push(name.to_string());
        self.entity_index.insert(name.to_string(), i);
        Ok(i)
    }

    pub fn distance(&self, h: &str, r: &str, t: &str) -> Result<f64, KgeError> {
        let hv = self.entity_vector(h)?;
        let tv = self.entity_vector(t)?;
        Ok(distance(hv, self.phases(r)?, tv))
    }

    /// σ(−‖h∘r−t‖); at most 0.5, reached at zero distance.
    pub fn score(&self, h: &str, r: &str, t: &str) -> Result<f64, KgeError> {
        Ok(sigmoid(-self.distance(h, r, t)?))
    }

    pub fn score_with(&self, h: &[f64], r: &str, t: &[f64]) -> Result<f64, KgeError> {
        for v in [h, t] {
            if v.len() != 2 * self.dim {
                return Err(KgeError::Shape {
                    expected: 2 * self.dim,
                    got: v.len(),
                });
            }
        }
        Ok(score_vectors(h, self.phases(r)?, t))
    }

    pub fn score_indexed(&self, t: IndexedTriple) -> f64 {
        score_vectors(self.entity_row(t.head), self.phase_row(t.relation), self.entity_row(t.tail))
    }

    /// Map mention triples to indices, appending unseen entities with the
    /// seeded init. Unknown relations are an error.
    pub fn index_triples<S: AsRef<str>>(&mut self, triples: &[(S, S, S)]) -> Result<Vec<IndexedTriple>, KgeError> {
        triples
            .iter()
            .map(|(h, r, t)| {
                let relation = self
                    .relation_id(r.as_ref())
                    .ok_or_else(|| KgeError::UnknownRelation(r.as_ref().into()))?;
                Ok(IndexedTriple {
                    head: self.add_entity(h.as_ref(), None)?,
                    relation,
                    tail: self.add_entity(t.as_ref(), None)?,
                })
            })
            .collect()
    }

    /// Score every relation of `category` between `h` and `t`; top `k`
    /// descending, ties kept in schema order.
    pub fn rank_relations(&self, h: &str, t: &str, category: &str, o: &Ontology, k: usize) -> Result<Vec<(String, f64)>, KgeError> {
        let hv = self.entity_vector(h)?;
        let tv = self.entity_vector(t)?;
        self.rank_relations_with(hv, tv, category, o, k)
    }

    pub fn rank_relations_with(&self, h: &[f64], t: &[f64], category: &str, o: &Ontology, k: usize) -> Result<Vec<(String, f64)>, KgeError> {
        let rels = o.relations_in_category(category)?;
        let mut scored = Vec::with_capacity(rels.len());
        for r in rels {
            scored.push((r.id.clone(), self.score_with(h, &r.id, t)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored)
    }

    pub fn train(&mut self, triples: &[IndexedTriple], cfg: &TrainConfig) -> Result<TrainReport, KgeError> {
        train::train(self, triples, cfg, cfg.epochs)
    }

    /// Fine-tune from the current parameters for `epochs` epochs. Zero
    /// epochs or an empty set leaves the model untouched.
    pub fn warm_start(&mut self, triples: &[IndexedTriple], cfg: &TrainConfig, epochs: usize) -> Result<TrainReport, KgeError> {
        if epochs == 0 || triples.is_empty() {
            return Ok(TrainReport::default());
        }
        train::train(self, triples, cfg, epochs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn scalar_model(h: (f64, f64), phase: f64, t: (f64, f64)) -> KgeModel {
        let mut m = KgeModel::new(1, &["r"], 1.0, 0);
        m.add_entity("h", Some(&[h.0, h.1])).unwrap();
        m.add_entity("t", Some(&[t.0, t.1])).unwrap();
        m.set_phase_row(0, &[phase]);
        m
    }

    #[test]
    fn scalar_scores() {
        assert_eq!(scalar_model((1.0, 0.0), 0.0, (1.0, 0.0)).score("h", "r", "t").unwrap(), 0.5);
        let s = scalar_model((1.0, 0.0), PI, (1.0, 0.0)).score("h", "r", "t").unwrap();
        assert_relative_eq!(s, 1.0 / (1.0 + 2f64.exp()), epsilon = 1e-12);
        assert_relative_eq!(s, 0.1192, epsilon = 1e-4);
    }

    #[test]
    fn identity_rotation_on_same_entity() {
        let mut m = KgeModel::new(8, &["r"], 1.0, 3);
        m.add_entity("e", None).unwrap();
        m.set_phase_row(0, &[0.0; 8]);
        assert_eq!(m.score("e", "r", "e").unwrap(), 0.5);
    }

    #[test]
    fn distance_matches_complex_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 6;
        let mut m = KgeModel::new(d, &["r"], 1.0, 1);
        m.add_entity("a", None).unwrap();
        m.add_entity("b", None).unwrap();
        let ph: Vec<f64> = (0..d).map(|_| rng.random_range(-PI..PI)).collect();
        m.set_phase_row(0, &ph);
        let (a, b) = (m.entity_row(0).to_vec(), m.entity_row(1).to_vec());
        let oracle: f64 = (0..d)
            .map(|j| {
                let h = Complex64::new(a[j], a[d + j]);
                let t = Complex64::new(b[j], b[d + j]);
                (h * Complex64::from_polar(1.0, ph[j]) - t).norm_sqr()
            })
            .sum::<f64>()
            .sqrt();
        assert_relative_eq!(m.distance("a", "r", "b").unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn gauge_invariance() {
        let mut m = KgeModel::new(5, &["r"], 1.0, 9);
        for n in ["a", "b"] {
            m.add_entity(n, None).unwrap();
        }
        let before = m.score("a", "r", "b").unwrap();
        let g = Complex64::from_polar(1.0, 0.7);
        for i in 0..2 {
            let row = m.entity_row_mut(i);
            for j in 0..5 {
                let z = Complex64::new(row[j], row[5 + j]) * g;
                row[j] = z.re;
                row[5 + j] = z.im;
            }
        }
        assert_relative_eq!(m.score("a", "r", "b").unwrap(), before, epsilon = 1e-12);
    }

    #[test]
    fn errors_for_unknown_names() {
        let m = scalar_model((1.0, 0.0), 0.0, (1.0, 0.0));
        assert!(matches!(m.score("x", "r", "t"), Err(KgeError::UnknownEntity(_))));
        assert!(matches!(m.score("h", "q", "t"), Err(KgeError::UnknownRelation(_))));
    }

    #[test]
    fn index_is_append_only_and_bijective() {
        let mut m = KgeModel::new(4, &["r"], 1.0, 2);
        let ids = m.index_triples(&[("a", "r", "b"), ("b", "r", "c"), ("a", "r", "c")]).unwrap();
        assert_eq!(m.entities(), &["a", "b", "c"]);
        assert_eq!(ids[2], IndexedTriple { head: 0, relation: 0, tail: 2 });
        let row_a = m.entity_row(0).to_vec();
        m.add_entity("d", None).unwrap();
        assert_eq!(m.entity_row(0), row_a.as_slice());
        for (i, e) in m.entities().iter().enumerate() {
            assert_eq!(m.entity_id(e), Some(i));
        }
    }

    #[test]
    fn init_is_seeded_per_name() {
        let mut a = KgeModel::new(4, &["r"], 0.5, 7);
        let mut b = KgeModel::new(4, &["r"], 0.5, 7);
        a.add_entity("x", None).unwrap();
        a.add_entity("y", None).unwrap();
        b.add_entity("y", None).unwrap();
        assert_eq!(a.entity_vector("y").unwrap(), b.entity_vector("y").unwrap());
        assert!(a.entity_vector("y").unwrap().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn phases_are_wrapped() {
        for th in [-7.0, -PI, 0.0, PI, 3.5, 100.0] {
            let w = wrap_phase(th);
            assert!(w > -PI && w <= PI, "{th} -> {w}");
            assert_relative_eq!(w.cos(), th.cos(), epsilon = 1e-9);
            assert_relative_eq!(w.sin(), th.sin(), epsilon = 1e-9);
        }
    }

    #[test]
    fn rank_relations_stays_in_category() {
        let o = Ontology::default_sdg();
        let mut m = KgeModel::for_ontology(&o, 8, &TrainConfig::default());
        m.add_entity("a", None).unwrap();
        m.add_entity("b", None).unwrap();
        let naming = o.relations_in_category("Definition & Naming").unwrap();
        assert_eq!(naming.len(), 4);
        let top = m.rank_relations("a", "b", "Definition & Naming", &o, 3).unwrap();
        assert_eq!(top.len(), 3);
        assert!(top.iter().all(|(r, _)| naming.iter().any(|n| &n.id == r)));
        assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
        assert_eq!(m.rank_relations("a", "b", "Definition & Naming", &o, 10).unwrap().len(), 4);
        assert!(m.rank_relations("a", "b", "Nope", &o, 3).is_err());
    }

    #[test]
    fn planted_relation_ranks_first() {
        let o = Ontology::default_sdg();
        let mut m = KgeModel::for_ontology(&o, 8, &TrainConfig::default());
        m.add_entity("a", None).unwrap();
        let r_star = o.relations_in_category("Quantitative").unwrap()[5].id.clone();
        let rid = m.relation_id(&r_star).unwrap();
        let ph = m.phase_row(rid).to_vec();
        let a = m.entity_row(0).to_vec();
        let d = 8;
        let t: Vec<f64> = (0..d)
            .map(|j| a[j] * ph[j].cos() - a[d + j] * ph[j].sin())
            .chain((0..d).map(|j| a[j] * ph[j].sin() + a[d + j] * ph[j].cos()))
            .collect();
        m.add_entity("b", Some(&t)).unwrap();
        let all = m.rank_relations("a", "b", "Quantitative", &o, 14).unwrap();
        let best = all
            .iter()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        assert_eq!(all[0].0, r_star);
        assert_eq!(best.0, r_star);
    }
}
