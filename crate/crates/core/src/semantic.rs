//! Projection of text-encoder vectors into the embedding space, so entities
//! never seen in training still get a usable complex embedding.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::container::{Container, ContainerError, SectionWriter};
use crate::kge::KgeModel;
use crate::util::fnv1a;

pub const ENV_ENCODER_URL: &str = "LECKG_ENC_URL";
pub const DEFAULT_LAMBDA: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum SemanticError {
    #[error("encoder failed: {0}")]
    Encoder(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("need at least one training entity, got {0}")]
    InsufficientEntities(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Checkpoint(#[from] ContainerError),
}

/// Fixed-dimension text encoder. Must be deterministic per mention.
pub trait SemanticEncoder: Send + Sync {
    fn out_dim(&self) -> usize;
    fn encode(&self, mention: &str) -> Result<Vec<f64>, SemanticError>;
}

/// Deterministic stand-in encoder: character uni- and bi-gram counts hashed
/// into buckets, each bucket owning a seeded Gaussian direction; the sum is
/// L2-normalized. Mentions sharing n-grams land near each other.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
    seed: u64,
    buckets: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            buckets: 1 << 16,
        }
    }

    fn direction(&self, bucket: u64, out: &mut [f64], weight: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ bucket.wrapping_mul(0x2545_f491_4f6c_dd1d));
        for x in out.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *x += weight * g;
        }
    }
}

impl SemanticEncoder for HashEncoder {
    fn out_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, mention: &str) -> Result<Vec<f64>, SemanticError> {
        let chars: Vec<char> = mention.trim().chars().collect();
        let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
        let mut gram = |s: String| *counts.entry(fnv1a(s.as_bytes()) % self.buckets).or_default() += 1.0;
        for c in &chars {
            gram(c.to_string());
        }
        for w in chars.windows(2) {
            gram(w.iter().collect());
        }
        let mut v = vec![0.0; self.dim];
        for (b, n) in counts {
            self.direction(b, &mut v, n);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// Encoder backed by a fixed mention → vector table; unknown mentions are an error.
#[derive(Debug, Clone, Default)]
pub struct TableEncoder {
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

impl TableEncoder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            table: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, mention: impl Into<String>, v: Vec<f64>) -> &mut Self {
        assert_eq!(v.len(), self.dim, "table vector has wrong dimension");
        self.table.insert(mention.into(), v);
        self
    }
}

impl SemanticEncoder for TableEncoder {
    fn out_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, mention: &str) -> Result<Vec<f64>, SemanticError> {
        self.table
            .get(mention)
            .cloned()
            .ok_or_else(|| SemanticError::Encoder(format!("no vector for `{mention}`")))
    }
}

/// HTTP encoder: POSTs `{"inputs": [mention]}` and accepts either
/// `{"embeddings": [[...]]}` or a bare `[[...]]`.
pub struct HttpEncoder {
    url: String,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEncoder {
    pub fn new(url: impl Into<String>, dim: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            url: url.into(),
            dim,
            agent,
        }
    }

    pub fn from_env(dim: usize) -> Option<Self> {
        std::env::var(ENV_ENCODER_URL).ok().map(|u| Self::new(u, dim))
    }
}

impl SemanticEncoder for HttpEncoder {
    fn out_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, mention: &str) -> Result<Vec<f64>, SemanticError> {
        let err = |e: &dyn std::fmt::Display| SemanticError::Encoder(e.to_string());
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(serde_json::json!({ "inputs": [mention] }))
            .map_err(|e| err(&e))?;
        let body: Value = resp.body_mut().read_json().map_err(|e| err(&e))?;
        let row = body
            .get("embeddings")
            .unwrap_or(&body)
            .get(0)
            .and_then(Value::as_array)
            .ok_or_else(|| SemanticError::Encoder("unexpected response shape".into()))?;
        let v: Vec<f64> = row.iter().filter_map(Value::as_f64).collect();
        if v.len() != self.dim {
            return Err(SemanticError::Shape {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub train_entities: usize,
    pub holdout_entities: usize,
    /// Relative Frobenius residual ‖Ŷ−Y‖/‖Y‖ on each split.
    pub train_error: f64,
    pub holdout_error: Option<f64>,
}

/// Affine map `u = W·v + b` from encoder space (in_dim) into the flattened
/// embedding layout (2·d).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lambda: f64,
    pub stats: FitStats,
}

fn relative_error(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    let denom = truth.norm();
    let num = (pred - truth).norm();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}

/// Closed-form ridge on centered data. Rows of `x`/`y` are samples. The
/// dual form is used when there are fewer samples than input features.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.nrows();
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    let mut yc = y.clone();
    for i in 0..n {
        xc.row_mut(i).zip_apply(&x_mean, |a, m| *a -= m);
        yc.row_mut(i).zip_apply(&y_mean, |a, m| *a -= m);
    }
    let p = x.ncols();
    let solve = |a: DMatrix<f64>, rhs: DMatrix<f64>| -> DMatrix<f64> {
        match a.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => a.lu().solve(&rhs).expect("ridge system is regularized"),
        }
    };
    // coef: p × q, so that ŷ = x·coef
    let coef = if n < p {
        let gram = &xc * xc.transpose() + DMatrix::identity(n, n) * lambda;
        xc.transpose() * solve(gram, yc)
    } else {
        let gram = xc.transpose() * &xc + DMatrix::identity(p, p) * lambda;
        solve(gram, xc.transpose() * yc)
    };
    let w = coef.transpose();
    let b = y_mean.transpose() - &w * x_mean.transpose();
    (w, b)
}

fn encode_all(enc: &dyn SemanticEncoder, names: &[&str]) -> Result<DMatrix<f64>, SemanticError> {
    let p = enc.out_dim();
    let mut x = DMatrix::zeros(names.len(), p);
    for (i, n) in names.iter().enumerate() {
        let v = enc.encode(n)?;
        if v.len() != p {
            return Err(SemanticError::Shape { expected: p, got: v.len() });
        }
        x.row_mut(i).copy_from_slice(&v);
    }
    Ok(x)
}

fn targets(m: &KgeModel, names: &[&str]) -> DMatrix<f64> {
    let q = 2 * m.dim();
    let mut y = DMatrix::zeros(names.len(), q);
    for (i, n) in names.iter().enumerate() {
        y.row_mut(i).copy_from_slice(m.entity_vector(n).expect("entity is indexed"));
    }
    y
}

/// Fit the projection on the model's known entities, holding out
/// `⌊holdout·n⌋` of them (seeded shuffle) to report generalization error.
pub fn fit_alignment(
    enc: &dyn SemanticEncoder,
    m: &KgeModel,
    entities: &[String],
    holdout: f64,
    lambda: f64,
    seed: u64,
) -> Result<AlignmentMap, SemanticError> {
    if !(0.0..1.0).contains(&holdout) || !(lambda > 0.0) {
        return Err(SemanticError::InvalidParams(format!("holdout {holdout}, lambda {lambda}")));
    }
    let mut names: Vec<&str> = entities.iter().map(String::as_str).filter(|e| m.contains_entity(e)).collect();
    names.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = (holdout * names.len() as f64).floor() as usize;
    let (held, train) = names.split_at(n_hold);
    if train.is_empty() {
        return Err(SemanticError::InsufficientEntities(train.len()));
    }
    let x = encode_all(enc, train)?;
    let y = targets(m, train);
    let (w, b) = ridge_fit(&x, &y, lambda);
    let apply = |x: &DMatrix<f64>| {
        let mut out = x * w.transpose();
        for mut row in out.row_iter_mut() {
            row += b.transpose();
        }
        out
    };
    let train_error = relative_error(&apply(&x), &y);
    let holdout_error = if held.is_empty() {
        None
    } else {
        let xh = encode_all(enc, held)?;
        Some(relative_error(&apply(&xh), &targets(m, held)))
    };
    Ok(AlignmentMap {
        w,
        b,
        lambda,
        stats: FitStats {
            train_entities: train.len(),
            holdout_entities: held.len(),
            train_error,
            holdout_error,
        },
    })
}

impl AlignmentMap {
    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    /// `W·v + b` in the flattened layout (real parts first).
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, SemanticError> {
        if v.len() != self.in_dim() {
            return Err(SemanticError::Shape {
                expected: self.in_dim(),
                got: v.len(),
            });
        }
        let out = &self.w * DVector::from_column_slice(v) + &self.b;
        Ok(out.as_slice().to_vec())
    }

    pub fn to_container(&self) -> Container {
        let mut h = SectionWriter::default();
        h.u64(self.in_dim() as u64)
            .u64(self.out_dim() as u64)
            .f64(self.lambda)
            .u64(self.stats.train_entities as u64)
            .u64(self.stats.holdout_entities as u64)
            .f64(self.stats.train_error)
            .f64(self.stats.holdout_error.unwrap_or(f64::NAN));
        let mut w = SectionWriter::default();
        w.f64s(self.w.as_slice());
        let mut b = SectionWriter::default();
        b.f64s(self.b.as_slice());
        let mut c = Container::new();
        c.push(b"ALNH", h).push(b"ALNW", w).push(b"ALNB", b);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, SemanticError> {
        let mut h = c.section(b"ALNH")?;
        let in_dim = h.usize()?;
        let out_dim = h.usize()?;
        let lambda = h.f64()?;
        let train_entities = h.usize()?;
        let holdout_entities = h.usize()?;
        let train_error = h.f64()?;
        let holdout_error = Some(h.f64()?).filter(|e| !e.is_nan());
        let w = c.section(b"ALNW")?.f64s()?;
        let b = c.section(b"ALNB")?.f64s()?;
        if w.len() != in_dim * out_dim || b.len() != out_dim {
            return Err(h.malformed("array sizes disagree with header").into());
        }
        Ok(Self {
            w: DMatrix::from_column_slice(out_dim, in_dim, &w),
            b: DVector::from_column_slice(&b),
            lambda,
            stats: FitStats {
                train_entities,
                holdout_entities,
                train_error,
                holdout_error,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SemanticError> {
        Ok(self.to_container().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SemanticError> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Projected embedding for a mention the model has not indexed.
pub fn embed_unseen(map: &AlignmentMap, enc: &dyn SemanticEncoder, mention: &str) -> Result<Vec<f64>, SemanticError> {
    map.project(&enc.encode(mention)?)
}

/// Learned row for known entities, projection otherwise.
pub fn resolve_embedding(m: &KgeModel, map: Option<&AlignmentMap>, enc: &dyn SemanticEncoder, mention: &str) -> Result<Vec<f64>, SemanticError> {
    if let Ok(v) = m.entity_vector(mention) {
        return Ok(v.to_vec());
    }
    match map {
        Some(map) => {
            let v = embed_unseen(map, enc, mention)?;
            if v.len() != 2 * m.dim() {
                return Err(SemanticError::Shape {
                    expected: 2 * m.dim(),
                    got: v.len(),
                });
            }
            Ok(v)
        }
        None => Err(SemanticError::Encoder(format!("`{mention}` is unseen and no alignment is fitted"))),
    }
}

/// `runs` projections of the mention with encoder coordinates dropped at
/// `drop_rate` and survivors scaled by 1/(1−drop_rate). The mask stream is
/// seeded by (`seed`, mention), so calls are reproducible and independent.
pub fn stochastic_embeddings(
    map: &AlignmentMap,
    enc: &dyn SemanticEncoder,
    mention: &str,
    runs: usize,
    drop_rate: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SemanticError> {
    if runs == 0 || !(0.0..1.0).contains(&drop_rate) {
        return Err(SemanticError::InvalidParams(format!("runs {runs}, drop_rate {drop_rate}")));
    }
    let v = enc.encode(mention)?;
    let keep = 1.0 / (1.0 - drop_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(mention.as_bytes()));
    (0..runs)
        .map(|_| {
            let masked: Vec<f64> = v
                .iter()
                .map(|x| if rng.random::<f64>() < drop_rate { 0.0 } else { x * keep })
                .collect();
            map.project(&masked)
        })
        .collect()
}

/// Interleaved complex components → row layout `[re.., im..]`.
pub fn to_row_layout(complex: &[(f64, f64)]) -> Vec<f64> {
    complex.iter().map(|c| c.0).chain(complex.iter().map(|c| c.1)).collect()
}

pub fn from_row_layout(row: &[f64]) -> Vec<(f64, f64)> {
    let d = row.len() / 2;
    (0..d).map(|j| (row[j], row[d + j])).collect()
}
