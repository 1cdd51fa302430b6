use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{distance, wrap_phase, IndexedTriple, KgeError, KgeModel, Optimizer, TrainConfig};
use crate::util::sigmoid;

/// Examples per gradient work unit. Fixed so the reduction order does not
/// depend on the thread count.
const GRAD_CHUNK: usize = 8;
const NEGATIVE_TRIES: usize = 16;

/// A corrupted (head, tail) pair sharing the positive's relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Negative {
    pub head: usize,
    pub tail: usize,
}

/// Sparse gradient of one or more examples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub entities: BTreeMap<usize, Vec<f64>>,
    pub relations: BTreeMap<usize, Vec<f64>>,
}

impl Gradient {
    fn merge_into(&self, ent: &mut [f64], rel: &mut [f64], dim: usize) {
        for (&i, g) in &self.entities {
            for (dst, v) in ent[i * 2 * dim..(i + 1) * 2 * dim].iter_mut().zip(g) {
                *dst += v;
            }
        }
        for (&r, g) in &self.relations {
            for (dst, v) in rel[r * dim..(r + 1) * dim].iter_mut().zip(g) {
                *dst += v;
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: u64,
    /// Loss on a fixed negative sample before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn neg_weights(dists: &[f64], alpha: f64) -> Vec<f64> {
    let logits: Vec<f64> = dists.iter().map(|d| -alpha * d).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Self-adversarial loss of one positive and its negatives:
/// −log σ(γ−d₀) − Σ pᵢ log σ(dᵢ−γ), p = softmax(−α·d).
pub fn example_loss(m: &KgeModel, pos: IndexedTriple, negs: &[Negative], gamma: f64, alpha: f64) -> f64 {
    let ph = m.phase_row(pos.relation);
    let d0 = distance(m.entity_row(pos.head), ph, m.entity_row(pos.tail));
    let mut loss = softplus(d0 - gamma);
    if !negs.is_empty() {
        let dists: Vec<f64> = negs
            .iter()
            .map(|n| distance(m.entity_row(n.head), ph, m.entity_row(n.tail)))
            .collect();
        let p = neg_weights(&dists, alpha);
        loss += dists.iter().zip(&p).map(|(d, pi)| pi * softplus(gamma - d)).sum::<f64>();
    }
    loss
}

/// Adds `coef · ∂d/∂(h, θ, t)` for one distance term.
fn add_distance_grad(m: &KgeModel, head: usize, rel: usize, tail: usize, coef: f64, g: &mut Gradient) {
    let dim = m.dim();
    let h = m.entity_row(head);
    let t = m.entity_row(tail);
    let ph = m.phase_row(rel);
    let d = distance(h, ph, t);
    if d == 0.0 || coef == 0.0 {
        return;
    }
    let k = coef / d;
    let mut gh = vec![0.0; 2 * dim];
    let mut gt = vec![0.0; 2 * dim];
    let mut gp = vec![0.0; dim];
    for j in 0..dim {
        let (c, s) = (ph[j].cos(), ph[j].sin());
        let (a, b) = (h[j], h[dim + j]);
        let ur = a * c - b * s - t[j];
        let ui = a * s + b * c - t[dim + j];
        gh[j] = k * (ur * c + ui * s);
        gh[dim + j] = k * (-ur * s + ui * c);
        gt[j] = -k * ur;
        gt[dim + j] = -k * ui;
        gp[j] = k * (ur * (-a * s - b * c) + ui * (a * c - b * s));
    }
    let add = |map: &mut BTreeMap<usize, Vec<f64>>, i: usize, v: Vec<f64>| match map.get_mut(&i) {
        Some(acc) => acc.iter_mut().zip(&v).for_each(|(x, y)| *x += y),
        None => {
            map.insert(i, v);
        }
    };
    add(&mut g.entities, head, gh);
    add(&mut g.entities, tail, gt);
    add(&mut g.relations, rel, gp);
}

/// Loss and exact gradient of one example, including the dependence of the
/// adversarial weights on the negative distances.
pub fn example_gradient(m: &KgeModel, pos: IndexedTriple, negs: &[Negative], gamma: f64, alpha: f64) -> (f64, Gradient) {
    let mut g = Gradient::default();
    accumulate_example(m, pos, negs, gamma, alpha, 1.0, &mut g);
    (example_loss(m, pos, negs, gamma, alpha), g)
}

fn accumulate_example(m: &KgeModel, pos: IndexedTriple, negs: &[Negative], gamma: f64, alpha: f64, scale: f64, g: &mut Gradient) {
    let ph = m.phase_row(pos.relation);
    let d0 = distance(m.entity_row(pos.head), ph, m.entity_row(pos.tail));
    add_distance_grad(m, pos.head, pos.relation, pos.tail, scale * sigmoid(d0 - gamma), g);
    if negs.is_empty() {
        return;
    }
    let dists: Vec<f64> = negs
        .iter()
        .map(|n| distance(m.entity_row(n.head), ph, m.entity_row(n.tail)))
        .collect();
    let p = neg_weights(&dists, alpha);
    let ell: Vec<f64> = dists.iter().map(|d| softplus(gamma - d)).collect();
    let mean_ell: f64 = p.iter().zip(&ell).map(|(a, b)| a * b).sum();
    for (j, n) in negs.iter().enumerate() {
        let coef = -p[j] * sigmoid(gamma - dists[j]) - alpha * p[j] * (ell[j] - mean_ell);
        add_distance_grad(m, n.head, pos.relation, n.tail, scale * coef, g);
    }
}

fn sample_negatives(
    rng: &mut ChaCha8Rng,
    pos: IndexedTriple,
    n: usize,
    n_entities: usize,
    known: &HashSet<IndexedTriple>,
) -> Vec<Negative> {
    (0..n)
        .map(|_| {
            let mut cand = Negative {
                head: pos.head,
                tail: pos.tail,
            };
            for _ in 0..NEGATIVE_TRIES {
                let e = rng.random_range(0..n_entities);
                cand = if rng.random_bool(0.5) {
                    Negative { head: e, tail: pos.tail }
                } else {
                    Negative { head: pos.head, tail: e }
                };
                let t = IndexedTriple {
                    head: cand.head,
                    relation: pos.relation,
                    tail: cand.tail,
                };
                if !known.contains(&t) {
                    break;
                }
            }
            cand
        })
        .collect()
}

fn mean_loss(m: &KgeModel, batch: &[(IndexedTriple, Vec<Negative>)], cfg: &TrainConfig) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|(p, n)| example_loss(m, *p, n, cfg.gamma, cfg.alpha))
        .sum();
    total / batch.len().max(1) as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]; 2], grads: [&[f64]; 2], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (x, gi) in p.iter_mut().zip(g) {
                self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * gi;
                self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * gi * gi;
                *x -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

pub(super) fn train(m: &mut KgeModel, triples: &[IndexedTriple], cfg: &TrainConfig, epochs: usize) -> Result<TrainReport, KgeError> {
    cfg.validate()?;
    if triples.is_empty() {
        return Err(KgeError::EmptyTrainingSet);
    }
    let n_ent = m.entities().len();
    let n_rel = m.relations().len();
    if let Some(bad) = triples
        .iter()
        .find(|t| t.head >= n_ent || t.tail >= n_ent || t.relation >= n_rel)
    {
        return Err(KgeError::UnknownEntity(format!("index {bad:?}")));
    }
    let dim = m.dim();
    let known: HashSet<IndexedTriple> = triples.iter().copied().collect();
    // Successive calls on the same model draw different streams.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ m.step().wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let probe: Vec<(IndexedTriple, Vec<Negative>)> = triples
        .iter()
        .map(|&p| (p, sample_negatives(&mut rng, p, cfg.negatives, n_ent, &known)))
        .collect();

    let mut report = TrainReport {
        epochs,
        initial_loss: mean_loss(m, &probe, cfg),
        ..TrainReport::default()
    };
    let (ent_len, rel_len) = (m.params().0.len(), m.params().1.len());
    let mut adam = matches!(cfg.optimizer, Optimizer::Adam).then(|| Adam::new(ent_len + rel_len));
    let mut g_ent = vec![0.0; ent_len];
    let mut g_rel = vec![0.0; rel_len];
    let mut lr = cfg.lr;
    let mut step = m.step();
    let mut order: Vec<usize> = (0..triples.len()).collect();

    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(IndexedTriple, Vec<Negative>)> = batch_idx
                .iter()
                .map(|&i| {
                    let p = triples[i];
                    (p, sample_negatives(&mut rng, p, cfg.negatives, n_ent, &known))
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let model: &KgeModel = m;
            let parts: Vec<(f64, Gradient)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut g = Gradient::default();
                    let mut loss = 0.0;
                    for (p, negs) in chunk {
                        loss += example_loss(model, *p, negs, cfg.gamma, cfg.alpha);
                        accumulate_example(model, *p, negs, cfg.gamma, cfg.alpha, scale, &mut g);
                    }
                    (loss, g)
                })
                .collect();
            g_ent.iter_mut().for_each(|x| *x = 0.0);
            g_rel.iter_mut().for_each(|x| *x = 0.0);
            for (loss, g) in &parts {
                epoch_loss += loss;
                g.merge_into(&mut g_ent, &mut g_rel, dim);
            }
            let (ent, rel) = m.params_mut();
            match adam.as_mut() {
                Some(opt) => opt.step(&mut [ent, &mut *rel], [&g_ent, &g_rel], lr),
                None => {
                    for (x, g) in ent.iter_mut().zip(&g_ent) {
                        *x -= lr * g;
                    }
                    for (x, g) in rel.iter_mut().zip(&g_rel) {
                        *x -= lr * g;
                    }
                }
            }
            for th in rel.iter_mut() {
                *th = wrap_phase(*th);
            }
            debug_assert!(rel.iter().all(|th| (th.cos().hypot(th.sin()) - 1.0).abs() < 1e-6));
            step += 1;
        }
        report.epoch_losses.push(epoch_loss / triples.len() as f64);
        if cfg.decay_every > 0 && epoch % cfg.decay_every == 0 {
            lr *= cfg.decay_factor;
        }
    }
    report.steps = step - m.step();
    m.set_trainer_state(step, lr);
    report.final_loss = mean_loss(m, &probe, cfg);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_graph(seed: u64) -> (KgeModel, Vec<IndexedTriple>) {
        let mut m = KgeModel::new(4, &["r", "s"], 0.5, seed);
        let mut names = Vec::new();
        for i in 0..10 {
            names.push((format!("e{i}"), if i % 2 == 0 { "r" } else { "s" }.to_string(), format!("e{}", (i + 1) % 10)));
        }
        let ts = m.index_triples(&names).unwrap();
        (m, ts)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            gamma: 2.0,
            negatives: 4,
            batch_size: 4,
            epochs: 60,
            lr: 0.02,
            decay_every: 0,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_set_is_an_error() {
        let (mut m, _) = small_graph(1);
        assert!(matches!(m.train(&[], &cfg()), Err(KgeError::EmptyTrainingSet)));
    }

    #[test]
    fn loss_decreases_with_either_optimizer() {
        for opt in [Optimizer::Adam, Optimizer::Sgd] {
            let (mut m, ts) = small_graph(1);
            let c = TrainConfig {
                optimizer: opt,
                lr: if opt == Optimizer::Sgd { 0.5 } else { 0.02 },
                ..cfg()
            };
            let r = m.train(&ts, &c).unwrap();
            assert!(r.final_loss < r.initial_loss, "{opt:?}: {r:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (mut a, ts) = small_graph(2);
        let (mut b, _) = small_graph(2);
        a.train(&ts, &cfg()).unwrap();
        b.train(&ts, &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warm_start_noop_is_bit_identical() {
        let (mut m, ts) = small_graph(3);
        m.train(&ts, &cfg()).unwrap();
        let before = m.clone();
        m.warm_start(&[], &cfg(), 0).unwrap();
        m.warm_start(&ts, &cfg(), 0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn negatives_avoid_known_positives() {
        let (_, ts) = small_graph(4);
        let known: HashSet<IndexedTriple> = ts.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &p in &ts {
            for n in sample_negatives(&mut rng, p, 32, 10, &known) {
                let t = IndexedTriple { head: n.head, relation: p.relation, tail: n.tail };
                assert!(!known.contains(&t));
                assert!(n.head == p.head || n.tail == p.tail);
            }
        }
    }

    #[test]
    fn weights_are_a_distribution() {
        let p = neg_weights(&[1.0, 2.0, 30.0, 1e6], 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
    }
}
