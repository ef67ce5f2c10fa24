//! ComplEx knowledge-graph embeddings.
//!
//! Entities and relations live in `C^d`, stored as separate real and
//! imaginary `f64` tables. The score is the real part of the trilinear
//! product with the tail conjugated:
//!
//! `S = Σ Re h·Re r·Re t + Im h·Re r·Im t + Re h·Im r·Im t − Im h·Im r·Re t`
//!
//! Training applies a sigmoid to `S` and minimises binary cross-entropy
//! against corrupted triples.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::embedding::{EmbeddingSpace, VectorLookup};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::math::{rng_for, sigmoid, softplus};

/// Complex vectors for every entity and relation of a graph, indexed like the
/// graph's vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpace {
    dim: usize,
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    ent_re: Vec<f64>,
    ent_im: Vec<f64>,
    rel_re: Vec<f64>,
    rel_im: Vec<f64>,
}

/// Borrowed real and imaginary halves of one complex vector.
#[derive(Debug, Clone, Copy)]
pub struct CVec<'a> {
    pub re: &'a [f64],
    pub im: &'a [f64],
}

impl ComplexSpace {
    /// Builds a space from explicit tables (`names.len() * dim` values each).
    pub fn from_parts(
        dim: usize,
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        entity_re_im: (Vec<f64>, Vec<f64>),
        relation_re_im: (Vec<f64>, Vec<f64>),
    ) -> Result<Self> {
        let (ent_re, ent_im) = entity_re_im;
        let (rel_re, rel_im) = relation_re_im;
        if dim == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        let ne = entity_names.len() * dim;
        let nr = relation_names.len() * dim;
        if ent_re.len() != ne || ent_im.len() != ne || rel_re.len() != nr || rel_im.len() != nr {
            return Err(Error::Invalid("table sizes do not match names and dimension".into()));
        }
        if [&ent_re, &ent_im, &rel_re, &rel_im]
            .iter()
            .any(|t| t.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Invalid("non-finite component".into()));
        }
        Ok(ComplexSpace {
            dim,
            entity_names,
            relation_names,
            ent_re,
            ent_im,
            rel_re,
            rel_im,
        })
    }

    fn random(kg: &KnowledgeGraph, dim: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0);
        let normal = Normal::new(0.0, 0.1 / (dim as f64).sqrt()).expect("valid std");
        let mut draw = |n: usize| -> Vec<f64> { (0..n * dim).map(|_| normal.sample(&mut rng)).collect() };
        let ne = kg.num_entities();
        let nr = kg.num_relations();
        ComplexSpace {
            dim,
            entity_names: kg.entities().iter().map(str::to_owned).collect(),
            relation_names: kg.relations().iter().map(str::to_owned).collect(),
            ent_re: draw(ne),
            ent_im: draw(ne),
            rel_re: draw(nr),
            rel_im: draw(nr),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity(&self, e: EntityId) -> CVec<'_> {
        let r = e.index() * self.dim..(e.index() + 1) * self.dim;
        CVec {
            re: &self.ent_re[r.clone()],
            im: &self.ent_im[r],
        }
    }

    pub fn relation(&self, r: RelationId) -> CVec<'_> {
        let s = r.index() * self.dim..(r.index() + 1) * self.dim;
        CVec {
            re: &self.rel_re[s.clone()],
            im: &self.rel_im[s],
        }
    }

    fn check(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<()> {
        for e in [h, t] {
            if e.index() >= self.num_entities() {
                return Err(Error::MissingEmbedding(format!("entity #{}", e.0)));
            }
        }
        if r.index() >= self.num_relations() {
            return Err(Error::MissingEmbedding(format!("relation #{}", r.0)));
        }
        Ok(())
    }

    pub fn score_triple(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
        self.check(h, r, t)?;
        Ok(score(self.entity(h), self.relation(r), self.entity(t)))
    }

    /// Entity vectors as real rows of `2d` columns, real part first; used for
    /// cosine similarity.
    pub fn entity_space(&self) -> EmbeddingSpace {
        concat_space(self.dim, &self.entity_names, &self.ent_re, &self.ent_im)
    }

    pub fn relation_space(&self) -> EmbeddingSpace {
        concat_space(self.dim, &self.relation_names, &self.rel_re, &self.rel_im)
    }

    /// Writes the entity and relation files in word2vec text format.
    pub fn save(&self, entities: &Path, relations: &Path) -> Result<()> {
        self.entity_space().save_word2vec(entities)?;
        self.relation_space().save_word2vec(relations)
    }

    /// Reads back a pair of files written by [`ComplexSpace::save`].
    pub fn load(entities: &Path, relations: &Path) -> Result<Self> {
        let e = EmbeddingSpace::load_word2vec(entities)?;
        let r = EmbeddingSpace::load_word2vec(relations)?;
        if e.dim() % 2 != 0 || e.dim() != r.dim() {
            return Err(Error::Invalid("complex tables need equal, even column counts".into()));
        }
        let split = |s: &EmbeddingSpace| {
            let d = s.dim() / 2;
            let mut re = Vec::with_capacity(s.len() * d);
            let mut im = Vec::with_capacity(s.len() * d);
            for i in 0..s.len() {
                let row = s.row(i);
                re.extend(row[..d].iter().map(|&x| x as f64));
                im.extend(row[d..].iter().map(|&x| x as f64));
            }
            (s.tokens().map(str::to_owned).collect::<Vec<_>>(), re, im)
        };
        let (en, ere, eim) = split(&e);
        let (rn, rre, rim) = split(&r);
        Self::from_parts(e.dim() / 2, en, rn, (ere, eim), (rre, rim))
    }
}

fn concat_space(dim: usize, names: &[String], re: &[f64], im: &[f64]) -> EmbeddingSpace {
    let mut data = Vec::with_capacity(names.len() * 2 * dim);
    for i in 0..names.len() {
        data.extend(re[i * dim..(i + 1) * dim].iter().map(|&x| x as f32));
        data.extend(im[i * dim..(i + 1) * dim].iter().map(|&x| x as f32));
    }
    EmbeddingSpace::new(2 * dim, names.to_vec(), data).expect("consistent table sizes")
}

/// The ComplEx score of one triple.
pub fn score(h: CVec<'_>, r: CVec<'_>, t: CVec<'_>) -> f64 {
    let mut s = 0.0;
    for j in 0..h.re.len() {
        s += h.re[j] * r.re[j] * t.re[j] + h.im[j] * r.re[j] * t.im[j] + h.re[j] * r.im[j] * t.im[j]
            - h.im[j] * r.im[j] * t.re[j];
    }
    s
}

/// Gradients of the per-triple loss with respect to the six component vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGradient {
    pub loss: f64,
    pub h_re: Vec<f64>,
    pub h_im: Vec<f64>,
    pub r_re: Vec<f64>,
    pub r_im: Vec<f64>,
    pub t_re: Vec<f64>,
    pub t_im: Vec<f64>,
}

/// Binary cross-entropy of `sigmoid(S)` against `label` plus
/// `reg · Σ ||x||²` over the six vectors, with its gradient.
pub fn triple_loss_and_grad(h: CVec<'_>, r: CVec<'_>, t: CVec<'_>, label: bool, reg: f64) -> TripleGradient {
    let s = score(h, r, t);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let penalty = reg * (sq(h.re) + sq(h.im) + sq(r.re) + sq(r.im) + sq(t.re) + sq(t.im));
    let loss = if label { softplus(-s) } else { softplus(s) } + penalty;
    let g = sigmoid(s) - if label { 1.0 } else { 0.0 };
    let d = h.re.len();
    let mut out = TripleGradient {
        loss,
        h_re: vec![0.0; d],
        h_im: vec![0.0; d],
        r_re: vec![0.0; d],
        r_im: vec![0.0; d],
        t_re: vec![0.0; d],
        t_im: vec![0.0; d],
    };
    let w = 2.0 * reg;
    for j in 0..d {
        out.h_re[j] = g * (r.re[j] * t.re[j] + r.im[j] * t.im[j]) + w * h.re[j];
        out.h_im[j] = g * (r.re[j] * t.im[j] - r.im[j] * t.re[j]) + w * h.im[j];
        out.r_re[j] = g * (h.re[j] * t.re[j] + h.im[j] * t.im[j]) + w * r.re[j];
        out.r_im[j] = g * (h.re[j] * t.im[j] - h.im[j] * t.re[j]) + w * r.im[j];
        out.t_re[j] = g * (h.re[j] * r.re[j] - h.im[j] * r.im[j]) + w * t.re[j];
        out.t_im[j] = g * (h.im[j] * r.re[j] + h.re[j] * r.im[j]) + w * t.im[j];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    Sgd,
    #[default]
    Adagrad,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adagrad" => Ok(Optimizer::Adagrad),
            other => Err(Error::Config(format!("unknown optimizer {other:?} (sgd, adagrad)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Corrupted triples per positive.
    pub negatives: usize,
    /// Positives per batch.
    pub batch_size: usize,
    pub seed: u64,
    pub regularization: f64,
    /// Probabilities of corrupting head, relation and tail.
    pub corruption: [f64; 3],
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            epochs: 100,
            learning_rate: 0.1,
            negatives: 10,
            batch_size: 100,
            seed: 42,
            regularization: 0.0,
            corruption: [0.4, 0.2, 0.4],
            optimizer: Optimizer::Adagrad,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.epochs == 0 || self.negatives == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "dim, epochs, negatives and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::Config("regularization must be non-negative".into()));
        }
        let sum: f64 = self.corruption.iter().sum();
        if self.corruption.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "corruption split must be non-negative and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexModel {
    pub space: ComplexSpace,
    /// Mean per-sample loss of each epoch.
    pub losses: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Table {
    Entity,
    Relation,
}

/// Sparse gradient accumulator for one batch, keyed by row.
#[derive(Default)]
struct BatchGrad {
    entities: BTreeMap<usize, (Vec<f64>, Vec<f64>)>,
    relations: BTreeMap<usize, (Vec<f64>, Vec<f64>)>,
}

impl BatchGrad {
    fn add(&mut self, table: Table, row: usize, re: &[f64], im: &[f64]) {
        let map = match table {
            Table::Entity => &mut self.entities,
            Table::Relation => &mut self.relations,
        };
        let (gr, gi) = map
            .entry(row)
            .or_insert_with(|| (vec![0.0; re.len()], vec![0.0; re.len()]));
        for j in 0..re.len() {
            gr[j] += re[j];
            gi[j] += im[j];
        }
    }
}

struct Trainer {
    space: ComplexSpace,
    // Adagrad squared-gradient sums, laid out like the tables.
    acc_ent_re: Vec<f64>,
    acc_ent_im: Vec<f64>,
    acc_rel_re: Vec<f64>,
    acc_rel_im: Vec<f64>,
}

impl Trainer {
    fn apply(&mut self, grads: BatchGrad, scale: f64, cfg: &TrainConfig) {
        let d = self.space.dim;
        let lr = cfg.learning_rate;
        let adagrad = cfg.optimizer == Optimizer::Adagrad;
        let step = |params: &mut [f64], acc: &mut [f64], grad: &[f64]| {
            for j in 0..grad.len() {
                let g = grad[j] * scale;
                if adagrad {
                    acc[j] += g * g;
                    params[j] -= lr * g / (acc[j].sqrt() + 1e-10);
                } else {
                    params[j] -= lr * g;
                }
            }
        };
        for (row, (gr, gi)) in grads.entities {
            let s = row * d..(row + 1) * d;
            step(&mut self.space.ent_re[s.clone()], &mut self.acc_ent_re[s.clone()], &gr);
            step(&mut self.space.ent_im[s.clone()], &mut self.acc_ent_im[s], &gi);
        }
        for (row, (gr, gi)) in grads.relations {
            let s = row * d..(row + 1) * d;
            step(&mut self.space.rel_re[s.clone()], &mut self.acc_rel_re[s.clone()], &gr);
            step(&mut self.space.rel_im[s.clone()], &mut self.acc_rel_im[s], &gi);
        }
    }
}

/// Replaces one slot of `t`, chosen by `split`, with a different uniformly
/// drawn id. Slots whose vocabulary has a single member are never chosen.
fn corrupt<R: Rng>(t: &Triple, ne: usize, nr: usize, split: &[f64; 3], rng: &mut R) -> Triple {
    let mut weights = *split;
    if ne < 2 {
        weights[0] = 0.0;
        weights[2] = 0.0;
    }
    if nr < 2 {
        weights[1] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    let mut out = *t;
    if total <= 0.0 {
        return out;
    }
    let u = rng.random::<f64>() * total;
    let other = |n: usize, cur: u32, rng: &mut R| {
        let x = rng.random_range(0..n as u32 - 1);
        if x >= cur {
            x + 1
        } else {
            x
        }
    };
    if u < weights[0] {
        out.head = EntityId(other(ne, t.head.0, rng));
    } else if u < weights[0] + weights[1] {
        out.relation = RelationId(other(nr, t.relation.0, rng));
    } else {
        out.tail = EntityId(other(ne, t.tail.0, rng));
    }
    out
}

/// Trains ComplEx vectors on every edge of `kg`. Per-sample gradients are
/// computed in parallel against the parameters at the start of the batch and
/// applied together, so results do not depend on the thread count.
pub fn train_complex(kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<ComplexModel> {
    cfg.validate()?;
    if kg.edges().is_empty() {
        return Err(Error::EmptyCorpus("knowledge graph has no triples".into()));
    }
    let space = ComplexSpace::random(kg, cfg.dim, cfg.seed);
    let ne = space.num_entities();
    let nr = space.num_relations();
    let mut trainer = Trainer {
        acc_ent_re: vec![0.0; space.ent_re.len()],
        acc_ent_im: vec![0.0; space.ent_im.len()],
        acc_rel_re: vec![0.0; space.rel_re.len()],
        acc_rel_im: vec![0.0; space.rel_im.len()],
        space,
    };
    let mut order: Vec<Triple> = kg.edges().to_vec();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(cfg.seed, 1 + epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_samples = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut samples: Vec<(Triple, bool)> = Vec::with_capacity(batch.len() * (1 + cfg.negatives));
            for t in batch {
                samples.push((*t, true));
                for _ in 0..cfg.negatives {
                    samples.push((corrupt(t, ne, nr, &cfg.corruption, &mut rng), false));
                }
            }
            let space = &trainer.space;
            let grads: Vec<TripleGradient> = samples
                .par_iter()
                .map(|(t, label)| {
                    triple_loss_and_grad(
                        space.entity(t.head),
                        space.relation(t.relation),
                        space.entity(t.tail),
                        *label,
                        cfg.regularization,
                    )
                })
                .collect();
            let mut acc = BatchGrad::default();
            for ((t, _), g) in samples.iter().zip(&grads) {
                epoch_loss += g.loss;
                acc.add(Table::Entity, t.head.index(), &g.h_re, &g.h_im);
                acc.add(Table::Relation, t.relation.index(), &g.r_re, &g.r_im);
                acc.add(Table::Entity, t.tail.index(), &g.t_re, &g.t_im);
            }
            epoch_samples += samples.len();
            trainer.apply(acc, 1.0 / samples.len() as f64, cfg);
        }
        let mean = epoch_loss / epoch_samples as f64;
        log::debug!("complex epoch {}: mean loss {mean:.6}", epoch + 1);
        losses.push(mean);
    }
    Ok(ComplexModel {
        space: trainer.space,
        losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Rank candidate tails for `(h, r, ?)`.
    Tail,
    /// Rank candidate heads for `(?, r, t)`.
    Head,
}

/// Known-true triples used to filter ranks.
pub type KnownTriples = HashSet<(u32, u32, u32)>;

pub fn known_triples<'a, I: IntoIterator<Item = &'a Triple>>(triples: I) -> KnownTriples {
    triples
        .into_iter()
        .map(|t| (t.head.0, t.relation.0, t.tail.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankResult {
    pub triple: Triple,
    pub direction: Direction,
    pub raw_rank: usize,
    pub filtered_rank: usize,
}

impl RankResult {
    pub fn raw_rr(&self) -> f64 {
        1.0 / self.raw_rank as f64
    }

    pub fn filtered_rr(&self) -> f64 {
        1.0 / self.filtered_rank as f64
    }
}

fn candidate_scores(space: &ComplexSpace, triple: &Triple, direction: Direction) -> Vec<f64> {
    let r = space.relation(triple.relation);
    (0..space.num_entities() as u32)
        .into_par_iter()
        .map(|e| match direction {
            Direction::Tail => score(space.entity(triple.head), r, space.entity(EntityId(e))),
            Direction::Head => score(space.entity(EntityId(e)), r, space.entity(triple.tail)),
        })
        .collect()
}

/// All entities ordered by score for the open slot, ties by index ascending.
pub fn ranked_entities(space: &ComplexSpace, triple: &Triple, direction: Direction) -> Result<Vec<(EntityId, f64)>> {
    space.check(triple.head, triple.relation, triple.tail)?;
    let scores = candidate_scores(space, triple, direction);
    let mut ranked: Vec<(EntityId, f64)> = scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| (EntityId(i as u32), s))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Rank of the true completion of `triple` in the given direction. The
/// filtered rank ignores other candidates that form triples in `known`.
pub fn rank_entities(
    space: &ComplexSpace,
    triple: &Triple,
    direction: Direction,
    known: &KnownTriples,
) -> Result<RankResult> {
    space.check(triple.head, triple.relation, triple.tail)?;
    let scores = candidate_scores(space, triple, direction);
    let truth = match direction {
        Direction::Tail => triple.tail.0,
        Direction::Head => triple.head.0,
    };
    let target = scores[truth as usize];
    let mut raw = 1;
    let mut filtered = 1;
    for (e, &s) in scores.iter().enumerate() {
        let e = e as u32;
        if e == truth {
            continue;
        }
        let ahead = s > target || (s == target && e < truth);
        if !ahead {
            continue;
        }
        raw += 1;
        let key = match direction {
            Direction::Tail => (triple.head.0, triple.relation.0, e),
            Direction::Head => (e, triple.relation.0, triple.tail.0),
        };
        if !known.contains(&key) {
            filtered += 1;
        }
    }
    Ok(RankResult {
        triple: *triple,
        direction,
        raw_rank: raw,
        filtered_rank: filtered,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkPrediction {
    pub results: Vec<RankResult>,
    pub raw_mrr: f64,
    pub filtered_mrr: f64,
    /// Filtered hits at 1, 3 and 10.
    pub hits: [f64; 3],
}

/// Ranks heads and tails of every test triple.
pub fn link_prediction(space: &ComplexSpace, test: &[Triple], known: &KnownTriples) -> Result<LinkPrediction> {
    if test.is_empty() {
        return Err(Error::Invalid("no test triples".into()));
    }
    let mut results = Vec::with_capacity(test.len() * 2);
    for t in test {
        results.push(rank_entities(space, t, Direction::Tail, known)?);
        results.push(rank_entities(space, t, Direction::Head, known)?);
    }
    let n = results.len() as f64;
    let hits_at = |k: usize| results.iter().filter(|r| r.filtered_rank <= k).count() as f64 / n;
    Ok(LinkPrediction {
        raw_mrr: results.iter().map(RankResult::raw_rr).sum::<f64>() / n,
        filtered_mrr: results.iter().map(RankResult::filtered_rr).sum::<f64>() / n,
        hits: [hits_at(1), hits_at(3), hits_at(10)],
        results,
    })
}

/// `E[1/rank]` when the true entity's rank is uniform over `n` candidates.
pub fn random_mrr(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64
}

pub fn write_losses<W: Write>(losses: &[f64], out: W) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "epoch,mean_loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{},{l:.6}", i + 1)?;
    }
    w.flush()
}

pub fn save_losses(losses: &[f64], path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_losses(losses, f).map_err(|e| Error::io(path, e))
}
