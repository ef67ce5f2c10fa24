//! Embedding-based re-ranking of baseline entity runs.
//!
//! Each candidate `e` gets `F(e, E) = Σ s(e_q) · cos(e, e_q)` against every
//! interpretation `E` of the query; the final score is the maximum over
//! interpretations of `(1 − λ) · score_other + λ · F`.

use std::str::FromStr;

use rayon::prelude::*;

use crate::embedding::{cosine_slices, VectorLookup};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Gain};
use crate::linking::{AnnotationSet, Interpretation};
use crate::trec::{Qrels, RankedRun, RunEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    None,
    #[default]
    MinMax,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "minmax" => Ok(Normalization::MinMax),
            other => Err(Error::Config(format!("unknown normalization {other:?} (none, minmax)"))),
        }
    }
}

/// What to do with entities that have no vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Missing linked entities add nothing to `F`; a missing candidate has `F = 0`.
    #[default]
    ZeroContribution,
    /// Missing linked entities add nothing to `F`; a missing candidate is
    /// removed from the re-ranked list.
    SkipEntity,
}

impl FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" | "zero-contribution" => Ok(MissingPolicy::ZeroContribution),
            "skip" | "skip-entity" => Ok(MissingPolicy::SkipEntity),
            other => Err(Error::Config(format!(
                "unknown missing-embedding policy {other:?} (zero-contribution, skip-entity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankConfig {
    pub lambda: f64,
    pub normalization: Normalization,
    pub missing: MissingPolicy,
    /// Only the top `depth` baseline entities are re-ranked and written.
    pub depth: Option<usize>,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            lambda: 0.5,
            normalization: Normalization::MinMax,
            missing: MissingPolicy::ZeroContribution,
            depth: None,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.depth == Some(0) {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")))
    }
}

/// Counters collected while re-ranking.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RerankDiagnostics {
    /// Baseline queries without annotations, passed through.
    pub unannotated_queries: Vec<String>,
    /// Annotated query ids that the baseline does not contain.
    pub unknown_annotation_queries: Vec<String>,
    /// Candidate entities without a vector.
    pub missing_candidates: usize,
    /// Linked entities without a vector (counted once per query).
    pub missing_linked: usize,
    /// Candidates dropped under [`MissingPolicy::SkipEntity`].
    pub skipped_candidates: usize,
}

/// `F(e, E)` for a candidate vector. Linked entities without a vector
/// contribute nothing.
pub fn embedding_score<L: VectorLookup + ?Sized>(candidate: &[f32], interpretation: &Interpretation, space: &L) -> f64 {
    interpretation
        .iter()
        .filter_map(|l| {
            space
                .vector(&l.entity)
                .map(|v| l.confidence * cosine_slices(candidate, v))
        })
        .sum()
}

pub fn interpolate(score_other: f64, f: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * score_other + lambda * f
}

/// Min-max scales scores to `[0, 1]`; a constant list maps to all ones.
pub fn minmax(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; scores.len()]
    }
}

struct QueryOutcome {
    ranked: Vec<(String, f64)>,
    missing_candidates: usize,
    missing_linked: usize,
    skipped: usize,
}

fn rerank_query<L: VectorLookup + Sync + ?Sized>(
    entries: &[RunEntry],
    interpretations: Option<&[Interpretation]>,
    space: &L,
    cfg: &RerankConfig,
) -> QueryOutcome {
    let entries = &entries[..cfg.depth.map_or(entries.len(), |d| d.min(entries.len()))];
    let raw: Vec<f64> = entries.iter().map(|e| e.score).collect();
    let base = match cfg.normalization {
        Normalization::None => raw,
        Normalization::MinMax => minmax(&raw),
    };
    let interpretations = interpretations.filter(|i| !i.is_empty());
    let missing_linked = interpretations.map_or(0, |interps| {
        let mut names: Vec<&str> = interps
            .iter()
            .flat_map(|i| i.iter())
            .map(|l| l.entity.as_str())
            .collect();
        names.sort_unstable();
        names.dedup();
        names.iter().filter(|n| space.vector(n).is_none()).count()
    });

    let mut missing_candidates = 0;
    let mut skipped = 0;
    // (score, baseline position, entity)
    let mut scored: Vec<(f64, usize, &str)> = Vec::with_capacity(entries.len());
    for (pos, (entry, &b)) in entries.iter().zip(&base).enumerate() {
        let score = match interpretations {
            None => interpolate(b, 0.0, cfg.lambda),
            Some(interps) => match space.vector(&entry.entity) {
                Some(v) => interps
                    .iter()
                    .map(|i| interpolate(b, embedding_score(v, i, space), cfg.lambda))
                    .fold(f64::NEG_INFINITY, f64::max),
                None => {
                    missing_candidates += 1;
                    if cfg.missing == MissingPolicy::SkipEntity {
                        skipped += 1;
                        continue;
                    }
                    interpolate(b, 0.0, cfg.lambda)
                }
            },
        };
        scored.push((score, pos, &entry.entity));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    QueryOutcome {
        ranked: scored.into_iter().map(|(s, _, e)| (e.to_owned(), s)).collect(),
        missing_candidates,
        missing_linked,
        skipped,
    }
}

/// Re-ranks every query of `baseline`. The output keeps the baseline's query
/// order and tag.
pub fn rerank_run<L: VectorLookup + Sync + ?Sized>(
    baseline: &RankedRun,
    annotations: &AnnotationSet,
    space: &L,
    cfg: &RerankConfig,
) -> Result<(RankedRun, RerankDiagnostics)> {
    cfg.validate()?;
    let queries: Vec<(&str, &[RunEntry])> = baseline.queries().collect();
    let outcomes: Vec<QueryOutcome> = queries
        .par_iter()
        .map(|(q, entries)| {
            let interps = annotations.get(q).map(|a| a.interpretations.as_slice());
            rerank_query(entries, interps, space, cfg)
        })
        .collect();

    let mut diag = RerankDiagnostics::default();
    let mut run = RankedRun::new(baseline.tag.clone());
    for ((q, _), outcome) in queries.iter().zip(outcomes) {
        if annotations.get(q).is_none() {
            diag.unannotated_queries.push((*q).to_owned());
        }
        diag.missing_candidates += outcome.missing_candidates;
        diag.missing_linked += outcome.missing_linked;
        diag.skipped_candidates += outcome.skipped;
        run.set_query(*q, outcome.ranked)?;
    }
    for a in annotations.iter() {
        if !baseline.contains(&a.query_id) {
            log::warn!("annotated query {} is not in the baseline run", a.query_id);
            diag.unknown_annotation_queries.push(a.query_id.clone());
        }
    }
    if !diag.unannotated_queries.is_empty() {
        log::info!(
            "{} queries without annotations passed through",
            diag.unannotated_queries.len()
        );
    }
    if diag.missing_candidates > 0 {
        log::info!("{} candidate entities have no vector", diag.missing_candidates);
    }
    Ok((run, diag))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub ndcg10: f64,
    pub ndcg100: f64,
    pub best: bool,
}

/// Evaluates the re-ranked run at each λ of `grid`. The row with the highest
/// mean NDCG@10 (first on ties) is flagged as best.
pub fn sweep_lambda<L: VectorLookup + Sync + ?Sized>(
    baseline: &RankedRun,
    annotations: &AnnotationSet,
    space: &L,
    qrels: &Qrels,
    grid: &[f64],
    cfg: &RerankConfig,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cfg = RerankConfig { lambda, ..cfg.clone() };
        let (run, _) = rerank_run(baseline, annotations, space, &cfg)?;
        let eval = evaluate(&run, qrels, &[10, 100], Gain::Linear)?;
        rows.push(SweepRow {
            lambda,
            ndcg10: eval.means[0],
            ndcg100: eval.means[1],
            best: false,
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.ndcg10 > rows[best].ndcg10 { i } else { best });
    rows[best].best = true;
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "ndcg@10", "ndcg@100", "best"])?;
    for r in rows {
        w.write_record([
            format!("{}", r.lambda),
            format!("{:.6}", r.ndcg10),
            format!("{:.6}", r.ndcg100),
            if r.best { "*".into() } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(())
}
