//! Query entity annotations and lean precision/recall for entity linkers.
//!
//! A query carries zero or more interpretations, each a set of linked
//! entities with confidences. Lean scores average an interpretation-level
//! and an entity-level precision (and recall). Interpretations match only on
//! exact entity-set equality; mentions and confidences are ignored.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedEntity {
    pub entity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mention: Option<String>,
    pub confidence: f64,
}

impl LinkedEntity {
    pub fn new(entity: impl Into<String>, confidence: f64) -> Self {
        LinkedEntity {
            entity: entity.into(),
            mention: None,
            confidence,
        }
    }
}

/// One reading of a query: a set of linked entities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Interpretation(pub Vec<LinkedEntity>);

impl Interpretation {
    pub fn entity_set(&self) -> BTreeSet<&str> {
        self.0.iter().map(|l| l.entity.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LinkedEntity> {
        self.0.iter()
    }
}

impl FromIterator<LinkedEntity> for Interpretation {
    fn from_iter<I: IntoIterator<Item = LinkedEntity>>(iter: I) -> Self {
        Interpretation(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAnnotations {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub interpretations: Vec<Interpretation>,
}

impl QueryAnnotations {
    pub fn new(query_id: impl Into<String>, interpretations: Vec<Interpretation>) -> Self {
        QueryAnnotations {
            query_id: query_id.into(),
            query: None,
            interpretations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, interp) in self.interpretations.iter().enumerate() {
            if interp.is_empty() {
                return Err(Error::Invalid(format!(
                    "query {}: interpretation {i} is empty",
                    self.query_id
                )));
            }
            let mut seen = HashSet::new();
            for l in interp.iter() {
                if !seen.insert(l.entity.as_str()) {
                    return Err(Error::Invalid(format!(
                        "query {}: entity {} repeated within interpretation {i}",
                        self.query_id, l.entity
                    )));
                }
                if !(0.0..=1.0).contains(&l.confidence) {
                    return Err(Error::Invalid(format!(
                        "query {}: confidence {} of {} outside [0, 1]",
                        self.query_id, l.confidence, l.entity
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Annotations of a collection, keyed by query id in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    queries: IndexMap<String, QueryAnnotations>,
}

impl AnnotationSet {
    pub fn new(annotations: Vec<QueryAnnotations>) -> Result<Self> {
        let mut queries = IndexMap::with_capacity(annotations.len());
        for a in annotations {
            a.validate()?;
            let id = a.query_id.clone();
            if queries.insert(id.clone(), a).is_some() {
                return Err(Error::Invalid(format!("duplicate query id {id}")));
            }
        }
        Ok(AnnotationSet { queries })
    }

    pub fn get(&self, query_id: &str) -> Option<&QueryAnnotations> {
        self.queries.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueryAnnotations> {
        self.queries.values()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let list: Vec<QueryAnnotations> = serde_json::from_str(text)?;
        Self::new(list)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::parse(path.display().to_string(), j.line(), j.to_string()),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let list: Vec<&QueryAnnotations> = self.queries.values().collect();
        let mut s = serde_json::to_string_pretty(&list)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LeanScores {
    pub p_int: f64,
    pub r_int: f64,
    pub p_ent: f64,
    pub r_ent: f64,
    pub p_lean: f64,
    pub r_lean: f64,
    pub f_lean: f64,
}

impl LeanScores {
    fn from_parts(p_int: f64, r_int: f64, p_ent: f64, r_ent: f64) -> Self {
        let p_lean = (p_int + p_ent) / 2.0;
        let r_lean = (r_int + r_ent) / 2.0;
        LeanScores {
            p_int,
            r_int,
            p_ent,
            r_ent,
            p_lean,
            r_lean,
            f_lean: harmonic(p_lean, r_lean),
        }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `hits / size`, or the empty-set conventions: 1 when both sides are empty,
/// 0 when only the denominator side is empty.
fn ratio(hits: usize, size: usize, other_size: usize) -> f64 {
    match (size, other_size) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => hits as f64 / size as f64,
    }
}

/// Lean precision and recall of `system` against `gold` for one query.
pub fn lean_eval(system: &QueryAnnotations, gold: &QueryAnnotations) -> Result<LeanScores> {
    if system.query_id != gold.query_id {
        return Err(Error::QueryMismatch(system.query_id.clone(), gold.query_id.clone()));
    }
    let sys_interps: BTreeSet<BTreeSet<&str>> = system
        .interpretations
        .iter()
        .filter(|i| !i.is_empty())
        .map(Interpretation::entity_set)
        .collect();
    let gold_interps: BTreeSet<BTreeSet<&str>> = gold
        .interpretations
        .iter()
        .filter(|i| !i.is_empty())
        .map(Interpretation::entity_set)
        .collect();
    let int_hits = sys_interps.intersection(&gold_interps).count();

    let sys_ents: BTreeSet<&str> = sys_interps.iter().flatten().copied().collect();
    let gold_ents: BTreeSet<&str> = gold_interps.iter().flatten().copied().collect();
    let ent_hits = sys_ents.intersection(&gold_ents).count();

    Ok(LeanScores::from_parts(
        ratio(int_hits, sys_interps.len(), gold_interps.len()),
        ratio(int_hits, gold_interps.len(), sys_interps.len()),
        ratio(ent_hits, sys_ents.len(), gold_ents.len()),
        ratio(ent_hits, gold_ents.len(), sys_ents.len()),
    ))
}

/// Collection-level lean scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroLean {
    /// Per-field means; `f_lean` here is the harmonic mean of the averaged
    /// `p_lean` and `r_lean`.
    pub scores: LeanScores,
    /// Mean of the per-query `f_lean` values.
    pub mean_f_lean: f64,
}

pub fn macro_average(per_query: &[LeanScores]) -> Result<MacroLean> {
    if per_query.is_empty() {
        return Err(Error::Invalid("cannot average an empty list of lean scores".into()));
    }
    let n = per_query.len() as f64;
    let mean = |f: fn(&LeanScores) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    let p_lean = mean(|s| s.p_lean);
    let r_lean = mean(|s| s.r_lean);
    Ok(MacroLean {
        scores: LeanScores {
            p_int: mean(|s| s.p_int),
            r_int: mean(|s| s.r_int),
            p_ent: mean(|s| s.p_ent),
            r_ent: mean(|s| s.r_ent),
            p_lean,
            r_lean,
            f_lean: harmonic(p_lean, r_lean),
        },
        mean_f_lean: mean(|s| s.f_lean),
    })
}

/// Per-query and macro lean scores over a gold collection.
#[derive(Debug, Clone, PartialEq)]
pub struct LeanReport {
    pub per_query: Vec<(String, LeanScores)>,
    pub macro_avg: MacroLean,
    /// System queries without gold annotations (ignored).
    pub unmatched_system: Vec<String>,
}

/// Evaluates every gold query; a gold query the system did not annotate is
/// scored against an empty system annotation.
pub fn lean_eval_set(system: &AnnotationSet, gold: &AnnotationSet) -> Result<LeanReport> {
    let mut per_query = Vec::with_capacity(gold.len());
    for g in gold.iter() {
        let empty;
        let s = match system.get(&g.query_id) {
            Some(s) => s,
            None => {
                empty = QueryAnnotations::new(g.query_id.clone(), Vec::new());
                &empty
            }
        };
        per_query.push((g.query_id.clone(), lean_eval(s, g)?));
    }
    let unmatched_system = system
        .iter()
        .filter(|s| gold.get(&s.query_id).is_none())
        .map(|s| s.query_id.clone())
        .collect();
    let scores: Vec<LeanScores> = per_query.iter().map(|(_, s)| *s).collect();
    Ok(LeanReport {
        macro_avg: macro_average(&scores)?,
        per_query,
        unmatched_system,
    })
}

impl LeanReport {
    /// Per-query rows followed by `MACRO` (F of averaged P/R) and
    /// `MACRO_MEAN_F` (mean of per-query F) rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "query_id", "p_int", "r_int", "p_ent", "r_ent", "p_lean", "r_lean", "f_lean",
        ])?;
        let row = |id: &str, s: &LeanScores, f: f64| {
            vec![
                id.to_owned(),
                format!("{:.4}", s.p_int),
                format!("{:.4}", s.r_int),
                format!("{:.4}", s.p_ent),
                format!("{:.4}", s.r_ent),
                format!("{:.4}", s.p_lean),
                format!("{:.4}", s.r_lean),
                format!("{:.4}", f),
            ]
        };
        for (q, s) in &self.per_query {
            w.write_record(row(q, s, s.f_lean))?;
        }
        let m = &self.macro_avg;
        w.write_record(row("MACRO", &m.scores, m.scores.f_lean))?;
        w.write_record(row("MACRO_MEAN_F", &m.scores, m.mean_f_lean))?;
        w.flush()?;
        Ok(())
    }
}

/// Merges the annotations of several linkers for one query into a single
/// interpretation holding every entity once, at its highest confidence.
pub fn union_annotations(sources: &[QueryAnnotations]) -> Result<QueryAnnotations> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Invalid("nothing to merge".into()))?;
    let mut merged: IndexMap<&str, LinkedEntity> = IndexMap::new();
    for src in sources {
        if src.query_id != first.query_id {
            return Err(Error::QueryMismatch(first.query_id.clone(), src.query_id.clone()));
        }
        for l in src.interpretations.iter().flat_map(|i| i.iter()) {
            merged
                .entry(l.entity.as_str())
                .and_modify(|m| {
                    if l.confidence > m.confidence {
                        m.confidence = l.confidence;
                    }
                    if m.mention.is_none() {
                        m.mention = l.mention.clone();
                    }
                })
                .or_insert_with(|| l.clone());
        }
    }
    let interpretations = if merged.is_empty() {
        Vec::new()
    } else {
        vec![merged.into_values().collect()]
    };
    Ok(QueryAnnotations {
        query_id: first.query_id.clone(),
        query: sources.iter().find_map(|s| s.query.clone()),
        interpretations,
    })
}

/// [`union_annotations`] across whole annotation files, per query id.
pub fn union_sets(sets: &[AnnotationSet]) -> Result<AnnotationSet> {
    let mut by_query: IndexMap<&str, Vec<QueryAnnotations>> = IndexMap::new();
    for set in sets {
        for q in set.iter() {
            by_query.entry(q.query_id.as_str()).or_default().push(q.clone());
        }
    }
    let merged = by_query
        .into_values()
        .map(|qs| union_annotations(&qs))
        .collect::<Result<Vec<_>>>()?;
    AnnotationSet::new(merged)
}
