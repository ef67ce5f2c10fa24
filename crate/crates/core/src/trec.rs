//! TREC run and qrels files.
//!
//! Runs are six whitespace-separated columns, `query_id Q0 entity_id rank
//! score tag`; scores are written with six significant digits (C `%g`
//! style). Qrels are `query_id 0 entity_id grade` with grades in `0..=2`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub entity: String,
    pub score: f64,
    pub rank: usize,
}

/// Ranked entities per query. Within a query, ranks are `1..=n` in order,
/// scores never increase with rank, and entities are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedRun {
    pub tag: String,
    queries: IndexMap<String, Vec<RunEntry>>,
}

impl RankedRun {
    pub fn new(tag: impl Into<String>) -> Self {
        RankedRun {
            tag: tag.into(),
            queries: IndexMap::new(),
        }
    }

    /// Sets the ranking of `query` from `(entity, score)` pairs already in
    /// rank order; ranks are assigned `1..=n`.
    pub fn set_query(&mut self, query: impl Into<String>, ranked: Vec<(String, f64)>) -> Result<()> {
        let query = query.into();
        let mut seen = std::collections::HashSet::new();
        let mut prev = f64::INFINITY;
        let mut entries = Vec::with_capacity(ranked.len());
        for (i, (entity, score)) in ranked.into_iter().enumerate() {
            if !score.is_finite() {
                return Err(Error::Invalid(format!("query {query}: non-finite score for {entity}")));
            }
            if score > prev {
                return Err(Error::Invalid(format!(
                    "query {query}: score increases at rank {}",
                    i + 1
                )));
            }
            if !seen.insert(entity.clone()) {
                return Err(Error::Invalid(format!("query {query}: duplicate entity {entity}")));
            }
            prev = score;
            entries.push(RunEntry {
                entity,
                score,
                rank: i + 1,
            });
        }
        self.queries.insert(query, entries);
        Ok(())
    }

    pub fn queries(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.queries.iter().map(|(q, e)| (q.as_str(), e.as_slice()))
    }

    pub fn query(&self, id: &str) -> Option<&[RunEntry]> {
        self.queries.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.queries.contains_key(id)
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut tag: Option<String> = None;
        let mut rows: IndexMap<String, Vec<(usize, RunEntry)>> = IndexMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected 6 columns, found {}", f.len()),
                ));
            }
            let rank: usize = f[3]
                .parse()
                .map_err(|_| Error::parse(source, line_no, format!("bad rank `{}`", f[3])))?;
            let score: f64 = f[4]
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| Error::parse(source, line_no, format!("bad score `{}`", f[4])))?;
            match &tag {
                None => tag = Some(f[5].to_owned()),
                Some(t) if t != f[5] => {
                    return Err(Error::parse(
                        source,
                        line_no,
                        format!("run tag `{}` differs from `{t}`", f[5]),
                    ))
                }
                _ => {}
            }
            rows.entry(f[0].to_owned()).or_default().push((
                line_no,
                RunEntry {
                    entity: f[2].to_owned(),
                    score,
                    rank,
                },
            ));
        }
        let mut run = RankedRun::new(tag.unwrap_or_default());
        for (query, mut entries) in rows {
            entries.sort_by_key(|(_, e)| e.rank);
            let mut seen = std::collections::HashSet::new();
            for (pos, (line_no, e)) in entries.iter().enumerate() {
                if e.rank != pos + 1 {
                    return Err(Error::parse(
                        source,
                        *line_no,
                        format!("query {query}: ranks must be contiguous from 1, found {}", e.rank),
                    ));
                }
                if pos > 0 && e.score > entries[pos - 1].1.score {
                    return Err(Error::parse(
                        source,
                        *line_no,
                        format!("query {query}: score increases at rank {}", e.rank),
                    ));
                }
                if !seen.insert(e.entity.as_str()) {
                    return Err(Error::parse(
                        source,
                        *line_no,
                        format!("query {query}: duplicate entity {}", e.entity),
                    ));
                }
            }
            run.queries.insert(query, entries.into_iter().map(|(_, e)| e).collect());
        }
        Ok(run)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (q, entries) in &self.queries {
            for e in entries {
                writeln!(
                    out,
                    "{q} Q0 {} {} {} {}",
                    e.entity,
                    e.rank,
                    format_g6(e.score),
                    self.tag
                )?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = io::BufWriter::new(file);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Formats like C's `%g` with six significant digits.
pub fn format_g6(x: f64) -> String {
    const P: i32 = 6;
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..P).contains(&exp) {
        let fixed = format!("{:.*}", (P - 1 - exp) as usize, x);
        strip_zeros(&fixed).to_owned()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Graded relevance judgments, kept in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    queries: IndexMap<String, IndexMap<String, u8>>,
}

pub const MAX_GRADE: u8 = 2;

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: &str, entity: &str, grade: u8) -> Result<()> {
        if grade > MAX_GRADE {
            return Err(Error::Invalid(format!("grade {grade} outside 0..={MAX_GRADE}")));
        }
        let judged = self.queries.entry(query.to_owned()).or_default();
        if judged.insert(entity.to_owned(), grade).is_some() {
            return Err(Error::Invalid(format!("duplicate judgment for ({query}, {entity})")));
        }
        Ok(())
    }

    pub fn grade(&self, query: &str, entity: &str) -> u8 {
        self.queries
            .get(query)
            .and_then(|j| j.get(entity))
            .copied()
            .unwrap_or(0)
    }

    pub fn judgments(&self, query: &str) -> Option<&IndexMap<String, u8>> {
        self.queries.get(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&str, &IndexMap<String, u8>)> {
        self.queries.iter().map(|(q, j)| (q.as_str(), j))
    }

    pub fn contains(&self, query: &str) -> bool {
        self.queries.contains_key(query)
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    /// Entities with grade ≥ 1.
    pub fn relevant(&self, query: &str) -> Vec<&str> {
        self.queries
            .get(query)
            .map(|j| j.iter().filter(|(_, &g)| g > 0).map(|(e, _)| e.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut qrels = Qrels::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected 4 columns, found {}", f.len()),
                ));
            }
            let grade: u8 = f[3]
                .parse()
                .ok()
                .filter(|g| *g <= MAX_GRADE)
                .ok_or_else(|| Error::parse(source, line_no, format!("grade `{}` not in 0..=2", f[3])))?;
            qrels
                .insert(f[0], f[2], grade)
                .map_err(|e| Error::parse(source, line_no, e.to_string()))?;
        }
        Ok(qrels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (q, judged) in &self.queries {
            for (e, g) in judged {
                writeln!(out, "{q} 0 {e} {g}")?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = io::BufWriter::new(file);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
