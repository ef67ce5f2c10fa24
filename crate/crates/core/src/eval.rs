//! Retrieval evaluation: NDCG@k, paired t-tests and coherence scores.

use std::io::Write;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::embedding::{cosine_slices, VectorLookup};
use crate::error::{Error, Result};
use crate::trec::{format_g6, Qrels, RankedRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gain {
    /// gain = grade
    #[default]
    Linear,
    /// gain = 2^grade - 1
    Exponential,
}

impl Gain {
    fn of(self, grade: u8) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => (1u32 << grade) as f64 - 1.0,
        }
    }
}

/// NDCG@k of `ranked` grades (in rank order) against all judged grades of
/// the query. Zero when the query has no relevant entity.
pub fn ndcg(ranked: &[u8], judged: &[u8], k: usize, gain: Gain) -> f64 {
    let actual = dcg(ranked.iter().copied(), k, gain);
    let mut ideal = judged.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter(), k, gain);
    if idcg == 0.0 {
        0.0
    } else {
        actual / idcg
    }
}

fn dcg(grades: impl Iterator<Item = u8>, k: usize, gain: Gain) -> f64 {
    grades
        .take(k)
        .enumerate()
        .map(|(i, g)| gain.of(g) / ((i + 2) as f64).log2())
        .sum()
}

/// Per-query NDCG at several cutoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub cutoffs: Vec<usize>,
    /// `(query_id, one value per cutoff)` in qrels order.
    pub per_query: Vec<(String, Vec<f64>)>,
    pub means: Vec<f64>,
    /// Judged queries without any relevant entity (scored 0).
    pub no_relevant: Vec<String>,
    /// Run queries absent from the qrels (excluded from the means).
    pub unjudged: Vec<String>,
    /// Judged queries absent from the run (scored 0).
    pub missing_from_run: Vec<String>,
}

impl EvalResult {
    pub fn mean_at(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.means[i])
    }

    pub fn values_at(&self, k: usize) -> Option<Vec<f64>> {
        let i = self.cutoffs.iter().position(|&c| c == k)?;
        Some(self.per_query.iter().map(|(_, v)| v[i]).collect())
    }

    /// CSV with a `query_id,ndcg@k…` header, one row per query and an
    /// `ALL` row of means.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["query_id".to_owned()];
        header.extend(self.cutoffs.iter().map(|k| format!("ndcg@{k}")));
        w.write_record(&header)?;
        for (q, vals) in &self.per_query {
            let mut row = vec![q.clone()];
            row.extend(vals.iter().map(|v| format!("{v:.6}")));
            w.write_record(&row)?;
        }
        let mut row = vec!["ALL".to_owned()];
        row.extend(self.means.iter().map(|v| format!("{v:.6}")));
        w.write_record(&row)?;
        w.flush()?;
        Ok(())
    }
}

/// Evaluates `run` against `qrels` at each cutoff in `cutoffs`.
pub fn evaluate(run: &RankedRun, qrels: &Qrels, cutoffs: &[usize], gain: Gain) -> Result<EvalResult> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config("cutoffs must be non-empty and at least 1".into()));
    }
    let mut result = EvalResult {
        cutoffs: cutoffs.to_vec(),
        per_query: Vec::new(),
        means: vec![0.0; cutoffs.len()],
        no_relevant: Vec::new(),
        unjudged: Vec::new(),
        missing_from_run: Vec::new(),
    };
    for (q, _) in run.queries() {
        if !qrels.contains(q) {
            result.unjudged.push(q.to_owned());
        }
    }
    for (q, judged) in qrels.queries() {
        let judged_grades: Vec<u8> = judged.values().copied().collect();
        if judged_grades.iter().all(|&g| g == 0) {
            result.no_relevant.push(q.to_owned());
        }
        let ranked: Vec<u8> = match run.query(q) {
            Some(entries) => entries.iter().map(|e| qrels.grade(q, &e.entity)).collect(),
            None => {
                result.missing_from_run.push(q.to_owned());
                Vec::new()
            }
        };
        let vals: Vec<f64> = cutoffs
            .iter()
            .map(|&k| ndcg(&ranked, &judged_grades, k, gain))
            .collect();
        result.per_query.push((q.to_owned(), vals));
    }
    if !result.per_query.is_empty() {
        let n = result.per_query.len() as f64;
        for (i, m) in result.means.iter_mut().enumerate() {
            *m = result.per_query.iter().map(|(_, v)| v[i]).sum::<f64>() / n;
        }
    }
    if !result.unjudged.is_empty() {
        log::warn!(
            "{} run queries have no judgments and were excluded",
            result.unjudged.len()
        );
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degenerate {
    /// All paired differences are zero; p is reported as 1.
    ZeroDifferences,
    /// Differences are constant and non-zero; t is infinite and p is 0.
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    /// Two-sided p-value from Student's t with `n - 1` degrees of freedom.
    pub p: f64,
    pub degenerate: Option<Degenerate>,
}

impl TTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

/// Two-sided paired t-test over per-query scores `a[i] - b[i]`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Invalid("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    if diffs.iter().all(|&d| d == 0.0) {
        log::warn!("paired t-test: all differences are zero");
        return Ok(TTest {
            n,
            mean_difference: 0.0,
            t: 0.0,
            p: 1.0,
            degenerate: Some(Degenerate::ZeroDifferences),
        });
    }
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        log::warn!("paired t-test: differences have zero variance");
        return Ok(TTest {
            n,
            mean_difference: mean,
            t: mean.signum() * f64::INFINITY,
            p: 0.0,
            degenerate: Some(Degenerate::ZeroVariance),
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Invalid(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        n,
        mean_difference: mean,
        t,
        p,
        degenerate: None,
    })
}

/// One comparison row of a significance report.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub run_a: String,
    pub run_b: String,
    pub cutoff: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub test: TTest,
}

/// Pairwise tests between evaluated runs, paired over the shared qrels
/// query order.
pub fn compare_runs(evals: &[(String, EvalResult)]) -> Result<Vec<Comparison>> {
    let mut rows = Vec::new();
    for i in 0..evals.len() {
        for j in i + 1..evals.len() {
            let (ta, ea) = &evals[i];
            let (tb, eb) = &evals[j];
            if ea
                .per_query
                .iter()
                .map(|(q, _)| q)
                .ne(eb.per_query.iter().map(|(q, _)| q))
            {
                return Err(Error::Invalid(format!(
                    "runs {ta} and {tb} were evaluated on different queries"
                )));
            }
            for &k in &ea.cutoffs {
                let (Some(va), Some(vb)) = (ea.values_at(k), eb.values_at(k)) else {
                    continue;
                };
                rows.push(Comparison {
                    run_a: ta.clone(),
                    run_b: tb.clone(),
                    cutoff: k,
                    mean_a: ea.mean_at(k).unwrap_or(0.0),
                    mean_b: eb.mean_at(k).unwrap_or(0.0),
                    test: paired_ttest(&va, &vb)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_significance_csv<W: Write>(rows: &[Comparison], alpha: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_a", "run_b", "metric", "mean_a", "mean_b", "t", "p", "significant"])?;
    for r in rows {
        w.write_record([
            r.run_a.clone(),
            r.run_b.clone(),
            format!("ndcg@{}", r.cutoff),
            format!("{:.6}", r.mean_a),
            format!("{:.6}", r.mean_b),
            format_g6(r.test.t),
            format_g6(r.test.p),
            if r.test.significant(alpha) {
                "*".to_owned()
            } else {
                String::new()
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fraction of unordered vector pairs whose cosine is at least `tau`.
pub fn coherence(vectors: &[&[f32]], tau: f64) -> Result<f64> {
    let m = vectors.len();
    if m < 2 {
        return Err(Error::Invalid(format!("coherence needs at least 2 vectors, got {m}")));
    }
    let mut hits = 0usize;
    for i in 0..m {
        for j in i + 1..m {
            if cosine_slices(vectors[i], vectors[j]) >= tau {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (m * (m - 1) / 2) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryCoherence {
    pub query_id: String,
    /// Relevant entities with a vector.
    pub m: usize,
    /// Relevant entities dropped for lack of a vector.
    pub dropped: usize,
    pub coherence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport {
    pub tau: f64,
    pub min_rel: usize,
    pub rows: Vec<QueryCoherence>,
    pub excluded: Vec<String>,
}

impl CoherenceReport {
    pub fn mean(&self) -> Option<f64> {
        if self.rows.is_empty() {
            None
        } else {
            Some(self.rows.iter().map(|r| r.coherence).sum::<f64>() / self.rows.len() as f64)
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["query_id", "m", "dropped", "coherence"])?;
        for r in &self.rows {
            w.write_record([
                r.query_id.clone(),
                r.m.to_string(),
                r.dropped.to_string(),
                format!("{:.6}", r.coherence),
            ])?;
        }
        if let Some(mean) = self.mean() {
            let m: usize = self.rows.iter().map(|r| r.m).sum();
            let d: usize = self.rows.iter().map(|r| r.dropped).sum();
            w.write_record(["ALL".to_owned(), m.to_string(), d.to_string(), format!("{mean:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Coherence of the relevant (grade ≥ 1) entities of every query that keeps
/// at least `min_rel` (and at least two) entities with vectors.
pub fn coherence_report<L: VectorLookup + ?Sized>(
    qrels: &Qrels,
    space: &L,
    tau: f64,
    min_rel: usize,
) -> CoherenceReport {
    let mut report = CoherenceReport {
        tau,
        min_rel,
        rows: Vec::new(),
        excluded: Vec::new(),
    };
    for (q, _) in qrels.queries() {
        let relevant = qrels.relevant(q);
        let vectors: Vec<&[f32]> = relevant.iter().filter_map(|e| space.vector(e)).collect();
        let dropped = relevant.len() - vectors.len();
        if vectors.len() < min_rel.max(2) {
            report.excluded.push(q.to_owned());
            continue;
        }
        let co = coherence(&vectors, tau).expect("at least two vectors");
        report.rows.push(QueryCoherence {
            query_id: q.to_owned(),
            m: vectors.len(),
            dropped,
            coherence: co,
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingSpace;
    use proptest::prelude::*;

    #[test]
    fn perfect_order_is_one() {
        assert_eq!(ndcg(&[2, 1, 0], &[0, 1, 2], 3, Gain::Linear), 1.0);
    }

    #[test]
    fn single_relevant_at_rank_two() {
        let v = ndcg(&[0, 1], &[1, 0], 10, Gain::Linear);
        assert!((v - 0.6309).abs() < 1e-4);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn exponential_gain() {
        // dcg = 1 + 3/log2(3); idcg = 3 + 1/log2(3)
        let v = ndcg(&[1, 2], &[2, 1], 2, Gain::Exponential);
        let l3 = 3f64.log2();
        assert!((v - (1.0 + 3.0 / l3) / (3.0 + 1.0 / l3)).abs() < 1e-12);
    }

    #[test]
    fn evaluate_flags_edge_queries() {
        let qrels = Qrels::parse("q1 0 a 1\nq1 0 b 0\nq2 0 c 0\nq3 0 d 2\n", "q").unwrap();
        let run = RankedRun::parse("q1 Q0 b 1 2 r\nq1 Q0 a 2 1 r\nq2 Q0 c 1 1 r\nqx Q0 a 1 1 r\n", "r").unwrap();
        let res = evaluate(&run, &qrels, &[10, 100], Gain::Linear).unwrap();
        assert_eq!(res.no_relevant, vec!["q2".to_string()]);
        assert_eq!(res.unjudged, vec!["qx".to_string()]);
        assert_eq!(res.missing_from_run, vec!["q3".to_string()]);
        assert_eq!(res.per_query.len(), 3);
        let q1 = res.per_query[0].1[0];
        assert!((q1 - 0.6309).abs() < 1e-4);
        assert!((res.mean_at(10).unwrap() - q1 / 3.0).abs() < 1e-12);

        let mut out = Vec::new();
        res.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("query_id,ndcg@10,ndcg@100\nq1,0.630930,0.630930\n"));
        assert!(text.ends_with(&format!("ALL,{:.6},{:.6}\n", q1 / 3.0, q1 / 3.0)));
    }

    #[test]
    fn ttest_degenerate_cases() {
        let a = [0.3, 0.4, 0.5];
        let t = paired_ttest(&a, &a).unwrap();
        assert_eq!(t.p, 1.0);
        assert_eq!(t.degenerate, Some(Degenerate::ZeroDifferences));

        let t = paired_ttest(&[2.0, 2.0, 2.0, 2.0], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.p, 0.0);
        assert_eq!(t.degenerate, Some(Degenerate::ZeroVariance));
        assert!(t.t.is_infinite() && t.t > 0.0);

        assert!(paired_ttest(&[1.0], &[0.0]).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn ttest_matches_reference_values() {
        // Reference statistics computed independently with SciPy's ttest_rel.
        let a = [0.61, 0.42, 0.55, 0.70, 0.33, 0.48, 0.52, 0.66, 0.41, 0.59];
        let b = [0.58, 0.40, 0.49, 0.71, 0.30, 0.41, 0.50, 0.60, 0.43, 0.52];
        let t = paired_ttest(&a, &b).unwrap();
        assert!((t.t - 3.262160911278736).abs() < 1e-9);
        assert!((t.p - 0.009804803623443084).abs() < 1e-9);
    }

    #[test]
    fn coherence_examples() {
        let same: Vec<&[f32]> = vec![&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]];
        assert_eq!(coherence(&same, 1.0).unwrap(), 1.0);
        let ortho: Vec<&[f32]> = vec![&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]];
        assert_eq!(coherence(&ortho, 0.5).unwrap(), 0.0);
        // cos(a,b) = 0.8; cos(a,c) = 0; cos(b,c) = 0.6
        let mixed: Vec<&[f32]> = vec![&[1.0, 0.0], &[0.8, 0.6], &[0.0, 1.0]];
        assert!((coherence(&mixed, 0.7).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(coherence(&mixed[..1], 0.7).is_err());
    }

    #[test]
    fn coherence_report_filters() {
        let mut text = String::new();
        for i in 0..9 {
            text.push_str(&format!("small 0 e{i} 1\n"));
        }
        for i in 0..10 {
            text.push_str(&format!("big 0 e{i} 1\n"));
        }
        text.push_str("big 0 ghost 2\n");
        let qrels = Qrels::parse(&text, "q").unwrap();
        let rows = (0..10).map(|i| (format!("e{i}"), vec![1.0, i as f32 * 0.01])).collect();
        let space = EmbeddingSpace::from_rows(2, rows).unwrap();
        let rep = coherence_report(&qrels, &space, 0.7, 10);
        assert_eq!(rep.excluded, vec!["small".to_string()]);
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].m, 10);
        assert_eq!(rep.rows[0].dropped, 1);
        assert_eq!(rep.rows[0].coherence, 1.0);
        let above_one = coherence_report(&qrels, &space, 1.0 + 1e-9, 10);
        assert_eq!(above_one.rows[0].coherence, 0.0);
    }

    proptest! {
        #[test]
        fn ttest_is_antisymmetric(pairs in proptest::collection::vec((0f64..1.0, 0f64..1.0), 3..30)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = paired_ttest(&a, &b).unwrap();
            let ba = paired_ttest(&b, &a).unwrap();
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p, ba.p);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }

        #[test]
        fn coherence_invariant_to_order_and_scale(
            rows in proptest::collection::vec(proptest::collection::vec(-1f32..1.0, 3), 2..8),
            shift in 0usize..8,
            exp in -3i32..4,
            tau in -1f64..1.0,
        ) {
            let scale = 2f32.powi(exp);
            let base: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
            let mut rotated = base.clone();
            rotated.rotate_left(shift % base.len());
            let scaled_rows: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
            let scaled: Vec<&[f32]> = scaled_rows.iter().map(Vec::as_slice).collect();
            let c = coherence(&base, tau).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert_eq!(c, coherence(&rotated, tau).unwrap());
            prop_assert_eq!(c, coherence(&scaled, tau).unwrap());
        }

        #[test]
        fn ndcg_bounded_and_ideal_is_one(grades in proptest::collection::vec(0u8..=2, 1..12), k in 1usize..15) {
            let v = ndcg(&grades, &grades, k, Gain::Linear);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            let mut ideal = grades.clone();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            if grades.iter().any(|&g| g > 0) {
                prop_assert_eq!(ndcg(&ideal, &grades, k, Gain::Linear), 1.0);
            }
        }
    }
}
