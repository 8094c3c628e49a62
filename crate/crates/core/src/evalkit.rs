//! Ranking metrics and base-vs-with-thought comparison.
//!
//! MRR@k and Recall@k average over queries with at least one judged-relevant
//! document (queries entirely absent from the qrels are dropped and counted
//! as a coverage warning); nDCG@k scores zero-relevant queries as 0. Ranks
//! come from the run file, not from re-sorting scores.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::pipeline::RunFile;

/// Graded relevance judgments keyed by query id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QrelSet {
    grades: HashMap<String, HashMap<String, u32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        QrelSet::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Result<()> {
        let by_doc = self.grades.entry(query_id.to_string()).or_default();
        if by_doc.insert(doc_id.to_string(), grade).is_some() {
            return Err(CoreError::Config(format!(
                "duplicate qrel entry for ({query_id}, {doc_id})"
            )));
        }
        Ok(())
    }

    pub fn judged(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.grades.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn n_relevant(&self, query_id: &str) -> usize {
        self.grades
            .get(query_id)
            .map(|m| m.values().filter(|&&g| g >= 1).count())
            .unwrap_or(0)
    }

    /// Reads `qid 0 docid grade` lines.
    pub fn load(path: &Path) -> Result<QrelSet> {
        let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
        let mut qrels = QrelSet::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CoreError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(CoreError::parse(path, lineno + 1, "expected 4 fields"));
            }
            let grade: u32 = fields[3]
                .parse()
                .map_err(|_| CoreError::parse(path, lineno + 1, "bad grade"))?;
            qrels
                .insert(fields[0], fields[2], grade)
                .map_err(|e| CoreError::parse(path, lineno + 1, e.to_string()))?;
        }
        Ok(qrels)
    }
}

/// Base-vs-with-thought deltas attached to a [`MetricReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReport {
    pub base_mean: f64,
    pub with_t_mean: f64,
    pub delta_mean: f64,
    pub per_query: BTreeMap<String, f64>,
}

impl DeltaReport {
    /// Display form of the mean delta on the 0-100 scale, one decimal,
    /// always signed (full precision is kept in `delta_mean`).
    pub fn display_delta(&self) -> String {
        format!("{:+.1}", self.delta_mean * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Metric label, e.g. `mrr@10`.
    pub metric: String,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Queries present in the run but absent from the qrels.
    pub n_unjudged: usize,
    /// Judged queries with zero relevant documents, excluded from MRR and
    /// Recall means.
    pub n_no_relevant: usize,
    pub delta: Option<DeltaReport>,
}

impl MetricReport {
    fn from_values(
        metric: String,
        per_query: BTreeMap<String, f64>,
        n_unjudged: usize,
        n_no_relevant: usize,
    ) -> MetricReport {
        let mean = if per_query.is_empty() {
            0.0
        } else {
            per_query.values().sum::<f64>() / per_query.len() as f64
        };
        MetricReport { metric, per_query, mean, n_unjudged, n_no_relevant, delta: None }
    }

    pub fn display_mean(&self) -> String {
        format!("{:.1}", self.mean * 100.0)
    }
}

enum MetricKind {
    Mrr,
    Recall,
    Ndcg,
}

fn compute(run: &RunFile, qrels: &QrelSet, k: usize, kind: MetricKind, label: String) -> MetricReport {
    let mut per_query = BTreeMap::new();
    let mut n_unjudged = 0usize;
    let mut n_no_relevant = 0usize;
    for q in &run.queries {
        let Some(judged) = qrels.judged(&q.query_id) else {
            n_unjudged += 1;
            continue;
        };
        let n_rel = judged.values().filter(|&&g| g >= 1).count();
        let top = &q.docs[..q.docs.len().min(k)];
        let value = match kind {
            MetricKind::Mrr => {
                if n_rel == 0 {
                    n_no_relevant += 1;
                    continue;
                }
                top.iter()
                    .position(|d| qrels.grade(&q.query_id, &d.doc_id) >= 1)
                    .map(|i| 1.0 / (i + 1) as f64)
                    .unwrap_or(0.0)
            }
            MetricKind::Recall => {
                if n_rel == 0 {
                    n_no_relevant += 1;
                    continue;
                }
                let hit = top
                    .iter()
                    .filter(|d| qrels.grade(&q.query_id, &d.doc_id) >= 1)
                    .count();
                hit as f64 / n_rel as f64
            }
            MetricKind::Ndcg => {
                let dcg: f64 = top
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let g = qrels.grade(&q.query_id, &d.doc_id);
                        (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2()
                    })
                    .sum();
                let mut ideal: Vec<u32> = judged.values().copied().collect();
                ideal.sort_unstable_by(|a, b| b.cmp(a));
                let idcg: f64 = ideal
                    .iter()
                    .take(k)
                    .enumerate()
                    .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
                    .sum();
                if idcg == 0.0 {
                    0.0
                } else {
                    dcg / idcg
                }
            }
        };
        per_query.insert(q.query_id.clone(), value);
    }
    MetricReport::from_values(label, per_query, n_unjudged, n_no_relevant)
}

/// Reciprocal rank of the first relevant document within the top k.
pub fn mrr_at_k(run: &RunFile, qrels: &QrelSet, k: usize) -> MetricReport {
    compute(run, qrels, k, MetricKind::Mrr, format!("mrr@{k}"))
}

/// Fraction of judged-relevant documents retrieved in the top k.
pub fn recall_at_k(run: &RunFile, qrels: &QrelSet, k: usize) -> MetricReport {
    compute(run, qrels, k, MetricKind::Recall, format!("recall@{k}"))
}

/// Exponential-gain nDCG: gain 2^grade − 1, discount log2(rank + 1).
pub fn ndcg_at_k(run: &RunFile, qrels: &QrelSet, k: usize) -> MetricReport {
    compute(run, qrels, k, MetricKind::Ndcg, format!("ndcg@{k}"))
}

/// Pairs a base report with a with-thought report of the same metric over
/// the same query set; Δ = with_t − base.
pub fn compare_runs(base: &MetricReport, with_t: &MetricReport) -> Result<MetricReport> {
    if base.metric != with_t.metric {
        return Err(CoreError::QuerySetMismatch(format!(
            "metric {} vs {}",
            base.metric, with_t.metric
        )));
    }
    if base.per_query.keys().ne(with_t.per_query.keys()) {
        return Err(CoreError::QuerySetMismatch(format!(
            "{} vs {} evaluated queries",
            base.per_query.len(),
            with_t.per_query.len()
        )));
    }
    let per_query: BTreeMap<String, f64> = base
        .per_query
        .iter()
        .map(|(qid, &b)| (qid.clone(), with_t.per_query[qid] - b))
        .collect();
    let mut out = with_t.clone();
    out.delta = Some(DeltaReport {
        base_mean: base.mean,
        with_t_mean: with_t.mean,
        delta_mean: with_t.mean - base.mean,
        per_query,
    });
    Ok(out)
}

/// Aligned plain-text table over a set of reports (0-100 scale, one
/// decimal), with base/Δ columns when deltas are attached.
pub fn render_table(reports: &[MetricReport]) -> String {
    let has_delta = reports.iter().any(|r| r.delta.is_some());
    let mut out = String::new();
    if has_delta {
        out.push_str(&format!(
            "{:<12} {:>8} {:>8} {:>8}   {}\n",
            "metric", "base", "with-t", "delta", "queries"
        ));
    } else {
        out.push_str(&format!("{:<12} {:>8}   {}\n", "metric", "value", "queries"));
    }
    for r in reports {
        let coverage = if r.n_unjudged > 0 || r.n_no_relevant > 0 {
            format!("{} (unjudged {}, no-relevant {})", r.per_query.len(), r.n_unjudged, r.n_no_relevant)
        } else {
            format!("{}", r.per_query.len())
        };
        match &r.delta {
            Some(d) => out.push_str(&format!(
                "{:<12} {:>8.1} {:>8.1} {:>8}   {}\n",
                r.metric,
                d.base_mean * 100.0,
                d.with_t_mean * 100.0,
                d.display_delta(),
                coverage
            )),
            None => out.push_str(&format!(
                "{:<12} {:>8.1}   {}\n",
                r.metric,
                r.mean * 100.0,
                coverage
            )),
        }
    }
    out
}

/// Machine-readable form: one JSON object per line with metric, query_id
/// ("all" for the mean), and value.
pub fn write_report_jsonl(reports: &[MetricReport], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in reports {
        writeln!(
            w,
            "{}",
            serde_json::json!({"metric": r.metric, "query_id": "all", "value": r.mean})
        )
        .map_err(|e| CoreError::io(path, e))?;
        if let Some(d) = &r.delta {
            writeln!(
                w,
                "{}",
                serde_json::json!({"metric": format!("{}/delta", r.metric), "query_id": "all", "value": d.delta_mean})
            )
            .map_err(|e| CoreError::io(path, e))?;
        }
        for (qid, v) in &r.per_query {
            writeln!(
                w,
                "{}",
                serde_json::json!({"metric": r.metric, "query_id": qid, "value": v})
            )
            .map_err(|e| CoreError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}
