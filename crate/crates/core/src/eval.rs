//! Ranking metrics, full-pool gold recovery and query latency.
//!
//! Per-session metrics take relevance labels in ranked order. A candidate is
//! positive when its label is above zero. Recall at k follows the
//! multi-positive convention: hits in the top k over all positives.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::corpus::{EvalSession, Utterance};
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::retrieval::{rerank_candidates, Provenance, Retriever};

/// Relevance labels of one session's candidates, best-ranked first.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RankedList {
    pub rels: Vec<f64>,
}

impl RankedList {
    pub fn new(rels: Vec<f64>) -> Self {
        RankedList { rels }
    }

    pub fn positives(&self) -> usize {
        self.rels.iter().filter(|&&r| r > 0.0).count()
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        let total = self.positives();
        (total > 0).then(|| {
            let hits = self.rels.iter().take(k).filter(|&&r| r > 0.0).count();
            hits as f64 / total as f64
        })
    }

    pub fn average_precision(&self) -> Option<f64> {
        let total = self.positives();
        if total == 0 {
            return None;
        }
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (i, &r) in self.rels.iter().enumerate() {
            if r > 0.0 {
                hits += 1;
                sum += hits as f64 / (i + 1) as f64;
            }
        }
        Some(sum / total as f64)
    }

    pub fn reciprocal_rank(&self) -> Option<f64> {
        self.rels.iter().position(|&r| r > 0.0).map(|i| 1.0 / (i + 1) as f64)
    }

    pub fn precision_at_1(&self) -> Option<f64> {
        (self.positives() > 0).then(|| if self.rels.first().is_some_and(|&r| r > 0.0) { 1.0 } else { 0.0 })
    }

    /// Gain `2^rel - 1`, discount `log2(i + 1)`. None when no candidate
    /// carries gain.
    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        let dcg = |rels: &[f64]| -> f64 {
            rels.iter()
                .take(k)
                .enumerate()
                .map(|(i, &r)| (r.exp2() - 1.0) / ((i + 2) as f64).log2())
                .sum()
        };
        let mut ideal = self.rels.clone();
        ideal.sort_by(|a, b| b.total_cmp(a));
        let idcg = dcg(&ideal);
        (idcg > 0.0).then(|| dcg(&self.rels) / idcg)
    }
}

/// Mean of a per-session metric over the sessions where it is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub value: f64,
    pub sessions: usize,
    pub skipped: usize,
}

fn aggregate(lists: &[RankedList], name: &str, f: impl Fn(&RankedList) -> Option<f64>) -> Aggregate {
    let mut sum = 0.0;
    let mut used = 0;
    for l in lists {
        if let Some(v) = f(l) {
            sum += v;
            used += 1;
        }
    }
    let skipped = lists.len() - used;
    if skipped > 0 {
        log::warn!("{name}: skipped {skipped} of {} sessions without positives", lists.len());
    }
    Aggregate {
        value: if used > 0 { sum / used as f64 } else { 0.0 },
        sessions: used,
        skipped,
    }
}

pub fn recall_at_k(lists: &[RankedList], k: usize) -> Aggregate {
    aggregate(lists, "recall", |l| l.recall_at(k))
}

pub fn mean_average_precision(lists: &[RankedList]) -> Aggregate {
    aggregate(lists, "map", RankedList::average_precision)
}

pub fn mean_reciprocal_rank(lists: &[RankedList]) -> Aggregate {
    aggregate(lists, "mrr", RankedList::reciprocal_rank)
}

pub fn precision_at_1(lists: &[RankedList]) -> Aggregate {
    aggregate(lists, "p@1", RankedList::precision_at_1)
}

pub fn ndcg_at_k(lists: &[RankedList], k: usize) -> Aggregate {
    aggregate(lists, "ndcg", |l| l.ndcg_at(k))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Map,
    Mrr,
    P1,
    /// `r<n>@k`; `n` is the nominal candidate count and only names the metric.
    Recall { n: Option<usize>, k: usize },
    Ndcg(usize),
}

impl Metric {
    pub fn compute(self, lists: &[RankedList]) -> Aggregate {
        match self {
            Metric::Map => mean_average_precision(lists),
            Metric::Mrr => mean_reciprocal_rank(lists),
            Metric::P1 => precision_at_1(lists),
            Metric::Recall { k, .. } => recall_at_k(lists, k),
            Metric::Ndcg(k) => ndcg_at_k(lists, k),
        }
    }

    pub fn default_set() -> Vec<Metric> {
        "map,mrr,p1,r10@1,r10@2,r10@5,ndcg@3,ndcg@5".parse::<MetricList>().map(|l| l.0).unwrap_or_default()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Map => f.write_str("map"),
            Metric::Mrr => f.write_str("mrr"),
            Metric::P1 => f.write_str("p1"),
            Metric::Recall { n: Some(n), k } => write!(f, "r{n}@{k}"),
            Metric::Recall { n: None, k } => write!(f, "r@{k}"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || format!("unknown metric {s:?} (expected map, mrr, p1, r<n>@<k> or ndcg@<k>)");
        let cutoff = |k: &str| match k.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k),
            _ => Err(bad()),
        };
        match s.as_str() {
            "map" => Ok(Metric::Map),
            "mrr" => Ok(Metric::Mrr),
            "p1" | "p@1" => Ok(Metric::P1),
            _ => {
                if let Some(k) = s.strip_prefix("ndcg@") {
                    return Ok(Metric::Ndcg(cutoff(k)?));
                }
                let (head, k) = s.split_once('@').ok_or_else(bad)?;
                let n = head.strip_prefix('r').ok_or_else(bad)?;
                let n = if n.is_empty() { None } else { Some(n.parse().map_err(|_| bad())?) };
                Ok(Metric::Recall { n, k: cutoff(k)? })
            }
        }
    }
}

/// A comma separated metric list.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricList(pub Vec<Metric>);

impl FromStr for MetricList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let metrics = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if metrics.is_empty() {
            return Err("no metrics requested".into());
        }
        Ok(MetricList(metrics))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub sessions: usize,
    pub recall_convention: &'static str,
    pub metrics: BTreeMap<String, Aggregate>,
}

impl MetricReport {
    pub fn compute(lists: &[RankedList], metrics: &[Metric]) -> Self {
        MetricReport {
            sessions: lists.len(),
            recall_convention: "hits_over_all_positives",
            metrics: metrics.iter().map(|m| (m.to_string(), m.compute(lists))).collect(),
        }
    }

    pub fn value(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|a| a.value)
    }
}

/// Reranks every session's candidates with the dual encoder and scores the
/// resulting orderings.
pub fn evaluate_rerank(
    encoder: &DualEncoder,
    sessions: &[EvalSession],
    metrics: &[Metric],
    exec: Exec,
) -> Result<MetricReport> {
    if sessions.is_empty() {
        return Err(Error::EmptyInput("no evaluation sessions".into()));
    }
    let lists = exec
        .map(sessions, |s| {
            let texts: Vec<Utterance> = s.candidates.iter().map(|c| c.text.clone()).collect();
            let ranked = rerank_candidates(encoder, &s.context, &texts)?;
            Ok(RankedList::new(ranked.iter().map(|r| s.candidates[r.position].rel).collect()))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::compute(&lists, metrics))
}

/// A test context and the store id of its gold response.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldQuery {
    pub context: Vec<Utterance>,
    pub gold: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FullRankReport {
    pub system: String,
    pub queries: usize,
    pub pool: usize,
    pub r_at_1: f64,
    pub r_at_10: f64,
    /// Queries whose top-1 response came from each provenance.
    pub top1_provenance: BTreeMap<&'static str, usize>,
    /// Queries whose system returned nothing.
    pub empty: usize,
    /// Top-1 dense score per query, NaN when nothing came back.
    #[serde(skip)]
    pub top1_scores: Vec<f32>,
}

/// Gold recovery over the whole pool: a query counts at k when its gold id is
/// among the system's first k responses.
pub fn evaluate_fullrank(system: &dyn Retriever, queries: &[GoldQuery]) -> Result<FullRankReport> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no full-rank queries".into()));
    }
    let store = system.store();
    let mut hit1 = 0usize;
    let mut hit10 = 0usize;
    let mut empty = 0usize;
    let mut top1_provenance: BTreeMap<&'static str, usize> = Provenance::ALL.iter().map(|p| (p.name(), 0)).collect();
    let mut top1_scores = Vec::with_capacity(queries.len());
    for q in queries {
        let hits = system.retrieve(&q.context, 10)?;
        match hits.first() {
            Some(h) => {
                top1_scores.push(h.score);
                if let Some(e) = store.get(h.id) {
                    *top1_provenance.entry(e.provenance.name()).or_default() += 1;
                }
            }
            None => {
                top1_scores.push(f32::NAN);
                empty += 1;
            }
        }
        if let Some(rank) = hits.iter().position(|h| h.id == q.gold) {
            hit10 += 1;
            hit1 += (rank == 0) as usize;
        }
    }
    let n = queries.len() as f64;
    Ok(FullRankReport {
        system: system.name().to_string(),
        queries: queries.len(),
        pool: store.len(),
        r_at_1: hit1 as f64 / n,
        r_at_10: hit10 as f64 / n,
        top1_provenance,
        empty,
        top1_scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyReport {
    pub system: String,
    pub corpus_size: usize,
    pub queries: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl LatencyReport {
    /// Summarizes per-query milliseconds (nearest-rank p95).
    pub fn from_samples(system: &str, corpus_size: usize, warmup: usize, mut ms: Vec<f64>) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::EmptyInput("no timed queries".into()));
        }
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let median = if n % 2 == 1 { ms[n / 2] } else { (ms[n / 2 - 1] + ms[n / 2]) / 2.0 };
        let p95 = ms[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Ok(LatencyReport {
            system: system.to_string(),
            corpus_size,
            queries: n,
            warmup,
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            median_ms: median,
            p95_ms: p95,
        })
    }
}

/// Times `run` once per query on a single worker thread. The first
/// `warmup` queries are run but not timed.
pub fn bench_latency<Q, R>(
    system: &str,
    corpus_size: usize,
    queries: &[Q],
    warmup: usize,
    run: impl FnMut(&Q) -> Result<R> + Send,
) -> Result<LatencyReport>
where
    Q: Sync,
{
    if queries.len() <= warmup {
        return Err(Error::Config(format!(
            "need more than {warmup} queries to time anything, got {}",
            queries.len()
        )));
    }
    let mut run = run;
    let samples = Exec::single_threaded(|| {
        let mut ms = Vec::with_capacity(queries.len() - warmup);
        for (i, q) in queries.iter().enumerate() {
            let t = Instant::now();
            let out = run(q)?;
            let elapsed = t.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(out);
            if i >= warmup {
                ms.push(elapsed);
            }
        }
        Ok::<_, Error>(ms)
    })?;
    LatencyReport::from_samples(system, corpus_size, warmup, samples)
}
