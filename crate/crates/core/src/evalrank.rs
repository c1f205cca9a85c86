//! Ranking evaluation: average precision, Hits@K and their means over queries.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::aliasdata::{EvalQuery, NegType};
use crate::classic::ClassicMetric;
use crate::scorer::{score_str, ModelParams};
use crate::{Error, Result};

/// Anything that scores a mention pair, higher meaning more likely aliases.
pub trait PairScorer: Sync {
    fn pair_score(&self, a: &str, b: &str) -> Result<f64>;
}

impl PairScorer for ModelParams {
    fn pair_score(&self, a: &str, b: &str) -> Result<f64> {
        Ok(score_str(a, b, self)? as f64)
    }
}

impl PairScorer for ClassicMetric {
    fn pair_score(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.similarity(a, b).value)
    }
}

impl<F: Fn(&str, &str) -> Result<f64> + Sync> PairScorer for F {
    fn pair_score(&self, a: &str, b: &str) -> Result<f64> {
        self(a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidate {
    pub candidate: String,
    pub score: f64,
    pub relevant: bool,
    /// `None` for positives
    pub neg_type: Option<NegType>,
}

/// Candidates in rank order: score descending, ties by candidate ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub query: String,
    pub items: Vec<RankedCandidate>,
}

impl RankingResult {
    pub fn rank(query: impl Into<String>, mut items: Vec<RankedCandidate>) -> Result<Self> {
        if let Some(c) = items.iter().find(|c| c.score.is_nan()) {
            return Err(Error::Numerical(format!("NaN score for candidate {:?}", c.candidate)));
        }
        items.sort_by(|a, b| match b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal) {
            Ordering::Equal => a.candidate.cmp(&b.candidate),
            o => o,
        });
        Ok(Self { query: query.into(), items })
    }

    pub fn num_relevant(&self) -> usize {
        self.items.iter().filter(|c| c.relevant).count()
    }
}

/// Mean over relevant positions of precision at that rank.
pub fn average_precision(r: &RankingResult) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, c) in r.items.iter().enumerate() {
        if c.relevant {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::invalid(format!("query {:?} has no relevant candidate", r.query)));
    }
    Ok(total / hits as f64)
}

/// 1 if a relevant candidate is ranked within the top `k`, else 0.
pub fn hits_at_k(r: &RankingResult, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(if r.items.iter().take(k).any(|c| c.relevant) { 1.0 } else { 0.0 })
}

pub const HITS_K: [usize; 3] = [1, 10, 50];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub query: String,
    pub average_precision: f64,
    pub hits: [f64; 3],
    pub candidates: usize,
    /// AP against positives plus negatives of one type, per type present
    pub per_type: Vec<(NegType, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeBreakdown {
    pub neg_type: NegType,
    pub map: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map: f64,
    /// means of Hits@1, @10, @50
    pub hits: [f64; 3],
    pub queries: usize,
    pub skipped: usize,
    pub per_type: Vec<TypeBreakdown>,
    pub per_query: Vec<QueryResult>,
}

impl EvalReport {
    /// `metric \t value` lines followed by the per-type breakdown.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        writeln!(out, "MAP\t{:.6}", self.map).unwrap();
        for (k, h) in HITS_K.iter().zip(self.hits) {
            writeln!(out, "Hits@{k}\t{h:.6}").unwrap();
        }
        writeln!(out, "queries\t{}", self.queries).unwrap();
        writeln!(out, "skipped\t{}", self.skipped).unwrap();
        for t in &self.per_type {
            writeln!(out, "MAP[{}]\t{:.6}", t.neg_type, t.map).unwrap();
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for q in &self.per_query {
            out.push_str(&serde_json::to_string(q).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }
}

/// Scores, ranks and labels every candidate of `q`.
pub fn rank_query<S: PairScorer + ?Sized>(scorer: &S, q: &EvalQuery) -> Result<RankingResult> {
    let mut items = Vec::with_capacity(q.num_candidates());
    for p in &q.positives {
        items.push(RankedCandidate { candidate: p.clone(), score: scorer.pair_score(&q.query, p)?, relevant: true, neg_type: None });
    }
    for (n, t) in &q.negatives {
        items.push(RankedCandidate { candidate: n.clone(), score: scorer.pair_score(&q.query, n)?, relevant: false, neg_type: Some(*t) });
    }
    RankingResult::rank(q.query.clone(), items)
}

fn query_result(r: &RankingResult) -> Result<QueryResult> {
    let mut hits = [0.0; 3];
    for (h, k) in hits.iter_mut().zip(HITS_K) {
        *h = hits_at_k(r, k)?;
    }
    let mut per_type = Vec::new();
    for t in NegType::ALL {
        if !r.items.iter().any(|c| c.neg_type == Some(t)) {
            continue;
        }
        let items = r.items.iter().filter(|c| c.relevant || c.neg_type == Some(t)).cloned().collect();
        let sub = RankingResult { query: r.query.clone(), items };
        per_type.push((t, average_precision(&sub)?));
    }
    Ok(QueryResult {
        query: r.query.clone(),
        average_precision: average_precision(r)?,
        hits,
        candidates: r.items.len(),
        per_type,
    })
}

/// MAP and Hits@{1,10,50} of `scorer` over `queries`. Queries without
/// positives are skipped and counted.
pub fn evaluate<S: PairScorer + ?Sized>(scorer: &S, queries: &[EvalQuery]) -> Result<EvalReport> {
    let results: Vec<Option<QueryResult>> = queries
        .par_iter()
        .map(|q| {
            if q.positives.is_empty() {
                return Ok(None);
            }
            query_result(&rank_query(scorer, q)?).map(Some)
        })
        .collect::<Result<_>>()?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let per_query: Vec<QueryResult> = results.into_iter().flatten().collect();
    let n = per_query.len();
    if n == 0 {
        return Err(Error::invalid("no query has a relevant candidate"));
    }
    let map = per_query.iter().map(|q| q.average_precision).sum::<f64>() / n as f64;
    let mut hits = [0.0; 3];
    for (i, h) in hits.iter_mut().enumerate() {
        *h = per_query.iter().map(|q| q.hits[i]).sum::<f64>() / n as f64;
    }
    let per_type = NegType::ALL
        .into_iter()
        .filter_map(|t| {
            let aps: Vec<f64> = per_query.iter().flat_map(|q| q.per_type.iter().filter(|(k, _)| *k == t).map(|(_, a)| *a)).collect();
            (!aps.is_empty()).then(|| TypeBreakdown { neg_type: t, map: aps.iter().sum::<f64>() / aps.len() as f64, queries: aps.len() })
        })
        .collect();
    Ok(EvalReport { map, hits, queries: n, skipped, per_type, per_query })
}
