//! Choosing among model variations by a weighted harmonic mean of utility
//! and fairness gains, with k-fold selection over queries.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::RankedRun;
use crate::ingest::EvalReport;
use crate::utility::Qrels;

/// Min-max scales values into [0, 1]. A constant vector maps to zeros.
pub fn delta_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    values
        .iter()
        .map(|v| if span > 0.0 { (v - min) / span } else { 0.0 })
        .collect()
}

/// `(1+β²)·dn·df / (β²·dn + df)`, zero when the denominator vanishes.
///
/// `β = 0` returns `dn` even when `df = 0`, so the utility-best variation
/// still wins when it also has the lowest fairness.
pub fn f_beta(dn: f64, df: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return dn;
    }
    let b2 = beta * beta;
    let denom = b2 * dn + df;
    if denom == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * dn * df / denom
}

/// Index of the highest F_β over (NDCG, NFaiRR) pairs; ties go to the lower index.
pub fn argmax_f_beta(points: &[(f64, f64)], beta: f64) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::Invalid("no candidates to select from".into()));
    }
    let ndcg: Vec<f64> = points.iter().map(|p| p.0).collect();
    let nfairr: Vec<f64> = points.iter().map(|p| p.1).collect();
    let dn = delta_normalize(&ndcg);
    let df = delta_normalize(&nfairr);
    let mut best = 0;
    let mut best_f = f64::NEG_INFINITY;
    for i in 0..points.len() {
        let f = f_beta(dn[i], df[i], beta);
        if f > best_f {
            best = i;
            best_f = f;
        }
    }
    Ok(best)
}

/// Utility and fairness of one model variation, overall and per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationScore {
    pub id: String,
    pub ndcg: f64,
    pub nfairr: f64,
    /// query id -> (NDCG, NFaiRR)
    pub per_query: BTreeMap<String, (f64, f64)>,
}

impl VariationScore {
    pub fn new(id: impl Into<String>, per_query: BTreeMap<String, (f64, f64)>) -> Result<Self> {
        let id = id.into();
        if per_query.is_empty() {
            return Err(Error::Data(format!("variation {id} has no queries")));
        }
        if per_query.values().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::Data(format!("variation {id} has non-finite metrics")));
        }
        let n = per_query.len() as f64;
        let ndcg = per_query.values().map(|p| p.0).sum::<f64>() / n;
        let nfairr = per_query.values().map(|p| p.1).sum::<f64>() / n;
        Ok(Self {
            id,
            ndcg,
            nfairr,
            per_query,
        })
    }

    pub fn from_report(id: impl Into<String>, report: &EvalReport) -> Result<Self> {
        let per_query = report
            .rows
            .iter()
            .map(|r| (r.query_id.clone(), (r.ndcg, r.nfairr)))
            .collect();
        Self::new(id, per_query)
    }

    fn mean_over(&self, queries: &[&str]) -> (f64, f64) {
        let n = queries.len() as f64;
        let (a, b) = queries.iter().fold((0.0, 0.0), |acc, q| {
            let p = self.per_query[*q];
            (acc.0 + p.0, acc.1 + p.1)
        });
        (a / n, b / n)
    }
}

/// The pick made on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPick {
    pub fold: usize,
    pub variation: String,
    pub train_queries: usize,
    pub test_queries: usize,
    pub test_ndcg: f64,
    pub test_nfairr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffSelection {
    pub beta: f64,
    pub folds: Vec<FoldPick>,
    /// Held-out metrics of the picks, averaged over folds.
    pub mean_ndcg: f64,
    pub mean_nfairr: f64,
}

/// Splits sorted query ids round-robin into `k` folds, optionally shuffling first.
pub fn assign_folds<'a>(queries: &[&'a str], k: usize, seed: Option<u64>) -> Result<Vec<Vec<&'a str>>> {
    if k == 0 {
        return Err(Error::Invalid("fold count must be at least 1".into()));
    }
    if queries.len() < k {
        return Err(Error::Invalid(format!(
            "{} queries cannot be split into {k} folds",
            queries.len()
        )));
    }
    let mut order = queries.to_vec();
    order.sort_unstable();
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut folds = vec![Vec::new(); k];
    for (i, q) in order.into_iter().enumerate() {
        folds[i % k].push(q);
    }
    Ok(folds)
}

/// Picks the variation with the highest F_β on each fold's training queries
/// and reports its metrics on the held-out queries. With `k = 1` selection
/// and reporting both use every query.
pub fn select_variation(
    candidates: &[VariationScore],
    beta: f64,
    k: usize,
    seed: Option<u64>,
) -> Result<TradeoffSelection> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::Invalid("no candidates to select from".into()))?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Invalid(format!("beta must be finite and non-negative, got {beta}")));
    }
    for c in candidates {
        if !c.per_query.keys().eq(first.per_query.keys()) {
            return Err(Error::Data(format!(
                "variations {} and {} cover different queries",
                first.id, c.id
            )));
        }
    }
    let queries: Vec<&str> = first.per_query.keys().map(String::as_str).collect();
    let folds = assign_folds(&queries, k, seed)?;

    let mut picks = Vec::with_capacity(k);
    for (fold, test) in folds.iter().enumerate() {
        let train: Vec<&str> = if k == 1 {
            test.clone()
        } else {
            folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != fold)
                .flat_map(|(_, f)| f.iter().copied())
                .collect()
        };
        let points: Vec<(f64, f64)> = candidates.iter().map(|c| c.mean_over(&train)).collect();
        let best = &candidates[argmax_f_beta(&points, beta)?];
        let (test_ndcg, test_nfairr) = best.mean_over(test);
        picks.push(FoldPick {
            fold,
            variation: best.id.clone(),
            train_queries: train.len(),
            test_queries: test.len(),
            test_ndcg,
            test_nfairr,
        });
    }
    let n = picks.len() as f64;
    Ok(TradeoffSelection {
        beta,
        mean_ndcg: picks.iter().map(|p| p.test_ndcg).sum::<f64>() / n,
        mean_nfairr: picks.iter().map(|p| p.test_nfairr).sum::<f64>() / n,
        folds: picks,
    })
}

/// Moves documents judged at least `rel_threshold` to the top of each list,
/// keeping relative order within both groups. Scores are reassigned by rank.
pub fn qrels_oracle_rerank(run: &RankedRun, qrels: &Qrels, rel_threshold: u32) -> RankedRun {
    let tag = match run.tag() {
        t if t.ends_with("+qrels") => t.to_string(),
        t => format!("{t}+qrels"),
    };
    let mut out = RankedRun::new(tag);
    for (qid, docs) in run.iter() {
        let judged = qrels.judgments(qid);
        let is_rel = |d: &str| {
            judged
                .and_then(|j| j.get(d))
                .is_some_and(|g| *g >= rel_threshold)
        };
        let (mut rel, rest): (Vec<&str>, Vec<&str>) =
            docs.iter().map(|d| d.doc_id.as_str()).partition(|d| is_rel(d));
        rel.extend(rest);
        out.insert_ranked(qid, rel)
            .expect("reranking preserves a valid list");
    }
    out
}
