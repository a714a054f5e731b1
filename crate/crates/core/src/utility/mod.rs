//! Retrieval utility metrics (MRR, NDCG, Recall) and paired significance tests.

pub mod special;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{discount, Cutoff, RankedRun};

/// Variance added when paired differences are constant but non-zero.
pub const ZERO_VARIANCE_EPSILON: f64 = 1e-12;

/// Relevance grades of one query's judged documents.
pub type Judgments = HashMap<String, u32>;

/// Relevance judgments: `(query, doc) -> grade`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    queries: BTreeMap<String, Judgments>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a grade and returns the previous one, if any.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        self.queries
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
    }

    pub fn judgments(&self, query_id: &str) -> Option<&Judgments> {
        self.queries.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.queries.get(query_id)?.get(doc_id).copied()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.queries.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Gain applied to a relevance grade inside DCG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `gain = grade`
    #[default]
    Linear,
    /// `gain = 2^grade - 1`
    Exponential,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilityConfig {
    pub mrr_cutoff: Cutoff,
    pub ndcg_cutoff: Cutoff,
    pub recall_cutoff: Cutoff,
    /// Minimum grade counted as relevant by MRR and Recall.
    pub rel_threshold: u32,
    pub gain: Gain,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self {
            mrr_cutoff: Cutoff::TEN,
            ndcg_cutoff: Cutoff::TEN,
            recall_cutoff: Cutoff::TEN,
            rel_threshold: 1,
            gain: Gain::Linear,
        }
    }
}

/// Reciprocal rank of the first document graded at least `rel_threshold`.
pub fn mrr<S: AsRef<str>>(list: &[S], judged: &Judgments, cutoff: Cutoff, rel_threshold: u32) -> f64 {
    list.iter()
        .take(cutoff.get())
        .position(|d| judged.get(d.as_ref()).is_some_and(|&g| g >= rel_threshold))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// DCG over IDCG with the `1 / log2(1 + i)` discount; 0 when nothing is relevant.
pub fn ndcg<S: AsRef<str>>(list: &[S], judged: &Judgments, cutoff: Cutoff, gain: Gain) -> f64 {
    let dcg: f64 = list
        .iter()
        .take(cutoff.get())
        .enumerate()
        .map(|(i, d)| gain.apply(judged.get(d.as_ref()).copied().unwrap_or(0)) * discount(i + 1))
        .sum();
    let mut grades: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(cutoff.get())
        .enumerate()
        .map(|(i, &g)| gain.apply(g) * discount(i + 1))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

/// Fraction of all relevant documents that appear in the top `cutoff`.
pub fn recall<S: AsRef<str>>(list: &[S], judged: &Judgments, cutoff: Cutoff, rel_threshold: u32) -> f64 {
    let total = judged.values().filter(|&&g| g >= rel_threshold).count();
    if total == 0 {
        return 0.0;
    }
    let found = list
        .iter()
        .take(cutoff.get())
        .filter(|d| judged.get(d.as_ref()).is_some_and(|&g| g >= rel_threshold))
        .count();
    found as f64 / total as f64
}

/// Utility of one query's list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryUtility {
    pub mrr: f64,
    pub ndcg: f64,
    pub recall: f64,
    /// The query has no judgments at all; every metric is 0.
    pub no_judgments: bool,
    /// The query has judgments but none reaches the relevance threshold.
    pub no_relevant: bool,
}

pub fn evaluate_query<S: AsRef<str>>(
    list: &[S],
    qrels: &Qrels,
    query_id: &str,
    cfg: &UtilityConfig,
) -> QueryUtility {
    let Some(judged) = qrels.judgments(query_id) else {
        return QueryUtility {
            mrr: 0.0,
            ndcg: 0.0,
            recall: 0.0,
            no_judgments: true,
            no_relevant: true,
        };
    };
    QueryUtility {
        mrr: mrr(list, judged, cfg.mrr_cutoff, cfg.rel_threshold),
        ndcg: ndcg(list, judged, cfg.ndcg_cutoff, cfg.gain),
        recall: recall(list, judged, cfg.recall_cutoff, cfg.rel_threshold),
        no_judgments: false,
        no_relevant: !judged.values().any(|&g| g >= cfg.rel_threshold),
    }
}

/// Per-query and mean utility of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityResult {
    pub config: UtilityConfig,
    pub per_query: BTreeMap<String, QueryUtility>,
    pub mrr: f64,
    pub ndcg: f64,
    pub recall: f64,
}

pub fn evaluate_run(run: &RankedRun, qrels: &Qrels, cfg: &UtilityConfig) -> Result<UtilityResult> {
    if run.is_empty() {
        return Err(Error::Data("run has no queries".into()));
    }
    let per_query: BTreeMap<String, QueryUtility> = run
        .iter()
        .map(|(qid, docs)| {
            let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
            (qid.to_string(), evaluate_query(&ids, qrels, qid, cfg))
        })
        .collect();
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryUtility) -> f64| per_query.values().map(f).sum::<f64>() / n;
    Ok(UtilityResult {
        config: *cfg,
        mrr: mean(|q| q.mrr),
        ndcg: mean(|q| q.ndcg),
        recall: mean(|q| q.recall),
        per_query,
    })
}

/// Outcome of a two-sided paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// Differences were constant and non-zero; `ZERO_VARIANCE_EPSILON` was
    /// added to the variance.
    pub zero_variance: bool,
}

impl TTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

/// Two-sided paired t-test on per-query values aligned by position.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Invalid("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = n - 1;
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(TTest {
            t: 0.0,
            p: 1.0,
            df,
            zero_variance: false,
        });
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let mut var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / df as f64;
    let zero_variance = var == 0.0;
    if zero_variance {
        var = ZERO_VARIANCE_EPSILON;
    }
    let t = mean / (var / n as f64).sqrt();
    Ok(TTest {
        t,
        p: special::student_t_two_sided(t, df as f64),
        df,
        zero_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn judged(pairs: &[(&str, u32)]) -> Judgments {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    fn c(n: usize) -> Cutoff {
        Cutoff::new(n).unwrap()
    }

    #[test]
    fn mrr_examples() {
        let j = judged(&[("d3", 1)]);
        assert!((mrr(&["d1", "d2", "d3"], &j, c(10), 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mrr(&["d1", "d2"], &j, c(10), 1), 0.0);
        assert_eq!(mrr(&["d3", "d1"], &j, c(10), 1), 1.0);
        assert_eq!(mrr(&["d1", "d2", "d3"], &j, c(2), 1), 0.0);
        assert_eq!(mrr(&["d3"], &j, c(10), 2), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        let j = judged(&[("b", 1)]);
        assert!((ndcg(&["a", "b"], &j, c(10), Gain::Linear) - 0.63093).abs() < 1e-5);
        let j = judged(&[("a", 2), ("b", 1)]);
        assert_eq!(ndcg(&["a", "b"], &j, c(10), Gain::Linear), 1.0);
        let j = judged(&[("x", 0), ("y", 2), ("z", 1)]);
        let v = ndcg(&["x", "y", "z"], &j, c(3), Gain::Linear);
        assert!((v - 0.66968).abs() < 1e-5, "{v}");
        assert_eq!(ndcg(&["x"], &judged(&[("x", 0)]), c(3), Gain::Linear), 0.0);
        // Exponential gain: grades 2, 1 -> gains 3, 1.
        let e = ndcg(&["z", "y"], &judged(&[("y", 2), ("z", 1)]), c(2), Gain::Exponential);
        let expected = (1.0 + 3.0 * discount(2)) / (3.0 + discount(2));
        assert!((e - expected).abs() < 1e-12);
    }

    #[test]
    fn recall_examples() {
        let j = judged(&[("a", 1), ("b", 1), ("c", 1), ("d", 1)]);
        assert_eq!(recall(&["a", "x", "b"], &j, c(10), 1), 0.5);
        assert_eq!(recall(&["d", "c", "b", "a"], &j, c(10), 1), 1.0);
        assert_eq!(recall(&["a"], &judged(&[("a", 0)]), c(10), 1), 0.0);
    }

    #[test]
    fn evaluate_query_flags() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 0);
        let cfg = UtilityConfig::default();
        let u = evaluate_query(&["a"], &qrels, "q1", &cfg);
        assert!(u.no_relevant && !u.no_judgments);
        let u = evaluate_query(&["a"], &qrels, "q2", &cfg);
        assert!(u.no_judgments);
        assert_eq!(u.mrr + u.ndcg + u.recall, 0.0);
    }

    #[test]
    fn ttest_conventions() {
        let a = [0.1, 0.4, 0.3];
        let r = paired_ttest(&a, &a).unwrap();
        assert_eq!(r.p, 1.0);

        let b: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 1.0).collect();
        let r = paired_ttest(&a, &b).unwrap();
        assert!(r.p < 0.05);
        // Adding 1.0 to values in [0, 1) is not exact, so the differences may
        // carry rounding noise; either way the test must come out significant.
        assert!(r.t > 0.0);

        let r = paired_ttest(&[2.0, 2.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(r.zero_variance);
        assert!(r.p < 1e-6);

        assert!(paired_ttest(&[1.0], &[0.0]).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn ttest_matches_hand_computation() {
        // d = [1, 2, 3, 4]: mean 2.5, sd sqrt(5/3), t = 2.5 / sqrt(5/12).
        let r = paired_ttest(&[2.0, 4.0, 6.0, 8.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r.t - 2.5 / (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.df, 3);
        let p = special::student_t_two_sided(r.t, 3.0);
        assert_eq!(r.p, p);
    }

    #[test]
    fn ttest_uniform_under_null() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut rejections = 0;
        let trials = 400;
        for _ in 0..trials {
            let a: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
            if paired_ttest(&a, &b).unwrap().p < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / trials as f64;
        assert!(rate > 0.01 && rate < 0.10, "rejection rate {rate}");
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(
            grades in proptest::collection::vec(0u32..4, 1..20),
            order in proptest::collection::vec(0usize..30, 1..20),
            t in 1usize..15,
        ) {
            let j: Judgments = grades.iter().enumerate().map(|(i, g)| (format!("d{i}"), *g)).collect();
            let mut seen = std::collections::HashSet::new();
            let list: Vec<String> = order.iter().map(|i| format!("d{i}")).filter(|d| seen.insert(d.clone())).collect();
            for v in [mrr(&list, &j, c(t), 1), ndcg(&list, &j, c(t), Gain::Linear), recall(&list, &j, c(t), 1)] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }

        #[test]
        fn ideal_order_has_unit_ndcg(grades in proptest::collection::vec(0u32..4, 1..15), t in 1usize..15) {
            let j: Judgments = grades.iter().enumerate().map(|(i, g)| (format!("d{i}"), *g)).collect();
            let mut ideal: Vec<(u32, String)> = j.iter().map(|(d, g)| (*g, d.clone())).collect();
            ideal.sort_by_key(|e| std::cmp::Reverse(e.0));
            let list: Vec<String> = ideal.into_iter().map(|(_, d)| d).collect();
            let v = ndcg(&list, &j, c(t), Gain::Linear);
            if grades.iter().any(|&g| g > 0) {
                prop_assert!((v - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn reordering_nonrelevant_tail_is_invisible(
            grades in proptest::collection::vec(0u32..3, 4..20),
            t in 1usize..20,
        ) {
            let j: Judgments = grades.iter().enumerate().map(|(i, g)| (format!("d{i}"), *g)).collect();
            let list: Vec<String> = (0..grades.len()).map(|i| format!("d{i}")).collect();
            let mut shuffled = list.clone();
            let tail_start = t.min(list.len());
            shuffled[tail_start..].reverse();
            let cfg = UtilityConfig { mrr_cutoff: c(t), ndcg_cutoff: c(t), recall_cutoff: c(t), ..Default::default() };
            let mut qrels = Qrels::new();
            for (d, g) in &j { qrels.insert("q", d, *g); }
            prop_assert_eq!(evaluate_query(&list, &qrels, "q", &cfg), evaluate_query(&shuffled, &qrels, "q", &cfg));
        }

        #[test]
        fn ttest_symmetric(a in proptest::collection::vec(0.0f64..1.0, 2..30), shift in -0.5f64..0.5) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift * ((i % 3) as f64)).collect();
            let ab = paired_ttest(&a, &b).unwrap();
            let ba = paired_ttest(&b, &a).unwrap();
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
        }
    }
}
