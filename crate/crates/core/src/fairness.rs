//! Fairness of ranked lists (FaiRR, IFaiRR, NFaiRR) and ranker-agnostic
//! fairness of document sets (SetFaiRR).
//!
//! All metrics weight position `i` (1-based) by `1 / log2(1 + i)`, the DCG
//! discount, and stop at a cutoff `t`. Lists shorter than the cutoff only
//! contribute the positions they have.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neutrality::NeutralityTable;

/// Largest set accepted by [`set_fairr_bruteforce`] (8! = 40320 permutations).
pub const BRUTEFORCE_LIMIT: usize = 8;

/// A rank cutoff `t >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Cutoff(usize);

impl Cutoff {
    pub const TEN: Cutoff = Cutoff(10);

    pub fn new(t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::Invalid("cutoff must be at least 1".into()));
        }
        Ok(Cutoff(t))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for Cutoff {
    type Error = Error;
    fn try_from(t: usize) -> Result<Self> {
        Cutoff::new(t)
    }
}

impl From<Cutoff> for usize {
    fn from(c: Cutoff) -> usize {
        c.0
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Position bias `p(i) = 1 / log2(1 + i)` for a 1-based rank.
pub fn position_bias(rank: usize) -> Result<f64> {
    if rank == 0 {
        return Err(Error::Invalid("ranks start at 1".into()));
    }
    Ok(discount(rank))
}

#[inline]
pub(crate) fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// `Σ_{i=1..t} p(i)`; the FaiRR of `t` fully neutral documents.
pub fn discount_mass(len: usize) -> f64 {
    (1..=len).map(discount).sum()
}

/// FaiRR of a ranked list of neutrality scores.
pub fn fairr(scores: &[f64], cutoff: Cutoff) -> f64 {
    scores
        .iter()
        .take(cutoff.get())
        .enumerate()
        .map(|(i, w)| w * discount(i + 1))
        .sum()
}

/// Ideal FaiRR: FaiRR of the background scores sorted in descending order.
pub fn ifairr(background: &[f64], cutoff: Cutoff) -> Result<f64> {
    if background.is_empty() {
        return Err(Error::Invalid("background set is empty".into()));
    }
    let mut sorted = background.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(fairr(&sorted, cutoff))
}

/// `numerator / ideal`, with the all-biased pool convention: `0 / 0 = 1`.
/// The boolean reports whether the convention was applied.
fn normalize(numerator: f64, ideal: f64) -> Result<(f64, bool)> {
    if ideal > 0.0 {
        Ok((numerator / ideal, false))
    } else if numerator == 0.0 {
        Ok((1.0, true))
    } else {
        Err(Error::Data(format!(
            "ideal fairness is 0 but the scored list reaches {numerator}; \
             the list contains documents outside the background set"
        )))
    }
}

/// Per-query fairness of one ranked list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryFairness {
    pub fairr: f64,
    pub ifairr: f64,
    pub nfairr: f64,
    /// IFaiRR was 0 and NFaiRR was set to 1 by convention.
    pub zero_ideal: bool,
}

fn lookup_all<'a, I>(ids: I, table: &NeutralityTable) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a str>,
{
    ids.into_iter().map(|id| table.score(id)).collect()
}

/// NFaiRR of one query's ranked list against its background set.
pub fn nfairr_query<S: AsRef<str>>(
    list: &[S],
    table: &NeutralityTable,
    background: &BTreeSet<String>,
    cutoff: Cutoff,
) -> Result<QueryFairness> {
    let list_scores = lookup_all(list.iter().take(cutoff.get()).map(AsRef::as_ref), table)?;
    let bg_scores = lookup_all(background.iter().map(String::as_str), table)?;
    let fairr = fairr(&list_scores, cutoff);
    let ifairr = ifairr(&bg_scores, cutoff)?;
    let (nfairr, zero_ideal) = normalize(fairr, ifairr)?;
    Ok(QueryFairness {
        fairr,
        ifairr,
        nfairr,
        zero_ideal,
    })
}

/// One ranked document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// A ranker's output: per query, documents in rank order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedRun {
    tag: String,
    queries: BTreeMap<String, Vec<ScoredDoc>>,
}

impl RankedRun {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn set_tag(&mut self, tag: impl Into<String>) {
        self.tag = tag.into();
    }

    /// Adds a query's list. Doc ids must be unique and scores non-increasing.
    pub fn insert(&mut self, query_id: impl Into<String>, docs: Vec<ScoredDoc>) -> Result<()> {
        let query_id = query_id.into();
        let mut seen = HashSet::with_capacity(docs.len());
        for d in &docs {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::Data(format!(
                    "query {query_id}: document {} ranked twice",
                    d.doc_id
                )));
            }
            if !d.score.is_finite() {
                return Err(Error::Data(format!(
                    "query {query_id}: document {} has non-finite score",
                    d.doc_id
                )));
            }
        }
        if docs.windows(2).any(|w| w[1].score > w[0].score) {
            return Err(Error::Data(format!("query {query_id}: scores increase down the ranking")));
        }
        if self.queries.contains_key(&query_id) {
            return Err(Error::Data(format!("query {query_id} inserted twice")));
        }
        self.queries.insert(query_id, docs);
        Ok(())
    }

    /// Builds a list from doc ids in rank order, assigning scores `n, n-1, ..., 1`.
    pub fn insert_ranked<I, S>(&mut self, query_id: impl Into<String>, ids: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let n = ids.len();
        let docs = ids
            .into_iter()
            .enumerate()
            .map(|(i, doc_id)| ScoredDoc {
                doc_id,
                score: (n - i) as f64,
            })
            .collect();
        self.insert(query_id, docs)
    }

    pub fn get(&self, query_id: &str) -> Option<&[ScoredDoc]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    /// Doc ids of a query in rank order.
    pub fn doc_ids(&self, query_id: &str) -> Option<Vec<&str>> {
        self.get(query_id)
            .map(|docs| docs.iter().map(|d| d.doc_id.as_str()).collect())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ScoredDoc])> {
        self.queries.iter().map(|(q, d)| (q.as_str(), d.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Keeps only the queries accepted by `keep`.
    pub fn retain<F: FnMut(&str) -> bool>(&mut self, mut keep: F) {
        self.queries.retain(|q, _| keep(q));
    }
}

/// Per-query background document sets used for IFaiRR.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BackgroundSet {
    sets: BTreeMap<String, BTreeSet<String>>,
}

impl BackgroundSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<I, S>(&mut self, query_id: impl Into<String>, docs: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let query_id = query_id.into();
        let set: BTreeSet<String> = docs.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(Error::Data(format!("query {query_id}: empty background set")));
        }
        self.sets.insert(query_id, set);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.sets.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.sets.iter().map(|(q, s)| (q.as_str(), s))
    }
}

/// NFaiRR of every query of a run, plus the mean over queries.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessResult {
    pub cutoff: Cutoff,
    pub per_query: BTreeMap<String, QueryFairness>,
    pub aggregate: f64,
}

pub fn nfairr_run(
    run: &RankedRun,
    table: &NeutralityTable,
    background: &BackgroundSet,
    cutoff: Cutoff,
) -> Result<FairnessResult> {
    if run.is_empty() {
        return Err(Error::Data("run has no queries".into()));
    }
    let mut per_query = BTreeMap::new();
    for (qid, docs) in run.iter() {
        let bg = background
            .get(qid)
            .ok_or_else(|| Error::Data(format!("query {qid} has no background set")))?;
        let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        per_query.insert(qid.to_string(), nfairr_query(&ids, table, bg, cutoff)?);
    }
    let aggregate = per_query.values().map(|q| q.nfairr).sum::<f64>() / per_query.len() as f64;
    Ok(FairnessResult {
        cutoff,
        per_query,
        aggregate,
    })
}

/// Expected FaiRR over all orderings of a document set, in closed form:
/// the mean neutrality times the discount mass of the first `min(t, |S|)`
/// positions.
pub fn set_fairr(scores: &[f64], cutoff: Cutoff) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Invalid("document set is empty".into()));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(mean * discount_mass(cutoff.get().min(scores.len())))
}

/// Mean FaiRR over every permutation of the set. Exponential; test oracle only.
pub fn set_fairr_bruteforce(scores: &[f64], cutoff: Cutoff) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Invalid("document set is empty".into()));
    }
    if scores.len() > BRUTEFORCE_LIMIT {
        return Err(Error::Invalid(format!(
            "{} documents exceed the brute-force limit of {BRUTEFORCE_LIMIT}",
            scores.len()
        )));
    }
    let mut perm = scores.to_vec();
    let mut total = 0.0;
    let mut count = 0u64;
    heap_permutations(&mut perm, scores.len(), &mut |p| {
        total += fairr(p, cutoff);
        count += 1;
    });
    Ok(total / count as f64)
}

fn heap_permutations<F: FnMut(&[f64])>(items: &mut [f64], k: usize, visit: &mut F) {
    if k <= 1 {
        visit(items);
        return;
    }
    for i in 0..k - 1 {
        heap_permutations(items, k - 1, visit);
        if k.is_multiple_of(2) {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
    heap_permutations(items, k - 1, visit);
}

/// Ranker-agnostic NFaiRR: SetFaiRR of `scores` over IFaiRR of the background.
pub fn nfairr_set(scores: &[f64], background: &[f64], cutoff: Cutoff) -> Result<f64> {
    let num = set_fairr(scores, cutoff)?;
    let ideal = ifairr(background, cutoff)?;
    normalize(num, ideal).map(|(v, _)| v)
}

/// [`nfairr_set`] with scores looked up by document id.
pub fn nfairr_set_query<S: AsRef<str>>(
    docs: &[S],
    table: &NeutralityTable,
    background: &BTreeSet<String>,
    cutoff: Cutoff,
) -> Result<f64> {
    let s = lookup_all(docs.iter().map(AsRef::as_ref), table)?;
    let b = lookup_all(background.iter().map(String::as_str), table)?;
    nfairr_set(&s, &b, cutoff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(n: usize) -> Cutoff {
        Cutoff::new(n).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn position_bias_examples() {
        assert_eq!(position_bias(1).unwrap(), 1.0);
        assert_eq!(position_bias(3).unwrap(), 0.5);
        assert!(close(position_bias(2).unwrap(), 0.63093, 1e-5));
        assert!(position_bias(0).is_err());
        assert!(Cutoff::new(0).is_err());
    }

    #[test]
    fn fairr_examples() {
        assert!(close(fairr(&[1.0, 0.0, 1.0], t(3)), 1.5, 1e-12));
        assert_eq!(fairr(&[0.0, 0.0, 0.0], t(3)), 0.0);
        assert_eq!(fairr(&[1.0], t(10)), 1.0);
        // Positions past the cutoff are ignored.
        assert_eq!(fairr(&[1.0, 1.0], t(1)), 1.0);
    }

    #[test]
    fn ifairr_examples() {
        assert!(close(ifairr(&[0.5, 1.0, 0.8], t(3)).unwrap(), 1.75474, 1e-5));
        assert!(close(ifairr(&[1.0, 1.0], t(2)).unwrap(), 1.63093, 1e-5));
        assert_eq!(ifairr(&[0.0], t(5)).unwrap(), 0.0);
        assert!(ifairr(&[], t(5)).is_err());
    }

    fn table(entries: &[(&str, f64)]) -> NeutralityTable {
        let mut tbl = NeutralityTable::new("test");
        for (id, s) in entries {
            tbl.insert(id.to_string(), *s).unwrap();
        }
        tbl
    }

    fn bg(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn nfairr_query_examples() {
        let tbl = table(&[("a", 1.0), ("b", 0.0), ("c", 1.0), ("z", 0.0)]);
        let q = nfairr_query(&["a", "b", "c"], &tbl, &bg(&["a", "b", "c"]), t(3)).unwrap();
        assert!(close(q.fairr, 1.5, 1e-12));
        assert!(close(q.ifairr, 1.63093, 1e-5));
        assert!(close(q.nfairr, 0.91972, 1e-5));
        assert!(!q.zero_ideal);

        let ideal = nfairr_query(&["a", "c", "b"], &tbl, &bg(&["a", "b", "c"]), t(3)).unwrap();
        assert_eq!(ideal.nfairr, 1.0);

        let zero = table(&[("x", 0.0), ("y", 0.0)]);
        let q = nfairr_query(&["x", "y"], &zero, &bg(&["x", "y"]), t(10)).unwrap();
        assert_eq!(q.nfairr, 1.0);
        assert!(q.zero_ideal);

        let err = nfairr_query(&["a", "missing"], &tbl, &bg(&["a"]), t(3)).unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");

        // Neutral list over an all-biased pool cannot be normalized.
        assert!(nfairr_query(&["a"], &tbl, &bg(&["z"]), t(3)).is_err());
    }

    #[test]
    fn nfairr_run_aggregates_by_mean() {
        // q1: [1, 0.5] over pool {1, 1} -> (1 + 0.5 p2) / (1 + p2).
        let tbl = table(&[("a", 1.0), ("b", 0.5), ("c", 1.0), ("d", 1.0)]);
        let mut run = RankedRun::new("r");
        run.insert_ranked("q1", ["a", "b"]).unwrap();
        run.insert_ranked("q2", ["c", "d"]).unwrap();
        let mut background = BackgroundSet::new();
        background.insert("q1", ["a", "c"]).unwrap();
        background.insert("q2", ["c", "d"]).unwrap();
        let res = nfairr_run(&run, &tbl, &background, t(10)).unwrap();
        let p2 = discount(2);
        let q1 = (1.0 + 0.5 * p2) / (1.0 + p2);
        assert!(close(res.per_query["q1"].nfairr, q1, 1e-12));
        assert_eq!(res.per_query["q2"].nfairr, 1.0);
        assert!(close(res.aggregate, (q1 + 1.0) / 2.0, 1e-12));

        let mut single = RankedRun::new("r");
        single.insert_ranked("q1", ["a", "b"]).unwrap();
        let res1 = nfairr_run(&single, &tbl, &background, t(10)).unwrap();
        assert_eq!(res1.aggregate, res1.per_query["q1"].nfairr);

        assert!(nfairr_run(&RankedRun::new("empty"), &tbl, &background, t(10)).is_err());
        let mut orphan = RankedRun::new("r");
        orphan.insert_ranked("q9", ["a"]).unwrap();
        assert!(nfairr_run(&orphan, &tbl, &background, t(10)).is_err());
    }

    #[test]
    fn set_fairr_examples() {
        assert!(close(set_fairr(&[1.0, 0.0], t(2)).unwrap(), 0.81546, 1e-5));
        assert!(close(set_fairr(&[1.0, 1.0, 1.0], t(3)).unwrap(), 2.13093, 1e-5));
        assert!(close(set_fairr(&[0.4], t(1)).unwrap(), 0.4, 1e-15));
        assert!(set_fairr(&[], t(1)).is_err());
    }

    #[test]
    fn bruteforce_examples() {
        let bf = set_fairr_bruteforce(&[1.0, 0.0], t(2)).unwrap();
        assert!(close(bf, (1.0 + discount(2)) / 2.0, 1e-12));
        assert!(close(bf, set_fairr(&[1.0, 0.0], t(2)).unwrap(), 1e-9));
        let s = [0.2, 0.5, 0.9];
        assert!(close(
            set_fairr_bruteforce(&s, t(2)).unwrap(),
            set_fairr(&s, t(2)).unwrap(),
            1e-9
        ));
        assert!(close(set_fairr_bruteforce(&[0.7], t(4)).unwrap(), 0.7, 1e-15));
        assert!(set_fairr_bruteforce(&[0.1; 9], t(2)).is_err());
    }

    #[test]
    fn heap_visits_every_permutation_once() {
        let mut items = [0.0, 1.0, 2.0, 3.0];
        let mut seen = BTreeSet::new();
        heap_permutations(&mut items, 4, &mut |p| {
            seen.insert(p.iter().map(|x| *x as u8).collect::<Vec<_>>());
        });
        assert_eq!(seen.len(), 24);
    }

    #[test]
    fn nfairr_set_examples() {
        // IFaiRR of {1, 0} at t=2 puts the neutral document first: 1.0.
        assert!(close(nfairr_set(&[1.0, 0.0], &[1.0, 0.0], t(2)).unwrap(), 0.81546, 1e-5));
        assert!(close(nfairr_set(&[1.0, 1.0], &[1.0, 1.0], t(2)).unwrap(), 1.0, 1e-15));
        // A set more neutral than the background can exceed 1.
        assert!(nfairr_set(&[1.0, 1.0], &[1.0, 0.0], t(2)).unwrap() > 1.0);
        assert_eq!(nfairr_set(&[0.0], &[0.0, 0.0], t(2)).unwrap(), 1.0);
    }

    #[test]
    fn run_rejects_invalid_lists() {
        let mut run = RankedRun::new("r");
        let doc = |id: &str, s: f64| ScoredDoc {
            doc_id: id.into(),
            score: s,
        };
        assert!(run.insert("q", vec![doc("a", 1.0), doc("a", 0.5)]).is_err());
        assert!(run.insert("q", vec![doc("a", 1.0), doc("b", 2.0)]).is_err());
        run.insert("q", vec![doc("a", 1.0), doc("b", 1.0)]).unwrap();
        assert!(run.insert("q", vec![]).is_err());
    }

    fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..=1.0, 1..=max)
    }

    proptest! {
        #[test]
        fn closed_form_matches_enumeration(s in scores(6), t_raw in 1usize..8) {
            let c = t(t_raw);
            let a = set_fairr(&s, c).unwrap();
            let b = set_fairr_bruteforce(&s, c).unwrap();
            prop_assert!(close(a, b, 1e-9), "{a} vs {b}");
        }

        #[test]
        fn ideal_dominates_every_ordering(s in scores(6), t_raw in 1usize..8, seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm = s.clone();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(ifairr(&s, t(t_raw)).unwrap() + 1e-12 >= fairr(&perm, t(t_raw)));
        }

        #[test]
        fn fairr_is_monotone(s in scores(12), idx in 0usize..12, bump in 0.0f64..1.0, t_raw in 1usize..12) {
            let i = idx % s.len();
            let mut raised = s.clone();
            raised[i] = (raised[i] + bump).min(1.0);
            prop_assert!(fairr(&raised, t(t_raw)) >= fairr(&s, t(t_raw)));
        }

        #[test]
        fn set_fairr_is_permutation_invariant(s in scores(10), t_raw in 1usize..12) {
            let mut rev = s.clone();
            rev.reverse();
            prop_assert!(close(set_fairr(&s, t(t_raw)).unwrap(), set_fairr(&rev, t(t_raw)).unwrap(), 1e-12));
        }

        #[test]
        fn nfairr_of_background_list_is_bounded(s in scores(15), take in 1usize..15, t_raw in 1usize..12) {
            let ids: Vec<String> = (0..s.len()).map(|i| format!("d{i}")).collect();
            let mut tbl = NeutralityTable::new("p");
            for (id, w) in ids.iter().zip(&s) {
                tbl.insert(id.clone(), *w).unwrap();
            }
            let background: BTreeSet<String> = ids.iter().cloned().collect();
            let list = &ids[..take.min(ids.len())];
            let q = nfairr_query(list, &tbl, &background, t(t_raw)).unwrap();
            prop_assert!(q.nfairr >= 0.0 && q.nfairr <= 1.0 + 1e-12);
        }

        #[test]
        fn set_nfairr_of_subset_is_at_most_one(
            s in scores(8),
            mask in proptest::collection::vec(any::<bool>(), 8),
            t_raw in 1usize..10,
        ) {
            let mut subset: Vec<f64> = s.iter().zip(&mask).filter(|(_, m)| **m).map(|(w, _)| *w).collect();
            if subset.is_empty() {
                subset.push(s[0]);
            }
            prop_assert!(nfairr_set(&subset, &s, t(t_raw)).unwrap() <= 1.0 + 1e-12);
        }
    }
}
