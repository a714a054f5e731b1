//! Picks among model variations by F-beta over normalized NDCG and NFaiRR
//! gains, with cross-validated selection, and shows the qrels oracle that
//! bounds how much utility a reranking could add.

use std::collections::BTreeMap;

use fairr::fairness::RankedRun;
use fairr::tradeoff::{qrels_oracle_rerank, select_variation, VariationScore};
use fairr::utility::{evaluate_run, Qrels, UtilityConfig};

fn main() -> fairr::Result<()> {
    let profiles = [("accurate", 0.62, 0.71), ("balanced", 0.58, 0.80), ("fair", 0.49, 0.88)];
    let candidates: Vec<VariationScore> = profiles
        .iter()
        .enumerate()
        .map(|(v, &(id, ndcg, nfairr))| {
            let per_query: BTreeMap<String, (f64, f64)> = (0..12)
                .map(|q| {
                    let wobble = ((q * 7 + v * 3) % 5) as f64 * 0.01;
                    (format!("q{q:02}"), (ndcg + wobble, nfairr - wobble))
                })
                .collect();
            VariationScore::new(id, per_query)
        })
        .collect::<fairr::Result<_>>()?;
    for beta in [0.0, 0.5, 1.0, 2.0, 1e6] {
        let one = select_variation(&candidates, beta, 1, None)?;
        let cv = select_variation(&candidates, beta, 4, Some(7))?;
        let picks: Vec<&str> = cv.folds.iter().map(|f| f.variation.as_str()).collect();
        println!(
            "beta {beta:>7}: all queries -> {:<9} 4-fold picks {picks:?}, held-out NDCG {:.4} NFaiRR {:.4}",
            one.folds[0].variation, cv.mean_ndcg, cv.mean_nfairr
        );
    }

    let mut run = RankedRun::new("bm25");
    let mut qrels = Qrels::new();
    for q in 0..4 {
        let qid = format!("q{q}");
        run.insert_ranked(qid.clone(), (0..8).map(|d| format!("d{d}")))?;
        qrels.insert(&qid, &format!("d{}", 7 - q), 1);
    }
    let oracle = qrels_oracle_rerank(&run, &qrels, 1);
    let cfg = UtilityConfig::default();
    let (before, after) = (evaluate_run(&run, &qrels, &cfg)?, evaluate_run(&oracle, &qrels, &cfg)?);
    println!("qrels oracle: MRR {:.4} -> {:.4}, NDCG {:.4} -> {:.4}", before.mrr, after.mrr, before.ndcg, after.ndcg);
    Ok(())
}
