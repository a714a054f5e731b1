//! MRR, NDCG and Recall of two systems over the same queries, and a paired
//! t-test on their per-query NDCG.

use fairr::fairness::{Cutoff, RankedRun};
use fairr::utility::{evaluate_run, paired_ttest, Gain, Qrels, UtilityConfig};

fn main() -> fairr::Result<()> {
    let mut qrels = Qrels::new();
    let mut a = RankedRun::new("a");
    let mut b = RankedRun::new("b");
    for q in 0..8 {
        let qid = format!("q{q}");
        let docs: Vec<String> = (0..6).map(|d| format!("q{q}d{d}")).collect();
        qrels.insert(&qid, &docs[q % 6], 2);
        qrels.insert(&qid, &docs[(q + 3) % 6], 1);
        a.insert_ranked(qid.clone(), docs.iter())?;
        b.insert_ranked(qid, docs.iter().rev())?;
    }
    let cfg = UtilityConfig {
        ndcg_cutoff: Cutoff::new(5)?,
        gain: Gain::Exponential,
        ..UtilityConfig::default()
    };
    let ra = evaluate_run(&a, &qrels, &cfg)?;
    let rb = evaluate_run(&b, &qrels, &cfg)?;
    for (tag, r) in [("a", &ra), ("b", &rb)] {
        println!("{tag}: MRR {:.4}  NDCG@5 {:.4}  Recall {:.4}", r.mrr, r.ndcg, r.recall);
    }
    let x: Vec<f64> = ra.per_query.values().map(|q| q.ndcg).collect();
    let y: Vec<f64> = rb.per_query.values().map(|q| q.ndcg).collect();
    let t = paired_ttest(&x, &y)?;
    println!("paired t = {:.3}, df = {}, p = {:.4}, significant at 0.05: {}", t.t, t.df, t.p, t.significant(0.05));
    Ok(())
}
