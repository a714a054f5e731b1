//! Compares two rankings of the same candidates by NFaiRR: one that puts
//! gender-neutral passages on top and one that buries them.

use fairr::fairness::{nfairr_run, BackgroundSet, Cutoff, RankedRun};
use fairr::lexicon::AttributeConfig;
use fairr::neutrality::score_corpus;

fn main() -> fairr::Result<()> {
    let docs = [
        ("d1", "the river flooded the lower town"),
        ("d2", "he rebuilt his house after the flood"),
        ("d3", "volunteers cleared the roads"),
        ("d4", "the mayor said she would ask for aid"),
        ("d5", "the king visited his flooded estates"),
        ("d6", "insurance claims rose sharply"),
    ];
    let table = score_corpus(docs, &AttributeConfig::default_gender())?;

    let mut background = BackgroundSet::new();
    background.insert("flood", docs.iter().map(|d| d.0))?;

    let cutoff = Cutoff::new(4)?;
    for (tag, order) in [
        ("neutral-first", ["d1", "d3", "d6", "d4", "d2", "d5"]),
        ("biased-first", ["d5", "d2", "d4", "d1", "d3", "d6"]),
    ] {
        let mut run = RankedRun::new(tag);
        run.insert_ranked("flood", order)?;
        let r = nfairr_run(&run, &table, &background, cutoff)?;
        let q = &r.per_query["flood"];
        println!(
            "{tag:<14} FaiRR {:.4}  IFaiRR {:.4}  NFaiRR@{} {:.4}",
            q.fairr,
            q.ifairr,
            cutoff.get(),
            q.nfairr
        );
    }
    Ok(())
}
