//! Trains the toy adversarial ranker over a λ grid and compares every
//! checkpoint with the utility-only model.
//!
//! Pass a TOML config path to override the defaults.

use fairr::lexicon::AttributeConfig;
use fairr::sandbox::{run_experiment, SandboxConfig};

fn main() -> fairr::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => SandboxConfig::from_file(path.as_ref())?,
        None => SandboxConfig::default(),
    };
    let attrs = AttributeConfig::default_gender();
    let started = std::time::Instant::now();
    let r = run_experiment(&cfg, &attrs)?;
    println!(
        "corpus: {} train pairs, {} held-out pairs, label rate {:.3}",
        r.corpus.train.len(),
        r.corpus.heldout.len(),
        r.corpus.label_rate()
    );
    println!("{:<20} {:>7} {:>7} {:>7}", "variation", "ndcg", "nfairr", "probe");
    for v in std::iter::once(&r.utility).chain(&r.variations) {
        println!("{:<20} {:>7.4} {:>7.4} {:>7.4}", v.id, v.ndcg, v.nfairr, v.probe_accuracy);
    }
    println!("finished in {:.1?}", started.elapsed());
    Ok(())
}
