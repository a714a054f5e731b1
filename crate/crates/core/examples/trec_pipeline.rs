//! Full evaluation from TREC-style files: scores a collection, reads a run,
//! qrels and queries, and writes a per-query report.
//!
//! Usage: trec_pipeline <dir> with collection.tsv, queries.tsv, run.txt and
//! qrels.txt. Defaults to the bundled toy fixture.

use std::path::PathBuf;

use fairr::cli::{evaluate, EvalInputs};
use fairr::fairness::Cutoff;
use fairr::ingest::{self, derive_background, parse_qrels, parse_queries, parse_run, write_report, EvalSettings, ReportFormat};
use fairr::lexicon::AttributeConfig;
use fairr::neutrality::{score_collection, NeutralityTable};

fn main() -> fairr::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy"));
    let attrs = AttributeConfig::default_gender();

    let collection = ingest::open(&dir.join("collection.tsv"))?;
    let mut table_bytes = Vec::new();
    let stats = score_collection(collection, "collection.tsv", &attrs, &mut table_bytes)?;
    eprintln!("scored {} documents", stats.documents);
    let table = NeutralityTable::read_tsv(table_bytes.as_slice(), "neutrality")?;

    let run = parse_run(&dir.join("run.txt"))?.log_warnings();
    let qrels = parse_qrels(&dir.join("qrels.txt"))?.log_warnings();
    let queries = parse_queries(&dir.join("queries.tsv"))?;
    let settings = EvalSettings {
        fairness_cutoff: Cutoff::new(3)?,
        set_fairness: true,
        ..EvalSettings::default()
    };
    let background = derive_background(&run, settings.background_depth)?.value;
    let report = evaluate(
        &EvalInputs {
            run: &run,
            background: &background,
            table: &table,
            qrels: &qrels,
            queries: &queries,
        },
        &settings,
    )?;
    write_report(&report, ReportFormat::Tsv, std::io::stdout().lock())?;
    eprintln!("tool {}", ingest::TOOL_VERSION);
    Ok(())
}
