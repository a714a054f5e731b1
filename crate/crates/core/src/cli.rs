//! The `fairr` command line: argument definitions, the evaluation pipeline
//! they drive, and process exit codes (0 success, 1 runtime failure, 2
//! usage or validation error).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::fairness::{nfairr_run, nfairr_set_query, BackgroundSet, Cutoff, RankedRun};
use crate::ingest::{
    self, derive_background, Aggregate, EvalReport, EvalSettings, Flag, Metric, QuerySet, ReportFormat, ReportRow,
    Significance, TOOL_VERSION,
};
use crate::lexicon::{build_name_lists, parse_name_records, AttributeConfig};
use crate::neutrality::{score_collection, NeutralityTable};
use crate::sandbox::{run_experiment, write_outputs, SandboxConfig};
use crate::tradeoff::{qrels_oracle_rerank, select_variation, TradeoffSelection, VariationScore};
use crate::utility::{evaluate_query, paired_ttest, Gain, Qrels, UtilityConfig};

const FORMATS_HELP: &str = "\
File formats:
  collection   doc-id<TAB>text, UTF-8, one document per line
  queries      qid<TAB>text
  run          TREC: qid Q0 docid rank score tag (whitespace separated)
  qrels        TREC: qid iter docid grade (grade >= 0)
  attributes   TOML: tau = 1, then [[members]] with name, wordlist (path
               relative to the TOML file, one word per line, # comments)
               and optional target (all members or none; default uniform)
  neutrality   header #fairr-neutrality<TAB>v1<TAB>fingerprint=<hex>, then
               doc-id<TAB>score
  manifest     variation-id<TAB>run-path, # comments, paths relative to the
               manifest
  report       TSV (# metadata lines, one row per query, #aggregate and
               #significance lines) or JSON; both read back by --baseline
  sandbox      TOML with optional [corpus] and [train] tables";

#[derive(Debug, Parser)]
#[command(name = "fairr", version, about = "Fairness and utility evaluation of ranked retrieval results", after_help = FORMATS_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every document of a collection for neutrality.
    ScoreNeutrality(ScoreArgs),
    /// Per-query and aggregate NFaiRR, MRR, NDCG and Recall of a run.
    Eval(EvalArgs),
    /// Select among model variations by F-beta over NDCG and NFaiRR gains.
    Tradeoff(TradeoffArgs),
    /// Train the synthetic adversarial ranker and write its variations.
    Sandbox(SandboxArgs),
    /// Build gendered name lists from `name,F|M,count` records.
    BuildNames(NamesArgs),
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    /// Attribute TOML; defaults to the built-in binary gender lists.
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    /// Overrides the config's tau.
    #[arg(long)]
    pub tau: Option<u32>,
}

impl AttributeArgs {
    pub fn load(&self) -> Result<AttributeConfig> {
        let cfg = match &self.attributes {
            Some(p) => AttributeConfig::from_file(existing(p)?)?,
            None => AttributeConfig::default_gender(),
        };
        Ok(match self.tau {
            Some(t) => cfg.with_tau(t),
            None => cfg,
        })
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub collection: PathBuf,
    #[command(flatten)]
    pub attrs: AttributeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GainArg {
    Linear,
    Exponential,
}

impl From<GainArg> for Gain {
    fn from(g: GainArg) -> Self {
        match g {
            GainArg::Linear => Gain::Linear,
            GainArg::Exponential => Gain::Exponential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Tsv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tsv => ReportFormat::Tsv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

/// Inputs and settings shared by `eval` and `tradeoff`.
#[derive(Debug, Args)]
pub struct EvalCommon {
    #[arg(long)]
    pub neutrality: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// First-stage run whose top documents form each query's background set.
    #[arg(long)]
    pub background_run: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub background_depth: usize,
    /// Checks the neutrality table was scored with this attribute config.
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    /// Fairness cutoff t.
    #[arg(long, default_value_t = 10)]
    pub cutoff: usize,
    #[arg(long, default_value_t = 10)]
    pub mrr_cutoff: usize,
    #[arg(long, default_value_t = 10)]
    pub ndcg_cutoff: usize,
    #[arg(long, default_value_t = 10)]
    pub recall_cutoff: usize,
    /// Minimum grade counted as relevant.
    #[arg(long, default_value_t = 1)]
    pub rel_threshold: u32,
    #[arg(long, value_enum, default_value_t = GainArg::Linear)]
    pub gain: GainArg,
    /// Move judged-relevant documents to the top of every list first.
    #[arg(long)]
    pub qrels_oracle: bool,
}

impl EvalCommon {
    pub fn settings(&self, set_fairness: bool) -> Result<EvalSettings> {
        let cut = |name: &str, t: usize| Cutoff::new(t).map_err(|_| Error::Invalid(format!("--{name} must be at least 1")));
        if self.background_depth == 0 {
            return Err(Error::Invalid("--background-depth must be at least 1".into()));
        }
        Ok(EvalSettings {
            fairness_cutoff: cut("cutoff", self.cutoff)?,
            background_depth: self.background_depth,
            utility: UtilityConfig {
                mrr_cutoff: cut("mrr-cutoff", self.mrr_cutoff)?,
                ndcg_cutoff: cut("ndcg-cutoff", self.ndcg_cutoff)?,
                recall_cutoff: cut("recall-cutoff", self.recall_cutoff)?,
                rel_threshold: self.rel_threshold,
                gain: self.gain.into(),
            },
            qrels_oracle: self.qrels_oracle,
            set_fairness,
        })
    }

    fn load(&self) -> Result<Loaded> {
        let table = NeutralityTable::read_tsv(ingest::open(existing(&self.neutrality)?)?, &label(&self.neutrality))?;
        if let Some(p) = &self.attributes {
            table.check_config(&AttributeConfig::from_file(existing(p)?)?)?;
        }
        let qrels = ingest::parse_qrels(existing(&self.qrels)?)?.log_warnings();
        let queries = ingest::parse_queries(existing(&self.queries)?)?;
        let background_run = match &self.background_run {
            Some(p) => Some(load_run(existing(p)?)?),
            None => None,
        };
        Ok(Loaded {
            table,
            qrels,
            queries,
            background_run,
        })
    }
}

struct Loaded {
    table: NeutralityTable,
    qrels: Qrels,
    queries: QuerySet,
    background_run: Option<RankedRun>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub common: EvalCommon,
    /// Also report ranker-agnostic NFaiRR of each full retrieved set.
    #[arg(long)]
    pub set_fairness: bool,
    /// Earlier report to compare against with paired t-tests.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
    pub format: FormatArg,
    /// Report path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TradeoffArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub common: EvalCommon,
    /// One selection per value.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub folds: usize,
    /// Shuffles queries before fold assignment.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
    pub format: FormatArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SandboxArgs {
    /// Sandbox TOML; defaults apply to anything omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub attrs: AttributeArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct NamesArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub min_ratio: f64,
    /// Writes female.txt and male.txt here.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn label(p: &Path) -> String {
    p.display().to_string()
}

fn existing(p: &Path) -> Result<&Path> {
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::Invalid(format!("{} does not exist", p.display())))
    }
}

/// Reads a run, logging any parser warnings.
pub fn load_run(path: &Path) -> Result<RankedRun> {
    Ok(ingest::parse_run(path)?.log_warnings())
}

/// Aligned inputs of one evaluation.
pub struct EvalInputs<'a> {
    pub run: &'a RankedRun,
    pub background: &'a BackgroundSet,
    pub table: &'a NeutralityTable,
    pub qrels: &'a Qrels,
    pub queries: &'a QuerySet,
}

/// Evaluates a run on the queries of the query set. Queries missing from
/// the run are listed as unmatched; run queries outside the set are ignored.
pub fn evaluate(inputs: &EvalInputs, settings: &EvalSettings) -> Result<EvalReport> {
    let mut run = inputs.run.clone();
    let dropped = run.query_ids().filter(|q| !inputs.queries.contains(q)).count();
    if dropped > 0 {
        log::warn!("{dropped} run queries are not in query set {:?}; ignored", inputs.queries.tag);
    }
    run.retain(|q| inputs.queries.contains(q));
    if settings.qrels_oracle {
        run = qrels_oracle_rerank(&run, inputs.qrels, settings.utility.rel_threshold);
    }
    let unmatched: Vec<String> = inputs
        .queries
        .ids()
        .filter(|q| run.get(q).is_none())
        .map(String::from)
        .collect();
    if run.is_empty() {
        return Err(Error::Data(format!(
            "run {:?} shares no queries with query set {:?}",
            inputs.run.tag(),
            inputs.queries.tag
        )));
    }
    let fairness = nfairr_run(&run, inputs.table, inputs.background, settings.fairness_cutoff)?;
    let mut rows = Vec::with_capacity(run.len());
    for (qid, docs) in run.iter() {
        let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        let f = fairness.per_query[qid];
        let u = evaluate_query(&ids, inputs.qrels, qid, &settings.utility);
        let set_nfairr = if settings.set_fairness && !ids.is_empty() {
            let bg = inputs.background.get(qid).expect("checked by nfairr_run");
            Some(nfairr_set_query(&ids, inputs.table, bg, settings.fairness_cutoff)?)
        } else {
            None
        };
        let mut flags = Vec::new();
        if f.zero_ideal {
            flags.push(Flag::ZeroIdealFairness);
        }
        if u.no_judgments {
            flags.push(Flag::NoJudgments);
        } else if u.no_relevant {
            flags.push(Flag::NoRelevant);
        }
        rows.push(ReportRow {
            query_id: qid.to_string(),
            fairr: f.fairr,
            ifairr: f.ifairr,
            nfairr: f.nfairr,
            set_nfairr,
            mrr: u.mrr,
            ndcg: u.ndcg,
            recall: u.recall,
            flags,
        });
    }
    Ok(EvalReport {
        tool_version: TOOL_VERSION.into(),
        ranker: run.tag().to_string(),
        query_set: inputs.queries.tag.clone(),
        fingerprint: inputs.table.fingerprint().to_string(),
        settings: *settings,
        aggregate: Aggregate::from_rows(&rows),
        rows,
        significance: Vec::new(),
        unmatched_queries: unmatched,
    })
}

/// Adds a paired t-test per metric over the queries both reports share.
pub fn add_significance(report: &mut EvalReport, baseline: &EvalReport, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let base: BTreeMap<&str, &ReportRow> = baseline.rows.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let shared: Vec<(&ReportRow, &ReportRow)> = report
        .rows
        .iter()
        .filter_map(|r| base.get(r.query_id.as_str()).map(|b| (r, *b)))
        .collect();
    if shared.len() < 2 {
        return Err(Error::Data(format!(
            "report and baseline {:?} share {} queries; at least 2 are needed",
            baseline.ranker,
            shared.len()
        )));
    }
    let mut out = Vec::new();
    for metric in Metric::ALL {
        let pairs: Option<Vec<(f64, f64)>> = shared
            .iter()
            .map(|(r, b)| Some((metric.of(r)?, metric.of(b)?)))
            .collect();
        let Some(pairs) = pairs else { continue };
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let test = paired_ttest(&a, &b)?;
        out.push(Significance {
            baseline: baseline.ranker.clone(),
            metric,
            significant: test.significant(alpha),
            test,
        });
    }
    report.significance = out;
    Ok(())
}

fn background_for(loaded: &Loaded, run: &RankedRun, depth: usize) -> Result<BackgroundSet> {
    let source = loaded.background_run.as_ref().unwrap_or(run);
    let mut source = source.clone();
    source.retain(|q| loaded.queries.contains(q));
    Ok(derive_background(&source, depth)?.log_warnings())
}

fn write_out(out: Option<&Path>, text: &[u8]) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = ingest::create(p)?;
            w.write_all(text).and_then(|_| w.flush()).map_err(|e| Error::io(p, e))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text)
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::Io {
                    context: "stdout".into(),
                    source: e,
                })
        }
    }
}

pub fn cmd_score_neutrality(args: &ScoreArgs) -> Result<()> {
    let cfg = args.attrs.load()?;
    let input = ingest::open(existing(&args.collection)?)?;
    let out = ingest::create(&args.out)?;
    let stats = score_collection(input, &label(&args.collection), &cfg, out)?;
    eprintln!(
        "scored {} documents in {:.2?} ({:.0} docs/s)",
        stats.documents,
        stats.elapsed,
        stats.docs_per_second()
    );
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let settings = args.common.settings(args.set_fairness)?;
    let run = load_run(existing(&args.run)?)?;
    let baseline = match &args.baseline {
        Some(p) => Some(ingest::load_report(existing(p)?)?),
        None => None,
    };
    let loaded = args.common.load()?;
    let background = background_for(&loaded, &run, settings.background_depth)?;
    let inputs = EvalInputs {
        run: &run,
        background: &background,
        table: &loaded.table,
        qrels: &loaded.qrels,
        queries: &loaded.queries,
    };
    let mut report = evaluate(&inputs, &settings)?;
    if !report.unmatched_queries.is_empty() {
        log::warn!("{} queries have no ranked list in the run", report.unmatched_queries.len());
    }
    if let Some(b) = &baseline {
        add_significance(&mut report, b, args.alpha)?;
    }
    let mut buf = Vec::new();
    ingest::write_report(&report, args.format.into(), &mut buf)?;
    write_out(args.out.as_deref(), &buf)
}

/// Evaluates every manifest run, returning candidates aligned on the
/// queries all runs cover.
pub fn score_variations(
    runs: &[(String, RankedRun)],
    background: &BackgroundSet,
    table: &NeutralityTable,
    qrels: &Qrels,
    queries: &QuerySet,
    settings: &EvalSettings,
) -> Result<Vec<VariationScore>> {
    let mut scores = Vec::with_capacity(runs.len());
    for (id, run) in runs {
        let inputs = EvalInputs {
            run,
            background,
            table,
            qrels,
            queries,
        };
        scores.push(VariationScore::from_report(id.clone(), &evaluate(&inputs, settings)?)?);
    }
    let common: BTreeSet<String> = scores
        .iter()
        .map(|s| s.per_query.keys().cloned().collect::<BTreeSet<_>>())
        .reduce(|a, b| a.intersection(&b).cloned().collect())
        .unwrap_or_default();
    if common.is_empty() {
        return Err(Error::Data("manifest runs share no queries".into()));
    }
    scores
        .into_iter()
        .map(|s| {
            let dropped = s.per_query.len() - common.len();
            if dropped > 0 {
                log::warn!("variation {}: {dropped} queries not covered by every run; ignored", s.id);
            }
            let per_query = s.per_query.into_iter().filter(|(q, _)| common.contains(q)).collect();
            VariationScore::new(s.id, per_query)
        })
        .collect()
}

/// Tab-separated selections: one row per β.
pub fn format_selections(selections: &[TradeoffSelection], folds: usize, seed: Option<u64>) -> String {
    let mut s = String::from("#fairr-tradeoff\tv1\n");
    let _ = writeln!(s, "#folds\t{folds}");
    let _ = writeln!(s, "#seed\t{}", seed.map_or_else(|| "-".into(), |v| v.to_string()));
    s.push_str("beta\tvariation\tmean_ndcg\tmean_nfairr\tfold_picks\n");
    for sel in selections {
        let picks: Vec<&str> = sel.folds.iter().map(|f| f.variation.as_str()).collect();
        // The most frequent pick, earliest fold first on ties.
        let mut counts: Vec<(&str, usize)> = Vec::new();
        for p in &picks {
            match counts.iter_mut().find(|(v, _)| v == p) {
                Some(c) => c.1 += 1,
                None => counts.push((p, 1)),
            }
        }
        let chosen = counts.iter().fold(("", 0), |best, c| if c.1 > best.1 { *c } else { best }).0;
        let _ = writeln!(
            s,
            "{}\t{chosen}\t{}\t{}\t{}",
            sel.beta,
            sel.mean_ndcg,
            sel.mean_nfairr,
            picks.join(",")
        );
    }
    s
}

pub fn cmd_tradeoff(args: &TradeoffArgs) -> Result<()> {
    if args.beta.is_empty() {
        return Err(Error::Invalid("at least one --beta is required".into()));
    }
    if let Some(b) = args.beta.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(Error::Invalid(format!("--beta must be finite and >= 0, got {b}")));
    }
    if args.folds == 0 {
        return Err(Error::Invalid("--folds must be at least 1".into()));
    }
    let settings = args.common.settings(false)?;
    let manifest = ingest::parse_manifest(existing(&args.manifest)?)?;
    let runs = manifest
        .iter()
        .map(|(id, p)| Ok((id.clone(), load_run(existing(p)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let loaded = args.common.load()?;
    let background = background_for(&loaded, &runs[0].1, settings.background_depth)?;
    if loaded.background_run.is_none() && runs.len() > 1 {
        log::warn!("no --background-run; using the top of the first manifest run for every variation");
    }
    let candidates = score_variations(&runs, &background, &loaded.table, &loaded.qrels, &loaded.queries, &settings)?;
    let selections = args
        .beta
        .iter()
        .map(|&b| select_variation(&candidates, b, args.folds, args.seed))
        .collect::<Result<Vec<_>>>()?;
    let text = match args.format {
        FormatArg::Tsv => format_selections(&selections, args.folds, args.seed),
        FormatArg::Json => {
            serde_json::to_string_pretty(&selections).map_err(|e| Error::Data(e.to_string()))? + "\n"
        }
    };
    write_out(args.out.as_deref(), text.as_bytes())
}

pub fn cmd_sandbox(args: &SandboxArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => SandboxConfig::from_file(existing(p)?)?,
        None => SandboxConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let attrs = args.attrs.load()?;
    let result = run_experiment(&cfg, &attrs)?;
    let out = write_outputs(&result, &cfg, &args.out_dir)?;
    let u = &result.utility;
    eprintln!(
        "utility-only: ndcg {:.4} nfairr {:.4} probe {:.4}",
        u.ndcg, u.nfairr, u.probe_accuracy
    );
    for lambda in &cfg.train.lambdas {
        if let Some(v) = result.last_checkpoint(*lambda) {
            eprintln!(
                "lambda {lambda}: ndcg {:.4} nfairr {:.4} probe {:.4}",
                v.ndcg, v.nfairr, v.probe_accuracy
            );
        }
    }
    eprintln!("manifest: {}", out.manifest.display());
    Ok(())
}

pub fn cmd_build_names(args: &NamesArgs) -> Result<()> {
    let path = existing(&args.records)?;
    let records = parse_name_records(ingest::open(path)?, &label(path))?;
    let lists = build_name_lists(&records, args.min_ratio)?;
    for (name, words) in [("female.txt", &lists.female), ("male.txt", &lists.male)] {
        let p = args.out_dir.join(name);
        let mut text = String::new();
        for w in words {
            text.push_str(w);
            text.push('\n');
        }
        write_out(Some(&p), text.as_bytes())?;
    }
    eprintln!("{} names per list", lists.female.len());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::ScoreNeutrality(a) => cmd_score_neutrality(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Tradeoff(a) => cmd_tradeoff(a),
        Command::Sandbox(a) => cmd_sandbox(a),
        Command::BuildNames(a) => cmd_build_names(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
