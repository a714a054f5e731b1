//! Readers and writers for every on-disk artifact: TREC runs and qrels,
//! MSMARCO-style TSV queries and collections, candidate manifests, and
//! evaluation reports.
//!
//! All text inputs must be UTF-8. Lines are read one at a time, so memory is
//! bounded by the parsed value, never by the raw file.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{BackgroundSet, Cutoff, RankedRun, ScoredDoc};
use crate::utility::{Gain, Qrels, TTest, UtilityConfig};

/// Version string written into reports and checkpoints.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A parsed value plus the non-fatal problems noticed while parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Parsed<T> {
    /// Logs the warnings and returns the value.
    pub fn log_warnings(self) -> T {
        for w in &self.warnings {
            log::warn!("{w}");
        }
        self.value
    }
}

/// Opens a file for buffered reading.
pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Creates a file for buffered writing, making parent directories as needed.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Calls `f(line_number, line)` for every line, 1-based, without the line terminator.
///
/// Invalid UTF-8 aborts with the absolute byte offset of the first bad byte.
pub fn read_lines<R, F>(mut reader: R, source_name: &str, mut f: F) -> Result<()>
where
    R: BufRead,
    F: FnMut(usize, &str) -> Result<()>,
{
    let mut buf = Vec::with_capacity(1024);
    let mut offset = 0u64;
    let mut lineno = 0usize;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::Io {
            context: source_name.to_string(),
            source: e,
        })?;
        if n == 0 {
            return Ok(());
        }
        lineno += 1;
        let mut end = buf.len();
        if end > 0 && buf[end - 1] == b'\n' {
            end -= 1;
            if end > 0 && buf[end - 1] == b'\r' {
                end -= 1;
            }
        }
        let line = std::str::from_utf8(&buf[..end]).map_err(|e| Error::Encoding {
            source_name: source_name.to_string(),
            offset: offset + e.valid_up_to() as u64,
        })?;
        f(lineno, line)?;
        offset += n as u64;
    }
}

/// Splits `id<TAB>rest` at the first tab.
pub fn split_tsv_pair(line: &str) -> Option<(&str, &str)> {
    let (id, rest) = line.split_once('\t')?;
    let id = id.trim();
    (!id.is_empty()).then_some((id, rest))
}

fn label(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------- runs

/// Reads a TREC run: `qid Q0 docid rank score tag`, whitespace separated.
///
/// Each query is ordered by descending score with the rank column breaking
/// ties. Lines that were not already in that order produce a warning.
pub fn read_run<R: BufRead>(reader: R, source_name: &str) -> Result<Parsed<RankedRun>> {
    struct Line {
        doc: String,
        rank: u64,
        score: f64,
    }
    let mut per_query: IndexMap<String, Vec<Line>> = IndexMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut tags: BTreeSet<String> = BTreeSet::new();
    let mut first_tag: Option<String> = None;

    read_lines(reader, source_name, |lineno, line| {
        if line.trim().is_empty() {
            return Ok(());
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected 6 columns (qid Q0 docid rank score tag), got {}", cols.len()),
            ));
        }
        let rank: u64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(source_name, lineno, format!("bad rank {:?}", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::parse(source_name, lineno, format!("bad score {:?}", cols[4])))?;
        if !seen.insert((cols[0].to_string(), cols[2].to_string())) {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("document {} listed twice for query {}", cols[2], cols[0]),
            ));
        }
        if first_tag.is_none() {
            first_tag = Some(cols[5].to_string());
        }
        tags.insert(cols[5].to_string());
        per_query.entry(cols[0].to_string()).or_default().push(Line {
            doc: cols[2].to_string(),
            rank,
            score,
        });
        Ok(())
    })?;

    let mut warnings = Vec::new();
    if tags.len() > 1 {
        warnings.push(format!(
            "{source_name}: {} distinct run tags; using {:?}",
            tags.len(),
            first_tag.as_deref().unwrap_or_default()
        ));
    }
    let mut run = RankedRun::new(first_tag.unwrap_or_default());
    let mut reordered = Vec::new();
    for (qid, mut lines) in per_query {
        let in_order = lines.windows(2).all(|w| {
            w[0].score > w[1].score || (w[0].score == w[1].score && w[0].rank <= w[1].rank)
        });
        if !in_order {
            lines.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.rank.cmp(&b.rank)));
            reordered.push(qid.clone());
        }
        let docs = lines
            .into_iter()
            .map(|l| ScoredDoc {
                doc_id: l.doc,
                score: l.score,
            })
            .collect();
        run.insert(qid, docs)?;
    }
    if !reordered.is_empty() {
        warnings.push(format!(
            "{source_name}: ranks out of order for {} queries ({}); reordered by score",
            reordered.len(),
            preview(&reordered)
        ));
    }
    Ok(Parsed {
        value: run,
        warnings,
    })
}

fn preview(ids: &[String]) -> String {
    const SHOW: usize = 5;
    let mut s = ids.iter().take(SHOW).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOW {
        let _ = write!(s, ", ... {} more", ids.len() - SHOW);
    }
    s
}

pub fn parse_run(path: &Path) -> Result<Parsed<RankedRun>> {
    read_run(open(path)?, &label(path))
}

/// Writes a run in TREC format, ranks starting at 1.
pub fn write_run<W: Write>(run: &RankedRun, mut w: W) -> std::io::Result<()> {
    let tag = if run.tag().is_empty() { "run" } else { run.tag() };
    for (qid, docs) in run.iter() {
        for (i, d) in docs.iter().enumerate() {
            writeln!(w, "{qid} Q0 {} {} {} {tag}", d.doc_id, i + 1, d.score)?;
        }
    }
    w.flush()
}

pub fn save_run(run: &RankedRun, path: &Path) -> Result<()> {
    write_run(run, create(path)?).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- qrels

/// Reads TREC qrels: `qid iter docid grade`. A repeated pair keeps the last
/// grade and produces a warning.
pub fn read_qrels<R: BufRead>(reader: R, source_name: &str) -> Result<Parsed<Qrels>> {
    let mut qrels = Qrels::new();
    let mut warnings = Vec::new();
    read_lines(reader, source_name, |lineno, line| {
        if line.trim().is_empty() {
            return Ok(());
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected 4 columns (qid 0 docid grade), got {}", cols.len()),
            ));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(source_name, lineno, format!("bad grade {:?}", cols[3])))?;
        let grade = u32::try_from(grade).map_err(|_| {
            Error::parse(source_name, lineno, format!("grade {grade} must be a non-negative integer"))
        })?;
        if let Some(prev) = qrels.insert(cols[0], cols[2], grade) {
            warnings.push(format!(
                "{source_name}:{lineno}: {} {} judged again ({prev} -> {grade}); keeping the last grade",
                cols[0], cols[2]
            ));
        }
        Ok(())
    })?;
    Ok(Parsed {
        value: qrels,
        warnings,
    })
}

pub fn parse_qrels(path: &Path) -> Result<Parsed<Qrels>> {
    read_qrels(open(path)?, &label(path))
}

pub fn write_qrels<W: Write>(qrels: &Qrels, mut w: W) -> std::io::Result<()> {
    for qid in qrels.query_ids() {
        let judged: BTreeMap<_, _> = qrels.judgments(qid).into_iter().flatten().collect();
        for (doc, grade) in judged {
            writeln!(w, "{qid} 0 {doc} {grade}")?;
        }
    }
    w.flush()
}

// ---------------------------------------------------------------- queries

/// Query texts by id, tagged with the name of the subset they come from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuerySet {
    pub tag: String,
    queries: BTreeMap<String, String>,
}

impl QuerySet {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) -> Result<()> {
        let id = id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Data(format!("query {id} has empty text")));
        }
        if self.queries.contains_key(&id) {
            return Err(Error::Data(format!("query id {id} appears twice")));
        }
        self.queries.insert(id, text);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.queries.get(id).map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.queries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.queries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Reads `qid<TAB>text` lines.
pub fn read_queries<R: BufRead>(reader: R, source_name: &str, tag: &str) -> Result<QuerySet> {
    let mut set = QuerySet::new(tag);
    read_lines(reader, source_name, |lineno, line| {
        if line.trim().is_empty() {
            return Ok(());
        }
        let (id, text) = split_tsv_pair(line)
            .ok_or_else(|| Error::parse(source_name, lineno, "expected qid<TAB>text"))?;
        set.insert(id, text.trim())
            .map_err(|e| Error::parse(source_name, lineno, e.to_string()))
    })?;
    Ok(set)
}

/// Reads a query file; the set is tagged with the file stem.
pub fn parse_queries(path: &Path) -> Result<QuerySet> {
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_queries(open(path)?, &label(path), &tag)
}

pub fn write_queries<W: Write>(set: &QuerySet, mut w: W) -> std::io::Result<()> {
    for (id, text) in set.iter() {
        writeln!(w, "{id}\t{text}")?;
    }
    w.flush()
}

// ---------------------------------------------------------------- collections

/// Streams `doc-id<TAB>text` documents to `f`.
pub fn read_collection<R, F>(reader: R, source_name: &str, mut f: F) -> Result<()>
where
    R: BufRead,
    F: FnMut(&str, &str) -> Result<()>,
{
    read_lines(reader, source_name, |lineno, line| {
        if line.is_empty() {
            return Ok(());
        }
        let (id, text) = split_tsv_pair(line)
            .ok_or_else(|| Error::parse(source_name, lineno, "expected doc-id<TAB>text"))?;
        f(id, text)
    })
}

// ---------------------------------------------------------------- background

/// The top-`depth` documents of each query of a (first-stage) run.
pub fn derive_background(run: &RankedRun, depth: usize) -> Result<Parsed<BackgroundSet>> {
    if depth == 0 {
        return Err(Error::Invalid("background depth must be at least 1".into()));
    }
    let mut set = BackgroundSet::new();
    let mut short = Vec::new();
    for (qid, docs) in run.iter() {
        if docs.is_empty() {
            return Err(Error::Data(format!("query {qid} has an empty ranked list")));
        }
        if docs.len() < depth {
            short.push(qid.to_string());
        }
        set.insert(qid, docs.iter().take(depth).map(|d| d.doc_id.clone()))?;
    }
    let mut warnings = Vec::new();
    if !short.is_empty() {
        warnings.push(format!(
            "{} queries have fewer than {depth} background documents ({})",
            short.len(),
            preview(&short)
        ));
    }
    Ok(Parsed {
        value: set,
        warnings,
    })
}

// ---------------------------------------------------------------- manifests

/// Reads a candidate manifest: `variation-id<TAB>run-path` per line, `#`
/// comments, paths relative to the manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let name = label(path);
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    read_lines(open(path)?, &name, |lineno, line| {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            return Ok(());
        }
        let (id, run) = split_tsv_pair(line)
            .ok_or_else(|| Error::parse(&name, lineno, "expected variation-id<TAB>run-path"))?;
        if !ids.insert(id.to_string()) {
            return Err(Error::parse(&name, lineno, format!("variation {id} listed twice")));
        }
        out.push((id.to_string(), base.join(run.trim())));
        Ok(())
    })?;
    if out.is_empty() {
        return Err(Error::Invalid(format!("{name}: manifest lists no runs")));
    }
    Ok(out)
}

/// Writes a manifest; `run` paths are written as given.
pub fn write_manifest<W: Write>(entries: &[(String, PathBuf)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# variation-id\trun-path")?;
    for (id, run) in entries {
        writeln!(w, "{id}\t{}", run.display())?;
    }
    w.flush()
}

// ---------------------------------------------------------------- reports

/// Non-fatal conditions attached to a per-query report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// IFaiRR was 0; NFaiRR was set to 1 by convention.
    ZeroIdealFairness,
    /// The query has no relevance judgments.
    NoJudgments,
    /// No judged document reaches the relevance threshold.
    NoRelevant,
}

impl Flag {
    pub const ALL: [Flag; 3] = [Flag::ZeroIdealFairness, Flag::NoJudgments, Flag::NoRelevant];

    pub fn as_str(self) -> &'static str {
        match self {
            Flag::ZeroIdealFairness => "zero_ideal_fairness",
            Flag::NoJudgments => "no_judgments",
            Flag::NoRelevant => "no_relevant",
        }
    }
}

impl FromStr for Flag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Flag::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown flag {s:?}")))
    }
}

/// Metrics that can be compared against a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Nfairr,
    SetNfairr,
    Mrr,
    Ndcg,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Nfairr, Metric::SetNfairr, Metric::Mrr, Metric::Ndcg, Metric::Recall];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Nfairr => "nfairr",
            Metric::SetNfairr => "set_nfairr",
            Metric::Mrr => "mrr",
            Metric::Ndcg => "ndcg",
            Metric::Recall => "recall",
        }
    }

    /// The metric's value in a row, if present.
    pub fn of(self, row: &ReportRow) -> Option<f64> {
        match self {
            Metric::Nfairr => Some(row.nfairr),
            Metric::SetNfairr => row.set_nfairr,
            Metric::Mrr => Some(row.mrr),
            Metric::Ndcg => Some(row.ndcg),
            Metric::Recall => Some(row.recall),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown metric {s:?}")))
    }
}

/// Settings an evaluation ran with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub fairness_cutoff: Cutoff,
    pub background_depth: usize,
    pub utility: UtilityConfig,
    pub qrels_oracle: bool,
    pub set_fairness: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            fairness_cutoff: Cutoff::TEN,
            background_depth: 200,
            utility: UtilityConfig::default(),
            qrels_oracle: false,
            set_fairness: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub query_id: String,
    pub fairr: f64,
    pub ifairr: f64,
    pub nfairr: f64,
    pub set_nfairr: Option<f64>,
    pub mrr: f64,
    pub ndcg: f64,
    pub recall: f64,
    pub flags: Vec<Flag>,
}

/// Means over rows, plus how many rows carry each flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_queries: usize,
    pub nfairr: f64,
    pub set_nfairr: Option<f64>,
    pub mrr: f64,
    pub ndcg: f64,
    pub recall: f64,
    pub flagged: BTreeMap<Flag, usize>,
}

impl Aggregate {
    pub fn from_rows(rows: &[ReportRow]) -> Self {
        let n = rows.len();
        let mean = |f: &dyn Fn(&ReportRow) -> f64| {
            if n == 0 {
                0.0
            } else {
                rows.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let set_nfairr = if n > 0 && rows.iter().all(|r| r.set_nfairr.is_some()) {
            Some(mean(&|r| r.set_nfairr.unwrap_or(0.0)))
        } else {
            None
        };
        let mut flagged = BTreeMap::new();
        for flag in rows.iter().flat_map(|r| &r.flags) {
            *flagged.entry(*flag).or_insert(0) += 1;
        }
        Self {
            n_queries: n,
            nfairr: mean(&|r| r.nfairr),
            set_nfairr,
            mrr: mean(&|r| r.mrr),
            ndcg: mean(&|r| r.ndcg),
            recall: mean(&|r| r.recall),
            flagged,
        }
    }
}

/// Paired t-test of one metric against a baseline report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub baseline: String,
    pub metric: Metric,
    pub test: TTest,
    pub significant: bool,
}

/// Per-query and aggregate fairness and utility of one ranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub ranker: String,
    pub query_set: String,
    pub fingerprint: String,
    pub settings: EvalSettings,
    pub rows: Vec<ReportRow>,
    pub aggregate: Aggregate,
    pub significance: Vec<Significance>,
    /// Queries of the query set that the run does not contain.
    pub unmatched_queries: Vec<String>,
}

impl EvalReport {
    /// Fails when the stored aggregate does not match the rows.
    pub fn validate(&self) -> Result<()> {
        if Aggregate::from_rows(&self.rows) != self.aggregate {
            return Err(Error::Data(format!(
                "report for {}: aggregates do not match per-query rows",
                self.ranker
            )));
        }
        Ok(())
    }

    pub fn row(&self, query_id: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.query_id == query_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Tsv,
    /// Pretty-printed JSON.
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(ReportFormat::Tsv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Invalid(format!("unknown report format {other:?} (tsv or json)"))),
        }
    }
}

const REPORT_MAGIC: &str = "#fairr-report\tv1";
const ROW_HEADER: &str = "query_id\tfairr\tifairr\tnfairr\tset_nfairr\tmrr\tndcg\trecall\tflags";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn gain_str(g: Gain) -> &'static str {
    match g {
        Gain::Linear => "linear",
        Gain::Exponential => "exponential",
    }
}

pub fn write_report<W: Write>(report: &EvalReport, format: ReportFormat, mut w: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        context: "writing report".into(),
        source: e,
    };
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, report)
                .map_err(|e| Error::Data(format!("serializing report: {e}")))?;
            writeln!(w).map_err(io)?;
        }
        ReportFormat::Tsv => {
            let s = &report.settings;
            let mut out = String::new();
            let _ = writeln!(out, "{REPORT_MAGIC}");
            let header = [
                ("tool_version", report.tool_version.clone()),
                ("ranker", report.ranker.clone()),
                ("query_set", report.query_set.clone()),
                ("fingerprint", report.fingerprint.clone()),
                ("fairness_cutoff", s.fairness_cutoff.to_string()),
                ("background_depth", s.background_depth.to_string()),
                ("mrr_cutoff", s.utility.mrr_cutoff.to_string()),
                ("ndcg_cutoff", s.utility.ndcg_cutoff.to_string()),
                ("recall_cutoff", s.utility.recall_cutoff.to_string()),
                ("rel_threshold", s.utility.rel_threshold.to_string()),
                ("gain", gain_str(s.utility.gain).to_string()),
                ("qrels_oracle", s.qrels_oracle.to_string()),
                ("set_fairness", s.set_fairness.to_string()),
                ("unmatched", list_or_dash(report.unmatched_queries.iter().map(String::as_str))),
            ];
            for (k, v) in header {
                let _ = writeln!(out, "#{k}\t{v}");
            }
            let _ = writeln!(out, "{ROW_HEADER}");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.query_id,
                    r.fairr,
                    r.ifairr,
                    r.nfairr,
                    opt(r.set_nfairr),
                    r.mrr,
                    r.ndcg,
                    r.recall,
                    list_or_dash(r.flags.iter().map(|f| f.as_str()))
                );
            }
            let a = &report.aggregate;
            let flagged = list_or_dash(a.flagged.iter().map(|(f, n)| format!("{}={n}", f.as_str())));
            let _ = writeln!(
                out,
                "#aggregate\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                a.n_queries,
                a.nfairr,
                opt(a.set_nfairr),
                a.mrr,
                a.ndcg,
                a.recall,
                flagged
            );
            for sig in &report.significance {
                let _ = writeln!(
                    out,
                    "#significance\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    sig.baseline,
                    sig.metric.as_str(),
                    sig.test.t,
                    sig.test.p,
                    sig.test.df,
                    sig.significant,
                    sig.test.zero_variance
                );
            }
            w.write_all(out.as_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn list_or_dash<I, S>(items: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let v: Vec<String> = items.into_iter().map(|s| s.as_ref().to_string()).collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(",")
    }
}

fn dash_list(s: &str) -> Vec<&str> {
    if s == "-" || s.is_empty() {
        Vec::new()
    } else {
        s.split(',').collect()
    }
}

pub fn save_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<()> {
    write_report(report, format, create(path)?)
}

/// Reads a report written by [`write_report`]; the format is detected from
/// the first byte.
pub fn read_report<R: BufRead>(mut reader: R, source_name: &str) -> Result<EvalReport> {
    let first = reader
        .fill_buf()
        .map_err(|e| Error::Io {
            context: source_name.to_string(),
            source: e,
        })?
        .first()
        .copied();
    let report = if first == Some(b'{') {
        serde_json::from_reader(reader)
            .map_err(|e| Error::parse(source_name, e.line(), e.to_string()))?
    } else {
        read_report_tsv(reader, source_name)?
    };
    report.validate()?;
    Ok(report)
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    read_report(open(path)?, &label(path))
}

fn read_report_tsv<R: BufRead>(reader: R, src: &str) -> Result<EvalReport> {
    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut aggregate: Option<Aggregate> = None;
    let mut significance = Vec::new();
    let mut saw_magic = false;

    read_lines(reader, src, |lineno, line| {
        let err = |m: String| Error::parse(src, lineno, m);
        if !saw_magic {
            if line != REPORT_MAGIC {
                return Err(err("missing report header".into()));
            }
            saw_magic = true;
            return Ok(());
        }
        if line.is_empty() || line == ROW_HEADER {
            return Ok(());
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| err(format!("bad number {s:?}"))) };
        let opt_num = |s: &str| -> Result<Option<f64>> {
            if s == "-" {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        match cols[0] {
            "#aggregate" => {
                if cols.len() != 8 {
                    return Err(err("aggregate line needs 8 columns".into()));
                }
                let mut flagged = BTreeMap::new();
                for item in dash_list(cols[7]) {
                    let (f, n) = item
                        .split_once('=')
                        .ok_or_else(|| err(format!("bad flag count {item:?}")))?;
                    let n: usize = n.parse().map_err(|_| err(format!("bad flag count {item:?}")))?;
                    flagged.insert(f.parse::<Flag>()?, n);
                }
                aggregate = Some(Aggregate {
                    n_queries: cols[1].parse().map_err(|_| err("bad query count".into()))?,
                    nfairr: num(cols[2])?,
                    set_nfairr: opt_num(cols[3])?,
                    mrr: num(cols[4])?,
                    ndcg: num(cols[5])?,
                    recall: num(cols[6])?,
                    flagged,
                });
            }
            "#significance" => {
                if cols.len() != 8 {
                    return Err(err("significance line needs 8 columns".into()));
                }
                let boolean = |s: &str| -> Result<bool> { s.parse().map_err(|_| err(format!("bad bool {s:?}"))) };
                significance.push(Significance {
                    baseline: cols[1].to_string(),
                    metric: cols[2].parse()?,
                    test: TTest {
                        t: num(cols[3])?,
                        p: num(cols[4])?,
                        df: cols[5].parse().map_err(|_| err("bad df".into()))?,
                        zero_variance: boolean(cols[7])?,
                    },
                    significant: boolean(cols[6])?,
                });
            }
            key if key.starts_with('#') => {
                if cols.len() != 2 {
                    return Err(err(format!("metadata line {key} needs 2 columns")));
                }
                meta.insert(key[1..].to_string(), cols[1].to_string());
            }
            _ => {
                if cols.len() != 9 {
                    return Err(err(format!("row needs 9 columns, got {}", cols.len())));
                }
                rows.push(ReportRow {
                    query_id: cols[0].to_string(),
                    fairr: num(cols[1])?,
                    ifairr: num(cols[2])?,
                    nfairr: num(cols[3])?,
                    set_nfairr: opt_num(cols[4])?,
                    mrr: num(cols[5])?,
                    ndcg: num(cols[6])?,
                    recall: num(cols[7])?,
                    flags: dash_list(cols[8])
                        .into_iter()
                        .map(str::parse)
                        .collect::<Result<Vec<Flag>>>()?,
                });
            }
        }
        Ok(())
    })?;

    let get = |k: &str| -> Result<&String> {
        meta.get(k)
            .ok_or_else(|| Error::parse(src, 0, format!("missing #{k} header")))
    };
    let usize_of = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::parse(src, 0, format!("bad #{k}")))
    };
    let cutoff_of = |k: &str| -> Result<Cutoff> { Cutoff::new(usize_of(k)?) };
    let bool_of = |k: &str| -> Result<bool> {
        get(k)?
            .parse()
            .map_err(|_| Error::parse(src, 0, format!("bad #{k}")))
    };
    let gain = match get("gain")?.as_str() {
        "linear" => Gain::Linear,
        "exponential" => Gain::Exponential,
        other => return Err(Error::parse(src, 0, format!("unknown gain {other:?}"))),
    };
    Ok(EvalReport {
        tool_version: get("tool_version")?.clone(),
        ranker: get("ranker")?.clone(),
        query_set: get("query_set")?.clone(),
        fingerprint: get("fingerprint")?.clone(),
        settings: EvalSettings {
            fairness_cutoff: cutoff_of("fairness_cutoff")?,
            background_depth: usize_of("background_depth")?,
            utility: UtilityConfig {
                mrr_cutoff: cutoff_of("mrr_cutoff")?,
                ndcg_cutoff: cutoff_of("ndcg_cutoff")?,
                recall_cutoff: cutoff_of("recall_cutoff")?,
                rel_threshold: u32::try_from(usize_of("rel_threshold")?)
                    .map_err(|_| Error::parse(src, 0, "bad #rel_threshold"))?,
                gain,
            },
            qrels_oracle: bool_of("qrels_oracle")?,
            set_fairness: bool_of("set_fairness")?,
        },
        unmatched_queries: dash_list(get("unmatched")?).into_iter().map(String::from).collect(),
        rows,
        aggregate: aggregate.ok_or_else(|| Error::parse(src, 0, "missing #aggregate line"))?,
        significance,
    })
}
