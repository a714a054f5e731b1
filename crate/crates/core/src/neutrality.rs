//! Member magnitudes and document neutrality, for single documents and whole
//! collections.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{read_lines, split_tsv_pair};
use crate::lexicon::{for_each_token, AttributeConfig, TokenStream};

const TABLE_MAGIC: &str = "#fairr-neutrality";
const TABLE_VERSION: &str = "v1";
const CHUNK: usize = 8192;

/// Per-member occurrence counts of representative words in one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MagnitudeVector(pub Vec<u64>);

impl MagnitudeVector {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

pub fn magnitude(doc: &TokenStream, cfg: &AttributeConfig) -> MagnitudeVector {
    let mut counts = vec![0u64; cfg.members().len()];
    for tok in doc.iter() {
        if let Some(i) = cfg.member_of(tok) {
            counts[i] += 1;
        }
    }
    MagnitudeVector(counts)
}

/// [`magnitude`] directly on raw text, without materializing tokens.
pub fn magnitude_of_text(text: &str, cfg: &AttributeConfig) -> MagnitudeVector {
    let mut counts = vec![0u64; cfg.members().len()];
    for_each_token(text, |tok| {
        if let Some(i) = cfg.member_of(tok) {
            counts[i] += 1;
        }
    });
    MagnitudeVector(counts)
}

/// Neutrality `ω` from magnitudes: 1 when the total is at most `tau`, else one
/// minus the L1 distance between the member proportions and the target.
///
/// The distance is evaluated as `Σ|mag_a − J_a·total| / total` so integer
/// magnitudes with dyadic targets stay exact. Values below 0, which the L1
/// distance permits for non-uniform targets or more than two members, are
/// clamped to 0.
pub fn neutrality_from_magnitude(mag: &MagnitudeVector, cfg: &AttributeConfig) -> f64 {
    debug_assert_eq!(mag.0.len(), cfg.target().len());
    let total = mag.total();
    if total <= u64::from(cfg.tau()) {
        return 1.0;
    }
    let total = total as f64;
    let dev: f64 = mag
        .0
        .iter()
        .zip(cfg.target())
        .map(|(&m, &j)| (m as f64 - j * total).abs())
        .sum();
    ((total - dev) / total).clamp(0.0, 1.0)
}

pub fn neutrality(doc: &TokenStream, cfg: &AttributeConfig) -> f64 {
    neutrality_from_magnitude(&magnitude(doc, cfg), cfg)
}

pub fn neutrality_of_text(text: &str, cfg: &AttributeConfig) -> f64 {
    neutrality_from_magnitude(&magnitude_of_text(text, cfg), cfg)
}

/// Neutrality scores of a collection, tagged with the fingerprint of the
/// attribute configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralityTable {
    fingerprint: String,
    scores: IndexMap<String, f64>,
}

impl NeutralityTable {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        Self {
            fingerprint: fingerprint.into(),
            scores: IndexMap::new(),
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<f64> {
        self.scores.get(doc_id).copied()
    }

    /// Like [`get`](Self::get) but fails with the missing id.
    pub fn score(&self, doc_id: &str) -> Result<f64> {
        self.get(doc_id)
            .ok_or_else(|| Error::Data(format!("document {doc_id} missing from neutrality table")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scores.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Inserts a score, rejecting duplicates and values outside [0, 1].
    pub fn insert(&mut self, doc_id: String, score: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Data(format!("neutrality {score} of {doc_id} outside [0, 1]")));
        }
        if self.scores.contains_key(&doc_id) {
            return Err(Error::Data(format!("duplicate document id {doc_id}")));
        }
        self.scores.insert(doc_id, score);
        Ok(())
    }

    /// Fails unless this table was produced with `cfg`.
    pub fn check_config(&self, cfg: &AttributeConfig) -> Result<()> {
        let expected = cfg.fingerprint();
        if self.fingerprint != expected {
            return Err(Error::Data(format!(
                "neutrality table was scored with config {} but {} is in use; re-score the collection",
                self.fingerprint, expected
            )));
        }
        Ok(())
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_table_header(&mut w, &self.fingerprint)?;
        for (id, s) in &self.scores {
            writeln!(w, "{id}\t{s}")?;
        }
        w.flush()
    }

    pub fn read_tsv<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut table: Option<NeutralityTable> = None;
        read_lines(reader, source_name, |lineno, line| {
            let Some(t) = table.as_mut() else {
                let fp = parse_table_header(line)
                    .ok_or_else(|| Error::parse(source_name, lineno, "missing neutrality table header"))?;
                table = Some(NeutralityTable::new(fp));
                return Ok(());
            };
            if line.is_empty() {
                return Ok(());
            }
            let (id, score) = split_tsv_pair(line)
                .ok_or_else(|| Error::parse(source_name, lineno, "expected doc-id<TAB>score"))?;
            let score: f64 = score
                .parse()
                .map_err(|_| Error::parse(source_name, lineno, format!("bad score {score:?}")))?;
            t.insert(id.to_string(), score)
                .map_err(|e| Error::parse(source_name, lineno, e.to_string()))
        })?;
        table.ok_or_else(|| Error::parse(source_name, 1, "empty neutrality table"))
    }
}

fn write_table_header<W: Write>(w: &mut W, fingerprint: &str) -> std::io::Result<()> {
    writeln!(w, "{TABLE_MAGIC}\t{TABLE_VERSION}\tfingerprint={fingerprint}")
}

fn parse_table_header(line: &str) -> Option<String> {
    let mut parts = line.split('\t');
    if parts.next()? != TABLE_MAGIC || parts.next()? != TABLE_VERSION {
        return None;
    }
    let fp = parts.next()?.strip_prefix("fingerprint=")?;
    Some(fp.to_string())
}

/// Scores every document of an in-memory collection.
///
/// Documents are scored in parallel chunks; the table keeps input order, so
/// the result does not depend on the degree of parallelism.
pub fn score_corpus<I, K, V>(docs: I, cfg: &AttributeConfig) -> Result<NeutralityTable>
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: AsRef<str> + Sync,
{
    let mut table = NeutralityTable::new(cfg.fingerprint());
    let mut batch: Vec<(String, V)> = Vec::with_capacity(CHUNK);
    let flush = |batch: &mut Vec<(String, V)>, table: &mut NeutralityTable| -> Result<()> {
        let scores: Vec<f64> = batch
            .par_iter()
            .map(|(_, text)| neutrality_of_text(text.as_ref(), cfg))
            .collect();
        for ((id, _), s) in batch.drain(..).zip(scores) {
            table.insert(id, s)?;
        }
        Ok(())
    };
    for (id, text) in docs {
        batch.push((id.into(), text));
        if batch.len() == CHUNK {
            flush(&mut batch, &mut table)?;
        }
    }
    flush(&mut batch, &mut table)?;
    Ok(table)
}

/// Throughput of a streaming collection pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreStats {
    pub documents: u64,
    pub elapsed: Duration,
}

impl ScoreStats {
    pub fn docs_per_second(&self) -> f64 {
        self.documents as f64 / self.elapsed.as_secs_f64().max(1e-9)
    }
}

/// Streams a `doc-id<TAB>text` collection into a neutrality table file.
///
/// Memory holds one chunk of documents plus the set of ids seen so far
/// (needed to reject duplicates).
pub fn score_collection<R: BufRead, W: Write>(
    reader: R,
    source_name: &str,
    cfg: &AttributeConfig,
    mut out: W,
) -> Result<ScoreStats> {
    let start = Instant::now();
    let io_err = |e: std::io::Error| Error::Io {
        context: "writing neutrality table".into(),
        source: e,
    };
    write_table_header(&mut out, &cfg.fingerprint()).map_err(io_err)?;

    let mut seen: HashSet<String> = HashSet::new();
    let mut batch: Vec<(String, String)> = Vec::with_capacity(CHUNK);
    let mut documents = 0u64;
    let mut buf = String::new();

    let mut flush = |batch: &mut Vec<(String, String)>, out: &mut W| -> Result<()> {
        let scores: Vec<f64> = if batch.len() > 1 && rayon::current_num_threads() > 1 {
            batch.par_iter().map(|(_, t)| neutrality_of_text(t, cfg)).collect()
        } else {
            batch.iter().map(|(_, t)| neutrality_of_text(t, cfg)).collect()
        };
        for ((id, _), s) in batch.iter().zip(scores) {
            buf.clear();
            use std::fmt::Write as _;
            let _ = writeln!(buf, "{id}\t{s}");
            out.write_all(buf.as_bytes()).map_err(io_err)?;
        }
        batch.clear();
        Ok(())
    };

    read_lines(reader, source_name, |lineno, line| {
        if line.is_empty() {
            return Ok(());
        }
        let (id, text) = split_tsv_pair(line)
            .ok_or_else(|| Error::parse(source_name, lineno, "expected doc-id<TAB>text"))?;
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(source_name, lineno, format!("duplicate document id {id}")));
        }
        batch.push((id.to_string(), text.to_string()));
        documents += 1;
        if batch.len() == CHUNK {
            flush(&mut batch, &mut out)?;
        }
        Ok(())
    })?;
    flush(&mut batch, &mut out)?;
    out.flush().map_err(io_err)?;
    Ok(ScoreStats {
        documents,
        elapsed: start.elapsed(),
    })
}
