//! A desk-scale adversarial debiasing experiment: synthetic data, a small
//! pairwise ranker with a gradient-reversed attribute adversary, staged
//! training over a λ grid, and evaluation of every checkpoint.

pub mod data;
pub mod model;
pub mod train;

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fairness::{nfairr_run, BackgroundSet, Cutoff, RankedRun, ScoredDoc};
use crate::ingest::{self, read_lines, QuerySet, TOOL_VERSION};
use crate::lexicon::AttributeConfig;
use crate::neutrality::{score_corpus, NeutralityTable};
use crate::utility::{evaluate_run, UtilityConfig};

pub use data::{protected_label, synth_corpus, CorpusConfig, SynthCorpus, Vocabulary};
pub use model::{AdvDataPoint, AdvModel, Dims, GradientReversal, LossTerms, Objective};
pub use train::{probe_adversary, probe_embeddings, train, Checkpoint, ProbeConfig, TrainConfig, TrainOutput};

/// Everything a sandbox run needs; loadable from TOML with every field optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SandboxConfig {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub cutoff: Option<usize>,
}

impl SandboxConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        self.cutoff()?;
        Ok(())
    }

    /// Cutoff for both NFaiRR and NDCG; 10 unless set.
    pub fn cutoff(&self) -> Result<Cutoff> {
        self.cutoff.map_or(Ok(Cutoff::TEN), |t| Cutoff::new(t).map_err(|e| Error::Config(e.to_string())))
    }

    /// Digest of the configuration and attribute lexicon.
    pub fn fingerprint(&self, attrs: &AttributeConfig) -> String {
        let canon = format!("{}\n{}", attrs.fingerprint(), serde_json::to_string(self).expect("serializable"));
        hex::encode(&Sha256::digest(canon.as_bytes())[..8])
    }
}

/// Held-out quality of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationEval {
    pub id: String,
    /// `None` for the utility-only model.
    pub lambda: Option<f64>,
    pub checkpoint: usize,
    pub step: usize,
    pub ndcg: f64,
    pub nfairr: f64,
    pub probe_accuracy: f64,
    pub run: RankedRun,
    pub model: AdvModel,
}

#[derive(Debug, Clone)]
pub struct SandboxResult {
    pub fingerprint: String,
    pub corpus: SynthCorpus,
    pub table: NeutralityTable,
    pub background: BackgroundSet,
    pub utility: VariationEval,
    pub variations: Vec<VariationEval>,
}

impl SandboxResult {
    /// Final checkpoint of the run with the given λ.
    pub fn last_checkpoint(&self, lambda: f64) -> Option<&VariationEval> {
        self.variations.iter().filter(|v| v.lambda == Some(lambda)).max_by_key(|v| v.checkpoint)
    }
}

/// Ranks each held-out query's candidates by model score; ties keep
/// candidate order.
pub fn rank_heldout(model: &AdvModel, corpus: &SynthCorpus, tag: &str) -> Result<RankedRun> {
    let mut run = RankedRun::new(tag);
    for q in corpus.queries.iter().filter(|q| q.heldout) {
        let mut docs: Vec<ScoredDoc> = q
            .candidates
            .iter()
            .map(|d| ScoredDoc {
                doc_id: d.clone(),
                score: model.score(&corpus.vocabulary.features(&q.text, &corpus.documents[d])),
            })
            .collect();
        docs.sort_by(|a, b| b.score.total_cmp(&a.score));
        run.insert(&q.id, docs)?;
    }
    Ok(run)
}

/// Held-out candidate lists in generation order, scored by rank.
pub fn candidate_run(corpus: &SynthCorpus) -> Result<RankedRun> {
    let mut run = RankedRun::new("candidates");
    for q in corpus.queries.iter().filter(|q| q.heldout) {
        run.insert_ranked(&q.id, q.candidates.iter())?;
    }
    Ok(run)
}

/// Generates the corpus, trains every λ, and evaluates the utility-only
/// model and every checkpoint on held-out queries.
pub fn run_experiment(cfg: &SandboxConfig, attrs: &AttributeConfig) -> Result<SandboxResult> {
    cfg.validate()?;
    let cutoff = cfg.cutoff()?;
    let corpus = synth_corpus(&cfg.corpus, attrs, cfg.train.seed)?;
    let table = score_corpus(corpus.documents.iter().map(|(k, v)| (k.clone(), v.as_str())), attrs)?;
    let mut background = BackgroundSet::new();
    for q in corpus.queries.iter().filter(|q| q.heldout) {
        background.insert(&q.id, q.candidates.iter().cloned())?;
    }
    let out = train(&corpus.train, corpus.vocabulary.input_dim(), &cfg.train, None)?;
    let probe = ProbeConfig::from_train(&cfg.train);
    let ucfg = UtilityConfig {
        ndcg_cutoff: cutoff,
        ..UtilityConfig::default()
    };
    let evaluate = |id: String, lambda: Option<f64>, checkpoint: usize, step: usize, model: &AdvModel| -> Result<VariationEval> {
        let run = rank_heldout(model, &corpus, &id)?;
        let nfairr = nfairr_run(&run, &table, &background, cutoff)?.aggregate;
        let ndcg = evaluate_run(&run, &corpus.qrels, &ucfg)?.ndcg;
        let probe_accuracy = probe_adversary(model, &corpus.heldout, &probe, cfg.train.seed)?;
        Ok(VariationEval {
            id,
            lambda,
            checkpoint,
            step,
            ndcg,
            nfairr,
            probe_accuracy,
            run,
            model: model.clone(),
        })
    };

    let jobs: Vec<(f64, &Checkpoint)> = out
        .runs
        .iter()
        .flat_map(|r| r.checkpoints.iter().map(move |c| (r.lambda, c)))
        .collect();
    let utility = evaluate("utility".into(), None, 0, 0, &out.utility)?;
    let variations = jobs
        .par_iter()
        .map(|(lambda, c)| evaluate(format!("lambda{lambda}-ckpt{:02}", c.index), Some(*lambda), c.index, c.step, &c.model))
        .collect::<Result<Vec<_>>>()?;
    Ok(SandboxResult {
        fingerprint: cfg.fingerprint(attrs),
        corpus,
        table,
        background,
        utility,
        variations,
    })
}

const CHECKPOINT_MAGIC: &str = "#fairr-checkpoint\tv1";

/// Metadata stored alongside checkpoint parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub fingerprint: String,
    pub step: usize,
}

/// Writes a flat parameter file: a header, then one parameter per line.
pub fn write_checkpoint<W: Write>(model: &AdvModel, meta: &CheckpointMeta, mut w: W) -> std::io::Result<()> {
    let d = model.dims;
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "#tool_version\t{TOOL_VERSION}")?;
    writeln!(w, "#fingerprint\t{}", meta.fingerprint)?;
    writeln!(w, "#dims\t{},{},{},{}", d.input, d.hidden, d.embed, d.adv_hidden)?;
    writeln!(w, "#lambda\t{}", model.grl)?;
    writeln!(w, "#step\t{}", meta.step)?;
    for p in &model.params {
        writeln!(w, "{p}")?;
    }
    w.flush()
}

pub fn read_checkpoint<R: BufRead>(reader: R, source_name: &str) -> Result<(AdvModel, CheckpointMeta)> {
    let mut header: Vec<(String, String)> = Vec::new();
    let mut params = Vec::new();
    let mut saw_magic = false;
    read_lines(reader, source_name, |lineno, line| {
        if !saw_magic {
            if line != CHECKPOINT_MAGIC {
                return Err(Error::parse(source_name, lineno, "not a checkpoint file"));
            }
            saw_magic = true;
        } else if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest
                .split_once('\t')
                .ok_or_else(|| Error::parse(source_name, lineno, "malformed header line"))?;
            header.push((k.to_string(), v.to_string()));
        } else {
            params.push(
                line.parse::<f64>()
                    .map_err(|_| Error::parse(source_name, lineno, format!("bad parameter {line:?}")))?,
            );
        }
        Ok(())
    })?;
    let get = |k: &str| {
        header
            .iter()
            .find(|(h, _)| h == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::parse(source_name, 0, format!("missing #{k}")))
    };
    let dims: Vec<usize> = get("dims")?
        .split(',')
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(source_name, 0, "bad #dims"))?;
    let [input, hidden, embed, adv_hidden] = dims[..] else {
        return Err(Error::parse(source_name, 0, "#dims needs four widths"));
    };
    let lambda: f64 = get("lambda")?
        .parse()
        .map_err(|_| Error::parse(source_name, 0, "bad #lambda"))?;
    let step = get("step")?
        .parse()
        .map_err(|_| Error::parse(source_name, 0, "bad #step"))?;
    let model = AdvModel::from_params(
        Dims {
            input,
            hidden,
            embed,
            adv_hidden,
        },
        lambda,
        params,
    )?;
    Ok((
        model,
        CheckpointMeta {
            fingerprint: get("fingerprint")?.to_string(),
            step,
        },
    ))
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxOutputs {
    pub manifest: PathBuf,
    pub summary: PathBuf,
    pub qrels: PathBuf,
    pub queries: PathBuf,
    pub neutrality: PathBuf,
    pub background: PathBuf,
}

/// Writes the corpus artifacts, every model's ranking and checkpoint, a
/// tab-separated summary, and a candidate manifest for model selection.
pub fn write_outputs(result: &SandboxResult, cfg: &SandboxConfig, dir: &Path) -> Result<SandboxOutputs> {
    let join = |p: &str| dir.join(p);
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(&p, e)
    };
    let config = join("config.toml");
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    std::fs::write(&config, cfg.to_toml()).map_err(io(&config))?;

    let c = &result.corpus;
    let mut queries = QuerySet::new("synthetic");
    for q in c.queries.iter().filter(|q| q.heldout) {
        queries.insert(&q.id, &q.text)?;
    }
    let heldout: BTreeSet<&str> = queries.ids().collect();
    let out = SandboxOutputs {
        manifest: join("manifest.tsv"),
        summary: join("summary.tsv"),
        qrels: join("qrels.txt"),
        queries: join("queries.tsv"),
        neutrality: join("neutrality.tsv"),
        background: join("background.run"),
    };
    ingest::write_queries(&queries, ingest::create(&out.queries)?).map_err(io(&out.queries))?;
    let mut qrels = crate::utility::Qrels::new();
    for q in &heldout {
        for (d, g) in c.qrels.judgments(q).into_iter().flatten() {
            qrels.insert(q, d, *g);
        }
    }
    ingest::write_qrels(&qrels, ingest::create(&out.qrels)?).map_err(io(&out.qrels))?;
    result
        .table
        .write_tsv(ingest::create(&out.neutrality)?)
        .map_err(io(&out.neutrality))?;
    ingest::save_run(&candidate_run(c)?, &out.background)?;

    let collection = join("collection.tsv");
    let mut w = ingest::create(&collection)?;
    for (id, text) in &c.documents {
        writeln!(w, "{id}\t{text}").map_err(io(&collection))?;
    }
    w.flush().map_err(io(&collection))?;

    let mut manifest = Vec::new();
    let mut summary = String::from("variation\tlambda\tcheckpoint\tstep\tndcg\tnfairr\tprobe_accuracy\n");
    for v in std::iter::once(&result.utility).chain(&result.variations) {
        let run_rel = PathBuf::from(format!("runs/{}.run", v.id));
        ingest::save_run(&v.run, &dir.join(&run_rel))?;
        let ckpt = join(&format!("checkpoints/{}.params", v.id));
        let meta = CheckpointMeta {
            fingerprint: result.fingerprint.clone(),
            step: v.step,
        };
        write_checkpoint(&v.model, &meta, ingest::create(&ckpt)?).map_err(io(&ckpt))?;
        manifest.push((v.id.clone(), run_rel));
        let lambda = v.lambda.map_or_else(|| "-".to_string(), |l| l.to_string());
        summary.push_str(&format!(
            "{}\t{lambda}\t{}\t{}\t{}\t{}\t{}\n",
            v.id, v.checkpoint, v.step, v.ndcg, v.nfairr, v.probe_accuracy
        ));
    }
    ingest::write_manifest(&manifest, ingest::create(&out.manifest)?).map_err(io(&out.manifest))?;
    std::fs::write(&out.summary, summary).map_err(io(&out.summary))?;
    Ok(out)
}
