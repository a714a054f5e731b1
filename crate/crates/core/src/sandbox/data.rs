//! Synthetic retrieval data whose relevance correlates with attribute words.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{for_each_token, AttributeConfig};
use crate::neutrality::neutrality_of_text;
use crate::utility::Qrels;

use super::model::AdvDataPoint;

/// 1 when the concatenated document and query text is not neutral.
pub fn protected_label(query_text: &str, doc_text: &str, cfg: &AttributeConfig) -> u8 {
    let text = format!("{doc_text} {query_text}");
    u8::from(neutrality_of_text(&text, cfg) < 1.0)
}

/// Word to index map; a query/document pair becomes `[bow(q); bow(d)]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        let mut index = HashMap::new();
        for w in words {
            let n = index.len() as u32;
            index.entry(w.into()).or_insert(n);
        }
        Self { index }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Input width of the concatenated pair features.
    pub fn input_dim(&self) -> usize {
        2 * self.len()
    }

    fn count_into(&self, text: &str, offset: u32, counts: &mut HashMap<u32, f64>) {
        for_each_token(text, |tok| {
            if let Some(&i) = self.index.get(tok) {
                *counts.entry(offset + i).or_insert(0.0) += 1.0;
            }
        });
    }

    /// Sparse bag-of-words counts, query block first. Unknown words are ignored.
    pub fn features(&self, query_text: &str, doc_text: &str) -> Vec<(u32, f64)> {
        let mut counts = HashMap::new();
        self.count_into(query_text, 0, &mut counts);
        self.count_into(doc_text, self.len() as u32, &mut counts);
        let mut v: Vec<(u32, f64)> = counts.into_iter().collect();
        v.sort_unstable_by_key(|p| p.0);
        v
    }
}

/// Size and bias of a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_queries: usize,
    /// Candidates per query, half of them relevant.
    pub docs_per_query: usize,
    /// Fraction of protected labels that are 1.
    pub bias_rate: f64,
    /// Fraction of queries held out from training.
    pub heldout_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_queries: 400,
            docs_per_query: 20,
            bias_rate: 0.21,
            heldout_fraction: 0.5,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bias_rate) {
            return Err(Error::Config(format!("bias_rate must be in [0, 1], got {}", self.bias_rate)));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "heldout_fraction must be in (0, 1), got {}",
                self.heldout_fraction
            )));
        }
        if self.docs_per_query < 2 || !self.docs_per_query.is_multiple_of(2) {
            return Err(Error::Config("docs_per_query must be even and at least 2".into()));
        }
        if self.n_queries < 2 {
            return Err(Error::Config("n_queries must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthQuery {
    pub id: String,
    pub text: String,
    pub heldout: bool,
    /// Candidate document ids, in generation order.
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub vocabulary: Vocabulary,
    pub queries: Vec<SynthQuery>,
    pub documents: IndexMap<String, String>,
    pub qrels: Qrels,
    pub train: Vec<AdvDataPoint>,
    pub heldout: Vec<AdvDataPoint>,
}

const TOPICS: [[&str; 5]; 8] = [
    ["river", "bridge", "harbor", "canal", "ferry"],
    ["engine", "piston", "gearbox", "exhaust", "clutch"],
    ["tax", "refund", "deduction", "audit", "payroll"],
    ["virus", "vaccine", "symptom", "fever", "clinic"],
    ["soil", "harvest", "tractor", "irrigation", "wheat"],
    ["guitar", "melody", "chord", "rhythm", "concert"],
    ["server", "database", "query", "index", "cache"],
    ["volcano", "lava", "magma", "eruption", "crater"],
];

const FILLER: [&str; 16] = [
    "the", "a", "of", "and", "to", "in", "is", "for", "with", "on", "as", "by", "at", "from", "about", "what",
];

fn topic_of(word: &str) -> Option<usize> {
    TOPICS.iter().position(|t| t.contains(&word))
}

fn push_filler<R: Rng>(rng: &mut R, words: &mut Vec<&'static str>) {
    let n = rng.random_range(3..=6);
    for _ in 0..n {
        words.push(FILLER.choose(rng).expect("non-empty"));
    }
}

/// Generates queries, documents, qrels and training pairs.
///
/// Relevant documents carry attribute words with probability
/// `min(1, 2·bias_rate)` and non-relevant ones with `max(0, 2·bias_rate − 1)`,
/// so with half of every candidate list relevant the labeled rate is
/// `bias_rate`. Relevance evidence from topic words is deliberately noisy,
/// which makes attribute words a useful shortcut for a ranker.
pub fn synth_corpus(cfg: &CorpusConfig, attrs: &AttributeConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_rel = (2.0 * cfg.bias_rate).min(1.0);
    let p_nonrel = (2.0 * cfg.bias_rate - 1.0).max(0.0);
    let member_words: Vec<Vec<String>> = attrs
        .members()
        .iter()
        .map(|m| {
            let mut w: Vec<String> = m.words().iter().cloned().collect();
            w.sort_unstable();
            w
        })
        .collect();

    let vocabulary = Vocabulary::new(
        TOPICS
            .iter()
            .flatten()
            .chain(FILLER.iter())
            .map(|s| s.to_string())
            .chain(member_words.iter().flatten().cloned()),
    );

    let n_heldout = ((cfg.n_queries as f64) * cfg.heldout_fraction).round().clamp(1.0, (cfg.n_queries - 1) as f64) as usize;
    let half = cfg.docs_per_query / 2;
    let mut queries = Vec::with_capacity(cfg.n_queries);
    let mut documents = IndexMap::new();
    let mut qrels = Qrels::new();
    let mut train = Vec::new();
    let mut heldout = Vec::new();

    let gendered_text = |rng: &mut ChaCha8Rng, words: &mut Vec<String>| {
        let member = &member_words[rng.random_range(0..member_words.len())];
        for _ in 0..2 {
            words.push(member.choose(rng).expect("non-empty").clone());
        }
    };

    for qi in 0..cfg.n_queries {
        let qid = format!("sq{qi:04}");
        let topic = rng.random_range(0..TOPICS.len());
        let qwords: Vec<&str> = TOPICS[topic].choose_multiple(&mut rng, 2).copied().collect();
        let qtext = qwords.join(" ");
        let is_heldout = qi >= cfg.n_queries - n_heldout;

        let mut rel_ids = Vec::with_capacity(half);
        let mut non_ids = Vec::with_capacity(half);
        for di in 0..cfg.docs_per_query {
            let relevant = di < half;
            let mut words: Vec<&'static str> = Vec::new();
            push_filler(&mut rng, &mut words);
            if relevant {
                // Often no topical evidence at all.
                let k = [0usize, 0, 1, 1, 2].choose(&mut rng).copied().unwrap_or(0);
                words.extend(TOPICS[topic].choose_multiple(&mut rng, k).copied());
            } else {
                if rng.random_bool(0.5) {
                    let other = (topic + rng.random_range(1..TOPICS.len())) % TOPICS.len();
                    let k = rng.random_range(1..=2);
                    words.extend(TOPICS[other].choose_multiple(&mut rng, k).copied());
                }
                if rng.random_bool(0.25) {
                    words.push(TOPICS[topic].choose(&mut rng).expect("non-empty"));
                }
            }
            let mut words: Vec<String> = words.into_iter().map(String::from).collect();
            if rng.random_bool(if relevant { p_rel } else { p_nonrel }) {
                gendered_text(&mut rng, &mut words);
            }
            words.shuffle(&mut rng);
            let did = format!("{qid}-d{di:02}");
            documents.insert(did.clone(), words.join(" "));
            qrels.insert(&qid, &did, u32::from(relevant));
            if relevant {
                rel_ids.push(did);
            } else {
                non_ids.push(did);
            }
        }

        // Each document appears in exactly one pair.
        non_ids.shuffle(&mut rng);
        let target = if is_heldout { &mut heldout } else { &mut train };
        for (pos, neg) in rel_ids.iter().zip(&non_ids) {
            let (pt, nt) = (&documents[pos], &documents[neg]);
            target.push(AdvDataPoint {
                pos: vocabulary.features(&qtext, pt),
                neg: vocabulary.features(&qtext, nt),
                pos_label: protected_label(&qtext, pt, attrs),
                neg_label: protected_label(&qtext, nt, attrs),
            });
        }
        let mut candidates: Vec<String> = rel_ids.into_iter().chain(non_ids).collect();
        candidates.shuffle(&mut rng);
        queries.push(SynthQuery {
            id: qid,
            text: qtext,
            heldout: is_heldout,
            candidates,
        });
    }
    debug_assert!(queries.iter().all(|q| q.text.split(' ').all(|w| topic_of(w).is_some())));
    Ok(SynthCorpus {
        vocabulary,
        queries,
        documents,
        qrels,
        train,
        heldout,
    })
}

impl SynthCorpus {
    /// Fraction of protected labels equal to 1 over every pair.
    pub fn label_rate(&self) -> f64 {
        let all = self.train.iter().chain(&self.heldout);
        let (ones, n) = all.fold((0usize, 0usize), |(o, n), p| {
            (o + usize::from(p.pos_label) + usize::from(p.neg_label), n + 2)
        });
        ones as f64 / n as f64
    }
}
