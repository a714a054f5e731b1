//! Protected attributes defined by representative word sets.
//!
//! An [`AttributeConfig`] is the set `A` of attribute members, each with its
//! own lexicon, plus the target distribution `J` over members and the noise
//! threshold `tau` used by document neutrality.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::read_lines;

const TARGET_SUM_TOLERANCE: f64 = 1e-9;

const DEFAULT_FEMALE: &str = include_str!("../data/female.txt");
const DEFAULT_MALE: &str = include_str!("../data/male.txt");

/// Lowercased word tokens of a text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream(Vec<String>);

impl TokenStream {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

/// Lowercases `text` and splits it on every non-alphanumeric character.
///
/// Lowercasing happens before splitting so the output is a fixed point:
/// tokenizing the space-joined tokens yields the same tokens.
pub fn tokenize(text: &str) -> TokenStream {
    let mut out = Vec::new();
    for_each_token(text, |t| out.push(t.to_string()));
    TokenStream(out)
}

/// Streams the tokens of `text` to `f` without allocating one string per token.
pub fn for_each_token<F: FnMut(&str)>(text: &str, mut f: F) {
    if text.is_ascii() {
        // Byte-level fast path; identical result to the general path for ASCII.
        let lower = text.to_ascii_lowercase();
        for tok in lower.split(|c: char| !c.is_ascii_alphanumeric()) {
            if !tok.is_empty() {
                f(tok);
            }
        }
    } else {
        let lower = text.to_lowercase();
        for tok in lower.split(|c: char| !c.is_alphanumeric()) {
            if !tok.is_empty() {
                f(tok);
            }
        }
    }
}

/// One member `a` of a protected attribute with its representative words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeMember {
    name: String,
    words: BTreeSet<String>,
}

impl AttributeMember {
    pub fn new<I, S>(name: impl Into<String>, words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let name = name.into();
        let mut set = BTreeSet::new();
        for w in words {
            let w = w.as_ref().trim();
            if w.is_empty() {
                continue;
            }
            if w.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "member {name}: representative word {w:?} contains whitespace"
                )));
            }
            let lowered = w.to_lowercase();
            // A word must survive tokenization intact, otherwise it can never match.
            let toks = tokenize(&lowered);
            if toks.len() != 1 || toks.tokens()[0] != lowered {
                return Err(Error::Config(format!(
                    "member {name}: representative word {w:?} is not a single token"
                )));
            }
            set.insert(lowered);
        }
        if set.is_empty() {
            return Err(Error::Config(format!("member {name} has an empty word list")));
        }
        Ok(Self { name, words: set })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn words(&self) -> &BTreeSet<String> {
        &self.words
    }
}

/// The protected attribute `A`, the balanced target distribution `J`, and `tau`.
#[derive(Debug, Clone)]
pub struct AttributeConfig {
    members: Vec<AttributeMember>,
    target: Vec<f64>,
    tau: u32,
    lookup: HashMap<String, usize>,
}

impl PartialEq for AttributeConfig {
    fn eq(&self, other: &Self) -> bool {
        self.members == other.members && self.target == other.target && self.tau == other.tau
    }
}

impl AttributeConfig {
    /// Validates and builds a configuration. `target = None` means uniform `J`.
    pub fn new(members: Vec<AttributeMember>, target: Option<Vec<f64>>, tau: u32) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Config(format!(
                "a protected attribute needs at least 2 members, got {}",
                members.len()
            )));
        }
        let target = match target {
            Some(t) => t,
            None => vec![1.0 / members.len() as f64; members.len()],
        };
        if target.len() != members.len() {
            return Err(Error::Config(format!(
                "target distribution has {} entries for {} members",
                target.len(),
                members.len()
            )));
        }
        if let Some(bad) = target.iter().find(|j| !(0.0..=1.0).contains(*j)) {
            return Err(Error::Config(format!("target fraction {bad} outside [0, 1]")));
        }
        let sum: f64 = target.iter().sum();
        if (sum - 1.0).abs() > TARGET_SUM_TOLERANCE {
            return Err(Error::Config(format!("target fractions sum to {sum}, expected 1")));
        }

        let mut names = BTreeSet::new();
        let mut lookup = HashMap::new();
        for (idx, m) in members.iter().enumerate() {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("duplicate member name {}", m.name)));
            }
            for w in &m.words {
                if let Some(prev) = lookup.insert(w.clone(), idx) {
                    return Err(Error::Config(format!(
                        "word {w:?} appears in members {} and {}",
                        members[prev].name, m.name
                    )));
                }
            }
        }
        Ok(Self {
            members,
            target,
            tau,
            lookup,
        })
    }

    /// Binary female/male configuration from the lists shipped with the crate,
    /// uniform `J` and `tau = 1`.
    pub fn default_gender() -> Self {
        let female = AttributeMember::new("female", parse_wordlist_str(DEFAULT_FEMALE))
            .expect("bundled female list is valid");
        let male = AttributeMember::new("male", parse_wordlist_str(DEFAULT_MALE))
            .expect("bundled male list is valid");
        Self::new(vec![female, male], None, 1).expect("bundled lists are disjoint")
    }

    /// Same members and targets with a different threshold.
    pub fn with_tau(mut self, tau: u32) -> Self {
        self.tau = tau;
        self
    }

    pub fn members(&self) -> &[AttributeMember] {
        &self.members
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    /// Index of the member whose lexicon contains `word`.
    #[inline]
    pub fn member_of(&self, word: &str) -> Option<usize> {
        self.lookup.get(word).copied()
    }

    /// Stable hex digest of members, words, `J` and `tau`.
    pub fn fingerprint(&self) -> String {
        let mut canon = String::new();
        let _ = write!(canon, "tau={};", self.tau);
        for (m, j) in self.members.iter().zip(&self.target) {
            let _ = write!(canon, "member={};j={:016x};", m.name, j.to_bits());
            for w in &m.words {
                canon.push_str(w);
                canon.push('\u{1f}');
            }
        }
        let digest = Sha256::digest(canon.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Loads a TOML attribute file; word-list paths resolve relative to it.
    ///
    /// ```toml
    /// tau = 1
    /// [[members]]
    /// name = "female"
    /// wordlist = "female.txt"
    /// target = 0.5        # optional; omit on every member for uniform J
    /// ```
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: AttributeFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let lists: Vec<(String, PathBuf)> = file
            .members
            .iter()
            .map(|m| (m.name.clone(), base.join(&m.wordlist)))
            .collect();
        let given: Vec<f64> = file.members.iter().filter_map(|m| m.target).collect();
        let target = if given.is_empty() {
            None
        } else if given.len() == file.members.len() {
            Some(given)
        } else {
            return Err(Error::Config(format!(
                "{}: target must be set on all members or none",
                path.display()
            )));
        };
        load_wordlists(&lists, target, file.tau.unwrap_or(1))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeFile {
    tau: Option<u32>,
    members: Vec<MemberEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberEntry {
    name: String,
    wordlist: PathBuf,
    target: Option<f64>,
}

fn parse_wordlist_str(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Reads one word list: one token per line, `#` starts a comment.
pub fn read_wordlist(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open word list {}: {e}", path.display())))?;
    let label = path.display().to_string();
    let mut words = Vec::new();
    read_lines(std::io::BufReader::new(file), &label, |_, line| {
        let w = line.split('#').next().unwrap_or("").trim();
        if !w.is_empty() {
            words.push(w.to_lowercase());
        }
        Ok(())
    })?;
    Ok(words)
}

/// Builds an [`AttributeConfig`] from one word-list file per member.
pub fn load_wordlists(
    lists: &[(String, PathBuf)],
    target: Option<Vec<f64>>,
    tau: u32,
) -> Result<AttributeConfig> {
    let members = lists
        .iter()
        .map(|(name, path)| AttributeMember::new(name.clone(), read_wordlist(path)?))
        .collect::<Result<Vec<_>>>()?;
    AttributeConfig::new(members, target, tau)
}

/// Binary gender tag used by census-style name files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gender {
    Female,
    Male,
}

/// One `name,G,count` row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameRecord {
    pub name: String,
    pub gender: Gender,
    pub count: u64,
}

/// Parses comma-separated `name,F|M,count` lines. Blank lines are skipped.
pub fn parse_name_records<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<NameRecord>> {
    let mut out = Vec::new();
    read_lines(reader, source_name, |lineno, line| {
        let line = line.trim();
        if line.is_empty() {
            return Ok(());
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(source_name, lineno, "expected name,gender,count"));
        }
        let gender = match fields[1] {
            "F" | "f" => Gender::Female,
            "M" | "m" => Gender::Male,
            other => {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("gender tag must be F or M, got {other:?}"),
                ))
            }
        };
        let count: u64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(source_name, lineno, format!("bad count {:?}", fields[2])))?;
        if count == 0 {
            return Err(Error::parse(source_name, lineno, "count must be positive"));
        }
        out.push(NameRecord {
            name: fields[0].to_string(),
            gender,
            count,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Equal-sized female and male name lists, most frequent first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NameLists {
    pub female: Vec<String>,
    pub male: Vec<String>,
}

/// Selects names whose share of births for one gender is at least `min_ratio`,
/// summing counts over all records, then truncates the longer list so both
/// have the same length.
pub fn build_name_lists(records: &[NameRecord], min_ratio: f64) -> Result<NameLists> {
    if !(min_ratio > 0.5 && min_ratio <= 1.0) {
        return Err(Error::Invalid(format!("min_ratio {min_ratio} outside (0.5, 1]")));
    }
    let mut totals: HashMap<String, (u64, u64)> = HashMap::new();
    for r in records {
        let e = totals.entry(r.name.to_lowercase()).or_default();
        match r.gender {
            Gender::Female => e.0 += r.count,
            Gender::Male => e.1 += r.count,
        }
    }
    let mut female = Vec::new();
    let mut male = Vec::new();
    for (name, (f, m)) in totals {
        let total = (f + m) as f64;
        if f as f64 / total >= min_ratio {
            female.push((f + m, name));
        } else if m as f64 / total >= min_ratio {
            male.push((f + m, name));
        }
    }
    let order = |a: &(u64, String), b: &(u64, String)| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1));
    female.sort_by(order);
    male.sort_by(order);
    let n = female.len().min(male.len());
    Ok(NameLists {
        female: female.into_iter().take(n).map(|(_, s)| s).collect(),
        male: male.into_iter().take(n).map(|(_, s)| s).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).into_inner()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks("She is a Governor."), ["she", "is", "a", "governor"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("mother-in-law"), ["mother", "in", "law"]);
        assert_eq!(toks("Ärztin und Arzt"), ["ärztin", "und", "arzt"]);
    }

    fn rec(name: &str, g: Gender, count: u64) -> NameRecord {
        NameRecord {
            name: name.into(),
            gender: g,
            count,
        }
    }

    #[test]
    fn name_ratio_rule() {
        let lists = build_name_lists(
            &[
                rec("Anna", Gender::Female, 900),
                rec("Anna", Gender::Male, 100),
                rec("Alex", Gender::Female, 60),
                rec("Alex", Gender::Male, 40),
                rec("John", Gender::Male, 500),
            ],
            0.75,
        )
        .unwrap();
        assert_eq!(lists.female, ["anna"]);
        assert_eq!(lists.male, ["john"]);
    }

    #[test]
    fn name_lists_equal_size_keeps_most_frequent() {
        let records = [
            rec("a", Gender::Female, 10),
            rec("b", Gender::Female, 30),
            rec("c", Gender::Female, 20),
            rec("x", Gender::Male, 5),
            rec("y", Gender::Male, 7),
        ];
        let lists = build_name_lists(&records, 0.75).unwrap();
        assert_eq!(lists.female, ["b", "c"]);
        assert_eq!(lists.male, ["y", "x"]);
        assert_eq!(build_name_lists(&[], 0.75).unwrap(), NameLists::default());
        assert!(build_name_lists(&records, 0.5).is_err());
    }

    #[test]
    fn counts_aggregate_across_years() {
        // 2 files: 40/60 then 360/0 -> 400 F vs 60 M overall.
        let records = [
            rec("kim", Gender::Female, 40),
            rec("kim", Gender::Male, 60),
            rec("kim", Gender::Female, 360),
            rec("lee", Gender::Male, 10),
        ];
        let lists = build_name_lists(&records, 0.75).unwrap();
        assert_eq!(lists.female, ["kim"]);
    }

    #[test]
    fn parse_ssa_lines() {
        let data = "Mary,F,7065\nJohn,M,9655\n\nMary,M,27\n";
        let recs = parse_name_records(data.as_bytes(), "yob1880.txt").unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2], rec("Mary", Gender::Male, 27));
        let err = parse_name_records("Mary,X,1\n".as_bytes(), "f").unwrap_err();
        assert!(err.to_string().contains("f:1"));
    }

    fn member(name: &str, words: &[&str]) -> AttributeMember {
        AttributeMember::new(name, words.iter().copied()).unwrap()
    }

    #[test]
    fn config_validation() {
        let f = member("female", &["she", "her"]);
        let m = member("male", &["he", "him"]);
        let cfg = AttributeConfig::new(vec![f.clone(), m.clone()], Some(vec![0.5, 0.5]), 1).unwrap();
        assert_eq!(cfg.member_of("her"), Some(0));
        assert_eq!(cfg.member_of("him"), Some(1));
        assert_eq!(cfg.member_of("it"), None);

        let overlap = member("male", &["he", "she"]);
        let err = AttributeConfig::new(vec![f.clone(), overlap], None, 1).unwrap_err();
        assert!(err.to_string().contains("\"she\""), "{err}");

        assert!(AttributeConfig::new(vec![f.clone()], None, 1).is_err());
        assert!(AttributeConfig::new(vec![f.clone(), m.clone()], Some(vec![0.6, 0.6]), 1).is_err());
        assert!(AttributeConfig::new(vec![f.clone(), m.clone()], Some(vec![1.2, -0.2]), 1).is_err());
        assert!(AttributeMember::new("empty", Vec::<String>::new()).is_err());
        assert!(AttributeMember::new("bad", ["mother-in-law"]).is_err());
    }

    #[test]
    fn words_are_lowercased_and_deduplicated() {
        let m = member("female", &["She", "she", "HER"]);
        assert_eq!(m.words().iter().collect::<Vec<_>>(), ["her", "she"]);
    }

    #[test]
    fn wordlist_files() {
        let dir = tempfile::tempdir().unwrap();
        let fpath = dir.path().join("female.txt");
        let mpath = dir.path().join("male.txt");
        fs::write(&fpath, "# female words\nshe\nHer  # pronoun\n\n").unwrap();
        fs::write(&mpath, "he\nhim\n").unwrap();
        let lists = vec![("female".to_string(), fpath.clone()), ("male".to_string(), mpath.clone())];
        let cfg = load_wordlists(&lists, Some(vec![0.5, 0.5]), 1).unwrap();
        assert_eq!(cfg.members()[0].words().len(), 2);

        fs::write(&mpath, "he\nshe\n").unwrap();
        let err = load_wordlists(&lists, None, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        fs::write(&mpath, "# nothing\n").unwrap();
        assert!(load_wordlists(&lists, None, 1).is_err());
    }

    #[test]
    fn wordlist_of_158_lines() {
        let dir = tempfile::tempdir().unwrap();
        let fpath = dir.path().join("f.txt");
        let mpath = dir.path().join("m.txt");
        let f: String = (0..158).map(|i| format!("fword{i}\n")).collect();
        let m: String = (0..158).map(|i| format!("mword{i}\n")).collect();
        fs::write(&fpath, f).unwrap();
        fs::write(&mpath, m).unwrap();
        let cfg = load_wordlists(&[("female".into(), fpath), ("male".into(), mpath)], None, 1).unwrap();
        assert!(cfg.members().iter().all(|m| m.words().len() == 158));
        assert_eq!(cfg.target(), &[0.5, 0.5]);
    }

    #[test]
    fn attribute_toml_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("f.txt"), "she\nher\n").unwrap();
        fs::write(dir.path().join("m.txt"), "he\nhim\n").unwrap();
        let cfg_path = dir.path().join("gender.toml");
        fs::write(
            &cfg_path,
            "tau = 2\n[[members]]\nname = \"female\"\nwordlist = \"f.txt\"\n\
             [[members]]\nname = \"male\"\nwordlist = \"m.txt\"\n",
        )
        .unwrap();
        let cfg = AttributeConfig::from_file(&cfg_path).unwrap();
        assert_eq!(cfg.tau(), 2);
        assert_eq!(cfg.target(), &[0.5, 0.5]);

        fs::write(
            &cfg_path,
            "[[members]]\nname = \"female\"\nwordlist = \"f.txt\"\ntarget = 0.7\n\
             [[members]]\nname = \"male\"\nwordlist = \"m.txt\"\n",
        )
        .unwrap();
        assert!(AttributeConfig::from_file(&cfg_path).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = AttributeConfig::default_gender();
        let b = AttributeConfig::default_gender();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), b.with_tau(2).fingerprint());
    }

    proptest! {
        #[test]
        fn tokenize_is_a_fixed_point(s in "\\PC{0,40}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.tokens().join(" "));
            prop_assert_eq!(once.tokens(), twice.tokens());
            prop_assert!(once.iter().all(|t| !t.chars().any(char::is_whitespace)));
        }

        #[test]
        fn name_lists_disjoint_and_equal(
            rows in proptest::collection::vec((0u8..12, any::<bool>(), 1u64..1000), 0..60),
            ratio in 0.55f64..=1.0,
        ) {
            let records: Vec<NameRecord> = rows
                .iter()
                .map(|(n, f, c)| rec(&format!("n{n}"), if *f { Gender::Female } else { Gender::Male }, *c))
                .collect();
            let lists = build_name_lists(&records, ratio).unwrap();
            prop_assert_eq!(lists.female.len(), lists.male.len());
            prop_assert!(lists.female.iter().all(|n| !lists.male.contains(n)));
        }
    }
}
