//! Biography corpus: ingestion, explicit-indicator scrubbing, per-occupation
//! group statistics and the stratified train/validation/test split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SnobError};
use crate::seed;
use crate::text::tokenize;

/// Pronoun group assigned at data collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PronounGroup {
    She,
    He,
    Nb,
}

impl PronounGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            PronounGroup::She => "she",
            PronounGroup::He => "he",
            PronounGroup::Nb => "nb",
        }
    }

    pub fn is_binary(self) -> bool {
        self != PronounGroup::Nb
    }
}

impl std::str::FromStr for PronounGroup {
    type Err = SnobError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "she" => Ok(PronounGroup::She),
            "he" => Ok(PronounGroup::He),
            "nb" => Ok(PronounGroup::Nb),
            other => Err(SnobError::Validation(format!("unknown pronoun_group {other:?}"))),
        }
    }
}

impl std::fmt::Display for PronounGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Biography {
    pub id: String,
    pub occupation: String,
    pub pronoun_group: PronounGroup,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// Explicit gender indicator words removed before featurization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorSet(BTreeSet<String>);

pub const DEFAULT_INDICATORS: &[&str] = &[
    "she", "he", "her", "his", "him", "hers", "herself", "himself", "mr", "mrs", "ms", "mx", "miss",
];

impl Default for IndicatorSet {
    fn default() -> Self {
        Self::new(DEFAULT_INDICATORS.iter().copied())
    }
}

impl IndicatorSet {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        IndicatorSet(words.into_iter().map(|w| w.as_ref().to_lowercase()).collect())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Removes every indicator word, keeping the order of the rest.
pub fn scrub_tokens(tokens: &[String], indicators: &IndicatorSet) -> Vec<String> {
    tokens.iter().filter(|t| !indicators.contains(t)).cloned().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub she: usize,
    pub he: usize,
    pub nb: usize,
}

impl GroupCounts {
    fn bump(&mut self, g: PronounGroup) {
        match g {
            PronounGroup::She => self.she += 1,
            PronounGroup::He => self.he += 1,
            PronounGroup::Nb => self.nb += 1,
        }
    }

    pub fn get(&self, g: PronounGroup) -> usize {
        match g {
            PronounGroup::She => self.she,
            PronounGroup::He => self.he,
            PronounGroup::Nb => self.nb,
        }
    }

    pub fn total(&self) -> usize {
        self.she + self.he + self.nb
    }

    /// Share of "she" among she/he biographies; `None` when both are zero.
    pub fn she_fraction(&self) -> Option<f64> {
        let binary = self.she + self.he;
        (binary > 0).then(|| self.she as f64 / binary as f64)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    biographies: Vec<Biography>,
    occupations: Vec<String>,
    counts: BTreeMap<String, GroupCounts>,
}

impl Corpus {
    /// Builds a corpus whose occupation set is exactly the occupations present.
    pub fn new(biographies: Vec<Biography>) -> Result<Self> {
        let occupations: BTreeSet<String> = biographies.iter().map(|b| b.occupation.clone()).collect();
        Self::with_occupations(biographies, occupations)
    }

    /// Builds a corpus over a declared occupation set. Occupations may have
    /// zero biographies (split parts), but every biography must use a
    /// declared occupation.
    pub fn with_occupations<I>(biographies: Vec<Biography>, occupations: I) -> Result<Self>
    where
        I: IntoIterator<Item = String>,
    {
        let occupations: Vec<String> = occupations.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut counts: BTreeMap<String, GroupCounts> = occupations
            .iter()
            .map(|o| (o.clone(), GroupCounts::default()))
            .collect();
        let mut seen = HashSet::with_capacity(biographies.len());
        for b in &biographies {
            if !seen.insert(b.id.as_str()) {
                return Err(SnobError::Validation(format!("duplicate biography id {:?}", b.id)));
            }
            let slot = counts.get_mut(&b.occupation).ok_or_else(|| {
                SnobError::Validation(format!(
                    "biography {:?} has undeclared occupation {:?}",
                    b.id, b.occupation
                ))
            })?;
            slot.bump(b.pronoun_group);
        }
        Ok(Corpus {
            biographies,
            occupations,
            counts,
        })
    }

    pub fn biographies(&self) -> &[Biography] {
        &self.biographies
    }

    pub fn occupations(&self) -> &[String] {
        &self.occupations
    }

    pub fn occupation_index(&self, occupation: &str) -> Option<usize> {
        self.occupations.binary_search_by(|o| o.as_str().cmp(occupation)).ok()
    }

    pub fn counts(&self) -> &BTreeMap<String, GroupCounts> {
        &self.counts
    }

    pub fn counts_for(&self, occupation: &str) -> GroupCounts {
        self.counts.get(occupation).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.biographies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.biographies.is_empty()
    }

    /// The same corpus with indicators removed from every token list.
    pub fn scrubbed(&self, indicators: &IndicatorSet) -> Corpus {
        Corpus {
            biographies: self
                .biographies
                .iter()
                .map(|b| Biography {
                    tokens: scrub_tokens(&b.tokens, indicators),
                    ..b.clone()
                })
                .collect(),
            occupations: self.occupations.clone(),
            counts: self.counts.clone(),
        }
    }

    /// Hash of the biography ids in order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.biographies {
            h.update(b.id.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())[..16].to_string()
    }
}

/// Serialized corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    /// One JSON object per line: `id`, `occupation`, `pronoun_group`, `text`,
    /// optional `name`.
    #[default]
    JsonLines,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    occupation: String,
    pronoun_group: String,
    text: String,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Serialize)]
struct RawRecordOut<'a> {
    id: &'a str,
    occupation: &'a str,
    pronoun_group: PronounGroup,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<&'a str>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    match format {
        CorpusFormat::JsonLines => {
            let file = File::open(path).map_err(|e| SnobError::io(path, e))?;
            read_jsonl(BufReader::new(file), path)
        }
    }
}

fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Corpus> {
    let mut bios = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| SnobError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| SnobError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        let group: PronounGroup = raw.pronoun_group.parse().map_err(|_| {
            SnobError::Validation(format!("line {lineno}: unknown pronoun_group {:?}", raw.pronoun_group))
        })?;
        if raw.occupation.is_empty() {
            return Err(SnobError::Validation(format!("line {lineno}: empty occupation")));
        }
        let tokens = tokenize(&raw.text);
        if tokens.is_empty() {
            return Err(SnobError::Validation(format!(
                "line {lineno}: biography {:?} has no tokens",
                raw.id
            )));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(SnobError::Validation(format!(
                "line {lineno}: duplicate biography id {:?}",
                raw.id
            )));
        }
        bios.push(Biography {
            id: raw.id,
            occupation: raw.occupation,
            pronoun_group: group,
            tokens,
            name: raw.name,
        });
    }
    Corpus::new(bios)
}

/// Writes the corpus as JSON lines. The text field is the space-joined token
/// sequence, which tokenizes back to the same tokens.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| SnobError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| SnobError::io(path, e);
    for b in corpus.biographies() {
        let rec = RawRecordOut {
            id: &b.id,
            occupation: &b.occupation,
            pronoun_group: b.pronoun_group,
            text: b.tokens.join(" "),
            name: b.name.as_deref(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| io(e.into()))?;
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Per-occupation group sizes and the "she" share among binary biographies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationStats {
    pub occupation: String,
    pub she: usize,
    pub he: usize,
    pub nb: usize,
    /// `|S_c| / (|S_c| + |H_c|)`; `None` when the occupation has no she/he
    /// biographies.
    pub she_fraction: Option<f64>,
}

pub fn group_stats(corpus: &Corpus) -> Vec<OccupationStats> {
    corpus
        .counts()
        .iter()
        .map(|(occ, c)| {
            if c.she + c.he == 0 {
                warn!("occupation {occ:?} has no she/he biographies; its share is undefined");
            }
            OccupationStats {
                occupation: occ.clone(),
                she: c.she,
                he: c.he,
                nb: c.nb,
                she_fraction: c.she_fraction(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.65,
            validation: 0.10,
            test: 0.25,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(SnobError::Config(format!("split ratios must be positive: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SnobError::Config(format!("split ratios must sum to 1: {parts:?}")));
        }
        Ok(())
    }
}

/// Which part of a split a biography went to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Cells that had fewer than three members and went wholly to train.
    pub small_cells: Vec<(String, PronounGroup)>,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &Corpus {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Validation => &self.validation,
            SplitPart::Test => &self.test,
        }
    }

    /// Hash identifying the assignment of biographies to parts.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.train, &self.validation, &self.test] {
            h.update(part.fingerprint().as_bytes());
            h.update([0xffu8]);
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    /// The split with indicators scrubbed from every part.
    pub fn scrubbed(&self, indicators: &IndicatorSet) -> DatasetSplit {
        DatasetSplit {
            train: self.train.scrubbed(indicators),
            validation: self.validation.scrubbed(indicators),
            test: self.test.scrubbed(indicators),
            ratios: self.ratios,
            seed: self.seed,
            small_cells: self.small_cells.clone(),
        }
    }
}

/// Splits every (occupation, pronoun group) cell separately so that each
/// part holds the requested share of every cell, up to rounding.
pub fn stratified_split(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    if corpus.is_empty() {
        return Err(SnobError::Config("cannot split an empty corpus".into()));
    }
    let mut cells: BTreeMap<(&str, PronounGroup), Vec<usize>> = BTreeMap::new();
    for (i, b) in corpus.biographies().iter().enumerate() {
        cells
            .entry((b.occupation.as_str(), b.pronoun_group))
            .or_default()
            .push(i);
    }
    let mut assignment = vec![SplitPart::Train; corpus.len()];
    let mut small_cells = Vec::new();
    for ((occ, group), mut members) in cells {
        let n = members.len();
        if n < 3 {
            warn!("cell ({occ}, {group}) has {n} biographies; assigning all to train");
            small_cells.push((occ.to_string(), group));
            continue;
        }
        let mut rng = seed::substream(seed, &format!("split/{occ}/{group}"));
        members.shuffle(&mut rng);
        let n_train = (ratios.train * n as f64).round() as usize;
        let n_val = ((ratios.validation * n as f64).round() as usize).min(n - n_train);
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = if k < n_train {
                SplitPart::Train
            } else if k < n_train + n_val {
                SplitPart::Validation
            } else {
                SplitPart::Test
            };
        }
    }
    let mut parts: [Vec<Biography>; 3] = Default::default();
    for (b, part) in corpus.biographies().iter().zip(&assignment) {
        let slot = match part {
            SplitPart::Train => 0,
            SplitPart::Validation => 1,
            SplitPart::Test => 2,
        };
        parts[slot].push(b.clone());
    }
    let [train, validation, test] = parts;
    let occs = || corpus.occupations().iter().cloned();
    Ok(DatasetSplit {
        train: Corpus::with_occupations(train, occs())?,
        validation: Corpus::with_occupations(validation, occs())?,
        test: Corpus::with_occupations(test, occs())?,
        ratios,
        seed,
        small_cells,
    })
}
