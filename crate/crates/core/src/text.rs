//! Tokenization and the two document representations used by the linear
//! models: bag-of-words counts over a training vocabulary, and the mean of
//! pretrained word vectors.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, IndicatorSet, PronounGroup};
use crate::error::{Result, SnobError};
use crate::linear::LinearModel;

/// Splits text into lowercase runs of letters. Digits, punctuation and
/// whitespace all act as separators.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphabetic() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Document representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Repr {
    Bow,
    We,
}

impl Repr {
    pub fn as_str(self) -> &'static str {
        match self {
            Repr::Bow => "BOW",
            Repr::We => "WE",
        }
    }
}

impl std::fmt::Display for Repr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Repr {
    type Err = SnobError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BOW" => Ok(Repr::Bow),
            "WE" => Ok(Repr::We),
            other => Err(SnobError::Config(format!("unknown representation {other:?}"))),
        }
    }
}

/// Word to feature-index map for the bag-of-words space. Indices follow the
/// lexicographic order of the words.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    min_document_frequency: usize,
}

impl Vocabulary {
    /// Builds the vocabulary from tokenized documents: every non-indicator
    /// word that occurs in at least `min_df` documents.
    pub fn build<'a, I>(documents: I, min_df: usize, indicators: &IndicatorSet) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if min_df == 0 {
            return Err(SnobError::Config("min_df must be at least 1".into()));
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        let mut n_docs = 0usize;
        for doc in documents {
            n_docs += 1;
            let unique: HashSet<&str> = doc.iter().map(String::as_str).collect();
            for w in unique {
                *df.entry(w).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(SnobError::Config(
                "cannot build a vocabulary from zero documents".into(),
            ));
        }
        let words: BTreeSet<String> = df
            .into_iter()
            .filter(|(w, n)| *n >= min_df && !indicators.contains(w))
            .map(|(w, _)| w.to_string())
            .collect();
        if words.is_empty() {
            return Err(SnobError::Config(format!("vocabulary is empty with min_df = {min_df}")));
        }
        let mut vocab = Self::from_words(words);
        vocab.min_document_frequency = min_df;
        Ok(vocab)
    }

    /// A vocabulary over an explicit word list (sorted and deduplicated).
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words
            .into_iter()
            .map(Into::into)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary {
            words,
            index,
            min_document_frequency: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn min_document_frequency(&self) -> usize {
        self.min_document_frequency
    }

    /// Stable identifier of this feature space.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        format!("vocab:{}", &hex::encode(h.finalize())[..16])
    }
}

/// Vocabulary over the she/he biographies of a training corpus. Tokens are
/// expected to be scrubbed already; indicators are excluded regardless.
pub fn build_vocabulary(train: &Corpus, min_df: usize, indicators: &IndicatorSet) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(SnobError::Config("training corpus is empty".into()));
    }
    Vocabulary::build(
        train
            .biographies()
            .iter()
            .filter(|b| b.pronoun_group != PronounGroup::Nb)
            .map(|b| b.tokens.as_slice()),
        min_df,
        indicators,
    )
}

/// `(index, count)` pairs sorted by index, counts strictly positive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    /// Builds from unsorted pairs; duplicate indices are summed and
    /// non-positive values dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in pairs {
            *acc.entry(i).or_insert(0.0) += v;
        }
        SparseVector {
            entries: acc.into_iter().filter(|&(_, v)| v > 0.0).collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v).sum()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|&(i, _)| i)
    }
}

/// Term counts of in-vocabulary tokens. Out-of-vocabulary tokens are ignored.
pub fn featurize_bow(tokens: &[String], vocab: &Vocabulary) -> SparseVector {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokens {
        if let Some(i) = vocab.index_of(t) {
            *counts.entry(i).or_insert(0.0) += 1.0;
        }
    }
    SparseVector {
        entries: counts.into_iter().collect(),
    }
}

/// Dense real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector(pub Vec<f64>);

impl DenseVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Word vectors of a fixed dimension, stored row-major in single precision.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingTable {
    /// Builds a table from in-memory vectors. Later duplicates replace earlier
    /// ones.
    pub fn from_vectors<I>(vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut table = EmbeddingTable {
            dim: 0,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        };
        for (word, v) in vectors {
            if table.words.is_empty() {
                table.dim = v.len();
            }
            if v.len() != table.dim {
                return Err(SnobError::Dimension {
                    expected: table.dim,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(SnobError::Validation(format!("non-finite vector for {word:?}")));
            }
            table.insert(word, v.iter().map(|&x| x as f32));
        }
        if table.dim == 0 {
            return Err(SnobError::Validation("embedding table is empty".into()));
        }
        Ok(table)
    }

    fn insert(&mut self, word: String, values: impl Iterator<Item = f32>) {
        match self.index.get(&word) {
            Some(&row) => {
                let start = row * self.dim;
                for (slot, x) in self.data[start..start + self.dim].iter_mut().zip(values) {
                    *slot = x;
                }
            }
            None => {
                self.index.insert(word.clone(), self.words.len());
                self.words.push(word);
                self.data.extend(values);
            }
        }
    }

    /// Reads the common text vector format: an optional `<count> <dim>` header
    /// and then `word v1 ... vd` per line. When `keep` is given, only words
    /// for which it returns true are stored.
    pub fn load(path: &Path, keep: Option<&dyn Fn(&str) -> bool>) -> Result<Self> {
        let file = File::open(path).map_err(|e| SnobError::io(path, e))?;
        let reader = BufReader::new(file);
        let mut table = EmbeddingTable {
            dim: 0,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        };
        let format_err = |line: usize, message: String| SnobError::Format {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut declared_dim: Option<usize> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| SnobError::io(path, e))?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            if lineno == 1 && rest.len() == 1 {
                if let (Ok(_), Ok(d)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                    declared_dim = Some(d);
                    continue;
                }
            }
            let expected = declared_dim.unwrap_or(if table.dim == 0 { rest.len() } else { table.dim });
            if rest.len() != expected {
                return Err(format_err(
                    lineno,
                    format!("expected {expected} components, found {}", rest.len()),
                ));
            }
            if expected == 0 {
                return Err(format_err(lineno, "vector has no components".into()));
            }
            table.dim = expected;
            if let Some(keep) = keep {
                if !keep(word) {
                    continue;
                }
            }
            let mut values = Vec::with_capacity(expected);
            for raw in rest {
                let x: f32 = raw
                    .parse()
                    .map_err(|_| format_err(lineno, format!("bad number {raw:?}")))?;
                if !x.is_finite() {
                    return Err(format_err(lineno, format!("non-finite component {raw:?}")));
                }
                values.push(x);
            }
            table.insert(word.to_string(), values.into_iter());
        }
        if table.dim == 0 {
            return Err(format_err(0, "no vectors found".into()));
        }
        Ok(table)
    }

    /// Writes the table with a `<count> <dim>` header.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| SnobError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| SnobError::io(path, e);
        writeln!(out, "{} {}", self.words.len(), self.dim).map_err(io)?;
        for (row, word) in self.words.iter().enumerate() {
            write!(out, "{word}").map_err(io)?;
            for x in &self.data[row * self.dim..(row + 1) * self.dim] {
                write!(out, " {x}").map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&row| &self.data[row * self.dim..(row + 1) * self.dim])
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn fingerprint(&self) -> String {
        let mut sorted: Vec<&String> = self.words.iter().collect();
        sorted.sort();
        let mut h = Sha256::new();
        h.update(self.dim.to_le_bytes());
        for w in sorted {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        format!("emb:{}", &hex::encode(h.finalize())[..16])
    }
}

/// Loads an embedding file, keeping only vocabulary words when a vocabulary
/// is given.
pub fn load_embedding_table(path: &Path, vocab: Option<&Vocabulary>) -> Result<EmbeddingTable> {
    match vocab {
        Some(v) => EmbeddingTable::load(path, Some(&|w: &str| v.contains(w))),
        None => EmbeddingTable::load(path, None),
    }
}

/// Mean of the vectors of in-table tokens, counting repeated tokens each
/// time they occur.
pub fn featurize_we(tokens: &[String], table: &EmbeddingTable) -> Result<DenseVector> {
    featurize_we_excluding(tokens, table, None)
}

/// Same as [`featurize_we`] but skipping any token in `exclude`.
pub fn featurize_we_excluding(
    tokens: &[String],
    table: &EmbeddingTable,
    exclude: Option<&HashSet<String>>,
) -> Result<DenseVector> {
    let mut sum = vec![0.0f64; table.dim()];
    let mut n = 0usize;
    for t in tokens {
        if exclude.is_some_and(|ex| ex.contains(t)) {
            continue;
        }
        if let Some(v) = table.vector(t) {
            for (s, &x) in sum.iter_mut().zip(v) {
                *s += x as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(SnobError::Lookup("no token of the document has an embedding".into()));
    }
    let inv = 1.0 / n as f64;
    Ok(DenseVector(sum.into_iter().map(|s| s * inv).collect()))
}

/// The feature space a word weight is read from.
#[derive(Debug, Clone, Copy)]
pub enum WordSpace<'a> {
    Bow(&'a Vocabulary),
    We(&'a EmbeddingTable),
}

/// Weight of a word in a linear model: the raw coefficient for bag-of-words
/// models, the cosine between the word vector and the coefficient vector for
/// embedding models. A zero vector on either side gives 0.
pub fn word_weight(word: &str, model: &LinearModel, space: WordSpace<'_>) -> Result<f64> {
    match space {
        WordSpace::Bow(vocab) => {
            let i = vocab
                .index_of(word)
                .ok_or_else(|| SnobError::Lookup(format!("{word:?} is not in the vocabulary")))?;
            model.weights().get(i).copied().ok_or(SnobError::Dimension {
                expected: vocab.len(),
                actual: model.dim(),
            })
        }
        WordSpace::We(table) => {
            let e = table
                .vector(word)
                .ok_or_else(|| SnobError::Lookup(format!("{word:?} has no embedding")))?;
            let w = model.weights();
            if w.len() != e.len() {
                return Err(SnobError::Dimension {
                    expected: e.len(),
                    actual: w.len(),
                });
            }
            Ok(cosine(e.iter().map(|&x| x as f64), w.iter().copied()))
        }
    }
}

pub(crate) fn cosine(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}
