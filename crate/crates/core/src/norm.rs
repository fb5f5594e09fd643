//! The gender-norm classifier `G` and the word-level tools built around it:
//! balancing weights, lexicon validation, chi-squared task relevance, the
//! occupation-specific `G^c-irrev` and comparative gendered-word extraction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::corpus::{Biography, Corpus, IndicatorSet, PronounGroup};
use crate::error::{Result, SnobError};
use crate::features::{FeatureVector, Featurizer};
use crate::linear::{predict_proba, train_logistic, LinearModel, TrainConfig, TrainingSet};
use crate::metrics::{spearman, Correlation};
use crate::text::{word_weight, Repr, Vocabulary, WordSpace};

pub const DEFAULT_CHI2_LEVEL: f64 = 0.99;
pub const MIN_LEXICON_OVERLAP: usize = 10;

/// Per-biography weights that give "she" and "he" equal total weight inside
/// each occupation: `|H_c| / max(|S_c|, |H_c|)` for "she" biographies and
/// `|S_c| / max(|S_c|, |H_c|)` for "he" biographies. Nonbinary biographies
/// get 0. An occupation with only one binary group keeps weight 1.
pub fn balance_weights(corpus: &Corpus) -> Vec<f64> {
    let mut single = BTreeSet::new();
    let weights = corpus
        .biographies()
        .iter()
        .map(|b| {
            let c = corpus.counts_for(&b.occupation);
            let (s, h) = (c.she as f64, c.he as f64);
            match b.pronoun_group {
                PronounGroup::Nb => 0.0,
                _ if c.she == 0 || c.he == 0 => {
                    single.insert(b.occupation.as_str());
                    1.0
                }
                PronounGroup::She => h / s.max(h),
                PronounGroup::He => s / s.max(h),
            }
        })
        .collect();
    for occ in single {
        warn!("occupation {occ:?} has a single pronoun group; balancing weights left at 1");
    }
    weights
}

/// A "she" (1) versus "he" (0) classifier over indicator-free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormClassifier {
    model: LinearModel,
    indicators: IndicatorSet,
    /// Words left out of every document before featurization.
    excluded: BTreeSet<String>,
    /// Set for occupation-specific classifiers.
    occupation: Option<String>,
}

impl NormClassifier {
    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn repr(&self) -> Repr {
        self.model.repr()
    }

    pub fn excluded(&self) -> &BTreeSet<String> {
        &self.excluded
    }

    pub fn occupation(&self) -> Option<&str> {
        self.occupation.as_deref()
    }

    fn visible_tokens(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .filter(|t| !self.indicators.contains(t) && !self.excluded.contains(t.as_str()))
            .cloned()
            .collect()
    }

    pub fn featurize(&self, tokens: &[String], featurizer: Featurizer<'_>) -> Option<FeatureVector> {
        featurizer.featurize(&self.visible_tokens(tokens))
    }

    /// Probability that the text reads as "she"; `None` when the document has
    /// no representable token.
    pub fn score(&self, tokens: &[String], featurizer: Featurizer<'_>) -> Result<Option<f64>> {
        self.featurize(tokens, featurizer)
            .map(|x| predict_proba(&self.model, &x))
            .transpose()
    }

    /// Scores every biography of `corpus`, in order.
    pub fn score_corpus(&self, corpus: &Corpus, featurizer: Featurizer<'_>) -> Result<Vec<Option<f64>>> {
        corpus
            .biographies()
            .par_iter()
            .map(|b| self.score(&b.tokens, featurizer))
            .collect()
    }

    /// Share of "she"/"he" biographies classified correctly at 0.5.
    pub fn accuracy(&self, corpus: &Corpus, featurizer: Featurizer<'_>) -> Result<f64> {
        let scores = self.score_corpus(corpus, featurizer)?;
        let (mut hit, mut n) = (0usize, 0usize);
        for (b, s) in corpus.biographies().iter().zip(scores) {
            let Some(s) = s else { continue };
            match b.pronoun_group {
                PronounGroup::She => hit += usize::from(s >= 0.5),
                PronounGroup::He => hit += usize::from(s < 0.5),
                PronounGroup::Nb => continue,
            }
            n += 1;
        }
        if n == 0 {
            return Err(SnobError::Undefined("no binary biographies to evaluate".into()));
        }
        Ok(hit as f64 / n as f64)
    }
}

fn fit_norm(
    train: &Corpus,
    featurizer: Featurizer<'_>,
    indicators: &IndicatorSet,
    excluded: BTreeSet<String>,
    occupation: Option<String>,
    cfg: &TrainConfig,
) -> Result<NormClassifier> {
    let mut g = NormClassifier {
        model: LinearModel::zeros(&featurizer.space()),
        indicators: indicators.clone(),
        excluded,
        occupation,
    };
    let alpha = balance_weights(train);
    let binary: Vec<(&Biography, f64)> = train
        .biographies()
        .iter()
        .zip(alpha)
        .filter(|(b, _)| b.pronoun_group.is_binary())
        .collect();
    let feats: Vec<Option<FeatureVector>> = binary
        .par_iter()
        .map(|(b, _)| g.featurize(&b.tokens, featurizer))
        .collect();
    let (mut rows, mut labels, mut weights) = (Vec::new(), Vec::new(), Vec::new());
    for ((b, w), f) in binary.iter().zip(&feats) {
        match f {
            Some(f) => {
                rows.push(f);
                labels.push(b.pronoun_group == PronounGroup::She);
                weights.push(*w);
            }
            None => warn!("biography {} has no representable token for the norm classifier", b.id),
        }
    }
    let data = TrainingSet::new(featurizer.space(), rows, labels, Some(weights))?;
    g.model = train_logistic(&data, cfg)?;
    Ok(g)
}

/// Trains `G` on word embeddings of the scrubbed training corpus with
/// balancing weights.
pub fn train_norm_classifier(
    train: &Corpus,
    featurizer: Featurizer<'_>,
    indicators: &IndicatorSet,
    cfg: &TrainConfig,
) -> Result<NormClassifier> {
    fit_norm(train, featurizer, indicators, BTreeSet::new(), None, cfg)
}

/// Human gender association scores, 1 (feminine) to 5 (masculine).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenderLexicon {
    entries: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LexiconRow {
    word: String,
    score: f64,
}

impl GenderLexicon {
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (w, s) in entries {
            let w = w.into();
            if !(1.0..=5.0).contains(&s) {
                return Err(SnobError::Validation(format!(
                    "lexicon score {s} for {w:?} is outside [1, 5]"
                )));
            }
            map.insert(w.to_lowercase(), s);
        }
        Ok(GenderLexicon { entries: map })
    }

    /// Reads a CSV file with a `word,score` header.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<LexiconRow>() {
            let r = rec.map_err(|e| csv_error(path, e))?;
            rows.push((r.word, r.score));
        }
        Self::from_entries(rows).map_err(|e| match e {
            SnobError::Validation(m) => SnobError::Format {
                path: path.to_path_buf(),
                line: 0,
                message: m,
            },
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(w, s)| (w.as_str(), *s))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for (word, &score) in &self.entries {
            w.serialize(LexiconRow {
                word: word.clone(),
                score,
            })
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| SnobError::io(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> SnobError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SnobError::io(path, io),
        kind => SnobError::Format {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconValidation {
    /// Spearman correlation between the human scores and the negated word
    /// weights of `G`, so masculine words point the same way on both sides.
    pub correlation: Correlation,
    pub shared_words: usize,
}

pub fn validate_against_lexicon(
    g: &NormClassifier,
    lexicon: &GenderLexicon,
    space: WordSpace<'_>,
) -> Result<LexiconValidation> {
    let mut human = Vec::new();
    let mut model = Vec::new();
    for (w, s) in lexicon.entries() {
        match word_weight(w, g.model(), space) {
            Ok(beta) => {
                human.push(s);
                model.push(-beta);
            }
            Err(SnobError::Lookup(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if human.len() < MIN_LEXICON_OVERLAP {
        return Err(SnobError::Undefined(format!(
            "only {} lexicon words are in the model's feature space (need {MIN_LEXICON_OVERLAP})",
            human.len()
        )));
    }
    Ok(LexiconValidation {
        correlation: spearman(&human, &model)?,
        shared_words: human.len(),
    })
}

/// Counts for one word and one occupation: rows are (occupation, every other
/// occupation), columns are (the word, every other in-vocabulary token).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: [[u64; 2]; 2],
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable {
            counts: [[a, b], [c, d]],
        }
    }

    /// Pearson statistic with Yates' continuity correction; `None` when a
    /// row or column total is zero.
    pub fn yates_statistic(&self) -> Option<f64> {
        let m = self.counts.map(|r| r.map(|v| v as f64));
        let rows = [m[0][0] + m[0][1], m[1][0] + m[1][1]];
        let cols = [m[0][0] + m[1][0], m[0][1] + m[1][1]];
        let n = rows[0] + rows[1];
        if rows.contains(&0.0) || cols.contains(&0.0) {
            return None;
        }
        let mut stat = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let e = rows[i] * cols[j] / n;
                let dev = ((m[i][j] - e).abs() - 0.5).max(0.0);
                stat += dev * dev / e;
            }
        }
        Some(stat)
    }

    pub fn p_value(&self) -> Option<f64> {
        let dist = ChiSquared::new(1.0).expect("one degree of freedom");
        self.yates_statistic().map(|s| dist.sf(s))
    }

    pub fn is_significant(&self, level: f64) -> bool {
        self.yates_statistic().is_some_and(|s| s > chi2_critical(level))
    }
}

/// Critical value of the chi-squared distribution with one degree of
/// freedom: the square of the standard normal `(1 + level) / 2` quantile.
pub fn chi2_critical(level: f64) -> f64 {
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    z * z
}

/// Token counts per occupation for one pronoun group.
struct GroupTokenCounts {
    per_occupation: Vec<Vec<u64>>,
    occupation_totals: Vec<u64>,
    word_totals: Vec<u64>,
    total: u64,
}

impl GroupTokenCounts {
    fn count(train: &Corpus, vocab: &Vocabulary, group: PronounGroup) -> Self {
        let k = train.occupations().len();
        let mut per_occupation = vec![vec![0u64; vocab.len()]; k];
        for b in train.biographies().iter().filter(|b| b.pronoun_group == group) {
            let Some(o) = train.occupation_index(&b.occupation) else {
                continue;
            };
            for t in &b.tokens {
                if let Some(i) = vocab.index_of(t) {
                    per_occupation[o][i] += 1;
                }
            }
        }
        let occupation_totals: Vec<u64> = per_occupation.iter().map(|c| c.iter().sum()).collect();
        let mut word_totals = vec![0u64; vocab.len()];
        for c in &per_occupation {
            for (t, v) in word_totals.iter_mut().zip(c) {
                *t += v;
            }
        }
        let total = occupation_totals.iter().sum();
        GroupTokenCounts {
            per_occupation,
            occupation_totals,
            word_totals,
            total,
        }
    }

    fn table(&self, occupation: usize, word: usize) -> ContingencyTable {
        let a = self.per_occupation[occupation][word];
        let b = self.occupation_totals[occupation] - a;
        let c = self.word_totals[word] - a;
        let d = self.total - self.occupation_totals[occupation] - c;
        ContingencyTable::new(a, b, c, d)
    }
}

/// For each occupation, the vocabulary words whose use differs significantly
/// between that occupation and the rest, within the "she" population or
/// within the "he" population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRelevanceMap {
    level: f64,
    vocabulary_size: usize,
    relevant: BTreeMap<String, BTreeSet<String>>,
}

impl TaskRelevanceMap {
    pub fn compute(train: &Corpus, vocab: &Vocabulary, level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(SnobError::Config(format!(
                "significance level must be in (0, 1), got {level}"
            )));
        }
        let groups = [
            GroupTokenCounts::count(train, vocab, PronounGroup::She),
            GroupTokenCounts::count(train, vocab, PronounGroup::He),
        ];
        let critical = chi2_critical(level);
        let relevant = train
            .occupations()
            .par_iter()
            .enumerate()
            .map(|(k, occ)| {
                let words = (0..vocab.len())
                    .filter(|&w| {
                        groups
                            .iter()
                            .any(|g| g.table(k, w).yates_statistic().is_some_and(|s| s > critical))
                    })
                    .map(|w| vocab.word(w).to_string())
                    .collect();
                (occ.clone(), words)
            })
            .collect();
        Ok(TaskRelevanceMap {
            level,
            vocabulary_size: vocab.len(),
            relevant,
        })
    }

    /// A map that marks no word relevant for any of `occupations`.
    pub fn empty<I: IntoIterator<Item = String>>(occupations: I, vocabulary_size: usize) -> Self {
        TaskRelevanceMap {
            level: DEFAULT_CHI2_LEVEL,
            vocabulary_size,
            relevant: occupations.into_iter().map(|o| (o, BTreeSet::new())).collect(),
        }
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn relevant_words(&self, occupation: &str) -> Option<&BTreeSet<String>> {
        self.relevant.get(occupation)
    }

    /// Share of the vocabulary not relevant to the occupation.
    pub fn irrelevant_fraction(&self, occupation: &str) -> Option<f64> {
        let r = self.relevant.get(occupation)?;
        if self.vocabulary_size == 0 {
            return None;
        }
        Some(1.0 - r.len() as f64 / self.vocabulary_size as f64)
    }

    pub fn occupations(&self) -> impl Iterator<Item = &str> {
        self.relevant.keys().map(String::as_str)
    }
}

pub fn task_relevant_words(
    train: &Corpus,
    vocab: &Vocabulary,
    occupation: &str,
    level: f64,
) -> Result<BTreeSet<String>> {
    if train.occupation_index(occupation).is_none() {
        return Err(SnobError::Lookup(format!("unknown occupation {occupation:?}")));
    }
    let mut map = TaskRelevanceMap::compute(train, vocab, level)?;
    Ok(map.relevant.remove(occupation).unwrap_or_default())
}

/// `G^c-irrev`: `G` retrained with the occupation's task-relevant words left
/// out of every document. With no relevant words it is identical to `G`.
pub fn train_irrelevant_norm_classifier(
    train: &Corpus,
    occupation: &str,
    relevance: &TaskRelevanceMap,
    featurizer: Featurizer<'_>,
    indicators: &IndicatorSet,
    cfg: &TrainConfig,
) -> Result<NormClassifier> {
    let excluded = relevance
        .relevant_words(occupation)
        .ok_or_else(|| SnobError::Lookup(format!("occupation {occupation:?} is not in the relevance map")))?
        .clone();
    fit_norm(
        train,
        featurizer,
        indicators,
        excluded,
        Some(occupation.to_string()),
        cfg,
    )
}

/// Source of per-word weights.
pub trait WordWeights {
    /// `None` when the word is outside the model's feature space.
    fn beta(&self, word: &str) -> Option<f64>;
}

pub struct ModelWords<'a> {
    pub model: &'a LinearModel,
    pub space: WordSpace<'a>,
}

impl WordWeights for ModelWords<'_> {
    fn beta(&self, word: &str) -> Option<f64> {
        word_weight(word, self.model, self.space).ok()
    }
}

/// Mean weight over several models, e.g. the two halves of a decoupled
/// classifier.
pub struct MeanWords<'a>(pub Vec<ModelWords<'a>>);

impl WordWeights for MeanWords<'_> {
    fn beta(&self, word: &str) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.0.iter().map(|m| m.beta(word)).collect();
        let vals = vals?;
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderedWord {
    pub word: String,
    pub beta_yc: f64,
    pub beta_yc_prime: f64,
    pub beta_g: f64,
}

/// Words that are gendered (`|beta_G| > t`), important to one classifier
/// (`|beta_Yc| > t`) and clearly more important to it than to the other
/// (`|beta_Yc| > t_prime * |beta_Yc'|`). Sorted by `|beta_Yc|`, largest first.
pub fn comparative_gendered_words<'w, I>(
    yc: &dyn WordWeights,
    yc_prime: &dyn WordWeights,
    g: &dyn WordWeights,
    t: f64,
    t_prime: f64,
    candidates: I,
) -> Vec<GenderedWord>
where
    I: IntoIterator<Item = &'w str>,
{
    let mut out: Vec<GenderedWord> = candidates
        .into_iter()
        .filter_map(|w| {
            let (a, b, gw) = (yc.beta(w)?, yc_prime.beta(w)?, g.beta(w)?);
            (a.abs() > t && gw.abs() > t && a.abs() > t_prime * b.abs()).then(|| GenderedWord {
                word: w.to_string(),
                beta_yc: a,
                beta_yc_prime: b,
                beta_g: gw,
            })
        })
        .collect();
    out.sort_by(|x, y| {
        y.beta_yc
            .abs()
            .total_cmp(&x.beta_yc.abs())
            .then_with(|| x.word.cmp(&y.word))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Biography;

    fn bio(id: &str, occ: &str, g: PronounGroup, text: &str) -> Biography {
        Biography {
            id: id.into(),
            occupation: occ.into(),
            pronoun_group: g,
            tokens: text.split_whitespace().map(String::from).collect(),
            name: None,
        }
    }

    /// `N (max(0, |ad - bc| - N/2))^2 / (row1 row2 col1 col2)`
    fn closed_form_yates(a: f64, b: f64, c: f64, d: f64) -> f64 {
        let n = a + b + c + d;
        let num = ((a * d - b * c).abs() - n / 2.0).max(0.0);
        n * num * num / ((a + b) * (c + d) * (a + c) * (b + d))
    }

    #[test]
    fn balance_weights_equalize_groups() {
        use PronounGroup::*;
        let corpus = Corpus::new(vec![
            bio("1", "nurse", She, "a"),
            bio("2", "nurse", She, "a"),
            bio("3", "nurse", She, "a"),
            bio("4", "nurse", He, "a"),
            bio("5", "nurse", Nb, "a"),
            bio("6", "poet", She, "a"),
        ])
        .unwrap();
        let w = balance_weights(&corpus);
        assert_eq!(w, vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn chi2_critical_value() {
        assert!((chi2_critical(0.99) - 6.634_896_601).abs() < 1e-6);
        assert!((chi2_critical(0.95) - 3.841_458_821).abs() < 1e-6);
    }

    #[test]
    fn yates_matches_closed_form() {
        for &(a, b, c, d) in &[
            (10, 90, 40, 860),
            (3, 1, 1, 3),
            (50, 50, 50, 50),
            (0, 7, 12, 300),
            (1, 0, 0, 1),
        ] {
            let t = ContingencyTable::new(a, b, c, d);
            let expect = closed_form_yates(a as f64, b as f64, c as f64, d as f64);
            assert!(
                (t.yates_statistic().unwrap() - expect).abs() < 1e-9 * expect.max(1.0),
                "{a} {b} {c} {d}"
            );
        }
        assert_eq!(ContingencyTable::new(0, 0, 4, 5).yates_statistic(), None);
        assert!(!ContingencyTable::new(0, 5, 0, 5).is_significant(0.99));
        assert!(ContingencyTable::new(80, 20, 20, 80).is_significant(0.99));
    }

    #[test]
    fn relevance_finds_occupation_words() {
        use PronounGroup::*;
        let mut bios = Vec::new();
        for i in 0..30 {
            bios.push(bio(&format!("s{i}"), "chef", She, "cook cook meal the the and"));
            bios.push(bio(&format!("h{i}"), "chef", He, "cook meal the and"));
            bios.push(bio(&format!("t{i}"), "pilot", She, "fly plane the the and"));
            bios.push(bio(&format!("u{i}"), "pilot", He, "fly plane plane the and"));
        }
        let corpus = Corpus::new(bios).unwrap();
        let vocab = Vocabulary::build(
            corpus.biographies().iter().map(|b| b.tokens.as_slice()),
            1,
            &IndicatorSet::default(),
        )
        .unwrap();
        let map = TaskRelevanceMap::compute(&corpus, &vocab, 0.99).unwrap();
        let chef = map.relevant_words("chef").unwrap();
        assert!(chef.contains("cook") && chef.contains("meal") && chef.contains("fly"));
        assert!(!chef.contains("and"));
        assert!(map.irrelevant_fraction("chef").unwrap() < 1.0);
        assert!(task_relevant_words(&corpus, &vocab, "nobody", 0.99).is_err());
        let single = task_relevant_words(&corpus, &vocab, "pilot", 0.99).unwrap();
        assert_eq!(&single, map.relevant_words("pilot").unwrap());
    }

    struct Fixed(BTreeMap<&'static str, f64>);
    impl WordWeights for Fixed {
        fn beta(&self, w: &str) -> Option<f64> {
            self.0.get(w).copied()
        }
    }

    #[test]
    fn gendered_word_thresholds() {
        let yc = Fixed([("a", 1.0), ("b", 0.9), ("c", 0.2), ("d", 2.0)].into());
        let yp = Fixed([("a", 0.1), ("b", 1.4), ("c", 0.0), ("d", -0.5)].into());
        let g = Fixed([("a", -0.8), ("b", 0.9), ("c", 0.9), ("d", 0.1)].into());
        let words = comparative_gendered_words(&yc, &yp, &g, 0.5, 0.7, ["a", "b", "c", "d", "e"]);
        assert_eq!(words.iter().map(|w| w.word.as_str()).collect::<Vec<_>>(), vec!["a"]);
        assert!(comparative_gendered_words(&yc, &yp, &g, f64::INFINITY, 0.7, ["a", "b", "c", "d"]).is_empty());
    }

    #[test]
    fn lexicon_rejects_out_of_range() {
        assert!(GenderLexicon::from_entries([("x", 0.5)]).is_err());
        assert_eq!(GenderLexicon::from_entries([("X", 3.0)]).unwrap().len(), 1);
    }
}
