//! Audit runs: configuration and its hash, the split → features → models →
//! norm classifier → metrics pipeline, imported external scores, and the
//! report and plot-data files.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    load_corpus, Biography, Corpus, CorpusFormat, DatasetSplit, IndicatorSet, PronounGroup, SplitPart, SplitRatios,
    DEFAULT_INDICATORS,
};
use crate::error::{Result, SnobError};
use crate::features::{FeatureVector, Featurizer};
use crate::interventions::{
    decide, fit_group_thresholds, predict_with_intervention, train_decoupled, train_preprocessed_models,
    DecoupledModels, GroupThresholds, InterventionKind, InterventionSpec, Prediction, ScoringModels,
};
use crate::linear::{argmax, train_one_vs_all, write_model_set, OccupationModelSet, TrainConfig};
use crate::metrics::{
    assemble_report, expected_tpr, snob_nonbinary, snob_single, ApproachId, AuditReport, Correlation, NonbinaryAudit,
    OccupationRun, Provenance, ReportExtras,
};
use crate::norm::{
    comparative_gendered_words, csv_error, train_irrelevant_norm_classifier, train_norm_classifier,
    validate_against_lexicon, GenderLexicon, GenderedWord, LexiconValidation, MeanWords, ModelWords, NormClassifier,
    TaskRelevanceMap, WordWeights, DEFAULT_CHI2_LEVEL,
};
use crate::text::{build_vocabulary, EmbeddingTable, Repr, Vocabulary, WordSpace};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const OUTPUT_DIR_ENV: &str = "SNOB_OUTPUT_DIR";
pub const REPORT_FILE: &str = "report.json";
pub const PLOT_FILE: &str = "snob_by_occupation.csv";
pub const IRREV_PLOT_FILE: &str = "snob_irrev_by_occupation.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalScoresSpec {
    pub path: PathBuf,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub nonbinary_corpus: Option<PathBuf>,
    pub external_scores: Vec<ExternalScoresSpec>,
    pub split: SplitRatios,
    pub seed: u64,
    pub reprs: Vec<Repr>,
    pub interventions: Vec<InterventionKind>,
    pub train: TrainConfig,
    pub indicators: Vec<String>,
    pub min_df: usize,
    pub chi2_level: f64,
    pub t: f64,
    pub t_prime: f64,
    /// Ordered pairs (Y_c, Y_c') compared in the gendered-word analysis.
    pub gendered_word_pairs: Vec<(InterventionKind, InterventionKind)>,
    /// Number of most imbalanced occupations in the gendered-word analysis.
    pub gendered_word_occupations: usize,
    /// Pronoun group whose test biographies define `r_c`.
    pub snob_group: PronounGroup,
    /// Split the PO thresholds are fitted on.
    pub calibration: SplitPart,
    pub randomized_thresholds: bool,
    /// Compute task relevance and `G^c-irrev`.
    pub robustness: bool,
    /// Also train a bag-of-words `G` for comparison.
    pub bow_norm_diagnostic: bool,
    /// Write per-approach score files next to the report.
    pub export_scores: bool,
    /// Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            corpus: None,
            embeddings: None,
            lexicon: None,
            nonbinary_corpus: None,
            external_scores: Vec::new(),
            split: SplitRatios::default(),
            seed: 0,
            reprs: vec![Repr::Bow, Repr::We],
            interventions: vec![
                InterventionKind::None,
                InterventionKind::Pr,
                InterventionKind::Po,
                InterventionKind::De,
            ],
            train: TrainConfig::default(),
            indicators: DEFAULT_INDICATORS.iter().map(|s| s.to_string()).collect(),
            min_df: 5,
            chi2_level: DEFAULT_CHI2_LEVEL,
            t: 0.5,
            t_prime: 0.7,
            gendered_word_pairs: vec![
                (InterventionKind::Po, InterventionKind::De),
                (InterventionKind::De, InterventionKind::Po),
            ],
            gendered_word_occupations: 6,
            snob_group: PronounGroup::She,
            calibration: SplitPart::Validation,
            randomized_thresholds: false,
            robustness: false,
            bow_norm_diagnostic: false,
            export_scores: false,
            output_dir: None,
        }
    }
}

impl AuditConfig {
    /// Reads a JSON config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SnobError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| SnobError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks ranges and returns the config with intervention and repr lists
    /// sorted and deduplicated.
    pub fn validated(&self) -> Result<AuditConfig> {
        let mut cfg = self.clone();
        cfg.split.validate()?;
        cfg.train.validate()?;
        cfg.reprs.sort();
        cfg.reprs.dedup();
        cfg.interventions.sort();
        cfg.interventions.dedup();
        if cfg.interventions.is_empty() {
            return Err(SnobError::Config("no interventions requested".into()));
        }
        if !(cfg.chi2_level > 0.0 && cfg.chi2_level < 1.0) {
            return Err(SnobError::Config(format!(
                "chi2_level must be in (0, 1), got {}",
                cfg.chi2_level
            )));
        }
        if !(cfg.t >= 0.0) || !(cfg.t_prime >= 0.0) {
            return Err(SnobError::Config("T and T' must be non-negative".into()));
        }
        if cfg.min_df == 0 {
            return Err(SnobError::Config("min_df must be >= 1".into()));
        }
        if !cfg.snob_group.is_binary() {
            return Err(SnobError::Config("snob_group must be she or he".into()));
        }
        if cfg.calibration == SplitPart::Train {
            return Err(SnobError::Config(
                "thresholds must be calibrated on validation or test".into(),
            ));
        }
        let mut labels = HashSet::new();
        for e in &cfg.external_scores {
            if e.label.is_empty() || !labels.insert(e.label.as_str()) {
                return Err(SnobError::Config(format!(
                    "external score labels must be unique and non-empty: {:?}",
                    e.label
                )));
            }
        }
        Ok(cfg)
    }

    pub fn indicator_set(&self) -> IndicatorSet {
        IndicatorSet::new(self.indicators.iter().cloned())
    }

    fn hashable(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self).map_err(|e| SnobError::Config(e.to_string()))?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        Ok(v)
    }
}

/// External per-biography, per-occupation scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub label: String,
    occupations: Vec<String>,
    scores: BTreeMap<String, Vec<Option<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    bio_id: String,
    occupation: String,
    score: f64,
}

impl ScoreTable {
    pub fn new(label: impl Into<String>, occupations: Vec<String>) -> Self {
        ScoreTable {
            label: label.into(),
            occupations,
            scores: BTreeMap::new(),
        }
    }

    pub fn occupations(&self) -> &[String] {
        &self.occupations
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn insert(&mut self, bio_id: &str, occupation: &str, score: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(SnobError::Validation(format!(
                "score {score} for ({bio_id}, {occupation}) is outside [0, 1]"
            )));
        }
        let k = self
            .occupations
            .iter()
            .position(|o| o == occupation)
            .ok_or_else(|| SnobError::Validation(format!("unknown occupation {occupation:?}")))?;
        let n = self.occupations.len();
        let row = self.scores.entry(bio_id.to_string()).or_insert_with(|| vec![None; n]);
        if row[k].is_some() {
            return Err(SnobError::Validation(format!(
                "duplicate score for ({bio_id}, {occupation})"
            )));
        }
        row[k] = Some(score);
        Ok(())
    }

    /// All occupation scores of a biography, if every one is present.
    pub fn scores_for(&self, bio_id: &str) -> Option<Vec<f64>> {
        self.scores.get(bio_id)?.iter().copied().collect()
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.label.as_bytes());
        for (id, row) in &self.scores {
            h.update(id.as_bytes());
            for s in row {
                h.update(s.map_or(u64::MAX, f64::to_bits).to_le_bytes());
            }
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    /// Writes `bio_id,occupation,score` rows. Scores use the shortest
    /// representation that reads back to the same value.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for (id, row) in &self.scores {
            for (occ, s) in self.occupations.iter().zip(row) {
                if let Some(s) = s {
                    w.serialize(ScoreRow {
                        bio_id: id.clone(),
                        occupation: occ.clone(),
                        score: *s,
                    })
                    .map_err(|e| csv_error(path, e))?;
                }
            }
        }
        w.flush().map_err(|e| SnobError::io(path, e))
    }
}

/// Reads a `bio_id,occupation,score` CSV and checks every id against the
/// corpora given.
pub fn import_external_scores(path: &Path, corpora: &[&Corpus], label: &str) -> Result<ScoreTable> {
    let known: HashSet<&str> = corpora
        .iter()
        .flat_map(|c| c.biographies().iter().map(|b| b.id.as_str()))
        .collect();
    let occupations: BTreeSet<String> = corpora.iter().flat_map(|c| c.occupations().iter().cloned()).collect();
    let mut table = ScoreTable::new(label, occupations.into_iter().collect());
    let mut unknown: Vec<String> = Vec::new();
    let mut unknown_count = 0usize;
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    for rec in rdr.deserialize::<ScoreRow>() {
        let row = rec.map_err(|e| csv_error(path, e))?;
        if !known.contains(row.bio_id.as_str()) {
            unknown_count += 1;
            if unknown.len() < 10 {
                unknown.push(row.bio_id);
            }
            continue;
        }
        table
            .insert(&row.bio_id, &row.occupation, row.score)
            .map_err(|e| match e {
                SnobError::Validation(m) => SnobError::Validation(format!("{}: {m}", path.display())),
                other => other,
            })?;
    }
    if unknown_count > 0 {
        return Err(SnobError::Validation(format!(
            "{}: {unknown_count} rows reference unknown biography ids, first: {}",
            path.display(),
            unknown.join(", ")
        )));
    }
    Ok(table)
}

/// In-memory inputs of an audit.
#[derive(Debug, Clone)]
pub struct AuditData {
    pub corpus: Corpus,
    pub embeddings: EmbeddingTable,
    pub lexicon: Option<GenderLexicon>,
    pub nonbinary: Option<Corpus>,
    pub external: Vec<ScoreTable>,
}

fn require_file(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = p
        .clone()
        .ok_or_else(|| SnobError::Config(format!("{what} path is required")))?;
    if !p.is_file() {
        return Err(SnobError::Config(format!("{what} file {} does not exist", p.display())));
    }
    Ok(p)
}

fn optional_file(p: &Option<PathBuf>, what: &str) -> Result<Option<PathBuf>> {
    match p {
        None => Ok(None),
        Some(_) => require_file(p, what).map(Some),
    }
}

/// Loads everything the config refers to. Word vectors are kept only for
/// tokens that occur in the corpora or the lexicon.
pub fn load_audit_data(cfg: &AuditConfig) -> Result<AuditData> {
    let corpus_path = require_file(&cfg.corpus, "corpus")?;
    let emb_path = require_file(&cfg.embeddings, "embeddings")?;
    let lex_path = optional_file(&cfg.lexicon, "lexicon")?;
    let nb_path = optional_file(&cfg.nonbinary_corpus, "nonbinary corpus")?;
    for e in &cfg.external_scores {
        require_file(&Some(e.path.clone()), "external scores")?;
    }
    let corpus = load_corpus(&corpus_path, CorpusFormat::JsonLines)?;
    let nonbinary = nb_path.map(|p| load_corpus(&p, CorpusFormat::JsonLines)).transpose()?;
    let lexicon = lex_path.map(|p| GenderLexicon::load(&p)).transpose()?;
    let mut wanted: HashSet<String> = HashSet::new();
    for c in std::iter::once(&corpus).chain(nonbinary.as_ref()) {
        for b in c.biographies() {
            wanted.extend(b.tokens.iter().cloned());
        }
    }
    if let Some(l) = &lexicon {
        wanted.extend(l.entries().map(|(w, _)| w.to_string()));
    }
    let keep = |w: &str| wanted.contains(w);
    let embeddings = EmbeddingTable::load(&emb_path, Some(&keep))?;
    let mut corpora = vec![&corpus];
    corpora.extend(nonbinary.as_ref());
    let external = cfg
        .external_scores
        .iter()
        .map(|e| import_external_scores(&e.path, &corpora, &e.label))
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditData {
        corpus,
        embeddings,
        lexicon,
        nonbinary,
        external,
    })
}

/// Hash of the canonical config (output directory excluded) and the
/// identities of the loaded data.
pub fn config_hash(cfg: &AuditConfig, data: &AuditData) -> Result<String> {
    let mut h = Sha256::new();
    // serde_json maps are sorted, so this is canonical
    h.update(serde_json::to_string(&cfg.hashable()?).map_err(|e| SnobError::Config(e.to_string()))?);
    h.update(b"\x00corpus:");
    h.update(data.corpus.fingerprint());
    h.update(b"\x00emb:");
    h.update(data.embeddings.fingerprint());
    if let Some(nb) = &data.nonbinary {
        h.update(b"\x00nb:");
        h.update(nb.fingerprint());
    }
    if let Some(l) = &data.lexicon {
        h.update(b"\x00lex:");
        for (w, s) in l.entries() {
            h.update(w.as_bytes());
            h.update(s.to_le_bytes());
        }
    }
    for t in &data.external {
        h.update(b"\x00ext:");
        h.update(t.fingerprint());
    }
    Ok(hex::encode(h.finalize())[..16].to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub small_cells: Vec<(String, PronounGroup)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSummary {
    pub accuracy: f64,
    pub lexicon: Option<LexiconValidation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bow_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bow_lexicon: Option<LexiconValidation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceEntry {
    pub occupation: String,
    pub relevant_words: usize,
    pub irrelevant_fraction: f64,
    pub accuracy: f64,
    pub lexicon: Option<Correlation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSummary {
    pub level: f64,
    pub vocabulary_size: usize,
    pub occupations: Vec<RelevanceEntry>,
    pub mean_irrelevant_fraction: f64,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_lexicon_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderedWordsReport {
    pub repr: Repr,
    pub yc: InterventionKind,
    pub yc_prime: InterventionKind,
    pub t: f64,
    pub t_prime: f64,
    pub occupations: BTreeMap<String, Vec<GenderedWord>>,
    /// Distinct words over all listed occupations.
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBundle {
    pub format_version: u32,
    pub config_hash: String,
    pub split_id: String,
    pub config: AuditConfig,
    pub split: SplitSummary,
    pub she_fractions: BTreeMap<String, f64>,
    pub norm: NormSummary,
    pub reports: Vec<AuditReport>,
    pub gendered_words: Vec<GenderedWordsReport>,
    pub relevance: Option<RelevanceSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl AuditBundle {
    pub fn report(&self, repr: &str, intervention: InterventionKind) -> Option<&AuditReport> {
        self.reports
            .iter()
            .find(|r| r.approach.repr == repr && r.approach.intervention == intervention)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| SnobError::Validation(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

pub fn read_bundle(path: &Path) -> Result<AuditBundle> {
    let text = fs::read_to_string(path).map_err(|e| SnobError::io(path, e))?;
    let bundle: AuditBundle = serde_json::from_str(&text).map_err(|e| SnobError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if bundle.format_version != REPORT_FORMAT_VERSION {
        return Err(SnobError::Validation(format!(
            "{}: unsupported report format version {}",
            path.display(),
            bundle.format_version
        )));
    }
    for r in &bundle.reports {
        if r.config_hash != bundle.config_hash || r.split_id != bundle.split_id {
            return Err(SnobError::Validation(format!(
                "{}: report {} was produced under a different config or split",
                path.display(),
                r.approach
            )));
        }
    }
    Ok(bundle)
}

/// Reports from several bundles, which must share one config hash.
pub fn merge_reports(bundles: &[AuditBundle]) -> Result<Vec<AuditReport>> {
    let Some(first) = bundles.first() else {
        return Ok(Vec::new());
    };
    if let Some(b) = bundles.iter().find(|b| b.config_hash != first.config_hash) {
        return Err(SnobError::Validation(format!(
            "cannot mix reports from config {} and {}",
            first.config_hash, b.config_hash
        )));
    }
    Ok(bundles.iter().flat_map(|b| b.reports.iter().cloned()).collect())
}

/// Result of [`run_audit_with_data`].
#[derive(Debug, Clone)]
pub struct AuditRun {
    pub bundle: AuditBundle,
    /// Per-approach scores over validation, test and nonbinary biographies
    /// (filled when `export_scores` is set).
    pub scores: Vec<ScoreTable>,
}

/// Everything the per-approach evaluation needs.
struct EvalContext<'a> {
    occupations: &'a [String],
    test: &'a Corpus,
    nonbinary: &'a Corpus,
    g_test: &'a [Option<f64>],
    g_nb: &'a [Option<f64>],
    /// Test indices of the audited group, per occupation.
    group_rows: &'a [Vec<usize>],
    /// `G^c-irrev` scores aligned with `group_rows`.
    irrev_rows: Option<&'a [Vec<Option<f64>>]>,
    she_fractions: &'a BTreeMap<String, f64>,
    provenance: &'a Provenance,
    snob_group: PronounGroup,
}

struct ApproachOutput {
    id: ApproachId,
    test: Vec<Option<Prediction>>,
    /// (route, predictions over the nonbinary corpus)
    nonbinary: Vec<(Option<PronounGroup>, Vec<Option<Prediction>>)>,
    notes: Vec<String>,
}

fn evaluate(ctx: &EvalContext<'_>, out: &ApproachOutput) -> Result<AuditReport> {
    let bios = ctx.test.biographies();
    let binary: Vec<usize> = (0..bios.len())
        .filter(|&i| bios[i].pronoun_group.is_binary() && out.test[i].is_some())
        .collect();
    let runs = ctx
        .occupations
        .iter()
        .enumerate()
        .map(|(k, occ)| {
            let mut notes = Vec::new();
            let labels: Vec<bool> = binary.iter().map(|&i| &bios[i].occupation == occ).collect();
            let accept: Vec<f64> = binary
                .iter()
                .map(|&i| out.test[i].as_ref().expect("filtered").accept[k])
                .collect();
            let tpr_for = |g: PronounGroup, notes: &mut Vec<String>| {
                let mask: Vec<bool> = binary.iter().map(|&i| bios[i].pronoun_group == g).collect();
                match expected_tpr(&accept, &labels, &mask) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        notes.push(format!("TPR for {g} undefined: {e}"));
                        None
                    }
                }
            };
            let tpr_she = tpr_for(PronounGroup::She, &mut notes);
            let tpr_he = tpr_for(PronounGroup::He, &mut notes);
            let accuracy = (!binary.is_empty()).then(|| {
                accept
                    .iter()
                    .zip(&labels)
                    .map(|(a, &y)| if y { *a } else { 1.0 - a })
                    .sum::<f64>()
                    / binary.len() as f64
            });
            let mut ys = Vec::new();
            let mut gs = Vec::new();
            let mut irrev = Vec::new();
            for (j, &i) in ctx.group_rows[k].iter().enumerate() {
                let (Some(p), Some(g)) = (&out.test[i], ctx.g_test[i]) else {
                    continue;
                };
                ys.push(p.scores[k]);
                gs.push(g);
                irrev.push(ctx.irrev_rows.and_then(|r| r[k][j]));
            }
            let r = match snob_single(&gs, &ys) {
                Ok(c) => Some(c),
                Err(e) => {
                    notes.push(format!("r_c undefined: {e}"));
                    None
                }
            };
            let r_irrev = ctx.irrev_rows.and_then(|_| {
                let (gi, yi): (Vec<f64>, Vec<f64>) =
                    irrev.iter().zip(&ys).filter_map(|(g, y)| Some(((*g)?, *y))).unzip();
                match snob_single(&gi, &yi) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        notes.push(format!("r_irrev_c undefined: {e}"));
                        None
                    }
                }
            });
            OccupationRun {
                occupation: occ.clone(),
                she_fraction: ctx.she_fractions.get(occ).copied(),
                tpr_she,
                tpr_he,
                accuracy,
                r,
                r_irrev,
                n_group: ys.len(),
                notes,
                provenance: ctx.provenance.clone(),
            }
        })
        .collect();
    let multiclass_accuracy = (!binary.is_empty()).then(|| {
        let hits = binary
            .iter()
            .filter(|&&i| {
                let p = out.test[i].as_ref().expect("filtered");
                ctx.occupations[argmax(&p.scores)] == bios[i].occupation
            })
            .count();
        hits as f64 / binary.len() as f64
    });
    let mut nonbinary = Vec::new();
    let nb_bios = ctx.nonbinary.biographies();
    for (route, preds) in &out.nonbinary {
        for (k, occ) in ctx.occupations.iter().enumerate() {
            let (mut gs, mut ys) = (Vec::new(), Vec::new());
            for (i, b) in nb_bios.iter().enumerate() {
                if &b.occupation != occ {
                    continue;
                }
                if let (Some(p), Some(g)) = (&preds[i], ctx.g_nb[i]) {
                    ys.push(p.scores[k]);
                    gs.push(g);
                }
            }
            if ys.is_empty() {
                continue;
            }
            let (correlation, note) = match snob_nonbinary(&gs, &ys) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(format!("skipped: {e}"))),
            };
            nonbinary.push(NonbinaryAudit {
                occupation: occ.clone(),
                model_group: *route,
                n: ys.len(),
                correlation,
                note,
            });
        }
    }
    assemble_report(
        out.id.clone(),
        ctx.snob_group,
        runs,
        ReportExtras {
            multiclass_accuracy,
            nonbinary,
            notes: out.notes.clone(),
        },
    )
}

fn predict_part(
    part: &Corpus,
    feats: &[Option<FeatureVector>],
    spec: &InterventionSpec,
    models: ScoringModels<'_>,
    thresholds: Option<&GroupThresholds>,
) -> Result<Vec<Option<Prediction>>> {
    part.biographies()
        .par_iter()
        .zip(feats.par_iter())
        .map(|(b, f)| {
            f.as_ref()
                .map(|x| predict_with_intervention(b, x, spec, models, thresholds))
                .transpose()
        })
        .collect()
}

fn external_part(
    part: &Corpus,
    table: &ScoreTable,
    occupations: &[String],
    thresholds: Option<&GroupThresholds>,
) -> Vec<Option<Prediction>> {
    part.biographies()
        .iter()
        .map(|b| {
            table
                .scores_for(&b.id)
                .map(|s| decide(s, occupations, b.pronoun_group, thresholds))
        })
        .collect()
}

fn raw_scores(preds: &[Option<Prediction>]) -> Vec<Option<Vec<f64>>> {
    preds.iter().map(|p| p.as_ref().map(|p| p.scores.clone())).collect()
}

#[derive(Clone)]
enum TrainedModels {
    Single(Arc<OccupationModelSet>),
    Decoupled(Arc<DecoupledModels>),
}

impl TrainedModels {
    fn scoring(&self) -> ScoringModels<'_> {
        match self {
            TrainedModels::Single(m) => ScoringModels::Single(m),
            TrainedModels::Decoupled(d) => ScoringModels::Decoupled(d),
        }
    }

    fn word_weights<'a>(&'a self, occupation: &str, space: WordSpace<'a>) -> Option<Box<dyn WordWeights + 'a>> {
        match self {
            TrainedModels::Single(m) => Some(Box::new(ModelWords {
                model: m.model(occupation)?,
                space,
            })),
            TrainedModels::Decoupled(d) => Some(Box::new(MeanWords(vec![
                ModelWords {
                    model: d.she.model(occupation)?,
                    space,
                },
                ModelWords {
                    model: d.he.model(occupation)?,
                    space,
                },
            ]))),
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Nonbinary biographies from every split part plus the optional extra
/// corpus, restricted to known occupations.
fn nonbinary_pool(
    split: &DatasetSplit,
    extra: Option<&Corpus>,
    indicators: &IndicatorSet,
    notes: &mut Vec<String>,
) -> Result<Corpus> {
    let occupations = split.train.occupations().to_vec();
    let mut bios: Vec<Biography> = [&split.train, &split.validation, &split.test]
        .iter()
        .flat_map(|c| c.biographies().iter())
        .filter(|b| b.pronoun_group == PronounGroup::Nb)
        .cloned()
        .collect();
    let mut seen: HashSet<String> = bios.iter().map(|b| b.id.clone()).collect();
    if let Some(extra) = extra {
        let mut dropped = 0usize;
        for b in extra.scrubbed(indicators).biographies() {
            if split.train.occupation_index(&b.occupation).is_none() || !seen.insert(b.id.clone()) {
                dropped += 1;
                continue;
            }
            bios.push(b.clone());
        }
        if dropped > 0 {
            notes.push(format!(
                "{dropped} nonbinary biographies dropped (unknown occupation or duplicate id)"
            ));
        }
    }
    Corpus::with_occupations(bios, occupations)
}

fn robustness(
    cfg: &AuditConfig,
    train: &Corpus,
    test: &Corpus,
    vocab: &Vocabulary,
    data: &AuditData,
    group_rows: &[Vec<usize>],
) -> Result<(RelevanceSummary, Vec<Vec<Option<f64>>>)> {
    let we = Featurizer::we(&data.embeddings);
    let indicators = cfg.indicator_set();
    let map = TaskRelevanceMap::compute(train, vocab, cfg.chi2_level)?;
    let occupations = train.occupations();
    let results = occupations
        .par_iter()
        .enumerate()
        .map(|(k, occ)| {
            let g = train_irrelevant_norm_classifier(train, occ, &map, we, &indicators, &cfg.train)?;
            let accuracy = g.accuracy(test, we)?;
            let lexicon = match &data.lexicon {
                Some(l) => validate_against_lexicon(&g, l, WordSpace::We(&data.embeddings))
                    .ok()
                    .map(|v| v.correlation),
                None => None,
            };
            let scores = group_rows[k]
                .iter()
                .map(|&i| g.score(&test.biographies()[i].tokens, we))
                .collect::<Result<Vec<_>>>()?;
            let entry = RelevanceEntry {
                occupation: occ.clone(),
                relevant_words: map.relevant_words(occ).map_or(0, BTreeSet::len),
                irrelevant_fraction: map.irrelevant_fraction(occ).unwrap_or(f64::NAN),
                accuracy,
                lexicon,
            };
            Ok((entry, scores))
        })
        .collect::<Result<Vec<_>>>()?;
    let (entries, scores): (Vec<RelevanceEntry>, Vec<Vec<Option<f64>>>) = results.into_iter().unzip();
    let n = entries.len() as f64;
    let mean_accuracy = entries.iter().map(|e| e.accuracy).sum::<f64>() / n;
    let sd_accuracy = (entries
        .iter()
        .map(|e| (e.accuracy - mean_accuracy).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let lex: Vec<f64> = entries.iter().filter_map(|e| e.lexicon.map(|c| c.rho)).collect();
    Ok((
        RelevanceSummary {
            level: cfg.chi2_level,
            vocabulary_size: vocab.len(),
            mean_irrelevant_fraction: entries.iter().map(|e| e.irrelevant_fraction).sum::<f64>() / n,
            mean_accuracy,
            sd_accuracy,
            mean_lexicon_rho: (!lex.is_empty()).then(|| lex.iter().sum::<f64>() / lex.len() as f64),
            occupations: entries,
        },
        scores,
    ))
}

/// Runs the whole audit on loaded data. Nothing is written to disk.
pub fn run_audit_with_data(cfg: &AuditConfig, data: &AuditData) -> Result<AuditRun> {
    let cfg = stage("config", cfg.validated())?;
    if cfg.reprs.is_empty() && data.external.is_empty() {
        return Err(SnobError::Config("no representation or external scores to audit".into()).in_stage("config"));
    }
    let hash = config_hash(&cfg, data)?;
    let indicators = cfg.indicator_set();
    let mut notes = Vec::new();

    let raw_split = stage(
        "split",
        crate::corpus::stratified_split(&data.corpus, cfg.split, cfg.seed),
    )?;
    let split_id = raw_split.fingerprint();
    let split = raw_split.scrubbed(&indicators);
    drop(raw_split);
    let provenance = Provenance {
        config_hash: hash.clone(),
        split_id: split_id.clone(),
    };
    let occupations = split.train.occupations().to_vec();
    let she_fractions: BTreeMap<String, f64> = data
        .corpus
        .counts()
        .iter()
        .filter_map(|(o, c)| Some((o.clone(), c.she_fraction()?)))
        .collect();
    info!(
        "split {split_id}: {} train / {} validation / {} test",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );

    let vocab = stage("vocabulary", build_vocabulary(&split.train, cfg.min_df, &indicators))?;
    let we = Featurizer::we(&data.embeddings);

    // norm classifier
    let g = stage("norm", train_norm_classifier(&split.train, we, &indicators, &cfg.train))?;
    let mut norm_notes = Vec::new();
    let lexicon_check = |g: &NormClassifier, space: WordSpace<'_>, notes: &mut Vec<String>| match &data.lexicon {
        Some(l) => match validate_against_lexicon(g, l, space) {
            Ok(v) => Some(v),
            Err(e) => {
                notes.push(format!("lexicon validation skipped: {e}"));
                None
            }
        },
        None => None,
    };
    let norm = {
        let accuracy = stage("norm", g.accuracy(&split.test, we))?;
        let lexicon = lexicon_check(&g, WordSpace::We(&data.embeddings), &mut norm_notes);
        let (bow_accuracy, bow_lexicon) = if cfg.bow_norm_diagnostic {
            let gb = stage(
                "norm",
                train_norm_classifier(&split.train, Featurizer::Bow(&vocab), &indicators, &cfg.train),
            )?;
            (
                Some(stage("norm", gb.accuracy(&split.test, Featurizer::Bow(&vocab)))?),
                lexicon_check(&gb, WordSpace::Bow(&vocab), &mut norm_notes),
            )
        } else {
            (None, None)
        };
        NormSummary {
            accuracy,
            lexicon,
            bow_accuracy,
            bow_lexicon,
            notes: norm_notes,
        }
    };
    info!("norm classifier test accuracy {:.4}", norm.accuracy);

    let nonbinary = stage(
        "nonbinary",
        nonbinary_pool(&split, data.nonbinary.as_ref(), &indicators, &mut notes),
    )?;
    let g_test = stage("norm", g.score_corpus(&split.test, we))?;
    let g_nb = stage("norm", g.score_corpus(&nonbinary, we))?;
    let group_rows: Vec<Vec<usize>> = occupations
        .iter()
        .map(|occ| {
            split
                .test
                .biographies()
                .iter()
                .enumerate()
                .filter(|(_, b)| &b.occupation == occ && b.pronoun_group == cfg.snob_group)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    let (relevance, irrev_rows) = if cfg.robustness {
        let (summary, rows) = stage(
            "robustness",
            robustness(&cfg, &split.train, &split.test, &vocab, data, &group_rows),
        )?;
        (Some(summary), Some(rows))
    } else {
        (None, None)
    };

    let calibration = split.part(cfg.calibration);
    let ctx = EvalContext {
        occupations: &occupations,
        test: &split.test,
        nonbinary: &nonbinary,
        g_test: &g_test,
        g_nb: &g_nb,
        group_rows: &group_rows,
        irrev_rows: irrev_rows.as_deref(),
        she_fractions: &she_fractions,
        provenance: &provenance,
        snob_group: cfg.snob_group,
    };

    let mut reports = Vec::new();
    let mut score_tables = Vec::new();
    let mut trained: BTreeMap<(Repr, InterventionKind), TrainedModels> = BTreeMap::new();
    let threshold_note = format!(
        "PO thresholds fitted on the {} split ({})",
        match cfg.calibration {
            SplitPart::Validation => "validation",
            SplitPart::Test => "test",
            SplitPart::Train => "train",
        },
        if cfg.randomized_thresholds {
            "randomized"
        } else {
            "deterministic"
        }
    );

    for &repr in &cfg.reprs {
        let featurizer = match repr {
            Repr::Bow => Featurizer::Bow(&vocab),
            Repr::We => we,
        };
        let space = featurizer.space();
        let f_train = stage("features", Ok(featurizer.featurize_corpus(&split.train)))?;
        let f_test = featurizer.featurize_corpus(&split.test);
        let f_val = featurizer.featurize_corpus(&split.validation);
        let f_nb = featurizer.featurize_corpus(&nonbinary);
        let f_cal = match cfg.calibration {
            SplitPart::Test => &f_test,
            _ => &f_val,
        };
        let needs_plain = cfg
            .interventions
            .iter()
            .any(|k| matches!(k, InterventionKind::None | InterventionKind::Po));
        let plain = if needs_plain {
            Some(Arc::new(stage(
                "train",
                train_one_vs_all(&split.train, &f_train, &space, None, &cfg.train),
            )?))
        } else {
            None
        };
        for &kind in &cfg.interventions {
            let spec = InterventionSpec::new(kind);
            let mut approach_notes = Vec::new();
            let (models, thresholds) = match kind {
                InterventionKind::None => (TrainedModels::Single(plain.clone().expect("trained")), None),
                InterventionKind::Po => {
                    let m = plain.clone().expect("trained");
                    let cal = stage(
                        "thresholds",
                        predict_part(
                            calibration,
                            f_cal,
                            &InterventionSpec::new(InterventionKind::None),
                            ScoringModels::Single(&m),
                            None,
                        ),
                    )?;
                    let t = stage(
                        "thresholds",
                        fit_group_thresholds(calibration, &occupations, &raw_scores(&cal), cfg.randomized_thresholds),
                    )?;
                    approach_notes.push(threshold_note.clone());
                    (TrainedModels::Single(m), Some(t))
                }
                InterventionKind::Pr => (
                    TrainedModels::Single(Arc::new(stage(
                        "train",
                        train_preprocessed_models(&split.train, &f_train, &space, &cfg.train),
                    )?)),
                    None,
                ),
                InterventionKind::De => {
                    let d = stage("train", train_decoupled(&split.train, &f_train, &space, &cfg.train))?;
                    for (g, occ) in &d.pooled {
                        approach_notes.push(format!("{g} model for {occ} trained on pooled data"));
                    }
                    (TrainedModels::Decoupled(Arc::new(d)), None)
                }
            };
            let test = stage(
                "predict",
                predict_part(&split.test, &f_test, &spec, models.scoring(), thresholds.as_ref()),
            )?;
            let nb_routes: Vec<Option<PronounGroup>> = if kind == InterventionKind::De {
                vec![Some(PronounGroup::She), Some(PronounGroup::He)]
            } else {
                vec![None]
            };
            let mut nb_preds = Vec::new();
            for route in nb_routes {
                let spec = InterventionSpec {
                    kind,
                    nonbinary_route: route.unwrap_or(PronounGroup::She),
                };
                nb_preds.push((
                    route,
                    stage(
                        "predict",
                        predict_part(&nonbinary, &f_nb, &spec, models.scoring(), thresholds.as_ref()),
                    )?,
                ));
            }
            let out = ApproachOutput {
                id: ApproachId::new(repr.as_str(), kind),
                test,
                nonbinary: nb_preds,
                notes: approach_notes,
            };
            if cfg.export_scores {
                let val = stage(
                    "predict",
                    predict_part(&split.validation, &f_val, &spec, models.scoring(), thresholds.as_ref()),
                )?;
                let mut table = ScoreTable::new(format!("{repr}-{kind}"), occupations.clone());
                let parts = [
                    (&split.validation, &val),
                    (&split.test, &out.test),
                    (&nonbinary, &out.nonbinary[0].1),
                ];
                // nonbinary test biographies appear in both test and pool
                let mut done = HashSet::new();
                for (part, preds) in parts {
                    for (b, p) in part.biographies().iter().zip(preds.iter()) {
                        if !done.insert(b.id.as_str()) {
                            continue;
                        }
                        if let Some(p) = p {
                            for (occ, s) in occupations.iter().zip(&p.scores) {
                                table.insert(&b.id, occ, *s)?;
                            }
                        }
                    }
                }
                score_tables.push(table);
            }
            reports.push(stage("metrics", evaluate(&ctx, &out))?);
            trained.insert((repr, kind), models);
        }
    }

    for table in &data.external {
        let label = format!("EXTERNAL:{}", table.label);
        let missing = split
            .test
            .biographies()
            .iter()
            .filter(|b| table.scores_for(&b.id).is_none())
            .count();
        let mut base_notes = Vec::new();
        if missing > 0 {
            base_notes.push(format!("{missing} test biographies have no complete external scores"));
        }
        for &kind in &cfg.interventions {
            let thresholds = match kind {
                InterventionKind::None => None,
                InterventionKind::Po => {
                    let cal_scores: Vec<Option<Vec<f64>>> = calibration
                        .biographies()
                        .iter()
                        .map(|b| table.scores_for(&b.id))
                        .collect();
                    if cal_scores.iter().all(Option::is_none) {
                        notes.push(format!("{label}: no calibration scores; PO skipped"));
                        continue;
                    }
                    Some(stage(
                        "thresholds",
                        fit_group_thresholds(calibration, &occupations, &cal_scores, cfg.randomized_thresholds),
                    )?)
                }
                // retraining interventions need the external model itself
                InterventionKind::Pr | InterventionKind::De => continue,
            };
            let mut approach_notes = base_notes.clone();
            if kind == InterventionKind::Po {
                approach_notes.push(threshold_note.clone());
            }
            let out = ApproachOutput {
                id: ApproachId::new(label.clone(), kind),
                test: external_part(&split.test, table, &occupations, thresholds.as_ref()),
                nonbinary: vec![(
                    None,
                    external_part(&nonbinary, table, &occupations, thresholds.as_ref()),
                )],
                notes: approach_notes,
            };
            reports.push(stage("metrics", evaluate(&ctx, &out))?);
        }
    }

    let gendered_words = stage(
        "gendered-words",
        gendered_word_reports(&cfg, &trained, &g, &vocab, data, &she_fractions),
    )?;

    let mut config = cfg.clone();
    config.output_dir = None;
    Ok(AuditRun {
        bundle: AuditBundle {
            format_version: REPORT_FORMAT_VERSION,
            config_hash: hash,
            split_id,
            config,
            split: SplitSummary {
                seed: split.seed,
                ratios: split.ratios,
                train: split.train.len(),
                validation: split.validation.len(),
                test: split.test.len(),
                small_cells: split.small_cells.clone(),
            },
            she_fractions,
            norm,
            reports,
            gendered_words,
            relevance,
            notes,
        },
        scores: score_tables,
    })
}

fn gendered_word_reports(
    cfg: &AuditConfig,
    trained: &BTreeMap<(Repr, InterventionKind), TrainedModels>,
    g: &NormClassifier,
    vocab: &Vocabulary,
    data: &AuditData,
    she_fractions: &BTreeMap<String, f64>,
) -> Result<Vec<GenderedWordsReport>> {
    let mut by_imbalance: Vec<(&String, f64)> = she_fractions.iter().map(|(o, p)| (o, (p - 0.5).abs())).collect();
    by_imbalance.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let chosen: Vec<&String> = by_imbalance
        .into_iter()
        .take(cfg.gendered_word_occupations)
        .map(|(o, _)| o)
        .collect();
    let candidates: Vec<&str> = vocab
        .words()
        .iter()
        .map(String::as_str)
        .filter(|w| data.embeddings.contains(w))
        .collect();
    let gw = ModelWords {
        model: g.model(),
        space: WordSpace::We(&data.embeddings),
    };
    let mut out = Vec::new();
    for &repr in &cfg.reprs {
        let space = match repr {
            Repr::Bow => WordSpace::Bow(vocab),
            Repr::We => WordSpace::We(&data.embeddings),
        };
        for &(a, b) in &cfg.gendered_word_pairs {
            let (Some(ma), Some(mb)) = (trained.get(&(repr, a)), trained.get(&(repr, b))) else {
                continue;
            };
            let mut per = BTreeMap::new();
            let mut all = BTreeSet::new();
            for occ in &chosen {
                let (Some(wa), Some(wb)) = (ma.word_weights(occ, space), mb.word_weights(occ, space)) else {
                    continue;
                };
                let words = comparative_gendered_words(
                    wa.as_ref(),
                    wb.as_ref(),
                    &gw,
                    cfg.t,
                    cfg.t_prime,
                    candidates.iter().copied(),
                );
                all.extend(words.iter().map(|w| w.word.clone()));
                per.insert((*occ).clone(), words);
            }
            out.push(GenderedWordsReport {
                repr,
                yc: a,
                yc_prime: b,
                t: cfg.t,
                t_prime: cfg.t_prime,
                occupations: per,
                words: all.into_iter().collect(),
            });
        }
    }
    Ok(out)
}

/// One row of the per-occupation scatter data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub occupation: String,
    pub p_c: Option<f64>,
    pub r_c: Option<f64>,
    pub p_value: Option<f64>,
    pub approach: String,
    pub repr: String,
    pub note: String,
}

/// Scatter rows `(p_c, r_c)` of a report, or `(p_c, r_irrev_c)` with
/// `irrev`.
pub fn plot_rows(report: &AuditReport, irrev: bool) -> Vec<PlotRow> {
    report
        .occupations
        .iter()
        .map(|o| {
            let c = if irrev { o.r_irrev } else { o.r };
            let note = match c {
                Some(_) => String::new(),
                None => {
                    let what = if irrev { "r_irrev_c" } else { "r_c" };
                    o.notes
                        .iter()
                        .find(|n| n.starts_with(what))
                        .cloned()
                        .unwrap_or_else(|| format!("{what} undefined"))
                }
            };
            PlotRow {
                occupation: o.occupation.clone(),
                p_c: o.she_fraction,
                r_c: c.map(|c| c.rho),
                p_value: c.map(|c| c.p_value),
                approach: report.approach.intervention.to_string(),
                repr: report.approach.repr.clone(),
                note,
            }
        })
        .collect()
}

fn write_plot_csv(rows: &[PlotRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| SnobError::io(path, e))
}

/// Writes the scatter data of every report: one file for `r_c` and, when
/// any report has them, one for `r_irrev_c`.
pub fn export_plot_data(reports: &[AuditReport], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| SnobError::io(dir, e))?;
    let mut written = Vec::new();
    let rows: Vec<PlotRow> = reports.iter().flat_map(|r| plot_rows(r, false)).collect();
    let p = dir.join(PLOT_FILE);
    write_plot_csv(&rows, &p)?;
    written.push(p);
    if reports
        .iter()
        .any(|r| r.occupations.iter().any(|o| o.r_irrev.is_some()))
    {
        let rows: Vec<PlotRow> = reports.iter().flat_map(|r| plot_rows(r, true)).collect();
        let p = dir.join(IRREV_PLOT_FILE);
        write_plot_csv(&rows, &p)?;
        written.push(p);
    }
    Ok(written)
}

/// Writes report, plot data and optional score files into `dir`. Files are
/// staged in a scratch directory and moved into place only when all of them
/// were written.
pub fn write_outputs(run: &AuditRun, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| SnobError::io(dir, e))?;
    let scratch = dir.join(format!(".partial-{}", run.bundle.config_hash));
    if scratch.exists() {
        fs::remove_dir_all(&scratch).map_err(|e| SnobError::io(&scratch, e))?;
    }
    fs::create_dir_all(&scratch).map_err(|e| SnobError::io(&scratch, e))?;
    let staged = (|| -> Result<Vec<PathBuf>> {
        let mut names = vec![PathBuf::from(REPORT_FILE)];
        let report = scratch.join(REPORT_FILE);
        let mut f = fs::File::create(&report).map_err(|e| SnobError::io(&report, e))?;
        f.write_all(run.bundle.to_json()?.as_bytes())
            .map_err(|e| SnobError::io(&report, e))?;
        for p in export_plot_data(&run.bundle.reports, &scratch)? {
            names.push(PathBuf::from(p.file_name().expect("file")));
        }
        if !run.scores.is_empty() {
            let sub = scratch.join("scores");
            fs::create_dir_all(&sub).map_err(|e| SnobError::io(&sub, e))?;
            for t in &run.scores {
                let name = PathBuf::from("scores").join(format!("{}.csv", t.label));
                t.write(&scratch.join(&name))?;
                names.push(name);
            }
        }
        Ok(names)
    })();
    let names = match staged {
        Ok(n) => n,
        Err(e) => {
            let _ = fs::remove_dir_all(&scratch);
            return Err(e);
        }
    };
    let mut moved = Vec::new();
    for name in &names {
        let target = dir.join(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| SnobError::io(parent, e))?;
        }
        if let Err(e) = fs::rename(scratch.join(name), &target) {
            for m in &moved {
                let _ = fs::remove_file(m);
            }
            let _ = fs::remove_dir_all(&scratch);
            return Err(SnobError::io(&target, e));
        }
        moved.push(target);
    }
    fs::remove_dir_all(&scratch).map_err(|e| SnobError::io(&scratch, e))?;
    Ok(moved)
}

/// Output directory: the environment override, then the config, then the
/// current directory.
pub fn resolve_output_dir(cfg: &AuditConfig) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Loads data, runs the audit and writes outputs.
pub fn run_audit(cfg: &AuditConfig) -> Result<(AuditRun, Vec<PathBuf>)> {
    let data = stage("load", load_audit_data(cfg))?;
    let run = run_audit_with_data(cfg, &data)?;
    let written = stage("write", write_outputs(&run, &resolve_output_dir(cfg)))?;
    Ok((run, written))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub config_hash: String,
    pub split_id: String,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub assignments: BTreeMap<String, SplitPart>,
}

pub fn split_assignments(cfg: &AuditConfig, data: &AuditData) -> Result<SplitFile> {
    let cfg = cfg.validated()?;
    let split = crate::corpus::stratified_split(&data.corpus, cfg.split, cfg.seed)?;
    let mut assignments = BTreeMap::new();
    for part in [SplitPart::Train, SplitPart::Validation, SplitPart::Test] {
        for b in split.part(part).biographies() {
            assignments.insert(b.id.clone(), part);
        }
    }
    Ok(SplitFile {
        config_hash: config_hash(&cfg, data)?,
        split_id: split.fingerprint(),
        seed: cfg.seed,
        ratios: cfg.split,
        assignments,
    })
}

/// Trains the configured models and writes them to `dir`: one model-set
/// file per (repr, intervention), two for decoupled models, and the norm
/// classifier.
pub fn train_and_save(cfg: &AuditConfig, data: &AuditData, dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg = stage("config", cfg.validated())?;
    let hash = config_hash(&cfg, data)?;
    let indicators = cfg.indicator_set();
    let split = stage(
        "split",
        crate::corpus::stratified_split(&data.corpus, cfg.split, cfg.seed),
    )?
    .scrubbed(&indicators);
    let vocab = stage("vocabulary", build_vocabulary(&split.train, cfg.min_df, &indicators))?;
    fs::create_dir_all(dir).map_err(|e| SnobError::io(dir, e))?;
    let mut written = Vec::new();
    let we = Featurizer::we(&data.embeddings);
    let g = stage("norm", train_norm_classifier(&split.train, we, &indicators, &cfg.train))?;
    let gp = dir.join("norm.json");
    let text = serde_json::to_string(&serde_json::json!({ "config_hash": hash, "classifier": g }))
        .map_err(|e| SnobError::Validation(e.to_string()))?;
    fs::write(&gp, text).map_err(|e| SnobError::io(&gp, e))?;
    written.push(gp);
    for &repr in &cfg.reprs {
        let featurizer = match repr {
            Repr::Bow => Featurizer::Bow(&vocab),
            Repr::We => we,
        };
        let space = featurizer.space();
        let f_train = featurizer.featurize_corpus(&split.train);
        for &kind in &cfg.interventions {
            let path = |suffix: &str| dir.join(format!("models-{repr}-{kind}{suffix}.json"));
            match kind {
                InterventionKind::None | InterventionKind::Po => {
                    if kind == InterventionKind::Po && cfg.interventions.contains(&InterventionKind::None) {
                        continue;
                    }
                    let m = stage(
                        "train",
                        train_one_vs_all(&split.train, &f_train, &space, None, &cfg.train),
                    )?;
                    write_model_set(&m, &hash, &path(""))?;
                    written.push(path(""));
                }
                InterventionKind::Pr => {
                    let m = stage(
                        "train",
                        train_preprocessed_models(&split.train, &f_train, &space, &cfg.train),
                    )?;
                    write_model_set(&m, &hash, &path(""))?;
                    written.push(path(""));
                }
                InterventionKind::De => {
                    let d = stage("train", train_decoupled(&split.train, &f_train, &space, &cfg.train))?;
                    write_model_set(&d.she, &hash, &path("-she"))?;
                    write_model_set(&d.he, &hash, &path("-he"))?;
                    written.push(path("-she"));
                    written.push(path("-he"));
                }
            }
        }
    }
    if !written.is_empty() {
        warn!("PO uses the NONE model set; thresholds are fitted during the audit");
    }
    Ok(written)
}
