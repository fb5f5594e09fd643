//! Group-fairness interventions on one-vs-all occupation classifiers.
//!
//! * `PR`: retrain with balancing weights on each occupation's positives.
//! * `PO`: keep the scores, pick per-group decision thresholds so that the
//!   advantaged group's TPR comes down to the other group's.
//! * `DE`: one model set per pronoun group.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Biography, Corpus, PronounGroup};
use crate::error::{Result, SnobError};
use crate::features::{FeatureSpace, FeatureVector};
use crate::linear::{train_logistic, train_one_vs_all, OccupationModelSet, TrainConfig, TrainingSet};
use crate::norm::balance_weights;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InterventionKind {
    None,
    Pr,
    Po,
    De,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 4] = [
        InterventionKind::None,
        InterventionKind::Pr,
        InterventionKind::Po,
        InterventionKind::De,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InterventionKind::None => "NONE",
            InterventionKind::Pr => "PR",
            InterventionKind::Po => "PO",
            InterventionKind::De => "DE",
        }
    }
}

impl std::fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InterventionKind {
    type Err = SnobError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NONE" => Ok(InterventionKind::None),
            "PR" => Ok(InterventionKind::Pr),
            "PO" => Ok(InterventionKind::Po),
            "DE" => Ok(InterventionKind::De),
            _ => Err(SnobError::Config(format!("unknown intervention {s:?}"))),
        }
    }
}

/// One-vs-all models trained with balancing weights: a biography counts with
/// weight `alpha` in its own occupation's model and with weight 1 elsewhere.
pub fn train_preprocessed_models(
    train: &Corpus,
    features: &[Option<FeatureVector>],
    space: &FeatureSpace,
    cfg: &TrainConfig,
) -> Result<OccupationModelSet> {
    let alpha = balance_weights(train);
    let own: Vec<Option<usize>> = train
        .biographies()
        .iter()
        .map(|b| train.occupation_index(&b.occupation))
        .collect();
    let weight = |i: usize, k: usize| if own[i] == Some(k) { alpha[i] } else { 1.0 };
    train_one_vs_all(train, features, space, Some(&weight), cfg)
}

/// Decision rule for one group: accept when `score >= value`. With a
/// randomized boundary, scores in `[lower, value)` are accepted with
/// `probability`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomized: Option<RandomizedBoundary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizedBoundary {
    pub lower: f64,
    pub probability: f64,
}

impl Threshold {
    pub fn fixed(value: f64) -> Self {
        Threshold {
            value,
            randomized: None,
        }
    }

    pub fn accept_probability(&self, score: f64) -> f64 {
        if score >= self.value {
            1.0
        } else {
            match self.randomized {
                Some(r) if score >= r.lower => r.probability,
                _ => 0.0,
            }
        }
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::fixed(DEFAULT_THRESHOLD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OccupationThresholds {
    pub she: Threshold,
    pub he: Threshold,
}

impl OccupationThresholds {
    /// Nonbinary biographies use the default threshold.
    pub fn for_group(&self, group: PronounGroup) -> Threshold {
        match group {
            PronounGroup::She => self.she,
            PronounGroup::He => self.he,
            PronounGroup::Nb => Threshold::default(),
        }
    }
}

/// Per-occupation, per-group thresholds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub occupations: BTreeMap<String, OccupationThresholds>,
}

impl GroupThresholds {
    pub fn get(&self, occupation: &str) -> OccupationThresholds {
        self.occupations.get(occupation).copied().unwrap_or_default()
    }

    pub fn accept_probability(&self, occupation: &str, group: PronounGroup, score: f64) -> f64 {
        self.get(occupation).for_group(group).accept_probability(score)
    }
}

fn fraction_at_least(sorted: &[f64], t: f64) -> f64 {
    let below = sorted.partition_point(|&s| s < t);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

/// Threshold on `positives` (sorted ascending) bringing the fraction accepted
/// down to at most `target`, starting from the default threshold.
fn lowered_threshold(positives: &[f64], target: f64, randomize: bool) -> Threshold {
    // Candidates are the distinct positive scores at or above the default
    // threshold; the first whose acceptance rate is within target wins.
    let mut prev: Option<f64> = None;
    let mut chosen: Option<f64> = None;
    let start = positives.partition_point(|&s| s < DEFAULT_THRESHOLD);
    let mut i = start;
    while i < positives.len() {
        let s = positives[i];
        if fraction_at_least(positives, s) <= target {
            chosen = Some(s);
            break;
        }
        prev = Some(s);
        while i < positives.len() && positives[i] == s {
            i += 1;
        }
    }
    let value = chosen.unwrap_or_else(|| {
        let max = positives.last().copied().unwrap_or(DEFAULT_THRESHOLD);
        // strictly above every score
        let above = f64::from_bits(max.to_bits() + 1);
        above.max(DEFAULT_THRESHOLD)
    });
    if !randomize {
        return Threshold::fixed(value);
    }
    let Some(lower) = prev else {
        return Threshold::fixed(value);
    };
    let hi = fraction_at_least(positives, value);
    let lo = fraction_at_least(positives, lower);
    if lo <= hi {
        return Threshold::fixed(value);
    }
    let probability = ((target - hi) / (lo - hi)).clamp(0.0, 1.0);
    Threshold {
        value,
        randomized: (probability > 0.0).then_some(RandomizedBoundary { lower, probability }),
    }
}

/// Equalizes TPR for one occupation. `scores`, `labels` and `groups` describe
/// the calibration biographies; only "she"/"he" entries are used. The group
/// with the lower TPR at the default threshold keeps it; the other group's
/// threshold is raised to the smallest value whose TPR does not exceed the
/// lower one. With `randomize`, acceptance between the two adjacent
/// thresholds is randomized so the expected TPRs match exactly.
pub fn fit_equalized_thresholds(
    scores: &[f64],
    labels: &[bool],
    groups: &[PronounGroup],
    randomize: bool,
) -> Result<OccupationThresholds> {
    if scores.len() != labels.len() || scores.len() != groups.len() {
        return Err(SnobError::Validation("threshold inputs differ in length".into()));
    }
    let mut pos: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for ((&s, &y), &g) in scores.iter().zip(labels).zip(groups) {
        if !y {
            continue;
        }
        match g {
            PronounGroup::She => pos[0].push(s),
            PronounGroup::He => pos[1].push(s),
            PronounGroup::Nb => {}
        }
    }
    if pos.iter().any(Vec::is_empty) {
        warn!("a pronoun group has no calibration positives; keeping default thresholds");
        return Ok(OccupationThresholds::default());
    }
    for p in &mut pos {
        p.sort_by(f64::total_cmp);
    }
    let tpr_she = fraction_at_least(&pos[0], DEFAULT_THRESHOLD);
    let tpr_he = fraction_at_least(&pos[1], DEFAULT_THRESHOLD);
    let mut out = OccupationThresholds::default();
    if tpr_she > tpr_he {
        out.she = lowered_threshold(&pos[0], tpr_he, randomize);
    } else if tpr_he > tpr_she {
        out.he = lowered_threshold(&pos[1], tpr_she, randomize);
    }
    Ok(out)
}

/// Fits thresholds for every occupation from per-biography score vectors
/// (`scores[i][k]` is occupation `k`'s score for biography `i`).
pub fn fit_group_thresholds(
    calibration: &Corpus,
    occupations: &[String],
    scores: &[Option<Vec<f64>>],
    randomize: bool,
) -> Result<GroupThresholds> {
    if scores.len() != calibration.len() {
        return Err(SnobError::Validation(
            "scores are not aligned with the calibration corpus".into(),
        ));
    }
    let rows: Vec<(&Biography, &Vec<f64>)> = calibration
        .biographies()
        .iter()
        .zip(scores)
        .filter_map(|(b, s)| Some((b, s.as_ref()?)))
        .filter(|(b, _)| b.pronoun_group.is_binary())
        .collect();
    let groups: Vec<PronounGroup> = rows.iter().map(|(b, _)| b.pronoun_group).collect();
    let fitted = occupations
        .par_iter()
        .enumerate()
        .map(|(k, occ)| {
            let s: Vec<f64> = rows.iter().map(|(_, v)| v[k]).collect();
            let y: Vec<bool> = rows.iter().map(|(b, _)| &b.occupation == occ).collect();
            fit_equalized_thresholds(&s, &y, &groups, randomize).map(|t| (occ.clone(), t))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(GroupThresholds { occupations: fitted })
}

/// Separate one-vs-all model sets for "she" and "he" biographies.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledModels {
    pub she: OccupationModelSet,
    pub he: OccupationModelSet,
    /// (group, occupation) pairs that fell back to pooled data.
    pub pooled: Vec<(PronounGroup, String)>,
}

impl DecoupledModels {
    pub fn for_group(&self, group: PronounGroup) -> &OccupationModelSet {
        match group {
            PronounGroup::He => &self.he,
            _ => &self.she,
        }
    }
}

/// Trains one model set per binary pronoun group on that group's training
/// biographies. When a group has no positive or no negative example for an
/// occupation, that occupation's model is trained on the pooled data instead.
pub fn train_decoupled(
    train: &Corpus,
    features: &[Option<FeatureVector>],
    space: &FeatureSpace,
    cfg: &TrainConfig,
) -> Result<DecoupledModels> {
    if features.len() != train.len() {
        return Err(SnobError::Validation("features are not aligned with the corpus".into()));
    }
    let mut rows: Vec<(&FeatureVector, usize, PronounGroup)> = Vec::new();
    for (b, f) in train.biographies().iter().zip(features) {
        if !b.pronoun_group.is_binary() {
            continue;
        }
        let Some(f) = f else { continue };
        let occ = train
            .occupation_index(&b.occupation)
            .ok_or_else(|| SnobError::Validation(format!("unknown occupation {:?}", b.occupation)))?;
        rows.push((f, occ, b.pronoun_group));
    }
    let occupations = train.occupations();
    let mut pooled = Vec::new();
    let mut sets = Vec::new();
    for group in [PronounGroup::She, PronounGroup::He] {
        let own: Vec<&(&FeatureVector, usize, PronounGroup)> = rows.iter().filter(|r| r.2 == group).collect();
        let plan: Vec<bool> = (0..occupations.len())
            .map(|k| own.iter().any(|r| r.1 == k) && own.iter().any(|r| r.1 != k))
            .collect();
        for (k, ok) in plan.iter().enumerate() {
            if !ok {
                warn!(
                    "no usable {group} training data for {:?}; using the pooled model",
                    occupations[k]
                );
                pooled.push((group, occupations[k].clone()));
            }
        }
        let models = (0..occupations.len())
            .into_par_iter()
            .map(|k| {
                let subset: Vec<&(&FeatureVector, usize, PronounGroup)> =
                    if plan[k] { own.clone() } else { rows.iter().collect() };
                let data = TrainingSet::new(
                    space.clone(),
                    subset.iter().map(|r| r.0).collect(),
                    subset.iter().map(|r| r.1 == k).collect(),
                    None,
                )?;
                train_logistic(&data, cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        sets.push(OccupationModelSet::new(space.clone(), occupations.to_vec(), models)?);
    }
    let he = sets.pop().expect("two model sets");
    let she = sets.pop().expect("two model sets");
    Ok(DecoupledModels { she, he, pooled })
}

/// Trained scorers for an approach.
#[derive(Debug, Clone, Copy)]
pub enum ScoringModels<'a> {
    Single(&'a OccupationModelSet),
    Decoupled(&'a DecoupledModels),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    /// Which decoupled model set scores nonbinary biographies.
    pub nonbinary_route: PronounGroup,
}

impl InterventionSpec {
    pub fn new(kind: InterventionKind) -> Self {
        InterventionSpec {
            kind,
            nonbinary_route: PronounGroup::She,
        }
    }
}

/// Per-occupation scores and acceptance probabilities for one biography.
/// Acceptance is 0 or 1 except on a randomized threshold boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub accept: Vec<f64>,
}

impl Prediction {
    /// Binary decision for occupation `k` given a uniform draw in [0, 1).
    pub fn decision(&self, k: usize, draw: f64) -> bool {
        draw < self.accept[k]
    }
}

/// Applies acceptance rules to a score vector.
pub fn decide(
    scores: Vec<f64>,
    occupations: &[String],
    group: PronounGroup,
    thresholds: Option<&GroupThresholds>,
) -> Prediction {
    let accept = scores
        .iter()
        .zip(occupations)
        .map(|(&s, occ)| match thresholds {
            Some(t) => t.accept_probability(occ, group, s),
            None => Threshold::default().accept_probability(s),
        })
        .collect();
    Prediction { scores, accept }
}

pub fn predict_with_intervention(
    bio: &Biography,
    x: &FeatureVector,
    spec: &InterventionSpec,
    models: ScoringModels<'_>,
    thresholds: Option<&GroupThresholds>,
) -> Result<Prediction> {
    let set = match (spec.kind, models) {
        (InterventionKind::De, ScoringModels::Decoupled(d)) => match bio.pronoun_group {
            PronounGroup::Nb => d.for_group(spec.nonbinary_route),
            g => d.for_group(g),
        },
        (InterventionKind::De, ScoringModels::Single(_)) => {
            return Err(SnobError::Config("DE needs decoupled models".into()))
        }
        (_, ScoringModels::Single(s)) => s,
        (k, ScoringModels::Decoupled(_)) => return Err(SnobError::Config(format!("{k} needs a single model set"))),
    };
    let thresholds = match spec.kind {
        InterventionKind::Po => Some(thresholds.ok_or_else(|| SnobError::Config("PO needs fitted thresholds".into()))?),
        _ => None,
    };
    let scores = set.predict_all(x)?;
    Ok(decide(scores, set.occupations(), bio.pronoun_group, thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use PronounGroup::*;

    fn tpr(scores: &[f64], t: &Threshold) -> f64 {
        scores.iter().map(|&s| t.accept_probability(s)).sum::<f64>() / scores.len() as f64
    }

    #[test]
    fn raises_advantaged_threshold() {
        let scores = [0.9, 0.8, 0.9, 0.4];
        let labels = [true; 4];
        let groups = [She, She, He, He];
        let t = fit_equalized_thresholds(&scores, &labels, &groups, false).unwrap();
        assert_eq!(t.she, Threshold::fixed(0.9));
        assert_eq!(t.he, Threshold::fixed(0.5));
        assert_eq!(tpr(&[0.9, 0.8], &t.she), tpr(&[0.9, 0.4], &t.he));
    }

    #[test]
    fn equal_tprs_keep_defaults() {
        let t = fit_equalized_thresholds(&[0.7, 0.2, 0.6, 0.1], &[true; 4], &[She, She, He, He], true).unwrap();
        assert_eq!(t, OccupationThresholds::default());
    }

    #[test]
    fn randomized_threshold_hits_target_exactly() {
        // he TPR = 1/3; she needs 1/3 of {0.95, 0.9, 0.85, 0.8, 0.7}
        let she = [0.95, 0.9, 0.85, 0.8, 0.7];
        let he = [0.9, 0.3, 0.2];
        let scores: Vec<f64> = she.iter().chain(&he).copied().collect();
        let groups: Vec<PronounGroup> = she.iter().map(|_| She).chain(he.iter().map(|_| He)).collect();
        let det = fit_equalized_thresholds(&scores, &[true; 8], &groups, false).unwrap();
        assert_eq!(det.she.value, 0.95);
        let rnd = fit_equalized_thresholds(&scores, &[true; 8], &groups, true).unwrap();
        assert!((tpr(&she, &rnd.she) - 1.0 / 3.0).abs() < 1e-12);
        assert!(tpr(&she, &det.she) <= 1.0 / 3.0);
    }

    #[test]
    fn no_scores_above_target_threshold() {
        // he TPR 0; she must reach 0, so the threshold moves above every score
        let t = fit_equalized_thresholds(&[0.6, 0.9, 0.1], &[true; 3], &[She, She, He], false).unwrap();
        assert!(t.she.value > 0.9);
        assert_eq!(tpr(&[0.6, 0.9], &t.she), 0.0);
    }

    #[test]
    fn nonbinary_uses_default() {
        let t = OccupationThresholds {
            she: Threshold::fixed(0.9),
            he: Threshold::fixed(0.7),
        };
        assert_eq!(t.for_group(Nb), Threshold::default());
    }

    #[test]
    fn intervention_names_roundtrip() {
        for k in InterventionKind::ALL {
            assert_eq!(k.as_str().parse::<InterventionKind>().unwrap(), k);
        }
        assert!("XX".parse::<InterventionKind>().is_err());
    }
}
