//! Group-fairness and social-norm-bias statistics.
//!
//! * TPR per pronoun group and the per-occupation gap `TPR_she - TPR_he`.
//! * Gap^RMS, the root mean square of the per-occupation gaps.
//! * Spearman rank correlation (average ranks for ties) with a two-sided
//!   p-value from the t approximation, or from a seeded permutation test for
//!   small samples.
//! * `r_c`: within one occupation and one pronoun group, the correlation
//!   between occupation-classifier scores and norm-classifier scores.
//! * `rho(p_C, r_C)`: correlation across occupations between the "she" share
//!   and `r_c`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::PronounGroup;
use crate::error::{Result, SnobError};
use crate::interventions::InterventionKind;

/// Sample sizes below this use the permutation test in the nonbinary
/// analysis.
pub const PERMUTATION_MAX_N: usize = 30;
pub const DEFAULT_PERMUTATIONS: usize = 100_000;
pub const DEFAULT_PERMUTATION_SEED: u64 = 0x5eed;

/// Fraction of group positives that were accepted.
pub fn tpr(decisions: &[bool], labels: &[bool], group_mask: &[bool]) -> Result<f64> {
    let accept: Vec<f64> = decisions.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect();
    expected_tpr(&accept, labels, group_mask)
}

/// TPR when decisions are acceptance probabilities (randomized thresholds):
/// the expected fraction of group positives accepted.
pub fn expected_tpr(accept: &[f64], labels: &[bool], group_mask: &[bool]) -> Result<f64> {
    if accept.len() != labels.len() || labels.len() != group_mask.len() {
        return Err(SnobError::Validation("tpr inputs differ in length".into()));
    }
    let (mut hits, mut positives) = (0.0, 0usize);
    for ((&a, &y), &m) in accept.iter().zip(labels).zip(group_mask) {
        if y && m {
            positives += 1;
            hits += a;
        }
    }
    if positives == 0 {
        return Err(SnobError::Undefined("group has no positive examples".into()));
    }
    Ok(hits / positives as f64)
}

pub fn gap_rms(gaps: &[f64]) -> Result<f64> {
    if gaps.is_empty() {
        return Err(SnobError::Undefined("no defined gaps".into()));
    }
    Ok((gaps.iter().map(|g| g * g).sum::<f64>() / gaps.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PValueMethod {
    TApproximation,
    Permutation { permutations: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    #[serde(flatten)]
    pub method: PValueMethod,
}

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check_inputs(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(SnobError::Validation(format!(
            "correlation inputs differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(SnobError::Undefined(format!("need at least 3 pairs, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(SnobError::Validation("correlation inputs must be finite".into()));
    }
    Ok(())
}

fn rank_correlation(xs: &[f64], ys: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    check_inputs(xs, ys)?;
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let rho = pearson(&rx, &ry).ok_or_else(|| SnobError::Undefined("constant input".into()))?;
    Ok((rx, ry, rho))
}

/// Two-sided p-value of `rho` under zero correlation, from
/// `t = rho * sqrt((n - 2) / (1 - rho^2))` with `n - 2` degrees of freedom.
pub fn t_approximation_p_value(rho: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    let (_, _, rho) = rank_correlation(xs, ys)?;
    Ok(Correlation {
        rho,
        p_value: t_approximation_p_value(rho, xs.len()),
        n: xs.len(),
        method: PValueMethod::TApproximation,
    })
}

/// Spearman correlation with a Monte Carlo permutation p-value:
/// `(1 + #{|rho_perm| >= |rho|}) / (1 + permutations)`.
pub fn spearman_permutation(xs: &[f64], ys: &[f64], permutations: usize, seed: u64) -> Result<Correlation> {
    let (rx, mut ry, rho) = rank_correlation(xs, ys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rho.abs() - 1e-12;
    let mut extreme = 0usize;
    for _ in 0..permutations {
        ry.shuffle(&mut rng);
        if pearson(&rx, &ry).is_some_and(|r| r.abs() >= target) {
            extreme += 1;
        }
    }
    Ok(Correlation {
        rho,
        p_value: (1 + extreme) as f64 / (1 + permutations) as f64,
        n: xs.len(),
        method: PValueMethod::Permutation { permutations, seed },
    })
}

/// `r_c`: Spearman correlation between occupation scores and norm scores
/// over the same biographies.
pub fn snob_single(g_scores: &[f64], yc_scores: &[f64]) -> Result<Correlation> {
    spearman(yc_scores, g_scores)
}

/// `rho(p_C, r_C)` over occupations; entries where either side is undefined
/// are dropped pairwise.
pub fn snob_cross(she_fractions: &[Option<f64>], r: &[Option<f64>]) -> Result<Correlation> {
    if she_fractions.len() != r.len() {
        return Err(SnobError::Validation("occupation lists are not aligned".into()));
    }
    let (ps, rs): (Vec<f64>, Vec<f64>) = she_fractions
        .iter()
        .zip(r)
        .filter_map(|(p, r)| Some(((*p)?, (*r)?)))
        .unzip();
    if ps.len() < 3 {
        return Err(SnobError::Undefined(format!(
            "need at least 3 occupations with defined values, got {}",
            ps.len()
        )));
    }
    spearman(&ps, &rs)
}

/// Correlation over nonbinary biographies of one occupation. Samples with
/// fewer than [`PERMUTATION_MAX_N`] pairs get a permutation p-value.
pub fn snob_nonbinary(g_scores: &[f64], yc_scores: &[f64]) -> Result<Correlation> {
    if yc_scores.len() < PERMUTATION_MAX_N {
        spearman_permutation(yc_scores, g_scores, DEFAULT_PERMUTATIONS, DEFAULT_PERMUTATION_SEED)
    } else {
        spearman(yc_scores, g_scores)
    }
}

/// Representation label of an approach; `External` covers imported scores.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ApproachId {
    pub repr: String,
    pub intervention: InterventionKind,
}

impl ApproachId {
    pub fn new(repr: impl Into<String>, intervention: InterventionKind) -> Self {
        ApproachId {
            repr: repr.into(),
            intervention,
        }
    }
}

impl std::fmt::Display for ApproachId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}, {}", self.repr, self.intervention)
    }
}

/// Identifies the configuration and split a metric was computed on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub split_id: String,
}

/// Per-occupation inputs to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationRun {
    pub occupation: String,
    pub she_fraction: Option<f64>,
    pub tpr_she: Option<f64>,
    pub tpr_he: Option<f64>,
    /// Binary one-vs-all accuracy of this occupation's classifier.
    pub accuracy: Option<f64>,
    pub r: Option<Correlation>,
    pub r_irrev: Option<Correlation>,
    /// Number of biographies `r` was computed over.
    pub n_group: usize,
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationAudit {
    pub occupation: String,
    pub she_fraction: Option<f64>,
    pub tpr_she: Option<f64>,
    pub tpr_he: Option<f64>,
    /// `tpr_she - tpr_he`
    pub gap: Option<f64>,
    pub accuracy: Option<f64>,
    pub r: Option<Correlation>,
    pub r_irrev: Option<Correlation>,
    pub n_group: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonbinaryAudit {
    pub occupation: String,
    /// For decoupled models, which group's model scored the biographies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_group: Option<PronounGroup>,
    pub n: usize,
    pub correlation: Option<Correlation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub approach: ApproachId,
    pub snob_group: PronounGroup,
    pub config_hash: String,
    pub split_id: String,
    pub occupations: Vec<OccupationAudit>,
    pub gap_rms: Option<f64>,
    pub rho: Option<Correlation>,
    pub rho_irrev: Option<Correlation>,
    /// Mean over occupations of binary one-vs-all accuracy.
    pub mean_accuracy: Option<f64>,
    /// Accuracy of the argmax over occupation scores.
    pub multiclass_accuracy: Option<f64>,
    pub nonbinary: Vec<NonbinaryAudit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Report-level inputs that are not per occupation.
#[derive(Debug, Clone, Default)]
pub struct ReportExtras {
    pub multiclass_accuracy: Option<f64>,
    pub nonbinary: Vec<NonbinaryAudit>,
    pub notes: Vec<String>,
}

/// Combines per-occupation runs into a report, deriving gaps, Gap^RMS,
/// `rho(p_C, r_C)`, `rho(p_C, r^irrev_C)` and mean accuracy. All runs must
/// share one provenance.
pub fn assemble_report(
    approach: ApproachId,
    snob_group: PronounGroup,
    runs: Vec<OccupationRun>,
    extras: ReportExtras,
) -> Result<AuditReport> {
    let provenance = runs
        .first()
        .map(|r| r.provenance.clone())
        .ok_or_else(|| SnobError::Validation("report needs at least one occupation".into()))?;
    if let Some(bad) = runs.iter().find(|r| r.provenance != provenance) {
        return Err(SnobError::Validation(format!(
            "occupation {:?} was computed on split {} / config {}, expected {} / {}",
            bad.occupation,
            bad.provenance.split_id,
            bad.provenance.config_hash,
            provenance.split_id,
            provenance.config_hash
        )));
    }
    let mut notes = extras.notes;
    let occupations: Vec<OccupationAudit> = runs
        .into_iter()
        .map(|r| OccupationAudit {
            gap: r.tpr_she.zip(r.tpr_he).map(|(s, h)| s - h),
            occupation: r.occupation,
            she_fraction: r.she_fraction,
            tpr_she: r.tpr_she,
            tpr_he: r.tpr_he,
            accuracy: r.accuracy,
            r: r.r,
            r_irrev: r.r_irrev,
            n_group: r.n_group,
            notes: r.notes,
        })
        .collect();
    let gaps: Vec<f64> = occupations.iter().filter_map(|o| o.gap).collect();
    let gap_rms = gap_rms(&gaps).ok();
    let ps: Vec<Option<f64>> = occupations.iter().map(|o| o.she_fraction).collect();
    let rs: Vec<Option<f64>> = occupations.iter().map(|o| o.r.map(|c| c.rho)).collect();
    let rs_irrev: Vec<Option<f64>> = occupations.iter().map(|o| o.r_irrev.map(|c| c.rho)).collect();
    let rho = match snob_cross(&ps, &rs) {
        Ok(c) => Some(c),
        Err(e) => {
            notes.push(format!("rho(p_C, r_C) undefined: {e}"));
            None
        }
    };
    let rho_irrev = if rs_irrev.iter().any(Option::is_some) {
        match snob_cross(&ps, &rs_irrev) {
            Ok(c) => Some(c),
            Err(e) => {
                notes.push(format!("rho(p_C, r_irrev_C) undefined: {e}"));
                None
            }
        }
    } else {
        None
    };
    let accs: Vec<f64> = occupations.iter().filter_map(|o| o.accuracy).collect();
    let mean_accuracy = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
    Ok(AuditReport {
        approach,
        snob_group,
        config_hash: provenance.config_hash,
        split_id: provenance.split_id,
        occupations,
        gap_rms,
        rho,
        rho_irrev,
        mean_accuracy,
        multiclass_accuracy: extras.multiclass_accuracy,
        nonbinary: extras.nonbinary,
        notes,
    })
}
