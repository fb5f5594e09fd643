//! Weighted, L2-regularized binary logistic regression and one-vs-all
//! occupation models.
//!
//! The objective is
//!
//! ```text
//! sum_i s_i * (log(1 + exp(z_i)) - y_i * z_i) + (reg / 2) * |w|^2,   z_i = w.x_i + b
//! ```
//!
//! with the intercept `b` left unregularized. It is minimized from a zero
//! start by a truncated Newton method (preconditioned conjugate gradient on
//! Hessian-vector products plus a backtracking line search), which is fully
//! deterministic.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Result, SnobError};
use crate::features::{FeatureSpace, FeatureVector};
use crate::text::Repr;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    weights: Vec<f64>,
    intercept: f64,
    repr: Repr,
    feature_space_id: String,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, intercept: f64, repr: Repr, feature_space_id: impl Into<String>) -> Self {
        LinearModel {
            weights,
            intercept,
            repr,
            feature_space_id: feature_space_id.into(),
        }
    }

    pub fn zeros(space: &FeatureSpace) -> Self {
        Self::new(vec![0.0; space.dim], 0.0, space.repr, space.id.clone())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn feature_space_id(&self) -> &str {
        &self.feature_space_id
    }

    pub fn linear_score(&self, x: &FeatureVector) -> Result<f64> {
        x.check_dim(self.dim())?;
        Ok(x.dot(&self.weights) + self.intercept)
    }
}

/// Logistic function, clamped so the result stays strictly inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn predict_proba(model: &LinearModel, x: &FeatureVector) -> Result<f64> {
    model.linear_score(x).map(sigmoid)
}

/// Feature rows with binary labels and non-negative sample weights.
#[derive(Debug, Clone)]
pub struct TrainingSet<'a> {
    space: FeatureSpace,
    rows: Vec<&'a FeatureVector>,
    labels: Vec<bool>,
    weights: Vec<f64>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(
        space: FeatureSpace,
        rows: Vec<&'a FeatureVector>,
        labels: Vec<bool>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let weights = weights.unwrap_or_else(|| vec![1.0; rows.len()]);
        if rows.len() != labels.len() || rows.len() != weights.len() {
            return Err(SnobError::Validation(format!(
                "training set lengths differ: {} rows, {} labels, {} weights",
                rows.len(),
                labels.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(SnobError::Validation(format!("invalid sample weight {w}")));
        }
        for r in &rows {
            r.check_dim(space.dim)?;
        }
        let (mut pos, mut neg) = (0.0, 0.0);
        for (&y, &w) in labels.iter().zip(&weights) {
            if y {
                pos += w;
            } else {
                neg += w;
            }
        }
        if pos <= 0.0 || neg <= 0.0 {
            return Err(SnobError::Validation(
                "training set needs weighted samples of both labels".into(),
            ));
        }
        Ok(TrainingSet {
            space,
            rows,
            labels,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rows(&self) -> &[&'a FeatureVector] {
        &self.rows
    }

    /// Weighted share of positive labels.
    pub fn weighted_base_rate(&self) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let pos: f64 = self
            .labels
            .iter()
            .zip(&self.weights)
            .filter(|(y, _)| **y)
            .map(|(_, w)| w)
            .sum();
        pos / total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub reg_strength: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            reg_strength: 1.0,
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg_strength >= 0.0) || !self.reg_strength.is_finite() {
            return Err(SnobError::Config(format!(
                "reg_strength must be >= 0, got {}",
                self.reg_strength
            )));
        }
        if !(self.tol > 0.0) {
            return Err(SnobError::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(SnobError::Config("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Objective value over the weighted data. Parameters are the weights
/// followed by the intercept.
fn objective(data: &TrainingSet<'_>, theta: &[f64], reg: f64) -> f64 {
    let d = data.space.dim;
    let (w, b) = (&theta[..d], theta[d]);
    let mut loss = 0.0;
    for ((x, &y), &s) in data.rows.iter().zip(&data.labels).zip(&data.weights) {
        if s == 0.0 {
            continue;
        }
        let z = x.dot(w) + b;
        loss += s * (softplus(z) - if y { z } else { 0.0 });
    }
    loss + 0.5 * reg * w.iter().map(|v| v * v).sum::<f64>()
}

/// Objective, gradient and per-row curvature `s_i p_i (1 - p_i)`.
fn objective_grad(data: &TrainingSet<'_>, theta: &[f64], reg: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let d = data.space.dim;
    let (w, b) = (&theta[..d], theta[d]);
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    let mut curv = vec![0.0; data.len()];
    for (i, ((x, &y), &s)) in data.rows.iter().zip(&data.labels).zip(&data.weights).enumerate() {
        if s == 0.0 {
            continue;
        }
        let z = x.dot(w) + b;
        loss += s * (softplus(z) - if y { z } else { 0.0 });
        let p = sigmoid(z);
        let r = s * (p - if y { 1.0 } else { 0.0 });
        x.axpy(r, &mut grad[..d]);
        grad[d] += r;
        curv[i] = s * p * (1.0 - p);
    }
    for (g, wj) in grad[..d].iter_mut().zip(w) {
        *g += reg * wj;
    }
    loss += 0.5 * reg * w.iter().map(|v| v * v).sum::<f64>();
    (loss, grad, curv)
}

fn hessian_vec(data: &TrainingSet<'_>, curv: &[f64], reg: f64, v: &[f64]) -> Vec<f64> {
    let d = data.space.dim;
    let (vw, vb) = (&v[..d], v[d]);
    let mut out = vec![0.0; d + 1];
    for (x, &c) in data.rows.iter().zip(curv) {
        if c == 0.0 {
            continue;
        }
        let a = c * (x.dot(vw) + vb);
        x.axpy(a, &mut out[..d]);
        out[d] += a;
    }
    for (o, vj) in out[..d].iter_mut().zip(vw) {
        *o += reg * vj;
    }
    out
}

fn hessian_diag(data: &TrainingSet<'_>, curv: &[f64], reg: f64) -> Vec<f64> {
    let d = data.space.dim;
    let mut diag = vec![reg; d + 1];
    diag[d] = 0.0;
    for (x, &c) in data.rows.iter().zip(curv) {
        x.add_squares(c, &mut diag[..d]);
        diag[d] += c;
    }
    for v in &mut diag {
        if *v <= 1e-12 {
            *v = 1.0;
        }
    }
    diag
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weighted negative log-likelihood plus `(reg/2)|w|^2` and its gradient.
/// The gradient has `dim + 1` entries, the last one for the intercept.
pub fn loss_and_gradient(model: &LinearModel, data: &TrainingSet<'_>, reg_strength: f64) -> Result<(f64, Vec<f64>)> {
    if !(reg_strength >= 0.0) {
        return Err(SnobError::Config(format!(
            "reg_strength must be >= 0, got {reg_strength}"
        )));
    }
    if model.dim() != data.space.dim {
        return Err(SnobError::Dimension {
            expected: data.space.dim,
            actual: model.dim(),
        });
    }
    let mut theta = model.weights.clone();
    theta.push(model.intercept);
    let (loss, grad, _) = objective_grad(data, &theta, reg_strength);
    Ok((loss, grad))
}

/// Outcome of an optimization run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub gradient_max_norm: f64,
}

pub fn train_logistic(data: &TrainingSet<'_>, cfg: &TrainConfig) -> Result<LinearModel> {
    train_logistic_with_summary(data, cfg).map(|(m, _)| m)
}

pub fn train_logistic_with_summary(
    data: &TrainingSet<'_>,
    cfg: &TrainConfig,
) -> Result<(LinearModel, TrainingSummary)> {
    cfg.validate()?;
    let d = data.space.dim;
    let reg = cfg.reg_strength;
    let mut theta = vec![0.0; d + 1];
    let mut summary = TrainingSummary {
        iterations: 0,
        converged: false,
        final_loss: f64::NAN,
        gradient_max_norm: f64::INFINITY,
    };
    for iter in 0..cfg.max_iter {
        let (f, g, curv) = objective_grad(data, &theta, reg);
        if !f.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(SnobError::Numerical {
                iteration: iter,
                message: format!("non-finite objective {f}"),
            });
        }
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        summary = TrainingSummary {
            iterations: iter,
            converged: gmax < cfg.tol,
            final_loss: f,
            gradient_max_norm: gmax,
        };
        if summary.converged {
            break;
        }
        let step = newton_direction(data, &curv, reg, &g);
        let slope = dot(&g, &step);
        if !(slope < 0.0) {
            warn!("newton direction is not a descent direction at iteration {iter}; stopping");
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        let mut trial = theta.clone();
        while t > 1e-12 {
            for ((tr, th), s) in trial.iter_mut().zip(&theta).zip(&step) {
                *tr = th + t * s;
            }
            let ft = objective(data, &trial, reg);
            if !ft.is_finite() {
                t *= 0.5;
                continue;
            }
            // The second clause lets a full step through when the decrease is
            // below the rounding level of the objective.
            if ft <= f + 1e-4 * t * slope || (t == 1.0 && ft <= f + 1e-13 * f.abs().max(1.0)) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            debug!("line search stalled at iteration {iter} with gradient max-norm {gmax:e}");
            break;
        }
        std::mem::swap(&mut theta, &mut trial);
        summary.iterations = iter + 1;
    }
    if !summary.converged {
        let (f, g, _) = objective_grad(data, &theta, reg);
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        summary.final_loss = f;
        summary.gradient_max_norm = gmax;
        summary.converged = gmax < cfg.tol;
        if !summary.converged {
            warn!(
                "logistic regression stopped after {} iterations with gradient max-norm {gmax:e} (tol {:e})",
                summary.iterations, cfg.tol
            );
        }
    }
    let intercept = theta.pop().unwrap_or(0.0);
    Ok((
        LinearModel::new(theta, intercept, data.space.repr, data.space.id.clone()),
        summary,
    ))
}

/// Approximately solves `H p = -g` by Jacobi-preconditioned conjugate
/// gradient with the usual truncated-Newton forcing term.
fn newton_direction(data: &TrainingSet<'_>, curv: &[f64], reg: f64, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let precond = hessian_diag(data, curv, reg);
    let gnorm = dot(g, g).sqrt();
    let forcing = gnorm.sqrt().min(0.5) * gnorm;
    let max_cg = n.clamp(10, 250);

    let mut p = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, m)| a / m).collect();
    let mut dir = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_cg {
        if dot(&r, &r).sqrt() <= forcing {
            break;
        }
        let hd = hessian_vec(data, curv, reg, &dir);
        let curvature = dot(&dir, &hd);
        if curvature <= 0.0 {
            break;
        }
        let alpha = rz / curvature;
        for i in 0..n {
            p[i] += alpha * dir[i];
            r[i] -= alpha * hd[i];
        }
        for i in 0..n {
            z[i] = r[i] / precond[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            dir[i] = z[i] + beta * dir[i];
        }
    }
    if p.iter().all(|x| *x == 0.0) {
        // fall back to scaled steepest descent
        return g.iter().zip(&precond).map(|(x, m)| -x / m).collect();
    }
    p
}

/// One binary model per occupation over a shared feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationModelSet {
    space: FeatureSpace,
    occupations: Vec<String>,
    models: Vec<LinearModel>,
}

impl OccupationModelSet {
    pub fn new(space: FeatureSpace, occupations: Vec<String>, models: Vec<LinearModel>) -> Result<Self> {
        if occupations.len() != models.len() {
            return Err(SnobError::Validation("one model per occupation required".into()));
        }
        for m in &models {
            if m.dim() != space.dim || m.feature_space_id() != space.id {
                return Err(SnobError::Validation(format!(
                    "model over {} does not match feature space {}",
                    m.feature_space_id(),
                    space.id
                )));
            }
        }
        Ok(OccupationModelSet {
            space,
            occupations,
            models,
        })
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn occupations(&self) -> &[String] {
        &self.occupations
    }

    pub fn models(&self) -> &[LinearModel] {
        &self.models
    }

    pub fn model(&self, occupation: &str) -> Option<&LinearModel> {
        self.occupations
            .iter()
            .position(|o| o == occupation)
            .map(|i| &self.models[i])
    }

    /// Per-occupation probabilities, read independently (not normalized).
    pub fn predict_all(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.models.iter().map(|m| predict_proba(m, x)).collect()
    }

    /// Index of the occupation with the highest probability.
    pub fn predict_class(&self, x: &FeatureVector) -> Result<usize> {
        let probs = self.predict_all(x)?;
        Ok(argmax(&probs))
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-row sample weight for the model of one occupation: `(row, occupation
/// index) -> weight`.
pub type OvaWeightFn<'a> = dyn Fn(usize, usize) -> f64 + Sync + 'a;

/// Trains one binary model per occupation of `train` (positive = that
/// occupation). Non-binary biographies and biographies without features are
/// left out. `features` is aligned with `train.biographies()`.
pub fn train_one_vs_all(
    train: &Corpus,
    features: &[Option<FeatureVector>],
    space: &FeatureSpace,
    sample_weights: Option<&OvaWeightFn<'_>>,
    cfg: &TrainConfig,
) -> Result<OccupationModelSet> {
    if features.len() != train.len() {
        return Err(SnobError::Validation("features are not aligned with the corpus".into()));
    }
    let mut rows: Vec<&FeatureVector> = Vec::new();
    let mut row_bio: Vec<usize> = Vec::new();
    let mut row_occ: Vec<usize> = Vec::new();
    for (i, (b, f)) in train.biographies().iter().zip(features).enumerate() {
        if !b.pronoun_group.is_binary() {
            continue;
        }
        let Some(f) = f else { continue };
        let occ = train
            .occupation_index(&b.occupation)
            .ok_or_else(|| SnobError::Validation(format!("unknown occupation {:?}", b.occupation)))?;
        rows.push(f);
        row_bio.push(i);
        row_occ.push(occ);
    }
    for (k, occ) in train.occupations().iter().enumerate() {
        if !row_occ.contains(&k) {
            return Err(SnobError::Validation(format!(
                "occupation {occ:?} has no training biographies"
            )));
        }
    }
    let models = (0..train.occupations().len())
        .into_par_iter()
        .map(|k| {
            let labels: Vec<bool> = row_occ.iter().map(|&o| o == k).collect();
            let weights = sample_weights.map(|wf| row_bio.iter().map(|&i| wf(i, k)).collect());
            let data = TrainingSet::new(space.clone(), rows.clone(), labels, weights)?;
            let (model, summary) = train_logistic_with_summary(&data, cfg)?;
            debug!(
                "trained {} model for {:?}: {} iterations, converged = {}",
                space.repr,
                train.occupations()[k],
                summary.iterations,
                summary.converged
            );
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;
    OccupationModelSet::new(space.clone(), train.occupations().to_vec(), models)
}

#[derive(Serialize, Deserialize)]
struct ModelEntry {
    occupation: String,
    weights: Vec<f64>,
    intercept: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelSetFile {
    format_version: u32,
    repr: Repr,
    feature_space_id: String,
    dim: usize,
    config_hash: String,
    models: Vec<ModelEntry>,
}

/// Writes a model set as versioned JSON tagged with the training config hash.
pub fn write_model_set(set: &OccupationModelSet, config_hash: &str, path: &Path) -> Result<()> {
    let file = ModelSetFile {
        format_version: MODEL_FORMAT_VERSION,
        repr: set.space.repr,
        feature_space_id: set.space.id.clone(),
        dim: set.space.dim,
        config_hash: config_hash.to_string(),
        models: set
            .occupations
            .iter()
            .zip(&set.models)
            .map(|(o, m)| ModelEntry {
                occupation: o.clone(),
                weights: m.weights.clone(),
                intercept: m.intercept,
            })
            .collect(),
    };
    let f = File::create(path).map_err(|e| SnobError::io(path, e))?;
    serde_json::to_writer(BufWriter::new(f), &file).map_err(|e| SnobError::io(path, e.into()))
}

/// Reads a model set and the config hash it was trained under.
pub fn read_model_set(path: &Path) -> Result<(OccupationModelSet, String)> {
    let f = File::open(path).map_err(|e| SnobError::io(path, e))?;
    let file: ModelSetFile = serde_json::from_reader(BufReader::new(f)).map_err(|e| SnobError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(SnobError::Validation(format!(
            "unsupported model format version {}",
            file.format_version
        )));
    }
    let space = FeatureSpace {
        repr: file.repr,
        id: file.feature_space_id,
        dim: file.dim,
    };
    let (occs, models) = file
        .models
        .into_iter()
        .map(|e| {
            (
                e.occupation,
                LinearModel::new(e.weights, e.intercept, space.repr, space.id.clone()),
            )
        })
        .unzip();
    Ok((OccupationModelSet::new(space, occs, models)?, file.config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{DenseVector, SparseVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_space(dim: usize) -> FeatureSpace {
        FeatureSpace {
            repr: Repr::We,
            id: "test".into(),
            dim,
        }
    }

    fn dense(v: &[f64]) -> FeatureVector {
        FeatureVector::Dense(DenseVector(v.to_vec()))
    }

    #[test]
    fn zero_model_balanced_loss_is_n_ln2() {
        let rows = [
            dense(&[1.0, 2.0]),
            dense(&[-1.0, 0.5]),
            dense(&[0.3, 0.3]),
            dense(&[2.0, -1.0]),
        ];
        let data = TrainingSet::new(
            dense_space(2),
            rows.iter().collect(),
            vec![true, false, true, false],
            None,
        )
        .unwrap();
        let (loss, _) = loss_and_gradient(&LinearModel::zeros(&dense_space(2)), &data, 0.7).unwrap();
        assert!((loss - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn doubling_weights_doubles_data_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<FeatureVector> = (0..10)
            .map(|_| dense(&(0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let labels: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
        let w: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..2.0)).collect();
        let model = LinearModel::new(vec![0.3, -0.2, 0.5], 0.1, Repr::We, "test");
        let one = TrainingSet::new(dense_space(3), rows.iter().collect(), labels.clone(), Some(w.clone())).unwrap();
        let two = TrainingSet::new(
            dense_space(3),
            rows.iter().collect(),
            labels,
            Some(w.iter().map(|x| 2.0 * x).collect()),
        )
        .unwrap();
        let (l1, _) = loss_and_gradient(&model, &one, 0.0).unwrap();
        let (l2, _) = loss_and_gradient(&model, &two, 0.0).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let rows = [dense(&[1.0, 2.0]), dense(&[0.0, 1.0])];
        let data = TrainingSet::new(dense_space(2), rows.iter().collect(), vec![true, false], None).unwrap();
        let m = LinearModel::new(vec![0.0; 3], 0.0, Repr::We, "test");
        assert!(matches!(
            loss_and_gradient(&m, &data, 1.0),
            Err(SnobError::Dimension { .. })
        ));
        assert!(predict_proba(&m, &rows[0]).is_err());
        assert!(TrainingSet::new(dense_space(3), rows.iter().collect(), vec![true, false], None).is_err());
    }

    #[test]
    fn training_set_validation() {
        let rows = [dense(&[1.0]), dense(&[0.0])];
        assert!(TrainingSet::new(dense_space(1), rows.iter().collect(), vec![true, true], None).is_err());
        assert!(TrainingSet::new(
            dense_space(1),
            rows.iter().collect(),
            vec![true, false],
            Some(vec![1.0, -1.0])
        )
        .is_err());
        assert!(TrainingSet::new(dense_space(1), rows.iter().collect(), vec![true], None).is_err());
    }

    #[test]
    fn separable_pair_is_fit() {
        let rows = [dense(&[1.0]), dense(&[-1.0])];
        let data = TrainingSet::new(dense_space(1), rows.iter().collect(), vec![true, false], None).unwrap();
        let cfg = TrainConfig {
            reg_strength: 0.01,
            ..Default::default()
        };
        let m = train_logistic(&data, &cfg).unwrap();
        assert!(predict_proba(&m, &rows[0]).unwrap() > 0.5);
        assert!(predict_proba(&m, &rows[1]).unwrap() < 0.5);
    }

    #[test]
    fn sparse_rows_train() {
        let rows = [
            FeatureVector::Sparse(SparseVector::from_pairs([(0, 2.0)])),
            FeatureVector::Sparse(SparseVector::from_pairs([(1, 1.0), (2, 1.0)])),
            FeatureVector::Sparse(SparseVector::from_pairs([(0, 1.0), (2, 1.0)])),
            FeatureVector::Sparse(SparseVector::from_pairs([(1, 3.0)])),
        ];
        let space = FeatureSpace {
            repr: Repr::Bow,
            id: "v".into(),
            dim: 3,
        };
        let data = TrainingSet::new(space, rows.iter().collect(), vec![true, false, true, false], None).unwrap();
        let (m, s) = train_logistic_with_summary(&data, &TrainConfig::default()).unwrap();
        assert!(s.converged, "{s:?}");
        assert!(m.weights()[0] > 0.0 && m.weights()[1] < 0.0);
    }

    #[test]
    fn sigmoid_midpoint_and_bounds() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) < 1.0 && sigmoid(-800.0) > 0.0);
        let mut prev = 0.0;
        for k in 0..60 {
            let p = sigmoid(k as f64 * 0.5);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn predict_matches_direct_sigmoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b = rng.random_range(-1.0..1.0);
            let m = LinearModel::new(w.clone(), b, Repr::We, "t");
            let z: f64 = w.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>() + b;
            let expect = 1.0 / (1.0 + (-z).exp());
            assert!((predict_proba(&m, &dense(&x)).unwrap() - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn model_set_file_roundtrip() {
        let space = dense_space(2);
        let set = OccupationModelSet::new(
            space.clone(),
            vec!["a".into(), "b".into()],
            vec![
                LinearModel::new(vec![0.1, 0.2], 0.3, Repr::We, "test"),
                LinearModel::new(vec![-0.1, 1e-17], -2.5, Repr::We, "test"),
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_model_set(&set, "abc", &p).unwrap();
        let (back, hash) = read_model_set(&p).unwrap();
        assert_eq!(back, set);
        assert_eq!(hash, "abc");
    }
}
