//! Feature vectors as seen by the linear models, and corpus-wide
//! featurization for either representation.

use std::collections::HashSet;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Result, SnobError};
use crate::text::{featurize_bow, featurize_we_excluding, DenseVector, EmbeddingTable, Repr, SparseVector, Vocabulary};

/// Identity and width of a feature space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub repr: Repr,
    pub id: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureVector {
    Sparse(SparseVector),
    Dense(DenseVector),
}

impl FeatureVector {
    /// Smallest feature-space width that can hold this vector.
    pub fn required_dim(&self) -> usize {
        match self {
            FeatureVector::Sparse(s) => s.max_index().map_or(0, |i| i + 1),
            FeatureVector::Dense(d) => d.dim(),
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        let ok = match self {
            FeatureVector::Sparse(s) => s.max_index().is_none_or(|i| i < dim),
            FeatureVector::Dense(d) => d.dim() == dim,
        };
        if ok {
            Ok(())
        } else {
            Err(SnobError::Dimension {
                expected: dim,
                actual: self.required_dim(),
            })
        }
    }

    #[inline]
    pub fn dot(&self, w: &[f64]) -> f64 {
        match self {
            FeatureVector::Sparse(s) => s.entries().iter().map(|&(i, v)| w[i] * v).sum(),
            FeatureVector::Dense(d) => d.0.iter().zip(w).map(|(x, y)| x * y).sum(),
        }
    }

    /// `out += a * self`
    #[inline]
    pub fn axpy(&self, a: f64, out: &mut [f64]) {
        match self {
            FeatureVector::Sparse(s) => {
                for &(i, v) in s.entries() {
                    out[i] += a * v;
                }
            }
            FeatureVector::Dense(d) => {
                for (o, x) in out.iter_mut().zip(&d.0) {
                    *o += a * x;
                }
            }
        }
    }

    /// `out += a * self∘self` (elementwise square), used for Jacobi
    /// preconditioning.
    #[inline]
    pub fn add_squares(&self, a: f64, out: &mut [f64]) {
        match self {
            FeatureVector::Sparse(s) => {
                for &(i, v) in s.entries() {
                    out[i] += a * v * v;
                }
            }
            FeatureVector::Dense(d) => {
                for (o, x) in out.iter_mut().zip(&d.0) {
                    *o += a * x * x;
                }
            }
        }
    }
}

/// Turns token sequences into feature vectors of one space.
#[derive(Debug, Clone, Copy)]
pub enum Featurizer<'a> {
    Bow(&'a Vocabulary),
    We {
        table: &'a EmbeddingTable,
        exclude: Option<&'a HashSet<String>>,
    },
}

impl<'a> Featurizer<'a> {
    pub fn we(table: &'a EmbeddingTable) -> Self {
        Featurizer::We { table, exclude: None }
    }

    pub fn space(&self) -> FeatureSpace {
        match self {
            Featurizer::Bow(v) => FeatureSpace {
                repr: Repr::Bow,
                id: v.fingerprint(),
                dim: v.len(),
            },
            Featurizer::We { table, .. } => FeatureSpace {
                repr: Repr::We,
                id: table.fingerprint(),
                dim: table.dim(),
            },
        }
    }

    /// `None` when an embedding document has no in-table token.
    pub fn featurize(&self, tokens: &[String]) -> Option<FeatureVector> {
        match self {
            Featurizer::Bow(v) => Some(FeatureVector::Sparse(featurize_bow(tokens, v))),
            Featurizer::We { table, exclude } => featurize_we_excluding(tokens, table, *exclude)
                .ok()
                .map(FeatureVector::Dense),
        }
    }

    /// Featurizes every biography; documents that cannot be represented are
    /// `None` and logged by id.
    pub fn featurize_corpus(&self, corpus: &Corpus) -> Vec<Option<FeatureVector>> {
        let out: Vec<Option<FeatureVector>> = corpus
            .biographies()
            .par_iter()
            .map(|b| self.featurize(&b.tokens))
            .collect();
        for (b, f) in corpus.biographies().iter().zip(&out) {
            if f.is_none() {
                warn!("biography {} has no embedded token; excluded", b.id);
            }
        }
        out
    }
}
