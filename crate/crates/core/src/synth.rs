//! Synthetic biographies with a planted gender-norm signal, plus an
//! independent brute-force Spearman used to cross-check the metrics.
//!
//! Every biography draws a latent style `s` in [0, 1] (feminine near 1) from a
//! group-specific Beta distribution. Each token slot is, independently:
//!
//! * an explicit indicator (scrubbed before modeling),
//! * a norm token, feminine with probability `s`,
//! * a token of the biography's own occupation, at rate
//!   `occupation_rate * (1 + kappa * d_c * (2s - 1))` where
//!   `d_c = (2 p_c - 1) / max_c' |2 p_c' - 1|`,
//! * a token of another occupation (`leak_rate`),
//! * or filler.
//!
//! With `kappa > 0`, biographies written in the style of an occupation's
//! over-represented group carry more occupation signal.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Biography, Corpus, PronounGroup};
use crate::error::{Result, SnobError};
use crate::norm::GenderLexicon;
use crate::seed::{derive_seed, substream};
use crate::text::EmbeddingTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedOccupation {
    pub name: String,
    pub she_fraction: f64,
    pub documents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSpec {
    pub occupations: Vec<PlantedOccupation>,
    /// Extra nonbinary biographies per occupation.
    pub nonbinary_per_occupation: usize,
    pub occupation_vocab: usize,
    pub feminine_vocab: usize,
    pub masculine_vocab: usize,
    pub filler_vocab: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub indicator_rate: f64,
    pub norm_rate: f64,
    pub occupation_rate: f64,
    pub leak_rate: f64,
    pub kappa: f64,
    /// Beta(a, b) for "she" styles; "he" uses Beta(b, a), nonbinary
    /// Beta((a+b)/2, (a+b)/2).
    pub style_beta: (f64, f64),
    pub embedding_dim: usize,
    /// Offset of gendered words along the norm direction.
    pub norm_strength: f64,
    pub embedding_noise: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            occupations: evenly_spaced_occupations(6, 0.1, 0.9, 2000),
            nonbinary_per_occupation: 0,
            occupation_vocab: 20,
            feminine_vocab: 20,
            masculine_vocab: 20,
            filler_vocab: 400,
            min_length: 60,
            max_length: 120,
            indicator_rate: 0.04,
            norm_rate: 0.15,
            occupation_rate: 0.12,
            leak_rate: 0.03,
            kappa: 0.8,
            style_beta: (2.0, 1.5),
            embedding_dim: 32,
            norm_strength: 1.0,
            embedding_noise: 0.3,
            seed: 0,
        }
    }
}

/// `k` occupations with "she" shares spaced evenly over `[lo, hi]`.
pub fn evenly_spaced_occupations(k: usize, lo: f64, hi: f64, documents: usize) -> Vec<PlantedOccupation> {
    (0..k)
        .map(|i| PlantedOccupation {
            name: format!("occupation-{}", letters(i, 2)),
            she_fraction: if k == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (k - 1) as f64
            },
            documents,
        })
        .collect()
}

/// Fixed-width base-26 lowercase encoding, so token names survive
/// tokenization unchanged.
fn letters(mut i: usize, width: usize) -> String {
    let mut out = vec![b'a'; width];
    for slot in out.iter_mut().rev() {
        *slot = b'a' + (i % 26) as u8;
        i /= 26;
    }
    String::from_utf8(out).expect("ascii")
}

/// Token names used by the generator.
#[derive(Debug, Clone)]
pub struct PlantedVocabulary {
    pub feminine: Vec<String>,
    pub masculine: Vec<String>,
    /// One token list per occupation, in spec order.
    pub occupation: Vec<Vec<String>>,
    pub filler: Vec<String>,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(SnobError::Config(format!("invalid planted spec: {m}")));
        if self.occupations.is_empty() {
            return err("no occupations".into());
        }
        let mut names: Vec<&str> = self.occupations.iter().map(|o| o.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return err("duplicate occupation names".into());
        }
        for o in &self.occupations {
            if !(0.0..=1.0).contains(&o.she_fraction) {
                return err(format!("she_fraction {} of {} outside [0, 1]", o.she_fraction, o.name));
            }
            if o.documents == 0 {
                return err(format!("occupation {} has no documents", o.name));
            }
        }
        let rates = [
            ("indicator_rate", self.indicator_rate),
            ("norm_rate", self.norm_rate),
            ("occupation_rate", self.occupation_rate),
            ("leak_rate", self.leak_rate),
            ("kappa", self.kappa),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return err(format!("{name} = {r} outside [0, 1]"));
            }
        }
        let peak = self.indicator_rate + self.norm_rate + self.occupation_rate * (1.0 + self.kappa) + self.leak_rate;
        if peak > 1.0 {
            return err(format!("slot probabilities can reach {peak} > 1"));
        }
        if self.occupation_vocab == 0 || self.feminine_vocab == 0 || self.masculine_vocab == 0 || self.filler_vocab == 0
        {
            return err("vocabulary sizes must be positive".into());
        }
        if self.leak_rate > 0.0 && self.occupations.len() < 2 {
            return err("leak_rate needs at least two occupations".into());
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return err(format!("bad length range {}..={}", self.min_length, self.max_length));
        }
        if !(self.style_beta.0 > 0.0 && self.style_beta.1 > 0.0) {
            return err("style_beta parameters must be positive".into());
        }
        if self.embedding_dim < self.occupations.len() + 2 {
            return err(format!(
                "embedding_dim must be at least {} for {} occupations",
                self.occupations.len() + 2,
                self.occupations.len()
            ));
        }
        if !(self.embedding_noise >= 0.0) || !(self.norm_strength >= 0.0) {
            return err("embedding parameters must be non-negative".into());
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> PlantedVocabulary {
        let width = |n: usize| {
            let mut w = 1;
            while 26usize.pow(w as u32) < n {
                w += 1;
            }
            w
        };
        let wv = width(
            self.feminine_vocab
                .max(self.masculine_vocab)
                .max(self.filler_vocab)
                .max(self.occupation_vocab),
        );
        let wo = width(self.occupations.len());
        PlantedVocabulary {
            feminine: (0..self.feminine_vocab)
                .map(|i| format!("fem{}", letters(i, wv)))
                .collect(),
            masculine: (0..self.masculine_vocab)
                .map(|i| format!("masc{}", letters(i, wv)))
                .collect(),
            occupation: (0..self.occupations.len())
                .map(|k| {
                    (0..self.occupation_vocab)
                        .map(|i| format!("occ{}x{}", letters(k, wo), letters(i, wv)))
                        .collect()
                })
                .collect(),
            filler: (0..self.filler_vocab)
                .map(|i| format!("fill{}", letters(i, wv)))
                .collect(),
        }
    }

    /// Normalized imbalance `d_c` per occupation.
    fn imbalance(&self) -> Vec<f64> {
        let raw: Vec<f64> = self.occupations.iter().map(|o| 2.0 * o.she_fraction - 1.0).collect();
        let scale = raw.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        raw.iter().map(|d| if scale > 0.0 { d / scale } else { 0.0 }).collect()
    }
}

fn indicator_for(group: PronounGroup, rng: &mut ChaCha8Rng) -> &'static str {
    let pool: &[&str] = match group {
        PronounGroup::She => &["she", "her", "hers", "ms"],
        PronounGroup::He => &["he", "his", "him", "mr"],
        PronounGroup::Nb => &["mx"],
    };
    pool.choose(rng).expect("non-empty")
}

pub fn generate_planted_corpus(spec: &PlantedSpec) -> Result<Corpus> {
    spec.validate()?;
    let vocab = spec.vocabulary();
    let d = spec.imbalance();
    let (a, b) = spec.style_beta;
    let she_style = Beta::new(a, b).map_err(|e| SnobError::Config(e.to_string()))?;
    let he_style = Beta::new(b, a).map_err(|e| SnobError::Config(e.to_string()))?;
    let nb_style = Beta::new((a + b) / 2.0, (a + b) / 2.0).map_err(|e| SnobError::Config(e.to_string()))?;
    let per_occupation: Vec<Vec<Biography>> = spec
        .occupations
        .par_iter()
        .enumerate()
        .map(|(k, occ)| {
            let mut rng = substream(spec.seed, &format!("synth/{}", occ.name));
            let n_she = (occ.she_fraction * occ.documents as f64).round() as usize;
            let mut groups: Vec<PronounGroup> = (0..occ.documents)
                .map(|i| if i < n_she { PronounGroup::She } else { PronounGroup::He })
                .collect();
            groups.extend(std::iter::repeat_n(PronounGroup::Nb, spec.nonbinary_per_occupation));
            groups
                .into_iter()
                .enumerate()
                .map(|(i, group)| {
                    let s: f64 = match group {
                        PronounGroup::She => she_style.sample(&mut rng),
                        PronounGroup::He => he_style.sample(&mut rng),
                        PronounGroup::Nb => nb_style.sample(&mut rng),
                    };
                    let occ_rate = spec.occupation_rate * (1.0 + spec.kappa * d[k] * (2.0 * s - 1.0));
                    let len = rng.random_range(spec.min_length..=spec.max_length);
                    let mut tokens = Vec::with_capacity(len);
                    // cumulative rates: indicator, norm, own occupation, leaked occupation
                    let c_norm = spec.indicator_rate + spec.norm_rate;
                    let c_occ = c_norm + occ_rate;
                    let c_leak = c_occ + spec.leak_rate;
                    for _ in 0..len {
                        let u: f64 = rng.random();
                        let tok: &str = if u < spec.indicator_rate {
                            indicator_for(group, &mut rng)
                        } else if u < c_norm {
                            let side = if rng.random::<f64>() < s {
                                &vocab.feminine
                            } else {
                                &vocab.masculine
                            };
                            side.choose(&mut rng).expect("non-empty")
                        } else if u < c_occ {
                            vocab.occupation[k].choose(&mut rng).expect("non-empty")
                        } else if u < c_leak {
                            let mut other = rng.random_range(0..spec.occupations.len() - 1);
                            if other >= k {
                                other += 1;
                            }
                            vocab.occupation[other].choose(&mut rng).expect("non-empty")
                        } else {
                            vocab.filler.choose(&mut rng).expect("non-empty")
                        };
                        tokens.push(tok.to_string());
                    }
                    Biography {
                        id: format!("{}-{:05}", occ.name, i),
                        occupation: occ.name.clone(),
                        pronoun_group: group,
                        tokens,
                        name: None,
                    }
                })
                .collect()
        })
        .collect();
    Corpus::new(per_occupation.into_iter().flatten().collect())
}

/// Unit vector of the planted norm direction (feminine positive). It is the
/// first coordinate axis of the generated embeddings.
pub fn planted_norm_direction(spec: &PlantedSpec) -> Vec<f64> {
    let mut u = vec![0.0; spec.embedding_dim];
    u[0] = 1.0;
    u
}

/// Word vectors for every generated token: gendered words sit at
/// `+-norm_strength` along the norm axis, occupation words along their own
/// axis, and every vector gets Gaussian noise off the norm axis.
pub fn planted_embeddings(spec: &PlantedSpec) -> Result<EmbeddingTable> {
    spec.validate()?;
    let vocab = spec.vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth/embeddings"));
    let noise = Normal::new(0.0, spec.embedding_noise).map_err(|e| SnobError::Config(e.to_string()))?;
    let dim = spec.embedding_dim;
    let mut vectors: Vec<(String, Vec<f64>)> = Vec::new();
    let mut push = |word: &str, axis: Option<(usize, f64)>, rng: &mut ChaCha8Rng| {
        let mut v: Vec<f64> = (0..dim).map(|j| if j == 0 { 0.0 } else { noise.sample(rng) }).collect();
        if let Some((j, a)) = axis {
            v[j] += a;
        }
        vectors.push((word.to_string(), v));
    };
    for w in &vocab.feminine {
        push(w, Some((0, spec.norm_strength)), &mut rng);
    }
    for w in &vocab.masculine {
        push(w, Some((0, -spec.norm_strength)), &mut rng);
    }
    for (k, words) in vocab.occupation.iter().enumerate() {
        for w in words {
            push(w, Some((k + 1, 1.0)), &mut rng);
        }
    }
    for w in &vocab.filler {
        push(w, None, &mut rng);
    }
    for w in ["she", "her", "hers", "ms"] {
        push(w, Some((0, spec.norm_strength)), &mut rng);
    }
    for w in ["he", "his", "him", "mr"] {
        push(w, Some((0, -spec.norm_strength)), &mut rng);
    }
    EmbeddingTable::from_vectors(vectors)
}

/// Human-style scores for the generated words: feminine words in [1, 2],
/// masculine in [4, 5], a sample of filler around 3.
pub fn planted_lexicon(spec: &PlantedSpec) -> Result<GenderLexicon> {
    spec.validate()?;
    let vocab = spec.vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth/lexicon"));
    let mut entries: Vec<(String, f64)> = Vec::new();
    for w in &vocab.feminine {
        entries.push((w.clone(), rng.random_range(1.0..2.0)));
    }
    for w in &vocab.masculine {
        entries.push((w.clone(), rng.random_range(4.0..5.0)));
    }
    for w in vocab.filler.iter().take(vocab.filler.len().min(40)) {
        entries.push((w.clone(), rng.random_range(2.5..3.5)));
    }
    GenderLexicon::from_entries(entries)
}

/// Spearman correlation computed the slow, obvious way: each rank is
/// `1 + #smaller + (#equal - 1) / 2`, then the textbook Pearson formula.
pub fn oracle_spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(SnobError::Validation("inputs differ in length".into()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(SnobError::Undefined(format!("need at least 3 pairs, got {n}")));
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut r = vec![0.0; v.len()];
        for i in 0..v.len() {
            let mut smaller = 0.0;
            let mut equal = 0.0;
            for j in 0..v.len() {
                if v[j] < v[i] {
                    smaller += 1.0;
                } else if v[j] == v[i] {
                    equal += 1.0;
                }
            }
            r[i] = 1.0 + smaller + (equal - 1.0) / 2.0;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        num += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(SnobError::Undefined("constant input".into()));
    }
    Ok(num / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> PlantedSpec {
        PlantedSpec {
            occupations: evenly_spaced_occupations(3, 0.2, 0.8, 300),
            nonbinary_per_occupation: 5,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_planted_corpus(&small_spec(4)).unwrap();
        let b = generate_planted_corpus(&small_spec(4)).unwrap();
        let c = generate_planted_corpus(&small_spec(5)).unwrap();
        assert_eq!(a.biographies(), b.biographies());
        assert_ne!(a.biographies(), c.biographies());
        assert_eq!(
            planted_embeddings(&small_spec(4)).unwrap().fingerprint(),
            planted_embeddings(&small_spec(4)).unwrap().fingerprint()
        );
    }

    #[test]
    fn she_fractions_hit_targets() {
        let spec = small_spec(1);
        let corpus = generate_planted_corpus(&spec).unwrap();
        for o in &spec.occupations {
            let c = corpus.counts_for(&o.name);
            assert_eq!(c.nb, 5);
            assert!((c.she_fraction().unwrap() - o.she_fraction).abs() <= 0.02);
        }
    }

    #[test]
    fn every_token_is_embedded_or_an_indicator() {
        let spec = small_spec(2);
        let corpus = generate_planted_corpus(&spec).unwrap();
        let table = planted_embeddings(&spec).unwrap();
        for b in corpus.biographies() {
            for t in &b.tokens {
                assert!(table.contains(t) || t == "mx", "{t}");
                assert_eq!(crate::text::tokenize(t), vec![t.clone()]);
            }
        }
    }

    #[test]
    fn infeasible_rates_rejected() {
        let mut spec = small_spec(0);
        spec.occupation_rate = 0.6;
        assert!(matches!(spec.validate(), Err(SnobError::Config(_))));
        let mut spec = small_spec(0);
        spec.kappa = 1.5;
        assert!(spec.validate().is_err());
        let mut spec = small_spec(0);
        spec.occupations[0].she_fraction = 1.2;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn oracle_basics() {
        assert_eq!(oracle_spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(oracle_spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(oracle_spearman(&[1.0, 1.0, 1.0], &[3.0, 2.0, 1.0]).is_err());
        assert!(oracle_spearman(&[1.0, 2.0], &[3.0, 2.0]).is_err());
    }
}
