//! Hashed n-gram logistic regression used to rank samples by how
//! representative they are of their own side of a [`DistributionPair`].

use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DistributionPair, Sample, Side};

pub const FEATURE_BITS: u32 = 18;
pub const FEATURE_DIM: usize = 1 << FEATURE_BITS;
pub const MODEL_HEADER: &str = "distdescribe-disc-v1";

const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const HOLDOUT_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum DiscriminatorError {
    #[error("side {side:?} has {len} samples, need at least 2")]
    DegenerateData { side: Side, len: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// FNV-1a, 64 bit. Fixed so feature indices agree across platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn bucket(key: &str) -> u32 {
    (fnv1a(key.as_bytes()) % FEATURE_DIM as u64) as u32
}

/// Sparse counts over hashed lowercased unigrams and adjacent bigrams,
/// sorted by index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureVector(Vec<(u32, u32)>);

impl FeatureVector {
    pub fn entries(&self) -> &[(u32, u32)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn featurize(text: &str) -> FeatureVector {
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower.split_whitespace().collect();
    let mut idx: Vec<u32> = Vec::with_capacity(tokens.len() * 2);
    idx.extend(tokens.iter().map(|t| bucket(t)));
    // A space cannot occur inside a token, so bigram keys never collide
    // with unigram keys before hashing.
    idx.extend(tokens.windows(2).map(|w| bucket(&format!("{} {}", w[0], w[1]))));
    idx.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::with_capacity(idx.len());
    for i in idx {
        match out.last_mut() {
            Some((j, c)) if *j == i => *c += 1,
            _ => out.push((i, 1)),
        }
    }
    FeatureVector(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 5,
            seed: 0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    weights: Vec<f64>,
    bias: f64,
    config: TrainConfig,
    held_out_accuracy: Option<f64>,
}

impl Discriminator {
    /// An untrained model: every score is 0 and every confidence 0.5.
    pub fn zero(config: TrainConfig) -> Self {
        Self {
            weights: vec![0.0; FEATURE_DIM],
            bias: 0.0,
            config,
            held_out_accuracy: None,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Accuracy of a model fit on the 80% split, measured on the other 20%.
    pub fn held_out_accuracy(&self) -> Option<f64> {
        self.held_out_accuracy
    }

    /// Log-odds that `text` came from D1.
    pub fn score(&self, text: &str) -> f64 {
        self.score_features(&featurize(text))
    }

    fn score_features(&self, fv: &FeatureVector) -> f64 {
        fv.0.iter()
            .map(|&(i, c)| self.weights[i as usize] * f64::from(c))
            .sum::<f64>()
            + self.bias
    }

    fn sgd(&mut self, examples: &[(FeatureVector, f64)]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let lr = self.config.learning_rate;
        for _ in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for &k in &order {
                let (fv, y) = &examples[k];
                let g = sigmoid(self.score_features(fv)) - y;
                for &(i, c) in &fv.0 {
                    self.weights[i as usize] -= lr * g * f64::from(c);
                }
                self.bias -= lr * g;
            }
        }
    }

    pub fn save<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = serde_json::json!({
            "format": MODEL_HEADER,
            "bias": self.bias,
            "config": self.config,
            "held_out_accuracy": self.held_out_accuracy,
        });
        writeln!(w, "{header}")?;
        for (i, wt) in self.weights.iter().enumerate() {
            if *wt != 0.0 {
                writeln!(w, "{}", serde_json::json!([i, wt]))?;
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, DiscriminatorError> {
        let bad = |m: &str| DiscriminatorError::Format(m.to_string());
        let mut lines = r.lines();
        let header: serde_json::Value = serde_json::from_str(
            &lines.next().ok_or_else(|| bad("empty file"))??,
        )
        .map_err(|e| bad(&e.to_string()))?;
        if header["format"] != MODEL_HEADER {
            return Err(bad("missing distdescribe-disc-v1 header"));
        }
        let config: TrainConfig =
            serde_json::from_value(header["config"].clone()).map_err(|e| bad(&e.to_string()))?;
        let mut model = Self::zero(config);
        model.bias = header["bias"].as_f64().ok_or_else(|| bad("bias"))?;
        model.held_out_accuracy = header["held_out_accuracy"].as_f64();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (i, wt): (usize, f64) =
                serde_json::from_str(&line).map_err(|e| bad(&e.to_string()))?;
            if i >= FEATURE_DIM || !wt.is_finite() {
                return Err(bad("weight entry out of range"));
            }
            model.weights[i] = wt;
        }
        Ok(model)
    }
}

fn labeled(corpus: &Corpus, label: f64, keep: impl Fn(usize) -> bool) -> Vec<(FeatureVector, f64)> {
    corpus
        .samples()
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, s)| (featurize(&s.text), label))
        .collect()
}

/// Positions held out for evaluation. Depends only on the side length and the
/// seed, so equal-length sides share the same split.
fn holdout_mask(len: usize, seed: u64) -> Vec<bool> {
    let held = ((len as f64 * HOLDOUT_FRACTION).round() as usize).clamp(1, len - 1);
    let mut perm: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT ^ len as u64);
    perm.shuffle(&mut rng);
    let mut mask = vec![false; len];
    for &p in &perm[..held] {
        mask[p] = true;
    }
    mask
}

fn accuracy(model: &Discriminator, examples: &[(FeatureVector, f64)]) -> f64 {
    let correct: f64 = examples
        .iter()
        .map(|(fv, y)| {
            let s = model.score_features(fv);
            if s == 0.0 {
                0.5
            } else if (s > 0.0) == (*y > 0.5) {
                1.0
            } else {
                0.0
            }
        })
        .sum();
    correct / examples.len() as f64
}

/// Fits the held-out model on the 80% split to record its accuracy, then fits
/// the returned model on every sample. Label 1 means "drawn from D1".
pub fn train(pair: &DistributionPair, config: &TrainConfig) -> Result<Discriminator, DiscriminatorError> {
    for side in [Side::D0, Side::D1] {
        let len = pair.side(side).len();
        if len < 2 {
            return Err(DiscriminatorError::DegenerateData { side, len });
        }
    }
    let m0 = holdout_mask(pair.d0.len(), config.seed);
    let m1 = holdout_mask(pair.d1.len(), config.seed);

    let mut fit_part = labeled(&pair.d0, 0.0, |i| !m0[i]);
    fit_part.extend(labeled(&pair.d1, 1.0, |i| !m1[i]));
    let mut held = labeled(&pair.d0, 0.0, |i| m0[i]);
    held.extend(labeled(&pair.d1, 1.0, |i| m1[i]));

    let mut probe = Discriminator::zero(*config);
    probe.sgd(&fit_part);
    let held_out = accuracy(&probe, &held);

    let mut all = labeled(&pair.d0, 0.0, |_| true);
    all.extend(labeled(&pair.d1, 1.0, |_| true));
    let mut model = Discriminator::zero(*config);
    model.sgd(&all);
    model.held_out_accuracy = Some(held_out);
    Ok(model)
}

/// Probability the model assigns to `sample` belonging to `side`.
pub fn confidence(disc: &Discriminator, sample: &Sample, side: Side) -> f64 {
    let p1 = sigmoid(disc.score(&sample.text));
    match side {
        Side::D1 => p1,
        Side::D0 => 1.0 - p1,
    }
}

/// Top-p-percentile samples per side, most confident first.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeSet {
    pub percentile: u32,
    pub d1_samples: Vec<Sample>,
    pub d0_samples: Vec<Sample>,
}

impl RepresentativeSet {
    pub fn side(&self, side: Side) -> &[Sample] {
        match side {
            Side::D0 => &self.d0_samples,
            Side::D1 => &self.d1_samples,
        }
    }
}

pub const MIN_REPRESENTATIVES: usize = 5;

fn keep_count(len: usize, percentile: u32) -> usize {
    let k = (len * percentile as usize).div_ceil(100);
    k.max(MIN_REPRESENTATIVES.min(len)).min(len)
}

fn rank_side(disc: &Discriminator, corpus: &Corpus, side: Side, percentile: u32) -> Vec<Sample> {
    let mut scored: Vec<(f64, &Sample)> = corpus
        .samples()
        .iter()
        .map(|s| (confidence(disc, s, side), s))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
    scored
        .into_iter()
        .take(keep_count(corpus.len(), percentile))
        .map(|(_, s)| s.clone())
        .collect()
}

/// Keeps `ceil(p% * n)` samples per side (at least 5 when the side has 5),
/// ranked by own-side confidence with ties broken by ascending id.
pub fn select_percentile(disc: &Discriminator, pair: &DistributionPair, percentile: u32) -> RepresentativeSet {
    let percentile = percentile.clamp(1, 100);
    RepresentativeSet {
        percentile,
        d1_samples: rank_side(disc, &pair.d1, Side::D1, percentile),
        d0_samples: rank_side(disc, &pair.d0, Side::D0, percentile),
    }
}
