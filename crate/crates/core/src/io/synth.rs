//! Synthetic Gaussian class-conditional data and its Bayes-optimal code length.
//!
//! Informative data puts class `c` at mean `separation * e_(c mod d)` with unit
//! isotropic noise; labels are balanced round-robin then shuffled. Random data
//! has standard normal features and labels drawn independently.

use std::f64::consts::LN_2;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::LabeledEmbeddings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    Informative,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub separation: f64,
    pub label_mode: LabelMode,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 examples, got {}", self.n)));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "separation must be finite and >= 0, got {}",
                self.separation
            )));
        }
        Ok(())
    }
}

/// One layer of a synthetic stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRecipe {
    /// Standard normal features, independent of the labels.
    Noise,
    /// Class-conditional Gaussians around `separation * e_(y mod d)`.
    Informative,
}

impl FromStr for LayerRecipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "noise" => Ok(LayerRecipe::Noise),
            "informative" => Ok(LayerRecipe::Informative),
            other => Err(Error::InvalidConfig(format!(
                "unknown layer recipe {other:?} (expected noise or informative)"
            ))),
        }
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `n` labels with class counts differing by at most one, in seeded random order.
pub fn balanced_labels(n: usize, num_classes: usize, seed: u64) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng(seed, 0));
    labels
}

fn layer_features(
    labels: &[usize],
    dim: usize,
    separation: f64,
    recipe: LayerRecipe,
    r: &mut ChaCha8Rng,
) -> Array2<f64> {
    let mut x = Array2::from_shape_simple_fn((labels.len(), dim), || r.sample::<f64, _>(StandardNormal));
    if recipe == LayerRecipe::Informative {
        for (row, &y) in labels.iter().enumerate() {
            x[[row, y % dim]] += separation;
        }
    }
    x
}

pub fn synth_gaussian(spec: &SynthSpec) -> Result<LabeledEmbeddings> {
    spec.validate()?;
    let (labels, recipe) = match spec.label_mode {
        LabelMode::Informative => (
            balanced_labels(spec.n, spec.num_classes, spec.seed),
            LayerRecipe::Informative,
        ),
        LabelMode::Random => {
            let mut r = rng(spec.seed, 0);
            let labels = (0..spec.n).map(|_| r.random_range(0..spec.num_classes)).collect();
            (labels, LayerRecipe::Noise)
        }
    };
    let features = layer_features(&labels, spec.dim, spec.separation, recipe, &mut rng(spec.seed, 1));
    let provenance = format!(
        "synth/{:?}/sep={}/seed={}",
        spec.label_mode, spec.separation, spec.seed
    );
    LabeledEmbeddings::new(features, labels, spec.num_classes, provenance)
}

/// A layer stack sharing one balanced label vector (drawn from `label_seed`).
/// Layer `l` draws its features from `feature_seed` on its own stream, so a
/// stack with the same labels but fresh features only needs a new
/// `feature_seed`.
pub fn synth_stack(
    n: usize,
    dim: usize,
    num_classes: usize,
    separation: f64,
    recipes: &[LayerRecipe],
    label_seed: u64,
    feature_seed: u64,
) -> Result<Vec<LabeledEmbeddings>> {
    SynthSpec {
        n,
        dim,
        num_classes,
        separation,
        label_mode: LabelMode::Informative,
        seed: label_seed,
    }
    .validate()?;
    if recipes.is_empty() {
        return Err(Error::InvalidConfig("layer recipe list is empty".into()));
    }
    let labels = balanced_labels(n, num_classes, label_seed);
    recipes
        .iter()
        .enumerate()
        .map(|(l, &recipe)| {
            let x = layer_features(&labels, dim, separation, recipe, &mut rng(feature_seed, 1 + l as u64));
            LabeledEmbeddings::new(x, labels.clone(), num_classes, format!("synth/layer-{l}/{recipe:?}"))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesEstimate {
    /// Monte-Carlo mean of `-log2 p(y | x)` under the true posterior.
    pub bits_per_example: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Expected per-example code length of the Bayes-optimal predictor for data
/// generated by `spec`. No probe, however well trained, should beat this on
/// fresh data by more than sampling noise.
pub fn bayes_bits_oracle(spec: &SynthSpec, mc_samples: usize, seed: u64) -> Result<BayesEstimate> {
    spec.validate()?;
    if mc_samples < 2 {
        return Err(Error::InvalidConfig("need at least 2 Monte-Carlo samples".into()));
    }
    let c = spec.num_classes;
    if spec.label_mode == LabelMode::Random {
        return Ok(BayesEstimate {
            bits_per_example: (c as f64).log2(),
            std_error: 0.0,
            samples: mc_samples,
        });
    }
    let (d, sep) = (spec.dim, spec.separation);
    // The class log-likelihoods differ only through sep * x[c mod d], so only
    // the axes that carry a class mean need sampling.
    let axes: Vec<usize> = {
        let mut a: Vec<usize> = (0..c).map(|k| k % d).collect();
        a.sort_unstable();
        a.dedup();
        a
    };
    let mut r = rng(seed, 7);
    let mut x = vec![0.0; d];
    let mut logits = vec![0.0; c];
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..mc_samples {
        let y = r.random_range(0..c);
        for &a in &axes {
            x[a] = r.sample::<f64, _>(StandardNormal) + if a == y % d { sep } else { 0.0 };
        }
        for (class, l) in logits.iter_mut().enumerate() {
            *l = sep * x[class % d];
        }
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        let bits = (lse - logits[y]) / LN_2;
        let delta = bits - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (bits - mean);
    }
    let var = m2 / (mc_samples - 1) as f64;
    Ok(BayesEstimate {
        bits_per_example: mean,
        std_error: (var / mc_samples as f64).sqrt(),
        samples: mc_samples,
    })
}
