//! Shallow probe classifiers (linear softmax or one-hidden-layer tanh MLP),
//! their deterministic mini-batch training loop, and code-length scoring.
//!
//! Parameter layout in [`ProbeModel::params`], all blocks row-major with the
//! input index as the row:
//!
//! * linear: `W (d x C)`, `b (C)`
//! * mlp: `W1 (d x h)`, `b1 (h)`, `W2 (h x C)`, `b2 (C)`
//!
//! Losses are computed in nats and converted to bits only when reported.

use std::f64::consts::LN_2;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Architecture, InitScheme, LabeledEmbeddings, ProbeConfig};

/// Per-example costs are rounded onto this dyadic grid (2^-32 bits) before
/// summation, which makes block sums exact and independent of row order as
/// long as a total stays below 2^21 bits.
const COST_GRID: f64 = 4_294_967_296.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_classes: usize,
    /// 0 for the linear probe.
    pub hidden_width: usize,
    pub params: Vec<f64>,
    pub config: ProbeConfig,
}

/// Bookkeeping from one call to [`train_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs_run: usize,
    pub updates: usize,
    /// Mean training cross-entropy in bits per example, L2 term excluded.
    pub initial_bits_per_example: f64,
    pub final_bits_per_example: f64,
    /// Set when training ended with a higher loss than it started with.
    pub loss_increased: bool,
}

/// Number of parameters for the given shape.
pub fn param_count(arch: Architecture, d: usize, hidden: usize, c: usize) -> usize {
    match arch {
        Architecture::LinearSoftmax => d * c + c,
        Architecture::Mlp1Hidden => d * hidden + hidden + hidden * c + c,
    }
}

impl ProbeModel {
    fn hidden(&self) -> usize {
        match self.architecture {
            Architecture::LinearSoftmax => 0,
            Architecture::Mlp1Hidden => self.hidden_width,
        }
    }

    /// Whether `params[idx]` is a weight (L2-penalized) rather than a bias.
    fn is_weight(&self, idx: usize) -> bool {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden());
        match self.architecture {
            Architecture::LinearSoftmax => idx < d * c,
            Architecture::Mlp1Hidden => {
                let w2_start = d * h + h;
                idx < d * h || (idx >= w2_start && idx < w2_start + h * c)
            }
        }
    }

    /// Validates parameter-vector length and finiteness.
    pub fn validate(&self) -> Result<()> {
        let expected = param_count(self.architecture, self.input_dim, self.hidden(), self.num_classes);
        if self.params.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "probe expects {expected} parameters, has {}",
                self.params.len()
            )));
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig(format!("probe parameter {i} is not finite")));
        }
        Ok(())
    }

    /// Writes the logits for one input row into `logits`; `hidden` receives the
    /// tanh activations for the MLP probe.
    fn forward(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let (d, c) = (self.input_dim, self.num_classes);
        let p = &self.params;
        match self.architecture {
            Architecture::LinearSoftmax => {
                logits.copy_from_slice(&p[d * c..d * c + c]);
                for (i, &xi) in x.iter().enumerate() {
                    let row = &p[i * c..(i + 1) * c];
                    for (z, &w) in logits.iter_mut().zip(row) {
                        *z += xi * w;
                    }
                }
            }
            Architecture::Mlp1Hidden => {
                let h = self.hidden_width;
                hidden.copy_from_slice(&p[d * h..d * h + h]);
                for (i, &xi) in x.iter().enumerate() {
                    let row = &p[i * h..(i + 1) * h];
                    for (a, &w) in hidden.iter_mut().zip(row) {
                        *a += xi * w;
                    }
                }
                for a in hidden.iter_mut() {
                    *a = a.tanh();
                }
                let w2 = d * h + h;
                let b2 = w2 + h * c;
                logits.copy_from_slice(&p[b2..b2 + c]);
                for (j, &aj) in hidden.iter().enumerate() {
                    let row = &p[w2 + j * c..w2 + (j + 1) * c];
                    for (z, &w) in logits.iter_mut().zip(row) {
                        *z += aj * w;
                    }
                }
            }
        }
    }
}

/// Natural-log softmax in place, via a max-shifted log-sum-exp.
fn log_softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    let lse = m + s.ln();
    for v in z.iter_mut() {
        *v -= lse;
    }
}

/// Fresh probe with seeded Glorot-uniform weights and zero biases.
pub fn init_probe(config: &ProbeConfig, d: usize, c: usize) -> Result<ProbeModel> {
    if d == 0 {
        return Err(Error::DimensionMismatch("probe input dimension must be at least 1".into()));
    }
    if c < 2 {
        return Err(Error::InvalidConfig(format!("probe needs at least 2 classes, got {c}")));
    }
    config.validate()?;
    let hidden = match config.architecture {
        Architecture::LinearSoftmax => 0,
        Architecture::Mlp1Hidden => config.hidden_width,
    };
    let mut params = vec![0.0; param_count(config.architecture, d, hidden, c)];
    if config.init == InitScheme::Glorot {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |block: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in block {
                *w = rng.random_range(-a..=a);
            }
        };
        match config.architecture {
            Architecture::LinearSoftmax => fill(&mut params[..d * c], d, c),
            Architecture::Mlp1Hidden => {
                let w2 = d * hidden + hidden;
                fill(&mut params[..d * hidden], d, hidden);
                fill(&mut params[w2..w2 + hidden * c], hidden, c);
            }
        }
    }
    Ok(ProbeModel {
        architecture: config.architecture,
        input_dim: d,
        num_classes: c,
        hidden_width: hidden,
        params,
        config: config.clone(),
    })
}

/// Base-2 log-probabilities, one row per input row.
pub fn predict_log_probs(m: &ProbeModel, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if features.ncols() != m.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "probe expects {} features, input has {}",
            m.input_dim,
            features.ncols()
        )));
    }
    let x = features.as_standard_layout();
    let mut out = Array2::zeros((x.nrows(), m.num_classes));
    let mut hidden = vec![0.0; m.hidden()];
    let mut logits = vec![0.0; m.num_classes];
    for (r, row) in x.rows().into_iter().enumerate() {
        let row = row.as_slice().expect("standard layout");
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: r, col });
        }
        m.forward(row, &mut hidden, &mut logits);
        log_softmax_in_place(&mut logits);
        for (o, &l) in out.row_mut(r).iter_mut().zip(&logits) {
            *o = l / LN_2;
        }
    }
    Ok(out)
}

/// Total code length `-sum_i log2 p(y_i | x_i)` of the labels, in bits.
pub fn cross_entropy_bits(log_probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if log_probs.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability rows but {} labels",
            log_probs.nrows(),
            labels.len()
        )));
    }
    let c = log_probs.ncols();
    let mut total = 0.0;
    for (row, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                row,
                label: y,
                num_classes: c,
            });
        }
        let cost = -log_probs[[row, y]];
        total += (cost * COST_GRID).round() / COST_GRID;
    }
    Ok(total)
}

/// Mean natural-log cross-entropy over `rows` plus `l2/2 * ||weights||^2`,
/// together with its analytic gradient.
pub fn loss_and_gradient(
    m: &ProbeModel,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    rows: &[usize],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; m.params.len()];
    let loss = accumulate(m, features, labels, rows, Some(&mut grad));
    (loss, grad)
}

/// The training objective alone (same definition as [`loss_and_gradient`]).
pub fn objective(m: &ProbeModel, features: ArrayView2<'_, f64>, labels: &[usize], rows: &[usize]) -> f64 {
    accumulate(m, features, labels, rows, None)
}

fn accumulate(
    m: &ProbeModel,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    rows: &[usize],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let (d, c, h) = (m.input_dim, m.num_classes, m.hidden());
    let p = &m.params;
    let mut hidden = vec![0.0; h];
    let mut z = vec![0.0; c];
    let mut dpre = vec![0.0; h];
    let mut ce = 0.0;
    let scale = 1.0 / rows.len().max(1) as f64;

    for &r in rows {
        let x = features.row(r);
        let x = x.as_slice().expect("standard layout");
        let y = labels[r];
        m.forward(x, &mut hidden, &mut z);
        log_softmax_in_place(&mut z);
        ce -= z[y];

        let Some(g) = grad.as_deref_mut() else { continue };
        // z now holds log-probabilities; turn it into dL/dlogits.
        for (k, v) in z.iter_mut().enumerate() {
            *v = (v.exp() - if k == y { 1.0 } else { 0.0 }) * scale;
        }
        match m.architecture {
            Architecture::LinearSoftmax => {
                for (i, &xi) in x.iter().enumerate() {
                    for (gw, &dz) in g[i * c..(i + 1) * c].iter_mut().zip(&z) {
                        *gw += xi * dz;
                    }
                }
                for (gb, &dz) in g[d * c..d * c + c].iter_mut().zip(&z) {
                    *gb += dz;
                }
            }
            Architecture::Mlp1Hidden => {
                let w2 = d * h + h;
                let b2 = w2 + h * c;
                for j in 0..h {
                    let w_row = &p[w2 + j * c..w2 + (j + 1) * c];
                    let da: f64 = w_row.iter().zip(&z).map(|(w, dz)| w * dz).sum();
                    dpre[j] = da * (1.0 - hidden[j] * hidden[j]);
                    for (gw, &dz) in g[w2 + j * c..w2 + (j + 1) * c].iter_mut().zip(&z) {
                        *gw += hidden[j] * dz;
                    }
                }
                for (gb, &dz) in g[b2..b2 + c].iter_mut().zip(&z) {
                    *gb += dz;
                }
                for (i, &xi) in x.iter().enumerate() {
                    for (gw, &dp) in g[i * h..(i + 1) * h].iter_mut().zip(&dpre) {
                        *gw += xi * dp;
                    }
                }
                for (gb, &dp) in g[d * h..d * h + h].iter_mut().zip(&dpre) {
                    *gb += dp;
                }
            }
        }
    }

    let lambda = m.config.l2_strength;
    let mut penalty = 0.0;
    for (idx, &w) in p.iter().enumerate() {
        if m.is_weight(idx) {
            penalty += w * w;
            if let Some(g) = grad.as_deref_mut() {
                g[idx] += lambda * w;
            }
        }
    }
    ce * scale + 0.5 * lambda * penalty
}

fn mean_train_bits(m: &ProbeModel, x: ArrayView2<'_, f64>, labels: &[usize], all: &[usize]) -> f64 {
    let mut unreg = m.clone();
    unreg.config.l2_strength = 0.0;
    objective(&unreg, x, labels, all) / LN_2
}

/// Runs `config.epochs` passes of mini-batch gradient descent over `data`.
///
/// Each epoch visits the rows in a fresh permutation drawn from a generator
/// seeded by `config.seed`, so the result is a pure function of the inputs.
pub fn train_probe(m: &ProbeModel, data: &LabeledEmbeddings) -> Result<(ProbeModel, TrainStats)> {
    m.validate()?;
    if data.dim != m.input_dim || data.num_classes != m.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "probe is {}->{}, data is {}->{}",
            m.input_dim, m.num_classes, data.dim, data.num_classes
        )));
    }
    let cfg = &m.config;
    cfg.validate()?;

    let x = data.features.as_standard_layout();
    let labels = &data.labels;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let all = order.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut model = m.clone();
    let initial = mean_train_bits(&model, x.view(), labels, &all);
    let mut updates = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = loss_and_gradient(&model, x.view(), labels, rows);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch, loss });
            }
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    loss: f64::NAN,
                });
            }
            updates += 1;
        }
    }
    let last = mean_train_bits(&model, x.view(), labels, &all);
    if !last.is_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            batch: 0,
            loss: last,
        });
    }
    Ok((
        model,
        TrainStats {
            epochs_run: cfg.epochs,
            updates,
            initial_bits_per_example: initial,
            final_bits_per_example: last,
            loss_increased: last > initial,
        },
    ))
}
