//! Domain types shared by the probe trainer, the online-coding engine and
//! the verdict logic. Nothing here does more than validate itself.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Representation vectors (one row per example) paired with integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEmbeddings {
    /// `N x d`, row-major.
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub dim: usize,
    /// Free-form origin note, e.g. `"bert-base/layer-3/mean"`.
    pub provenance: String,
}

impl LabeledEmbeddings {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let dim = features.ncols();
        let e = LabeledEmbeddings {
            features,
            labels,
            num_classes,
            dim,
            provenance: provenance.into(),
        };
        validate_embeddings(&e)?;
        Ok(e)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            if y < self.num_classes {
                counts[y] += 1;
            }
        }
        counts
    }

    /// Class ids in `0..num_classes` that never occur. Permitted, but worth reporting.
    pub fn empty_classes(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(c, _)| c)
            .collect()
    }
}

/// Checks every [`LabeledEmbeddings`] invariant.
pub fn validate_embeddings(e: &LabeledEmbeddings) -> Result<()> {
    let (rows, cols) = e.features.dim();
    if rows == 0 || e.labels.is_empty() {
        return Err(Error::DimensionMismatch("at least one example is required".into()));
    }
    if e.dim == 0 || cols == 0 {
        return Err(Error::DimensionMismatch("feature dimension must be at least 1".into()));
    }
    if cols != e.dim {
        return Err(Error::DimensionMismatch(format!(
            "declared dim {} but feature matrix has {} columns",
            e.dim, cols
        )));
    }
    if rows != e.labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            rows,
            e.labels.len()
        )));
    }
    if e.num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "num_classes must be at least 2, got {}",
            e.num_classes
        )));
    }
    if let Some((row, &label)) = e
        .labels
        .iter()
        .enumerate()
        .find(|(_, &y)| y >= e.num_classes)
    {
        return Err(Error::LabelOutOfRange {
            row,
            label,
            num_classes: e.num_classes,
        });
    }
    for ((row, col), v) in e.features.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// One biography with its occupation (task label) and gender (probed label).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub text: String,
    pub occupation: usize,
    pub gender: usize,
    /// 1-based source line.
    pub line: usize,
}

/// Block boundaries `1 = n_0 < n_1 < ... < n_S = N` for online coding.
///
/// Block 0 holds rows `0..n_1` (0-based, end-exclusive) and is coded uniformly.
/// Block `i >= 1` holds rows `n_i..n_{i+1}` and is coded by a probe trained
/// on rows `0..n_i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockSchedule {
    boundaries: Vec<usize>,
}

impl BlockSchedule {
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::InvalidSchedule(
                "need at least two boundaries (1 and N)".into(),
            ));
        }
        if boundaries[0] != 1 {
            return Err(Error::InvalidSchedule(format!(
                "first boundary must be 1, got {}",
                boundaries[0]
            )));
        }
        if let Some(w) = boundaries.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSchedule(format!(
                "boundaries must be strictly increasing ({} >= {})",
                w[0], w[1]
            )));
        }
        Ok(BlockSchedule { boundaries })
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Dataset size `N`.
    pub fn n(&self) -> usize {
        *self.boundaries.last().expect("schedule is non-empty")
    }

    /// Block count `S`.
    pub fn num_blocks(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Size of the uniformly coded first chunk (`n_1`).
    pub fn first_chunk(&self) -> usize {
        self.boundaries[1]
    }

    /// Row range of block `i` (0-based, end-exclusive).
    pub fn block_rows(&self, i: usize) -> std::ops::Range<usize> {
        if i == 0 {
            0..self.boundaries[1]
        } else {
            self.boundaries[i]..self.boundaries[i + 1]
        }
    }
}

impl TryFrom<Vec<usize>> for BlockSchedule {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        BlockSchedule::new(v)
    }
}

impl From<BlockSchedule> for Vec<usize> {
    fn from(s: BlockSchedule) -> Self {
        s.boundaries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    LinearSoftmax,
    #[serde(rename = "mlp-1-hidden")]
    Mlp1Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Uniform Glorot weights, zero biases.
    Glorot,
    /// All parameters zero (a linear probe then predicts the uniform distribution).
    Zeros,
}

/// Probe architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub architecture: Architecture,
    /// Hidden units for the MLP probe; ignored by the linear probe.
    pub hidden_width: usize,
    pub l2_strength: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: InitScheme,
    /// Skip training entirely; every block is scored by the freshly initialized probe.
    pub freeze_at_init: bool,
}

impl ProbeConfig {
    pub const DEFAULT_HIDDEN_WIDTH: usize = 128;
    pub const DEFAULT_L2: f64 = 0.03;

    pub fn linear(seed: u64) -> Self {
        ProbeConfig {
            architecture: Architecture::LinearSoftmax,
            hidden_width: 0,
            l2_strength: Self::DEFAULT_L2,
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 32,
            seed,
            init: InitScheme::Glorot,
            freeze_at_init: false,
        }
    }

    pub fn mlp(seed: u64) -> Self {
        ProbeConfig {
            architecture: Architecture::Mlp1Hidden,
            hidden_width: Self::DEFAULT_HIDDEN_WIDTH,
            learning_rate: 0.01,
            ..ProbeConfig::linear(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_strength.is_finite() && self.l2_strength >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "l2_strength must be nonnegative, got {}",
                self.l2_strength
            )));
        }
        if self.architecture == Architecture::Mlp1Hidden && self.hidden_width == 0 {
            return Err(Error::InvalidConfig("mlp probe needs hidden_width >= 1".into()));
        }
        Ok(())
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig::linear(0)
    }
}

/// Online-coding result for one representation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeLengthReport {
    pub uniform_bits: f64,
    pub online_bits: f64,
    /// One entry per block; entry 0 is the uniformly coded first chunk.
    pub per_block_bits: Vec<f64>,
    pub compression: f64,
    pub num_classes: usize,
    pub schedule: BlockSchedule,
    pub probe_config: ProbeConfig,
    pub seed: u64,
    /// Final mean training cross-entropy (bits per example) of the probe fitted
    /// for each block `1..S`.
    pub train_bits_per_example: Vec<f64>,
    /// Blocks whose probe ended training with a higher loss than it started with.
    pub nonconverged_blocks: Vec<usize>,
}

impl CodeLengthReport {
    pub fn n(&self) -> usize {
        self.schedule.n()
    }
}

/// Code lengths for every layer of one model variant; index 0 is the
/// embedding-layer output, `1..=L` the blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub model_tag: String,
    pub per_layer: Vec<CodeLengthReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
}

impl LayerProfile {
    pub fn new(model_tag: impl Into<String>, per_layer: Vec<CodeLengthReport>) -> Result<Self> {
        let p = LayerProfile {
            model_tag: model_tag.into(),
            per_layer,
            pooling: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// `L`, the index of the last layer.
    pub fn num_layers(&self) -> usize {
        self.per_layer.len().saturating_sub(1)
    }

    pub fn compressions(&self) -> Vec<f64> {
        self.per_layer.iter().map(|r| r.compression).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .per_layer
            .first()
            .ok_or_else(|| Error::Incompatible(format!("profile {:?} has no layers", self.model_tag)))?;
        for (l, r) in self.per_layer.iter().enumerate().skip(1) {
            if r.schedule != first.schedule
                || r.num_classes != first.num_classes
                || r.probe_config != first.probe_config
            {
                return Err(Error::Incompatible(format!(
                    "profile {:?}: layer {l} was probed with different settings than layer 0",
                    self.model_tag
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictRule {
    /// `C_trained[l] - C_random[l] > delta`.
    BiasPresence,
    /// `C_debiased[l] <= min(C_vanilla[l], C_random[l] + delta)` at every layer.
    DebiasEffectiveness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerVerdict {
    pub layer: usize,
    /// Trained (bias rule) or debiased (effectiveness rule) compression.
    pub lhs_value: f64,
    /// Random-baseline mean (bias rule) or `min(vanilla, random + delta)`.
    pub rhs_value: f64,
    /// Distance from the decision boundary in compression units. Positive for a
    /// true bias verdict; nonnegative for a true effectiveness verdict.
    pub margin: f64,
    pub verdict: bool,
    /// Per-seed random-baseline compressions averaged into the baseline.
    pub random_samples: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vanilla_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub rule: VerdictRule,
    pub delta: f64,
    pub per_layer_verdicts: Vec<LayerVerdict>,
    pub overall: bool,
}

impl VerdictReport {
    /// Re-derives each layer's boolean from its stored `lhs_value`/`rhs_value`.
    pub fn recompute(&self) -> Vec<bool> {
        self.per_layer_verdicts
            .iter()
            .map(|v| match self.rule {
                VerdictRule::BiasPresence => v.lhs_value - v.rhs_value > self.delta,
                VerdictRule::DebiasEffectiveness => v.lhs_value <= v.rhs_value,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small() -> LabeledEmbeddings {
        LabeledEmbeddings::new(
            array![[0.0, 1.0], [1.0, 0.0], [0.5, 0.5], [-1.0, 2.0]],
            vec![0, 1, 0, 1],
            2,
            "test",
        )
        .unwrap()
    }

    #[test]
    fn valid_embeddings_pass() {
        let e = small();
        assert!(validate_embeddings(&e).is_ok());
        assert_eq!(e.len(), 4);
        assert!(e.empty_classes().is_empty());
    }

    #[test]
    fn label_out_of_range() {
        let mut e = small();
        e.labels[2] = 2;
        assert!(matches!(
            validate_embeddings(&e),
            Err(Error::LabelOutOfRange { row: 2, label: 2, num_classes: 2 })
        ));
    }

    #[test]
    fn nan_names_its_row() {
        let mut e = small();
        e.features[[3, 1]] = f64::NAN;
        match validate_embeddings(&e) {
            Err(Error::NonFinite { row, col }) => assert_eq!((row, col), (3, 1)),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatches() {
        let mut e = small();
        e.labels.pop();
        assert!(matches!(validate_embeddings(&e), Err(Error::DimensionMismatch(_))));

        let mut e = small();
        e.dim = 3;
        assert!(matches!(validate_embeddings(&e), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn empty_classes_are_recorded() {
        let e = LabeledEmbeddings::new(array![[0.0], [1.0]], vec![0, 0], 3, "").unwrap();
        assert_eq!(e.empty_classes(), vec![1, 2]);
    }

    #[test]
    fn single_class_rejected() {
        assert!(LabeledEmbeddings::new(array![[0.0]], vec![0], 1, "").is_err());
    }

    #[test]
    fn schedule_invariants() {
        assert!(BlockSchedule::new(vec![1, 8]).is_ok());
        assert!(BlockSchedule::new(vec![1]).is_err());
        assert!(BlockSchedule::new(vec![0, 8]).is_err());
        assert!(BlockSchedule::new(vec![1, 4, 4, 8]).is_err());
        let s = BlockSchedule::new(vec![1, 2, 4, 8]).unwrap();
        assert_eq!(s.num_blocks(), 3);
        assert_eq!(s.block_rows(0), 0..2);
        assert_eq!(s.block_rows(2), 4..8);
        let bad: Result<BlockSchedule, _> = serde_json::from_str("[1, 3, 2]");
        assert!(bad.is_err());
    }

    #[test]
    fn probe_config_rejects_zero_epochs() {
        let mut cfg = ProbeConfig::linear(1);
        assert!(cfg.validate().is_ok());
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ProbeConfig::linear(1);
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ProbeConfig::linear(1);
        cfg.l2_strength = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn serde_round_trips() {
        let e = small();
        let back: LabeledEmbeddings = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);

        let cfg = ProbeConfig::mlp(9);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"mlp-1-hidden\""));
        assert_eq!(serde_json::from_str::<ProbeConfig>(&json).unwrap(), cfg);

        let v = VerdictReport {
            rule: VerdictRule::DebiasEffectiveness,
            delta: 2.0,
            per_layer_verdicts: vec![LayerVerdict {
                layer: 0,
                lhs_value: 11.98,
                rhs_value: 12.5,
                margin: 0.52,
                verdict: true,
                random_samples: vec![10.5],
                vanilla_value: Some(23.08),
            }],
            overall: true,
        };
        let back: VerdictReport = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.recompute(), vec![true]);
    }
}
