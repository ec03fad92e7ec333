//! Layer-wise profiles, the bias-presence and debiasing-effectiveness
//! verdicts, and multi-profile comparison tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdl::online_code_length;
use crate::types::{
    BlockSchedule, LabeledEmbeddings, LayerProfile, LayerVerdict, ProbeConfig, VerdictReport, VerdictRule,
};

fn check_stack(layers: &[LabeledEmbeddings], schedule: &BlockSchedule) -> Result<()> {
    let first = layers
        .first()
        .ok_or_else(|| Error::DimensionMismatch("at least one layer is required".into()))?;
    for (l, layer) in layers.iter().enumerate() {
        if layer.len() != first.len() || layer.num_classes != first.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "layer {l} has {} rows / {} classes, layer 0 has {} / {}",
                layer.len(),
                layer.num_classes,
                first.len(),
                first.num_classes
            )));
        }
        if layer.labels != first.labels {
            return Err(Error::Inconsistent(format!("layer {l} labels differ from layer 0")));
        }
    }
    if schedule.n() != first.len() {
        return Err(Error::InvalidSchedule(format!(
            "schedule ends at {} but layers have {} rows",
            schedule.n(),
            first.len()
        )));
    }
    Ok(())
}

/// Online code length of every layer in `layers`, in layer order.
pub fn layer_profile(
    layers: &[LabeledEmbeddings],
    schedule: &BlockSchedule,
    cfg: &ProbeConfig,
    model_tag: &str,
) -> Result<LayerProfile> {
    check_stack(layers, schedule)?;
    let per_layer = layers
        .iter()
        .enumerate()
        .map(|(layer, e)| {
            online_code_length(e, schedule, cfg).map_err(|e| Error::Layer {
                layer,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LayerProfile::new(model_tag, per_layer)
}

/// Same as [`layer_profile`], probing up to `jobs` layers at once. The result
/// is identical to the sequential one.
pub fn layer_profile_parallel(
    layers: &[LabeledEmbeddings],
    schedule: &BlockSchedule,
    cfg: &ProbeConfig,
    model_tag: &str,
    jobs: usize,
) -> Result<LayerProfile> {
    check_stack(layers, schedule)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let per_layer = pool.install(|| {
        layers
            .par_iter()
            .enumerate()
            .map(|(layer, e)| {
                online_code_length(e, schedule, cfg).map_err(|e| Error::Layer {
                    layer,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    LayerProfile::new(model_tag, per_layer)
}

/// Refuses to compare profiles that were not produced under the same settings.
pub fn check_compatible(a: &LayerProfile, b: &LayerProfile) -> Result<()> {
    a.validate()?;
    b.validate()?;
    if a.per_layer.len() != b.per_layer.len() {
        return Err(Error::Incompatible(format!(
            "{:?} has {} layers, {:?} has {}",
            a.model_tag,
            a.per_layer.len(),
            b.model_tag,
            b.per_layer.len()
        )));
    }
    let (ra, rb) = (&a.per_layer[0], &b.per_layer[0]);
    if ra.schedule != rb.schedule {
        return Err(Error::Incompatible(format!(
            "{:?} and {:?} use different block schedules",
            a.model_tag, b.model_tag
        )));
    }
    if ra.num_classes != rb.num_classes {
        return Err(Error::Incompatible(format!(
            "{:?} has {} classes, {:?} has {}",
            a.model_tag, ra.num_classes, b.model_tag, rb.num_classes
        )));
    }
    if ra.probe_config != rb.probe_config {
        return Err(Error::Incompatible(format!(
            "{:?} and {:?} use different probe configurations",
            a.model_tag, b.model_tag
        )));
    }
    if let (Some(pa), Some(pb)) = (&a.pooling, &b.pooling) {
        if pa != pb {
            return Err(Error::Incompatible(format!(
                "{:?} pooled with {pa:?}, {:?} with {pb:?}",
                a.model_tag, b.model_tag
            )));
        }
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("delta must be finite and >= 0, got {delta}")))
    }
}

/// Per-layer mean over random-baseline seeds, plus the transposed samples.
fn baseline(random: &[Vec<f64>], layers: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if random.is_empty() {
        return Err(Error::Incompatible("at least one random baseline is required".into()));
    }
    if let Some(r) = random.iter().find(|r| r.len() != layers) {
        return Err(Error::Incompatible(format!(
            "random baseline has {} layers, expected {layers}",
            r.len()
        )));
    }
    let samples: Vec<Vec<f64>> = (0..layers).map(|l| random.iter().map(|r| r[l]).collect()).collect();
    let means = samples
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    Ok((means, samples))
}

/// Bias-presence rule on raw per-layer compressions. `random` holds one
/// vector per random-weight seed; their mean is the baseline.
pub fn bias_verdict_values(trained: &[f64], random: &[Vec<f64>], delta: f64) -> Result<VerdictReport> {
    check_delta(delta)?;
    let (means, samples) = baseline(random, trained.len())?;
    let per_layer_verdicts: Vec<LayerVerdict> = trained
        .iter()
        .zip(means)
        .zip(samples)
        .enumerate()
        .map(|(layer, ((&t, r), random_samples))| LayerVerdict {
            layer,
            lhs_value: t,
            rhs_value: r,
            margin: (t - r) - delta,
            verdict: t - r > delta,
            random_samples,
            vanilla_value: None,
        })
        .collect();
    let overall = per_layer_verdicts.iter().any(|v| v.verdict);
    Ok(VerdictReport {
        rule: VerdictRule::BiasPresence,
        delta,
        per_layer_verdicts,
        overall,
    })
}

/// Does `trained` carry more label information than random-weight models of
/// the same architecture, layer by layer? `overall` is true when any layer does.
pub fn bias_verdict(trained: &LayerProfile, random: &[LayerProfile], delta: f64) -> Result<VerdictReport> {
    for r in random {
        check_compatible(trained, r)?;
    }
    let random: Vec<Vec<f64>> = random.iter().map(LayerProfile::compressions).collect();
    bias_verdict_values(&trained.compressions(), &random, delta)
}

/// Effectiveness rule on raw per-layer compressions.
pub fn debias_effectiveness_values(
    debiased: &[f64],
    vanilla: &[f64],
    random: &[Vec<f64>],
    delta: f64,
) -> Result<VerdictReport> {
    check_delta(delta)?;
    if vanilla.len() != debiased.len() {
        return Err(Error::Incompatible(format!(
            "debiased has {} layers, vanilla has {}",
            debiased.len(),
            vanilla.len()
        )));
    }
    let (means, samples) = baseline(random, debiased.len())?;
    let per_layer_verdicts: Vec<LayerVerdict> = (0..debiased.len())
        .zip(samples)
        .map(|(layer, random_samples)| {
            let bound = vanilla[layer].min(means[layer] + delta);
            LayerVerdict {
                layer,
                lhs_value: debiased[layer],
                rhs_value: bound,
                margin: bound - debiased[layer],
                verdict: debiased[layer] <= bound,
                random_samples,
                vanilla_value: Some(vanilla[layer]),
            }
        })
        .collect();
    let overall = per_layer_verdicts.iter().all(|v| v.verdict);
    Ok(VerdictReport {
        rule: VerdictRule::DebiasEffectiveness,
        delta,
        per_layer_verdicts,
        overall,
    })
}

/// A debiasing method is effective when, at every layer, the debiased model's
/// compression is no higher than both the vanilla model's and the random
/// baseline's plus `delta`.
pub fn debias_effectiveness(
    debiased: &LayerProfile,
    vanilla: &LayerProfile,
    random: &[LayerProfile],
    delta: f64,
) -> Result<VerdictReport> {
    check_compatible(debiased, vanilla)?;
    for r in random {
        check_compatible(debiased, r)?;
    }
    let random: Vec<Vec<f64>> = random.iter().map(LayerProfile::compressions).collect();
    debias_effectiveness_values(&debiased.compressions(), &vanilla.compressions(), &random, delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_tag: String,
    pub layer: usize,
    pub compression: f64,
    /// `compression - reference.compression` at the same layer.
    pub diff_vs_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub model_tag: String,
    pub max_compression_layer: usize,
    pub max_compression: f64,
    pub final_layer_compression: f64,
    pub reduced_at_all_layers: bool,
    pub increased_at_all_layers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub reference: String,
    /// Keyed by `(model_tag, layer)`, profiles in input order.
    pub rows: Vec<ComparisonRow>,
    pub summaries: Vec<ProfileSummary>,
}

impl ComparisonTable {
    pub fn get(&self, model_tag: &str, layer: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model_tag == model_tag && r.layer == layer)
    }
}

/// Comparison of named compression vectors against the first one.
pub fn compare_values(profiles: &[(String, Vec<f64>)]) -> Result<ComparisonTable> {
    if profiles.len() < 2 {
        return Err(Error::Incompatible("need at least two profiles to compare".into()));
    }
    let (ref_tag, reference) = &profiles[0];
    if reference.is_empty() {
        return Err(Error::Incompatible(format!("profile {ref_tag:?} has no layers")));
    }
    if let Some((tag, v)) = profiles.iter().find(|(_, v)| v.len() != reference.len()) {
        return Err(Error::Incompatible(format!(
            "{tag:?} has {} layers, reference {ref_tag:?} has {}",
            v.len(),
            reference.len()
        )));
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (tag, values) in profiles {
        let diffs: Vec<f64> = values.iter().zip(reference).map(|(v, r)| v - r).collect();
        for (layer, (&compression, &diff)) in values.iter().zip(&diffs).enumerate() {
            rows.push(ComparisonRow {
                model_tag: tag.clone(),
                layer,
                compression,
                diff_vs_reference: diff,
            });
        }
        // first layer wins ties
        let (max_layer, &max) = values
            .iter()
            .enumerate()
            .fold((0, &values[0]), |best, (l, v)| if *v > *best.1 { (l, v) } else { best });
        summaries.push(ProfileSummary {
            model_tag: tag.clone(),
            max_compression_layer: max_layer,
            max_compression: max,
            final_layer_compression: *values.last().unwrap(),
            reduced_at_all_layers: diffs.iter().all(|&d| d < 0.0),
            increased_at_all_layers: diffs.iter().all(|&d| d > 0.0),
        });
    }
    Ok(ComparisonTable {
        reference: ref_tag.clone(),
        rows,
        summaries,
    })
}

/// Per-layer comparison of several profiles against the first.
pub fn compare_profiles(profiles: &[LayerProfile]) -> Result<ComparisonTable> {
    let first = profiles
        .first()
        .ok_or_else(|| Error::Incompatible("need at least two profiles to compare".into()))?;
    for p in &profiles[1..] {
        check_compatible(first, p)?;
    }
    let named: Vec<(String, Vec<f64>)> = profiles
        .iter()
        .map(|p| (p.model_tag.clone(), p.compressions()))
        .collect();
    compare_values(&named)
}
