//! JSON and CSV report exporters.
//!
//! Floats are written with 17 significant digits so a report re-imports to
//! bit-identical values. NaN and infinities are refused outright.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::{fmt_f64, fnv1a_hex, write_atomic};
use crate::analysis::{check_compatible, ComparisonTable};
use crate::error::{Error, Result};
use crate::types::{BlockSchedule, CodeLengthReport, LayerProfile, ProbeConfig, VerdictReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub schedule: BlockSchedule,
    pub probe: ProbeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub seeds: Vec<u64>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer: usize,
    pub uniform_bits: f64,
    pub online_bits: f64,
    pub compression: f64,
    pub per_block_bits: Vec<f64>,
    pub train_bits_per_example: Vec<f64>,
    pub nonconverged_blocks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub model_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Hash of everything else in the report, so identical runs share an id.
    pub run_id: String,
    pub settings: Settings,
    pub profiles: Vec<ProfileEntry>,
    #[serde(default)]
    pub verdicts: Vec<VerdictReport>,
}

impl Report {
    /// Bundles profiles probed under one set of settings, plus any verdicts
    /// computed from them.
    pub fn new(profiles: &[LayerProfile], verdicts: Vec<VerdictReport>, delta: Option<f64>) -> Result<Report> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::Incompatible("a report needs at least one profile".into()))?;
        first.validate()?;
        for p in &profiles[1..] {
            check_compatible(first, p)?;
        }
        let head = &first.per_layer[0];
        let settings = Settings {
            schedule: head.schedule.clone(),
            probe: head.probe_config.clone(),
            delta,
            seeds: vec![head.seed],
            num_classes: head.num_classes,
        };
        let profiles = profiles
            .iter()
            .map(|p| ProfileEntry {
                model_tag: p.model_tag.clone(),
                pooling: p.pooling.clone(),
                layers: p
                    .per_layer
                    .iter()
                    .enumerate()
                    .map(|(layer, r)| LayerEntry {
                        layer,
                        uniform_bits: r.uniform_bits,
                        online_bits: r.online_bits,
                        compression: r.compression,
                        per_block_bits: r.per_block_bits.clone(),
                        train_bits_per_example: r.train_bits_per_example.clone(),
                        nonconverged_blocks: r.nonconverged_blocks.clone(),
                    })
                    .collect(),
            })
            .collect();
        let mut report = Report {
            run_id: String::new(),
            settings,
            profiles,
            verdicts,
        };
        check_finite(&report)?;
        report.run_id = fnv1a_hex(&to_json_bytes_unchecked(&report)?);
        Ok(report)
    }

    /// Rebuilds the layer profiles carried by this report.
    pub fn layer_profiles(&self) -> Result<Vec<LayerProfile>> {
        let s = &self.settings;
        self.profiles
            .iter()
            .map(|p| {
                for (i, l) in p.layers.iter().enumerate() {
                    if l.layer != i {
                        return Err(Error::Inconsistent(format!(
                            "profile {:?}: entry {i} is labelled layer {}",
                            p.model_tag, l.layer
                        )));
                    }
                    if l.per_block_bits.len() != s.schedule.num_blocks() {
                        return Err(Error::Inconsistent(format!(
                            "profile {:?} layer {i}: {} block costs for a {}-block schedule",
                            p.model_tag,
                            l.per_block_bits.len(),
                            s.schedule.num_blocks()
                        )));
                    }
                }
                let per_layer = p
                    .layers
                    .iter()
                    .map(|l| CodeLengthReport {
                        uniform_bits: l.uniform_bits,
                        online_bits: l.online_bits,
                        per_block_bits: l.per_block_bits.clone(),
                        compression: l.compression,
                        num_classes: s.num_classes,
                        schedule: s.schedule.clone(),
                        probe_config: s.probe.clone(),
                        seed: s.probe.seed,
                        train_bits_per_example: l.train_bits_per_example.clone(),
                        nonconverged_blocks: l.nonconverged_blocks.clone(),
                    })
                    .collect();
                let mut profile = LayerProfile::new(p.model_tag.clone(), per_layer)?;
                profile.pooling = p.pooling.clone();
                Ok(profile)
            })
            .collect()
    }
}

fn nonfinite(what: String, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteReport(format!("{what} = {v}")))
    }
}

fn check_finite(report: &Report) -> Result<()> {
    if let Some(d) = report.settings.delta {
        nonfinite("settings.delta".into(), d)?;
    }
    let probe = &report.settings.probe;
    nonfinite("settings.probe.l2_strength".into(), probe.l2_strength)?;
    nonfinite("settings.probe.learning_rate".into(), probe.learning_rate)?;
    for p in &report.profiles {
        for l in &p.layers {
            let at = |field: &str| format!("profile {:?} layer {} {field}", p.model_tag, l.layer);
            nonfinite(at("uniform_bits"), l.uniform_bits)?;
            nonfinite(at("online_bits"), l.online_bits)?;
            nonfinite(at("compression"), l.compression)?;
            for (b, &v) in l.per_block_bits.iter().enumerate() {
                nonfinite(at(&format!("per_block_bits[{b}]")), v)?;
            }
            for (b, &v) in l.train_bits_per_example.iter().enumerate() {
                nonfinite(at(&format!("train_bits_per_example[{b}]")), v)?;
            }
        }
    }
    for (i, v) in report.verdicts.iter().enumerate() {
        nonfinite(format!("verdicts[{i}].delta"), v.delta)?;
        for lv in &v.per_layer_verdicts {
            let at = |field: &str| format!("verdicts[{i}] layer {} {field}", lv.layer);
            nonfinite(at("lhs_value"), lv.lhs_value)?;
            nonfinite(at("rhs_value"), lv.rhs_value)?;
            nonfinite(at("margin"), lv.margin)?;
            if let Some(x) = lv.vanilla_value {
                nonfinite(at("vanilla_value"), x)?;
            }
            for (s, &x) in lv.random_samples.iter().enumerate() {
                nonfinite(at(&format!("random_samples[{s}]")), x)?;
            }
        }
    }
    Ok(())
}

/// Pretty printer that writes every float with 17 significant digits.
struct RoundTrip<'a>(PrettyFormatter<'a>);

impl Formatter for RoundTrip<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt_f64(v).as_bytes())
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn to_json_bytes_unchecked<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, RoundTrip(PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(|source| Error::Json {
        path: "<report>".into(),
        source,
    })?;
    out.push(b'\n');
    Ok(out)
}

pub fn report_to_json(report: &Report) -> Result<Vec<u8>> {
    check_finite(report)?;
    to_json_bytes_unchecked(report)
}

pub fn export_report_json(path: &Path, report: &Report) -> Result<()> {
    let bytes = report_to_json(report)?;
    write_atomic(path, &bytes)
}

/// Reads a report and checks that its stored verdicts follow from their
/// stored values.
pub fn import_report_json(path: &Path) -> Result<Report> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let report: Report = serde_json::from_slice(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    for v in &report.verdicts {
        let stored: Vec<bool> = v.per_layer_verdicts.iter().map(|l| l.verdict).collect();
        if v.recompute() != stored {
            return Err(Error::Inconsistent(format!(
                "{}: stored verdicts do not follow from stored values",
                path.display()
            )));
        }
    }
    report.layer_profiles()?;
    Ok(report)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Inconsistent(format!("csv: {e}"))
}

/// One row per `(model_tag, layer)`.
pub fn profiles_csv(profiles: &[LayerProfile]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_tag", "layer", "uniform_bits", "online_bits", "compression"])
        .map_err(csv_error)?;
    for p in profiles {
        for (layer, r) in p.per_layer.iter().enumerate() {
            let at = |field: &str| format!("profile {:?} layer {layer} {field}", p.model_tag);
            nonfinite(at("uniform_bits"), r.uniform_bits)?;
            nonfinite(at("online_bits"), r.online_bits)?;
            nonfinite(at("compression"), r.compression)?;
            w.write_record([
                p.model_tag.clone(),
                layer.to_string(),
                fmt_f64(r.uniform_bits),
                fmt_f64(r.online_bits),
                fmt_f64(r.compression),
            ])
            .map_err(csv_error)?;
        }
    }
    w.into_inner().map_err(|e| csv_error(e.into_error().into()))
}

pub fn export_csv(path: &Path, profiles: &[LayerProfile]) -> Result<()> {
    write_atomic(path, &profiles_csv(profiles)?)
}

pub fn comparison_csv(table: &ComparisonTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_tag", "layer", "compression", "diff_vs_reference"])
        .map_err(csv_error)?;
    for r in &table.rows {
        let at = |field: &str| format!("{:?} layer {} {field}", r.model_tag, r.layer);
        nonfinite(at("compression"), r.compression)?;
        nonfinite(at("diff_vs_reference"), r.diff_vs_reference)?;
        w.write_record([
            r.model_tag.clone(),
            r.layer.to_string(),
            fmt_f64(r.compression),
            fmt_f64(r.diff_vs_reference),
        ])
        .map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| csv_error(e.into_error().into()))
}

pub fn export_comparison_csv(path: &Path, table: &ComparisonTable) -> Result<()> {
    write_atomic(path, &comparison_csv(table)?)
}
