//! Uniform and online (prequential) code lengths, and the compression ratio.

use std::str::FromStr;

use ndarray::s;

use crate::error::{Error, Result};
use crate::probe::{cross_entropy_bits, init_probe, predict_log_probs, train_probe};
use crate::types::{validate_embeddings, BlockSchedule, CodeLengthReport, LabeledEmbeddings, ProbeConfig};

fn check_geometric(first_fraction: f64, growth: f64) -> Result<()> {
    if !(first_fraction.is_finite() && first_fraction > 0.0 && first_fraction <= 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "first fraction must lie in (0, 1], got {first_fraction}"
        )));
    }
    if !(growth.is_finite() && growth > 1.0) {
        return Err(Error::InvalidSchedule(format!("growth must exceed 1, got {growth}")));
    }
    Ok(())
}

/// A schedule as written on the command line, before `N` is known:
/// `geometric:FIRST_FRACTION,GROWTH` or `explicit:1,n_1,...,N`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Geometric { first_fraction: f64, growth: f64 },
    Explicit(Vec<usize>),
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Geometric {
            first_fraction: 0.001,
            growth: 2.0,
        }
    }
}

impl FromStr for ScheduleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidSchedule(format!("{s:?}: {why}"));
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| bad("expected geometric:F,G or explicit:1,...,N"))?;
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        match kind {
            "geometric" => {
                let [f, g] = parts[..] else {
                    return Err(bad("geometric takes exactly two numbers"));
                };
                let first_fraction: f64 = f.parse().map_err(|_| bad("first fraction is not a number"))?;
                let growth: f64 = g.parse().map_err(|_| bad("growth is not a number"))?;
                check_geometric(first_fraction, growth)?;
                Ok(ScheduleSpec::Geometric { first_fraction, growth })
            }
            "explicit" => {
                let b = parts
                    .iter()
                    .map(|p| p.parse::<usize>().map_err(|_| bad("boundaries must be integers")))
                    .collect::<Result<Vec<_>>>()?;
                BlockSchedule::new(b.clone())?;
                Ok(ScheduleSpec::Explicit(b))
            }
            _ => Err(bad("unknown schedule kind")),
        }
    }
}

impl ScheduleSpec {
    /// The concrete schedule for a dataset of `n` rows.
    pub fn resolve(&self, n: usize) -> Result<BlockSchedule> {
        match self {
            ScheduleSpec::Geometric { first_fraction, growth } => make_schedule(n, *first_fraction, *growth),
            ScheduleSpec::Explicit(b) => {
                let s = BlockSchedule::new(b.clone())?;
                if s.n() != n {
                    return Err(Error::InvalidSchedule(format!(
                        "explicit schedule ends at {} but the data has {n} rows",
                        s.n()
                    )));
                }
                Ok(s)
            }
        }
    }
}

/// Geometric block schedule: `n_1 = max(2, ceil(first_fraction * N))`, then
/// `n_{i+1} = min(N, ceil(n_i * growth))` until `N` is reached.
pub fn make_schedule(n: usize, first_fraction: f64, growth: f64) -> Result<BlockSchedule> {
    if n < 2 {
        return Err(Error::InvalidSchedule(format!("need at least 2 examples, got {n}")));
    }
    check_geometric(first_fraction, growth)?;
    let first = ((first_fraction * n as f64).ceil() as usize).clamp(2, n);
    let mut boundaries = vec![1, first];
    let mut prev = first;
    while prev < n {
        // growth so close to 1 that the product rounds back to `prev` still advances
        let next = ((prev as f64 * growth).ceil() as usize).clamp(prev + 1, n);
        boundaries.push(next);
        prev = next;
    }
    BlockSchedule::new(boundaries)
}

/// `N * log2(C)` bits: the label cost with no model at all.
pub fn uniform_code_length(n: usize, c: usize) -> Result<f64> {
    if n == 0 || c < 2 {
        return Err(Error::InvalidConfig(format!(
            "uniform code length needs N >= 1 and C >= 2 (got N={n}, C={c})"
        )));
    }
    Ok(n as f64 * (c as f64).log2())
}

/// `uniform_bits / online_bits`; larger means the labels are easier to extract.
pub fn compression(uniform_bits: f64, online_bits: f64) -> Result<f64> {
    if !(uniform_bits > 0.0 && online_bits > 0.0) || !uniform_bits.is_finite() || !online_bits.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "compression needs positive finite code lengths (uniform={uniform_bits}, online={online_bits})"
        )));
    }
    Ok(uniform_bits / online_bits)
}

/// Online code length of `data.labels` given `data.features`.
///
/// Block 0 is transmitted uniformly. Every later block is scored by a probe
/// freshly initialized and trained on all rows before it. Rows are used in
/// the order given.
pub fn online_code_length(
    data: &LabeledEmbeddings,
    schedule: &BlockSchedule,
    cfg: &ProbeConfig,
) -> Result<CodeLengthReport> {
    validate_embeddings(data)?;
    cfg.validate()?;
    if schedule.n() != data.len() {
        return Err(Error::InvalidSchedule(format!(
            "schedule ends at {} but dataset has {} rows",
            schedule.n(),
            data.len()
        )));
    }
    let c = data.num_classes;
    let log2c = (c as f64).log2();
    let uniform_bits = uniform_code_length(data.len(), c)?;

    let mut per_block_bits = Vec::with_capacity(schedule.num_blocks());
    per_block_bits.push(schedule.first_chunk() as f64 * log2c);
    let mut train_bits = Vec::new();
    let mut nonconverged = Vec::new();

    for block in 1..schedule.num_blocks() {
        let wrap = |e: Error| Error::Block {
            block,
            source: Box::new(e),
        };
        let rows = schedule.block_rows(block);
        let prefix = LabeledEmbeddings {
            features: data.features.slice(s![..rows.start, ..]).to_owned(),
            labels: data.labels[..rows.start].to_vec(),
            num_classes: c,
            dim: data.dim,
            provenance: data.provenance.clone(),
        };
        let fresh = init_probe(cfg, data.dim, c).map_err(wrap)?;
        let probe = if cfg.freeze_at_init {
            fresh
        } else {
            let (trained, stats) = train_probe(&fresh, &prefix).map_err(wrap)?;
            train_bits.push(stats.final_bits_per_example);
            if stats.loss_increased {
                nonconverged.push(block);
            }
            trained
        };
        let lp = predict_log_probs(&probe, data.features.slice(s![rows.clone(), ..])).map_err(wrap)?;
        per_block_bits.push(cross_entropy_bits(lp.view(), &data.labels[rows]).map_err(wrap)?);
    }

    let online_bits: f64 = per_block_bits.iter().sum();
    Ok(CodeLengthReport {
        uniform_bits,
        online_bits,
        compression: compression(uniform_bits, online_bits)?,
        per_block_bits,
        num_classes: c,
        schedule: schedule.clone(),
        probe_config: cfg.clone(),
        seed: cfg.seed,
        train_bits_per_example: train_bits,
        nonconverged_blocks: nonconverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::InitScheme;
    use ndarray::Array2;

    /// Direct enumeration of the schedule recurrence, kept separate from
    /// `make_schedule`'s loop.
    fn enumerate_schedule(n: usize, ff: f64, g: f64) -> Vec<usize> {
        let mut out = vec![1];
        let mut b = std::cmp::max(2, (ff * n as f64).ceil() as usize).min(n);
        loop {
            if *out.last().unwrap() != b {
                out.push(b);
            }
            if b == n {
                return out;
            }
            b = ((b as f64 * g).ceil() as usize).min(n);
        }
    }

    #[test]
    fn schedule_examples() {
        let s = make_schedule(1000, 0.001, 2.0).unwrap();
        assert_eq!(s.boundaries(), &[1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1000]);
        assert_eq!(s.boundaries(), enumerate_schedule(1000, 0.001, 2.0).as_slice());
        assert_eq!(make_schedule(8, 1.0, 2.0).unwrap().boundaries(), &[1, 8]);
        assert_eq!(make_schedule(2, 0.001, 2.0).unwrap().boundaries(), &[1, 2]);
        assert_eq!(
            make_schedule(1024, 0.01, 2.0).unwrap().boundaries(),
            &[1, 11, 22, 44, 88, 176, 352, 704, 1024]
        );
    }

    #[test]
    fn schedule_matches_enumeration() {
        for n in [2, 3, 7, 100, 999, 2000] {
            for ff in [0.001, 0.01, 0.1, 0.37, 1.0] {
                for g in [1.01, 1.5, 2.0, 3.7] {
                    let s = make_schedule(n, ff, g).unwrap();
                    assert_eq!(s.boundaries(), enumerate_schedule(n, ff, g).as_slice(), "{n} {ff} {g}");
                }
            }
        }
    }

    #[test]
    fn schedule_rejects_degenerate_parameters() {
        assert!(make_schedule(1, 0.5, 2.0).is_err());
        assert!(make_schedule(10, 0.0, 2.0).is_err());
        assert!(make_schedule(10, 1.5, 2.0).is_err());
        assert!(make_schedule(10, 0.5, 1.0).is_err());
        assert!(make_schedule(10, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_code_length(396_347, 2).unwrap(), 396_347.0);
        assert_eq!(uniform_code_length(100, 2).unwrap(), 100.0);
        assert!((uniform_code_length(1000, 28).unwrap() - 4807.354922057604).abs() < 1e-9);
        assert!(uniform_code_length(0, 2).is_err());
        assert!(uniform_code_length(5, 1).is_err());
    }

    #[test]
    fn compression_examples() {
        assert_eq!(compression(100.0, 100.0).unwrap(), 1.0);
        assert!((compression(100.0, 4.33).unwrap() - 23.09).abs() < 0.01);
        assert_eq!(compression(100.0, 200.0).unwrap(), 0.5);
        assert!(compression(0.0, 1.0).is_err());
        assert!(compression(1.0, -1.0).is_err());
    }

    fn toy(n: usize) -> LabeledEmbeddings {
        LabeledEmbeddings::new(
            Array2::from_shape_fn((n, 3), |(i, j)| ((i * 31 + j * 17) % 23) as f64 / 11.0 - 1.0 + (i % 2) as f64),
            (0..n).map(|i| i % 2).collect(),
            2,
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn single_block_is_exactly_uniform() {
        let data = toy(40);
        let r = online_code_length(&data, &BlockSchedule::new(vec![1, 40]).unwrap(), &ProbeConfig::linear(1)).unwrap();
        assert_eq!(r.online_bits, r.uniform_bits);
        assert_eq!(r.compression, 1.0);
        assert_eq!(r.per_block_bits, vec![40.0]);
    }

    #[test]
    fn frozen_zero_probe_is_uniform() {
        let data = toy(64);
        let mut cfg = ProbeConfig::linear(1);
        cfg.init = InitScheme::Zeros;
        cfg.freeze_at_init = true;
        let r = online_code_length(&data, &make_schedule(64, 0.05, 2.0).unwrap(), &cfg).unwrap();
        assert_eq!(r.online_bits, r.uniform_bits);
        assert_eq!(r.compression, 1.0);
        assert!(r.train_bits_per_example.is_empty());
    }

    #[test]
    fn report_invariants() {
        let data = toy(100);
        let sched = make_schedule(100, 0.05, 2.0).unwrap();
        let r = online_code_length(&data, &sched, &ProbeConfig::linear(3)).unwrap();
        assert_eq!(r.per_block_bits.len(), sched.num_blocks());
        assert_eq!(r.per_block_bits[0], sched.first_chunk() as f64);
        assert_eq!(r.online_bits, r.per_block_bits.iter().sum::<f64>());
        assert!(r.per_block_bits.iter().all(|&b| b >= 0.0));
        assert_eq!(r.compression, r.uniform_bits / r.online_bits);
        let again = online_code_length(&data, &sched, &ProbeConfig::linear(3)).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn schedule_mismatch_is_rejected() {
        let data = toy(10);
        let err = online_code_length(&data, &BlockSchedule::new(vec![1, 2, 11]).unwrap(), &ProbeConfig::linear(0));
        assert!(matches!(err, Err(Error::InvalidSchedule(_))));
    }

    #[test]
    fn divergence_names_block() {
        let data = toy(16);
        let mut cfg = ProbeConfig::linear(0);
        cfg.learning_rate = 1e308;
        let err = online_code_length(&data, &BlockSchedule::new(vec![1, 4, 16]).unwrap(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Block { block: 1, .. }), "{err:?}");
    }

    #[test]
    fn schedule_spec_parsing() {
        let g: ScheduleSpec = "geometric:0.01,2.0".parse().unwrap();
        assert_eq!(g.resolve(1024).unwrap(), make_schedule(1024, 0.01, 2.0).unwrap());
        let e: ScheduleSpec = "explicit:1,10,100".parse().unwrap();
        assert_eq!(e.resolve(100).unwrap().boundaries(), &[1, 10, 100]);
        assert!(e.resolve(99).is_err());
        for bad in [
            "geometric:0.5,1.0",
            "geometric:0,2",
            "geometric:0.1",
            "geometric:a,2",
            "explicit:2,10",
            "explicit:1,10,10",
            "linear:1,2",
            "0.1,2",
        ] {
            assert!(bad.parse::<ScheduleSpec>().is_err(), "{bad}");
        }
        assert_eq!(
            ScheduleSpec::default().resolve(2000).unwrap(),
            make_schedule(2000, 0.001, 2.0).unwrap()
        );
    }
}
