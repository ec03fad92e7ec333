use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mdlprobe::analysis::{bias_verdict, compare_profiles, debias_effectiveness, layer_profile_parallel};
use mdlprobe::io::lped::{read_lped, write_lped, LpedMeta};
use mdlprobe::io::report::{export_comparison_csv, export_csv, export_report_json, import_report_json, Report};
use mdlprobe::io::synth::{synth_stack, LayerRecipe};
use mdlprobe::{Error, LayerProfile, ProbeConfig, ScheduleSpec, VerdictReport, VerdictRule};

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_VERDICT: u8 = 3;

/// Layer-wise MDL probing of encoder representations.
#[derive(Debug, Parser)]
#[command(name = "mdlprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Online code length of every layer in an embedding dump.
    Profile(ProfileArgs),
    /// Bias-presence or debiasing-effectiveness verdict from profile reports.
    Verdict(VerdictArgs),
    /// Write a synthetic embedding dump.
    Synth(SynthArgs),
    /// Per-layer comparison of several profiles against the first.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProbeKind {
    Linear,
    Mlp,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Embedding dump directory (contains manifest.json).
    #[arg(long, value_name = "DIR")]
    embeddings: PathBuf,
    /// Block schedule: geometric:FIRST_FRACTION,GROWTH or explicit:1,n_1,...,N.
    #[arg(long, default_value = "geometric:0.001,2.0", value_parser = parse_schedule)]
    schedule: ScheduleSpec,
    #[arg(long, value_enum, default_value = "linear")]
    probe: ProbeKind,
    /// Probe initialization and shuffling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output report (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write the per-layer table as CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Profile label; defaults to the dump's model id.
    #[arg(long)]
    model_tag: Option<String>,
    /// Training passes per block.
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate (default 0.1 linear, 0.01 mlp).
    #[arg(long)]
    lr: Option<f64>,
    /// L2 strength on probe weights.
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden width of the mlp probe.
    #[arg(long)]
    hidden: Option<usize>,
    /// Layers probed concurrently; defaults to the number of CPUs.
    #[arg(long, env = "MDLPROBE_JOBS")]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Bias,
    Debias,
}

#[derive(Debug, Args)]
struct VerdictArgs {
    #[arg(long, value_enum)]
    rule: RuleArg,
    /// Report of the model under test (the debiased model for --rule debias).
    #[arg(long, value_name = "FILE")]
    trained: PathBuf,
    /// Random-weight baseline report; repeat for several seeds.
    #[arg(long, value_name = "FILE", required = true)]
    random: Vec<PathBuf>,
    /// Vanilla (pre-debiasing) report; required for --rule debias.
    #[arg(long, value_name = "FILE", required_if_eq("rule", "debias"))]
    vanilla: Option<PathBuf>,
    /// Threshold in compression units.
    #[arg(long, default_value_t = 0.0, value_parser = parse_delta)]
    delta: f64,
    /// Output report (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Exit with status 3 when bias is found (bias rule) or debiasing is not
    /// effective (debias rule).
    #[arg(long)]
    fail_on_bias: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Distance of each class mean from the origin in informative layers.
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Comma-separated layer recipes, each noise or informative.
    #[arg(long, default_value = "informative", value_parser = parse_recipes)]
    layers: Recipes,
    /// Label seed; also the feature seed unless --feature-seed is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature seed, to draw fresh features for the same labels.
    #[arg(long)]
    feature_seed: Option<u64>,
    /// Output dump directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Profile reports; the first profile is the reference.
    #[arg(required = true, value_name = "REPORT")]
    reports: Vec<PathBuf>,
    /// Output table (CSV).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Clone)]
struct Recipes(Vec<LayerRecipe>);

fn parse_schedule(s: &str) -> Result<ScheduleSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_delta(s: &str) -> Result<f64, String> {
    let d: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if d.is_finite() && d >= 0.0 {
        Ok(d)
    } else {
        Err(format!("delta must be finite and >= 0, got {s}"))
    }
}

fn parse_recipes(s: &str) -> Result<Recipes, String> {
    s.split(',')
        .map(|t| t.parse::<LayerRecipe>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()
        .map(Recipes)
}

fn recipe_name(r: LayerRecipe) -> &'static str {
    match r {
        LayerRecipe::Noise => "noise",
        LayerRecipe::Informative => "informative",
    }
}

fn probe_config(args: &ProfileArgs) -> ProbeConfig {
    let mut cfg = match args.probe {
        ProbeKind::Linear => ProbeConfig::linear(args.seed),
        ProbeKind::Mlp => ProbeConfig::mlp(args.seed),
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.l2 {
        cfg.l2_strength = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.hidden {
        cfg.hidden_width = v;
    }
    cfg
}

fn profile(args: ProfileArgs) -> Result<ExitCode, Error> {
    let cfg = probe_config(&args);
    cfg.validate()?;
    let (layers, manifest) = read_lped(&args.embeddings)?;
    let schedule = args.schedule.resolve(manifest.n_examples)?;
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let tag = args.model_tag.clone().unwrap_or_else(|| manifest.model_id.clone());
    eprintln!(
        "probing {} layers of {} examples in {} blocks",
        layers.len(),
        manifest.n_examples,
        schedule.num_blocks()
    );
    let mut p = layer_profile_parallel(&layers, &schedule, &cfg, &tag, jobs)?;
    p.pooling = Some(manifest.pooling.clone());

    let report = Report::new(std::slice::from_ref(&p), vec![], None)?;
    export_report_json(&args.out, &report)?;
    if let Some(csv) = &args.csv {
        export_csv(csv, std::slice::from_ref(&p))?;
    }

    let mut out = format!("{:>5}  {:>14}  {:>14}  {:>11}\n", "layer", "uniform_bits", "online_bits", "compression");
    for (l, r) in p.per_layer.iter().enumerate() {
        let _ = writeln!(
            out,
            "{l:>5}  {:>14.3}  {:>14.3}  {:>11.4}",
            r.uniform_bits, r.online_bits, r.compression
        );
        if !r.nonconverged_blocks.is_empty() {
            eprintln!(
                "warning: layer {l}: training loss rose in blocks {:?}",
                r.nonconverged_blocks
            );
        }
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn load_profiles(path: &Path) -> Result<Vec<LayerProfile>, Error> {
    import_report_json(path)?.layer_profiles()
}

fn load_single(path: &Path, role: &str) -> Result<LayerProfile, Error> {
    let mut ps = load_profiles(path)?;
    if ps.len() != 1 {
        return Err(Error::Incompatible(format!(
            "{} holds {} profiles; the {role} report must hold exactly one",
            path.display(),
            ps.len()
        )));
    }
    Ok(ps.remove(0))
}

fn print_verdict(v: &VerdictReport) {
    let lhs = match v.rule {
        VerdictRule::BiasPresence => "trained",
        VerdictRule::DebiasEffectiveness => "debiased",
    };
    let rhs = match v.rule {
        VerdictRule::BiasPresence => "random",
        VerdictRule::DebiasEffectiveness => "bound",
    };
    let mut out = format!("{:>5}  {lhs:>11}  {rhs:>11}  {:>11}  verdict\n", "layer", "margin");
    for l in &v.per_layer_verdicts {
        let _ = writeln!(
            out,
            "{:>5}  {:>11.4}  {:>11.4}  {:>11.4}  {}",
            l.layer, l.lhs_value, l.rhs_value, l.margin, l.verdict
        );
    }
    let label = match v.rule {
        VerdictRule::BiasPresence => "bias present at some layer",
        VerdictRule::DebiasEffectiveness => "debiasing effective at every layer",
    };
    let _ = writeln!(out, "{label} (delta = {}): {}", v.delta, v.overall);
    print!("{out}");
}

fn verdict(args: VerdictArgs) -> Result<ExitCode, Error> {
    let trained = load_single(&args.trained, "trained")?;
    let mut random = Vec::new();
    for path in &args.random {
        random.extend(load_profiles(path)?);
    }
    let (report, triggered) = match args.rule {
        RuleArg::Bias => {
            let v = bias_verdict(&trained, &random, args.delta)?;
            let hit = v.overall;
            let mut profiles = vec![trained];
            profiles.extend(random);
            (Report::new(&profiles, vec![v], Some(args.delta))?, hit)
        }
        RuleArg::Debias => {
            let path = args.vanilla.as_ref().expect("clap enforces --vanilla for debias");
            let vanilla = load_single(path, "vanilla")?;
            let v = debias_effectiveness(&trained, &vanilla, &random, args.delta)?;
            let hit = !v.overall;
            let mut profiles = vec![trained, vanilla];
            profiles.extend(random);
            (Report::new(&profiles, vec![v], Some(args.delta))?, hit)
        }
    };
    export_report_json(&args.out, &report)?;
    print_verdict(&report.verdicts[0]);
    if args.fail_on_bias && triggered {
        return Ok(ExitCode::from(EXIT_VERDICT));
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(args: SynthArgs) -> Result<ExitCode, Error> {
    let feature_seed = args.feature_seed.unwrap_or(args.seed);
    let recipes = &args.layers.0;
    let stack = synth_stack(
        args.n,
        args.dim,
        args.classes,
        args.separation,
        recipes,
        args.seed,
        feature_seed,
    )?;
    let names: Vec<&str> = recipes.iter().map(|&r| recipe_name(r)).collect();
    let mut extra = std::collections::BTreeMap::new();
    extra.insert(
        "generator".to_string(),
        json!({
            "layers": names,
            "separation": args.separation,
            "label_seed": args.seed,
            "feature_seed": feature_seed,
        }),
    );
    let meta = LpedMeta {
        model_id: format!("synth-{}-f{feature_seed}", names.join("-")),
        pooling: "none".into(),
        shuffle_seed: args.seed,
        num_classes: args.classes,
        class_names: vec![],
        extra,
    };
    let matrices: Vec<_> = stack.iter().map(|e| e.features.clone()).collect();
    let manifest = write_lped(&args.out, &matrices, &stack[0].labels, &meta)?;
    println!(
        "wrote {} layers x {} examples x {} dims to {}",
        manifest.n_layers,
        manifest.n_examples,
        manifest.dim,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn compare(args: CompareArgs) -> Result<ExitCode, Error> {
    let mut profiles = Vec::new();
    for path in &args.reports {
        profiles.extend(load_profiles(path)?);
    }
    let table = compare_profiles(&profiles)?;
    export_comparison_csv(&args.out, &table)?;

    let width = profiles.iter().map(|p| p.model_tag.len()).max().unwrap_or(0).max(11);
    let mut out = format!("{:>5}", "layer");
    for p in &profiles {
        let _ = write!(out, "  {:>width$}", p.model_tag);
    }
    out.push('\n');
    for layer in 0..profiles[0].per_layer.len() {
        let _ = write!(out, "{layer:>5}");
        for p in &profiles {
            let _ = write!(out, "  {:>width$.4}", p.per_layer[layer].compression);
        }
        out.push('\n');
    }
    let _ = writeln!(out, "\nreference: {}", table.reference);
    for s in &table.summaries[1..] {
        let _ = writeln!(
            out,
            "{}: max {:.4} at layer {}, final {:.4}, below reference at every layer: {}, above at every layer: {}",
            s.model_tag,
            s.max_compression,
            s.max_compression_layer,
            s.final_layer_compression,
            s.reduced_at_all_layers,
            s.increased_at_all_layers
        );
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Profile(a) => profile(a),
        Command::Verdict(a) => verdict(a),
        Command::Synth(a) => synth(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_VALIDATION })
        }
    }
}
