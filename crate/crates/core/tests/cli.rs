use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mdlprobe::io::report::import_report_json;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdlprobe"))
        .args(args)
        .current_dir(dir)
        .env_remove("MDLPROBE_JOBS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, out: &str, layers: &str, feature_seed: &str) {
    let o = run(
        &[
            "synth", "--n", "256", "--dim", "4", "--classes", "2", "--separation", "3.0", "--layers", layers, "--seed",
            "7", "--feature-seed", feature_seed, "--out", out,
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn profile(dir: &Path, dump: &str, out: &str) {
    let o = run(
        &["profile", "--embeddings", dump, "--schedule", "geometric:0.02,2.0", "--seed", "1", "--out", out],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn profile_happy_path() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "d", "noise,informative", "7");
    let o = run(
        &["profile", "--embeddings", "d", "--probe", "linear", "--seed", "42", "--out", "r.json", "--csv", "r.csv"],
        t.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("compression"));
    let report = import_report_json(&t.path().join("r.json")).unwrap();
    assert_eq!(report.profiles.len(), 1);
    assert_eq!(report.profiles[0].layers.len(), 2);
    assert_eq!(report.settings.probe.seed, 42);
    assert_eq!(fs::read_to_string(t.path().join("r.csv")).unwrap().lines().count(), 3);
}

#[test]
fn mlp_probe_and_overrides() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "d", "informative", "7");
    let o = run(
        &[
            "profile", "--embeddings", "d", "--probe", "mlp", "--hidden", "8", "--epochs", "3", "--lr", "0.05", "--l2",
            "0", "--batch-size", "16", "--jobs", "2", "--schedule", "explicit:1,64,128,256", "--out", "r.json",
        ],
        t.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = import_report_json(&t.path().join("r.json")).unwrap();
    let p = &r.settings.probe;
    assert_eq!((p.hidden_width, p.epochs, p.batch_size), (8, 3, 16));
    assert_eq!((p.learning_rate, p.l2_strength), (0.05, 0.0));
    assert_eq!(r.settings.schedule.boundaries(), &[1, 64, 128, 256]);
}

#[test]
fn missing_manifest_is_a_validation_error() {
    let t = tempfile::tempdir().unwrap();
    fs::create_dir(t.path().join("empty")).unwrap();
    let o = run(&["profile", "--embeddings", "empty", "--out", "r.json"], t.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("manifest"));
    assert!(!t.path().join("r.json").exists());
}

#[test]
fn bad_schedule_is_rejected_at_parse_time() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "d", "informative", "7");
    let o = run(&["profile", "--embeddings", "d", "--schedule", "geometric:0.5,1.0", "--out", "r.json"], t.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--schedule"));
    let o = run(&["profile", "--embeddings", "d", "--schedule", "explicit:1,10,99", "--out", "r.json"], t.path());
    assert_eq!(code(&o), 1);
    assert!(!t.path().join("r.json").exists());
}

#[test]
fn corrupt_dump_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "d", "noise,informative", "7");
    let f = t.path().join("d/layer_1.bin");
    let mut bytes = fs::read(&f).unwrap();
    bytes[40] ^= 1;
    fs::write(&f, bytes).unwrap();
    let o = run(&["profile", "--embeddings", "d", "--out", "r.json"], t.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("layer_1.bin"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "d", "informative", "7");
    let o = run(&["profile", "--embeddings", "d", "--out", "no/such/dir/r.json"], t.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn synth_validation() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--n", "10", "--dim", "2", "--classes", "1", "--out", "x"], t.path());
    assert_eq!(code(&o), 1);
    let o = run(&["synth", "--n", "10", "--dim", "2", "--layers", "noise,loud", "--out", "x"], t.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("loud"));
    assert!(!t.path().join("x").exists());
}

#[test]
fn synth_is_reproducible_and_feature_seed_only_changes_features() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "a", "noise,informative", "7");
    synth(t.path(), "b", "noise,informative", "7");
    synth(t.path(), "c", "noise,informative", "8");
    for f in ["manifest.json", "layer_0.bin", "layer_1.bin", "labels.txt"] {
        assert_eq!(fs::read(t.path().join("a").join(f)).unwrap(), fs::read(t.path().join("b").join(f)).unwrap());
    }
    let read = |d: &str, f: &str| fs::read(t.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "labels.txt"), read("c", "labels.txt"));
    assert_ne!(read("a", "layer_1.bin"), read("c", "layer_1.bin"));
}

#[test]
fn verdict_bias_and_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "trained", "noise,informative", "7");
    synth(t.path(), "random", "noise,noise", "100");
    profile(t.path(), "trained", "t.json");
    profile(t.path(), "random", "r.json");
    let args = ["verdict", "--rule", "bias", "--trained", "t.json", "--random", "r.json", "--delta", "0.1", "--out", "v.json"];
    let o = run(&args, t.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("margin"));
    let v = import_report_json(&t.path().join("v.json")).unwrap();
    let flags: Vec<bool> = v.verdicts[0].per_layer_verdicts.iter().map(|l| l.verdict).collect();
    assert_eq!(flags, [false, true]);
    assert_eq!(v.profiles.len(), 2);

    let mut strict = args.to_vec();
    strict.push("--fail-on-bias");
    assert_eq!(code(&run(&strict, t.path())), 3);

    // a random model compared with itself shows no bias
    let same = ["verdict", "--rule", "bias", "--trained", "r.json", "--random", "r.json", "--out", "s.json", "--fail-on-bias"];
    assert_eq!(code(&run(&same, t.path())), 0);
}

#[test]
fn verdict_debias_needs_vanilla() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "trained", "noise,informative", "7");
    synth(t.path(), "random", "noise,noise", "100");
    profile(t.path(), "trained", "t.json");
    profile(t.path(), "random", "r.json");
    let o = run(&["verdict", "--rule", "debias", "--trained", "r.json", "--random", "r.json", "--out", "v.json"], t.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--vanilla"));

    let ok = [
        "verdict", "--rule", "debias", "--trained", "r.json", "--vanilla", "t.json", "--random", "r.json", "--out",
        "v.json", "--fail-on-bias",
    ];
    assert_eq!(code(&run(&ok, t.path())), 0);
    // the biased model is not an effective debiasing of itself
    let bad = [
        "verdict", "--rule", "debias", "--trained", "t.json", "--vanilla", "t.json", "--random", "r.json", "--out",
        "w.json", "--fail-on-bias",
    ];
    assert_eq!(code(&run(&bad, t.path())), 3);
}

#[test]
fn verdict_refuses_mismatched_settings() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "trained", "noise,informative", "7");
    profile(t.path(), "trained", "t.json");
    let o = run(
        &["profile", "--embeddings", "trained", "--schedule", "geometric:0.02,2.0", "--seed", "2", "--out", "other.json"],
        t.path(),
    );
    assert_eq!(code(&o), 0);
    let o = run(&["verdict", "--rule", "bias", "--trained", "t.json", "--random", "other.json", "--out", "v.json"], t.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("probe"));
    let o = run(&["verdict", "--rule", "bias", "--trained", "t.json", "--random", "gone.json", "--out", "v.json"], t.path());
    assert_eq!(code(&o), 2);
    assert!(!t.path().join("v.json").exists());
}

#[test]
fn compare_writes_csv_and_table() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "a", "noise,informative", "7");
    synth(t.path(), "b", "noise,noise", "100");
    profile(t.path(), "a", "a.json");
    profile(t.path(), "b", "b.json");
    let o = run(&["compare", "a.json", "b.json", "--out", "cmp.csv"], t.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(t.path().join("cmp.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(String::from_utf8(o.stdout).unwrap().contains("reference"));
    let o = run(&["compare", "a.json", "--out", "one.csv"], t.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn help_documents_flags() {
    let t = tempfile::tempdir().unwrap();
    let expect: [(&str, &[&str]); 4] = [
        ("profile", &["--embeddings", "--schedule", "--probe", "--seed", "--out", "--jobs", "MDLPROBE_JOBS"]),
        ("verdict", &["--rule", "--trained", "--random", "--vanilla", "--delta", "--out", "--fail-on-bias"]),
        ("synth", &["--n", "--dim", "--classes", "--separation", "--layers", "--seed", "--out"]),
        ("compare", &["--out", "REPORT"]),
    ];
    for (cmd, flags) in expect {
        let o = run(&[cmd, "--help"], t.path());
        assert_eq!(code(&o), 0);
        let text = String::from_utf8(o.stdout).unwrap();
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
    assert_eq!(code(&run(&["--help"], t.path())), 0);
    assert_eq!(code(&run(&["bogus"], t.path())), 1);
}
