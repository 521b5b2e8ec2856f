use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use dedim::dedims::{rank_candidates, Measure};
use dedim::feature_store::{load_features, FileFormat, SubsampleSpec};

fn dedim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dedim")).args(args).current_dir(dir).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn synth(dir: &Path, name: &str, shift: &str) {
    let out = dedim(dir, &["gen-synth", "--out", name, "--per-class", "40", "--dim", "3", "--shift", shift]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dedim(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(dedim(dir.path(), &["dist", "--a", "x.ddim"]).status.code(), Some(1));
    assert_eq!(dedim(dir.path(), &["dist", "--a", "x", "--b", "y", "--bogus"]).status.code(), Some(1));
    let missing = dedim(dir.path(), &["dist", "--a", "x.ddim", "--b", "y.ddim"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("x.ddim"));
    assert_eq!(dedim(dir.path(), &["--help"]).status.code(), Some(0));
    synth(dir.path(), "a.ddim", "0");
    let too_big = dedim(dir.path(), &["dist", "--a", "a.ddim", "--b", "a.ddim", "--tau", "500"]);
    assert_eq!(too_big.status.code(), Some(2));
    let bad_measure = dedim(dir.path(), &["dist", "--a", "a.ddim", "--b", "a.ddim", "--measure", "l7"]);
    assert_eq!(bad_measure.status.code(), Some(1));
}

#[test]
fn help_lists_flags_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 8] = [
        ("dist", &["--a", "--b", "--measure", "--tau", "--c", "--bins", "--seed", "--format"]),
        ("rank", &["--labelled", "--candidates", "--measure", "--tau"]),
        ("sandbox", &["--grid", "--out", "--jobs", "--set"]),
        ("train", &["--grid", "--set", "--run", "--supervised"]),
        ("report", &["--results"]),
        ("gen-noise", &["--kind", "--n", "--height", "--width", "--channels", "--out"]),
        ("gen-synth", &["--classes", "--per-class", "--dim", "--spread", "--shift", "--out"]),
        ("density", &["--a", "--b", "--feature", "--bins", "--out"]),
    ];
    for (cmd, flags) in cases {
        let out = dedim(dir.path(), &[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in flags {
            assert!(text.contains(flag), "{cmd} help lacks {flag}");
        }
        assert!(text.contains("[default: 0]"), "{cmd} help lacks the seed default");
    }
}

#[test]
fn dist_echoes_config_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a.ddim", "0");
    synth(dir.path(), "b.ddim", "3");
    let v = json(&dedim(dir.path(), &["dist", "--a", "a.ddim", "--b", "b.ddim", "--measure", "cos", "--tau", "20", "--c", "6", "--seed", "7"]));
    assert_eq!(v["command"], "dist");
    assert_eq!(v["config"]["tau"], 20);
    assert_eq!(v["config"]["c"], 6);
    assert_eq!(v["config"]["seed"], 7);
    assert_eq!(v["config"]["bins"], 50);
    assert_eq!(v["result"]["measure"], "cos");
    assert_eq!(v["result"]["per_sample"].as_array().unwrap().len(), 6);

    assert_eq!(v["config"]["standardize"], false);

    let all = json(&dedim(dir.path(), &["dist", "--a", "a.ddim", "--b", "b.ddim", "--tau", "20"]));
    assert_eq!(all["result"].as_array().unwrap().len(), 4);

    let raw = json(&dedim(dir.path(), &["dist", "--a", "a.ddim", "--b", "b.ddim", "--measure", "l1", "--tau", "20"]));
    let scaled = json(&dedim(dir.path(), &["dist", "--a", "a.ddim", "--b", "b.ddim", "--measure", "l1", "--tau", "20", "--standardize"]));
    assert_eq!(scaled["config"]["standardize"], true);
    assert_ne!(raw["result"]["mean"], scaled["result"]["mean"]);
}

#[test]
fn environment_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a.ddim", "0");
    let out = Command::new(env!("CARGO_BIN_EXE_dedim"))
        .args(["dist", "--a", "a.ddim", "--b", "a.ddim", "--measure", "l1"])
        .env("DEDIM_TAU", "15")
        .env("DEDIM_SEED", "4")
        .current_dir(dir.path())
        .output()
        .unwrap();
    let v = json(&out);
    assert_eq!(v["config"]["tau"], 15);
    assert_eq!(v["config"]["seed"], 4);
    assert_eq!(v["result"]["tau"], 15);
}

#[test]
fn rank_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "l.ddim", "0");
    synth(dir.path(), "near.ddim", "1");
    synth(dir.path(), "far.ddim", "6");
    let v = json(&dedim(
        dir.path(),
        &["rank", "--labelled", "l.ddim", "--candidates", "far.ddim,near.ddim", "--tau", "30", "--c", "8", "--seed", "2"],
    ));
    let names: Vec<&str> = v["result"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, vec!["near", "far"]);

    let load = |n: &str| load_features(dir.path().join(n), FileFormat::Binary).unwrap();
    let expected = rank_candidates(
        &load("l.ddim"),
        &[load("far.ddim"), load("near.ddim")],
        &SubsampleSpec::new(30, 8, 2).unwrap(),
        Measure::Cos,
        50,
    )
    .unwrap();
    for (got, want) in v["result"].as_array().unwrap().iter().zip(&expected) {
        assert_eq!(got["report"]["mean"].as_f64().unwrap(), want.report.mean);
    }
}

#[test]
fn sandbox_writes_one_file_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let grid = "n_l = 10, 20\nn_u = 30\nn_test = 20\nruns = 2\nepochs = 1\npct_uood = 0, 100\nsynth_dim = 3\nsynth_per_class = 30\ntau = 5\ndraws = 3\n";
    std::fs::write(dir.path().join("g.cfg"), grid).unwrap();
    let v = json(&dedim(dir.path(), &["sandbox", "--grid", "g.cfg", "--out", "res", "--set", "hidden=4"]));
    assert_eq!(v["config"]["cells"].as_array().unwrap().len(), 4);
    assert_eq!(v["config"]["settings"]["mixmatch"]["hidden"], 4);
    let files: Vec<String> = std::fs::read_dir(dir.path().join("res"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(files.iter().filter(|f| f.ends_with(".json")).count(), 4);
    assert!(files.contains(&"report.csv".to_string()));
    let csv = std::fs::read_to_string(dir.path().join("res/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let table = dedim(dir.path(), &["report", "--results", "res", "--format", "table"]);
    assert_eq!(table.status.code(), Some(0));
    let text = String::from_utf8_lossy(&table.stdout);
    assert!(text.starts_with("# dedim report\n"));
    assert!(text.contains("spearman"));

    let reported = json(&dedim(dir.path(), &["report", "--results", "res"]));
    assert_eq!(reported["result"]["table"], v["result"]["table"]);

    let bad = dedim(dir.path(), &["sandbox", "--grid", "g.cfg", "--out", "res", "--set", "nonsense=1"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_and_generators() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&dedim(
        dir.path(),
        &["train", "--set", "n_l=15", "--set", "n_u=30", "--set", "n_test=20", "--set", "epochs=2", "--set", "synth_dim=3", "--set", "synth_per_class=30"],
    ));
    assert_eq!(v["result"]["epoch_accuracy"].as_array().unwrap().len(), 2);
    assert_eq!(v["config"]["cell"]["seed"], 0);

    let noise = json(&dedim(dir.path(), &["gen-noise", "--n", "5", "--height", "4", "--width", "4", "--channels", "1", "--out", "n.csv"]));
    assert_eq!(noise["result"]["d"], 16);
    let m = load_features(dir.path().join("n.csv"), FileFormat::Csv).unwrap();
    assert_eq!((m.n(), m.d()), (5, 16));

    synth(dir.path(), "a.ddim", "0");
    assert!(dir.path().join("a.labels").exists());
    let density = dedim(dir.path(), &["density", "--a", "a.ddim", "--b", "a.ddim", "--feature", "0", "--bins", "4", "--out", "d.csv", "--format", "table"]);
    assert_eq!(density.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(String::from_utf8_lossy(&density.stdout).ends_with(&csv));
}
