use std::path::Path;
use std::process::{Command, Output};

use robust_choice::experiments::SyntheticProblem;
use robust_choice::io::{read_beta, read_dataset, write_dataset, ModelSection};
use robust_choice::log_likelihood;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robust-choice"))
        .args(args)
        .current_dir(dir)
        .env_remove("ROBUST_CHOICE_SEED")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Binary train/test files plus `model.toml`; returns the model section text.
fn setup(dir: &Path) -> String {
    let p = SyntheticProblem::binary_mode(400, 3);
    write_dataset(dir.join("train.csv"), &p.spec, &p.simulate().unwrap()).unwrap();
    write_dataset(dir.join("test.csv"), &p.spec, &p.with_seed(4).simulate().unwrap()).unwrap();
    ModelSection::from_spec(&p.spec).to_toml().unwrap()
}

fn config(dir: &Path, name: &str, model: &str, rest: &str) {
    std::fs::write(dir.join(name), format!("{model}\n{rest}")).unwrap();
}

#[test]
fn fit_then_evaluate_reproduces_the_log_likelihood() {
    let dir = tempfile::tempdir().unwrap();
    let model = setup(dir.path());
    config(dir.path(), "rl.toml", &model, "[estimator]\nkind = \"robust_label\"\ngamma = 3\n");
    let out = stdout(&run(dir.path(), &["fit", "train.csv", "--config", "rl.toml", "--out", "fit.json"]));
    assert!(out.contains("rl(gamma=3)"));
    assert!(out.contains("converged: true"));

    let fit = read_beta(dir.path().join("fit.json")).unwrap();
    let test = read_dataset(dir.path().join("test.csv"), &fit.spec).unwrap();
    let expected = log_likelihood(&fit.spec, &fit.beta, &test).unwrap();
    let out = stdout(&run(dir.path(), &["evaluate", "test.csv", "--beta", "fit.json"]));
    let reported: f64 = out.lines().find_map(|l| l.strip_prefix("log-likelihood: ")).unwrap().parse().unwrap();
    assert_eq!(reported, expected);
    assert!(out.contains("observations: 400"));
}

#[test]
fn synth_without_feature_noise_keeps_attributes() {
    let dir = tempfile::tempdir().unwrap();
    let model = setup(dir.path());
    config(dir.path(), "s.toml", &model, "[experiment]\nseed = 5\nfeature_magnitude = 0\nlabel_flip_prob = 0.2\n");
    stdout(&run(dir.path(), &["synth", "test.csv", "--config", "s.toml", "--out", "synth"]));
    let beta = read_beta(dir.path().join("synth/beta_test.json")).unwrap();
    let sim = read_dataset(dir.path().join("synth/simulated.csv"), &beta.spec).unwrap();
    let pert = read_dataset(dir.path().join("synth/perturbed.csv"), &beta.spec).unwrap();
    let clean = read_dataset(dir.path().join("test.csv"), &beta.spec).unwrap();
    let mut flips = 0;
    for ((s, p), c) in sim.iter().zip(pert.iter()).zip(clean.iter()) {
        assert_eq!(s.x(), c.x());
        assert_eq!(p.x(), s.x());
        flips += usize::from(s.chosen() != p.chosen());
    }
    // 400 draws at 0.2: mean 80, sd 8
    assert!((50..=110).contains(&flips), "{flips} flips");
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let sim = |seed: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_robust-choice"));
        cmd.args(["simulate", "--preset", "three-mode", "--n", "50", "--out", out]).current_dir(dir.path());
        match seed {
            Some(s) => cmd.env("ROBUST_CHOICE_SEED", s),
            None => cmd.env_remove("ROBUST_CHOICE_SEED"),
        };
        cmd.output().unwrap()
    };
    stdout(&sim(Some("9"), "a.csv"));
    stdout(&sim(Some("9"), "b.csv"));
    stdout(&sim(None, "c.csv"));
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
    assert_eq!(sim(Some("nine"), "d.csv").status.code(), Some(2));
}

#[test]
fn simulate_writes_a_usable_model_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&run(
        dir.path(),
        &[
            "simulate",
            "--preset",
            "binary",
            "--n",
            "300",
            "--seed",
            "1",
            "--out",
            "d.csv",
            "--model-out",
            "m.toml",
            "--beta-out",
            "truth.json",
        ],
    ));
    let out = stdout(&run(dir.path(), &["evaluate", "d.csv", "--beta", "truth.json"]));
    assert!(out.contains("observations: 300"));
    let model = std::fs::read_to_string(dir.path().join("m.toml")).unwrap();
    config(dir.path(), "fit.toml", &model, "");
    stdout(&run(dir.path(), &["fit", "d.csv", "--config", "fit.toml", "--out", "f.json"]));
}

#[test]
fn tune_price_and_diagnose_run() {
    let dir = tempfile::tempdir().unwrap();
    let model = setup(dir.path());
    config(
        dir.path(),
        "rf.toml",
        &model,
        "[estimator]\nkind = \"robust_feature\"\np = \"inf\"\nrho = 0.05\n\n[tune]\ngrid = [0.0, 0.05, 0.2]\nseed = 1\n\n[pricing]\nfeature = \"bus_cost\"\nalternative = \"bus\"\nstep = 0.1\nmax = 4\n",
    );
    let out = stdout(&run(dir.path(), &["tune", "train.csv", "--config", "rf.toml", "--out", "tune.csv"]));
    assert!(out.contains("selected: "));
    assert_eq!(std::fs::read_to_string(dir.path().join("tune.csv")).unwrap().lines().count(), 4);

    stdout(&run(dir.path(), &["fit", "train.csv", "--config", "rf.toml", "--out", "fit.json"]));
    let out = stdout(&run(
        dir.path(),
        &["price", "test.csv", "--beta", "fit.json", "--beta-true", "fit.json", "--config", "rf.toml"],
    ));
    // with the same coefficients on both sides the model is its own oracle
    let value = |key: &str| -> f64 { out.lines().find_map(|l| l.strip_prefix(key)).unwrap().parse().unwrap() };
    assert_eq!(value("actual revenue: "), value("oracle revenue: "));
    assert_eq!(value("predicted revenue: "), value("actual revenue: "));

    let out = stdout(&run(
        dir.path(),
        &["diagnose", "test.csv", "--beta", "fit.json", "--config", "rf.toml", "--subsample", "20", "--out", "d.json"],
    ));
    assert!(out.contains("\"trace_mle\""));
    assert!(out.contains("\"method\": \"vertex enumeration\""));
    assert!(out.contains("\"ordered\": true"));
    assert!(out.contains("\"jensen_gap_violations\": 0"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let model = setup(dir.path());

    // missing input file
    let out = run(dir.path(), &["evaluate", "nope.csv", "--beta", "nope.json"]);
    assert_eq!(out.status.code(), Some(2));

    // key that does not apply to the estimator
    config(dir.path(), "bad.toml", &model, "[estimator]\nkind = \"nominal\"\nrho = 1\n");
    let out = run(dir.path(), &["fit", "train.csv", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));

    // a malformed row reports its line
    let mut text = std::fs::read_to_string(dir.path().join("train.csv")).unwrap();
    text = text.replacen(",walk\n", ",hike\n", 1);
    std::fs::write(dir.path().join("broken.csv"), text).unwrap();
    config(dir.path(), "ok.toml", &model, "");
    let out = run(dir.path(), &["fit", "broken.csv", "--config", "ok.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hike"));

    // iteration cap with --strict
    config(dir.path(), "short.toml", &model, "[fit]\nmax_iters = 1\n");
    let out = run(dir.path(), &["--strict", "fit", "train.csv", "--config", "short.toml", "--out", "f.json"]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(dir.path(), &["fit", "train.csv", "--config", "short.toml", "--out", "f.json"]);
    assert_eq!(out.status.code(), Some(0));

    let out = run(dir.path(), &["--threads", "0", "fit", "train.csv", "--config", "ok.toml"]);
    assert_eq!(out.status.code(), Some(2));
}
