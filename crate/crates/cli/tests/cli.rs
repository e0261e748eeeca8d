//! End-to-end runs of the `clonestat` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn clonestat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clonestat"))
        .args(args)
        .env_remove("CLONESTAT_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The error line; warnings logged earlier are skipped.
fn err_line(o: &Output) -> String {
    stderr(o).lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// y = 3 + small deterministic wiggle, 20 rows.
fn sum_data() -> String {
    let mut s = String::from("experiment,time,variable,value\n");
    for i in 0..20 {
        let y = 3.0 + 0.8 * ((i as f64) * 1.7).sin();
        s.push_str(&format!("e,{i},y,{y}\n"));
    }
    s
}

fn sum_mean() -> f64 {
    (0..20).map(|i| 3.0 + 0.8 * ((i as f64) * 1.7).sin()).sum::<f64>() / 20.0
}

fn sum_config(n_iter: usize, seed: u64) -> String {
    format!(
        r#"{{
  "model": {{"name": "sum_model", "constants": {{"sigma2": 1}}}},
  "data": "data.csv",
  "priors": [
    {{"id": "centre", "params": {{"a": {{"dist": "normal", "mean": 0, "variance": 4}}, "b": {{"dist": "normal", "mean": 0, "variance": 4}}}}}},
    {{"id": "left", "params": {{"a": {{"dist": "normal", "mean": 5, "variance": 4}}, "b": {{"dist": "normal", "mean": -5, "variance": 4}}}}}},
    {{"id": "right", "params": {{"a": {{"dist": "normal", "mean": -5, "variance": 4}}, "b": {{"dist": "normal", "mean": 5, "variance": 4}}}}}}
  ],
  "k_levels": [100, 200, 400],
  "mcmc": {{"n_iter": {n_iter}}},
  "transforms": ["a + b"],
  "seed": {seed}
}}"#
    )
}

struct Project {
    dir: TempDir,
}

impl Project {
    fn new(config: &str, data: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.json"), config).unwrap();
        std::fs::write(dir.path().join("data.csv"), data).unwrap();
        Self { dir }
    }
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
    fn config(&self) -> PathBuf {
        self.path("config.json")
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn status_of(report: &Value, name: &str) -> String {
    report["params"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["parameter"] == name)
        .unwrap_or_else(|| panic!("no {name} in {report}"))["status"]
        .as_str()
        .unwrap()
        .to_owned()
}

#[test]
fn sum_model_run_anova_transform_plotdata() {
    // Seed 11 trips the Geweke gate on one transformed cell (z = -3.2).
    let proj = Project::new(&sum_config(60_000, 12), &sum_data());
    let out = proj.path("res");
    let o = clonestat(&["run", "--config", p(&proj.config()), "--out", p(&out), "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("grid.json").is_file());
    assert!(out.join("cells/100_centre/chain.csv").is_file());
    assert!(out.join("cells/400_right/summary.json").is_file());

    let o = clonestat(&["anova", "--results", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("inestimable"), "{text}");
    let anova = read_json(&out.join("anova.json"));
    let grid = read_json(&out.join("grid.json"));
    assert_eq!(anova["config_hash"], grid["config_hash"]);
    assert_eq!(status_of(&anova["report"], "a"), "inestimable");
    assert_eq!(status_of(&anova["report"], "b"), "inestimable");
    let sum = &anova["transforms"][0];
    assert_eq!(status_of(sum, "a + b"), "estimable");

    // The sum is estimable at ȳ with standard error σ/√n.
    let o = clonestat(&["transform", "--results", p(&out), "--expr", "a + b", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let row = &t["report"]["params"][0];
    assert_eq!(row["status"], "estimable");
    let mle = row["combined"]["mle"].as_f64().unwrap();
    let avar = row["combined"]["asymptotic_variance"].as_f64().unwrap();
    assert!((mle - sum_mean()).abs() < 0.02, "{mle} vs {}", sum_mean());
    assert!((avar / 0.05 - 1.0).abs() < 0.15, "{avar}");

    // Undefined draws are counted, not fatal.
    let o = clonestat(&["transform", "--results", p(&out), "--expr", "sqrt(a + 4)", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));

    let o = clonestat(&["transform", "--results", p(&out), "--expr", "a + c"]);
    assert_eq!(code(&o), 1);
    assert!(err_line(&o).starts_with("clonestat: error[validation]:"));

    let pairs = proj.path("pairs.csv");
    let o = clonestat(&["plotdata", "--results", p(&out), "--out", p(&pairs), "--max-per-cell", "300"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&pairs).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "k,prior_id,draw,a,b");
    let rows: Vec<&str> = lines.collect();
    // 30 000 retained draws per cell, stride 100.
    assert_eq!(rows.len(), 9 * 300);
    assert!(rows[0].starts_with("100,centre,0,"));
    assert!(rows[1].starts_with("100,centre,100,"));

    // Dropping clone levels.
    let o = clonestat(&["anova", "--results", p(&out), "--drop-k", "400"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let anova = read_json(&out.join("anova.json"));
    assert_eq!(anova["report"]["k_levels"], serde_json::json!([100, 200]));
    assert_eq!(anova["dropped_k"], serde_json::json!([400]));
    let o = clonestat(&["anova", "--results", p(&out), "--drop-k", "400", "--drop-k", "200"]);
    assert_eq!(code(&o), 1);
    assert!(err_line(&o).contains("1 clone level(s) left"), "{}", stderr(&o));
}

#[test]
fn results_from_another_config_are_refused() {
    let a = Project::new(&sum_config(4000, 1), &sum_data());
    let b = Project::new(&sum_config(4000, 2), &sum_data());
    for proj in [&a, &b] {
        let o = clonestat(&["run", "--config", p(&proj.config()), "--out", p(&proj.path("res"))]);
        assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
    }
    // Same config but a different seed gives a different hash.
    let ha = read_json(&a.path("res/grid.json"))["config_hash"].clone();
    let hb = read_json(&b.path("res/grid.json"))["config_hash"].clone();
    assert_ne!(ha, hb);

    let src = b.path("res/cells/200_left/summary.json");
    std::fs::copy(src, a.path("res/cells/200_left/summary.json")).unwrap();
    let o = clonestat(&["anova", "--results", p(&a.path("res"))]);
    assert_eq!(code(&o), 1);
    let err = err_line(&o);
    assert!(err.contains("config hash") && err.contains("200_left"), "{err}");
    assert!(err.starts_with("clonestat: error[validation]:"));
}

#[test]
fn exit_codes() {
    // Bad config: one clone level.
    let bad = sum_config(4000, 1).replace("[100, 200, 400]", "[100]");
    let proj = Project::new(&bad, &sum_data());
    let o = clonestat(&["run", "--config", p(&proj.config()), "--out", p(&proj.path("res"))]);
    assert_eq!(code(&o), 1);
    let err = err_line(&o);
    assert!(err.starts_with("clonestat: error[validation]: k_levels"), "{err}");
    assert!(!proj.path("res").exists());

    // Unknown flag.
    let o = clonestat(&["run", "--config", p(&proj.config()), "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(err_line(&o).starts_with("clonestat: error[validation]:"));

    // Too short to pass the gate: results still written, exit 3.
    let proj = Project::new(&sum_config(600, 1), &sum_data());
    let out = proj.path("res");
    let o = clonestat(&["run", "--config", p(&proj.config()), "--out", p(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(err_line(&o).starts_with("clonestat: error[convergence]:"));
    assert!(out.join("grid.json").is_file());
    // The report then flags the cells instead of testing.
    let o = clonestat(&["anova", "--results", p(&out)]);
    assert_eq!(code(&o), 0);
    let anova = read_json(&out.join("anova.json"));
    assert_eq!(status_of(&anova["report"], "a"), "chains_unconverged");

    // Missing results directory is a runtime failure.
    let o = clonestat(&["anova", "--results", p(&proj.path("nowhere"))]);
    assert_eq!(code(&o), 2);
}

const SIR_CONFIG: &str = r#"{
  "model": {"name": "sir", "constants": {"N": 261}},
  "data": "data.csv",
  "fixed": {"I0": 5},
  "parameters": [{"name": "beta", "constraint": "positive"}, {"name": "alpha", "constraint": "positive"}],
  "priors": [
    {"id": "a", "params": {"beta": {"dist": "gamma", "shape": 2, "scale": 0.0005},
                           "alpha": {"dist": "gamma", "shape": 2, "scale": 0.05}}},
    {"id": "b", "params": {"beta": {"dist": "gamma", "shape": 4, "scale": 0.0002},
                           "alpha": {"dist": "gamma", "shape": 4, "scale": 0.02}}}
  ],
  "k_levels": [10, 20],
  "design": [{"experiment": "eyam", "variable": "R", "times": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]}]
}"#;

#[test]
fn bad_datasets_are_rejected() {
    let negative = "experiment,time,variable,value\neyam,1,R,0\neyam,2,R,-1\n";
    let proj = Project::new(SIR_CONFIG, negative);
    let o = clonestat(&["run", "--config", p(&proj.config()), "--out", p(&proj.path("res"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nonnegative integers"), "{}", stderr(&o));

    let unknown = "experiment,time,variable,value\neyam,1,Z,0\n";
    let proj = Project::new(SIR_CONFIG, unknown);
    let o = clonestat(&["run", "--config", p(&proj.config()), "--out", p(&proj.path("res"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unobservable/unknown variable `Z`"), "{}", stderr(&o));

    let malformed = "experiment,time,variable,value\neyam,one,R,0\n";
    let proj = Project::new(SIR_CONFIG, malformed);
    let o = clonestat(&["run", "--config", p(&proj.config()), "--out", p(&proj.path("res"))]);
    assert_eq!(code(&o), 1);
    let err = err_line(&o);
    assert!(err.starts_with("clonestat: error[validation]:") && err.contains("cannot parse time"), "{err}");
}

#[test]
fn simulate_from_a_design() {
    let proj = Project::new(SIR_CONFIG, "experiment,time,variable,value\n");
    std::fs::write(proj.path("params.json"), r#"{"beta": 6.2e-4, "alpha": 0.096}"#).unwrap();
    let sim = |out: &str, extra: &[&str]| {
        let (config, params, out) = (proj.config(), proj.path("params.json"), proj.path(out));
        let mut args = vec!["simulate", "--config", p(&config), "--params", p(&params), "--out", p(&out)];
        args.extend(extra);
        let o = clonestat(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read_to_string(&out).unwrap()
    };
    let means = sim("means.csv", &["--no-noise"]);
    let rows: Vec<Vec<String>> = means
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0][..3], ["eyam", "1", "R"]);
    let r: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(r.windows(2).all(|w| w[1] > w[0]));
    // R(1) ≈ α·I0 for a short first day.
    assert!((r[0] - 0.096 * 5.0).abs() < 0.1, "{}", r[0]);

    let a = sim("a.csv", &["--seed", "3"]);
    let b = sim("b.csv", &["--seed", "3"]);
    let c = sim("c.csv", &["--seed", "4"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    for line in a.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(v >= 0.0 && v.fract() == 0.0);
    }

    // The simulated file is itself a valid dataset for the model.
    std::fs::copy(proj.path("a.csv"), proj.path("data.csv")).unwrap();
    let o = clonestat(&["simulate", "--config", p(&proj.config()), "--params", p(&proj.path("params.json")), "--out", p(&proj.path("d.csv")), "--no-noise"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    std::fs::write(proj.path("params.json"), r#"{"beta": 6.2e-4}"#).unwrap();
    let o = clonestat(&["simulate", "--config", p(&proj.config()), "--params", p(&proj.path("params.json")), "--out", p(&proj.path("e.csv"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing value for `alpha`"));
}

#[test]
fn profile_over_a_period() {
    // Harmonic regression with period 12.
    let mut data = String::from("experiment,time,variable,value\n");
    for t in 0..48 {
        let w = 2.0 * std::f64::consts::PI * t as f64 / 12.0;
        let y = 1.0 + 2.0 * w.cos() - w.sin() + 0.7 * ((t as f64) * 2.3).sin();
        data.push_str(&format!("e,{t},y,{y}\n"));
    }
    let normal = |c: f64| format!(r#"{{"dist": "normal", "mean": {c}, "variance": 100}}"#);
    let prior = |id: &str, c: f64| {
        format!(
            r#"{{"id": "{id}", "params": {{"a": {}, "b": {}, "c": {}}}}}"#,
            normal(c),
            normal(c),
            normal(c)
        )
    };
    let config = format!(
        r#"{{
  "model": {{"name": "harmonic_regression"}},
  "data": "data.csv",
  "priors": [{}, {}],
  "init": {{"a": 0, "b": 0, "c": 0}},
  "k_levels": [20, 40],
  "discrete": {{"name": "m", "candidates": [13, 11, 12]}},
  "seed": 5
}}"#,
        prior("lo", -1.0),
        prior("hi", 1.0)
    );
    let proj = Project::new(&config, &data);
    let out = proj.path("prof");
    let o = clonestat(&["profile", "--config", p(&proj.config()), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let prof = read_json(&out.join("profile.json"));
    assert_eq!(prof["result"]["mle_value"], 12);
    assert_eq!(prof["fits"].as_array().unwrap().len(), 3);
    assert_eq!(prof["fits"][0]["value"], 11);
    assert_eq!(prof["result"]["profile_set"], serde_json::json!([12]));
    let region = std::fs::read_to_string(out.join("region.csv")).unwrap();
    assert!(region.starts_with("m,a,b,c,statistic\n"));
    assert!(region.lines().count() > 900);

    // `run` refuses a free discrete parameter.
    let o = clonestat(&["run", "--config", p(&proj.config()), "--out", p(&proj.path("res"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("`m` must be fixed"));
}
