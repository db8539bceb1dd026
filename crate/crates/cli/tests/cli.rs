use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laplace-audit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = bin(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_writes_row_major_json() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fit", "--model", "logistic:n=50,p=3,seed=2", "--out", "laplace.json"], dir.path());
    let j = read_json(&dir.path().join("laplace.json"));
    assert_eq!(j["dim"], 3);
    assert_eq!(j["precision"]["rows"], 3);
    assert_eq!(j["factor"]["data"].as_array().unwrap().len(), 9);
    // Lower-triangular factor: entry (0, 1) in row-major position 1.
    assert_eq!(j["factor"]["data"][1].as_f64().unwrap(), 0.0);
    assert!(j["log_det_sigma"].is_number());
}

#[test]
fn diagnose_reports_every_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        &[
            "diagnose", "--model", "quartic:eps=0.01,dim=2", "--samples", "5000", "--seed", "3", "--var-elbo", "200,20",
            "--taylor", "--json", "d.json",
        ],
        dir.path(),
    );
    for name in ["klvar", "lsi", "var_elbo", "klvar_plus_lsi", "varelbo_plus_lsi", "taylor4_klvar"] {
        assert!(stdout.contains(name), "{name} missing from\n{stdout}");
    }
    let j = read_json(&dir.path().join("d.json"));
    let est = j["estimates"].as_array().unwrap();
    assert_eq!(est.len(), 5);
    assert!(est.iter().all(|e| e["std_error"].as_f64().unwrap() >= 0.0));
    assert!(j["taylor"]["taylor4_klvar"].as_f64().unwrap() > 0.0);

    // Same seed, same numbers.
    let again = ok(
        &[
            "diagnose", "--model", "quartic:eps=0.01,dim=2", "--samples", "5000", "--seed", "3", "--var-elbo", "200,20",
            "--taylor",
        ],
        dir.path(),
    );
    assert_eq!(again, stdout);
}

#[test]
fn bounds_prints_the_coverage_table() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        &["bounds", "--model", "logistic:n=400,p=2,seed=1", "--samples", "2000", "--json", "b.json"],
        dir.path(),
    );
    assert!(stdout.contains("Pinsker") && stdout.contains("0.99"));
    let j = read_json(&dir.path().join("b.json"));
    assert_eq!(j["coverage"].as_array().unwrap().len(), 4);
    assert!(j["delta3"].as_f64().unwrap() > 0.0);

    // Non-logistic models need Δ₃ from the user.
    assert!(!bin(&["bounds", "--model", "quartic:eps=0.01"], dir.path()).status.success());
    ok(&["bounds", "--model", "quartic:eps=0.01", "--delta3", "0.2", "--kl", "0.01"], dir.path());
}

#[test]
fn reference_kl_exports_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        &[
            "reference-kl", "--model", "quartic:eps=0.01", "--chain-samples", "3000", "--warmup", "500", "--samples",
            "5000", "--seed", "4", "--json", "r.json", "--chain-csv", "chain.csv",
        ],
        dir.path(),
    );
    assert!(stdout.contains("kl_direct") && stdout.contains("kl_quadrature"));
    let chain = std::fs::read_to_string(dir.path().join("chain.csv")).unwrap();
    assert!(chain.starts_with("theta1,phi\n"));
    assert_eq!(chain.lines().count(), 3001);
    let j = read_json(&dir.path().join("r.json"));
    assert!(j["report"]["direct"]["value"].is_number());
}

#[test]
fn experiment_is_resumable_and_plottable() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.toml"),
        "n = [40, 400]\np = [2]\nseeds = [1]\ndiag_samples = 2000\nreference_samples = 2000\n\
         estimators = [\"klvar\", \"reference_direct\"]\nrecord_timing = false\n",
    )
    .unwrap();
    let first = ok(&["experiment", "--config", "cfg.toml", "--out", "r.csv", "--quiet"], dir.path());
    assert!(first.contains("4 rows written"), "{first}");
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("model,n,p,seed,estimator,value,std_error,runtime_ms,gate,notes\n"));
    let second = ok(&["experiment", "--config", "cfg.toml", "--out", "r.csv", "--quiet"], dir.path());
    assert!(second.contains("0 rows written"), "{second}");
    assert_eq!(std::fs::read_to_string(dir.path().join("r.csv")).unwrap(), csv);

    ok(&["plot", "--in", "r.csv", "--kind", "kl_vs_n", "--out", "fig.svg"], dir.path());
    let svg = std::fs::read_to_string(dir.path().join("fig.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn plot_of_empty_file_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.csv"), "model,n,p,seed,estimator,value,std_error,runtime_ms,gate,notes\n").unwrap();
    let out = bin(&["plot", "--in", "e.csv", "--kind", "ratio_vs_n", "--out", "x.svg"], dir.path());
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!dir.path().join("x.svg").exists());
    assert!(!bin(&["plot", "--in", "e.csv", "--kind", "pie", "--out", "x.svg"], dir.path()).status.success());
}

#[test]
fn demo_mixture_warns() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["demo-mixture", "--sigma", "100", "--samples", "5000", "--json", "m.json"], dir.path());
    assert!(stdout.contains("not log-concave"));
    let j = read_json(&dir.path().join("m.json"));
    assert!(j["kl_quadrature"].as_f64().unwrap() > 10.0 * j["klvar"]["value"].as_f64().unwrap());
    assert!(!bin(&["demo-mixture", "--sigma", "0.5"], dir.path()).status.success());
}

#[test]
fn generated_data_feeds_the_csv_model() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate-data", "--n", "60", "--p", "3", "--seed", "5", "--out", "d.csv"], dir.path());
    ok(&["fit", "--model", "logistic-csv:path=d.csv", "--out", "a.json"], dir.path());
    ok(&["fit", "--model", "logistic:n=60,p=3,seed=5", "--out", "b.json"], dir.path());
    let (a, b) = (read_json(&dir.path().join("a.json")), read_json(&dir.path().join("b.json")));
    for (x, y) in a["mu"].as_array().unwrap().iter().zip(b["mu"].as_array().unwrap()) {
        assert!((x.as_f64().unwrap() - y.as_f64().unwrap()).abs() < 1e-9);
    }
}

#[test]
fn bad_model_spec_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["fit", "--model", "logistic:n=10", "--out", "x.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("p="));
}
