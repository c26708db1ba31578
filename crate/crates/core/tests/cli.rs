use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddprior::io::{network_to_json, parse_network, read_dataset, PriorConfig};
use ddprior::reproduce::{example5_dataset, example5_network, TABLE2_SHARED};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/example5").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddprior")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn records(out: &[u8]) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(out).records().map(|r| r.unwrap()).collect()
}

fn stderr_json(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn bundled_files_match_the_library_fixture() {
    let net = parse_network(&fs::read_to_string(data("network.json")).unwrap()).unwrap();
    assert_eq!(net, example5_network());
    let ds = read_dataset(fs::File::open(data("data.csv")).unwrap(), &net).unwrap();
    assert_eq!(ds, example5_dataset());
    assert_eq!(parse_network(&network_to_json(&net)).unwrap(), net);
    for name in ["prior_shared.json", "prior_independent.json"] {
        let cfg = PriorConfig::parse(&fs::read_to_string(data(name)).unwrap()).unwrap();
        assert_eq!(PriorConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }
}

#[test]
fn estimate_reproduces_the_shared_prior_table() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("weights.json");
    let report = dir.path().join("report.json");
    let out = run(&[
        "estimate",
        "--network", path(&data("network.json")),
        "--data", path(&data("data.csv")),
        "--prior", path(&data("prior_shared.json")),
        "--weights", path(&weights),
        "--report", path(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<_> = records(&out.stdout)
        .into_iter()
        .filter(|r| &r[0] == "X" && &r[2] == "1")
        .collect();
    assert_eq!(rows.len(), 8);
    for (r, want) in rows.iter().zip(TABLE2_SHARED) {
        let got: f64 = r[6].parse().unwrap();
        assert!((got - want).abs() <= 5e-4, "{r:?}: {got} vs {want}");
    }
    let w: serde_json::Value = serde_json::from_str(&fs::read_to_string(weights).unwrap()).unwrap();
    assert!(!w.as_array().unwrap().is_empty());
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(rep["inputs"].as_array().unwrap().len(), 3);
}

#[test]
fn empty_data_warns_and_returns_prior_means() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "A,B,C,X\n").unwrap();
    let out = run(&["estimate", "--network", path(&data("network.json")), "--data", path(&empty)]);
    assert!(out.status.success());
    assert!(stderr_json(&out).iter().any(|v| v["level"] == "warning"));
    for r in records(&out.stdout) {
        assert_eq!(r[6].parse::<f64>().unwrap(), 0.5);
    }
}

#[test]
fn unknown_label_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "A,B,C,X\n0,1,0,2\n").unwrap();
    let out = run(&["estimate", "--network", path(&data("network.json")), "--data", path(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    let err = &stderr_json(&out)[0];
    assert_eq!(err["level"], "error");
    assert_eq!(err["kind"], "validation");
}

#[test]
fn malformed_network_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    fs::write(&net, "{ nodes: ").unwrap();
    let out = run(&["estimate", "--network", path(&net), "--data", path(&data("data.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_pi_needs_parented_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let csv = dir.path().join("d.csv");
    fs::write(&net, r#"{"nodes":[{"name":"A","domain":["0","1"],"parents":[]}]}"#).unwrap();
    fs::write(&csv, "A\n0\n1\n1\n").unwrap();
    let out = run(&["fit-pi", "--network", path(&net), "--data", path(&csv)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn fit_pi_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("est.csv");
    let out = run(&[
        "fit-pi",
        "--network", path(&data("network.json")),
        "--data", path(&data("data.csv")),
        "--then-estimate", path(&est),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let pi = &fit["pi"];
    let total: f64 = ["pi0", "pi1", "pi2"].iter().map(|k| pi[k].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(records(&fs::read(est).unwrap()).len(), 2 * (1 + 1 + 1 + 8));
}

#[test]
fn mse_ratio_grids() {
    let out = run(&["mse-ratio", "--figure1"]);
    assert!(out.status.success());
    let rows = records(&out.stdout);
    assert_eq!(rows.len(), 3 * 66);
    assert!(rows.iter().all(|r| r[6].parse::<f64>().unwrap() >= 1.0 - 1e-9));

    let out = run(&["mse-ratio", "--select", "0.25,0.5,0.25", "--step", "0.5", "--radices", "2,2"]);
    assert!(out.status.success());
    assert_eq!(records(&out.stdout).len(), 6);

    assert_eq!(run(&["mse-ratio", "--step", "0.5"]).status.code(), Some(3));
    assert_eq!(run(&["mse-ratio", "--figure1", "--step", "0.3"]).status.code(), Some(3));
}

#[test]
fn sample_prior_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let prior = dir.path().join("pooled.json");
    fs::write(&prior, r#"{"default":{"alpha":2,"pi":{"pi0":1,"pi1":0,"pi2":0}}}"#).unwrap();
    let args = |seed: &str| {
        run(&[
            "sample-prior",
            "--network", path(&data("network.json")),
            "--prior", path(&prior),
            "--node", "X",
            "--count", "3",
            "--seed", seed,
        ])
    };
    let a = args("7");
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, args("7").stdout);
    assert_ne!(a.stdout, args("8").stdout);
    let rows = records(&a.stdout);
    assert_eq!(rows.len(), 3 * 8 * 2);
    for sample in rows.chunks(16) {
        let first = &sample[1][3];
        assert!(sample.iter().filter(|r| &r[2] == "1").all(|r| &r[3] == first));
    }
}

#[test]
fn correlations_table() {
    let out = run(&["correlations", "--alpha", "2", "--step", "0.5"]);
    assert!(out.status.success());
    let rows = records(&out.stdout);
    assert_eq!(rows.len(), 3);
    let mid: f64 = rows[1][2].parse().unwrap();
    assert!((mid - 0.429).abs() < 5e-4);
}

#[test]
fn reproduce_exit_status_follows_the_primary_mode() {
    let out = run(&["reproduce", "table2", "--no-secondary"]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&["reproduce", "table1", "--mode", "exact", "--no-secondary"]);
    assert_eq!(out.status.code(), Some(5));
    let out = run(&["reproduce", "table1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(records(&out.stdout).iter().any(|r| &r[2] == "secondary" && &r[8] == "false"));
    assert_eq!(run(&["reproduce", "table9"]).status.code(), Some(3));
}
