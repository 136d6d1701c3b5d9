use std::path::Path;
use std::process::{Command, Output};

fn ogp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ogp"))
        .args(args)
        .env("OGP_OUT_DIR", dir)
        .output()
        .expect("run ogp")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn thresholds_report_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ogp(dir.path(), &["thresholds", "--which", "f3", "--alpha", "1.667"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!((v["argmin"].as_f64().unwrap() - 0.978).abs() <= 0.003);
    assert_eq!(
        files(dir.path()),
        [
            "thresholds-f3_alpha1.667_seed0.config.json",
            "thresholds-f3_alpha1.667_seed0.csv",
            "thresholds-f3_alpha1.667_seed0.summary.json"
        ]
    );
    let csv = std::fs::read_to_string(dir.path().join("thresholds-f3_alpha1.667_seed0.csv")).unwrap();
    assert!(csv.starts_with("abscissa,value,counting_part,probability_part,prob_error\n"));
    assert_eq!(csv.lines().count(), 101);

    assert_eq!(ogp(dir.path(), &["thresholds", "--which", "f3", "--alpha", "1.0"]).status.code(), Some(2));
    assert_eq!(ogp(dir.path(), &["thresholds", "--which", "f3"]).status.code(), Some(64));
    assert_eq!(ogp(dir.path(), &["thresholds", "--which", "f9", "--alpha", "1"]).status.code(), Some(64));
    assert_eq!(ogp(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn mvn_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let q = json(&ogp(dir.path(), &["mvn", "--quadrant", "--rho", "0.5"]));
    assert!((q["value"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let b = ogp(dir.path(), &["mvn", "--box", "--m", "3", "--beta", "0.978", "--kappa", "1"]);
    let b = json(&b);
    assert!((b["value"].as_f64().unwrap() - 0.6205).abs() < 1e-3);
    assert!(b["abs_error_estimate"].as_f64().unwrap() < 1e-8);
    let neg = json(&ogp(dir.path(), &["mvn", "--quadrant", "--rho", "-0.5"]));
    assert!((neg["value"].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-15);
    assert_eq!(ogp(dir.path(), &["mvn", "--box", "--m", "2", "--beta", "1.0", "--kappa", "1"]).status.code(), Some(65));
    assert_eq!(ogp(dir.path(), &["mvn", "--quadrant", "--rho", "1.5"]).status.code(), Some(65));
    assert_eq!(ogp(dir.path(), &["mvn", "--box", "--m", "2"]).status.code(), Some(64));
    assert_eq!(ogp(dir.path(), &["mvn", "--quadrant", "--box", "--rho", "0"]).status.code(), Some(64));
}

#[test]
fn solve_kim_roche_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = ogp(dir.path(), &["solve", "--algo", "kim-roche", "--n", "5000", "--alpha", "0.001", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let rounds = v["trace"]["rounds"].as_array().unwrap();
    assert!(!rounds.is_empty());
    assert!(rounds.iter().all(|r| r["violated_rows_after"].is_u64()));
    let total: u64 = rounds.iter().map(|r| r["n_j"].as_u64().unwrap()).sum();
    assert_eq!(total, 5000);
    assert_eq!(v["sigma"].as_str().unwrap().len(), 5000);
    assert!(dir.path().join("solve-kim-roche_n5000_alpha0.001_kappa1_seed3.config.json").exists());
}

#[test]
fn solve_exhaustive_cap_and_negative() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ogp(dir.path(), &["solve", "--algo", "exhaustive", "--n", "30", "--alpha", "0.5"]).status.code(), Some(66));
    let out = ogp(dir.path(), &["solve", "--algo", "exhaustive", "--n", "12", "--alpha", "0.5", "--kappa", "0.5"]);
    let v = json(&out);
    match out.status.code() {
        Some(0) => assert_eq!(v["feasible"], true),
        Some(2) => assert_eq!(v["found"], false),
        c => panic!("unexpected exit {c:?}"),
    }
    let none = ogp(dir.path(), &["solve", "--algo", "exhaustive", "--n", "8", "--alpha", "4", "--kappa", "0.01"]);
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn solve_loads_saved_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let m = ogp_core::Disorder::sample(10, 0.5, ogp_core::disorder::Distribution::Gaussian, 4).unwrap();
    let path = dir.path().join("m.pdm");
    m.save(&path).unwrap();
    let out = ogp(dir.path(), &["solve", "--algo", "majority", "--n", "10", "--alpha", "0.5", "--matrix", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let want = ogp_core::solvers::majority_solve(&m).to_string();
    assert_eq!(json(&out)["sigma"].as_str().unwrap(), want);
    let wrong = ogp(dir.path(), &["solve", "--algo", "majority", "--n", "11", "--alpha", "0.5", "--matrix", path.to_str().unwrap()]);
    assert_eq!(wrong.status.code(), Some(65));
}

#[test]
fn trajectory_csv_starts_at_unity() {
    let dir = tempfile::tempdir().unwrap();
    let out = ogp(dir.path(), &["experiment", "overlap-trajectory", "--T", "4", "--Q", "10", "--solver", "majority"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("overlap-trajectory_n1000_alpha0.01_kappa1_seed0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("i,j,k,tau,overlap"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4 * 4 * 11);
    for r in rows.iter().filter(|r| r[2] == "0" || r[0] == r[1]) {
        assert_eq!(r[4], "1.0");
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "17", "experiment", "majority-stability", "--n", "500", "--k", "11", "--tau", "0.2", "--trials", "12"];
    assert_eq!(ogp(a.path(), &args).status.code(), Some(0));
    let mut threaded = vec!["--threads", "1"];
    threaded.extend_from_slice(&args);
    assert_eq!(ogp(b.path(), &threaded).status.code(), Some(0));
    let name = "majority-stability_n500_k11_tau0.2_seed17.csv";
    let x = std::fs::read(a.path().join(name)).unwrap();
    assert_eq!(x, std::fs::read(b.path().join(name)).unwrap());
    let other = tempfile::tempdir().unwrap();
    let mut reseeded = args;
    reseeded[1] = "18";
    ogp(other.path(), &reseeded);
    let y = std::fs::read(other.path().join("majority-stability_n500_k11_tau0.2_seed18.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn config_records_resolved_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = ogp(dir.path(), &["--seed", "5", "experiment", "online-census", "--trials", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let cfg: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("online-census_n12_alpha0.5_kappa1_seed5.config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(cfg["command"], "experiment online-census");
    assert_eq!(cfg["seed"], 5);
    assert_eq!(cfg["params"]["delta"], 0.25);
    assert_eq!(cfg["params"]["mode"], "exhaustive");
    assert_eq!(cfg["format"], "csv");
    let v = json(&out);
    let w = &v["wilson_95"];
    assert!(w["lo"].as_f64().unwrap() <= w["estimate"].as_f64().unwrap());
}

#[test]
fn experiment_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cap = ogp(dir.path(), &["experiment", "online-census", "--n", "20", "--trials", "1"]);
    assert_eq!(cap.status.code(), Some(66));
    let empty = ogp(dir.path(), &["experiment", "online-census", "--n", "12", "--delta", "0.05", "--trials", "1"]);
    assert_eq!(empty.status.code(), Some(65));
    let beta = ogp(dir.path(), &["experiment", "universality", "--n-list", "10", "--m", "2", "--beta", "0.3", "--trials", "10"]);
    assert_eq!(beta.status.code(), Some(65));
}

#[test]
fn json_format_and_small_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let out = ogp(dir.path(), &["--format", "json", "experiment", "tuple-count", "--n-list", "6,8", "--m", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let rows: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("tuple-count_n8_alpha0.5_kappa1_seed0.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    let v = json(&out);
    for c in v["counts"].as_array().unwrap() {
        let forbidden: u128 = c["forbidden"].as_str().unwrap().parse().unwrap();
        let all: u128 = c["overlap_only"].as_str().unwrap().parse().unwrap();
        assert!(forbidden <= all);
    }
    let nec = json(&ogp(dir.path(), &["experiment", "necessity", "--kappa", "0.001"]));
    assert_eq!(nec["all_above_reference"], true);
    let fe = ogp(dir.path(), &["experiment", "free-energy", "--kappa", "0.01"]);
    assert_eq!(fe.status.code(), Some(0));
    assert!(json(&fe)["witness"]["value"].as_f64().unwrap() < 0.0);
    let sh = json(&ogp(dir.path(), &["experiment", "stable-hardness", "--eta", "0.1", "--alpha", "0.01", "--m", "2"]));
    assert!((sh["c"].as_f64().unwrap() - 0.01 / 1600.0).abs() < 1e-18);
    let uni = json(&ogp(dir.path(), &["experiment", "universality", "--n-list", "100,400", "--trials", "2000"]));
    assert_eq!(uni["rows"].as_array().unwrap().len(), 2);
    let kr = ogp(dir.path(), &["experiment", "kim-roche-stability", "--n", "2000", "--alpha", "0.005", "--trials", "3"]);
    assert_eq!(kr.status.code(), Some(0));
}
