use std::path::{Path, PathBuf};

use phibp::dataset::Panels;
use phibp::mcmc::PosteriorDraws;
use phibp_cli::dispatch;

/// Runs `phibp <args> --out <root>` and returns the single run directory it
/// created.
fn run(root: &Path, args: &[&str]) -> PathBuf {
    let mut argv = vec!["phibp".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.extend(["--out".into(), root.display().to_string()]);
    assert_eq!(dispatch(argv), 0, "phibp {args:?} failed");
    let dirs: Vec<PathBuf> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "expected one run directory in {}", root.display());
    dirs.into_iter().next().unwrap()
}

fn simulate(tmp: &Path) -> PathBuf {
    run(&tmp.join("sim"), &["simulate", "--seed", "11", "--regions", "3", "--theta0", "6"])
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn fit_retention_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let fit = run(
        &tmp.path().join("fit"),
        &[
            "fit", "--panels", sim.to_str().unwrap(), "--family", "GA", "--chains", "3", "--iters", "4000",
            "--burnin", "2000", "--thin", "10", "--seed", "7",
        ],
    );
    let draws = PosteriorDraws::read(&fit).unwrap();
    assert_eq!(draws.n_chains(), 3);
    assert!(draws.chains.iter().all(|c| c.draws.len() == 200));
    assert!(draws.iter().all(|d| d.alpha.iter().all(|&a| a == 0.0)));
}

#[test]
fn pipeline_outputs_and_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let fit = run(
        &tmp.path().join("fit"),
        &["fit", "--panels", sim.to_str().unwrap(), "--chains", "2", "--iters", "300", "--burnin", "100", "--thin", "4"],
    );
    let f = fit.to_str().unwrap();
    let panels = Panels::read(&sim).unwrap();
    let nj = panels.train.n_regions();

    let diag = run(&tmp.path().join("diag"), &["diagnose", "--fit", f]);
    let rows = read_csv(&diag.join("diagnostics.csv"));
    let alpha_rows: Vec<_> = rows.iter().filter(|r| r[0].starts_with("alpha[")).collect();
    assert_eq!(alpha_rows.len(), nj + 1);
    assert!(rows.iter().any(|r| r[0] == "alpha[0]"));
    assert!(rows.iter().any(|r| r[0] == "log_joint"));
    assert_eq!(rows.len(), 2 * (nj + 1) + 1);

    let pred = run(&tmp.path().join("pred"), &["predict", "--fit", f, "--zero-pairs-only", "--reps", "3"]);
    let rows = read_csv(&pred.join("predictions.csv"));
    let mut expected = Vec::new();
    for j in 0..nj {
        for l in 0..panels.train.n_species() {
            if panels.train.count(j, l) == 0 {
                expected.push((panels.train.regions()[j].clone(), panels.train.species()[l].clone()));
            }
        }
    }
    let got: Vec<_> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    assert_eq!(got, expected);
    for r in &rows {
        assert!(r[5].parse::<f64>().unwrap() > 0.0, "mean of {r:?}");
        assert!(r[9].parse::<f64>().unwrap() > 0.0, "p_any of {r:?}");
    }
    let ll = read_csv(&pred.join("test_loglik.csv"));
    assert_eq!(ll.len(), 2 * 50);
    assert!(ll.iter().all(|r| r[0] == "GG" && r[5].parse::<f64>().unwrap().is_finite()));

    let div = run(&tmp.path().join("div"), &["diversity", "--fit", f]);
    let alpha = read_csv(&div.join("alpha_diversity.csv"));
    assert_eq!(alpha.len(), nj);
    let beta = read_csv(&div.join("beta_diversity.csv"));
    assert_eq!(beta.len(), nj * nj);
    for r in beta.iter().filter(|r| r[0] == r[1]) {
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
    }

    for dir in [&diag, &pred, &div] {
        let m = manifest(dir);
        assert_eq!(m["inputs"].as_array().unwrap().len() >= 2, true);
        assert!(dir.join("config.json").is_file());
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let args = ["fit", "--panels", sim.to_str().unwrap(), "--chains", "2", "--iters", "200", "--burnin", "100", "--thin", "5", "--seed", "4"];
    let a = run(&tmp.path().join("a"), &args);
    let b = run(&tmp.path().join("b"), &args);
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["run_hash"], mb["run_hash"]);
    assert_eq!(ma["outputs"], mb["outputs"]);
    for f in ["draws.ndjson", "posterior.json", "posterior_summary.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ga_equals_gg_with_alpha_forced_to_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let p = sim.to_str().unwrap();
    let common = ["--chains", "2", "--iters", "300", "--burnin", "100", "--thin", "2", "--seed", "5"];
    let mut ga = vec!["fit", "--panels", p, "--family", "GA"];
    ga.extend(common);
    let mut gg = vec!["fit", "--panels", p, "--family", "GG", "--fix-alpha", "--init-alpha", "0"];
    gg.extend(common);
    let a = run(&tmp.path().join("ga"), &ga);
    let b = run(&tmp.path().join("gg"), &gg);
    assert_eq!(std::fs::read(a.join("draws.ndjson")).unwrap(), std::fs::read(b.join("draws.ndjson")).unwrap());
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let cfg = tmp.path().join("fit.json");
    let json = serde_json::json!({"panels": sim, "chains": 1, "n_iter": 120, "n_burnin": 20, "thin": 50, "seed": 3});
    std::fs::write(&cfg, json.to_string()).unwrap();
    let fit = run(&tmp.path().join("fit"), &["fit", "--config", cfg.to_str().unwrap(), "--thin", "10"]);
    let draws = PosteriorDraws::read(&fit).unwrap();
    assert_eq!(draws.n_chains(), 1);
    assert_eq!(draws.n_draws(), 10);
    let resolved: serde_json::Value = serde_json::from_slice(&std::fs::read(fit.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["thin"], 10);
    assert_eq!(resolved["seed"], 3);

    let again = run(&tmp.path().join("again"), &["fit", "--config", fit.join("config.json").to_str().unwrap()]);
    assert_eq!(
        std::fs::read(fit.join("draws.ndjson")).unwrap(),
        std::fs::read(again.join("draws.ndjson")).unwrap()
    );
}

#[test]
fn ingest_real_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("cases.csv");
    let mut text = String::from("Disease,County,Year,Sex,Cases,Population,Rate\n");
    for (d, c, y, n) in [
        ("Flu", "Alameda", 2003, 5),
        ("Flu", "Butte", 2016, 2),
        ("Mumps", "Butte", 2010, 1),
        ("Mumps", "Alameda", 2020, 3),
        ("Plague", "Alameda", 2019, 1),
        ("Huge", "Alameda", 2005, 5000),
    ] {
        text += &format!("{d},{c},{y},Total,{n},1000,0\n{d},{c},{y},Female,{n},500,0\n");
    }
    text += "Flu,California,2003,Total,5,1,0\n";
    text += "Flu,Alameda,notayear,Total,1,1,0\n";
    std::fs::write(&csv, text).unwrap();
    let out = run(&tmp.path().join("ingest"), &["ingest", "--csv", csv.to_str().unwrap()]);
    let panels = Panels::read(&out).unwrap();
    assert_eq!(panels.train.regions(), ["Alameda", "Butte"]);
    assert_eq!(panels.train.species(), ["Flu", "Mumps"]);
    assert_eq!(panels.test_only_species, ["Plague"]);
    assert_eq!(panels.train.counts(), [vec![5, 0], vec![0, 1]]);
    assert_eq!(panels.test.counts(), [vec![0, 3], vec![2, 0]]);
    assert_eq!(panels.test.total_exposure(0), 9.0);
    let warnings = std::fs::read_to_string(out.join("warnings.txt")).unwrap();
    assert!(warnings.contains("bad year"), "{warnings}");
}

#[test]
fn failures_return_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().display().to_string();
    assert_eq!(dispatch(["phibp", "fit", "--bogus"]), 2);
    assert_eq!(dispatch(["phibp", "nonsense"]), 2);
    assert_eq!(dispatch(["phibp", "fit", "--panels", "/definitely/missing", "--out", &out]), 1);
    assert_eq!(dispatch(["phibp", "diagnose", "--out", &out]), 1);
    assert_eq!(dispatch(["phibp", "ingest", "--csv", "/definitely/missing.csv", "--out", &out]), 1);
}

#[test]
fn data_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_phibp"))
        .args(["simulate", "--regions", "2", "--seed", "1"])
        .env("PHIBP_DATA_DIR", tmp.path())
        .status()
        .unwrap();
    assert!(status.success());
    let runs: Vec<_> = std::fs::read_dir(tmp.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
}

#[test]
fn oracle_suite_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run(tmp.path(), &["oracle", "--draws", "20000"]);
    let results: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("oracle.json")).unwrap()).unwrap();
    assert!(results.as_array().unwrap().iter().all(|r| r["passed"] == true), "{results}");
}
