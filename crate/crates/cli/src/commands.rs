use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phibp::checks::run_suite;
use phibp::dataset::{self, build_panels, filter_rare, ingest_csv, ExposureMode, PanelSpec, Panels, FIRST_YEAR};
use phibp::diagnostics::DiagnosticReport;
use phibp::diversity::diversity_posterior;
use phibp::generative::{default_truncation, simulate_compound, simulate_naive, Hyperparams};
use phibp::levy::LevyParams;
use phibp::mcmc::{run_chains, PosteriorDraws};
use phibp::prediction::{expected_new_species, predict_counts, test_loglik, LocalRateDraws};

use crate::run::RunDir;
use crate::settings::*;
use crate::{Cli, Command};

fn data_dir(cli: &Cli) -> PathBuf {
    cli.data_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn out_root(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| data_dir(cli).join("runs"))
}

fn require(p: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.ok_or_else(|| anyhow::anyhow!("missing {flag}"))
}

pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = cli.config.as_deref();
    match &cli.command {
        Command::Ingest(a) => {
            let mut s: IngestSettings = load(cfg)?;
            if a.csv.is_some() {
                s.csv = a.csv.clone();
            }
            if let Some(t) = a.threshold {
                s.spec.rare_threshold = Some(t);
            }
            if a.no_threshold {
                s.spec.rare_threshold = None;
            }
            if let Some(y) = a.train_years {
                s.spec.train_years = y;
            }
            if let Some(y) = a.test_years {
                s.spec.test_years = y;
            }
            if let Some(m) = a.exposure {
                s.spec.exposure_mode = m;
            }
            if let Some(e) = a.per_year_exposure {
                s.spec.per_year_exposure = e;
            }
            if let Some(d) = a.delimiter {
                s.spec.delimiter = d;
            }
            if let Some(x) = &a.sex {
                s.spec.sex_filter = x.clone();
            }
            if s.csv.is_none() {
                s.csv = Some(data_dir(cli).join("chhs.csv"));
            }
            ingest(cli, s)
        }
        Command::Simulate(a) => {
            let mut s: SimulateSettings = load(cfg)?;
            macro_rules! set {
                ($($f:ident),*) => { $(if let Some(v) = a.$f { s.$f = v; })* };
            }
            set!(family, regions, samples, train_samples, theta0, alpha0, theta, alpha, exposure, method);
            if a.eps.is_some() {
                s.eps = a.eps;
            }
            if let Some(v) = cli.seed {
                s.seed = v;
            }
            simulate(cli, s)
        }
        Command::Fit(a) => {
            let mut s: FitSettings = load(cfg)?;
            if a.panels.is_some() {
                s.panels = a.panels.clone();
            }
            if let Some(f) = a.family {
                s.chain.base_family = f;
                s.chain.region_family = f;
            }
            if let Some(v) = a.chains {
                s.chains = v;
            }
            if let Some(v) = a.iters {
                s.chain.n_iter = v;
            }
            if let Some(v) = a.burnin {
                s.chain.n_burnin = v;
            }
            if let Some(v) = a.thin {
                s.chain.thin = v;
            }
            if a.fix_alpha {
                s.chain.fix_alpha = true;
            }
            if let Some(v) = a.init_alpha {
                s.chain.init_alpha_base = v;
                s.chain.init_alpha_region = v;
            }
            if let Some(v) = a.mh_sweeps {
                s.chain.mh_sweeps = v;
            }
            if let Some(v) = cli.seed {
                s.chain.seed = v;
            }
            if s.panels.is_none() {
                s.panels = Some(data_dir(cli).join("panels"));
            }
            fit(cli, s)
        }
        Command::Diagnose(a) => {
            let mut s: DiagnoseSettings = load(cfg)?;
            if a.fit.is_some() {
                s.fit = a.fit.clone();
            }
            diagnose(cli, s)
        }
        Command::Predict(a) => {
            let mut s: PredictSettings = load(cfg)?;
            if a.fit.is_some() {
                s.fit = a.fit.clone();
            }
            if a.panels.is_some() {
                s.panels = a.panels.clone();
            }
            if let Some(v) = a.reps {
                s.reps = v;
            }
            if a.test_exposure.is_some() {
                s.test_exposure = a.test_exposure;
            }
            if a.zero_pairs_only {
                s.zero_pairs_only = true;
            }
            if a.no_novelty {
                s.include_novelty = false;
            }
            if let Some(v) = cli.seed {
                s.seed = v;
            }
            predict(cli, s)
        }
        Command::Diversity(a) => {
            let mut s: DiversitySettings = load(cfg)?;
            if a.fit.is_some() {
                s.fit = a.fit.clone();
            }
            if let Some(v) = cli.seed {
                s.seed = v;
            }
            diversity(cli, s)
        }
        Command::Oracle(a) => {
            let mut s: OracleSettings = load(cfg)?;
            if let Some(v) = a.draws {
                s.draws = v;
            }
            if let Some(v) = cli.seed {
                s.seed = v;
            }
            oracle(cli, s)
        }
    }
}

fn done<S: serde::Serialize>(run: RunDir, settings: &S) -> Result<i32> {
    let path = run.finish(settings)?;
    println!("run directory: {}", path.display());
    Ok(0)
}

fn ingest(cli: &Cli, s: IngestSettings) -> Result<i32> {
    let csv = s.csv.clone().expect("defaulted");
    if !csv.is_file() {
        bail!("input CSV {} not found (pass --csv or set PHIBP_DATA_DIR)", csv.display());
    }
    let ingested = ingest_csv(&csv, &s.spec).with_context(|| format!("ingesting {}", csv.display()))?;
    for w in &ingested.warnings {
        log::warn!("{w}");
    }
    let records = match s.spec.rare_threshold {
        Some(t) => filter_rare(&ingested.records, t),
        None => ingested.records,
    };
    let panels = build_panels(&records, &s.spec)?;
    let mut run = RunDir::create(&out_root(cli), "ingest")?;
    run.add_input(&csv)?;
    panels.write(&run.path, &s.spec)?;
    std::fs::write(run.file("warnings.txt"), ingested.warnings.join("\n"))?;
    println!(
        "{} diseases, {} counties after filtering; catalogue {} species, {} test-only",
        dataset::disease_count(&records),
        dataset::county_count(&records),
        panels.train.n_species(),
        panels.test_only_species.len()
    );
    done(run, &s)
}

fn simulate(cli: &Cli, s: SimulateSettings) -> Result<i32> {
    s.validate()?;
    let base = LevyParams::new(s.theta0, s.alpha0, s.family)?;
    let region = LevyParams::new(s.theta, s.alpha, s.family)?;
    let hyper = Hyperparams::symmetric(base, region, s.regions, vec![s.exposure; s.samples])?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let panel = match s.method {
        SimMethod::Compound => simulate_compound(&hyper, &mut rng)?,
        SimMethod::Naive => {
            let eps = s.eps.unwrap_or_else(|| default_truncation(&hyper));
            simulate_naive(&hyper, eps, &mut rng)?
        }
    };
    let run = RunDir::create(&out_root(cli), "simulate")?;
    panel.write_csv(&run.file("synthetic.csv"), FIRST_YEAR)?;
    panel.write_sidecar(&run.file("truth.json"))?;
    let last_train = FIRST_YEAR + s.train_samples as i32 - 1;
    let spec = PanelSpec {
        train_years: (FIRST_YEAR, last_train),
        test_years: (last_train + 1, FIRST_YEAR + s.samples as i32 - 1),
        rare_threshold: None,
        exposure_mode: ExposureMode::Unit,
        per_year_exposure: s.exposure,
        ..PanelSpec::default()
    };
    let panels = build_panels(&panel.to_records(FIRST_YEAR), &spec)
        .context("the simulated panel has no training-period observations")?;
    panels.write(&run.path, &spec)?;
    println!(
        "{} species over {} regions ({} in training catalogue), {} counts",
        panel.n_species(),
        panel.n_regions(),
        panels.train.n_species(),
        panel.grand_total()
    );
    done(run, &s)
}

fn panels_file(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("panels.json")
    } else {
        p.to_path_buf()
    }
}

fn fit(cli: &Cli, s: FitSettings) -> Result<i32> {
    let src = panels_file(s.panels.as_deref().expect("defaulted"));
    let panels = Panels::read(&src).with_context(|| format!("reading panels from {}", src.display()))?;
    if s.chains == 0 {
        bail!("--chains must be at least 1");
    }
    s.chain.validate()?;
    let draws = run_chains(&panels.train, &s.chain, s.chains)?;
    let mut run = RunDir::create(&out_root(cli), "fit")?;
    run.add_input(&src)?;
    draws.write(&run.path)?;
    std::fs::copy(&src, run.file("panels.json"))?;
    println!(
        "{} family, {} chains × {} retained draws",
        s.chain.region_family,
        draws.n_chains(),
        s.chain.retained_per_chain()
    );
    done(run, &s)
}

fn read_fit(run: &mut RunDir, fit: &Path) -> Result<PosteriorDraws> {
    for f in ["draws.ndjson", "posterior.json"] {
        run.add_input(&fit.join(f))?;
    }
    PosteriorDraws::read(fit).with_context(|| format!("reading fit run {}", fit.display()))
}

fn diagnose(cli: &Cli, s: DiagnoseSettings) -> Result<i32> {
    let fit = require(s.fit.clone(), "--fit")?;
    let mut run = RunDir::create(&out_root(cli), "diagnose")?;
    let draws = read_fit(&mut run, &fit)?;
    let report = DiagnosticReport::new(&draws)?;
    report.write_csv(&run.file("diagnostics.csv"))?;
    println!("{:<32} {:>12} {:>10} {:>8} {:>9}", "scalar", "mean", "sd", "rhat", "ess");
    let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
    for r in &report.rows {
        println!("{:<32} {:>12.4} {:>10.4} {:>8} {:>9}", r.scalar, r.mean, r.sd, fmt(r.rhat, 3), fmt(r.ess, 0));
    }
    if let Some(m) = report.max_rhat() {
        if m > 1.05 {
            log::warn!("max R-hat {m:.3} exceeds 1.05");
        }
    }
    done(run, &s)
}

fn predict(cli: &Cli, s: PredictSettings) -> Result<i32> {
    let fit = require(s.fit.clone(), "--fit")?;
    let mut run = RunDir::create(&out_root(cli), "predict")?;
    let draws = read_fit(&mut run, &fit)?;
    let src = panels_file(&s.panels.clone().unwrap_or_else(|| fit.clone()));
    run.add_input(&src)?;
    let panels = Panels::read(&src).with_context(|| format!("reading panels from {}", src.display()))?;
    if panels.train != draws.panel {
        bail!("panels in {} do not match the fitted training panel", src.display());
    }
    let nj = draws.panel.n_regions();
    let exposure = match s.test_exposure {
        Some(g) => vec![g; nj],
        None => panels.test.total_exposures(),
    };
    let rates = LocalRateDraws::materialize(&draws, s.seed)?;
    let mut summary = predict_counts(&draws, &rates, &exposure, s.reps, s.seed)?;
    summary.attach_test_counts(&panels.train, &panels.test)?;
    summary.write_csv(&run.file("predictions.csv"), s.zero_pairs_only)?;
    let ll = test_loglik(&draws, &rates, &panels.test, panels.test_only_species.len() as u64, s.include_novelty)?;
    ll.write_csv(&run.file("test_loglik.csv"))?;
    let new_species = expected_new_species(&draws, &exposure)?;
    let zero: Vec<_> = summary.zero_pairs().collect();
    let report = serde_json::json!({
        "family": ll.family,
        "draws": draws.n_draws(),
        "mean_test_loglik": ll.mean(),
        "novel_species": ll.novel_species,
        "include_novelty": ll.include_novelty,
        "expected_new_species": new_species.iter().sum::<f64>() / new_species.len() as f64,
        "zero_pairs": zero.len(),
        "min_zero_pair_p_any": zero.iter().map(|r| r.p_any).fold(f64::INFINITY, f64::min),
    });
    std::fs::write(run.file("summary.json"), serde_json::to_vec_pretty(&report)?)?;
    println!(
        "mean test log-likelihood {:.3}; {} zero pairs; expected new species {:.3}",
        ll.mean(),
        zero.len(),
        report["expected_new_species"].as_f64().unwrap_or(f64::NAN)
    );
    done(run, &s)
}

fn diversity(cli: &Cli, s: DiversitySettings) -> Result<i32> {
    let fit = require(s.fit.clone(), "--fit")?;
    let mut run = RunDir::create(&out_root(cli), "diversity")?;
    let draws = read_fit(&mut run, &fit)?;
    let rates = LocalRateDraws::materialize(&draws, s.seed)?;
    let d = diversity_posterior(&draws.panel, &rates)?;
    d.write_alpha_csv(&run.file("alpha_diversity.csv"))?;
    d.write_beta_csv(&run.file("beta_diversity.csv"))?;
    println!("{} regions × {} draws", d.regions.len(), d.draws.len());
    done(run, &s)
}

fn oracle(cli: &Cli, s: OracleSettings) -> Result<i32> {
    let results = run_suite(s.draws, s.seed)?;
    let run = RunDir::create(&out_root(cli), "oracle")?;
    std::fs::write(run.file("oracle.json"), serde_json::to_vec_pretty(&results)?)?;
    let mut failed = 0;
    for r in &results {
        println!("{:<26} {:<4} {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
        failed += !r.passed as usize;
    }
    done(run, &s)?;
    Ok(if failed == 0 { 0 } else { 1 })
}
