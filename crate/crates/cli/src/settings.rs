//! Resolved per-subcommand settings.
//!
//! Each struct is the flat JSON config schema for its subcommand: a config
//! file may set any subset of fields, and command-line flags override them.
//! The fully resolved struct is saved as `config.json` in every run
//! directory and can be passed back with `--config`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use phibp::dataset::PanelSpec;
use phibp::levy::Family;
use phibp::mcmc::ChainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSettings {
    pub csv: Option<PathBuf>,
    #[serde(flatten)]
    pub spec: PanelSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SimMethod {
    Compound,
    Naive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSettings {
    pub seed: u64,
    pub family: Family,
    pub regions: usize,
    /// Samples (years) per region; the first `train_samples` form the training block.
    pub samples: usize,
    pub train_samples: usize,
    pub theta0: f64,
    pub alpha0: f64,
    pub theta: f64,
    pub alpha: f64,
    /// Exposure of every sample.
    pub exposure: f64,
    pub method: SimMethod,
    /// Naive-path truncation level; chosen automatically when absent.
    pub eps: Option<f64>,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            family: Family::GG,
            regions: 5,
            samples: 23,
            train_samples: 14,
            theta0: 10.0,
            alpha0: 0.2,
            theta: 1.0,
            alpha: 0.3,
            exposure: 1.0,
            method: SimMethod::Compound,
            eps: None,
        }
    }
}

impl SimulateSettings {
    pub fn validate(&self) -> Result<()> {
        let max = (phibp::dataset::LAST_YEAR - phibp::dataset::FIRST_YEAR + 1) as usize;
        if self.regions == 0 {
            bail!("--regions must be at least 1");
        }
        if self.samples > max {
            bail!("--samples must be at most {max} (one per calendar year)");
        }
        if self.train_samples == 0 || self.train_samples >= self.samples {
            bail!("--train-samples must be in 1..{} so both blocks are non-empty", self.samples);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub panels: Option<PathBuf>,
    pub chains: usize,
    #[serde(flatten)]
    pub chain: ChainConfig,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { panels: None, chains: 3, chain: ChainConfig::default() }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseSettings {
    pub fit: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictSettings {
    pub fit: Option<PathBuf>,
    /// Panels with the held-out block; defaults to the copy in the fit run.
    pub panels: Option<PathBuf>,
    pub seed: u64,
    /// Poisson replicates per draw for the predictive intervals.
    pub reps: usize,
    /// Common test exposure per region; defaults to the held-out panel's.
    pub test_exposure: Option<f64>,
    pub zero_pairs_only: bool,
    pub include_novelty: bool,
}

impl Default for PredictSettings {
    fn default() -> Self {
        Self {
            fit: None,
            panels: None,
            seed: 0,
            reps: 10,
            test_exposure: None,
            zero_pairs_only: false,
            include_novelty: true,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DiversitySettings {
    pub fit: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSettings {
    pub seed: u64,
    /// Sampler draws per MtP goodness-of-fit test.
    pub draws: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { seed: 7, draws: 100_000 }
    }
}

/// Parses `A-B` or `A:B` into an inclusive year range.
pub fn parse_years(s: &str) -> std::result::Result<(i32, i32), String> {
    let (a, b) = s
        .split_once(['-', ':'])
        .ok_or_else(|| format!("expected a year range like 2001-2014, got `{s}`"))?;
    let a = a.trim().parse().map_err(|_| format!("bad year `{a}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad year `{b}`"))?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_settings_json_is_flat() {
        let s: FitSettings = serde_json::from_str(r#"{"chains": 2, "n_iter": 100, "region_family": "GA"}"#).unwrap();
        assert_eq!(s.chains, 2);
        assert_eq!(s.chain.n_iter, 100);
        assert_eq!(s.chain.region_family, Family::GA);
        assert_eq!(s.chain.thin, 10);
        let back: FitSettings = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back.chain, s.chain);
    }

    #[test]
    fn ingest_settings_flatten_spec() {
        let s: IngestSettings = serde_json::from_str(r#"{"rare_threshold": null, "train_years": [2001, 2010]}"#).unwrap();
        assert_eq!(s.spec.rare_threshold, None);
        assert_eq!(s.spec.train_years, (2001, 2010));
        assert_eq!(s.spec.test_years, (2015, 2023));
    }

    #[test]
    fn year_ranges() {
        assert_eq!(parse_years("2001-2014"), Ok((2001, 2014)));
        assert_eq!(parse_years("2015:2023"), Ok((2015, 2023)));
        assert!(parse_years("2015").is_err());
    }
}
