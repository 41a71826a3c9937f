//! Retained posterior draws and their on-disk form.
//!
//! A run directory holds `draws.ndjson` (one [`Draw`] per line),
//! `posterior.json` (config, panel, per-chain acceptance) and
//! `posterior_summary.csv` (pooled mean and sd per scalar).

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hyper::Acceptance;
use super::ChainConfig;
use crate::error::{PhibpError, Result};
use crate::levy::LevyParams;
use crate::panel::CountPanel;

/// One retained iteration. Level 0 of `theta`/`alpha` is the base measure,
/// level `j + 1` is region `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub ln_h: Vec<f64>,
    /// `x[ℓ][j] = X_{j,ℓ}`.
    pub x: Vec<Vec<u64>>,
    pub log_joint: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub chain: usize,
    pub draws: Vec<Draw>,
    pub acceptance: Acceptance,
    pub burnin_acceptance: Acceptance,
    pub step_theta: Vec<f64>,
    pub step_alpha: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub config: ChainConfig,
    pub panel: CountPanel,
    pub chains: Vec<ChainDraws>,
}

/// A monitored scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scalar {
    Theta(usize),
    Alpha(usize),
    LogJoint,
}

impl Scalar {
    pub fn of(&self, d: &Draw) -> f64 {
        match *self {
            Scalar::Theta(level) => d.theta[level],
            Scalar::Alpha(level) => d.alpha[level],
            Scalar::LogJoint => d.log_joint,
        }
    }

    pub fn name(&self, panel: &CountPanel) -> String {
        let level = |l: usize| if l == 0 { "0".to_string() } else { panel.regions()[l - 1].clone() };
        match *self {
            Scalar::Theta(l) => format!("theta[{}]", level(l)),
            Scalar::Alpha(l) => format!("alpha[{}]", level(l)),
            Scalar::LogJoint => "log_joint".into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ChainMeta {
    chain: usize,
    acceptance: Acceptance,
    burnin_acceptance: Acceptance,
    step_theta: Vec<f64>,
    step_alpha: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ChainConfig,
    panel: CountPanel,
    chains: Vec<ChainMeta>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    /// All draws, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    pub fn n_levels(&self) -> usize {
        self.panel.n_regions() + 1
    }

    /// Base and regional Lévy parameters of one draw.
    pub fn params(&self, d: &Draw) -> Result<(LevyParams, Vec<LevyParams>)> {
        let base = LevyParams::new(d.theta[0], d.alpha[0], self.config.base_family)?;
        let regions = (1..self.n_levels())
            .map(|l| LevyParams::new(d.theta[l], d.alpha[l], self.config.region_family))
            .collect::<Result<Vec<_>>>()?;
        Ok((base, regions))
    }

    /// θ and α at every level, then the log density.
    pub fn scalars(&self) -> Vec<Scalar> {
        let mut out = Vec::new();
        for l in 0..self.n_levels() {
            out.push(Scalar::Theta(l));
        }
        for l in 0..self.n_levels() {
            out.push(Scalar::Alpha(l));
        }
        out.push(Scalar::LogJoint);
        out
    }

    /// The scalar's trace in each chain.
    pub fn trace(&self, s: Scalar) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.draws.iter().map(|d| s.of(d)).collect()).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(std::fs::File::create(dir.join("draws.ndjson"))?);
        for d in self.iter() {
            serde_json::to_writer(&mut w, d)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let meta = Meta {
            config: self.config.clone(),
            panel: self.panel.clone(),
            chains: self
                .chains
                .iter()
                .map(|c| ChainMeta {
                    chain: c.chain,
                    acceptance: c.acceptance.clone(),
                    burnin_acceptance: c.burnin_acceptance.clone(),
                    step_theta: c.step_theta.clone(),
                    step_alpha: c.step_alpha.clone(),
                })
                .collect(),
        };
        std::fs::write(dir.join("posterior.json"), serde_json::to_vec_pretty(&meta)?)?;
        self.write_summary(&dir.join("posterior_summary.csv"))
    }

    fn write_summary(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scalar", "mean", "sd"])?;
        for s in self.scalars() {
            let v: Vec<f64> = self.trace(s).into_iter().flatten().collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            w.write_record([s.name(&self.panel), mean.to_string(), var.sqrt().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_slice(&std::fs::read(dir.join("posterior.json"))?)?;
        let mut chains: Vec<ChainDraws> = meta
            .chains
            .into_iter()
            .map(|m| ChainDraws {
                chain: m.chain,
                draws: Vec::new(),
                acceptance: m.acceptance,
                burnin_acceptance: m.burnin_acceptance,
                step_theta: m.step_theta,
                step_alpha: m.step_alpha,
            })
            .collect();
        let f = std::io::BufReader::new(std::fs::File::open(dir.join("draws.ndjson"))?);
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: Draw = serde_json::from_str(&line)?;
            let c = chains.iter_mut().find(|c| c.chain == d.chain).ok_or_else(|| {
                PhibpError::Schema(format!("draws.ndjson line {}: unknown chain {}", i + 1, d.chain))
            })?;
            c.draws.push(d);
        }
        Ok(Self { config: meta.config, panel: meta.panel, chains })
    }
}
