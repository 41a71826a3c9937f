//! Shannon alpha-diversity and Bray–Curtis beta-diversity over the observed
//! catalogue, per posterior draw and summarized across pooled draws.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PhibpError, Result};
use crate::math::log_sum_exp;
use crate::panel::CountPanel;
use crate::prediction::LocalRateDraws;

/// Shannon entropy of the normalized rates.
pub fn shannon_alpha(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(PhibpError::Empty("no rates".into()));
    }
    if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(invalid("rates", "all rates must be positive and finite"));
    }
    Ok(shannon_from_log(&rates.iter().map(|r| r.ln()).collect::<Vec<_>>()))
}

/// Shannon entropy from log rates, clamped to `[0, ln φ]` against rounding.
pub fn shannon_from_log(ln_rates: &[f64]) -> f64 {
    let lse = log_sum_exp(ln_rates);
    let h: f64 = ln_rates
        .iter()
        .map(|&x| {
            let lp = x - lse;
            -lp.exp() * lp
        })
        .sum();
    h.clamp(0.0, (ln_rates.len() as f64).ln())
}

/// `Σ |a − b| / Σ (a + b)`.
pub fn bray_curtis(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PhibpError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.iter().chain(b).any(|r| !(*r >= 0.0 && r.is_finite())) {
        return Err(invalid("rates", "rates must be non-negative and finite"));
    }
    let (num, den) = a
        .iter()
        .zip(b)
        .fold((0.0, 0.0), |(n, d), (x, y)| (n + (x - y).abs(), d + (x + y)));
    if den == 0.0 {
        return Err(invalid("rates", "both rate vectors sum to zero"));
    }
    Ok(num / den)
}

/// Bray–Curtis from log rates, rescaled by a common factor before
/// exponentiating.
pub fn bray_curtis_from_log(a: &[f64], b: &[f64]) -> f64 {
    let shift = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let (num, den) = a.iter().zip(b).fold((0.0, 0.0), |(n, d), (x, y)| {
        let (x, y) = ((x - shift).exp(), (y - shift).exp());
        (n + (x - y).abs(), d + (x + y))
    });
    num / den
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawDiversity {
    /// `𝒟_j`.
    pub alpha: Vec<f64>,
    /// `ℬ_{j,v}`, symmetric with zero diagonal.
    pub beta: Vec<Vec<f64>>,
}

/// Posterior mean, variance and precision of one functional. Precision is
/// missing when the variance is zero or undefined (fewer than two draws).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub mean: f64,
    pub variance: Option<f64>,
    pub precision: Option<f64>,
    pub log_precision: Option<f64>,
}

impl EntrySummary {
    pub fn from_values(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let variance = (v.len() > 1).then(|| v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0));
        let precision = variance.filter(|&s| s > 0.0).map(|s| 1.0 / s);
        Self { mean, variance, precision, log_precision: precision.map(f64::ln) }
    }

    pub fn precision_missing(&self) -> bool {
        self.precision.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityDraws {
    pub regions: Vec<String>,
    pub n_species: usize,
    pub draws: Vec<DrawDiversity>,
    pub alpha: Vec<EntrySummary>,
    pub beta: Vec<Vec<EntrySummary>>,
}

pub fn draw_diversity(ln_rates: &[Vec<f64>]) -> DrawDiversity {
    let nj = ln_rates.len();
    let alpha = ln_rates.iter().map(|r| shannon_from_log(r)).collect();
    let mut beta = vec![vec![0.0; nj]; nj];
    for j in 0..nj {
        for v in j + 1..nj {
            let b = bray_curtis_from_log(&ln_rates[j], &ln_rates[v]);
            beta[j][v] = b;
            beta[v][j] = b;
        }
    }
    DrawDiversity { alpha, beta }
}

/// Per-draw diversities from materialized local rates, plus pooled summaries.
pub fn diversity_posterior(panel: &CountPanel, rates: &LocalRateDraws) -> Result<DiversityDraws> {
    if rates.n_draws() == 0 {
        return Err(PhibpError::Empty("no materialized rates".into()));
    }
    let nj = panel.n_regions();
    if rates.ln_rates[0].len() != nj {
        return Err(PhibpError::LengthMismatch { left: nj, right: rates.ln_rates[0].len() });
    }
    let draws: Vec<DrawDiversity> = rates.ln_rates.par_iter().map(|r| draw_diversity(r)).collect();
    let alpha = (0..nj)
        .map(|j| EntrySummary::from_values(&draws.iter().map(|d| d.alpha[j]).collect::<Vec<_>>()))
        .collect();
    let beta = (0..nj)
        .map(|j| {
            (0..nj)
                .map(|v| EntrySummary::from_values(&draws.iter().map(|d| d.beta[j][v]).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    Ok(DiversityDraws { regions: panel.regions().to_vec(), n_species: panel.n_species(), draws, alpha, beta })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl DiversityDraws {
    /// One row per region.
    pub fn write_alpha_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["region", "mean", "variance", "precision", "log_precision", "precision_missing"])?;
        for (r, s) in self.regions.iter().zip(&self.alpha) {
            w.write_record([
                r.clone(),
                s.mean.to_string(),
                opt(s.variance),
                opt(s.precision),
                opt(s.log_precision),
                s.precision_missing().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per ordered region pair, diagonal included.
    pub fn write_beta_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["region", "reference", "mean", "variance"])?;
        for (v, reference) in self.regions.iter().enumerate() {
            for (j, region) in self.regions.iter().enumerate() {
                let s = &self.beta[j][v];
                w.write_record([region.clone(), reference.clone(), s.mean.to_string(), opt(s.variance)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
