//! Posterior predictive summaries, held-out scoring and new-species counts.
//!
//! Every draw's local rates `σ̃_{j,ℓ}` are materialized once by
//! [`LocalRateDraws::materialize`] and reused by both prediction and
//! diversity. Each draw gets its own RNG stream so results do not depend on
//! the thread count.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::quantile_sorted;
use crate::error::{invalid, PhibpError, Result};
use crate::levy::LevyParams;
use crate::math::{ln_poisson_pmf, ln_poisson_pmf_log_mean, sample_poisson};
use crate::mcmc::rates::local_rates;
use crate::mcmc::PosteriorDraws;
use crate::panel::CountPanel;

const REPLICATE_STREAMS: u64 = 1 << 40;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `ln σ̃[d][j][ℓ]` for every pooled draw `d` (chain-major order).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalRateDraws {
    pub ln_rates: Vec<Vec<Vec<f64>>>,
}

impl LocalRateDraws {
    pub fn materialize(draws: &PosteriorDraws, seed: u64) -> Result<Self> {
        let all: Vec<_> = draws.iter().collect();
        if all.is_empty() {
            return Err(PhibpError::Empty("no posterior draws".into()));
        }
        let exposure = draws.panel.total_exposures();
        let ln_rates = all
            .par_iter()
            .enumerate()
            .map(|(i, d)| {
                let (_, regions) = draws.params(d)?;
                let mut rng = stream_rng(seed, i as u64);
                Ok(local_rates(&regions, &exposure, &d.ln_h, &d.x, &draws.panel, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ln_rates })
    }

    pub fn n_draws(&self) -> usize {
        self.ln_rates.len()
    }
}

/// Predictive summary of one (region, species) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRow {
    pub region: String,
    pub species: String,
    pub train_count: u64,
    pub zero_pair: bool,
    pub test_exposure: f64,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
    pub p_any: f64,
    pub log_p_any: f64,
    pub test_count: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub rows: Vec<PredictiveRow>,
}

/// Predictive law of the count in fresh exposure `test_exposure[j]`.
///
/// Means, sds and `P(count ≥ 1)` are averaged analytically over the Poisson
/// layer; the 90% interval comes from `n_reps` Poisson replicates per draw.
pub fn predict_counts(
    draws: &PosteriorDraws,
    rates: &LocalRateDraws,
    test_exposure: &[f64],
    n_reps: usize,
    seed: u64,
) -> Result<PredictiveSummary> {
    let panel = &draws.panel;
    let (nj, nl) = (panel.n_regions(), panel.n_species());
    if test_exposure.len() != nj {
        return Err(PhibpError::LengthMismatch { left: nj, right: test_exposure.len() });
    }
    if test_exposure.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
        return Err(invalid("test_exposure", "must be finite and non-negative"));
    }
    if n_reps == 0 {
        return Err(invalid("n_reps", "need at least one replicate"));
    }
    if rates.n_draws() == 0 {
        return Err(PhibpError::Empty("no materialized rates".into()));
    }
    let d = rates.n_draws() as f64;
    let rows = (0..nj * nl)
        .into_par_iter()
        .map(|cell| {
            let (j, l) = (cell / nl, cell % nl);
            let g = test_exposure[j];
            let mus: Vec<f64> = rates.ln_rates.iter().map(|r| g * r[j][l].exp()).collect();
            let mean = mus.iter().sum::<f64>() / d;
            let var_mu = mus.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / d;
            let ln_any: Vec<f64> = rates
                .ln_rates
                .iter()
                .map(|r| ln_one_minus_exp_neg(g, r[j][l]))
                .collect();
            let log_p_any = crate::math::log_sum_exp(&ln_any) - d.ln();
            let mut rng = stream_rng(seed, REPLICATE_STREAMS + cell as u64);
            let mut reps: Vec<f64> = Vec::with_capacity(mus.len() * n_reps);
            for &m in &mus {
                for _ in 0..n_reps {
                    reps.push(sample_poisson(m, &mut rng) as f64);
                }
            }
            reps.sort_by(f64::total_cmp);
            let train = panel.count(j, l);
            PredictiveRow {
                region: panel.regions()[j].clone(),
                species: panel.species()[l].clone(),
                train_count: train,
                zero_pair: train == 0,
                test_exposure: g,
                mean,
                sd: (mean + var_mu).sqrt(),
                q05: quantile_sorted(&reps, 0.05),
                q95: quantile_sorted(&reps, 0.95),
                p_any: log_p_any.exp(),
                log_p_any,
                test_count: None,
            }
        })
        .collect();
    Ok(PredictiveSummary { rows })
}

/// `ln(1 − exp(−γ σ))` given `ln σ`.
fn ln_one_minus_exp_neg(g: f64, ln_sigma: f64) -> f64 {
    let x = g.ln() + ln_sigma;
    if x < -30.0 {
        // 1 − e^{−y} = y (1 − y/2 + …)
        x + (-0.5 * x.exp()).ln_1p()
    } else {
        (-(-x.exp()).exp_m1()).ln()
    }
}

impl PredictiveSummary {
    pub fn zero_pairs(&self) -> impl Iterator<Item = &PredictiveRow> {
        self.rows.iter().filter(|r| r.zero_pair)
    }

    /// Fills `test_count` from an aligned held-out panel.
    pub fn attach_test_counts(&mut self, train: &CountPanel, test: &CountPanel) -> Result<()> {
        train.check_aligned(test)?;
        let nl = train.n_species();
        for (cell, row) in self.rows.iter_mut().enumerate() {
            row.test_count = Some(test.count(cell / nl, cell % nl));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path, zero_pairs_only: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "region", "species", "train_count", "zero_pair", "test_exposure", "mean", "sd", "q05", "q95",
            "p_any", "log_p_any", "test_count",
        ])?;
        for r in self.rows.iter().filter(|r| !zero_pairs_only || r.zero_pair) {
            w.write_record([
                r.region.clone(),
                r.species.clone(),
                r.train_count.to_string(),
                r.zero_pair.to_string(),
                r.test_exposure.to_string(),
                r.mean.to_string(),
                r.sd.to_string(),
                r.q05.to_string(),
                r.q95.to_string(),
                r.p_any.to_string(),
                r.log_p_any.to_string(),
                r.test_count.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `T = Σ_j ψ_j(Γ_j)`.
pub fn total_psi(regions: &[LevyParams], exposure: &[f64]) -> f64 {
    regions.iter().zip(exposure).map(|(p, &g)| p.psi(g)).sum()
}

/// `Ψ_0(T + ΔT) − Ψ_0(T)` with `ΔT = Σ_j ψ_j(Γ_j + Δγ_j) − ψ_j(Γ_j)`.
pub fn expected_new_species_at(
    base: &LevyParams,
    regions: &[LevyParams],
    exposure: &[f64],
    additional: &[f64],
) -> f64 {
    let t = total_psi(regions, exposure);
    let dt: f64 = regions
        .iter()
        .zip(exposure.iter().zip(additional))
        .map(|(p, (&g, &dg))| p.psi(g + dg) - p.psi(g))
        .sum();
    base.psi(t + dt) - base.psi(t)
}

/// [`expected_new_species_at`] evaluated at every draw.
pub fn expected_new_species(draws: &PosteriorDraws, additional: &[f64]) -> Result<Vec<f64>> {
    let nj = draws.panel.n_regions();
    if additional.len() != nj {
        return Err(PhibpError::LengthMismatch { left: nj, right: additional.len() });
    }
    if additional.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
        return Err(invalid("additional_exposure", "must be finite and non-negative"));
    }
    let exposure = draws.panel.total_exposures();
    draws
        .iter()
        .map(|d| {
            let (base, regions) = draws.params(d)?;
            Ok(expected_new_species_at(&base, &regions, &exposure, additional))
        })
        .collect()
}

/// Per-draw held-out log-likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawLogLik {
    pub chain: usize,
    pub iteration: usize,
    /// Catalogue contribution of each region.
    pub regions: Vec<f64>,
    pub novelty: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestLogLik {
    pub family: String,
    pub include_novelty: bool,
    pub novel_species: u64,
    pub draws: Vec<DrawLogLik>,
}

impl TestLogLik {
    pub fn mean(&self) -> f64 {
        self.draws.iter().map(|d| d.total).sum::<f64>() / self.draws.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["family", "chain", "iteration", "catalogue", "novelty", "loglik"])?;
        for d in &self.draws {
            w.write_record([
                self.family.clone(),
                d.chain.to_string(),
                d.iteration.to_string(),
                d.regions.iter().sum::<f64>().to_string(),
                d.novelty.to_string(),
                d.total.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores a held-out panel aligned to the training catalogue. Test counts
/// use the test panel's aggregate exposure per region; `novel_species` is the
/// number of test species absent from the catalogue.
pub fn test_loglik(
    draws: &PosteriorDraws,
    rates: &LocalRateDraws,
    test: &CountPanel,
    novel_species: u64,
    include_novelty: bool,
) -> Result<TestLogLik> {
    let train = &draws.panel;
    train.check_aligned(test)?;
    if rates.n_draws() != draws.n_draws() {
        return Err(PhibpError::LengthMismatch { left: draws.n_draws(), right: rates.n_draws() });
    }
    let exposure = train.total_exposures();
    let test_exposure = test.total_exposures();
    let rows = draws
        .iter()
        .zip(&rates.ln_rates)
        .map(|(d, r)| {
            let (base, regions) = draws.params(d)?;
            let per_region: Vec<f64> = (0..train.n_regions())
                .map(|j| {
                    (0..train.n_species())
                        .map(|l| ln_poisson_pmf_log_mean(test.count(j, l), test_exposure[j].ln() + r[j][l]))
                        .sum()
                })
                .collect();
            let novelty = if include_novelty {
                let m = expected_new_species_at(&base, &regions, &exposure, &test_exposure);
                ln_poisson_pmf(novel_species, m)
            } else {
                0.0
            };
            let total = per_region.iter().sum::<f64>() + novelty;
            Ok(DrawLogLik { chain: d.chain, iteration: d.iteration, regions: per_region, novelty, total })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestLogLik {
        family: format!("{:?}", draws.config.region_family),
        include_novelty,
        novel_species,
        draws: rows,
    })
}
