//! Posterior sampling for the count panel.
//!
//! Each iteration runs, in order:
//!
//! 1. a Gibbs update of `(X_{j,ℓ}, C_{j,·,ℓ})` for every non-empty cell,
//! 2. `mh_sweeps` Metropolis–Hastings sweeps over the hyperparameters,
//! 3. a conjugate redraw of every global rate `H_ℓ`.
//!
//! Steps 1 and 2 target the law of the latents with the global rates
//! integrated out, so `H` is drawn last from its exact conditional given
//! the final `(X, θ, α)` of the iteration. Local rates are only materialized
//! downstream, from retained draws.

pub mod allocation;
pub mod draws;
pub mod hyper;
pub mod rates;
pub mod state;

pub use allocation::{convolution_table, ConvolutionTable, StirlingCache, StirlingTable};
pub use draws::{ChainDraws, Draw, PosteriorDraws, Scalar};
pub use hyper::{mh_update_hyperparams, Acceptance, GammaPrior, MhModel, MhState, Tally};
pub use rates::{materialize_local_rates, update_global_rates};
pub use state::{LatentState, RateCache, SufficientStats};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PhibpError, Result};
use crate::levy::{Family, LevyParams};
use crate::panel::CountPanel;
use allocation::{sample_allocation, AllocationContext};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub base_family: Family,
    pub region_family: Family,
    /// Hold every `α` at its initial value (GG levels included).
    pub fix_alpha: bool,
    pub init_theta_base: f64,
    pub init_alpha_base: f64,
    pub init_theta_region: f64,
    pub init_alpha_region: f64,
    /// Initial random-walk scale for `ln θ`.
    pub step_theta: f64,
    /// Initial random-walk scale for `logit α`.
    pub step_alpha: f64,
    /// Hyperparameter sweeps per iteration. The sweeps reuse the
    /// sufficient statistics, so they are cheap next to the allocation step.
    pub mh_sweeps: usize,
    /// Adapt step sizes during burn-in.
    pub adapt: bool,
    pub target_accept: f64,
    pub base_prior: GammaPrior,
    pub region_prior: GammaPrior,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: 40_000,
            n_burnin: 20_000,
            thin: 10,
            seed: 0,
            base_family: Family::GG,
            region_family: Family::GG,
            fix_alpha: false,
            init_theta_base: 1.0,
            init_alpha_base: 0.2,
            init_theta_region: 1.0,
            init_alpha_region: 0.2,
            step_theta: 0.5,
            step_alpha: 0.5,
            mh_sweeps: 5,
            adapt: true,
            target_accept: 0.3,
            base_prior: GammaPrior::default(),
            region_prior: GammaPrior::default(),
        }
    }
}

impl ChainConfig {
    /// Same family at every level.
    pub fn with_family(family: Family) -> Self {
        Self { base_family: family, region_family: family, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_burnin >= self.n_iter {
            return Err(invalid("n_burnin", format!("must be below n_iter = {}", self.n_iter)));
        }
        if self.thin == 0 {
            return Err(invalid("thin", "must be at least 1"));
        }
        if self.mh_sweeps == 0 {
            return Err(invalid("mh_sweeps", "must be at least 1"));
        }
        if !(self.step_theta > 0.0 && self.step_alpha > 0.0) {
            return Err(invalid("step", "step sizes must be positive"));
        }
        for p in [&self.base_prior, &self.region_prior] {
            if !(p.shape > 0.0 && p.rate > 0.0) {
                return Err(invalid("prior", "gamma prior needs positive shape and rate"));
            }
        }
        Ok(())
    }

    /// `⌊(n_iter − n_burnin)/thin⌋`.
    pub fn retained_per_chain(&self) -> usize {
        (self.n_iter - self.n_burnin) / self.thin
    }

    pub fn model(&self) -> MhModel {
        MhModel {
            base_family: self.base_family,
            region_family: self.region_family,
            fix_alpha: self.fix_alpha,
            base_prior: self.base_prior,
            region_prior: self.region_prior,
            target_accept: self.target_accept,
        }
    }

    pub fn initial_params(&self, n_regions: usize) -> Result<(LevyParams, Vec<LevyParams>)> {
        let base = LevyParams::new(self.init_theta_base, self.init_alpha_base, self.base_family)?;
        let region = LevyParams::new(self.init_theta_region, self.init_alpha_region, self.region_family)?;
        Ok((base, vec![region; n_regions]))
    }

    /// Random source for chain `chain`: one ChaCha8 stream per chain.
    pub fn chain_rng(&self, chain: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(chain as u64);
        rng
    }
}

/// One chain's mutable sampler.
pub struct Sampler<'a> {
    panel: &'a CountPanel,
    model: MhModel,
    mh_sweeps: usize,
    pub state: LatentState,
    pub mh: MhState,
    stirling: StirlingCache,
    region_n_max: Vec<u64>,
}

impl<'a> Sampler<'a> {
    pub fn new(panel: &'a CountPanel, cfg: &ChainConfig, mut state: LatentState) -> Result<Self> {
        state.refresh_cache();
        state.validate(panel)?;
        let levels = panel.n_regions() + 1;
        Ok(Self {
            panel,
            model: cfg.model(),
            mh_sweeps: cfg.mh_sweeps.max(1),
            mh: MhState::new(levels, cfg.step_theta, cfg.step_alpha),
            state,
            stirling: StirlingCache::default(),
            region_n_max: (0..panel.n_regions()).map(|j| panel.region_max_count(j)).collect(),
        })
    }

    /// Stirling tables for the current `α_j`, one per distinct value.
    fn tables(&mut self) -> Vec<std::sync::Arc<StirlingTable>> {
        let mut need: BTreeMap<u64, u64> = BTreeMap::new();
        for (j, p) in self.state.hyper.regions.iter().enumerate() {
            let e = need.entry(p.alpha().to_bits()).or_default();
            *e = (*e).max(self.region_n_max[j]);
        }
        let keep: Vec<(f64, u64)> = need.iter().map(|(&a, &n)| (f64::from_bits(a), n)).collect();
        self.stirling.retain(&keep);
        self.state
            .hyper
            .regions
            .iter()
            .map(|p| {
                let a = p.alpha();
                self.stirling.get(a, need[&a.to_bits()])
            })
            .collect()
    }

    /// Gibbs update of every non-empty cell's cluster count and sizes.
    pub fn allocation_sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let tables = self.tables();
        let c = self.state.cache();
        let ctx = AllocationContext::new(&self.state.hyper.base, &self.state.hyper.regions, &c.exposure, &c.psi, c.t);
        for l in 0..self.state.n_species() {
            for j in 0..self.state.n_regions() {
                let n = self.panel.count(j, l);
                if n == 0 {
                    continue;
                }
                let s = self.state.species_clusters(l) - self.state.x[l][j];
                let (m, comp) = sample_allocation(&ctx, &tables[j], j, s, n, rng);
                self.state.x[l][j] = m;
                self.state.clusters[l][j] = comp;
            }
        }
    }

    /// Full iteration; returns the latent log density after the hyperparameter sweep.
    pub fn iterate<R: Rng + ?Sized>(&mut self, in_burnin: bool, rng: &mut R) -> Result<f64> {
        self.allocation_sweep(rng);
        let stats = self.state.sufficient_stats(self.panel);
        for _ in 0..self.mh_sweeps {
            mh_update_hyperparams(&mut self.state, &stats, &self.model, &mut self.mh, in_burnin, rng);
        }
        update_global_rates(&mut self.state, rng)?;
        let c = self.state.cache();
        Ok(stats.log_joint(&self.state.hyper.base, &self.state.hyper.regions, c))
    }

    pub fn draw(&self, chain: usize, iteration: usize, log_joint: f64) -> Draw {
        let h = &self.state.hyper;
        let levels = std::iter::once(&h.base).chain(&h.regions);
        let (theta, alpha) = levels.map(|p| (p.theta(), p.alpha())).unzip();
        Draw {
            chain,
            iteration,
            theta,
            alpha,
            ln_h: self.state.ln_h.clone(),
            x: self.state.x.clone(),
            log_joint,
        }
    }
}

/// One chain from the default initial state.
pub fn run_chain(panel: &CountPanel, cfg: &ChainConfig, chain: usize) -> Result<ChainDraws> {
    let (base, regions) = cfg.initial_params(panel.n_regions())?;
    let state = LatentState::initial(panel, base, regions)?;
    run_chain_from(panel, cfg, chain, state)
}

/// One chain from a supplied initial state.
pub fn run_chain_from(panel: &CountPanel, cfg: &ChainConfig, chain: usize, state: LatentState) -> Result<ChainDraws> {
    cfg.validate()?;
    let mut rng = cfg.chain_rng(chain);
    let mut sampler = Sampler::new(panel, cfg, state)?;
    let mut draws = Vec::with_capacity(cfg.retained_per_chain());
    for iter in 0..cfg.n_iter {
        let in_burnin = iter < cfg.n_burnin;
        let lj = sampler.iterate(in_burnin, &mut rng)?;
        if !lj.is_finite() {
            return Err(PhibpError::NonFinite { iteration: iter, what: format!("log joint = {lj}") });
        }
        if in_burnin {
            if cfg.adapt && (iter + 1) % hyper::ADAPT_WINDOW == 0 {
                sampler.mh.adapt(cfg.target_accept);
            }
        } else if (iter + 1 - cfg.n_burnin) % cfg.thin == 0 {
            draws.push(sampler.draw(chain, iter, lj));
        }
    }
    Ok(ChainDraws {
        chain,
        draws,
        acceptance: sampler.mh.sampling.clone(),
        burnin_acceptance: sampler.mh.burnin.clone(),
        step_theta: sampler.mh.step_theta.clone(),
        step_alpha: sampler.mh.step_alpha.clone(),
    })
}

/// `n_chains` independent chains in parallel; chain `c` uses stream `c` of
/// the configured seed, so the output does not depend on scheduling.
pub fn run_chains(panel: &CountPanel, cfg: &ChainConfig, n_chains: usize) -> Result<PosteriorDraws> {
    cfg.validate()?;
    if n_chains == 0 {
        return Err(invalid("n_chains", "need at least one chain"));
    }
    let chains = (0..n_chains)
        .into_par_iter()
        .map(|c| run_chain(panel, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws { config: cfg.clone(), panel: panel.clone(), chains })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel() -> CountPanel {
        CountPanel::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into(), "z".into(), "w".into()],
            vec![vec![4, 0, 1, 9], vec![2, 3, 0, 1]],
            vec![vec![1.0; 3], vec![1.0; 5]],
        )
        .unwrap()
    }

    fn short(family: Family) -> ChainConfig {
        ChainConfig { n_iter: 300, n_burnin: 100, thin: 5, seed: 3, ..ChainConfig::with_family(family) }
    }

    #[test]
    fn retention_contract() {
        let cfg = ChainConfig::default();
        assert_eq!(cfg.retained_per_chain(), 2000);
        let d = run_chain(&panel(), &short(Family::GG), 0).unwrap();
        assert_eq!(d.draws.len(), 40);
        assert_eq!(d.draws[0].iteration, 104);
    }

    #[test]
    fn mh_sweeps_must_be_positive() {
        let cfg = ChainConfig { mh_sweeps: 0, ..short(Family::GA) };
        assert!(cfg.validate().is_err());
        let one = run_chain(&panel(), &ChainConfig { mh_sweeps: 1, ..short(Family::GG) }, 0).unwrap();
        let five = run_chain(&panel(), &short(Family::GG), 0).unwrap();
        assert_eq!(one.draws.len(), five.draws.len());
        assert!(five.acceptance.theta[0].proposed > one.acceptance.theta[0].proposed);
    }

    #[test]
    fn same_seed_same_draws() {
        let a = run_chain(&panel(), &short(Family::GG), 1).unwrap();
        let b = run_chain(&panel(), &short(Family::GG), 1).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&panel(), &short(Family::GG), 2).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn ga_alpha_stays_zero() {
        let d = run_chain(&panel(), &short(Family::GA), 0).unwrap();
        assert!(d.draws.iter().all(|d| d.alpha.iter().all(|&a| a == 0.0)));
        assert!(d.acceptance.alpha.iter().all(|t| t.proposed == 0));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = ChainConfig { n_iter: 10, n_burnin: 10, ..ChainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ChainConfig { thin: 0, ..ChainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
