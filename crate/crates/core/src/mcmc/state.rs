//! Latent configuration of the sampler and the latent-data log density.
//!
//! With the global rates integrated out, the joint law of
//! `(φ, X_{j,ℓ}, C_{j,k,ℓ})` given the hyperparameters is
//!
//! ```text
//! Poisson(φ; Ψ_0(T)) · Π_ℓ MtP_0(X_ℓ; T) · Mult(X_{·,ℓ}; X_ℓ, q) · Π_{j,k} MtP_j(C_{j,k,ℓ}; Γ_j)
//! ```
//!
//! After cancellation this depends on the data only through the histogram
//! of `X_ℓ`, the per-region cluster-size histograms and a few totals, which
//! is what [`SufficientStats`] holds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{PhibpError, Result};
use crate::generative::{Hyperparams, SpeciesLatent};
use crate::levy::{log_mtp_pmf, LevyParams};
use crate::math::{ln_factorial, ln_gamma, ln_poisson_pmf};
use crate::panel::CountPanel;

/// `ψ_j(Γ_j)`, `T` and `q_j` for the current hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RateCache {
    pub exposure: Vec<f64>,
    pub psi: Vec<f64>,
    pub t: f64,
    pub q: Vec<f64>,
}

impl RateCache {
    pub fn compute(regions: &[LevyParams], exposure: &[f64]) -> Self {
        let psi: Vec<f64> = regions.iter().zip(exposure).map(|(p, &g)| p.psi(g)).collect();
        let t: f64 = psi.iter().sum();
        let q = psi.iter().map(|v| v / t).collect();
        Self { exposure: exposure.to_vec(), psi, t, q }
    }

    /// Largest relative discrepancy against a from-scratch recomputation.
    pub fn max_rel_error(&self, regions: &[LevyParams]) -> f64 {
        let fresh = Self::compute(regions, &self.exposure);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        let mut e = rel(self.t, fresh.t);
        for j in 0..self.psi.len() {
            e = e.max(rel(self.psi[j], fresh.psi[j])).max(rel(self.q[j], fresh.q[j]));
        }
        e
    }
}

/// One sampler configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub hyper: Hyperparams,
    /// `x[ℓ][j] = X_{j,ℓ}`.
    pub x: Vec<Vec<u64>>,
    /// `clusters[ℓ][j]` = `(C_{j,1,ℓ}, …, C_{j,X_{j,ℓ},ℓ})`.
    pub clusters: Vec<Vec<Vec<u64>>>,
    /// `ln H_ℓ`.
    pub ln_h: Vec<f64>,
    #[serde(skip)]
    cache: Option<RateCache>,
}

impl LatentState {
    /// One cluster per non-empty cell, holding all its counts.
    pub fn initial(panel: &CountPanel, base: LevyParams, regions: Vec<LevyParams>) -> Result<Self> {
        let hyper = Hyperparams::new(base, regions, panel.all_sample_exposures().to_vec())?;
        let (nj, nl) = (panel.n_regions(), panel.n_species());
        let mut x = vec![vec![0; nj]; nl];
        let mut clusters = vec![vec![Vec::new(); nj]; nl];
        for l in 0..nl {
            for j in 0..nj {
                let n = panel.count(j, l);
                if n > 0 {
                    x[l][j] = 1;
                    clusters[l][j] = vec![n];
                }
            }
        }
        let mut s = Self { hyper, x, clusters, ln_h: vec![0.0; nl], cache: None };
        s.refresh_cache();
        let t = s.cache().t;
        let a0 = s.hyper.base.alpha();
        s.ln_h = (0..nl).map(|l| ((s.species_clusters(l) as f64 - a0) / (1.0 + t)).ln()).collect();
        Ok(s)
    }

    /// State at known latents, e.g. the ground truth of a simulated panel.
    pub fn from_latents(panel: &CountPanel, hyper: Hyperparams, latents: &[SpeciesLatent]) -> Result<Self> {
        if latents.len() != panel.n_species() {
            return Err(PhibpError::LengthMismatch { left: latents.len(), right: panel.n_species() });
        }
        let mut s = Self {
            hyper,
            x: latents.iter().map(|l| l.x.clone()).collect(),
            clusters: latents.iter().map(|l| l.clusters.clone()).collect(),
            ln_h: latents.iter().map(|l| l.ln_h).collect(),
            cache: None,
        };
        s.refresh_cache();
        s.validate(panel)?;
        Ok(s)
    }

    pub fn n_species(&self) -> usize {
        self.x.len()
    }

    pub fn n_regions(&self) -> usize {
        self.hyper.n_regions()
    }

    pub fn cache(&self) -> &RateCache {
        self.cache.as_ref().expect("cache is refreshed on construction")
    }

    pub fn refresh_cache(&mut self) {
        self.cache = Some(RateCache::compute(&self.hyper.regions, &self.hyper.total_exposures()));
    }

    /// Replaces one region's parameters, updating `ψ_j`, `T`, `q` incrementally.
    pub fn set_region(&mut self, j: usize, p: LevyParams) {
        self.hyper.regions[j] = p;
        if self.cache.is_none() {
            self.refresh_cache();
        }
        let c = self.cache.as_mut().expect("cache present");
        let new_psi = p.psi(c.exposure[j]);
        c.t += new_psi - c.psi[j];
        c.psi[j] = new_psi;
        let t = c.t;
        c.q.iter_mut().zip(&c.psi).for_each(|(q, &v)| *q = v / t);
    }

    pub fn set_base(&mut self, p: LevyParams) {
        self.hyper.base = p;
    }

    /// `X_ℓ = Σ_j X_{j,ℓ}`.
    pub fn species_clusters(&self, l: usize) -> u64 {
        self.x[l].iter().sum()
    }

    pub fn validate(&self, panel: &CountPanel) -> Result<()> {
        let bad = |m: String| Err(PhibpError::Catalogue(m));
        if self.x.len() != panel.n_species() || self.n_regions() != panel.n_regions() {
            return bad("state and panel dimensions differ".into());
        }
        for l in 0..self.n_species() {
            if self.species_clusters(l) == 0 {
                return bad(format!("species {l} has no clusters"));
            }
            if !(self.ln_h[l].is_finite()) {
                return bad(format!("species {l} has a non-finite global rate"));
            }
            for j in 0..self.n_regions() {
                let n = panel.count(j, l);
                let x = self.x[l][j];
                if (x == 0) != (n == 0) || x > n {
                    return bad(format!("X[{j},{l}] = {x} inconsistent with N = {n}"));
                }
                let c = &self.clusters[l][j];
                if c.len() as u64 != x || c.iter().sum::<u64>() != n || c.contains(&0) {
                    return bad(format!("clusters of cell ({j},{l}) do not sum to N = {n}"));
                }
            }
        }
        let q: f64 = self.cache().q.iter().sum();
        if (q - 1.0).abs() > 1e-9 || self.cache().q.iter().any(|&v| !(v > 0.0)) {
            return bad("allocation probabilities are not a distribution".into());
        }
        Ok(())
    }

    pub fn sufficient_stats(&self, panel: &CountPanel) -> SufficientStats {
        SufficientStats::compute(self, panel)
    }

    /// Latent-data log density (global rates integrated out), via the
    /// sufficient statistics.
    pub fn log_joint(&self, panel: &CountPanel) -> f64 {
        let stats = self.sufficient_stats(panel);
        stats.log_joint(&self.hyper.base, &self.hyper.regions, self.cache())
    }

    /// The same density as a product of its factors:
    /// Poisson, base MtP, multinomial and regional MtP pmfs.
    pub fn log_joint_factorized(&self, _panel: &CountPanel) -> f64 {
        let c = self.cache();
        let phi = self.n_species() as u64;
        let mut lp = ln_poisson_pmf(phi, self.hyper.base.psi(c.t));
        for l in 0..self.n_species() {
            let xl = self.species_clusters(l);
            lp += log_mtp_pmf(&self.hyper.base, c.t, xl);
            lp += ln_factorial(xl);
            for j in 0..self.n_regions() {
                let xj = self.x[l][j];
                lp += xj as f64 * c.q[j].ln() - ln_factorial(xj);
                for &size in &self.clusters[l][j] {
                    lp += log_mtp_pmf(&self.hyper.regions[j], c.exposure[j], size);
                }
            }
        }
        lp
    }
}

/// Per-region statistics of the cluster configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegionStats {
    /// `X_j = Σ_ℓ X_{j,ℓ}`.
    pub clusters: u64,
    /// `N_j = Σ_ℓ N_{j,ℓ}`.
    pub total: u64,
    /// Cluster size → multiplicity.
    pub sizes: Vec<(u64, u64)>,
    /// `−Σ_k ln C! − Σ_ℓ ln X_{j,ℓ}!`.
    pub constant: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SufficientStats {
    pub phi: u64,
    /// `X_ℓ` value → multiplicity.
    pub species_clusters: Vec<(u64, u64)>,
    pub total_clusters: u64,
    pub regions: Vec<RegionStats>,
}

impl SufficientStats {
    pub fn compute(state: &LatentState, panel: &CountPanel) -> Self {
        let nj = state.n_regions();
        let mut xs: BTreeMap<u64, u64> = BTreeMap::new();
        let mut sizes: Vec<BTreeMap<u64, u64>> = vec![BTreeMap::new(); nj];
        let mut regions = vec![RegionStats::default(); nj];
        let mut total_clusters = 0;
        for l in 0..state.n_species() {
            let xl = state.species_clusters(l);
            total_clusters += xl;
            *xs.entry(xl).or_default() += 1;
            for j in 0..nj {
                let r = &mut regions[j];
                r.clusters += state.x[l][j];
                r.total += panel.count(j, l);
                r.constant -= ln_factorial(state.x[l][j]);
                for &c in &state.clusters[l][j] {
                    *sizes[j].entry(c).or_default() += 1;
                }
            }
        }
        for (r, s) in regions.iter_mut().zip(sizes) {
            r.constant -= s.iter().map(|(&c, &k)| k as f64 * ln_factorial(c)).sum::<f64>();
            r.sizes = s.into_iter().collect();
        }
        Self {
            phi: state.n_species() as u64,
            species_clusters: xs.into_iter().collect(),
            total_clusters,
            regions,
        }
    }

    /// Terms involving `τ_0` and `T`:
    /// `−Ψ_0(T) − ln φ! + φ(ln θ_0 − ln Γ(1 − α_0)) + Σ_ℓ ln Γ(X_ℓ − α_0) + (φα_0 − X) ln(1 + T)`.
    pub fn global_part(&self, base: &LevyParams, t: f64) -> f64 {
        let a0 = base.alpha();
        let phi = self.phi as f64;
        let sum_lg: f64 =
            self.species_clusters.iter().map(|&(x, k)| k as f64 * ln_gamma(x as f64 - a0)).sum();
        -base.psi(t) - ln_factorial(self.phi) + phi * (base.theta().ln() - ln_gamma(1.0 - a0))
            + sum_lg
            + (phi * a0 - self.total_clusters as f64) * t.ln_1p()
    }

    /// Terms involving `τ_j`:
    /// `X_j(ln θ_j − ln Γ(1 − α_j) + α_j ln(1 + Γ_j)) + N_j(ln Γ_j − ln(1 + Γ_j)) + Σ_k ln Γ(C − α_j) + const`.
    pub fn region_part(&self, j: usize, p: &LevyParams, exposure: f64) -> f64 {
        let r = &self.regions[j];
        let a = p.alpha();
        let sum_lg: f64 = r.sizes.iter().map(|&(c, k)| k as f64 * ln_gamma(c as f64 - a)).sum();
        r.clusters as f64 * (p.theta().ln() - ln_gamma(1.0 - a) + a * exposure.ln_1p())
            + r.total as f64 * (exposure.ln() - exposure.ln_1p())
            + sum_lg
            + r.constant
    }

    pub fn log_joint(&self, base: &LevyParams, regions: &[LevyParams], cache: &RateCache) -> f64 {
        self.global_part(base, cache.t)
            + regions
                .iter()
                .enumerate()
                .map(|(j, p)| self.region_part(j, p, cache.exposure[j]))
                .sum::<f64>()
    }
}
