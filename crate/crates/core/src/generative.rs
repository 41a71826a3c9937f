//! Forward simulation of hierarchical count panels.
//!
//! [`simulate_compound`] draws the aggregated panel through its compound
//! Poisson representation: a Poisson number of species, each with a
//! multinomially allocated set of MtP-sized clusters. [`simulate_naive`]
//! builds the same panel the long way, from truncated jumps of the base
//! measure pushed through the regional subordinators. The two are
//! independent routes to the same law.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::RawRecord;
use crate::error::{invalid, PhibpError, Result};
use crate::levy::{ln_tilted_subordinator_sample, LevyParams, MtpDistribution};
use crate::math::{ln_gamma, open_unit, sample_ln_gamma, sample_multinomial, sample_poisson};
use crate::panel::CountPanel;

/// Expected counts allowed below the naive simulator's truncation level.
pub const TRUNCATION_LIMIT: f64 = 1e-6;

/// Model parameters together with the per-sample exposures `γ_{i,j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub base: LevyParams,
    pub regions: Vec<LevyParams>,
    pub exposures: Vec<Vec<f64>>,
}

impl Hyperparams {
    pub fn new(base: LevyParams, regions: Vec<LevyParams>, exposures: Vec<Vec<f64>>) -> Result<Self> {
        if regions.is_empty() {
            return Err(invalid("regions", "need at least one region"));
        }
        if exposures.len() != regions.len() {
            return Err(PhibpError::LengthMismatch { left: exposures.len(), right: regions.len() });
        }
        for ex in &exposures {
            if ex.is_empty() {
                return Err(invalid("exposures", "every region needs at least one sample"));
            }
            if ex.iter().any(|&g| !(g.is_finite() && g > 0.0)) {
                return Err(invalid("exposures", "exposures must be finite and positive"));
            }
        }
        Ok(Self { base, regions, exposures })
    }

    /// `J` regions sharing one parameter set and one exposure vector.
    pub fn symmetric(base: LevyParams, region: LevyParams, n_regions: usize, exposures: Vec<f64>) -> Result<Self> {
        Self::new(base, vec![region; n_regions], vec![exposures; n_regions])
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn total_exposure(&self, j: usize) -> f64 {
        self.exposures[j].iter().sum()
    }

    pub fn total_exposures(&self) -> Vec<f64> {
        (0..self.n_regions()).map(|j| self.total_exposure(j)).collect()
    }

    /// `ψ_j(Γ_j)` for every region.
    pub fn region_psi(&self) -> Vec<f64> {
        self.regions.iter().enumerate().map(|(j, p)| p.psi(self.total_exposure(j))).collect()
    }

    /// `T = Σ_j ψ_j(Γ_j)`.
    pub fn total_rate(&self) -> f64 {
        self.region_psi().iter().sum()
    }

    /// `q_j = ψ_j(Γ_j) / T`.
    pub fn allocation_probs(&self) -> Vec<f64> {
        let psi = self.region_psi();
        let t: f64 = psi.iter().sum();
        psi.iter().map(|v| v / t).collect()
    }

    /// `E φ = Ψ_0(T)`.
    pub fn expected_species(&self) -> f64 {
        self.base.psi(self.total_rate())
    }
}

/// Ground-truth latent structure of one simulated species.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesLatent {
    /// `X_{j,ℓ}` per region.
    pub x: Vec<u64>,
    /// `C_{j,k,ℓ}` per region.
    pub clusters: Vec<Vec<u64>>,
    /// `ln H_ℓ`.
    pub ln_h: f64,
}

impl SpeciesLatent {
    pub fn total_clusters(&self) -> u64 {
        self.x.iter().sum()
    }
}

/// A simulated panel: per-sample counts `counts[j][i][ℓ]` for species with
/// unique 128-bit labels, plus ground-truth latents from the compound path.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPanel {
    pub labels: Vec<u128>,
    pub counts: Vec<Vec<Vec<u64>>>,
    pub latents: Option<Vec<SpeciesLatent>>,
    pub hyper: Hyperparams,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    hyper: &'a Hyperparams,
    regions: Vec<String>,
    species: Vec<String>,
    total_rate: f64,
    latents: &'a Option<Vec<SpeciesLatent>>,
}

pub fn region_name(j: usize) -> String {
    format!("region-{:03}", j + 1)
}

pub fn species_name(label: u128) -> String {
    format!("sp-{label:032x}")
}

impl SyntheticPanel {
    fn empty(hyper: &Hyperparams) -> Self {
        let counts = hyper.exposures.iter().map(|ex| vec![Vec::new(); ex.len()]).collect();
        Self { labels: Vec::new(), counts, latents: None, hyper: hyper.clone() }
    }

    pub fn n_species(&self) -> usize {
        self.labels.len()
    }

    pub fn n_regions(&self) -> usize {
        self.counts.len()
    }

    /// `N_{j,ℓ} = Σ_i N^{(i)}_{j,ℓ}`.
    pub fn aggregated(&self, j: usize, l: usize) -> u64 {
        self.counts[j].iter().map(|s| s[l]).sum()
    }

    pub fn region_total(&self, j: usize) -> u64 {
        (0..self.n_species()).map(|l| self.aggregated(j, l)).sum()
    }

    pub fn grand_total(&self) -> u64 {
        (0..self.n_regions()).map(|j| self.region_total(j)).sum()
    }

    pub fn region_names(&self) -> Vec<String> {
        (0..self.n_regions()).map(region_name).collect()
    }

    pub fn species_names(&self) -> Vec<String> {
        self.labels.iter().map(|&l| species_name(l)).collect()
    }

    pub fn to_count_panel(&self) -> Result<CountPanel> {
        let counts = (0..self.n_regions())
            .map(|j| (0..self.n_species()).map(|l| self.aggregated(j, l)).collect())
            .collect();
        CountPanel::new(self.region_names(), self.species_names(), counts, self.hyper.exposures.clone())
    }

    /// Records in the ingestion schema, sample `i` mapped to year
    /// `start_year + i`, every (region, species, year) cell written including
    /// zeros.
    pub fn to_records(&self, start_year: i32) -> Vec<RawRecord> {
        let regions = self.region_names();
        let species = self.species_names();
        let mut out = Vec::new();
        for (l, name) in species.iter().enumerate() {
            for (j, region) in regions.iter().enumerate() {
                for (i, sample) in self.counts[j].iter().enumerate() {
                    out.push(RawRecord {
                        disease: name.clone(),
                        county: region.clone(),
                        year: start_year + i as i32,
                        sex: "Total".into(),
                        cases: sample[l],
                        population: None,
                    });
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path, start_year: i32) -> Result<()> {
        crate::dataset::write_records(path, &self.to_records(start_year))
    }

    /// JSON sidecar with hyperparameters, names and ground-truth latents.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let sidecar = Sidecar {
            hyper: &self.hyper,
            regions: self.region_names(),
            species: self.species_names(),
            total_rate: self.hyper.total_rate(),
            latents: &self.latents,
        };
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &sidecar)?;
        Ok(())
    }
}

/// Compound-path simulator with cached MtP tables at `(τ_0, T)` and `(τ_j, Γ_j)`.
#[derive(Clone, Debug)]
pub struct CompoundSimulator {
    hyper: Hyperparams,
    total_rate: f64,
    mean_species: f64,
    q: Vec<f64>,
    base: MtpDistribution,
    regions: Vec<MtpDistribution>,
}

impl CompoundSimulator {
    pub fn new(hyper: &Hyperparams) -> Result<Self> {
        let t = hyper.total_rate();
        let base = MtpDistribution::new(hyper.base, t)?;
        let regions = hyper
            .regions
            .iter()
            .enumerate()
            .map(|(j, p)| MtpDistribution::new(*p, hyper.total_exposure(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            total_rate: t,
            mean_species: hyper.base.psi(t),
            q: hyper.allocation_probs(),
            hyper: hyper.clone(),
            base,
            regions,
        })
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> SyntheticPanel {
        let mut panel = SyntheticPanel::empty(&self.hyper);
        let phi = sample_poisson(self.mean_species, rng);
        let alpha0 = self.hyper.base.alpha();
        let mut latents = Vec::with_capacity(phi as usize);
        for _ in 0..phi {
            let x_total = self.base.sample(rng);
            let x = sample_multinomial(x_total, &self.q, rng);
            let clusters: Vec<Vec<u64>> = x
                .iter()
                .zip(&self.regions)
                .map(|(&xj, d)| (0..xj).map(|_| d.sample(rng)).collect())
                .collect();
            for (j, c) in clusters.iter().enumerate() {
                let n: u64 = c.iter().sum();
                let per_sample = sample_multinomial(n, &self.hyper.exposures[j], rng);
                for (i, v) in per_sample.into_iter().enumerate() {
                    panel.counts[j][i].push(v);
                }
            }
            let ln_h = sample_ln_gamma(x_total as f64 - alpha0, 1.0 + self.total_rate, rng);
            panel.labels.push(rng.random());
            latents.push(SpeciesLatent { x, clusters, ln_h });
        }
        panel.latents = Some(latents);
        panel
    }
}

pub fn simulate_compound<R: Rng + ?Sized>(h: &Hyperparams, rng: &mut R) -> Result<SyntheticPanel> {
    Ok(CompoundSimulator::new(h)?.simulate(rng))
}

/// `θ_0/Γ(1 − α_0)`, the constant in front of the base Lévy density.
fn base_density_const(p: &LevyParams) -> f64 {
    p.theta() / ln_gamma(1.0 - p.alpha()).exp()
}

/// Expected counts contributed by base jumps below `eps`:
/// `Σ_j Γ_j θ_j · ∫_0^ε s τ_0(s) ds`, the integral bounded by
/// `θ_0/Γ(1 − α_0) · ε^{1−α_0}/(1 − α_0)`.
pub fn truncation_bound(h: &Hyperparams, eps: f64) -> f64 {
    let a0 = h.base.alpha();
    let mass: f64 = h.regions.iter().enumerate().map(|(j, p)| h.total_exposure(j) * p.theta()).sum();
    mass * base_density_const(&h.base) * eps.powf(1.0 - a0) / (1.0 - a0)
}

/// Truncation level whose bound is a tenth of [`TRUNCATION_LIMIT`].
pub fn default_truncation(h: &Hyperparams) -> f64 {
    let unit = truncation_bound(h, 1.0);
    let target = 0.1 * TRUNCATION_LIMIT;
    (target / unit).powf(1.0 / (1.0 - h.base.alpha())).min(0.5)
}

/// Jumps of the base measure above `eps`, by thinning a Poisson process with
/// dominating density `c s^{−1−α}` on `(ε, 1]` and `c e^{−s}` on `(1, ∞)`.
fn base_jumps<R: Rng + ?Sized>(p: &LevyParams, eps: f64, rng: &mut R) -> Vec<f64> {
    let c = base_density_const(p);
    let a = p.alpha();
    let small_mass = if a == 0.0 { -eps.ln() } else { (eps.powf(-a) - 1.0) / a };
    let mut jumps = Vec::new();
    for _ in 0..sample_poisson(c * small_mass, rng) {
        let u: f64 = rng.random();
        let s = if a == 0.0 {
            (eps.ln() * (1.0 - u)).exp()
        } else {
            (eps.powf(-a) - u * (eps.powf(-a) - 1.0)).powf(-1.0 / a)
        };
        if open_unit(rng) <= (-s).exp() {
            jumps.push(s);
        }
    }
    for _ in 0..sample_poisson(c * (-1.0f64).exp(), rng) {
        let s = 1.0 - open_unit(rng).ln();
        if open_unit(rng) <= s.powf(-1.0 - a) {
            jumps.push(s);
        }
    }
    jumps
}

/// Panel drawn from truncated jumps `λ_l > ε` of the base measure: each
/// region's rate is `σ_j(λ_l)`, counts are Poisson with intensity
/// `γ_{i,j} σ_j(λ_l)`, and species never observed are discarded.
pub fn simulate_naive<R: Rng + ?Sized>(h: &Hyperparams, eps: f64, rng: &mut R) -> Result<SyntheticPanel> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("truncation_eps", format!("must lie in (0, 1), got {eps}")));
    }
    let bound = truncation_bound(h, eps);
    if !(bound < TRUNCATION_LIMIT) {
        return Err(PhibpError::Truncation { eps, bound, limit: TRUNCATION_LIMIT });
    }
    let mut panel = SyntheticPanel::empty(h);
    let mut rates = vec![0.0; h.n_regions()];
    for lambda in base_jumps(&h.base, eps, rng) {
        for (j, p) in h.regions.iter().enumerate() {
            rates[j] = ln_tilted_subordinator_sample(p, lambda.ln(), 0.0, rng).exp();
        }
        let draws: Vec<Vec<u64>> = h
            .exposures
            .iter()
            .zip(&rates)
            .map(|(ex, &r)| ex.iter().map(|&g| sample_poisson(g * r, rng)).collect())
            .collect();
        if draws.iter().flatten().any(|&n| n > 0) {
            for (j, d) in draws.into_iter().enumerate() {
                for (i, v) in d.into_iter().enumerate() {
                    panel.counts[j][i].push(v);
                }
            }
            panel.labels.push(rng.random());
        }
    }
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ga_unit() -> Hyperparams {
        Hyperparams::new(
            LevyParams::gamma(1.0).unwrap(),
            vec![LevyParams::gamma(1.0).unwrap()],
            vec![vec![1.0]],
        )
        .unwrap()
    }

    #[test]
    fn expected_species_closed_form() {
        let h = ga_unit();
        assert!((h.expected_species() - (1.0 + 2f64.ln()).ln()).abs() < 1e-12);
    }

    #[test]
    fn compound_species_mean() {
        let h = ga_unit();
        let sim = CompoundSimulator::new(&h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let phis: Vec<f64> = (0..n).map(|_| sim.simulate(&mut rng).n_species() as f64).collect();
        let (m, se) = crate::oracle::mean_se(&phis);
        assert!((m - 0.526589).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn compound_latents_are_consistent() {
        let h = Hyperparams::symmetric(
            LevyParams::generalized_gamma(3.0, 0.3).unwrap(),
            LevyParams::generalized_gamma(1.0, 0.4).unwrap(),
            3,
            vec![1.0, 2.0, 0.5],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = simulate_compound(&h, &mut rng).unwrap();
            let lat = p.latents.as_ref().unwrap();
            for (l, s) in lat.iter().enumerate() {
                assert!(s.total_clusters() >= 1);
                assert!(s.ln_h.is_finite());
                for j in 0..3 {
                    assert_eq!(s.clusters[j].len() as u64, s.x[j]);
                    assert_eq!(s.clusters[j].iter().sum::<u64>(), p.aggregated(j, l));
                }
            }
            if p.n_species() > 0 {
                p.to_count_panel().unwrap();
            }
        }
    }

    #[test]
    fn vanishing_exposure_gives_empty_panels() {
        let h = Hyperparams::new(
            LevyParams::generalized_gamma(1.0, 0.5).unwrap(),
            vec![LevyParams::gamma(1.0).unwrap(); 2],
            vec![vec![1e-14]; 2],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            assert_eq!(simulate_compound(&h, &mut rng).unwrap().n_species(), 0);
            assert_eq!(simulate_naive(&h, 1e-3, &mut rng).unwrap().n_species(), 0);
        }
    }

    #[test]
    fn naive_rejects_coarse_truncation() {
        let h = ga_unit();
        assert!(matches!(simulate_naive(&h, 0.1, &mut ChaCha8Rng::seed_from_u64(1)), Err(PhibpError::Truncation { .. })));
        let eps = default_truncation(&h);
        assert!(truncation_bound(&h, eps) < TRUNCATION_LIMIT);
    }

    #[test]
    fn naive_species_mean_matches_laplace_exponent() {
        let h = ga_unit();
        let eps = default_truncation(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let phis: Vec<f64> =
            (0..20_000).map(|_| simulate_naive(&h, eps, &mut rng).unwrap().n_species() as f64).collect();
        let (m, se) = crate::oracle::mean_se(&phis);
        assert!((m - h.expected_species()).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn labels_are_distinct() {
        let h = Hyperparams::symmetric(
            LevyParams::gamma(40.0).unwrap(),
            LevyParams::gamma(1.0).unwrap(),
            2,
            vec![1.0; 3],
        )
        .unwrap();
        let p = simulate_compound(&h, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut l = p.labels.clone();
        l.sort_unstable();
        l.dedup();
        assert_eq!(l.len(), p.n_species());
        assert!(p.n_species() > 20);
    }
}
