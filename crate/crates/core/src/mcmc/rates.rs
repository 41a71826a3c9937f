//! Global rates `H_ℓ` and the posterior local rates `σ̃_{j,ℓ}(H_ℓ)`.

use rand::Rng;

use super::state::LatentState;
use crate::error::{invalid, Result};
use crate::levy::{ln_jump_sum_sample, ln_tilted_subordinator_sample, LevyParams};
use crate::math::{log_add_exp, sample_ln_gamma};
use crate::panel::CountPanel;

/// Shape and rate of `H_ℓ | X_ℓ`: Gamma(`X_ℓ − α_0`, `1 + T`).
pub fn global_rate_posterior(x_total: u64, alpha0: f64, t: f64) -> Result<(f64, f64)> {
    let shape = x_total as f64 - alpha0;
    if !(shape > 0.0) {
        return Err(invalid("x_total", format!("need X − α_0 > 0, got X = {x_total}")));
    }
    Ok((shape, 1.0 + t))
}

/// Redraws every `ln H_ℓ` from its conditional.
pub fn update_global_rates<R: Rng + ?Sized>(state: &mut LatentState, rng: &mut R) -> Result<()> {
    let a0 = state.hyper.base.alpha();
    let t = state.cache().t;
    for l in 0..state.n_species() {
        let (shape, rate) = global_rate_posterior(state.species_clusters(l), a0, t)?;
        state.ln_h[l] = sample_ln_gamma(shape, rate, rng);
    }
    Ok(())
}

/// `ln σ̃_{j,ℓ}`: a tilted remainder with scale `H_ℓ` at exposure `Γ_j`,
/// plus (when `X_{j,ℓ} ≥ 1`) the sum of the `X_{j,ℓ}` posterior jumps, which is
/// Gamma(`N_{j,ℓ} − X_{j,ℓ} α_j`, `1 + Γ_j`).
pub fn ln_local_rate_sample<R: Rng + ?Sized>(
    p: &LevyParams,
    exposure: f64,
    ln_h: f64,
    n: u64,
    x: u64,
    rng: &mut R,
) -> f64 {
    let remainder = ln_tilted_subordinator_sample(p, ln_h, exposure, rng);
    log_add_exp(remainder, ln_jump_sum_sample(p, n, x, exposure, rng))
}

/// `ln σ̃[j][ℓ]` for every cell.
pub fn materialize_local_rates<R: Rng + ?Sized>(
    state: &LatentState,
    panel: &CountPanel,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    local_rates(&state.hyper.regions, &panel.total_exposures(), &state.ln_h, &state.x, panel, rng)
}

/// [`materialize_local_rates`] from raw draw components.
pub fn local_rates<R: Rng + ?Sized>(
    regions: &[LevyParams],
    exposure: &[f64],
    ln_h: &[f64],
    x: &[Vec<u64>],
    panel: &CountPanel,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    regions
        .iter()
        .enumerate()
        .map(|(j, p)| {
            (0..ln_h.len())
                .map(|l| ln_local_rate_sample(p, exposure[j], ln_h[l], panel.count(j, l), x[l][j], rng))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn posterior_mean_examples() {
        let (s, r) = global_rate_posterior(3, 0.5, 2.0).unwrap();
        assert!((s / r - 2.5 / 3.0).abs() < 1e-15);
        let (s, r) = global_rate_posterior(1, 0.0, 0.0).unwrap();
        assert_eq!((s, r), (1.0, 1.0));
        assert!(global_rate_posterior(0, 0.0, 1.0).is_err());
    }

    #[test]
    fn local_rate_means() {
        let p = LevyParams::generalized_gamma(1.5, 0.4).unwrap();
        let (g, h) = (3.0, 0.8f64);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 200_000;
        let remainder = h * p.psi_prime(g);
        for &(cnt, x) in &[(0u64, 0u64), (5, 1), (7, 3)] {
            let v: Vec<f64> =
                (0..n).map(|_| ln_local_rate_sample(&p, g, h.ln(), cnt, x, &mut rng).exp()).collect();
            let (m, se) = crate::oracle::mean_se(&v);
            let expected = remainder + (cnt as f64 - x as f64 * p.alpha()) / (1.0 + g);
            assert!((m - expected).abs() < 3.5 * se, "{cnt},{x}: {m} ± {se} vs {expected}");
            assert!(v.iter().all(|&s| s > 0.0));
        }
    }
}
