//! Deterministic verification suite comparing closed forms and dynamic
//! programs against quadrature, enumeration and goodness-of-fit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::levy::{base_laplace_exponent, laplace_exponent, tilted_moment, LevyParams, MtpDistribution};
use crate::mcmc::allocation::{
    allocation_log_weights, allocation_log_weights_direct, convolution_table, ln_convolution, AllocationContext,
    StirlingTable,
};
use crate::oracle::{chi_square_gof, composition_probability, laplace_exponent_quadrature, tilted_moment_quadrature};

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// 48 `(θ, α, γ)` combinations.
pub fn levy_grid() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for &theta in &[0.5, 3.0] {
        for &alpha in &[0.0, 0.1, 0.3, 0.5, 0.7, 0.9] {
            for &gamma in &[0.05, 1.0, 7.0, 40.0] {
                out.push((theta, alpha, gamma));
            }
        }
    }
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Largest relative error of `ψ`, `Ψ_0` and `ψ^{(c)}` (c = 1, 2, 5) against
/// quadrature over [`levy_grid`].
pub fn levy_quadrature_error() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (theta, alpha, gamma) in levy_grid() {
        let p = LevyParams::generalized_gamma(theta, alpha)?;
        let q = laplace_exponent_quadrature(theta, alpha, gamma);
        worst = worst.max(rel_err(laplace_exponent(&p, gamma)?, q));
        worst = worst.max(rel_err(base_laplace_exponent(&p, gamma)?, q));
        for c in [1u32, 2, 5] {
            let q = tilted_moment_quadrature(theta, alpha, c, gamma);
            worst = worst.max(rel_err(tilted_moment(&p, c as u64, gamma)?, q));
        }
    }
    Ok(worst)
}

/// 12 `(θ, α, γ)` settings for MtP checks.
pub fn mtp_settings() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for &alpha in &[0.0, 0.25, 0.5, 0.85] {
        for &(theta, gamma) in &[(1.0, 0.3), (2.0, 2.0), (0.7, 12.0)] {
            out.push((theta, alpha, gamma));
        }
    }
    out
}

/// `|1 − Σ_c pmf(c)|`, summed until terms are negligible.
pub fn mtp_normalization_residual(p: &LevyParams, gamma: f64) -> Result<f64> {
    let d = MtpDistribution::new(*p, gamma)?;
    let mut sum = 0.0;
    let mut c = 1u64;
    loop {
        let t = d.ln_pmf(c).exp();
        sum += t;
        if (c > 20 && t < 1e-20) || c > 50_000_000 {
            break;
        }
        c += 1;
    }
    Ok((1.0 - sum).abs())
}

/// Largest absolute gap between the `α = 0` pmf and
/// `p^c / (c · (−ln(1 − p)))`, `p = γ/(1 + γ)`, for `c ≤ 60`.
pub fn log_series_error(theta: f64, gamma: f64) -> Result<f64> {
    let d = MtpDistribution::new(LevyParams::gamma(theta)?, gamma)?;
    let p = gamma / (1.0 + gamma);
    let z = gamma.ln_1p();
    Ok((1..=60u64)
        .map(|c| (d.ln_pmf(c).exp() - p.powi(c as i32) / (c as f64 * z)).abs())
        .fold(0.0, f64::max))
}

/// Chi-square GOF p-value of `n` sampler draws against the pmf.
pub fn mtp_sampler_pvalue(p: &LevyParams, gamma: f64, n: usize, seed: u64) -> Result<f64> {
    let d = MtpDistribution::new(*p, gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = 400usize;
    let mut counts = vec![0u64; cap + 1];
    for _ in 0..n {
        let c = d.sample(&mut rng) as usize;
        counts[c.min(cap)] += 1;
    }
    let mut probs: Vec<f64> = (0..=cap).map(|c| if c == 0 { 0.0 } else { d.ln_pmf(c as u64).exp() }).collect();
    let head: f64 = probs[..cap].iter().sum();
    probs[cap] = (1.0 - head).max(0.0);
    Ok(chi_square_gof(&counts[1..], &probs[1..]).2)
}

/// Six `(θ, α, γ)` settings for the convolution checks.
pub fn convolution_settings() -> Vec<(f64, f64, f64)> {
    vec![(1.0, 0.0, 1.0), (2.5, 0.0, 0.2), (0.8, 0.3, 3.0), (1.5, 0.5, 0.7), (0.4, 0.75, 9.0), (3.0, 0.9, 0.05)]
}

/// Largest absolute gap between `exp W[n, x]` from the direct recursion, the
/// Stirling route, and composition enumeration, for `x ≤ n ≤ n_max`.
pub fn convolution_error(theta: f64, alpha: f64, gamma: f64, n_max: u64) -> Result<f64> {
    let p = LevyParams::generalized_gamma(theta, alpha)?;
    let d = MtpDistribution::new(p, gamma)?;
    let w = convolution_table(&d, n_max, n_max)?;
    let table = StirlingTable::new(p.alpha(), n_max);
    let pmf = |c: u64| d.ln_pmf(c).exp();
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        for x in 1..=n {
            let exact = composition_probability(&pmf, n, x);
            worst = worst.max((w.get(n as usize, x as usize).exp() - exact).abs());
            worst = worst.max((ln_convolution(&p, gamma, &table, n, x).exp() - exact).abs());
        }
    }
    Ok(worst)
}

/// Spread of (simplified − literal) allocation log weights, which must be
/// constant in `m`.
pub fn allocation_weight_spread() -> Result<f64> {
    let base = LevyParams::generalized_gamma(1.7, 0.35)?;
    let regions = [LevyParams::generalized_gamma(0.9, 0.2)?, LevyParams::generalized_gamma(2.2, 0.6)?];
    let exposures = [3.0, 0.8];
    let psi: Vec<f64> = regions.iter().zip(&exposures).map(|(p, &g)| p.psi(g)).collect();
    let t: f64 = psi.iter().sum();
    let ctx = AllocationContext::new(&base, &regions, &exposures, &psi, t);
    let base_mtp = MtpDistribution::new(base, t)?;
    let mut worst: f64 = 0.0;
    for (j, p) in regions.iter().enumerate() {
        let n = 9;
        let table = StirlingTable::new(p.alpha(), n);
        let w = convolution_table(&MtpDistribution::new(*p, exposures[j])?, n, n)?;
        for s in [0u64, 1, 4] {
            let a = allocation_log_weights(&ctx, &table, j, s, n);
            let b = allocation_log_weights_direct(&base_mtp, psi[j] / t, &w, s, n);
            let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(hi - lo);
        }
    }
    Ok(worst)
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name: name.into(), passed, detail }
}

/// Runs every check; `draws` sets the sampler GOF sample size.
pub fn run_suite(draws: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let e = levy_quadrature_error()?;
    out.push(outcome("levy-quadrature", e < 1e-8, format!("max rel err {e:.2e} over 48 settings")));

    let mut norm: f64 = 0.0;
    for (theta, alpha, gamma) in mtp_settings() {
        norm = norm.max(mtp_normalization_residual(&LevyParams::generalized_gamma(theta, alpha)?, gamma)?);
    }
    out.push(outcome("mtp-normalization", norm < 1e-8, format!("max residual {norm:.2e}")));

    let mut ls: f64 = 0.0;
    for &(theta, gamma) in &[(1.0, 0.3), (2.0, 2.0), (0.7, 12.0)] {
        ls = ls.max(log_series_error(theta, gamma)?);
    }
    out.push(outcome("mtp-log-series", ls < 1e-12, format!("max abs err {ls:.2e}")));

    let mut min_p: f64 = 1.0;
    for (i, (theta, alpha, gamma)) in mtp_settings().into_iter().enumerate() {
        let p = LevyParams::generalized_gamma(theta, alpha)?;
        min_p = min_p.min(mtp_sampler_pvalue(&p, gamma, draws, seed.wrapping_add(i as u64))?);
    }
    out.push(outcome("mtp-sampler-gof", min_p > 0.01, format!("min p-value {min_p:.3} at {draws} draws")));

    let mut conv: f64 = 0.0;
    for (theta, alpha, gamma) in convolution_settings() {
        conv = conv.max(convolution_error(theta, alpha, gamma, 8)?);
    }
    out.push(outcome("convolution-enumeration", conv < 1e-10, format!("max abs err {conv:.2e}")));

    let spread = allocation_weight_spread()?;
    out.push(outcome("allocation-weights", spread < 1e-9, format!("log-weight spread {spread:.2e}")));

    Ok(out)
}
