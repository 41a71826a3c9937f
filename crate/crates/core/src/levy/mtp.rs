use rand::Rng;

use super::LevyParams;
use crate::error::{invalid, Result};
use crate::math::{ln_gamma, ln_gamma_ratio};

const TAIL_TOL: f64 = 1e-10;
const MAX_TABLE: usize = 1 << 20;

/// `ln MtP(c; τ, γ) = ln[γ^c ψ^{(c)}(γ) / (ψ(γ) c!)]` for `c ≥ 1`, `γ > 0`.
#[inline]
pub fn log_mtp_pmf(p: &LevyParams, gamma: f64, c: u64) -> f64 {
    debug_assert!(c >= 1 && gamma > 0.0);
    log_norm(p, gamma) + ln_gamma_ratio(c as f64, p.alpha()) + c as f64 * ln_odds(gamma)
}

/// `ln[θ (1 + γ)^α / (Γ(1 − α) ψ(γ))]`, the `c`-free part of the log pmf.
#[inline]
fn log_norm(p: &LevyParams, gamma: f64) -> f64 {
    p.theta().ln() + p.alpha() * gamma.ln_1p() - ln_gamma(1.0 - p.alpha()) - p.psi(gamma).ln()
}

/// `ln(γ / (1 + γ))`.
#[inline]
fn ln_odds(gamma: f64) -> f64 {
    gamma.ln() - gamma.ln_1p()
}

pub fn mtp_pmf(d: &MtpDistribution, c: u64) -> Result<f64> {
    if c == 0 {
        return Err(invalid("c", "MtP is supported on {1, 2, ...}"));
    }
    Ok(d.ln_pmf(c).exp())
}

/// Mixed truncated Poisson law `MtP(τ, γ)` with a cached inverse-CDF table.
///
/// The table runs until the geometric tail bound `pmf(K)·γ` drops below
/// `1e-10` (successive pmf ratios are `p (c − α)/(c + 1) < p = γ/(1 + γ)`).
/// Draws that land beyond the table walk the pmf recurrence onwards.
#[derive(Clone, Debug)]
pub struct MtpDistribution {
    params: LevyParams,
    exposure: f64,
    ln_norm: f64,
    ln_odds: f64,
    /// `cdf[k]` = P(C ≤ k + 1).
    cdf: Vec<f64>,
    /// Log pmf at the last tabulated value.
    last_ln_pmf: f64,
}

impl MtpDistribution {
    pub fn new(params: LevyParams, exposure: f64) -> Result<Self> {
        if !(exposure.is_finite() && exposure > 0.0) {
            return Err(invalid("exposure", format!("must be finite and positive, got {exposure}")));
        }
        let ln_norm = log_norm(&params, exposure);
        let ln_odds = ln_odds(exposure);
        let alpha = params.alpha();
        let mut cdf = Vec::new();
        let mut lp = ln_norm + ln_gamma_ratio(1.0, alpha) + ln_odds;
        let mut acc = 0.0;
        let mut c = 1u64;
        loop {
            acc += lp.exp();
            cdf.push(acc);
            if lp + exposure.ln() < TAIL_TOL.ln() || cdf.len() >= MAX_TABLE {
                break;
            }
            lp += ln_odds + (c as f64 - alpha).ln() - (c as f64 + 1.0).ln();
            c += 1;
        }
        Ok(Self { params, exposure, ln_norm, ln_odds, cdf, last_ln_pmf: lp })
    }

    pub fn params(&self) -> &LevyParams {
        &self.params
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    /// Largest tabulated value.
    pub fn cutoff(&self) -> u64 {
        self.cdf.len() as u64
    }

    /// Sum of the pmf over `1..=cutoff`.
    pub fn tabulated_mass(&self) -> f64 {
        *self.cdf.last().expect("table is never empty")
    }

    /// Upper bound on the mass beyond the table.
    pub fn tail_bound(&self) -> f64 {
        (self.last_ln_pmf + self.exposure.ln()).exp()
    }

    pub fn ln_pmf(&self, c: u64) -> f64 {
        if c == 0 {
            return f64::NEG_INFINITY;
        }
        self.ln_norm + ln_gamma_ratio(c as f64, self.params.alpha()) + c as f64 * self.ln_odds
    }

    /// `E[C] = γθ / ψ(γ)`.
    pub fn mean(&self) -> f64 {
        self.exposure * self.params.theta() / self.params.psi(self.exposure)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }

    /// Smallest `c` with `P(C ≤ c) > u`.
    pub fn quantile(&self, u: f64) -> u64 {
        let last = self.tabulated_mass();
        if u < last {
            return self.cdf.partition_point(|&v| v <= u) as u64 + 1;
        }
        let alpha = self.params.alpha();
        let mut c = self.cdf.len() as u64;
        let mut lp = self.last_ln_pmf;
        let mut acc = last;
        loop {
            lp += self.ln_odds + (c as f64 - alpha).ln() - (c as f64 + 1.0).ln();
            c += 1;
            acc += lp.exp();
            if acc > u || lp < -745.0 {
                return c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::Family;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pmf_examples() {
        let ga = MtpDistribution::new(LevyParams::gamma(1.0).unwrap(), 1.0).unwrap();
        assert!((mtp_pmf(&ga, 1).unwrap() - 0.5 / std::f64::consts::LN_2).abs() < 1e-12);
        let gg =
            MtpDistribution::new(LevyParams::generalized_gamma(1.0, 0.5).unwrap(), 1.0).unwrap();
        assert!((mtp_pmf(&gg, 1).unwrap() - 0.853553).abs() < 1e-6);
        assert!(mtp_pmf(&gg, 0).is_err());
    }

    #[test]
    fn table_is_normalised() {
        for &alpha in &[0.0, 0.3, 0.9] {
            for &g in &[1e-3, 0.1, 1.0, 10.0, 300.0] {
                let p = LevyParams::new(1.7, alpha, Family::GG).unwrap();
                let d = MtpDistribution::new(p, g).unwrap();
                assert!((d.tabulated_mass() - 1.0).abs() < 1e-8, "{alpha} {g} {}", d.tabulated_mass());
                assert!(d.tail_bound() < 1e-10);
            }
        }
    }

    #[test]
    fn draws_are_positive_and_mean_matches() {
        let d = MtpDistribution::new(LevyParams::gamma(1.0).unwrap(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let c = d.sample(&mut rng);
            assert!(c >= 1);
            sum += c as f64;
            sq += (c * c) as f64;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.0 / std::f64::consts::LN_2).abs() < 3.0 * se, "{mean} ± {se}");
        assert!((d.mean() - 1.442695).abs() < 1e-6);
    }

    #[test]
    fn frequency_of_one_matches_pmf() {
        let d = MtpDistribution::new(LevyParams::generalized_gamma(1.0, 0.5).unwrap(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let ones = (0..n).filter(|_| d.sample(&mut rng) == 1).count() as f64 / n as f64;
        let p = 0.853553;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((ones - p).abs() < 3.0 * se, "{ones}");
    }

    #[test]
    fn quantile_walks_past_table() {
        let d = MtpDistribution::new(LevyParams::generalized_gamma(1.0, 0.8).unwrap(), 50.0).unwrap();
        let beyond = d.quantile(1.0 - 1e-16);
        assert!(beyond >= d.cutoff());
    }
}
