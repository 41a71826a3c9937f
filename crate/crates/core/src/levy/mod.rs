//! Generalized-Gamma Lévy measures
//! `τ(s) = θ / Γ(1 − α) · s^{−1−α} e^{−s}` and their Gamma (`α = 0`) special case.
//!
//! Everything here is closed form: the Laplace exponent
//! `ψ(γ) = ∫ (1 − e^{−γs}) τ(ds)`, the tilted moments
//! `ψ^{(c)}(γ) = ∫ s^c e^{−γs} τ(s) ds`, the mixed truncated Poisson law built
//! from them, and the exact samplers needed by the generative model and the
//! posterior.

mod mtp;
mod tilted;

pub use mtp::{log_mtp_pmf, mtp_pmf, MtpDistribution};
pub use tilted::{
    jump_posterior_sample, ln_jump_sum_sample, ln_positive_stable, ln_tilted_stable,
    ln_tilted_subordinator_sample, tilted_subordinator_sample,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::ln_gamma;

/// Below this, `α` is treated as exactly zero.
pub const ALPHA_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Generalized Gamma, `0 ≤ α < 1`.
    GG,
    /// Gamma, `α = 0`.
    GA,
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GG" => Ok(Family::GG),
            "GA" => Ok(Family::GA),
            other => Err(format!("unknown family `{other}` (expected GG or GA)")),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::GG => "GG",
            Family::GA => "GA",
        })
    }
}

/// Mass `θ > 0` and diversity `α ∈ [0, 1)` of one Lévy measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevyParams {
    theta: f64,
    alpha: f64,
    family: Family,
}

impl LevyParams {
    pub fn new(theta: f64, alpha: f64, family: Family) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(invalid("theta", format!("must be finite and positive, got {theta}")));
        }
        if !(alpha.is_finite() && (0.0..1.0).contains(&alpha)) {
            return Err(invalid("alpha", format!("must lie in [0, 1), got {alpha}")));
        }
        let alpha = match family {
            Family::GA => 0.0,
            Family::GG if alpha < ALPHA_CLAMP => 0.0,
            Family::GG => alpha,
        };
        Ok(Self { theta, alpha, family })
    }

    pub fn gamma(theta: f64) -> Result<Self> {
        Self::new(theta, 0.0, Family::GA)
    }

    pub fn generalized_gamma(theta: f64, alpha: f64) -> Result<Self> {
        Self::new(theta, alpha, Family::GG)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// `ψ(γ)`, unchecked.
    #[inline]
    pub fn psi(&self, gamma: f64) -> f64 {
        let l = gamma.ln_1p();
        if self.alpha == 0.0 {
            self.theta * l
        } else {
            self.theta * (self.alpha * l).exp_m1() / self.alpha
        }
    }

    /// `ψ'(γ) = θ (1 + γ)^{α−1}`, the mean of `σ(1)` tilted by `e^{−γs}`.
    #[inline]
    pub fn psi_prime(&self, gamma: f64) -> f64 {
        self.theta * ((self.alpha - 1.0) * gamma.ln_1p()).exp()
    }

    /// `ln ψ^{(c)}(γ) = ln θ + ln Γ(c − α) − ln Γ(1 − α) + (α − c) ln(1 + γ)`.
    #[inline]
    pub fn ln_tilted_moment(&self, c: f64, gamma: f64) -> f64 {
        self.theta.ln() + ln_gamma(c - self.alpha) - ln_gamma(1.0 - self.alpha)
            + (self.alpha - c) * gamma.ln_1p()
    }
}

fn check_exposure(gamma: f64) -> Result<()> {
    if !gamma.is_finite() {
        return Err(invalid("gamma", format!("must be finite, got {gamma}")));
    }
    if gamma < 0.0 {
        return Err(invalid("gamma", format!("must be non-negative, got {gamma}")));
    }
    Ok(())
}

/// `ψ(γ) = θ((1 + γ)^α − 1)/α`, or `θ log(1 + γ)` when `α = 0`.
pub fn laplace_exponent(p: &LevyParams, gamma: f64) -> Result<f64> {
    check_exposure(gamma)?;
    Ok(p.psi(gamma))
}

/// `Ψ_0(t)` for the base measure. Same formula as [`laplace_exponent`]; kept
/// separate because it is evaluated at `t = Σ_j ψ_j(Γ_j)` rather than an
/// exposure.
pub fn base_laplace_exponent(p0: &LevyParams, t: f64) -> Result<f64> {
    laplace_exponent(p0, t)
}

/// `ψ^{(c)}(γ) = θ Γ(c − α)/Γ(1 − α) · (1 + γ)^{α − c}`.
pub fn tilted_moment(p: &LevyParams, c: u64, gamma: f64) -> Result<f64> {
    check_exposure(gamma)?;
    if c == 0 {
        return Err(invalid("c", "tilted moments are defined for c ≥ 1"));
    }
    Ok(p.ln_tilted_moment(c as f64, gamma).exp())
}
