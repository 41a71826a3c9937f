//! Exponentially tilted subordinator increments and posterior jump sizes.
//!
//! For `α > 0` the tilted remainder `σ'(H)` with Lévy density `H τ(s) e^{−γs}`
//! is an exponentially tilted positive stable variable: with `V = Hθ/α` and
//! `h = 1 + γ` its Laplace transform is `exp{−V[(h + t)^α − h^α]}`. It is drawn
//! by naive rejection from a positive stable proposal when `V h^α ≤ 1`, and by
//! Devroye's double-rejection scheme otherwise. All draws are produced as
//! logarithms so tiny rates never underflow to zero.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::LevyParams;
use crate::error::{invalid, Result};
use crate::math::{open_unit, sample_ln_gamma};

const NAIVE_LIMIT: f64 = 1.0;

/// Draws `σ'(H)`: Laplace transform `exp{−H[ψ(γ + t) − ψ(γ)]}`.
pub fn tilted_subordinator_sample<R: Rng + ?Sized>(
    p: &LevyParams,
    scale: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(invalid("scale", format!("must be finite and positive, got {scale}")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(invalid("gamma", format!("must be finite and non-negative, got {gamma}")));
    }
    Ok(ln_tilted_subordinator_sample(p, scale.ln(), gamma, rng).exp())
}

/// Log of a [`tilted_subordinator_sample`] draw, taking `ln H`.
pub fn ln_tilted_subordinator_sample<R: Rng + ?Sized>(
    p: &LevyParams,
    ln_scale: f64,
    gamma: f64,
    rng: &mut R,
) -> f64 {
    let rate = 1.0 + gamma;
    let alpha = p.alpha();
    if alpha == 0.0 {
        return sample_ln_gamma(ln_scale.exp() * p.theta(), rate, rng);
    }
    let ln_v = ln_scale + p.theta().ln() - alpha.ln();
    ln_tilted_stable(alpha, ln_v, rate, rng)
}

/// Posterior jump size given `c` observations from that jump: density
/// `∝ s^c e^{−γs} τ(s)`, i.e. Gamma(shape `c − α`, rate `1 + γ`).
pub fn jump_posterior_sample<R: Rng + ?Sized>(
    p: &LevyParams,
    c: u64,
    gamma: f64,
    rng: &mut R,
) -> Result<f64> {
    let shape = c as f64 - p.alpha();
    if !(shape > 0.0) {
        return Err(invalid("c", format!("jump posterior needs c − α > 0, got c = {c}")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(invalid("gamma", format!("must be finite and non-negative, got {gamma}")));
    }
    Ok(sample_ln_gamma(shape, 1.0 + gamma, rng).exp())
}

/// Log of the sum of `clusters` independent posterior jumps whose sizes add
/// up to `total`: Gamma(`total − clusters·α`, `1 + γ`) by gamma additivity.
pub fn ln_jump_sum_sample<R: Rng + ?Sized>(
    p: &LevyParams,
    total: u64,
    clusters: u64,
    gamma: f64,
    rng: &mut R,
) -> f64 {
    if clusters == 0 {
        return f64::NEG_INFINITY;
    }
    let shape = total as f64 - clusters as f64 * p.alpha();
    sample_ln_gamma(shape, 1.0 + gamma, rng)
}

/// `ln S` with `E e^{−tS} = e^{−t^α}` (Kanter's representation).
pub fn ln_positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = PI * open_unit(rng);
    let e: f64 = Exp1.sample(rng);
    (1.0 - alpha) / alpha * (ln_zolotarev(u, alpha) - e.ln())
}

/// `ln X` for `X` with Laplace transform `exp{−V[(h + t)^α − h^α]}`, `V = e^{ln_v}`.
pub fn ln_tilted_stable<R: Rng + ?Sized>(alpha: f64, ln_v: f64, h: f64, rng: &mut R) -> f64 {
    debug_assert!(alpha > 0.0 && alpha < 1.0 && h > 0.0);
    let lambda_alpha = (ln_v + alpha * h.ln()).exp();
    if lambda_alpha <= NAIVE_LIMIT {
        naive_rejection(alpha, ln_v, h, rng)
    } else {
        double_rejection(alpha, ln_v, lambda_alpha, rng)
    }
}

fn naive_rejection<R: Rng + ?Sized>(alpha: f64, ln_v: f64, h: f64, rng: &mut R) -> f64 {
    loop {
        let ln_s = ln_v / alpha + ln_positive_stable(alpha, rng);
        if open_unit(rng).ln() <= -h * ln_s.exp() {
            return ln_s;
        }
    }
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `ln A(u)` for Zolotarev's function
/// `A(u) = [sin(αu)^α sin((1−α)u)^{1−α} / sin u]^{1/(1−α)}`.
#[inline]
fn ln_zolotarev(u: f64, alpha: f64) -> f64 {
    let ia = 1.0 - alpha;
    (ia * (ia * sinc(ia * u)).ln() + alpha * (alpha * sinc(alpha * u)).ln() - sinc(u).ln()) / ia
}

/// `B(u)/B(0)` with `B = A^{−(1−α)}`.
#[inline]
fn b_ratio(u: f64, alpha: f64) -> f64 {
    let ia = 1.0 - alpha;
    sinc(u) / (sinc(alpha * u).powf(alpha) * sinc(ia * u).powf(ia))
}

/// Devroye's double-rejection sampler for the tilted stable law with Laplace
/// transform `exp{−((λ + t)^α − λ^α)}`, rescaled by `V^{1/α}`.
fn double_rejection<R: Rng + ?Sized>(
    alpha: f64,
    ln_v: f64,
    lambda_alpha: f64,
    rng: &mut R,
) -> f64 {
    let c1 = FRAC_PI_2.sqrt();
    let c2 = 2.0 + c1;
    let b = (1.0 - alpha) / alpha;
    let ln_lambda = lambda_alpha.ln() / alpha;

    let gam = lambda_alpha * alpha * (1.0 - alpha);
    let sg = gam.sqrt();
    let c3 = c2 * sg;
    let xi = (1.0 + SQRT_2 * c3) / PI;
    let psi = c3 * (-gam * PI * PI / 8.0).exp() / PI.sqrt();
    let w1 = c1 * xi / sg;
    let w2 = 2.0 * PI.sqrt() * psi;
    let w3 = xi * PI;

    loop {
        // Outer proposal for the Zolotarev angle U and the envelope height.
        let (u, z, zz) = loop {
            let v: f64 = rng.random();
            let u = if gam >= 1.0 {
                if v < w1 / (w1 + w2) {
                    let n: f64 = StandardNormal.sample(rng);
                    n.abs() / sg
                } else {
                    let w: f64 = rng.random();
                    PI * (1.0 - w * w)
                }
            } else {
                let w: f64 = rng.random();
                if v < w3 / (w2 + w3) {
                    PI * w
                } else {
                    PI * (1.0 - w * w)
                }
            };
            let w: f64 = rng.random();
            if !(u < PI) {
                continue;
            }
            let zeta = b_ratio(u, alpha).sqrt();
            let z = 1.0 / (1.0 - (1.0 + alpha * zeta / sg).powf(-1.0 / alpha));
            let mut rho = PI * (-lambda_alpha * (1.0 - 1.0 / (zeta * zeta))).exp()
                / ((1.0 + c1) * sg / zeta + z);
            let mut d = 0.0;
            if u >= 0.0 && gam >= 1.0 {
                d += xi * (-gam * u * u / 2.0).exp();
            }
            if u > 0.0 && u < PI {
                d += psi / (PI - u).sqrt();
            }
            if u >= 0.0 && u <= PI && gam < 1.0 {
                d += xi;
            }
            rho *= d;
            let zz = w * rho;
            if zz <= 1.0 {
                break (u, z, zz);
            }
        };

        let a = ln_zolotarev(u, alpha).exp();
        let m = (b / a).powf(alpha) * lambda_alpha;
        let delta = (m * alpha / a).sqrt();
        let a1 = delta * c1;
        let a3 = z / a;
        let s = a1 + delta + a3;
        let v: f64 = rng.random();
        let mut n_ = 0.0;
        let mut e_ = 0.0;
        let x = if v < a1 / s {
            n_ = StandardNormal.sample(rng);
            m - delta * f64::abs(n_)
        } else if v < (a1 + delta) / s {
            let w: f64 = rng.random();
            m + delta * w
        } else {
            e_ = Exp1.sample(rng);
            m + delta + e_ * a3
        };
        if !(x > 0.0) {
            continue;
        }
        let big_e = -zz.ln();
        let mut c = a * (x - m) + (ln_lambda - b * m.ln()).exp() * ((m / x).powf(b) - 1.0);
        if x < m {
            c -= n_ * n_ / 2.0;
        } else if x > m + delta {
            c -= e_;
        }
        if c <= big_e {
            return ln_v / alpha - b * x.ln();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn gamma_remainder_mean() {
        let p = LevyParams::gamma(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| tilted_subordinator_sample(&p, 2.0, 1.0, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - 1.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn stable_remainder_mean() {
        let p = LevyParams::generalized_gamma(1.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| tilted_subordinator_sample(&p, 1.0, 1.0, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - std::f64::consts::FRAC_1_SQRT_2).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn double_rejection_branch_mean() {
        // V = Hθ/α = 20, h = 5: V h^α ≈ 32, well above the naive limit.
        let p = LevyParams::generalized_gamma(2.0, 0.3).unwrap();
        let (h, gamma) = (3.0, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| tilted_subordinator_sample(&p, h, gamma, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_and_se(&xs);
        let expect = h * p.psi_prime(gamma);
        assert!((m - expect).abs() < 3.0 * se, "{m} vs {expect} ± {se}");
    }

    #[test]
    fn positive_stable_laplace_transform() {
        let alpha = 0.6;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| ln_positive_stable(alpha, &mut rng).exp()).collect();
        for &t in &[0.5, 1.0, 2.0] {
            let vals: Vec<f64> = xs.iter().map(|x| (-t * x).exp()).collect();
            let (m, se) = mean_and_se(&vals);
            let target = (-f64::powf(t, alpha)).exp();
            assert!((m - target).abs() < 3.0 * se, "t={t}: {m} vs {target}");
        }
    }

    #[test]
    fn jump_posterior_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ga = LevyParams::gamma(1.0).unwrap();
        let xs: Vec<f64> =
            (0..100_000).map(|_| jump_posterior_sample(&ga, 3, 1.0, &mut rng).unwrap()).collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - 1.5).abs() < 3.0 * se);
        let gg = LevyParams::generalized_gamma(1.0, 0.5).unwrap();
        let xs: Vec<f64> =
            (0..100_000).map(|_| jump_posterior_sample(&gg, 1, 0.0, &mut rng).unwrap()).collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = LevyParams::gamma(1.0).unwrap();
        assert!(tilted_subordinator_sample(&p, 0.0, 1.0, &mut rng).is_err());
        assert!(tilted_subordinator_sample(&p, -1.0, 1.0, &mut rng).is_err());
        assert!(tilted_subordinator_sample(&p, 1.0, -1.0, &mut rng).is_err());
        assert!(jump_posterior_sample(&p, 0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn tiny_scales_stay_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in [LevyParams::gamma(0.5).unwrap(), LevyParams::generalized_gamma(0.5, 0.4).unwrap()] {
            for _ in 0..1000 {
                let l = ln_tilted_subordinator_sample(&p, (1e-6f64).ln(), 2.0, &mut rng);
                assert!(l.is_finite());
            }
        }
    }
}
