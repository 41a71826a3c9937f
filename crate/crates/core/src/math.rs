//! Log-space numerics shared by the samplers.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use statrs::function::factorial;
use statrs::function::gamma as sgamma;

pub fn ln_gamma(x: f64) -> f64 {
    sgamma::ln_gamma(x)
}

pub fn ln_factorial(n: u64) -> f64 {
    factorial::ln_factorial(n)
}

/// `ln Γ(c − α) − ln Γ(c + 1)` without cancellation for large `c`.
pub fn ln_gamma_ratio(c: f64, alpha: f64) -> f64 {
    if c < 30.0 {
        return ln_gamma(c - alpha) - ln_gamma(c + 1.0);
    }
    let x1 = c - alpha;
    let x2 = c + 1.0;
    let l1 = (-alpha / c).ln_1p();
    let l2 = (1.0 / c).ln_1p();
    let main = -(1.0 + alpha) * c.ln() + (x1 - 0.5) * l1 - (x2 - 0.5) * l2 + (1.0 + alpha);
    main + stirling_tail(x1) - stirling_tail(x2)
}

fn stirling_tail(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 / 1680.0)))
}

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub fn ln_poisson_pmf(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * mean.ln() - mean - ln_factorial(k)
}

/// Poisson log pmf from `ln mean`, exact even when the mean underflows.
pub fn ln_poisson_pmf_log_mean(k: u64, ln_mean: f64) -> f64 {
    if ln_mean == f64::NEG_INFINITY {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let tail = if k == 0 { 0.0 } else { k as f64 * ln_mean };
    tail - ln_mean.exp() - ln_factorial(k)
}

/// Uniform draw on `(0, 1]`.
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Logarithm of a Gamma(shape, rate) draw. Small shapes go through the
/// `G(a) = G(a + 1) U^{1/a}` boost in log space so the result never underflows.
pub fn sample_ln_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0);
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng);
        g.ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("valid gamma").sample(rng);
        g.ln() + open_unit(rng).ln() / shape - rate.ln()
    }
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    sample_ln_gamma(shape, rate, rng).exp()
}

pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Multinomial draw via sequential conditional binomials. `weights` need not be
/// normalised.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, weights: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0u64; weights.len()];
    let mut remaining_n = n;
    let mut remaining_w: f64 = weights.iter().sum();
    for (i, &w) in weights.iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        if i + 1 == weights.len() || remaining_w <= w {
            out[i] = remaining_n;
            break;
        }
        let p = (w / remaining_w).clamp(0.0, 1.0);
        let k = Binomial::new(remaining_n, p).expect("valid binomial").sample(rng);
        out[i] = k;
        remaining_n -= k;
        remaining_w -= w;
    }
    out
}

/// Draws an index with probability proportional to `exp(log_weights[i])`.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_weights.iter().map(|&w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in log_weights.iter().enumerate() {
        u -= (w - max).exp();
        if u < 0.0 {
            return i;
        }
    }
    log_weights
        .iter()
        .rposition(|&w| w > f64::NEG_INFINITY)
        .unwrap_or(log_weights.len() - 1)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
