//! Independent reference computations used to check the fast paths:
//! adaptive quadrature of the defining Lévy integrals, brute-force
//! enumeration of compositions and allocations, goodness-of-fit statistics,
//! and a splitting-based tilted stable sampler.
//!
//! Nothing here calls into the closed forms, DP tables or samplers it is
//! meant to check.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

// ---------------------------------------------------------------------------
// Quadrature

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integral of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let (whole, _) = gauss_kronrod(&f, a, b);
    let abs_tol = rel_tol * whole.abs().max(f64::MIN_POSITIVE);
    let mut stack = vec![(a, b, 0usize)];
    let mut total = 0.0;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (est, err) = gauss_kronrod(&f, lo, hi);
        let width_share = (hi - lo) / (b - a);
        if err <= abs_tol * width_share.max(1e-6) || depth >= 50 {
            total += est;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    total
}

/// Lower limit in `u = ln s` beyond which an integrand bounded by
/// `scale · e^{rate·u}` is negligible.
fn lower_limit(rate: f64, scale: f64) -> f64 {
    ((1e-20 / scale.max(1e-300)).ln() / rate).min(-5.0)
}

/// `∫ (1 − e^{−γs}) θ/Γ(1−α) s^{−1−α} e^{−s} ds` by quadrature in `ln s`.
pub fn laplace_exponent_quadrature(theta: f64, alpha: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let norm = theta / ln_gamma(1.0 - alpha).exp();
    let f = |u: f64| {
        let s = u.exp();
        -(-gamma * s).exp_m1() * (-alpha * u - s).exp()
    };
    let lo = lower_limit(1.0 - alpha, gamma / (1.0 - alpha));
    let hi = 800f64.ln();
    norm * integrate(f, lo, hi, 1e-13)
}

/// `∫ s^c e^{−γs} θ/Γ(1−α) s^{−1−α} e^{−s} ds` by quadrature in `ln s`.
pub fn tilted_moment_quadrature(theta: f64, alpha: f64, c: u32, gamma: f64) -> f64 {
    let norm = theta / ln_gamma(1.0 - alpha).exp();
    let rate = 1.0 + gamma;
    let k = c as f64 - alpha;
    // Integrand peaks at s = k / rate; centre the window there.
    let peak = (k / rate).ln();
    let scale = (k * peak - k).exp();
    let f = |u: f64| ((k * u - rate * u.exp()) - (k * peak - k)).exp();
    let lo = peak + lower_limit(k, 1.0 / k);
    let hi = (800.0 / rate).max(10.0 * k / rate).ln();
    norm * scale * integrate(f, lo, hi, 1e-13)
}

// ---------------------------------------------------------------------------
// Enumeration

/// `P(C_1 + … + C_x = n)` for i.i.d. `C_k` with pmf `pmf(c)`, `c ≥ 1`, by
/// summing over every ordered composition.
pub fn composition_probability<F: Fn(u64) -> f64>(pmf: &F, n: u64, x: u64) -> f64 {
    fn go<F: Fn(u64) -> f64>(pmf: &F, n: u64, x: u64) -> f64 {
        if x == 0 {
            return if n == 0 { 1.0 } else { 0.0 };
        }
        if n < x {
            return 0.0;
        }
        (1..=n - x + 1).map(|c| pmf(c) * go(pmf, n - c, x - 1)).sum()
    }
    go(pmf, n, x)
}

/// Every ordered composition of `n` into `x` positive parts.
pub fn compositions(n: u64, x: u64) -> Vec<Vec<u64>> {
    fn go(n: u64, x: u64, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if x == 0 {
            if n == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        if n < x {
            return;
        }
        for c in 1..=n - x + 1 {
            prefix.push(c);
            go(n - c, x - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(n, x, &mut Vec::new(), &mut out);
    out
}

/// Exact conditional law of the regional cluster counts `(X_1, …, X_J)` of a
/// single species given its regional totals, under
/// `X ~ MtP_0(T)`, `(X_j) | X ~ Multinomial(X; q)`, `C_{j,k} ~ MtP_j` i.i.d.
///
/// `base_pmf(x)` is `MtP_0(x; T)`; `region_pmf[j](c)` is `MtP_j(c; Γ_j)`.
/// Returns `(X vector, probability)` pairs.
pub fn exact_allocation_posterior(
    totals: &[u64],
    q: &[f64],
    base_pmf: &dyn Fn(u64) -> f64,
    region_pmf: &[&dyn Fn(u64) -> f64],
) -> Vec<(Vec<u64>, f64)> {
    let ranges: Vec<Vec<u64>> =
        totals.iter().map(|&n| if n == 0 { vec![0] } else { (1..=n).collect() }).collect();
    let mut configs: Vec<Vec<u64>> = vec![vec![]];
    for r in &ranges {
        configs = configs
            .into_iter()
            .flat_map(|c| {
                r.iter().map(move |&v| {
                    let mut c = c.clone();
                    c.push(v);
                    c
                })
            })
            .collect();
    }
    let mut weights = Vec::with_capacity(configs.len());
    for xs in &configs {
        let total: u64 = xs.iter().sum();
        let mut w = base_pmf(total);
        // multinomial coefficient and probabilities
        let mut coef = factorial(total);
        for (j, &x) in xs.iter().enumerate() {
            coef /= factorial(x);
            w *= q[j].powi(x as i32);
            w *= composition_probability(&|c| region_pmf[j](c), totals[j], x);
        }
        weights.push(w * coef);
    }
    let z: f64 = weights.iter().sum();
    configs.into_iter().zip(weights).map(|(c, w)| (c, w / z)).collect()
}

fn factorial(n: u64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

// ---------------------------------------------------------------------------
// Goodness of fit

pub fn chi_square_sf(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(stat)
}

/// Pearson goodness-of-fit test of observed counts against cell probabilities.
/// Cells are merged left to right until each expected count is at least 5;
/// the final cell absorbs the residual probability mass. Returns
/// `(statistic, dof, p-value)`.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> (f64, usize, f64) {
    let n: u64 = observed.iter().sum();
    let n = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    let mut used_p = 0.0;
    for (i, &o) in observed.iter().enumerate() {
        let p = probs.get(i).copied().unwrap_or(0.0);
        used_p += p;
        o_acc += o as f64;
        e_acc += n * p;
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    e_acc += n * (1.0 - used_p).max(0.0);
    if let Some(last) = cells.last_mut() {
        last.0 += o_acc;
        last.1 += e_acc;
    } else {
        cells.push((o_acc, e_acc));
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = cells.len().saturating_sub(1);
    (stat, dof, chi_square_sf(stat, dof))
}

/// Two-sample chi-square homogeneity test on non-negative integer samples.
/// Values are binned left to right so every bin holds at least 10 pooled
/// observations.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    let max = a.iter().chain(b).copied().max().unwrap_or(0) as usize;
    let mut ca = vec![0f64; max + 1];
    let mut cb = vec![0f64; max + 1];
    for &v in a {
        ca[v as usize] += 1.0;
    }
    for &v in b {
        cb[v as usize] += 1.0;
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut xa, mut xb) = (0.0, 0.0);
    for v in 0..=max {
        xa += ca[v];
        xb += cb[v];
        if xa + xb >= 10.0 {
            bins.push((xa, xb));
            xa = 0.0;
            xb = 0.0;
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += xa;
        last.1 += xb;
    } else {
        bins.push((xa, xb));
    }
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let n = na + nb;
    let mut stat = 0.0;
    for &(oa, ob) in &bins {
        let tot = oa + ob;
        let ea = tot * na / n;
        let eb = tot * nb / n;
        stat += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let dof = bins.len().saturating_sub(1);
    (stat, dof, chi_square_sf(stat, dof))
}

/// Asymptotic Kolmogorov tail probability `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test. Returns `(D, p-value)`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    let sn = n.sqrt();
    (d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d))
}

/// Two-sample Kolmogorov–Smirnov test for continuous samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|x, y| x.partial_cmp(y).expect("no NaN"));
    xb.sort_by(|x, y| x.partial_cmp(y).expect("no NaN"));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    (d, kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d))
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// Mean and standard error from batch means, for autocorrelated sequences.
pub fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let size = xs.len() / batches;
    let means: Vec<f64> =
        xs.chunks(size).take(batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    mean_se(&means)
}

// ---------------------------------------------------------------------------
// Independent samplers

/// Positive stable draw with `E e^{−tS} = e^{−t^α}` via the
/// Chambers–Mallows–Stuck form.
pub fn stable_cms<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = PI * (1.0 - rng.random::<f64>());
    let w: f64 = Exp1.sample(rng);
    let s1 = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let s2 = (((1.0 - alpha) * u).sin() / w).powf((1.0 - alpha) / alpha);
    s1 * s2
}

/// Tilted stable draw with Laplace transform `exp{−V[(h + t)^α − h^α]}`,
/// built as a sum of `n = ⌈V h^α⌉` independent pieces each drawn by naive
/// rejection (acceptance probability at least `e^{−1}` per piece).
pub fn tilted_stable_by_splitting<R: Rng + ?Sized>(alpha: f64, v: f64, h: f64, rng: &mut R) -> f64 {
    let pieces = (v * h.powf(alpha)).ceil().max(1.0) as usize;
    let piece_v = v / pieces as f64;
    let scale = piece_v.powf(1.0 / alpha);
    (0..pieces)
        .map(|_| loop {
            let s = scale * stable_cms(alpha, rng);
            if rng.random::<f64>() <= (-h * s).exp() {
                break s;
            }
        })
        .sum()
}
