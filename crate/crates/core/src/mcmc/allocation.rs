//! Cluster-count allocation: convolutions of the MtP law, generalized
//! Stirling numbers, and the Gibbs update of `(X_{j,ℓ}, C_{j,·,ℓ})`.
//!
//! For i.i.d. `C_k ~ MtP(τ, γ)` with `α = α(τ)`,
//!
//! ```text
//! P(C_1 + … + C_x = n) = K^x p^n x! S_α(n, x) / n!,
//! K = θ(1 + γ)^α / ψ(γ),   p = γ / (1 + γ),
//! ```
//!
//! where `S_α(n+1, x) = (n − xα) S_α(n, x) + S_α(n, x − 1)`. The table of
//! `ln S_α` depends on `α` alone, so it is shared by every `(θ, γ)` and is
//! rebuilt only when `α` moves.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::levy::{LevyParams, MtpDistribution};
use crate::math::{ln_factorial, ln_gamma, log_add_exp, log_sum_exp, open_unit, sample_log_categorical};

/// `W[n′][x] = ln P(x i.i.d. MtP draws sum to n′)` built by the direct
/// recursion `W[n′, x] = logsumexp_c (ln pmf(c) + W[n′ − c, x − 1])`.
#[derive(Clone, Debug)]
pub struct ConvolutionTable {
    w: Vec<Vec<f64>>,
}

impl ConvolutionTable {
    pub fn get(&self, n: usize, x: usize) -> f64 {
        self.w[n][x]
    }

    pub fn n_max(&self) -> usize {
        self.w.len() - 1
    }

    pub fn x_max(&self) -> usize {
        self.w[0].len() - 1
    }
}

pub fn convolution_table(d: &MtpDistribution, n: u64, x_max: u64) -> Result<ConvolutionTable> {
    if x_max > n {
        return Err(invalid("x_max", format!("must not exceed n = {n}, got {x_max}")));
    }
    let (n, x_max) = (n as usize, x_max as usize);
    let ln_pmf: Vec<f64> = (0..=n).map(|c| d.ln_pmf(c as u64)).collect();
    let mut w = vec![vec![f64::NEG_INFINITY; x_max + 1]; n + 1];
    w[0][0] = 0.0;
    let mut terms = Vec::with_capacity(n);
    for x in 1..=x_max {
        for m in x..=n {
            terms.clear();
            terms.extend((1..=m - x + 1).map(|c| ln_pmf[c] + w[m - c][x - 1]));
            w[m][x] = log_sum_exp(&terms);
        }
    }
    Ok(ConvolutionTable { w })
}

/// `ln S_α(n, x)` for `0 ≤ x ≤ n ≤ n_max`.
#[derive(Clone, Debug)]
pub struct StirlingTable {
    alpha: f64,
    rows: Vec<Vec<f64>>,
}

impl StirlingTable {
    pub fn new(alpha: f64, n_max: u64) -> Self {
        let n_max = n_max as usize;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_max + 1);
        rows.push(vec![0.0]);
        for n in 0..n_max {
            let prev = &rows[n];
            let mut row = vec![f64::NEG_INFINITY; n + 2];
            for x in 1..=n + 1 {
                let join = if x <= n {
                    (n as f64 - x as f64 * alpha).ln() + prev[x]
                } else {
                    f64::NEG_INFINITY
                };
                row[x] = log_add_exp(join, prev[x - 1]);
            }
            rows.push(row);
        }
        Self { alpha, rows }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_max(&self) -> u64 {
        (self.rows.len() - 1) as u64
    }

    #[inline]
    pub fn ln(&self, n: u64, x: u64) -> f64 {
        if x > n {
            return f64::NEG_INFINITY;
        }
        self.rows[n as usize][x as usize]
    }
}

/// `ln K = ln θ + α ln(1 + γ) − ln ψ(γ)`.
#[inline]
pub fn ln_mtp_scale(p: &LevyParams, gamma: f64) -> f64 {
    p.theta().ln() + p.alpha() * gamma.ln_1p() - p.psi(gamma).ln()
}

/// `ln P(C_1 + … + C_x = n)` through the Stirling table.
pub fn ln_convolution(p: &LevyParams, gamma: f64, table: &StirlingTable, n: u64, x: u64) -> f64 {
    debug_assert_eq!(table.alpha(), p.alpha());
    if x == 0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let ln_p = gamma.ln() - gamma.ln_1p();
    x as f64 * ln_mtp_scale(p, gamma) + n as f64 * ln_p + ln_factorial(x) + table.ln(n, x)
        - ln_factorial(n)
}

/// Memo of Stirling tables keyed on `(α, n_max)`.
#[derive(Clone, Debug, Default)]
pub struct StirlingCache {
    tables: HashMap<(u64, u64), Arc<StirlingTable>>,
}

impl StirlingCache {
    pub fn get(&mut self, alpha: f64, n_max: u64) -> Arc<StirlingTable> {
        self.tables
            .entry((alpha.to_bits(), n_max))
            .or_insert_with(|| Arc::new(StirlingTable::new(alpha, n_max)))
            .clone()
    }

    /// Drops every table whose key is not in `keep`.
    pub fn retain(&mut self, keep: &[(f64, u64)]) {
        self.tables.retain(|&(a, n), _| keep.iter().any(|&(ka, kn)| ka.to_bits() == a && kn == n));
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Draws an ordered composition of `n` into `m` positive parts with
/// probability `∝ Π_k Γ(c_k − α) / c_k!`.
///
/// A backward pass decides which of the `n` items opens a new part using
/// `P(open | i, k) = S(i − 1, k − 1) / S(i, k)`; a forward pass then seats the
/// joining items in existing parts with weights `size − α`. The parts are
/// shuffled at the end so the result is exchangeable.
pub fn sample_composition<R: Rng + ?Sized>(table: &StirlingTable, n: u64, m: u64, rng: &mut R) -> Vec<u64> {
    assert!(m >= 1 && m <= n && n <= table.n_max(), "need 1 ≤ m ≤ n ≤ n_max");
    if m == n {
        return vec![1; n as usize];
    }
    if m == 1 {
        return vec![n];
    }
    let alpha = table.alpha();
    let mut opens = vec![false; n as usize + 1];
    let mut k = m;
    for i in (1..=n).rev() {
        if k == i {
            opens[1..=i as usize].iter_mut().for_each(|o| *o = true);
            break;
        }
        if k == 0 {
            break;
        }
        let ln_open = table.ln(i - 1, k - 1) - table.ln(i, k);
        if open_unit(rng).ln() <= ln_open {
            opens[i as usize] = true;
            k -= 1;
        }
    }
    let mut sizes: Vec<u64> = Vec::with_capacity(m as usize);
    let mut owner: Vec<usize> = Vec::with_capacity(n as usize);
    for &open in &opens[1..] {
        if open {
            owner.push(sizes.len());
            sizes.push(1);
        } else {
            // Propose a part ∝ size by picking an earlier item, accept with
            // probability (size − α)/size.
            let b = loop {
                let b = owner[rng.random_range(0..owner.len())];
                let s = sizes[b] as f64;
                if rng.random::<f64>() * s < s - alpha {
                    break b;
                }
            };
            sizes[b] += 1;
            owner.push(b);
        }
    }
    sizes.shuffle(rng);
    sizes
}

/// Quantities fixed across one allocation sweep.
#[derive(Clone, Debug)]
pub struct AllocationContext {
    pub alpha0: f64,
    /// `ln(T/(1+T)) + ln q_j + ln K_j` per region.
    pub ln_step: Vec<f64>,
}

impl AllocationContext {
    pub fn new(base: &LevyParams, regions: &[LevyParams], exposures: &[f64], psi: &[f64], t: f64) -> Self {
        let ln_p_t = t.ln() - t.ln_1p();
        let ln_step = regions
            .iter()
            .enumerate()
            .map(|(j, p)| ln_p_t + (psi[j] / t).ln() + ln_mtp_scale(p, exposures[j]))
            .collect();
        Self { alpha0: base.alpha(), ln_step }
    }
}

/// Unnormalized log weights of `X_{j,ℓ} = m`, `m = 1..=n`, given
/// `s = Σ_{v≠j} X_{v,ℓ}`:
/// `ln Γ(s + m − α_0) + m·ln_step_j + ln S_{α_j}(n, m)`.
pub fn allocation_log_weights(ctx: &AllocationContext, table: &StirlingTable, j: usize, s: u64, n: u64) -> Vec<f64> {
    (1..=n)
        .map(|m| ln_gamma((s + m) as f64 - ctx.alpha0) + m as f64 * ctx.ln_step[j] + table.ln(n, m))
        .collect()
}

/// The same weights written literally as
/// `MtP_0(s + m; T) · (s + m)!/(s! m!) · q_j^m · exp(W_j[n, m])`.
pub fn allocation_log_weights_direct(
    base: &MtpDistribution,
    q_j: f64,
    w: &ConvolutionTable,
    s: u64,
    n: u64,
) -> Vec<f64> {
    (1..=n)
        .map(|m| {
            base.ln_pmf(s + m) + ln_factorial(s + m) - ln_factorial(s) - ln_factorial(m)
                + m as f64 * q_j.ln()
                + w.get(n as usize, m as usize)
        })
        .collect()
}

/// Draws `(m, composition)` for one cell with `n ≥ 1` observations.
pub fn sample_allocation<R: Rng + ?Sized>(
    ctx: &AllocationContext,
    table: &StirlingTable,
    j: usize,
    s: u64,
    n: u64,
    rng: &mut R,
) -> (u64, Vec<u64>) {
    if n == 1 {
        return (1, vec![1]);
    }
    let lw = allocation_log_weights(ctx, table, j, s, n);
    let m = sample_log_categorical(&lw, rng) as u64 + 1;
    (m, sample_composition(table, n, m, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::composition_probability;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stirling_alpha_zero_is_unsigned_first_kind() {
        let t = StirlingTable::new(0.0, 6);
        // |s(5, 2)| = 50, |s(6, 3)| = 225
        assert!((t.ln(5, 2).exp() - 50.0).abs() < 1e-9);
        assert!((t.ln(6, 3).exp() - 225.0).abs() < 1e-9);
        assert_eq!(t.ln(4, 4), 0.0);
        assert_eq!(t.ln(3, 0), f64::NEG_INFINITY);
    }

    #[test]
    fn w32_for_log_series() {
        let d = MtpDistribution::new(LevyParams::gamma(1.0).unwrap(), 1.0).unwrap();
        let w = convolution_table(&d, 3, 3).unwrap();
        let l2 = std::f64::consts::LN_2;
        let expected = 1.0 / (8.0 * l2 * l2);
        assert!((w.get(3, 2).exp() - expected).abs() < 1e-14);
        assert!((w.get(3, 2).exp() - 0.260171).abs() < 1e-6);
    }

    #[test]
    fn direct_and_stirling_routes_agree() {
        for &(theta, alpha, gamma) in &[(1.0, 0.0, 1.0), (2.0, 0.4, 3.0), (0.5, 0.8, 0.2)] {
            let p = LevyParams::generalized_gamma(theta, alpha).unwrap();
            let d = MtpDistribution::new(p, gamma).unwrap();
            let w = convolution_table(&d, 12, 12).unwrap();
            let st = StirlingTable::new(p.alpha(), 12);
            for n in 0..=12u64 {
                for x in 0..=n {
                    let a = w.get(n as usize, x as usize);
                    let b = ln_convolution(&p, gamma, &st, n, x);
                    if a.is_finite() || b.is_finite() {
                        assert!((a - b).abs() < 1e-11 * a.abs().max(1.0), "{n} {x}: {a} {b}");
                    }
                }
                if n > 0 {
                    assert!((w.get(n as usize, 1) - d.ln_pmf(n)).abs() < 1e-13);
                    assert!((w.get(n as usize, n as usize) - n as f64 * d.ln_pmf(1)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn composition_frequencies_match_enumeration() {
        let p = LevyParams::generalized_gamma(1.0, 0.35).unwrap();
        let d = MtpDistribution::new(p, 1.0).unwrap();
        let table = StirlingTable::new(p.alpha(), 7);
        let (n, m) = (7u64, 3u64);
        let comps = crate::oracle::compositions(n, m);
        let z = composition_probability(&|c| d.ln_pmf(c).exp(), n, m);
        let probs: Vec<f64> =
            comps.iter().map(|c| c.iter().map(|&v| d.ln_pmf(v).exp()).product::<f64>() / z).collect();
        let mut counts = vec![0u64; comps.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..60_000 {
            let c = sample_composition(&table, n, m, &mut rng);
            assert_eq!(c.iter().sum::<u64>(), n);
            counts[comps.iter().position(|v| *v == c).unwrap()] += 1;
        }
        let (_, _, pval) = crate::oracle::chi_square_gof(&counts, &probs);
        assert!(pval > 0.01, "p = {pval}");
    }

    #[test]
    fn weights_match_literal_form_up_to_constant() {
        let base = LevyParams::generalized_gamma(2.0, 0.3).unwrap();
        let regions = [LevyParams::generalized_gamma(1.0, 0.5).unwrap(), LevyParams::gamma(0.7).unwrap()];
        let ex = [3.0, 1.5];
        let psi: Vec<f64> = regions.iter().zip(&ex).map(|(p, &g)| p.psi(g)).collect();
        let t: f64 = psi.iter().sum();
        let ctx = AllocationContext::new(&base, &regions, &ex, &psi, t);
        let base_d = MtpDistribution::new(base, t).unwrap();
        for j in 0..2 {
            let d = MtpDistribution::new(regions[j], ex[j]).unwrap();
            let w = convolution_table(&d, 9, 9).unwrap();
            let st = StirlingTable::new(regions[j].alpha(), 9);
            for &(s, n) in &[(0u64, 9u64), (3, 5), (1, 1)] {
                let a = allocation_log_weights(&ctx, &st, j, s, n);
                let b = allocation_log_weights_direct(&base_d, psi[j] / t, &w, s, n);
                let off = a[0] - b[0];
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y - off).abs() < 1e-10, "{x} {y}");
                }
            }
        }
    }

    #[test]
    fn cache_reuses_and_retains() {
        let mut c = StirlingCache::default();
        let a = c.get(0.25, 10);
        let b = c.get(0.25, 10);
        assert!(Arc::ptr_eq(&a, &b));
        c.get(0.5, 10);
        assert_eq!(c.len(), 2);
        c.retain(&[(0.5, 10)]);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn large_table_is_finite() {
        let t = StirlingTable::new(0.9, 2000);
        assert!(t.ln(2000, 1).is_finite() && t.ln(2000, 1000).is_finite() && t.ln(2000, 2000) == 0.0);
    }
}
