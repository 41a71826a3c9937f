//! Convergence diagnostics: rank-normalized split R̂ and multi-chain ESS.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, PhibpError, Result};
use crate::mcmc::{PosteriorDraws, Scalar};

/// Result of [`split_rhat`]. `degenerate` is set when every pooled value is
/// identical, in which case `value` is 1 by convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rhat {
    pub value: f64,
    pub degenerate: bool,
}

fn check_chains(chains: &[Vec<f64>], min_len: usize) -> Result<usize> {
    if chains.len() < 2 {
        return Err(invalid("chains", format!("need at least 2 chains, got {}", chains.len())));
    }
    let n = chains[0].len();
    for c in chains {
        if c.len() != n {
            return Err(PhibpError::LengthMismatch { left: n, right: c.len() });
        }
    }
    if n < min_len {
        return Err(invalid("chains", format!("need at least {min_len} draws per chain, got {n}")));
    }
    Ok(n)
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()])
        .collect()
}

/// Average ranks (1-based) of the pooled values. Values within `tol` of the
/// smallest member of their run count as tied.
fn pooled_ranks(chains: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let mut idx: Vec<usize> = (0..flat.len()).collect();
    idx.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut rank = vec![0.0; flat.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut k = i;
        while k + 1 < idx.len() && flat[idx[k + 1]] - flat[idx[i]] <= tol {
            k += 1;
        }
        let avg = (i + k) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=k] {
            rank[p] = avg;
        }
        i = k + 1;
    }
    let mut out = Vec::with_capacity(chains.len());
    let mut it = rank.into_iter();
    for c in chains {
        out.push(it.by_ref().take(c.len()).collect());
    }
    out
}

fn rank_normalize(chains: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(Vec::len).sum();
    let std = Normal::standard();
    pooled_ranks(chains, tol)
        .into_iter()
        .map(|c| c.into_iter().map(|r| std.inverse_cdf((r - 0.375) / (total as f64 + 0.25))).collect())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Classic R̂ of equal-length sequences; `None` when all values coincide.
fn basic_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let first = chains[0][0];
    if chains.iter().flatten().all(|&x| x == first) {
        return None;
    }
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b_over_n = sample_var(&means);
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    if w == 0.0 {
        return Some(f64::INFINITY);
    }
    Some((((n - 1.0) / n * w + b_over_n) / w).sqrt())
}

/// Rank-normalized split R̂: the larger of the bulk value and the value on
/// the folded draws `|x − median|`.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Rhat> {
    check_chains(chains, 4)?;
    let halves = split(chains);
    // Rounding noise of the input scale, so that ties (notably the two
    // central draws folded about their midpoint) survive affine maps.
    let tol = 1e-12 * halves.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let bulk = basic_rhat(&rank_normalize(&halves, tol));
    let med = quantile_sorted(&sorted(halves.iter().flatten().copied()), 0.5);
    let folded: Vec<Vec<f64>> = halves.iter().map(|c| c.iter().map(|x| (x - med).abs()).collect()).collect();
    let tail = basic_rhat(&rank_normalize(&folded, tol));
    Ok(match (bulk, tail) {
        (None, _) => Rhat { value: 1.0, degenerate: true },
        (Some(b), None) => Rhat { value: b, degenerate: false },
        (Some(b), Some(t)) => Rhat { value: b.max(t), degenerate: false },
    })
}

fn autocovariance(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..=max_lag.min(n - 1))
        .map(|t| d[..n - t].iter().zip(&d[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
/// Not capped at the draw count. Constant input gives the draw count.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() || chains[0].len() < 4 {
        return Err(invalid("chains", "need at least one chain of length ≥ 4"));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        let bad = chains.iter().find(|c| c.len() != n).map_or(0, |c| c.len());
        return Err(PhibpError::LengthMismatch { left: n, right: bad });
    }
    let m = chains.len();
    let total = (m * n) as f64;
    let nf = n as f64;
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c, n - 1)).collect();
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { sample_var(&chains.iter().map(|c| mean(c)).collect::<Vec<_>>()) } else { 0.0 };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if !(var_plus > 0.0) {
        return Ok(total);
    }
    let rho = |t: usize| 1.0 - (w - acov.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;
    // Sum Γ_k = ρ_{2k} + ρ_{2k+1} while positive, forcing them non-increasing.
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut g = rho(2 * k) + rho(2 * k + 1);
        if g <= 0.0 {
            break;
        }
        g = g.min(prev);
        sum += g;
        prev = g;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / total.log10().max(1.0));
    Ok(total / tau)
}

fn sorted(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = it.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation (type 7) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    quantile_sorted(&sorted(values.iter().copied()), q)
}

/// Pooled summary of one monitored scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub scalar: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
    /// Missing when fewer than 2 chains or fewer than 4 draws per chain.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    /// Every pooled value equal.
    pub constant: bool,
}

/// Summarizes one scalar given its per-chain traces.
pub fn summarize_chains(name: &str, chains: &[Vec<f64>]) -> Result<ChainSummary> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    if pooled.is_empty() {
        return Err(PhibpError::Empty(format!("no draws for {name}")));
    }
    let s = sorted(pooled.iter().copied());
    let m = mean(&pooled);
    let sd = if pooled.len() > 1 { sample_var(&pooled).max(0.0).sqrt() } else { 0.0 };
    let rhat = split_rhat(chains).ok();
    Ok(ChainSummary {
        scalar: name.to_string(),
        mean: m,
        sd,
        q05: quantile_sorted(&s, 0.05),
        q95: quantile_sorted(&s, 0.95),
        rhat: rhat.map(|r| r.value),
        ess: ess(chains).ok(),
        constant: s[0] == s[s.len() - 1],
    })
}

pub fn summarize(draws: &PosteriorDraws, scalar: Scalar) -> Result<ChainSummary> {
    summarize_chains(&scalar.name(&draws.panel), &draws.trace(scalar))
}

/// One row per monitored scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub rows: Vec<ChainSummary>,
}

impl DiagnosticReport {
    pub fn new(draws: &PosteriorDraws) -> Result<Self> {
        let rows = draws.scalars().into_iter().map(|s| summarize(draws, s)).collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    /// Largest finite-or-infinite R̂ across rows, ignoring missing ones.
    pub fn max_rhat(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.rhat).reduce(f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scalar", "mean", "sd", "q05", "q95", "rhat", "ess", "constant"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.scalar.clone(),
                r.mean.to_string(),
                r.sd.to_string(),
                r.q05.to_string(),
                r.q95.to_string(),
                opt(r.rhat),
                opt(r.ess),
                r.constant.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
