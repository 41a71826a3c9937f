//! Random-walk Metropolis–Hastings on the hyperparameters.
//!
//! Each level (base = level 0, region `j` = level `j + 1`) gets a move on
//! `ln θ` and, for GG levels whose `α` is free, a move on `logit α`. The
//! target is the latent-data log density of [`SufficientStats`] times the
//! priors; step sizes adapt toward a fixed acceptance rate during burn-in.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::state::{LatentState, SufficientStats};
use crate::levy::{Family, LevyParams, ALPHA_CLAMP};
use crate::math::{logistic, logit};

/// Gamma(shape, rate) prior on `θ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 1.0 }
    }
}

impl GammaPrior {
    pub fn ln_density(&self, theta: f64) -> f64 {
        (self.shape - 1.0) * theta.ln() - self.rate * theta
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub proposed: u64,
    pub accepted: u64,
}

impl Tally {
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }
}

/// Per-level tallies; index 0 is the base level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub theta: Vec<Tally>,
    pub alpha: Vec<Tally>,
}

impl Acceptance {
    fn new(levels: usize) -> Self {
        Self { theta: vec![Tally::default(); levels], alpha: vec![Tally::default(); levels] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    Theta,
    Alpha,
}

/// What the MH sweep needs to know about the model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MhModel {
    pub base_family: Family,
    pub region_family: Family,
    /// Keep every `α` at its current value even on GG levels.
    pub fix_alpha: bool,
    pub base_prior: GammaPrior,
    pub region_prior: GammaPrior,
    pub target_accept: f64,
}

impl MhModel {
    fn alpha_moves(&self, level: usize) -> bool {
        let fam = if level == 0 { self.base_family } else { self.region_family };
        fam == Family::GG && !self.fix_alpha
    }

    fn prior(&self, level: usize) -> &GammaPrior {
        if level == 0 {
            &self.base_prior
        } else {
            &self.region_prior
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhState {
    pub step_theta: Vec<f64>,
    pub step_alpha: Vec<f64>,
    /// Tallies over post-burn-in iterations.
    pub sampling: Acceptance,
    /// Tallies over burn-in iterations.
    pub burnin: Acceptance,
    window: Acceptance,
    windows: u32,
}

pub const ADAPT_WINDOW: usize = 50;
const STEP_RANGE: (f64, f64) = (1e-3, 10.0);

impl MhState {
    pub fn new(levels: usize, step_theta: f64, step_alpha: f64) -> Self {
        Self {
            step_theta: vec![step_theta; levels],
            step_alpha: vec![step_alpha; levels],
            sampling: Acceptance::new(levels),
            burnin: Acceptance::new(levels),
            window: Acceptance::new(levels),
            windows: 0,
        }
    }

    /// Adjusts each step size by `exp((rate − target)·c_k)` with a slowly
    /// decaying gain, using the tallies of the window just finished.
    pub fn adapt(&mut self, target: f64) {
        self.windows += 1;
        let gain = 2.0 / (self.windows as f64).sqrt().max(1.0);
        let adjust = |step: &mut f64, t: &Tally| {
            if let Some(r) = t.rate() {
                *step = (*step * ((r - target) * gain).exp()).clamp(STEP_RANGE.0, STEP_RANGE.1);
            }
        };
        for (s, t) in self.step_theta.iter_mut().zip(&self.window.theta) {
            adjust(s, t);
        }
        for (s, t) in self.step_alpha.iter_mut().zip(&self.window.alpha) {
            adjust(s, t);
        }
        let levels = self.step_theta.len();
        self.window = Acceptance::new(levels);
    }

    fn record(&mut self, level: usize, param: Param, accepted: bool, in_burnin: bool) {
        let (total, window) = if in_burnin { (&mut self.burnin, Some(&mut self.window)) } else { (&mut self.sampling, None) };
        match param {
            Param::Theta => {
                total.theta[level].record(accepted);
                if let Some(w) = window {
                    w.theta[level].record(accepted);
                }
            }
            Param::Alpha => {
                total.alpha[level].record(accepted);
                if let Some(w) = window {
                    w.alpha[level].record(accepted);
                }
            }
        }
    }
}

fn level_params(state: &LatentState, level: usize) -> LevyParams {
    if level == 0 {
        state.hyper.base
    } else {
        state.hyper.regions[level - 1]
    }
}

/// Log target (latent density + log prior) change when `level`'s parameters
/// are replaced by `proposal`, with everything else held fixed.
pub fn log_target_change(
    state: &LatentState,
    stats: &SufficientStats,
    model: &MhModel,
    level: usize,
    proposal: &LevyParams,
) -> f64 {
    let cache = state.cache();
    let current = level_params(state, level);
    let prior = model.prior(level);
    let d_prior = prior.ln_density(proposal.theta()) - prior.ln_density(current.theta());
    if level == 0 {
        return stats.global_part(proposal, cache.t) - stats.global_part(&current, cache.t) + d_prior;
    }
    let j = level - 1;
    let g = cache.exposure[j];
    let t_new = cache.t - cache.psi[j] + proposal.psi(g);
    let base = &state.hyper.base;
    stats.global_part(base, t_new) - stats.global_part(base, cache.t)
        + stats.region_part(j, proposal, g)
        - stats.region_part(j, &current, g)
        + d_prior
}

/// Full log acceptance ratio for proposing `value` for one parameter:
/// target change plus the Jacobian of the log / logit walk.
pub fn log_accept_ratio(
    state: &LatentState,
    stats: &SufficientStats,
    model: &MhModel,
    level: usize,
    param: Param,
    value: f64,
) -> Option<f64> {
    let current = level_params(state, level);
    let (proposal, jacobian) = match param {
        Param::Theta => (
            LevyParams::new(value, current.alpha(), current.family()).ok()?,
            value.ln() - current.theta().ln(),
        ),
        Param::Alpha => {
            if !(ALPHA_CLAMP..1.0).contains(&value) {
                return None;
            }
            let a = current.alpha();
            (
                LevyParams::new(current.theta(), value, current.family()).ok()?,
                (value * (1.0 - value)).ln() - (a * (1.0 - a)).ln(),
            )
        }
    };
    let r = log_target_change(state, stats, model, level, &proposal) + jacobian;
    r.is_finite().then_some(r)
}

fn apply(state: &mut LatentState, level: usize, param: Param, value: f64) {
    let cur = level_params(state, level);
    let p = match param {
        Param::Theta => LevyParams::new(value, cur.alpha(), cur.family()),
        Param::Alpha => LevyParams::new(cur.theta(), value, cur.family()),
    }
    .expect("validated in log_accept_ratio");
    if level == 0 {
        state.set_base(p);
    } else {
        state.set_region(level - 1, p);
    }
}

/// One MH sweep over all levels.
pub fn mh_update_hyperparams<R: Rng + ?Sized>(
    state: &mut LatentState,
    stats: &SufficientStats,
    model: &MhModel,
    mh: &mut MhState,
    in_burnin: bool,
    rng: &mut R,
) {
    let levels = state.n_regions() + 1;
    for level in 0..levels {
        let mut params = vec![Param::Theta];
        if model.alpha_moves(level) {
            params.push(Param::Alpha);
        }
        for param in params {
            let cur = level_params(state, level);
            let z: f64 = StandardNormal.sample(rng);
            let value = match param {
                Param::Theta => (cur.theta().ln() + mh.step_theta[level] * z).exp(),
                Param::Alpha => logistic(logit(cur.alpha()) + mh.step_alpha[level] * z),
            };
            let u: f64 = rng.random();
            let accepted = match log_accept_ratio(state, stats, model, level, param, value) {
                Some(r) => u.ln() < r,
                None => false,
            };
            if accepted {
                apply(state, level, param, value);
            }
            mh.record(level, param, accepted, in_burnin);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::CountPanel;

    fn setup() -> (CountPanel, LatentState, MhModel) {
        let panel = CountPanel::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into(), "z".into()],
            vec![vec![4, 0, 1], vec![2, 3, 0]],
            vec![vec![1.0; 3], vec![1.0; 5]],
        )
        .unwrap();
        let state = LatentState::initial(
            &panel,
            LevyParams::generalized_gamma(2.0, 0.3).unwrap(),
            vec![LevyParams::generalized_gamma(1.0, 0.5).unwrap(); 2],
        )
        .unwrap();
        let model = MhModel {
            base_family: Family::GG,
            region_family: Family::GG,
            fix_alpha: false,
            base_prior: GammaPrior::default(),
            region_prior: GammaPrior::default(),
            target_accept: 0.3,
        };
        (panel, state, model)
    }

    #[test]
    fn identity_proposal_has_unit_ratio() {
        let (panel, state, model) = setup();
        let stats = state.sufficient_stats(&panel);
        for level in 0..3 {
            let p = level_params(&state, level);
            let r = log_accept_ratio(&state, &stats, &model, level, Param::Theta, p.theta()).unwrap();
            assert_eq!(r, 0.0);
            let r = log_accept_ratio(&state, &stats, &model, level, Param::Alpha, p.alpha()).unwrap();
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn target_change_matches_full_log_joint_difference() {
        let (panel, state, model) = setup();
        let stats = state.sufficient_stats(&panel);
        let before = state.log_joint(&panel);
        for level in 0..3 {
            let cur = level_params(&state, level);
            let prop = LevyParams::generalized_gamma(cur.theta() * 1.7, 0.62).unwrap();
            let d = log_target_change(&state, &stats, &model, level, &prop);
            let mut moved = state.clone();
            if level == 0 {
                moved.set_base(prop);
            } else {
                moved.set_region(level - 1, prop);
            }
            let prior = model.prior(level);
            let expected = moved.log_joint(&panel) - before + prior.ln_density(prop.theta())
                - prior.ln_density(cur.theta());
            assert!((d - expected).abs() < 1e-10, "level {level}: {d} vs {expected}");
        }
    }

    #[test]
    fn alpha_outside_range_rejected() {
        let (panel, state, model) = setup();
        let stats = state.sufficient_stats(&panel);
        assert!(log_accept_ratio(&state, &stats, &model, 1, Param::Alpha, 1e-9).is_none());
    }

    #[test]
    fn adaptation_moves_steps_toward_target() {
        let mut mh = MhState::new(1, 1.0, 1.0);
        for _ in 0..10 {
            mh.record(0, Param::Theta, false, true);
        }
        mh.adapt(0.3);
        assert!(mh.step_theta[0] < 1.0);
        assert_eq!(mh.step_alpha[0], 1.0);
    }
}
