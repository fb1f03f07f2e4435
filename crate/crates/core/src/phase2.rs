//! Fertility-transition (Phase II) model: double-logistic drift,
//! level-dependent distortion variance, hierarchical priors, and the MCMC
//! sweep that also updates the latent TFR.
//!
//! Transition `s` links periods `s` and `s + 1`. With markers `tau` and
//! `lambda`, transitions `s < tau` follow the Phase I random walk,
//! `tau <= s < lambda` the Phase II random walk with drift and
//! `s >= lambda` the Phase III AR(1) (see [`crate::phase3`]).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{gamma_logpdf, gamma_rate, normal_logpdf, std_normal, truncated_log_mass, truncated_normal};
use crate::phase3;
use crate::phases::TAU_MIN_LEVEL;
use crate::samplers::{mh_decide, slice_sample, AcceptanceCount, AdaptiveScale};
use crate::types::{
    bounded_logit, phase2_bounds, CountryState, DecrementBounds, ModeFlags, ModelState, ObservationTerm,
    Phase2CountryParams, Phase2Hyper, Phase3CountryParams, Phase3Hyper, PhaseMarkers, TimeGrid, DELTA4_BOUNDS,
    TFR_BOUNDS, UC_UPPER,
};

/// `2 ln 9`: steepness constant of both logistic arms (`p1 = p2 = 9`).
pub const TWO_LN9: f64 = 4.394_449_154_672_439;

/// Lower floor of the distortion sd.
pub const SD_FLOOR: f64 = 1e-8;

/// Periods up to this year use the multiplier `c`.
pub const C1975_YEAR: i32 = 1975;

/// Fixed hyperprior constants of the transition model.
pub mod hyperprior {
    pub const CHI_MEAN: f64 = -1.5;
    pub const CHI_SD: f64 = 0.6;
    /// `1/ψ² ~ Gamma(shape 1, rate 0.6²)`.
    pub const PSI_RATE: f64 = 0.36;
    pub const DELTA4_MEAN_MEAN: f64 = 0.3;
    pub const DELTA4_MEAN_SD: f64 = 1.0;
    /// `1/δ_i² ~ Gamma(1, 1)` for `i = 1..4`.
    pub const DELTA_RATE: f64 = 1.0;
    pub const ALPHA_MEAN: [f64; 3] = [-1.0, 0.5, 1.5];
    pub const ALPHA_SD: f64 = 1.0;
    /// `1/s_τ² ~ Gamma(1, 0.4²)`.
    pub const S_TAU_RATE: f64 = 0.16;
    pub const M_TAU_MEAN: f64 = -0.25;
    pub const M_TAU_SD: f64 = 0.4;
    pub const SHAPE: f64 = 1.0;
}

fn logistic(x: f64) -> f64 {
    if x > 40.0 {
        1.0
    } else if x < -745.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Expected decrement `g(θ_c, f)` of the double-logistic curve.
pub fn double_logistic(f: f64, p: &Phase2CountryParams) -> f64 {
    let [d1, d2, d3, d4] = p.deltas;
    let total = d1 + d2 + d3 + d4;
    let upper = logistic(TWO_LN9 / d1 * (f - total + 0.5 * d1));
    let lower = logistic(TWO_LN9 / d3 * (f - d4 - 0.5 * d3));
    -p.dc * upper + p.dc * lower
}

/// Sd of the Phase II distortion at level `f` in a period starting `year`.
pub fn distortion_sd(f: f64, year: i32, h: &Phase2Hyper) -> f64 {
    distortion_sd_parts(f, year <= C1975_YEAR, h.sigma0, h.a, h.b, h.s, h.const_c)
}

#[inline]
fn distortion_sd_parts(f: f64, early: bool, sigma0: f64, a: f64, b: f64, s: f64, c: f64) -> f64 {
    let slope = if f >= s { -a } else { b };
    let mult = if early { c } else { 1.0 };
    (mult * (sigma0 + (f - s) * slope)).max(SD_FLOOR)
}

/// Read-only view of everything that determines one country's transition
/// densities.
#[derive(Clone, Copy)]
pub struct CountryView<'a> {
    pub h2: &'a Phase2Hyper,
    pub h3: &'a Phase3Hyper,
    pub ar: bool,
    pub grid: TimeGrid,
    pub markers: PhaseMarkers,
    pub p2: &'a Phase2CountryParams,
    pub p3: Option<&'a Phase3CountryParams>,
}

impl<'a> CountryView<'a> {
    pub fn of(state: &'a ModelState, c: usize) -> Self {
        let cs = &state.countries[c];
        CountryView {
            h2: &state.hyper2,
            h3: &state.hyper3,
            ar: state.flags.ar_phase2,
            grid: state.grid,
            markers: cs.markers,
            p2: &cs.p2,
            p3: cs.p3.as_ref(),
        }
    }

    pub fn with_p2(self, p2: &'a Phase2CountryParams) -> Self {
        CountryView { p2, ..self }
    }

    /// Phase II residual `d_s - g(f_s)` of transition `s`.
    #[inline]
    pub fn residual(&self, f: &[f64], s: usize) -> f64 {
        (f[s] - f[s + 1]) - double_logistic(f[s], self.p2)
    }

    fn in_phase2(&self, s: usize, n: usize) -> bool {
        s >= self.markers.phase2_start() && s < self.markers.phase2_end(n)
    }

    /// Log density of transition `s` (from period `s` to `s + 1`).
    pub fn transition(&self, f: &[f64], s: usize) -> f64 {
        let n = f.len();
        let m = self.markers;
        if m.tau.is_some_and(|tau| s < tau) {
            return normal_logpdf(f[s + 1] - f[s], 0.0, self.h2.s_tau);
        }
        if m.lambda.is_some_and(|l| s >= l) {
            return match self.p3 {
                Some(p3) => phase3::transition_logpdf(f[s], f[s + 1], p3, self.h3.sigma_eps),
                None => 0.0,
            };
        }
        if !self.in_phase2(s, n) {
            return 0.0;
        }
        let e = self.residual(f, s);
        if m.tau == Some(s) {
            return normal_logpdf(e, self.h2.m_tau, self.h2.s_tau);
        }
        let mean = match (self.ar, self.h2.phi) {
            (true, Some(phi)) if s > m.phase2_start() => phi * self.residual(f, s - 1),
            _ => 0.0,
        };
        normal_logpdf(e, mean, distortion_sd(f[s], self.grid.year(s), self.h2))
    }

    /// Phase I and Phase II transition log density of the whole series.
    pub fn phase2_loglik(&self, f: &[f64]) -> f64 {
        let n = f.len();
        let end = self.markers.phase2_end(n);
        (0..end).map(|s| self.transition(f, s)).sum()
    }

    /// All transitions, including Phase III.
    pub fn loglik(&self, f: &[f64]) -> f64 {
        (0..f.len() - 1).map(|s| self.transition(f, s)).sum()
    }
}

/// Phase I + Phase II log likelihood of one country's latent series.
pub fn phase2_loglik(state: &ModelState, c: usize) -> f64 {
    CountryView::of(state, c).phase2_loglik(state.tfr.row(c))
}

/// Log prior of the start level `U_c` when Phase II began before the grid.
pub fn uc_log_prior(uc: f64, f: &[f64]) -> f64 {
    let max_f = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = TAU_MIN_LEVEL.min(max_f);
    if uc >= lo && uc <= UC_UPPER {
        -(UC_UPPER - lo).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Level-3 log prior of one country's transition parameters.
pub fn country_log_prior(h: &Phase2Hyper, markers: &PhaseMarkers, p: &Phase2CountryParams, f: &[f64]) -> f64 {
    if p.deltas.iter().any(|d| !(*d > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let mut lp = normal_logpdf(p.dc_star, h.chi, h.psi) + normal_logpdf(p.delta4_prime, h.delta4_mean, h.delta4_sd);
    for i in 0..3 {
        lp += normal_logpdf(p.gamma[i], h.alpha[i], h.delta[i]);
    }
    if markers.tau.is_none() {
        lp += uc_log_prior(p.uc, f);
    }
    lp
}

fn uniform_logpdf(x: f64, lo: f64, hi: f64) -> f64 {
    if x >= lo && x <= hi {
        -(hi - lo).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Level-4 log prior of the transition-model world parameters. Precision
/// priors are evaluated as densities of the precision.
pub fn hyper_log_prior(h: &Phase2Hyper, sigma0_min: f64, ar: bool) -> f64 {
    use hyperprior::*;
    let prec = |sd: f64| 1.0 / (sd * sd);
    let mut lp = normal_logpdf(h.chi, CHI_MEAN, CHI_SD)
        + gamma_logpdf(prec(h.psi), SHAPE, PSI_RATE)
        + normal_logpdf(h.delta4_mean, DELTA4_MEAN_MEAN, DELTA4_MEAN_SD)
        + gamma_logpdf(prec(h.delta4_sd), SHAPE, DELTA_RATE)
        + normal_logpdf(h.m_tau, M_TAU_MEAN, M_TAU_SD)
        + gamma_logpdf(prec(h.s_tau), SHAPE, S_TAU_RATE)
        + uniform_logpdf(h.sigma0, sigma0_min, phase2_bounds::SIGMA0_MAX)
        + uniform_logpdf(h.a, phase2_bounds::A.0, phase2_bounds::A.1)
        + uniform_logpdf(h.b, phase2_bounds::B.0, phase2_bounds::B.1)
        + uniform_logpdf(h.s, phase2_bounds::S.0, phase2_bounds::S.1)
        + uniform_logpdf(h.const_c, phase2_bounds::CONST_C.0, phase2_bounds::CONST_C.1);
    for i in 0..3 {
        lp += normal_logpdf(h.alpha[i], ALPHA_MEAN[i], ALPHA_SD) + gamma_logpdf(prec(h.delta[i]), SHAPE, DELTA_RATE);
    }
    if ar {
        lp += match h.phi {
            Some(phi) if phi > 0.0 && phi < 1.0 => 0.0,
            _ => f64::NEG_INFINITY,
        };
    }
    lp
}

/// Sum of all Level-3 and Level-4 transition-model log priors; `-inf`
/// outside the support.
pub fn log_priors_phase2(state: &ModelState) -> f64 {
    let h = &state.hyper2;
    let bounds = state.flags.bounds();
    let mut lp = hyper_log_prior(h, state.sigma0_min, state.flags.ar_phase2);
    for (c, cs) in state.countries.iter().enumerate() {
        let p = &cs.p2;
        if !(p.dc > bounds.lo && p.dc < bounds.hi) {
            return f64::NEG_INFINITY;
        }
        lp += country_log_prior(h, &cs.markers, p, state.tfr.row(c));
    }
    lp
}

/// Log likelihood of the raw observations given a latent series.
pub fn measurement_loglik(obs: &[ObservationTerm], f: &[f64]) -> f64 {
    obs.iter()
        .map(|o| normal_logpdf(o.y, o.latent(f) + o.bias, o.sd))
        .sum()
}

/// Proposal scales and acceptance counts of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTuning {
    pub countries: Vec<CountryTuning>,
    /// Latent-TFR acceptance after burn-in.
    pub latent_acceptance: AcceptanceCount,
    /// Country-parameter acceptance after burn-in.
    pub param_acceptance: AcceptanceCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryTuning {
    /// `gamma_1..3`, `Δ'_c4`, `d_c*`, `U_c`.
    pub params: [AdaptiveScale; 6],
    pub latent: Vec<AdaptiveScale>,
}

impl ChainTuning {
    pub fn new(n_countries: usize, n_periods: usize, annual: bool) -> Self {
        let latent0 = if annual { 0.05 } else { 0.15 };
        ChainTuning {
            countries: (0..n_countries)
                .map(|_| CountryTuning {
                    params: [AdaptiveScale::new(0.5); 6],
                    latent: vec![AdaptiveScale::new(latent0); n_periods],
                })
                .collect(),
            latent_acceptance: AcceptanceCount::default(),
            param_acceptance: AcceptanceCount::default(),
        }
    }
}

/// Where a sweep sits in the chain: adaptation only happens in burn-in;
/// acceptance is only counted after it.
#[derive(Debug, Clone, Copy)]
pub struct SweepControl {
    /// 1-based global iteration number.
    pub iter: u64,
    pub adapt: bool,
}

fn normal_mean_update<R: Rng + ?Sized>(rng: &mut R, xs: &[f64], sd: f64, prior_mean: f64, prior_sd: f64) -> f64 {
    let prec = 1.0 / (prior_sd * prior_sd) + xs.len() as f64 / (sd * sd);
    let mean = (prior_mean / (prior_sd * prior_sd) + xs.iter().sum::<f64>() / (sd * sd)) / prec;
    mean + std_normal(rng) / prec.sqrt()
}

fn sd_update<R: Rng + ?Sized>(rng: &mut R, xs: &[f64], mean: f64, rate: f64) -> f64 {
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let prec = gamma_rate(rng, hyperprior::SHAPE + xs.len() as f64 / 2.0, rate + ss / 2.0);
    1.0 / prec.sqrt()
}

/// Conjugate updates of the normal means and sds of the country-level
/// priors and of the start-period distortion.
pub fn gibbs_hyper<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    use hyperprior::*;
    let countries = &state.countries;
    let dstar: Vec<f64> = countries.iter().map(|c| c.p2.dc_star).collect();
    let d4p: Vec<f64> = countries.iter().map(|c| c.p2.delta4_prime).collect();
    let gammas: [Vec<f64>; 3] = std::array::from_fn(|i| countries.iter().map(|c| c.p2.gamma[i]).collect());

    // residuals at the start period and Phase I increments
    let mut tau_res = Vec::new();
    let mut phase1 = Vec::new();
    for (c, cs) in countries.iter().enumerate() {
        let f = state.tfr.row(c);
        let n = f.len();
        if let Some(tau) = cs.markers.tau {
            for s in 0..tau.min(n - 1) {
                phase1.push(f[s + 1] - f[s]);
            }
            if tau < cs.markers.phase2_end(n) {
                tau_res.push((f[tau] - f[tau + 1]) - double_logistic(f[tau], &cs.p2));
            }
        }
    }

    let h = &mut state.hyper2;
    h.chi = normal_mean_update(rng, &dstar, h.psi, CHI_MEAN, CHI_SD);
    h.psi = sd_update(rng, &dstar, h.chi, PSI_RATE);
    h.delta4_mean = normal_mean_update(rng, &d4p, h.delta4_sd, DELTA4_MEAN_MEAN, DELTA4_MEAN_SD);
    h.delta4_sd = sd_update(rng, &d4p, h.delta4_mean, DELTA_RATE);
    for i in 0..3 {
        h.alpha[i] = normal_mean_update(rng, &gammas[i], h.delta[i], ALPHA_MEAN[i], ALPHA_SD);
        h.delta[i] = sd_update(rng, &gammas[i], h.alpha[i], DELTA_RATE);
    }
    h.m_tau = normal_mean_update(rng, &tau_res, h.s_tau, M_TAU_MEAN, M_TAU_SD);
    let ss_tau: f64 = tau_res.iter().map(|e| (e - h.m_tau).powi(2)).sum::<f64>()
        + phase1.iter().map(|d| d * d).sum::<f64>();
    let k = (tau_res.len() + phase1.len()) as f64;
    let prec = gamma_rate(rng, SHAPE + k / 2.0, S_TAU_RATE + ss_tau / 2.0);
    h.s_tau = 1.0 / prec.sqrt();
}

fn country_target(view: &CountryView, f: &[f64]) -> f64 {
    view.phase2_loglik(f) + country_log_prior(view.h2, &view.markers, view.p2, f)
}

/// Random-walk Metropolis updates of every country's `γ_c`, `Δ'_c4`,
/// `d_c*` and (when Phase II started before the grid) `U_c`.
pub fn update_country_params<R: Rng + ?Sized>(
    state: &mut ModelState,
    tuning: &mut ChainTuning,
    rng: &mut R,
    ctl: SweepControl,
) {
    let bounds = state.flags.bounds();
    for c in 0..state.countries.len() {
        let mut p = state.countries[c].p2.clone();
        let f = state.tfr.row(c).to_vec();
        let base = CountryView::of(state, c);
        let mut current = country_target(&base.with_p2(&p), &f);
        let n_params = if base.markers.tau.is_none() { 6 } else { 5 };
        for k in 0..n_params {
            let scale = tuning.countries[c].params[k].scale();
            let step = scale * std_normal(rng);
            let mut cand = p.clone();
            match k {
                0..=2 => cand.gamma[k] += step,
                3 => cand.delta4_prime += step,
                4 => cand.dc_star += step,
                _ => cand.uc += step,
            }
            let cand = cand.refreshed(bounds);
            let lp = country_target(&base.with_p2(&cand), &f);
            let (acc, prob) = mh_decide(rng, lp - current);
            if acc {
                p = cand;
                current = lp;
            }
            if ctl.adapt {
                tuning.countries[c].params[k].adapt(prob, ctl.iter);
            } else {
                tuning.param_acceptance.record(acc);
            }
        }
        state.countries[c].p2 = p;
    }
}

/// Phase II residual pieces that do not depend on the variance parameters.
struct DistortionTerm {
    e: f64,
    prev: Option<f64>,
    f: f64,
    early: bool,
}

fn distortion_terms(state: &ModelState) -> Vec<DistortionTerm> {
    let mut out = Vec::new();
    for (c, cs) in state.countries.iter().enumerate() {
        let f = state.tfr.row(c);
        let n = f.len();
        let view = CountryView::of(state, c);
        let start = cs.markers.phase2_start();
        let end = cs.markers.phase2_end(n);
        let mut prev = None;
        for s in start..end {
            let e = view.residual(f, s);
            if cs.markers.tau != Some(s) {
                out.push(DistortionTerm {
                    e,
                    prev: if s > start { prev } else { None },
                    f: f[s],
                    early: state.grid.year(s) <= C1975_YEAR,
                });
            }
            prev = Some(e);
        }
    }
    out
}

fn distortion_loglik(terms: &[DistortionTerm], sigma0: f64, a: f64, b: f64, s: f64, c: f64, phi: f64) -> f64 {
    terms
        .iter()
        .map(|t| {
            let mean = t.prev.map_or(0.0, |p| phi * p);
            normal_logpdf(t.e, mean, distortion_sd_parts(t.f, t.early, sigma0, a, b, s, c))
        })
        .sum()
}

/// Slice-sampling updates of `σ0`, `a`, `b`, `S`, `c` and (AR mode) `φ`.
pub fn slice_variance_params<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    let terms = distortion_terms(state);
    let sigma0_min = state.sigma0_min;
    let ar = state.flags.ar_phase2;
    let h = &mut state.hyper2;
    let mut v = [
        h.sigma0,
        h.a,
        h.b,
        h.s,
        h.const_c,
        if ar { h.phi.unwrap_or(0.5) } else { 0.0 },
    ];
    let supports = [
        (sigma0_min, phase2_bounds::SIGMA0_MAX, 0.05),
        (phase2_bounds::A.0, phase2_bounds::A.1, 0.02),
        (phase2_bounds::B.0, phase2_bounds::B.1, 0.02),
        (phase2_bounds::S.0, phase2_bounds::S.1, 0.5),
        (phase2_bounds::CONST_C.0, phase2_bounds::CONST_C.1, 0.2),
        (phase2_bounds::PHI.0, phase2_bounds::PHI.1, 0.1),
    ];
    let n_params = if ar { 6 } else { 5 };
    for k in 0..n_params {
        let (lo, hi, w) = supports[k];
        let current = v;
        v[k] = slice_sample(
            rng,
            current[k],
            |x| {
                let mut q = current;
                q[k] = x;
                distortion_loglik(&terms, q[0], q[1], q[2], q[3], q[4], q[5])
            },
            lo,
            hi,
            w,
        );
    }
    h.sigma0 = v[0];
    h.a = v[1];
    h.b = v[2];
    h.s = v[3];
    h.const_c = v[4];
    if ar {
        h.phi = Some(v[5]);
    }
}

/// Transitions whose density changes with the latent value at period `t`.
fn affected_transitions(t: usize, n: usize, ar: bool) -> impl Iterator<Item = usize> {
    let lo = t.saturating_sub(1);
    let hi = if ar { t + 1 } else { t };
    (lo..=hi).filter(move |&s| s + 1 < n)
}

/// Log target of period `t` of a country, up to terms not involving `f[t]`.
fn latent_local_target(view: &CountryView, obs: &[ObservationTerm], f: &[f64], t: usize) -> f64 {
    let n = f.len();
    let mut lp: f64 = obs
        .iter()
        .filter(|o| o.touches(t))
        .map(|o| normal_logpdf(o.y, o.latent(f) + o.bias, o.sd))
        .sum();
    lp += affected_transitions(t, n, view.ar).map(|s| view.transition(f, s)).sum::<f64>();
    if view.markers.tau.is_none() {
        lp += uc_log_prior(view.p2.uc, f);
    }
    lp
}

/// Full log target of a country's latent series.
pub fn latent_full_target(view: &CountryView, obs: &[ObservationTerm], f: &[f64]) -> f64 {
    let mut lp = measurement_loglik(obs, f) + view.loglik(f);
    if view.markers.tau.is_none() {
        lp += uc_log_prior(view.p2.uc, f);
    }
    lp
}

fn log_proposal_mass(x: f64, scale: f64) -> f64 {
    truncated_log_mass(x, scale, TFR_BOUNDS.0, TFR_BOUNDS.1)
}

/// Metropolis–Hastings update of every latent TFR value with truncated
/// normal proposals on `(0, 20)`.
pub fn update_latent_tfr<R: Rng + ?Sized>(
    state: &mut ModelState,
    tuning: &mut ChainTuning,
    rng: &mut R,
    ctl: SweepControl,
) {
    let bounds = state.flags.bounds();
    let meas = state.meas.clone();
    for c in 0..state.countries.len() {
        let obs = meas.get(c).map_or(&[][..], Vec::as_slice);
        let mut f = state.tfr.row(c).to_vec();
        let n = f.len();
        let tau = state.countries[c].markers.tau;
        let mut p2 = state.countries[c].p2.clone();
        for t in 0..n {
            let scale = tuning.countries[c].latent[t].scale();
            let old = f[t];
            let cand = truncated_normal(rng, old, scale, TFR_BOUNDS.0, TFR_BOUNDS.1);
            if !(cand > TFR_BOUNDS.0 && cand < TFR_BOUNDS.1) {
                continue;
            }
            let hastings = log_proposal_mass(old, scale) - log_proposal_mass(cand, scale);
            let (log_ratio, cand_p2) = if tau == Some(t) {
                // U_c is pinned to the start-period level: the whole series changes
                let view = CountryView::of(state, c).with_p2(&p2);
                let before = latent_full_target(&view, obs, &f);
                f[t] = cand;
                let new_p2 = p2.with_uc(cand, bounds);
                let after = latent_full_target(&view.with_p2(&new_p2), obs, &f);
                f[t] = old;
                (after - before, Some(new_p2))
            } else {
                let view = CountryView::of(state, c).with_p2(&p2);
                let before = latent_local_target(&view, obs, &f, t);
                f[t] = cand;
                let after = latent_local_target(&view, obs, &f, t);
                f[t] = old;
                (after - before, None)
            };
            let (acc, prob) = mh_decide(rng, log_ratio + hastings);
            if acc {
                f[t] = cand;
                if let Some(np) = cand_p2 {
                    p2 = np;
                }
            }
            if ctl.adapt {
                tuning.countries[c].latent[t].adapt(prob, ctl.iter);
            } else {
                tuning.latent_acceptance.record(acc);
            }
        }
        state.tfr.row_mut(c).copy_from_slice(&f);
        state.countries[c].p2 = p2;
    }
}

/// One full Phase II sweep: conjugate hyperparameter updates, country
/// parameter Metropolis steps, slice updates of the variance parameters
/// and, with uncertainty on, the latent TFR.
pub fn sample_phase2_sweep<R: Rng + ?Sized>(
    state: &mut ModelState,
    tuning: &mut ChainTuning,
    rng: &mut R,
    ctl: SweepControl,
) {
    gibbs_hyper(state, rng);
    update_country_params(state, tuning, rng, ctl);
    slice_variance_params(state, rng);
    if state.flags.uncertainty {
        update_latent_tfr(state, tuning, rng, ctl);
    }
}

/// Starting values: world parameters at prior medians, country parameters
/// at their prior means.
pub fn initial_hyper(flags: ModeFlags, sigma0_min: f64) -> Phase2Hyper {
    use hyperprior::*;
    // median of an Exp(rate) precision is ln 2 / rate
    let sd_at_median = |rate: f64| (rate / std::f64::consts::LN_2).sqrt();
    Phase2Hyper {
        chi: CHI_MEAN,
        psi: sd_at_median(PSI_RATE),
        delta4_mean: DELTA4_MEAN_MEAN,
        delta4_sd: sd_at_median(DELTA_RATE),
        alpha: ALPHA_MEAN,
        delta: [sd_at_median(DELTA_RATE); 3],
        sigma0: 0.5 * (sigma0_min + phase2_bounds::SIGMA0_MAX),
        a: 0.5 * (phase2_bounds::A.0 + phase2_bounds::A.1),
        b: 0.5 * (phase2_bounds::B.0 + phase2_bounds::B.1),
        s: 0.5 * (phase2_bounds::S.0 + phase2_bounds::S.1),
        const_c: 0.5 * (phase2_bounds::CONST_C.0 + phase2_bounds::CONST_C.1),
        m_tau: M_TAU_MEAN,
        s_tau: sd_at_median(S_TAU_RATE),
        phi: flags.ar_phase2.then_some(0.5),
    }
}

pub fn initial_country_params(
    h: &Phase2Hyper,
    markers: &PhaseMarkers,
    f: &[f64],
    bounds: DecrementBounds,
) -> Phase2CountryParams {
    let uc = match markers.tau {
        Some(tau) => f[tau],
        None => {
            let max_f = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (TAU_MIN_LEVEL.min(max_f) + UC_UPPER)
        }
    };
    Phase2CountryParams::from_transformed(h.alpha, h.delta4_mean, h.chi, uc, bounds)
}

/// Draw world parameters from their priors.
pub fn draw_hyper<R: Rng + ?Sized>(rng: &mut R, flags: ModeFlags, sigma0_min: f64) -> Phase2Hyper {
    use hyperprior::*;
    let sd_from_prec = |rng: &mut R, rate: f64| 1.0 / gamma_rate(rng, SHAPE, rate).sqrt();
    let unif = |rng: &mut R, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    Phase2Hyper {
        chi: CHI_MEAN + CHI_SD * std_normal(rng),
        psi: sd_from_prec(rng, PSI_RATE),
        delta4_mean: DELTA4_MEAN_MEAN + DELTA4_MEAN_SD * std_normal(rng),
        delta4_sd: sd_from_prec(rng, DELTA_RATE),
        alpha: std::array::from_fn(|i| ALPHA_MEAN[i] + ALPHA_SD * std_normal(rng)),
        delta: std::array::from_fn(|_| sd_from_prec(rng, DELTA_RATE)),
        sigma0: unif(rng, (sigma0_min, phase2_bounds::SIGMA0_MAX)),
        a: unif(rng, phase2_bounds::A),
        b: unif(rng, phase2_bounds::B),
        s: unif(rng, phase2_bounds::S),
        const_c: unif(rng, phase2_bounds::CONST_C),
        m_tau: M_TAU_MEAN + M_TAU_SD * std_normal(rng),
        s_tau: sd_from_prec(rng, S_TAU_RATE),
        phi: flags.ar_phase2.then(|| unif(rng, phase2_bounds::PHI)),
    }
}

/// Draw one country's transition parameters from the Level-3 priors.
pub fn draw_country_params<R: Rng + ?Sized>(
    rng: &mut R,
    h: &Phase2Hyper,
    uc: f64,
    bounds: DecrementBounds,
) -> Phase2CountryParams {
    let gamma = std::array::from_fn(|i| h.alpha[i] + h.delta[i] * std_normal(rng));
    let d4p = h.delta4_mean + h.delta4_sd * std_normal(rng);
    let dstar = h.chi + h.psi * std_normal(rng);
    Phase2CountryParams::from_transformed(gamma, d4p, dstar, uc, bounds)
}

/// Country state with parameters at their prior means.
pub fn initial_country(
    id: crate::types::CountryId,
    markers: PhaseMarkers,
    h2: &Phase2Hyper,
    h3: &Phase3Hyper,
    f: &[f64],
    bounds: DecrementBounds,
) -> CountryState {
    CountryState {
        id,
        markers,
        p2: initial_country_params(h2, &markers, f, bounds),
        p3: markers.lambda.map(|_| phase3::initial_country_params(h3)),
    }
}

/// Logit of `Δ_c4`, for callers building parameters on the natural scale.
pub fn delta4_prime_of(delta4: f64) -> f64 {
    bounded_logit(delta4, DELTA4_BOUNDS.0, DELTA4_BOUNDS.1)
}
