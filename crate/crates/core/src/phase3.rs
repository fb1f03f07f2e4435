//! Post-transition (Phase III) model: a country-specific AR(1) around a
//! long-run mean, with hierarchical priors on the mean and persistence.

use rand::Rng;

use crate::dist::{normal_logpdf, std_normal, truncated_log_mass, truncated_normal};
use crate::samplers::slice_sample;
use crate::types::{phase3_bounds, ModelState, Phase3CountryParams, Phase3Hyper};

/// Log density of `f_next` given `f_prev` under the country AR(1).
#[inline]
pub fn transition_logpdf(f_prev: f64, f_next: f64, p: &Phase3CountryParams, sigma_eps: f64) -> f64 {
    normal_logpdf(f_next, p.mu + p.rho * (f_prev - p.mu), sigma_eps)
}

/// Phase III log likelihood of one series with Phase III starting at
/// `lambda`.
pub fn phase3_loglik(f: &[f64], lambda: usize, p: &Phase3CountryParams, sigma_eps: f64) -> f64 {
    (lambda..f.len().saturating_sub(1))
        .map(|s| transition_logpdf(f[s], f[s + 1], p, sigma_eps))
        .sum()
}

/// Log density of the truncated normal country-level priors.
pub fn country_log_prior(p: &Phase3CountryParams, h: &Phase3Hyper) -> f64 {
    let (mlo, mhi) = phase3_bounds::MU_C;
    if !(p.mu >= mlo && p.mu <= mhi && p.rho > 0.0 && p.rho < 1.0) {
        return f64::NEG_INFINITY;
    }
    normal_logpdf(p.mu, h.mu_bar, h.sigma_mu) - truncated_log_mass(h.mu_bar, h.sigma_mu, mlo, mhi)
        + normal_logpdf(p.rho, h.rho_bar, h.sigma_rho)
        - truncated_log_mass(h.rho_bar, h.sigma_rho, 0.0, 1.0)
}

fn in_open(x: f64, (lo, hi): (f64, f64)) -> bool {
    x > lo && x < hi
}

/// Log prior of the world parameters (uniforms) and of every country's
/// `(μ_c, ρ_c)`; `-inf` outside the support.
pub fn log_priors_phase3(state: &ModelState) -> f64 {
    let h = &state.hyper3;
    let supports = [
        (h.mu_bar, phase3_bounds::MU_BAR),
        (h.sigma_mu, phase3_bounds::SIGMA_MU),
        (h.rho_bar, phase3_bounds::RHO_BAR),
        (h.sigma_rho, phase3_bounds::SIGMA_RHO),
        (h.sigma_eps, phase3_bounds::SIGMA_EPS),
    ];
    let mut lp = 0.0;
    for (x, (lo, hi)) in supports {
        if !in_open(x, (lo, hi)) {
            return f64::NEG_INFINITY;
        }
        lp -= (hi - lo).ln();
    }
    for cs in &state.countries {
        if let Some(p3) = &cs.p3 {
            lp += country_log_prior(p3, h);
        }
    }
    lp
}

pub fn initial_hyper() -> Phase3Hyper {
    let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
    Phase3Hyper {
        mu_bar: mid(phase3_bounds::MU_BAR),
        sigma_mu: mid(phase3_bounds::SIGMA_MU),
        rho_bar: mid(phase3_bounds::RHO_BAR),
        sigma_rho: mid(phase3_bounds::SIGMA_RHO),
        sigma_eps: mid(phase3_bounds::SIGMA_EPS),
    }
}

pub fn initial_country_params(h: &Phase3Hyper) -> Phase3CountryParams {
    Phase3CountryParams {
        mu: h.mu_bar,
        rho: h.rho_bar,
    }
}

fn uniform_open<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    loop {
        let x = lo + (hi - lo) * rng.random::<f64>();
        if x > lo {
            return x;
        }
    }
}

pub fn draw_hyper<R: Rng + ?Sized>(rng: &mut R) -> Phase3Hyper {
    Phase3Hyper {
        mu_bar: uniform_open(rng, phase3_bounds::MU_BAR),
        sigma_mu: uniform_open(rng, phase3_bounds::SIGMA_MU),
        rho_bar: uniform_open(rng, phase3_bounds::RHO_BAR),
        sigma_rho: uniform_open(rng, phase3_bounds::SIGMA_RHO),
        sigma_eps: uniform_open(rng, phase3_bounds::SIGMA_EPS),
    }
}

/// Draw `(μ_c, ρ_c)` from the truncated hierarchical priors.
pub fn draw_country_params<R: Rng + ?Sized>(rng: &mut R, h: &Phase3Hyper) -> Phase3CountryParams {
    let (mlo, mhi) = phase3_bounds::MU_C;
    Phase3CountryParams {
        mu: truncated_normal(rng, h.mu_bar, h.sigma_mu, mlo, mhi),
        rho: draw_open_unit(rng, h.rho_bar, h.sigma_rho),
    }
}

fn draw_open_unit<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    loop {
        let r = truncated_normal(rng, mean, sd, 0.0, 1.0);
        if r > 0.0 && r < 1.0 {
            return r;
        }
    }
}

/// Conjugate truncated-normal updates of one country's `μ_c` and `ρ_c`.
pub fn gibbs_country<R: Rng + ?Sized>(
    rng: &mut R,
    f: &[f64],
    lambda: usize,
    p: &mut Phase3CountryParams,
    h: &Phase3Hyper,
) {
    let n = f.len();
    let var_e = h.sigma_eps * h.sigma_eps;
    let range = lambda..n.saturating_sub(1);

    // μ: f_{s+1} - ρ f_s = μ (1 - ρ) + ε
    let k = 1.0 - p.rho;
    let mut prec = 1.0 / (h.sigma_mu * h.sigma_mu);
    let mut num = h.mu_bar / (h.sigma_mu * h.sigma_mu);
    for s in range.clone() {
        prec += k * k / var_e;
        num += k * (f[s + 1] - p.rho * f[s]) / var_e;
    }
    let (mlo, mhi) = phase3_bounds::MU_C;
    p.mu = truncated_normal(rng, num / prec, prec.sqrt().recip(), mlo, mhi);

    // ρ: f_{s+1} - μ = ρ (f_s - μ) + ε
    let mut prec = 1.0 / (h.sigma_rho * h.sigma_rho);
    let mut num = h.rho_bar / (h.sigma_rho * h.sigma_rho);
    for s in range {
        let x = f[s] - p.mu;
        prec += x * x / var_e;
        num += x * (f[s + 1] - p.mu) / var_e;
    }
    p.rho = draw_open_unit(rng, num / prec, prec.sqrt().recip());
}

/// Slice-sampling updates of the Phase III world parameters.
pub fn slice_hyper<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    let (mlo, mhi) = phase3_bounds::MU_C;
    let params: Vec<Phase3CountryParams> = state.countries.iter().filter_map(|c| c.p3).collect();
    let mut series: Vec<(&[f64], usize, Phase3CountryParams)> = Vec::new();
    for (c, cs) in state.countries.iter().enumerate() {
        if let (Some(l), Some(p)) = (cs.markers.lambda, cs.p3) {
            series.push((state.tfr.row(c), l, p));
        }
    }
    let h = &mut state.hyper3;

    let mu_target = |mean: f64, sd: f64| -> f64 {
        let z = truncated_log_mass(mean, sd, mlo, mhi);
        params.iter().map(|p| normal_logpdf(p.mu, mean, sd) - z).sum()
    };
    let rho_target = |mean: f64, sd: f64| -> f64 {
        let z = truncated_log_mass(mean, sd, 0.0, 1.0);
        params.iter().map(|p| normal_logpdf(p.rho, mean, sd) - z).sum()
    };

    let (lo, hi) = phase3_bounds::MU_BAR;
    h.mu_bar = slice_sample(rng, h.mu_bar, |m| mu_target(m, h.sigma_mu), lo, hi, 0.3);
    let (lo, hi) = phase3_bounds::SIGMA_MU;
    h.sigma_mu = slice_sample(rng, h.sigma_mu, |s| mu_target(h.mu_bar, s), lo, hi, 0.05);
    let (lo, hi) = phase3_bounds::RHO_BAR;
    h.rho_bar = slice_sample(rng, h.rho_bar, |m| rho_target(m, h.sigma_rho), lo, hi, 0.2);
    let (lo, hi) = phase3_bounds::SIGMA_RHO;
    h.sigma_rho = slice_sample(rng, h.sigma_rho, |s| rho_target(h.rho_bar, s), lo, hi, 0.05);
    let (lo, hi) = phase3_bounds::SIGMA_EPS;
    h.sigma_eps = slice_sample(
        rng,
        h.sigma_eps,
        |s| series.iter().map(|(f, l, p)| phase3_loglik(f, *l, p, s)).sum(),
        lo,
        hi,
        0.05,
    );
}

/// One Phase III sweep: Gibbs updates of every country's `(μ_c, ρ_c)`
/// followed by slice updates of the world parameters.
pub fn sample_phase3_sweep<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    let h = state.hyper3;
    for c in 0..state.countries.len() {
        let lambda = state.countries[c].markers.lambda;
        if let (Some(l), Some(mut p)) = (lambda, state.countries[c].p3) {
            gibbs_country(rng, state.tfr.row(c), l, &mut p, &h);
            state.countries[c].p3 = Some(p);
        }
    }
    slice_hyper(state, rng);
}

/// Random variate of the next Phase III value.
pub fn step<R: Rng + ?Sized>(rng: &mut R, f: f64, p: &Phase3CountryParams, sigma_eps: f64) -> f64 {
    p.mu + p.rho * (f - p.mu) + sigma_eps * std_normal(rng)
}
