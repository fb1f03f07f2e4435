//! Synthetic worlds drawn from the full model with known parameters, for
//! calibration checks and examples.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::dist::std_normal;
use crate::ingest::RawDataset;
use crate::measurement::{DEFAULT_SOURCE_COLUMN, VR_LEVEL, VR_SD};
use crate::phase2::{distortion_sd, double_logistic, draw_country_params};
use crate::phase3;
use crate::phases::find_markers;
use crate::types::{
    CountryId, CountryState, CovariateValue, ModeFlags, Phase2Hyper, Phase3Hyper, PhaseMarkers, RawObservation,
    ReferenceSeries, TimeGrid,
};

/// Survey-like source with a known bias and sd.
pub const SURVEY_LEVEL: &str = "DHS";
pub const SURVEY_BIAS: f64 = 0.1;
pub const SURVEY_SD: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct WorldSpec {
    pub n_countries: usize,
    pub n_periods: usize,
    pub start_year: i32,
    pub phi: f64,
    /// Countries (by position) with yearly registration data.
    pub n_with_vr: usize,
    /// Spacing of survey observations, in periods.
    pub survey_every: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            n_countries: 10,
            n_periods: 40,
            start_year: 1980,
            phi: 0.7,
            n_with_vr: 6,
            survey_every: 5,
            seed: 2024,
        }
    }
}

/// Parameters the world was drawn from.
#[derive(Debug, Clone)]
pub struct Truth {
    pub hyper2: Phase2Hyper,
    pub hyper3: Phase3Hyper,
    pub countries: Vec<CountryState>,
    pub tfr: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub grid: TimeGrid,
    pub flags: ModeFlags,
    pub raw: RawDataset,
    /// The true series, used as the reference.
    pub references: Vec<ReferenceSeries>,
    pub unbiased_vr: BTreeSet<CountryId>,
    pub truth: Truth,
}

pub fn true_hyper2(phi: f64) -> Phase2Hyper {
    Phase2Hyper {
        chi: -1.0,
        psi: 0.5,
        delta4_mean: 0.3,
        delta4_sd: 0.3,
        alpha: [-1.0, 0.5, 1.5],
        delta: [0.3; 3],
        sigma0: 0.1,
        a: 0.02,
        b: 0.01,
        s: 5.0,
        const_c: 1.0,
        m_tau: -0.1,
        s_tau: 0.1,
        phi: Some(phi),
    }
}

pub fn true_hyper3() -> Phase3Hyper {
    Phase3Hyper {
        mu_bar: 2.0,
        sigma_mu: 0.2,
        rho_bar: 0.8,
        sigma_rho: 0.1,
        sigma_eps: 0.05,
    }
}

const MAX_ATTEMPTS: usize = 1_000_000;

/// Forward simulation of one country under the model.
fn simulate(
    rng: &mut ChaCha8Rng,
    grid: TimeGrid,
    h2: &Phase2Hyper,
    h3: &Phase3Hyper,
    cs: &CountryState,
    f0: f64,
) -> Vec<f64> {
    let n = grid.n_periods;
    let m = cs.markers;
    let mut f = vec![f0; n];
    let mut e_prev = 0.0;
    for s in 0..n - 1 {
        f[s + 1] = if m.lambda.is_some_and(|l| s >= l) {
            phase3::step(rng, f[s], cs.p3.as_ref().expect("phase III params"), h3.sigma_eps)
        } else {
            let e = if m.tau == Some(s) {
                h2.m_tau + h2.s_tau * std_normal(rng)
            } else {
                let mean = if s > m.phase2_start() { h2.phi.unwrap_or(0.0) * e_prev } else { 0.0 };
                mean + distortion_sd(f[s], grid.year(s), h2) * std_normal(rng)
            };
            e_prev = e;
            f[s] - double_logistic(f[s], &cs.p2) - e
        };
    }
    f
}

/// Draw one country whose detected markers match the generating ones.
fn draw_country(
    rng: &mut ChaCha8Rng,
    grid: TimeGrid,
    flags: ModeFlags,
    h2: &Phase2Hyper,
    h3: &Phase3Hyper,
    id: CountryId,
    early_start: bool,
) -> (CountryState, Vec<f64>) {
    let bounds = flags.bounds();
    for _ in 0..MAX_ATTEMPTS {
        let (markers, f0, uc) = if early_start {
            let f0 = rng.random_range(5.6..7.0);
            (PhaseMarkers { tau: Some(0), lambda: None }, f0, f0)
        } else {
            let lambda = [10, 15, 20][rng.random_range(0..3)];
            let f0 = rng.random_range(2.2..3.0);
            let uc = rng.random_range(5.5..8.8);
            (PhaseMarkers { tau: None, lambda: Some(lambda) }, f0, uc)
        };
        let cs = CountryState {
            id,
            markers,
            p2: draw_country_params(rng, h2, uc, bounds),
            p3: markers.lambda.map(|_| phase3::draw_country_params(rng, h3)),
        };
        let f = simulate(rng, grid, h2, h3, &cs, f0);
        let ok_range = f.iter().all(|v| *v > 0.5 && *v < 10.0);
        if ok_range && find_markers(&f, flags.annual) == markers {
            return (cs, f);
        }
    }
    panic!("no synthetic country matched its markers after {MAX_ATTEMPTS} attempts");
}

/// Draw a synthetic annual world with an AR(1) transition model. Even
/// positions start their transition at the first period; odd positions
/// began earlier and enter the post-transition phase inside the grid.
pub fn generate(spec: &WorldSpec) -> SyntheticWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grid = TimeGrid::new(spec.start_year, 1, spec.n_periods).expect("valid grid");
    let flags = ModeFlags::new(true, true, true);
    let h2 = true_hyper2(spec.phi);
    let h3 = true_hyper3();
    let mut countries = Vec::new();
    let mut tfr = Vec::new();
    let mut observations = Vec::new();
    let mut unbiased_vr = BTreeSet::new();
    for i in 0..spec.n_countries {
        let id = CountryId(101 + i as u32);
        let (cs, f) = draw_country(&mut rng, grid, flags, &h2, &h3, id, i % 2 == 0);
        let source = |s: &str| BTreeMap::from([(DEFAULT_SOURCE_COLUMN.to_string(), CovariateValue::Category(s.into()))]);
        if i < spec.n_with_vr {
            unbiased_vr.insert(id);
            for (t, v) in f.iter().enumerate() {
                observations.push(RawObservation {
                    country: id,
                    year: grid.year(t) as f64 + 0.5,
                    tfr: v + VR_SD * std_normal(&mut rng),
                    covariates: source(VR_LEVEL),
                });
            }
        }
        for t in (0..spec.n_periods).step_by(spec.survey_every.max(1)) {
            observations.push(RawObservation {
                country: id,
                year: grid.year(t) as f64 + 0.5,
                tfr: f[t] + SURVEY_BIAS + SURVEY_SD * std_normal(&mut rng),
                covariates: source(SURVEY_LEVEL),
            });
        }
        countries.push(cs);
        tfr.push(f);
    }
    let references = countries
        .iter()
        .zip(&tfr)
        .map(|(c, f)| ReferenceSeries::new(c.id, grid, f.clone()).expect("grid length"))
        .collect();
    SyntheticWorld {
        grid,
        flags,
        raw: RawDataset {
            observations,
            covariate_names: vec![DEFAULT_SOURCE_COLUMN.to_string()],
            cont_covariate_names: Vec::new(),
        },
        references,
        unbiased_vr,
        truth: Truth {
            hyper2: h2,
            hyper3: h3,
            countries,
            tfr,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_match_generation() {
        let w = generate(&WorldSpec::default());
        for (cs, f) in w.truth.countries.iter().zip(&w.truth.tfr) {
            assert_eq!(find_markers(f, true), cs.markers);
        }
        assert_eq!(w.references.len(), 10);
        assert_eq!(w.unbiased_vr.len(), 6);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&WorldSpec::default());
        let b = generate(&WorldSpec::default());
        assert_eq!(a.truth.tfr, b.truth.tfr);
        assert_eq!(a.raw, b.raw);
    }
}
