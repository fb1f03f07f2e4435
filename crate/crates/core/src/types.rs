//! Domain types shared by every stage of the estimation and projection
//! pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// UN numeric country code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountryId(pub u32);

impl fmt::Display for CountryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Regular calendar grid of estimation periods. Periods are labelled by
/// their start year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start_year: i32,
    pub step: u32,
    pub n_periods: usize,
}

impl TimeGrid {
    pub fn new(start_year: i32, step: u32, n_periods: usize) -> Result<Self> {
        if step != 1 && step != 5 {
            return Err(Error::Invalid(format!("grid step must be 1 or 5, got {step}")));
        }
        if n_periods < 3 {
            return Err(Error::Invalid(format!(
                "grid needs at least 3 periods, got {n_periods}"
            )));
        }
        Ok(TimeGrid {
            start_year,
            step,
            n_periods,
        })
    }

    /// Grid covering `start_year..=end_year`; the end is rounded down onto the grid.
    pub fn spanning(start_year: i32, end_year: i32, step: u32) -> Result<Self> {
        if end_year < start_year {
            return Err(Error::Invalid(format!(
                "end year {end_year} precedes start year {start_year}"
            )));
        }
        let n = ((end_year - start_year) as u32 / step) as usize + 1;
        TimeGrid::new(start_year, step, n)
    }

    pub fn year(&self, t: usize) -> i32 {
        self.start_year + (t as i32) * self.step as i32
    }

    pub fn end_year(&self) -> i32 {
        self.year(self.n_periods - 1)
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.n_periods).map(|t| self.year(t))
    }

    /// Index of the period labelled exactly `year`.
    pub fn index_of(&self, year: i32) -> Option<usize> {
        let off = year - self.start_year;
        if off < 0 || off % self.step as i32 != 0 {
            return None;
        }
        let t = (off / self.step as i32) as usize;
        (t < self.n_periods).then_some(t)
    }

    pub fn is_annual(&self) -> bool {
        self.step == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateValue {
    Category(String),
    Real(f64),
}

impl fmt::Display for CovariateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateValue::Category(s) => f.write_str(s),
            CovariateValue::Real(v) => write!(f, "{v}"),
        }
    }
}

/// One raw TFR data point from a survey, census or registration system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawObservation {
    pub country: CountryId,
    pub year: f64,
    pub tfr: f64,
    pub covariates: BTreeMap<String, CovariateValue>,
}

impl RawObservation {
    pub fn category(&self, name: &str) -> Option<&str> {
        match self.covariates.get(name) {
            Some(CovariateValue::Category(s)) => Some(s),
            _ => None,
        }
    }
}

/// Initial (reference) TFR path of one country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSeries {
    pub country: CountryId,
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl ReferenceSeries {
    pub fn new(country: CountryId, grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_periods {
            return Err(Error::Invalid(format!(
                "country {country}: {} values for a grid of {} periods",
                values.len(),
                grid.n_periods
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "country {country}: non-positive TFR value {v}"
            )));
        }
        Ok(ReferenceSeries {
            country,
            grid,
            values,
        })
    }
}

/// Start of Phase II (`tau`) and Phase III (`lambda`) as period indices.
/// `tau == None` means the transition began before the first period;
/// `lambda == None` means the country has not reached Phase III.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseMarkers {
    pub tau: Option<usize>,
    pub lambda: Option<usize>,
}

impl PhaseMarkers {
    /// First period whose outgoing transition is modelled by Phase II.
    pub fn phase2_start(&self) -> usize {
        self.tau.unwrap_or(0)
    }

    /// One past the last Phase II transition, for a series of `n` periods.
    pub fn phase2_end(&self, n: usize) -> usize {
        self.lambda.unwrap_or(n - 1).min(n - 1)
    }
}

/// Open interval of the maximum decrement `d_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecrementBounds {
    pub lo: f64,
    pub hi: f64,
}

impl DecrementBounds {
    pub const FIVE_YEAR: DecrementBounds = DecrementBounds { lo: 0.25, hi: 2.5 };
    pub const ANNUAL: DecrementBounds = DecrementBounds { lo: 0.05, hi: 0.5 };

    pub fn for_mode(annual: bool) -> Self {
        if annual {
            Self::ANNUAL
        } else {
            Self::FIVE_YEAR
        }
    }
}

/// Open interval of the lower asymptote `Δ_c4`.
pub const DELTA4_BOUNDS: (f64, f64) = (1.0, 2.5);

/// Upper limit of the uniform prior on the start level `U_c`.
pub const UC_UPPER: f64 = 8.8;

/// `ln((x - lo) / (hi - x))`.
pub fn bounded_logit(x: f64, lo: f64, hi: f64) -> f64 {
    ((x - lo) / (hi - x)).ln()
}

/// Inverse of [`bounded_logit`].
pub fn bounded_logistic(y: f64, lo: f64, hi: f64) -> f64 {
    if y >= 0.0 {
        let e = (-y).exp();
        (lo * e + hi) / (1.0 + e)
    } else {
        let e = y.exp();
        (lo + hi * e) / (1.0 + e)
    }
}

fn softmax3(gamma: &[f64; 3]) -> [f64; 3] {
    let m = gamma.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = gamma.map(|g| (g - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Country parameters of the double-logistic transition model, kept both
/// on the sampling scale (`gamma`, `delta4_prime`, `dc_star`, `uc`) and on
/// the natural scale (`deltas`, `dc`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2CountryParams {
    pub gamma: [f64; 3],
    pub delta4_prime: f64,
    pub dc_star: f64,
    pub uc: f64,
    /// `Δ_c1..Δ_c4`.
    pub deltas: [f64; 4],
    pub dc: f64,
}

impl Phase2CountryParams {
    pub fn from_transformed(
        gamma: [f64; 3],
        delta4_prime: f64,
        dc_star: f64,
        uc: f64,
        bounds: DecrementBounds,
    ) -> Self {
        let d4 = bounded_logistic(delta4_prime, DELTA4_BOUNDS.0, DELTA4_BOUNDS.1);
        let p = softmax3(&gamma);
        let range = uc - d4;
        Phase2CountryParams {
            gamma,
            delta4_prime,
            dc_star,
            uc,
            deltas: [p[0] * range, p[1] * range, p[2] * range, d4],
            dc: bounded_logistic(dc_star, bounds.lo, bounds.hi),
        }
    }

    /// Rebuild the natural-scale values from the sampling-scale ones.
    pub fn refreshed(&self, bounds: DecrementBounds) -> Self {
        Self::from_transformed(self.gamma, self.delta4_prime, self.dc_star, self.uc, bounds)
    }

    pub fn with_uc(&self, uc: f64, bounds: DecrementBounds) -> Self {
        Self::from_transformed(self.gamma, self.delta4_prime, self.dc_star, uc, bounds)
    }

    /// Shares `p_ci = Δ_ci / (U_c - Δ_c4)` recomputed from the stored deltas.
    pub fn shares(&self) -> [f64; 3] {
        let range = self.uc - self.deltas[3];
        [
            self.deltas[0] / range,
            self.deltas[1] / range,
            self.deltas[2] / range,
        ]
    }

    pub fn softmax_shares(&self) -> [f64; 3] {
        softmax3(&self.gamma)
    }
}

/// World-level parameters of the transition model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Hyper {
    pub chi: f64,
    pub psi: f64,
    /// Mean of `Δ'_c4` (stored as `Triangle4`).
    pub delta4_mean: f64,
    pub delta4_sd: f64,
    pub alpha: [f64; 3],
    pub delta: [f64; 3],
    pub sigma0: f64,
    pub a: f64,
    pub b: f64,
    pub s: f64,
    pub const_c: f64,
    pub m_tau: f64,
    pub s_tau: f64,
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase3CountryParams {
    pub mu: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase3Hyper {
    pub mu_bar: f64,
    pub sigma_mu: f64,
    pub rho_bar: f64,
    pub sigma_rho: f64,
    pub sigma_eps: f64,
}

/// Supports of the Phase III world parameters.
pub mod phase3_bounds {
    pub const MU_BAR: (f64, f64) = (0.0, 2.1);
    #[allow(clippy::approx_constant)] // prior bound, not 1/π
    pub const SIGMA_MU: (f64, f64) = (0.0, 0.318);
    pub const RHO_BAR: (f64, f64) = (0.0, 1.0);
    pub const SIGMA_RHO: (f64, f64) = (0.0, 0.289);
    pub const SIGMA_EPS: (f64, f64) = (0.0, 0.5);
    /// Truncation applied to the country means `μ_c`.
    pub const MU_C: (f64, f64) = (0.0, 10.0);
}

/// Supports of the bounded transition-model world parameters.
pub mod phase2_bounds {
    pub const SIGMA0_MAX: f64 = 0.6;
    pub const A: (f64, f64) = (0.0, 0.2);
    pub const B: (f64, f64) = (0.0, 0.2);
    pub const S: (f64, f64) = (3.5, 6.5);
    pub const CONST_C: (f64, f64) = (0.8, 2.0);
    pub const PHI: (f64, f64) = (0.0, 1.0);
}

/// Open support of latent TFR values.
pub const TFR_BOUNDS: (f64, f64) = (0.0, 20.0);

/// Fixed bias and sd of one categorical/continuous covariate combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSdRow {
    pub covariates: Vec<String>,
    pub bias: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationError {
    pub bias: f64,
    pub sd: f64,
}

/// Fitted measurement-error model of one country.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementParams {
    pub country: Option<CountryId>,
    /// Names of the covariate columns in `table`.
    pub covariate_names: Vec<String>,
    /// Bias-model coefficients, by design-column name.
    pub beta: Vec<(String, f64)>,
    /// Sd-model coefficients (already on the sd scale).
    pub gamma: Vec<(String, f64)>,
    /// One entry per observation of the country, in input order.
    pub per_observation: Vec<ObservationError>,
    /// One row per unique covariate combination.
    pub table: Vec<BiasSdRow>,
    pub warnings: Vec<String>,
}

/// Likelihood contribution of one raw observation: `y ~ N(f + bias, sd²)`
/// where `f` interpolates latent periods `lo` and `hi` with weight `w_lo`
/// on `lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationTerm {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub y: f64,
    pub bias: f64,
    pub sd: f64,
}

impl ObservationTerm {
    pub fn latent(&self, f: &[f64]) -> f64 {
        if self.lo == self.hi {
            f[self.lo]
        } else {
            self.w_lo * f[self.lo] + (1.0 - self.w_lo) * f[self.hi]
        }
    }

    pub fn touches(&self, t: usize) -> bool {
        self.lo == t || self.hi == t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeFlags {
    pub annual: bool,
    pub ar_phase2: bool,
    pub uncertainty: bool,
}

impl ModeFlags {
    /// AR(1) in Phase II only applies to annual runs.
    pub fn new(annual: bool, ar_phase2: bool, uncertainty: bool) -> Self {
        ModeFlags {
            annual,
            ar_phase2: ar_phase2 && annual,
            uncertainty,
        }
    }

    pub fn bounds(&self) -> DecrementBounds {
        DecrementBounds::for_mode(self.annual)
    }
}

/// Dense country × period matrix of latent TFR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfrMatrix {
    n_periods: usize,
    values: Vec<f64>,
}

impl TfrMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_periods = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_periods) {
            return Err(Error::Invalid("ragged TFR matrix".into()));
        }
        Ok(TfrMatrix {
            n_periods,
            values: rows.concat(),
        })
    }

    pub fn n_countries(&self) -> usize {
        if self.n_periods == 0 {
            0
        } else {
            self.values.len() / self.n_periods
        }
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.values[c * self.n_periods..(c + 1) * self.n_periods]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.n_periods..(c + 1) * self.n_periods]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryState {
    pub id: CountryId,
    pub markers: PhaseMarkers,
    pub p2: Phase2CountryParams,
    /// Present exactly for countries that reached Phase III.
    pub p3: Option<Phase3CountryParams>,
}

/// Full MCMC state of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub flags: ModeFlags,
    pub grid: TimeGrid,
    pub sigma0_min: f64,
    pub hyper2: Phase2Hyper,
    pub hyper3: Phase3Hyper,
    pub countries: Vec<CountryState>,
    pub tfr: TfrMatrix,
    /// Observation terms per country; fixed during sampling and rebuilt
    /// from the stored raw data rather than checkpointed.
    #[serde(skip)]
    pub meas: Arc<Vec<Vec<ObservationTerm>>>,
}

impl ModelState {
    pub fn country_index(&self, id: CountryId) -> Option<usize> {
        self.countries.iter().position(|c| c.id == id)
    }

    pub fn observations(&self, c: usize) -> &[ObservationTerm] {
        self.meas.get(c).map_or(&[], Vec::as_slice)
    }
}

/// Posterior sample of TFR paths per country on an extended grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub grid: TimeGrid,
    /// Index in `grid` of the last estimation period.
    pub present_index: usize,
    /// Whether past periods carry posterior uncertainty.
    pub uncertainty: bool,
    pub countries: BTreeMap<CountryId, Vec<Vec<f64>>>,
}

impl TrajectorySet {
    pub fn n_trajectories(&self) -> usize {
        self.countries.values().next().map_or(0, Vec::len)
    }
}

/// One broken invariant found by [`validate_state`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

const CONSISTENCY_TOL: f64 = 1e-12;

/// Report every broken type invariant of `state`; an empty list means the
/// state is valid.
pub fn validate_state(state: &ModelState) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |location: String, message: String| out.push(Violation { location, message });

    let n = state.grid.n_periods;
    if state.tfr.n_periods() != n || state.tfr.n_countries() != state.countries.len() {
        push(
            "tfr".into(),
            format!(
                "matrix is {}x{}, expected {}x{}",
                state.tfr.n_countries(),
                state.tfr.n_periods(),
                state.countries.len(),
                n
            ),
        );
        return out;
    }

    let h = &state.hyper2;
    let in_closed = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    if !(h.sigma0 >= state.sigma0_min && h.sigma0 <= phase2_bounds::SIGMA0_MAX) {
        push(
            "sigma0".into(),
            format!(
                "{} outside [{}, {}]",
                h.sigma0,
                state.sigma0_min,
                phase2_bounds::SIGMA0_MAX
            ),
        );
    }
    for (name, v, b) in [
        ("a_sd", h.a, phase2_bounds::A),
        ("b_sd", h.b, phase2_bounds::B),
        ("S_sd", h.s, phase2_bounds::S),
        ("const_sd", h.const_c, phase2_bounds::CONST_C),
    ] {
        if !in_closed(v, b) {
            push(name.into(), format!("{v} outside [{}, {}]", b.0, b.1));
        }
    }
    for (name, v) in [
        ("psi", h.psi),
        ("delta4", h.delta4_sd),
        ("sd_eps_tau", h.s_tau),
        ("delta[0]", h.delta[0]),
        ("delta[1]", h.delta[1]),
        ("delta[2]", h.delta[2]),
    ] {
        if !(v > 0.0) {
            push(name.into(), format!("{v} must be positive"));
        }
    }
    match (state.flags.ar_phase2, h.phi) {
        (true, Some(phi)) if !(phi > 0.0 && phi < 1.0) => {
            push("rho_phase2".into(), format!("{phi} outside (0, 1)"))
        }
        (true, None) => push("rho_phase2".into(), "missing in AR mode".into()),
        (false, Some(_)) => push("rho_phase2".into(), "present without AR mode".into()),
        _ => {}
    }

    let h3 = &state.hyper3;
    for (name, v, b) in [
        ("mu", h3.mu_bar, phase3_bounds::MU_BAR),
        ("sigma.mu", h3.sigma_mu, phase3_bounds::SIGMA_MU),
        ("rho", h3.rho_bar, phase3_bounds::RHO_BAR),
        ("sigma.rho", h3.sigma_rho, phase3_bounds::SIGMA_RHO),
        ("sigma.eps", h3.sigma_eps, phase3_bounds::SIGMA_EPS),
    ] {
        if !in_closed(v, b) {
            push(name.into(), format!("{v} outside [{}, {}]", b.0, b.1));
        }
    }

    let bounds = state.flags.bounds();
    let mut seen = std::collections::BTreeSet::new();
    for (ci, c) in state.countries.iter().enumerate() {
        let loc = |p: &str| format!("country {} {p}", c.id);
        if c.id.0 == 0 {
            push(loc("id"), "country code must be positive".into());
        }
        if !seen.insert(c.id) {
            push(loc("id"), "duplicate country code".into());
        }
        let f = state.tfr.row(ci);
        if let Some((t, v)) = f
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > TFR_BOUNDS.0 && **v < TFR_BOUNDS.1))
        {
            push(loc(&format!("tfr_{}", t + 1)), format!("{v} outside (0, 20)"));
        }
        let m = c.markers;
        if let (Some(tau), Some(lambda)) = (m.tau, m.lambda) {
            if tau >= lambda {
                push(loc("markers"), format!("tau {tau} not before lambda {lambda}"));
            }
        }
        if m.tau.is_some_and(|t| t >= n) || m.lambda.is_some_and(|l| l >= n) {
            push(loc("markers"), "marker outside the grid".into());
        }

        let p = &c.p2;
        if !(p.dc > bounds.lo && p.dc < bounds.hi) {
            push(loc("d"), format!("{} outside ({}, {})", p.dc, bounds.lo, bounds.hi));
        }
        if !(p.deltas[3] > DELTA4_BOUNDS.0 && p.deltas[3] < DELTA4_BOUNDS.1) {
            push(loc("Triangle_c4"), format!("{} outside (1, 2.5)", p.deltas[3]));
        }
        let shares = p.shares();
        let total: f64 = shares.iter().sum();
        if (total - 1.0).abs() > CONSISTENCY_TOL {
            push(loc("shares"), format!("p_c1 + p_c2 + p_c3 = {total}, expected 1"));
        }
        let soft = p.softmax_shares();
        if shares
            .iter()
            .zip(soft.iter())
            .any(|(a, b)| (a - b).abs() > CONSISTENCY_TOL)
        {
            push(loc("gamma"), "shares disagree with softmax(gamma)".into());
        }
        if (bounded_logit(p.dc, bounds.lo, bounds.hi) - p.dc_star).abs() > 1e-9
            || (bounded_logistic(p.dc_star, bounds.lo, bounds.hi) - p.dc).abs() > CONSISTENCY_TOL
        {
            push(loc("d"), "d and its transform disagree".into());
        }
        if (bounded_logistic(p.delta4_prime, DELTA4_BOUNDS.0, DELTA4_BOUNDS.1) - p.deltas[3])
            .abs()
            > CONSISTENCY_TOL
        {
            push(loc("Triangle_c4"), "Triangle_c4 and its transform disagree".into());
        }
        if p.deltas[..3].iter().any(|d| !(*d > 0.0)) {
            push(loc("Triangle_c"), "non-positive range parameter".into());
        }
        match m.tau {
            Some(tau) if tau < n => {
                if (p.uc - f[tau]).abs() > CONSISTENCY_TOL {
                    push(loc("U"), format!("U = {} but f at tau = {}", p.uc, f[tau]));
                }
            }
            _ => {
                if !(p.uc <= UC_UPPER) {
                    push(loc("U"), format!("{} above {UC_UPPER}", p.uc));
                }
            }
        }

        match (m.lambda, &c.p3) {
            (Some(_), Some(p3)) => {
                if !(p3.rho > 0.0 && p3.rho < 1.0) {
                    push(loc("rho.c"), format!("{} outside (0, 1)", p3.rho));
                }
                if !(p3.mu >= 0.0) {
                    push(loc("mu.c"), format!("{} is negative", p3.mu));
                }
            }
            (Some(_), None) => push(loc("mu.c"), "Phase III country without parameters".into()),
            (None, Some(_)) => push(loc("mu.c"), "parameters for a country not in Phase III".into()),
            (None, None) => {}
        }
    }
    out
}
