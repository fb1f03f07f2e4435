//! Posterior projection of TFR trajectories from stored chains.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dist::std_normal;
use crate::engine::chain::{
    chain_rng, country_phase2_rows, country_phase3_rows, phase2_rows, phase3_rows, read_country2, read_country3,
    read_hyper2, read_hyper3, read_tfr,
};
use crate::engine::stored_references;
use crate::engine::store::{
    thinned_dir, write_file, write_json, write_trace, Part, Store, PREDICTIONS_DIR,
};
use crate::error::{Error, Result};
use crate::phase2::{distortion_sd, double_logistic};
use crate::phase3;
use crate::stats::{quantile_sorted, sorted};
use crate::types::{
    CountryId, CountryState, ModeFlags, ModelState, Phase2CountryParams, Phase2Hyper, Phase3CountryParams,
    Phase3Hyper, PhaseMarkers, TfrMatrix, TimeGrid, TrajectorySet,
};

/// Lowest projected TFR.
pub const TFR_FLOOR: f64 = 0.5;
/// Level below which an increase starts the post-transition phase.
pub const SWITCH_LEVEL: f64 = 2.0;
/// Offset of the per-country random streams of projections.
const PROJECTION_STREAM_OFFSET: u64 = 10_000;

pub const DEFAULT_LEVELS: [f64; 5] = [0.5, 0.025, 0.1, 0.9, 0.975];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Transition,
    PostTransition,
}

/// Phase of period `t + 1` given the values at `t` and `t + 1`: an increase
/// below the switch level starts the post-transition phase, which is
/// absorbing.
pub fn phase_switch_rule(current: Phase, f_t: f64, f_next: f64) -> Phase {
    match current {
        Phase::PostTransition => Phase::PostTransition,
        Phase::Transition if f_t < SWITCH_LEVEL && f_next > f_t => Phase::PostTransition,
        Phase::Transition => Phase::Transition,
    }
}

/// Parameter samples for one country, aligned with the world samples.
#[derive(Debug, Clone)]
pub struct CountrySamples {
    pub markers: PhaseMarkers,
    pub reference: Vec<f64>,
    pub p2: Vec<Phase2CountryParams>,
    pub p3: Option<Vec<Phase3CountryParams>>,
    /// Latent paths over the estimation grid (uncertainty mode).
    pub tfr: Option<Vec<Vec<f64>>>,
}

/// Everything a projection needs, one entry per selected posterior draw.
#[derive(Debug, Clone)]
pub struct ProjectionInput {
    pub grid: TimeGrid,
    pub flags: ModeFlags,
    pub hyper2: Vec<Phase2Hyper>,
    pub hyper3: Vec<Phase3Hyper>,
    pub countries: BTreeMap<CountryId, CountrySamples>,
    pub seed: u64,
}

/// Grid from the estimation start to `end_year`.
pub fn projection_grid(grid: TimeGrid, end_year: i32) -> Result<TimeGrid> {
    if end_year <= grid.end_year() {
        return Err(Error::Config(format!(
            "end year {end_year} must follow the last estimation period {}",
            grid.end_year()
        )));
    }
    let step = grid.step as i32;
    let periods = (end_year - grid.start_year) / step + 1;
    TimeGrid::new(grid.start_year, grid.step, periods as usize)
}

/// One projected trajectory over `full` starting from the path `past`.
#[allow(clippy::too_many_arguments)]
fn project_one<R: Rng + ?Sized>(
    rng: &mut R,
    full: TimeGrid,
    past: &[f64],
    markers: PhaseMarkers,
    p2: &Phase2CountryParams,
    p3: Option<&Phase3CountryParams>,
    h2: &Phase2Hyper,
    h3: &Phase3Hyper,
    ar: bool,
) -> Vec<f64> {
    let t_last = past.len() - 1;
    let mut f = past.to_vec();
    f.reserve(full.n_periods - past.len());
    let phi = if ar { h2.phi.unwrap_or(0.0) } else { 0.0 };
    let start = markers.phase2_start();
    // distortion of the last estimation transition, carried into the first step
    let mut e_prev = if ar && t_last > start {
        (f[t_last - 1] - f[t_last]) - double_logistic(f[t_last - 1], p2)
    } else {
        0.0
    };
    let mut phase = if markers.lambda.is_some() { Phase::PostTransition } else { Phase::Transition };
    let mut drawn_p3 = p3.copied();
    for s in t_last..full.n_periods - 1 {
        let cur = f[s];
        let next = match phase {
            Phase::PostTransition => {
                let p = *drawn_p3.get_or_insert_with(|| phase3::draw_country_params(rng, h3));
                phase3::step(rng, cur, &p, h3.sigma_eps)
            }
            Phase::Transition => {
                let e = if markers.tau == Some(s) {
                    h2.m_tau + h2.s_tau * std_normal(rng)
                } else {
                    let mean = if s > start { phi * e_prev } else { 0.0 };
                    mean + distortion_sd(cur, full.year(s), h2) * std_normal(rng)
                };
                e_prev = e;
                cur - double_logistic(cur, p2) - e
            }
        };
        let next = next.max(TFR_FLOOR);
        if phase == Phase::Transition {
            phase = phase_switch_rule(phase, cur, next);
        }
        f.push(next);
    }
    f
}

/// Project every country of `input` to `end_year`. Trajectories span the
/// whole grid: the past is the sampled latent path when `uncertainty` is
/// set and the reference otherwise.
pub fn predict_from_samples(input: &ProjectionInput, end_year: i32, uncertainty: bool) -> Result<TrajectorySet> {
    let full = projection_grid(input.grid, end_year)?;
    let n = input.hyper2.len();
    if n == 0 || input.hyper3.len() != n {
        return Err(Error::Invalid("projection needs matching, non-empty world samples".into()));
    }
    let results: Vec<(CountryId, Vec<Vec<f64>>)> = input
        .countries
        .par_iter()
        .map(|(&id, cs)| {
            if cs.p2.len() != n || cs.p3.as_ref().is_some_and(|p| p.len() != n) {
                return Err(Error::Invalid(format!("country {id}: sample count differs from world samples")));
            }
            let paths = match (uncertainty, &cs.tfr) {
                (true, Some(t)) if t.len() == n => t,
                (true, _) => {
                    return Err(Error::Config(format!(
                        "country {id}: no latent TFR samples; the store was run without uncertainty"
                    )))
                }
                _ => &Vec::new(),
            };
            let mut rng = chain_rng(input.seed, PROJECTION_STREAM_OFFSET + u64::from(id.0));
            let trajectories = (0..n)
                .map(|i| {
                    let past = if uncertainty { &paths[i] } else { &cs.reference };
                    project_one(
                        &mut rng,
                        full,
                        past,
                        cs.markers,
                        &cs.p2[i],
                        cs.p3.as_ref().map(|p| &p[i]),
                        &input.hyper2[i],
                        &input.hyper3[i],
                        input.flags.ar_phase2,
                    )
                })
                .collect();
            Ok((id, trajectories))
        })
        .collect::<Result<_>>()?;
    Ok(TrajectorySet {
        grid: full,
        present_index: input.grid.n_periods - 1,
        uncertainty,
        countries: results.into_iter().collect(),
    })
}

/// Per-period summary of a trajectory set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryTable {
    pub columns: Vec<String>,
    pub years: Vec<i32>,
    /// `None` marks a value that does not apply (NA).
    pub rows: Vec<Vec<Option<f64>>>,
}

fn level_label(p: f64) -> String {
    if p == 0.5 {
        "median".into()
    } else {
        format!("{p}")
    }
}

/// Quantiles per period plus median ∓ 0.5 columns for periods from the
/// present on. Past periods appear only when they carry uncertainty.
pub fn trajectory_table(set: &TrajectorySet, country: CountryId, levels: &[f64]) -> Result<TrajectoryTable> {
    let traj = set.countries.get(&country).ok_or(Error::UnknownCountry(country.0))?;
    if let Some(bad) = levels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Config(format!("quantile level {bad} outside [0, 1]")));
    }
    let mut columns: Vec<String> = levels.iter().map(|&p| level_label(p)).collect();
    columns.push("-0.5child".into());
    columns.push("+0.5child".into());
    let first = if set.uncertainty { 0 } else { set.present_index };
    let mut years = Vec::new();
    let mut rows = Vec::new();
    for t in first..set.grid.n_periods {
        let col: Vec<f64> = traj.iter().map(|tr| tr[t]).collect();
        let s = sorted(&col);
        let mut row: Vec<Option<f64>> = levels.iter().map(|&p| Some(quantile_sorted(&s, p))).collect();
        let median = quantile_sorted(&s, 0.5);
        let future = t >= set.present_index;
        row.push(future.then_some(median - 0.5));
        row.push(future.then_some(median + 0.5));
        years.push(set.grid.year(t));
        rows.push(row);
    }
    Ok(TrajectoryTable { columns, years, rows })
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), crate::engine::store::format_g15)
}

/// CSV rendering with a leading `year` column.
pub fn table_csv(table: &TrajectoryTable) -> String {
    let mut out = String::from("year");
    for c in &table.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (y, row) in table.years.iter().zip(&table.rows) {
        out.push_str(&y.to_string());
        for v in row {
            out.push(',');
            out.push_str(&fmt_cell(*v));
        }
        out.push('\n');
    }
    out
}

/// Selected rows of the pooled post-burn-in draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Thinning applied to the pooled draws.
    pub thin: usize,
    /// `(chain, row)` of every selected draw, in pooled order.
    pub draws: Vec<(usize, usize)>,
}

/// Drop stored rows at or before iteration `burnin`, pool the chains in
/// order and keep `n_traj` equally spaced draws.
pub fn select_draws(n_chains: usize, stored_iterations: &[u64], burnin: u64, n_traj: usize) -> Result<Selection> {
    let kept: Vec<usize> = (0..stored_iterations.len()).filter(|&r| stored_iterations[r] > burnin).collect();
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "burnin {burnin} leaves no stored rows (chains hold {} rows up to iteration {})",
            stored_iterations.len(),
            stored_iterations.last().copied().unwrap_or(0)
        )));
    }
    let pooled: Vec<(usize, usize)> = (1..=n_chains).flat_map(|k| kept.iter().map(move |&r| (k, r))).collect();
    if n_traj == 0 || n_traj > pooled.len() {
        return Err(Error::Config(format!(
            "{n_traj} trajectories requested from {} post-burn-in draws",
            pooled.len()
        )));
    }
    let thin = pooled.len() / n_traj;
    Ok(Selection {
        thin,
        draws: (0..n_traj).map(|j| pooled[j * thin]).collect(),
    })
}

fn pick<T: Clone>(selection: &Selection, by_chain: &BTreeMap<usize, Vec<T>>) -> Vec<T> {
    selection.draws.iter().map(|&(k, r)| by_chain[&k][r].clone()).collect()
}

/// Selected draws of a store, read into memory.
pub fn load_samples(store: &Store, selection: &Selection, uncertainty: bool) -> Result<ProjectionInput> {
    let meta = store.meta();
    if uncertainty && !meta.flags.uncertainty {
        return Err(Error::Config(
            "projection with past uncertainty needs a store run with uncertainty".into(),
        ));
    }
    let refs = stored_references(store)?;
    let mut h2_by_chain = BTreeMap::new();
    let mut h3_by_chain = BTreeMap::new();
    for k in 1..=meta.n_chains {
        h2_by_chain.insert(k, read_hyper2(store, k)?);
        h3_by_chain.insert(k, read_hyper3(store, k)?);
    }
    let hyper2: Vec<Phase2Hyper> = pick(selection, &h2_by_chain);
    let hyper3: Vec<Phase3Hyper> = pick(selection, &h3_by_chain);
    let mut countries = BTreeMap::new();
    for (cm, reference) in meta.countries.iter().zip(refs) {
        let id = cm.id;
        let mut p2 = BTreeMap::new();
        let mut p3 = BTreeMap::new();
        let mut tfr = BTreeMap::new();
        for k in 1..=meta.n_chains {
            p2.insert(k, read_country2(store, k, id)?);
            if cm.markers.lambda.is_some() {
                p3.insert(k, read_country3(store, k, id)?);
            }
            if uncertainty {
                tfr.insert(k, read_tfr(store, k, id)?);
            }
        }
        countries.insert(
            id,
            CountrySamples {
                markers: cm.markers,
                reference: reference.values,
                p2: pick(selection, &p2),
                p3: (!p3.is_empty()).then(|| pick(selection, &p3)),
                tfr: uncertainty.then(|| pick(selection, &tfr)),
            },
        );
    }
    Ok(ProjectionInput {
        grid: meta.grid,
        flags: meta.flags,
        hyper2,
        hyper3,
        countries,
        seed: meta.seed,
    })
}

/// Write the selected draws as a single pooled chain.
fn write_thinned(store: &Store, input: &ProjectionInput, selection: &Selection, burnin: u64) -> Result<PathBuf> {
    let meta = store.meta();
    let dir = thinned_dir(store.root(), selection.thin, burnin);
    let n = input.hyper2.len();
    let mut files: BTreeMap<(Part, String), Vec<Vec<f64>>> = BTreeMap::new();
    for i in 0..n {
        let state = ModelState {
            flags: input.flags,
            grid: input.grid,
            sigma0_min: meta.sigma0_min,
            hyper2: input.hyper2[i].clone(),
            hyper3: input.hyper3[i],
            countries: Vec::new(),
            tfr: TfrMatrix::from_rows(&[])?,
            meas: Default::default(),
        };
        for (name, v) in phase2_rows(&state).into_iter() {
            files.entry((Part::Phase2, name)).or_default().push(v);
        }
        for (name, v) in phase3_rows(&state) {
            files.entry((Part::Phase3, name)).or_default().push(v);
        }
        for (&id, cs) in &input.countries {
            let one = ModelState {
                countries: vec![CountryState {
                    id,
                    markers: cs.markers,
                    p2: cs.p2[i].clone(),
                    p3: cs.p3.as_ref().map(|p| p[i]),
                }],
                tfr: TfrMatrix::from_rows(std::slice::from_ref(
                    cs.tfr.as_ref().map_or(&cs.reference, |t| &t[i]),
                ))?,
                flags: ModeFlags {
                    uncertainty: cs.tfr.is_some(),
                    ..input.flags
                },
                ..state.clone()
            };
            for (name, v) in country_phase2_rows(&one, 0, id) {
                files.entry((Part::Phase2, name)).or_default().push(v);
            }
            if let Some(p) = &one.countries[0].p3 {
                for (name, v) in country_phase3_rows(p, id) {
                    files.entry((Part::Phase3, name)).or_default().push(v);
                }
            }
        }
    }
    let mc = dir.join("mc1");
    for ((_, name), rows) in &files {
        write_trace(&mc.join(name), rows)?;
    }
    write_json(
        &dir.join("meta.json"),
        &serde_json::json!({
            "source_chains": meta.n_chains,
            "burnin": burnin,
            "thin": selection.thin,
            "draws": n,
            "draw_origin": selection.draws.iter().map(|&(k, r)| [k, r + 1]).collect::<Vec<_>>(),
        }),
    )?;
    Ok(dir)
}

fn matrix_csv(years: &[i32], rows: &[Vec<f64>], from: usize, to: usize) -> String {
    let mut out = years[from..to].iter().map(|y| y.to_string()).collect::<Vec<_>>().join(",");
    out.push('\n');
    for r in rows {
        let cells: Vec<String> = r[from..to].iter().map(|v| crate::engine::store::format_g15(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Write trajectories and summaries under `predictions/`.
pub fn write_predictions(root: &Path, set: &TrajectorySet, meta: serde_json::Value) -> Result<()> {
    let dir = root.join(PREDICTIONS_DIR);
    let years: Vec<i32> = set.grid.years().collect();
    let t = set.present_index;
    for (id, traj) in &set.countries {
        write_file(
            &dir.join(format!("{id}.csv")),
            matrix_csv(&years, traj, t, set.grid.n_periods).as_bytes(),
        )?;
        if set.uncertainty {
            write_file(&dir.join(format!("{id}_past.csv")), matrix_csv(&years, traj, 0, t).as_bytes())?;
        }
        let table = trajectory_table(set, *id, &DEFAULT_LEVELS)?;
        write_file(&dir.join(format!("{id}_summary.csv")), table_csv(&table).as_bytes())?;
    }
    write_json(&dir.join("meta.json"), &meta)
}

fn read_matrix(path: &Path) -> Result<(Vec<i32>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let years = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(|h| h.trim().parse::<i32>().map_err(|_| Error::format(path, format!("'{h}' is not a year"))))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::format(path, format!("'{v}' is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((years, rows))
}

/// Trajectories of one country as written by [`predict`].
pub fn read_predictions(store: &Store, country: CountryId) -> Result<TrajectorySet> {
    store.require_country(country)?;
    let dir = store.root().join(PREDICTIONS_DIR);
    let future_path = dir.join(format!("{country}.csv"));
    if !future_path.is_file() {
        return Err(Error::Config(format!("no predictions for country {country}; run predict first")));
    }
    let (future_years, future) = read_matrix(&future_path)?;
    let past_path = dir.join(format!("{country}_past.csv"));
    let (past_years, past) = if past_path.is_file() {
        read_matrix(&past_path)?
    } else {
        (Vec::new(), vec![Vec::new(); future.len()])
    };
    if past.len() != future.len() {
        return Err(Error::integrity(&past_path, "trajectory count differs from the projection file"));
    }
    let start = past_years.first().or(future_years.first()).copied().unwrap_or(0);
    let n = past_years.len() + future_years.len();
    let grid = TimeGrid::new(start, store.meta().grid.step, n)?;
    let rows = past.into_iter().zip(future).map(|(mut a, b)| {
        a.extend(b);
        a
    });
    Ok(TrajectorySet {
        grid,
        present_index: past_years.len(),
        uncertainty: !past_years.is_empty(),
        countries: BTreeMap::from([(country, rows.collect())]),
    })
}

/// Project every country of a store: select draws, record them as a thinned
/// chain, and write trajectories under `predictions/`.
pub fn predict(store: &Store, end_year: i32, burnin: u64, n_traj: usize, uncertainty: bool) -> Result<TrajectorySet> {
    let meta = store.meta();
    let selection = select_draws(meta.n_chains, &meta.stored_iterations(), burnin, n_traj)?;
    let input = load_samples(store, &selection, uncertainty)?;
    let set = predict_from_samples(&input, end_year, uncertainty)?;
    let thinned = write_thinned(store, &input, &selection, burnin)?;
    write_predictions(
        store.root(),
        &set,
        serde_json::json!({
            "end_year": end_year,
            "burnin": burnin,
            "nr_traj": n_traj,
            "thin": selection.thin,
            "uncertainty": uncertainty,
            "present_year": meta.grid.end_year(),
            "floor": TFR_FLOOR,
            "thinned_mcmc": thinned.file_name().map(|s| s.to_string_lossy().into_owned()),
        }),
    )?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_rule_cases() {
        assert_eq!(phase_switch_rule(Phase::Transition, 3.0, 2.9), Phase::Transition);
        assert_eq!(phase_switch_rule(Phase::Transition, 3.0, 3.1), Phase::Transition);
        assert_eq!(phase_switch_rule(Phase::Transition, 1.8, 1.85), Phase::PostTransition);
        assert_eq!(phase_switch_rule(Phase::Transition, 1.8, 1.7), Phase::Transition);
        assert_eq!(phase_switch_rule(Phase::PostTransition, 3.0, 2.0), Phase::PostTransition);
    }

    #[test]
    fn selection_arithmetic() {
        let iters: Vec<u64> = (1..=5100).collect();
        let s = select_draws(3, &iters, 2100, 1000).unwrap();
        assert_eq!(s.thin, 9);
        assert_eq!(s.draws.len(), 1000);
        assert_eq!(s.draws[0], (1, 2100));
        assert!(select_draws(3, &iters, 5100, 10).is_err());
        assert!(select_draws(3, &iters, 2100, 9001).is_err());
    }

    #[test]
    fn grid_extension() {
        let g = TimeGrid::new(1950, 5, 14).unwrap();
        let full = projection_grid(g, 2100).unwrap();
        assert_eq!(full.end_year(), 2100);
        assert_eq!(full.n_periods, 31);
        assert!(projection_grid(g, 2015).is_err());
    }
}
