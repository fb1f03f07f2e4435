//! Convergence checks and posterior summaries over stored chains.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::store::{write_file, Part, Store, DIAGNOSTICS_DIR, TFR_NAME};
use crate::error::{Error, Result};
use crate::stats::{mean, quantile_sorted, sd, sorted, variance};
use crate::types::CountryId;

/// A parameter converged when its scale reduction is below this.
pub const PSRF_THRESHOLD: f64 = 1.1;
/// Share of latent TFR parameters that must converge.
pub const TFR_SHARE: f64 = 0.95;
/// Shortest thinned post-burn-in chain that can be checked.
pub const MIN_LENGTH: usize = 100;
pub const SUMMARY_LEVELS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

/// Split-chain potential scale reduction factor `sqrt(1 + B / (n W))`:
/// every chain is halved (dropping a middle value when odd), `W` is the
/// mean within-half variance and `B / n` the variance of the half means.
/// Zero spread everywhere counts as converged; spread only between halves
/// gives infinity.
pub fn psrf(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect();
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0);
    if n < 2 || halves.len() < 2 {
        return f64::NAN;
    }
    let w = mean(&halves.iter().map(|h| variance(&h[..n])).collect::<Vec<_>>());
    let between = variance(&halves.iter().map(|h| mean(&h[..n])).collect::<Vec<_>>());
    if w == 0.0 {
        return if between == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (1.0 + between / w).sqrt()
}

/// Stored rows kept after dropping iterations up to `burnin` and keeping
/// every `thin`-th iteration (rounded to whole stored rows).
pub fn kept_rows(stored_iterations: &[u64], store_thin: u64, burnin: u64, thin: u64) -> Vec<usize> {
    let step = (thin / store_thin.max(1)).max(1) as usize;
    (0..stored_iterations.len())
        .filter(|&r| stored_iterations[r] > burnin)
        .step_by(step)
        .collect()
}

/// One convergence check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    pub name: String,
    pub psrf: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnosis {
    pub thin: u64,
    pub burnin: u64,
    pub express: bool,
    pub n_chains: usize,
    /// Thinned post-burn-in length per chain.
    pub length: usize,
    pub hyper: Vec<ParamReport>,
    pub country: Vec<ParamReport>,
    pub tfr: Vec<ParamReport>,
    /// Share of latent TFR parameters that converged (1 when there are none).
    pub tfr_share: f64,
    pub converged: bool,
}

/// Column label of a parameter: `alpha_2`, `gamma_1_country4`,
/// `tfr_1990_country4`.
fn label(name: &str, col: Option<String>, country: Option<CountryId>) -> String {
    let mut s = name.to_string();
    if let Some(c) = col {
        s.push('_');
        s.push_str(&c);
    }
    if let Some(id) = country {
        let _ = write!(s, "_country{id}");
    }
    s
}

/// Thinned post-burn-in columns of a parameter, one vector per chain and column.
fn columns(
    store: &Store,
    part: Part,
    name: &str,
    country: Option<CountryId>,
    rows: &[usize],
) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let meta = store.meta();
    let mut per_chain = Vec::with_capacity(meta.n_chains);
    for k in 1..=meta.n_chains {
        let trace = store.read_param(part, k, name, country)?;
        if trace.len() != meta.rows_per_chain() {
            return Err(Error::integrity(
                store.trace_path(part, k, name, country),
                format!("has {} rows, expected {}", trace.len(), meta.rows_per_chain()),
            ));
        }
        per_chain.push(trace);
    }
    let width = per_chain[0].first().map_or(0, Vec::len);
    let names: Vec<String> = match width {
        1 => vec![label(name, None, country)],
        _ if name == TFR_NAME => meta.grid.years().map(|y| label(name, Some(y.to_string()), country)).collect(),
        _ => (1..=width).map(|j| label(name, Some(j.to_string()), country)).collect(),
    };
    Ok(names
        .into_iter()
        .enumerate()
        .map(|(j, n)| {
            let chains = per_chain
                .iter()
                .map(|t| rows.iter().map(|&r| t[r].get(j).copied().unwrap_or(f64::NAN)).collect())
                .collect();
            (n, chains)
        })
        .collect())
}

fn check(cols: Vec<(String, Vec<Vec<f64>>)>) -> Vec<ParamReport> {
    cols.into_par_iter()
        .map(|(name, chains)| {
            let r = psrf(&chains);
            ParamReport {
                name,
                psrf: r,
                converged: r < PSRF_THRESHOLD,
            }
        })
        .collect()
}

/// Share of converged latent values and the overall verdict.
pub fn verdict(hyper: &[ParamReport], country: &[ParamReport], tfr: &[ParamReport]) -> (f64, bool) {
    let share = if tfr.is_empty() {
        1.0
    } else {
        tfr.iter().filter(|r| r.converged).count() as f64 / tfr.len() as f64
    };
    let ok = hyper.iter().all(|r| r.converged) && country.iter().all(|r| r.converged) && share >= TFR_SHARE;
    (share, ok)
}

/// Convergence verdict: every world parameter and (unless `express`) every
/// country parameter must converge, plus at least 95% of latent TFR values.
pub fn diagnose(store: &Store, thin: u64, burnin: u64, express: bool) -> Result<Diagnosis> {
    let meta = store.meta();
    if meta.n_chains < 2 {
        return Err(Error::Config(format!(
            "convergence needs at least 2 chains; the store has {}",
            meta.n_chains
        )));
    }
    let rows = kept_rows(&meta.stored_iterations(), meta.thin, burnin, thin);
    if rows.len() < MIN_LENGTH {
        return Err(Error::Config(format!(
            "after burnin {burnin} and thin {thin} each chain keeps {} values; at least {MIN_LENGTH} are needed",
            rows.len()
        )));
    }
    let mut hyper = Vec::new();
    for part in [Part::Phase2, Part::Phase3] {
        for name in meta.hyper_names(part) {
            hyper.extend(check(columns(store, part, name, None, &rows)?));
        }
    }
    let mut country = Vec::new();
    let mut tfr = Vec::new();
    for id in meta.country_ids() {
        for part in [Part::Phase2, Part::Phase3] {
            for name in meta.country_names(part, id) {
                if name == TFR_NAME {
                    tfr.extend(check(columns(store, part, name, Some(id), &rows)?));
                } else if !express {
                    country.extend(check(columns(store, part, name, Some(id), &rows)?));
                }
            }
        }
    }
    let (tfr_share, converged) = verdict(&hyper, &country, &tfr);
    let d = Diagnosis {
        thin,
        burnin,
        express,
        n_chains: meta.n_chains,
        length: rows.len(),
        hyper,
        country,
        tfr,
        tfr_share,
        converged,
    };
    let path = store.root().join(DIAGNOSTICS_DIR).join(format!("{thin}_{burnin}.txt"));
    write_file(&path, render(&d).as_bytes())?;
    Ok(d)
}

/// Plain-text report.
pub fn render(d: &Diagnosis) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "chains: {}  thinned length: {}  thin: {}  burnin: {}", d.n_chains, d.length, d.thin, d.burnin);
    let _ = writeln!(s, "rule: split-chain PSRF < {PSRF_THRESHOLD}; latent tfr: at least {}% converged", TFR_SHARE * 100.0);
    let section = |s: &mut String, title: &str, reps: &[ParamReport]| {
        let bad: Vec<&ParamReport> = reps.iter().filter(|r| !r.converged).collect();
        let _ = writeln!(s, "{title}: {} of {} converged", reps.len() - bad.len(), reps.len());
        for r in bad {
            let _ = writeln!(s, "  {} {:.4}", r.name, r.psrf);
        }
    };
    section(&mut s, "world parameters", &d.hyper);
    if d.express {
        let _ = writeln!(s, "country parameters: skipped");
    } else {
        section(&mut s, "country parameters", &d.country);
    }
    section(&mut s, "latent tfr", &d.tfr);
    let _ = writeln!(s, "latent tfr share: {:.4}", d.tfr_share);
    let _ = writeln!(s, "verdict: {}", if d.converged { "converged" } else { "not converged" });
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub naive_se: f64,
    pub ts_se: f64,
    /// At [`SUMMARY_LEVELS`].
    pub quantiles: Vec<f64>,
}

pub fn summarize_chains(name: String, chains: &[Vec<f64>]) -> SummaryRow {
    let pooled: Vec<f64> = chains.concat();
    let n = pooled.len() as f64;
    let s = sd(&pooled);
    let k = chains.len() as f64;
    let ts_var: f64 = chains.iter().map(|c| crate::stats::time_series_se(c).powi(2)).sum();
    let q = sorted(&pooled);
    SummaryRow {
        name,
        mean: mean(&pooled),
        sd: s,
        naive_se: s / n.sqrt(),
        ts_se: ts_var.sqrt() / k,
        quantiles: SUMMARY_LEVELS.iter().map(|&p| quantile_sorted(&q, p)).collect(),
    }
}

/// Every parameter name valid for a store, world parameters first.
pub fn valid_names(store: &Store) -> Vec<&'static str> {
    let meta = store.meta();
    let mut v = meta.hyper_names(Part::Phase2);
    v.extend(meta.hyper_names(Part::Phase3));
    v.extend(crate::engine::store::PHASE2_COUNTRY_NAMES);
    if meta.flags.uncertainty {
        v.push(TFR_NAME);
    }
    v.extend(crate::engine::store::PHASE3_COUNTRY_NAMES);
    v
}

/// Posterior summaries of the named parameters (all world parameters, plus
/// the country's own when `country` is given, if `names` is empty).
pub fn summarize(
    store: &Store,
    names: &[String],
    country: Option<CountryId>,
    thin: u64,
    burnin: u64,
) -> Result<Vec<SummaryRow>> {
    let meta = store.meta();
    if let Some(id) = country {
        store.require_country(id)?;
    }
    let wanted: Vec<String> = if names.is_empty() {
        let mut v: Vec<String> = meta.hyper_names(Part::Phase2).iter().map(|s| s.to_string()).collect();
        v.extend(meta.hyper_names(Part::Phase3).iter().map(|s| s.to_string()));
        if let Some(id) = country {
            for part in [Part::Phase2, Part::Phase3] {
                v.extend(meta.country_names(part, id).iter().map(|s| s.to_string()));
            }
        }
        v
    } else {
        names.to_vec()
    };
    let rows = kept_rows(&meta.stored_iterations(), meta.thin, burnin, thin);
    if rows.is_empty() {
        return Err(Error::Config(format!("burnin {burnin} leaves no stored iterations")));
    }
    let mut out = Vec::new();
    for name in &wanted {
        let (part, per_country) = store.part_of(name).ok_or_else(|| Error::UnknownParameter {
            name: name.clone(),
            valid: valid_names(store).join(", "),
        })?;
        let c = if per_country {
            let id = country.ok_or_else(|| Error::Config(format!("'{name}' is country-specific; give a country")))?;
            if meta.country_names(part, id).is_empty() {
                return Err(Error::Config(format!("country {id} has no post-transition parameters")));
            }
            Some(id)
        } else {
            None
        };
        for (label, chains) in columns(store, part, name, c, &rows)? {
            out.push(summarize_chains(label, &chains));
        }
    }
    Ok(out)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("parameter,mean,sd,naive_se,time_series_se");
    for p in SUMMARY_LEVELS {
        let _ = write!(s, ",{}%", p * 100.0);
    }
    s.push('\n');
    let g = crate::engine::store::format_g15;
    for r in rows {
        let _ = write!(s, "{},{},{},{},{}", r.name, g(r.mean), g(r.sd), g(r.naive_se), g(r.ts_se));
        for q in &r.quantiles {
            let _ = write!(s, ",{}", g(*q));
        }
        s.push('\n');
    }
    s
}

/// Posterior draws of a country's past TFR and optional per-period quantiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationTable {
    pub years: Vec<i32>,
    /// One row per kept pooled draw, one column per period.
    pub matrix: Vec<Vec<f64>>,
    pub levels: Option<Vec<f64>>,
    /// Per period, one value per level.
    pub quantiles: Option<Vec<Vec<f64>>>,
}

/// Pool post-burn-in latent TFR draws across chains and keep every
/// `thin`-th pooled draw.
pub fn estimation_quantiles(
    store: &Store,
    country: CountryId,
    levels: Option<&[f64]>,
    thin: u64,
    burnin: u64,
) -> Result<EstimationTable> {
    let meta = store.meta();
    if !meta.flags.uncertainty {
        return Err(Error::Config(
            "the store was run without uncertainty and holds no latent TFR draws".into(),
        ));
    }
    store.require_country(country)?;
    if thin == 0 {
        return Err(Error::Config("thin must be at least 1".into()));
    }
    let iters = meta.stored_iterations();
    let post: Vec<usize> = (0..iters.len()).filter(|&r| iters[r] > burnin).collect();
    let mut pooled = Vec::new();
    for k in 1..=meta.n_chains {
        let t = crate::engine::chain::read_tfr(store, k, country)?;
        pooled.extend(post.iter().map(|&r| t[r].clone()));
    }
    let matrix: Vec<Vec<f64>> = pooled.into_iter().step_by(thin as usize).collect();
    if matrix.is_empty() {
        return Err(Error::Config(format!("burnin {burnin} leaves no stored iterations")));
    }
    let quantiles = levels.map(|lv| {
        (0..meta.grid.n_periods)
            .map(|t| {
                let col = sorted(&matrix.iter().map(|r| r[t]).collect::<Vec<_>>());
                lv.iter().map(|&p| quantile_sorted(&col, p)).collect()
            })
            .collect()
    });
    Ok(EstimationTable {
        years: meta.grid.years().collect(),
        matrix,
        levels: levels.map(<[f64]>::to_vec),
        quantiles,
    })
}
