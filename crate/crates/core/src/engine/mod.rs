//! Chain orchestration: fresh runs, continuation and country-specific
//! re-estimation against frozen world-parameter traces.

pub mod chain;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{attach_observations, load_raw, load_reference, locate, reference_on_grid, write_raw, write_reference, RawDataset};
use crate::measurement::{fit_bias_sd, observation_terms, DEFAULT_SOURCE_COLUMN};
use crate::phase2::{self, update_country_params, update_latent_tfr, ChainTuning, SweepControl};
use crate::phase3;
use crate::phases::find_markers;
use crate::types::{
    CountryId, MeasurementParams, ModeFlags, ModelState, ObservationTerm, PhaseMarkers, ReferenceSeries, TfrMatrix,
    TimeGrid,
};
use chain::{
    chain_rng, country_phase2_rows, country_phase3_rows, read_hyper2, read_hyper3, ChainKind, Checkpoint,
};
use store::{
    chain_dir, write_json, write_trace, CountryMeta, ExtraRecord, Meta, Part, Store, CONVERGENCE_RULE,
    META_FILE, PHASE3_DIR, PHASE3_META_FILE, RAW_EXTRA_DIR, RAW_FILE, REFERENCE_FILE,
};

/// Lower bound of `σ₀` by default.
pub fn default_sigma0_min(annual: bool) -> f64 {
    if annual {
        0.04
    } else {
        0.01
    }
}

pub fn default_burnin(iters: u64) -> u64 {
    (iters / 2).min(2000)
}

/// Offset of the random streams used by `extra` re-estimation.
const EXTRA_STREAM_OFFSET: u64 = 2000;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n_chains: usize,
    pub iters: u64,
    pub thin: u64,
    /// Iterations with proposal adaptation; `None` picks [`default_burnin`].
    pub burnin: Option<u64>,
    pub annual: bool,
    pub ar_phase2: bool,
    pub uncertainty: bool,
    pub sigma0_min: Option<f64>,
    pub unbiased_vr: BTreeSet<CountryId>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub parallel: bool,
    pub start_year: Option<i32>,
    pub present_year: Option<i32>,
    pub source_column: String,
    /// Remove an existing store at `output_dir` first.
    pub replace: bool,
}

impl RunConfig {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            n_chains: 3,
            iters: 5000,
            thin: 1,
            burnin: None,
            annual: false,
            ar_phase2: false,
            uncertainty: false,
            sigma0_min: None,
            unbiased_vr: BTreeSet::new(),
            seed: 1,
            output_dir: output_dir.into(),
            parallel: false,
            start_year: None,
            present_year: None,
            source_column: DEFAULT_SOURCE_COLUMN.to_string(),
            replace: false,
        }
    }

    pub fn flags(&self) -> ModeFlags {
        ModeFlags::new(self.annual, self.ar_phase2, self.uncertainty)
    }

    pub fn burnin(&self) -> u64 {
        self.burnin.unwrap_or_else(|| default_burnin(self.iters))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("need at least one chain".into()));
        }
        if self.thin == 0 || self.iters < self.thin {
            return Err(Error::Config(format!(
                "need iters >= thin >= 1 (iters {}, thin {})",
                self.iters, self.thin
            )));
        }
        if self.burnin() >= self.iters {
            return Err(Error::Config(format!(
                "burnin {} must be below iters {}",
                self.burnin(),
                self.iters
            )));
        }
        if let Some(s) = self.sigma0_min {
            if !(s > 0.0 && s < crate::types::phase2_bounds::SIGMA0_MAX) {
                return Err(Error::Config(format!("sigma0-min {s} outside (0, 0.6)")));
            }
        }
        if self.ar_phase2 && !self.annual {
            log::warn!("--ar-phase2 is ignored without --annual");
        }
        Ok(())
    }
}

/// Inputs of the samplers derived from the raw data, references and flags.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub grid: TimeGrid,
    /// On the run grid, ordered by country code.
    pub references: Vec<ReferenceSeries>,
    pub markers: Vec<PhaseMarkers>,
    /// Fitted measurement models (uncertainty mode only).
    pub measurement: Vec<Option<MeasurementParams>>,
    pub meas: Arc<Vec<Vec<ObservationTerm>>>,
}

/// Observations that fall on the grid.
pub fn on_grid(raw: &RawDataset, grid: TimeGrid) -> RawDataset {
    RawDataset {
        observations: raw
            .observations
            .iter()
            .filter(|o| locate(grid, o.year).is_some())
            .cloned()
            .collect(),
        covariate_names: raw.covariate_names.clone(),
        cont_covariate_names: raw.cont_covariate_names.clone(),
    }
}

/// Fit the measurement model of one country and build its likelihood terms.
pub fn country_measurement(
    raw: &RawDataset,
    reference: &ReferenceSeries,
    unbiased_vr: &BTreeSet<CountryId>,
    source_column: &str,
) -> Result<(MeasurementParams, Vec<ObservationTerm>)> {
    let id = reference.country;
    let one = BTreeSet::from([id]);
    let raw = on_grid(&raw.restricted_to(&one), reference.grid);
    let params = fit_bias_sd(&raw, reference, id, unbiased_vr, source_column)?;
    let attachment = attach_observations(&raw, reference.grid);
    let terms = observation_terms(&raw, &attachment, id, &params);
    Ok((params, terms))
}

pub fn prepare(
    raw: &RawDataset,
    references: Vec<ReferenceSeries>,
    flags: ModeFlags,
    unbiased_vr: &BTreeSet<CountryId>,
    source_column: &str,
) -> Result<Prepared> {
    let grid = references
        .first()
        .map(|r| r.grid)
        .ok_or_else(|| Error::Invalid("no reference series".into()))?;
    let markers = references.iter().map(|r| find_markers(&r.values, flags.annual)).collect();
    let mut measurement = Vec::with_capacity(references.len());
    let mut meas = Vec::with_capacity(references.len());
    for r in &references {
        if flags.uncertainty {
            let (params, terms) = country_measurement(raw, r, unbiased_vr, source_column)?;
            measurement.push(Some(params));
            meas.push(terms);
        } else {
            measurement.push(None);
            meas.push(Vec::new());
        }
    }
    let known: BTreeSet<CountryId> = references.iter().map(|r| r.country).collect();
    let orphans: Vec<String> = raw.countries().difference(&known).map(|c| c.to_string()).collect();
    if !orphans.is_empty() {
        log::warn!("raw data for countries without a reference series ignored: {}", orphans.join(", "));
    }
    Ok(Prepared {
        grid,
        references,
        markers,
        measurement,
        meas: Arc::new(meas),
    })
}

/// Run grid from the reference grid and optional year limits.
pub fn run_grid(reference_grid: TimeGrid, annual: bool, start: Option<i32>, present: Option<i32>) -> Result<TimeGrid> {
    let step = if annual { 1 } else { 5 };
    let start = start.unwrap_or(reference_grid.start_year);
    let present = present.unwrap_or(reference_grid.end_year());
    if !annual && reference_grid.step != 5 {
        return Err(Error::Config("a five-year run needs a five-year reference".into()));
    }
    if (start - reference_grid.start_year) % reference_grid.step as i32 != 0 && !annual {
        return Err(Error::Config(format!("start year {start} is not on the five-year reference grid")));
    }
    if start < reference_grid.start_year || present > reference_grid.end_year() || present <= start {
        return Err(Error::Config(format!(
            "years {start}-{present} not within the reference span {}-{}",
            reference_grid.start_year,
            reference_grid.end_year()
        )));
    }
    TimeGrid::spanning(start, present, step)
}

/// Starting state: world parameters at prior medians, country parameters at
/// prior means, latent TFR at the reference.
pub fn initial_state(flags: ModeFlags, sigma0_min: f64, prep: &Prepared) -> Result<ModelState> {
    let h2 = phase2::initial_hyper(flags, sigma0_min);
    let h3 = phase3::initial_hyper();
    let rows: Vec<Vec<f64>> = prep.references.iter().map(|r| r.values.clone()).collect();
    let countries = prep
        .references
        .iter()
        .zip(&prep.markers)
        .map(|(r, m)| phase2::initial_country(r.country, *m, &h2, &h3, &r.values, flags.bounds()))
        .collect();
    Ok(ModelState {
        flags,
        grid: prep.grid,
        sigma0_min,
        hyper2: h2,
        hyper3: h3,
        countries,
        tfr: TfrMatrix::from_rows(&rows)?,
        meas: prep.meas.clone(),
    })
}

fn for_each_chain<T: Send>(
    n_chains: usize,
    parallel: bool,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if parallel {
        (1..=n_chains).into_par_iter().map(f).collect()
    } else {
        (1..=n_chains).map(f).collect()
    }
}

fn phase3_meta(meta: &Meta) -> serde_json::Value {
    serde_json::json!({
        "mode": if meta.flags.uncertainty { "one-step" } else { "two-step" },
        "n_chains": meta.n_chains,
        "iters": meta.iters,
        "thin": meta.thin,
        "burnin": meta.burnin,
        "countries": meta.phase3_countries(),
    })
}

fn save_meta(root: &Path, meta: &Meta) -> Result<()> {
    write_json(&root.join(META_FILE), meta)?;
    write_json(&root.join(PHASE3_DIR).join(PHASE3_META_FILE), &phase3_meta(meta))
}

fn chain_kinds(flags: ModeFlags) -> &'static [ChainKind] {
    if flags.uncertainty {
        &[ChainKind::Joint]
    } else {
        &[ChainKind::Phase2Only, ChainKind::Phase3Only]
    }
}

fn check_existing(cfg: &RunConfig) -> Result<()> {
    let root = &cfg.output_dir;
    if !root.exists() {
        return Ok(());
    }
    if let Ok(store) = Store::open(root) {
        let have = store.meta().flags;
        let want = cfg.flags();
        if have != want {
            return Err(Error::Config(format!(
                "{} holds a store with annual={}, ar_phase2={}, uncertainty={}; these flags cannot change \
                 (requested annual={}, ar_phase2={}, uncertainty={})",
                root.display(),
                have.annual,
                have.ar_phase2,
                have.uncertainty,
                want.annual,
                want.ar_phase2,
                want.uncertainty
            )));
        }
        if !cfg.replace {
            return Err(Error::Config(format!(
                "{} already holds a store; use continue, or --replace to start over",
                root.display()
            )));
        }
        std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
    } else if std::fs::read_dir(root).map_err(|e| Error::io(root, e))?.next().is_some() {
        return Err(Error::Config(format!("{} exists and is not an empty directory", root.display())));
    }
    Ok(())
}

/// Sample a new store.
pub fn run(cfg: &RunConfig, raw: &RawDataset, references: &[ReferenceSeries]) -> Result<Store> {
    cfg.validate()?;
    check_existing(cfg)?;
    let flags = cfg.flags();
    let ref_grid = references
        .first()
        .map(|r| r.grid)
        .ok_or_else(|| Error::Invalid("no reference series".into()))?;
    let grid = run_grid(ref_grid, flags.annual, cfg.start_year, cfg.present_year)?;
    let mut refs = references
        .iter()
        .map(|r| reference_on_grid(r, grid))
        .collect::<Result<Vec<_>>>()?;
    refs.sort_by_key(|r| r.country);
    let prep = prepare(raw, refs, flags, &cfg.unbiased_vr, &cfg.source_column)?;
    let sigma0_min = cfg.sigma0_min.unwrap_or_else(|| default_sigma0_min(flags.annual));
    let state = initial_state(flags, sigma0_min, &prep)?;

    let root = &cfg.output_dir;
    std::fs::create_dir_all(root.join(PHASE3_DIR)).map_err(|e| Error::io(root, e))?;
    write_raw(raw, &root.join(RAW_FILE))?;
    write_reference(&prep.references, &root.join(REFERENCE_FILE))?;
    let mut meta = Meta {
        flags,
        sigma0_min,
        grid,
        countries: prep
            .references
            .iter()
            .zip(&prep.markers)
            .map(|(r, m)| CountryMeta {
                id: r.country,
                markers: *m,
            })
            .collect(),
        covariates: raw.covariate_names.clone(),
        cont_covariates: raw.cont_covariate_names.clone(),
        source_column: cfg.source_column.clone(),
        unbiased_vr: cfg.unbiased_vr.clone(),
        n_chains: cfg.n_chains,
        thin: cfg.thin,
        burnin: cfg.burnin(),
        seed: cfg.seed,
        iters: 0,
        parallel: cfg.parallel,
        convergence_rule: CONVERGENCE_RULE.to_string(),
        extra: BTreeMap::new(),
    };
    save_meta(root, &meta)?;

    let kinds = chain_kinds(flags);
    for_each_chain(cfg.n_chains, cfg.parallel, |k| {
        for &kind in kinds {
            let mut ck = Checkpoint::new(kind, k, state.clone(), cfg.seed);
            ck.init_files(root)?;
            ck.advance(root, cfg.iters, cfg.thin, meta.burnin)?;
        }
        Ok(())
    })?;
    meta.iters = cfg.iters;
    save_meta(root, &meta)?;
    Store::open(root)
}

/// Observation terms of every stored country, rebuilt from the stored data.
fn stored_measurement(store: &Store) -> Result<Arc<Vec<Vec<ObservationTerm>>>> {
    let meta = store.meta();
    if !meta.flags.uncertainty {
        return Ok(Arc::new(vec![Vec::new(); meta.countries.len()]));
    }
    let root = store.root();
    let raw = load_raw(&root.join(RAW_FILE), &meta.covariates, &meta.cont_covariates)?;
    let refs = stored_references(store)?;
    let mut out = Vec::with_capacity(refs.len());
    for r in &refs {
        let (_, terms) = country_measurement(&raw, r, &meta.unbiased_vr, &meta.source_column)?;
        out.push(terms);
    }
    Ok(Arc::new(out))
}

/// Reference series stored with the run, in country order.
pub fn stored_references(store: &Store) -> Result<Vec<ReferenceSeries>> {
    let mut refs = load_reference(&store.root().join(REFERENCE_FILE))?;
    refs.sort_by_key(|r| r.country);
    let ids: Vec<CountryId> = refs.iter().map(|r| r.country).collect();
    if ids != store.meta().country_ids() {
        return Err(Error::integrity(
            store.root().join(REFERENCE_FILE),
            "countries differ from the meta record",
        ));
    }
    Ok(refs)
}

/// Extend every chain of a store by `extra_iters` iterations.
pub fn continue_run(root: impl AsRef<Path>, extra_iters: u64) -> Result<Store> {
    let root = root.as_ref();
    let store = Store::open(root)?;
    if extra_iters == 0 {
        return Ok(store);
    }
    let mut meta = store.meta().clone();
    if !meta.extra.is_empty() {
        return Err(Error::Config(
            "countries were re-estimated with extra; their traces no longer continue the original chains".into(),
        ));
    }
    let meas = stored_measurement(&store)?;
    let kinds = chain_kinds(meta.flags);
    // verify everything before any sampling
    let mut checkpoints = Vec::new();
    for k in 1..=meta.n_chains {
        for &kind in kinds {
            let ck = Checkpoint::load(root, kind, k)?;
            if ck.iter != meta.iters {
                return Err(Error::integrity(
                    chain::checkpoint_path(root, kind, k),
                    format!("checkpoint at iteration {}, meta records {}", ck.iter, meta.iters),
                ));
            }
            ck.verify(root)?;
            checkpoints.push(ck);
        }
    }
    let slots: Vec<std::sync::Mutex<Option<Checkpoint>>> =
        checkpoints.into_iter().map(|c| std::sync::Mutex::new(Some(c))).collect();
    let per_chain = kinds.len();
    for_each_chain(meta.n_chains, meta.parallel, |k| {
        for j in 0..per_chain {
            let mut ck = slots[(k - 1) * per_chain + j]
                .lock()
                .map_err(|_| Error::Invalid("poisoned checkpoint slot".into()))?
                .take()
                .expect("checkpoint taken once");
            ck.state.meas = meas.clone();
            ck.advance(root, extra_iters, meta.thin, meta.burnin)?;
        }
        Ok(())
    })?;
    meta.iters += extra_iters;
    save_meta(root, &meta)?;
    Store::open(root)
}

/// Overrides for country-specific re-estimation.
#[derive(Debug, Clone, Default)]
pub struct ExtraConfig {
    pub countries: BTreeSet<CountryId>,
    /// Replacement raw data and the path it was read from.
    pub raw: Option<(RawDataset, PathBuf)>,
    pub unbiased_vr: Option<BTreeSet<CountryId>>,
    /// Adaptive warm-up sweeps per country and chain.
    pub iters: u64,
    /// Stored rows per chain treated as burn-in of the world-parameter traces.
    pub burnin: u64,
    /// Requested mode flags; must match the store when given.
    pub annual: Option<bool>,
    pub ar_phase2: Option<bool>,
    pub parallel: bool,
}

/// Pooled post-burn-in world parameters of every chain.
fn pooled_hyper(store: &Store, burnin: u64) -> Result<(Vec<crate::types::Phase2Hyper>, Vec<crate::types::Phase3Hyper>)> {
    let meta = store.meta();
    let iters = meta.stored_iterations();
    let keep: Vec<usize> = (0..iters.len()).filter(|&r| iters[r] > burnin).collect();
    if keep.is_empty() {
        return Err(Error::Config(format!(
            "burnin {burnin} leaves no stored iterations (last stored is {})",
            iters.last().copied().unwrap_or(0)
        )));
    }
    let mut h2 = Vec::new();
    let mut h3 = Vec::new();
    for k in 1..=meta.n_chains {
        let a = read_hyper2(store, k)?;
        let b = read_hyper3(store, k)?;
        h2.extend(keep.iter().map(|&r| a[r].clone()));
        h3.extend(keep.iter().map(|&r| b[r]));
    }
    Ok((h2, h3))
}

/// Re-estimate the country-specific parameters of the listed countries,
/// holding the stored world-parameter traces fixed.
pub fn run_extra(root: impl AsRef<Path>, cfg: &ExtraConfig) -> Result<Store> {
    let root = root.as_ref();
    let store = Store::open(root)?;
    if cfg.countries.is_empty() {
        return Ok(store);
    }
    let meta = store.meta().clone();
    if cfg.annual.is_some_and(|a| a != meta.flags.annual) || cfg.ar_phase2.is_some_and(|a| a != meta.flags.ar_phase2) {
        return Err(Error::Config(format!(
            "annual and ar_phase2 are fixed by the store (annual={}, ar_phase2={})",
            meta.flags.annual, meta.flags.ar_phase2
        )));
    }
    for &c in &cfg.countries {
        store.require_country(c)?;
    }
    if meta.rows_per_chain() == 0 {
        return Err(Error::Config("store has no stored iterations".into()));
    }
    let (pool2, pool3) = pooled_hyper(&store, cfg.burnin)?;
    let refs = stored_references(&store)?;
    let unbiased = cfg.unbiased_vr.clone().unwrap_or_else(|| meta.unbiased_vr.clone());
    let base_raw;
    let raw = match &cfg.raw {
        Some((r, _)) => r,
        None => {
            base_raw = load_raw(&root.join(RAW_FILE), &meta.covariates, &meta.cont_covariates)?;
            &base_raw
        }
    };

    let mut touched = BTreeSet::new();
    let mut extra_records = BTreeMap::new();
    for &id in &cfg.countries {
        let c = refs.iter().position(|r| r.country == id).expect("country checked");
        let reference = &refs[c];
        let markers = meta.countries[c].markers;
        let terms = if meta.flags.uncertainty {
            country_measurement(raw, reference, &unbiased, &meta.source_column)?.1
        } else {
            Vec::new()
        };
        let raw_rel = match &cfg.raw {
            Some((r, _)) => {
                let rel = format!("{RAW_EXTRA_DIR}/raw_data_country{id}.csv");
                std::fs::create_dir_all(root.join(RAW_EXTRA_DIR)).map_err(|e| Error::io(root, e))?;
                write_raw(&r.restricted_to(&BTreeSet::from([id])), &root.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        let written = for_each_chain(meta.n_chains, cfg.parallel, |k| {
            resample_country(&meta, k, reference, markers, &terms, &pool2, &pool3, cfg.iters)
        })?;
        for (k, files) in written.into_iter().enumerate() {
            for part in [Part::Phase2, Part::Phase3] {
                for (name, rows) in files.iter().filter(|f| f.0 == part) .map(|f| (&f.1, &f.2)) {
                    let path = chain_dir(root, part, k + 1).join(name);
                    write_trace(&path, rows)?;
                    touched.insert(path.strip_prefix(root).expect("under root").to_string_lossy().into_owned());
                }
            }
        }
        extra_records.insert(
            id,
            ExtraRecord {
                extra_iter: cfg.iters,
                extra_burnin: cfg.burnin,
                extra_thin: meta.thin,
                raw_data: raw_rel,
                covariates: raw.covariate_names.clone(),
                cont_covariates: raw.cont_covariate_names.clone(),
                unbiased_vr: unbiased.contains(&id),
            },
        );
    }

    for k in 1..=meta.n_chains {
        for &kind in chain_kinds(meta.flags) {
            let mut ck = Checkpoint::load(root, kind, k)?;
            ck.refresh_marks_for(root, &touched)?;
            ck.save(root)?;
        }
    }
    let mut meta = meta;
    meta.extra.extend(extra_records);
    save_meta(root, &meta)?;
    Store::open(root)
}

type CountryFiles = Vec<(Part, String, Vec<Vec<f64>>)>;

/// Re-sample one country in one chain against the pooled world parameters:
/// an adaptive warm-up, then `thin` sweeps per stored row.
#[allow(clippy::too_many_arguments)]
fn resample_country(
    meta: &Meta,
    chain: usize,
    reference: &ReferenceSeries,
    markers: PhaseMarkers,
    terms: &[ObservationTerm],
    pool2: &[crate::types::Phase2Hyper],
    pool3: &[crate::types::Phase3Hyper],
    warmup: u64,
) -> Result<CountryFiles> {
    let flags = meta.flags;
    let id = reference.country;
    let mut rng = chain_rng(meta.seed, EXTRA_STREAM_OFFSET + chain as u64);
    let m = pool2.len();
    let offset = (chain - 1) * m / meta.n_chains;
    let h2 = pool2[offset].clone();
    let h3 = pool3[offset];
    let mut state = ModelState {
        flags,
        grid: meta.grid,
        sigma0_min: meta.sigma0_min,
        countries: vec![phase2::initial_country(id, markers, &h2, &h3, &reference.values, flags.bounds())],
        hyper2: h2,
        hyper3: h3,
        tfr: TfrMatrix::from_rows(std::slice::from_ref(&reference.values))?,
        meas: Arc::new(vec![terms.to_vec()]),
    };
    let mut tuning = ChainTuning::new(1, meta.grid.n_periods, flags.annual);
    let mut sweep = |state: &mut ModelState, tuning: &mut ChainTuning, ctl: SweepControl, r: usize| {
        state.hyper2 = pool2[r % m].clone();
        state.hyper3 = pool3[r % m];
        update_country_params(state, tuning, &mut rng, ctl);
        if flags.uncertainty {
            update_latent_tfr(state, tuning, &mut rng, ctl);
        }
        let cs = &state.countries[0];
        if let (Some(l), Some(mut p)) = (cs.markers.lambda, cs.p3) {
            phase3::gibbs_country(&mut rng, state.tfr.row(0), l, &mut p, &state.hyper3);
            state.countries[0].p3 = Some(p);
        }
    };
    for w in 1..=warmup {
        let ctl = SweepControl { iter: w, adapt: true };
        sweep(&mut state, &mut tuning, ctl, offset + w as usize);
    }
    let mut files: BTreeMap<(Part, String), Vec<Vec<f64>>> = BTreeMap::new();
    let mut record = |state: &ModelState| {
        for (name, v) in country_phase2_rows(state, 0, id) {
            files.entry((Part::Phase2, name)).or_default().push(v);
        }
        if let Some(p3) = &state.countries[0].p3 {
            for (name, v) in country_phase3_rows(p3, id) {
                files.entry((Part::Phase3, name)).or_default().push(v);
            }
        }
    };
    for r in 0..meta.rows_per_chain() {
        for _ in 0..meta.thin {
            let ctl = SweepControl {
                iter: warmup + 1,
                adapt: false,
            };
            sweep(&mut state, &mut tuning, ctl, offset + r);
        }
        record(&state);
    }
    Ok(files.into_iter().map(|((p, n), rows)| (p, n, rows)).collect())
}

/// Raw data and references of a store, restricted to the run grid.
pub fn load_store_inputs(store: &Store) -> Result<(RawDataset, Vec<ReferenceSeries>)> {
    let meta = store.meta();
    let raw = load_raw(&store.root().join(RAW_FILE), &meta.covariates, &meta.cont_covariates)?;
    Ok((raw, stored_references(store)?))
}
