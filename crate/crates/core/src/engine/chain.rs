//! One MCMC chain: sweep scheduling, thinning, trace rows and checkpoints.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::store::{
    chain_dir, file_name, mark_of, read_json, verify_mark, write_json, FileMark, Part, Store, TraceBuffer,
    CHECKPOINT_FILE, PHASE2_COUNTRY_NAMES, PHASE2_HYPER_NAMES, PHASE3_COUNTRY_NAMES, PHASE3_HYPER_NAMES, PHI_NAME,
    TFR_NAME,
};
use crate::error::{Error, Result};
use crate::phase2::{sample_phase2_sweep, ChainTuning, SweepControl};
use crate::phase3::sample_phase3_sweep;
use crate::types::{
    bounded_logit, CountryId, DecrementBounds, ModelState, Phase2CountryParams, Phase2Hyper, Phase3CountryParams,
    Phase3Hyper, DELTA4_BOUNDS,
};

/// Stored rows buffered in memory before appending to disk.
const FLUSH_ROWS: usize = 100;

/// Offset of the random stream of a separately run post-transition chain.
pub const PHASE3_STREAM_OFFSET: u64 = 1000;

/// What a chain samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainKind {
    /// Transition and post-transition models together (uncertainty on).
    Joint,
    /// Transition model only; the post-transition chain runs separately.
    Phase2Only,
    Phase3Only,
}

impl ChainKind {
    pub fn parts(self) -> &'static [Part] {
        match self {
            ChainKind::Joint => &[Part::Phase2, Part::Phase3],
            ChainKind::Phase2Only => &[Part::Phase2],
            ChainKind::Phase3Only => &[Part::Phase3],
        }
    }

    fn home(self) -> Part {
        match self {
            ChainKind::Phase3Only => Part::Phase3,
            _ => Part::Phase2,
        }
    }
}

/// Everything needed to resume a chain exactly where it stopped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: ChainKind,
    pub chain: usize,
    pub iter: u64,
    pub state: ModelState,
    pub tuning: ChainTuning,
    pub rng: ChaCha8Rng,
    /// Marks of the trace files this chain writes, keyed by path relative
    /// to the store root.
    pub files: BTreeMap<String, FileMark>,
}

pub fn checkpoint_path(root: &Path, kind: ChainKind, chain: usize) -> PathBuf {
    chain_dir(root, kind.home(), chain).join(CHECKPOINT_FILE)
}

/// Random stream of a chain: one master seed, streams by chain index.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Checkpoint {
    pub fn new(kind: ChainKind, chain: usize, state: ModelState, seed: u64) -> Self {
        let stream = match kind {
            ChainKind::Phase3Only => chain as u64 + PHASE3_STREAM_OFFSET,
            _ => chain as u64,
        };
        let tuning = ChainTuning::new(state.countries.len(), state.grid.n_periods, state.flags.annual);
        Checkpoint {
            kind,
            chain,
            iter: 0,
            state,
            tuning,
            rng: chain_rng(seed, stream),
            files: BTreeMap::new(),
        }
    }

    pub fn load(root: &Path, kind: ChainKind, chain: usize) -> Result<Self> {
        let path = checkpoint_path(root, kind, chain);
        if !path.exists() {
            return Err(Error::integrity(path, "checkpoint is missing"));
        }
        read_json(&path)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        write_json(&checkpoint_path(root, self.kind, self.chain), self)
    }

    /// Check every recorded trace file against its mark.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for (rel, mark) in &self.files {
            verify_mark(&root.join(rel), mark)?;
        }
        Ok(())
    }

    fn rows(&self) -> Vec<(PathBuf, Vec<f64>)> {
        let mut out = Vec::new();
        for part in self.kind.parts() {
            let dir = chain_dir(Path::new(""), *part, self.chain);
            let rows = match part {
                Part::Phase2 => phase2_rows(&self.state),
                Part::Phase3 => phase3_rows(&self.state),
            };
            out.extend(rows.into_iter().map(|(name, v)| (dir.join(name), v)));
        }
        out
    }

    /// Create empty trace files so every file exists from the start.
    pub fn init_files(&mut self, root: &Path) -> Result<()> {
        for (rel, _) in self.rows() {
            super::store::write_file(&root.join(&rel), b"")?;
        }
        self.refresh_marks(root)
    }

    fn refresh_marks(&mut self, root: &Path) -> Result<()> {
        let mut files = BTreeMap::new();
        for (rel, _) in self.rows() {
            let key = rel.to_string_lossy().into_owned();
            files.insert(key, mark_of(&root.join(&rel))?);
        }
        self.files = files;
        Ok(())
    }

    /// Refresh the marks of the listed files (relative paths) only.
    pub fn refresh_marks_for(&mut self, root: &Path, rel: &BTreeSet<String>) -> Result<()> {
        for (key, mark) in self.files.iter_mut() {
            if rel.contains(key) {
                *mark = mark_of(&root.join(key))?;
            }
        }
        Ok(())
    }

    /// Run `n_iters` further sweeps, appending every `thin`-th state to the
    /// trace files, then save the checkpoint.
    pub fn advance(&mut self, root: &Path, n_iters: u64, thin: u64, burnin: u64) -> Result<()> {
        let mut buf = TraceBuffer::default();
        let start = self.iter;
        for it in start + 1..=start + n_iters {
            let ctl = SweepControl {
                iter: it,
                adapt: it <= burnin,
            };
            match self.kind {
                ChainKind::Joint => {
                    sample_phase2_sweep(&mut self.state, &mut self.tuning, &mut self.rng, ctl);
                    sample_phase3_sweep(&mut self.state, &mut self.rng);
                }
                ChainKind::Phase2Only => {
                    sample_phase2_sweep(&mut self.state, &mut self.tuning, &mut self.rng, ctl)
                }
                ChainKind::Phase3Only => sample_phase3_sweep(&mut self.state, &mut self.rng),
            }
            if it % thin == 0 {
                for (rel, values) in self.rows() {
                    buf.push(root.join(rel), &values);
                }
                buf.end_row();
                if buf.buffered_rows() >= FLUSH_ROWS {
                    buf.flush()?;
                }
            }
            self.iter = it;
        }
        buf.flush()?;
        self.refresh_marks(root)?;
        self.save(root)
    }
}

/// Trace rows of the transition model: world parameters, then per country.
pub fn phase2_rows(state: &ModelState) -> Vec<(String, Vec<f64>)> {
    let h = &state.hyper2;
    let scalars = [
        h.delta4_mean,
        h.delta4_sd,
        h.psi,
        h.chi,
        h.a,
        h.b,
        h.const_c,
        h.s,
        h.sigma0,
        h.m_tau,
        h.s_tau,
    ];
    let mut out = vec![
        (file_name(PHASE2_HYPER_NAMES[0], None), h.alpha.to_vec()),
        (file_name(PHASE2_HYPER_NAMES[1], None), h.delta.to_vec()),
    ];
    for (name, v) in PHASE2_HYPER_NAMES[2..].iter().zip(scalars) {
        out.push((file_name(name, None), vec![v]));
    }
    if state.flags.ar_phase2 {
        out.push((file_name(PHI_NAME, None), vec![h.phi.unwrap_or(f64::NAN)]));
    }
    for (c, cs) in state.countries.iter().enumerate() {
        out.extend(country_phase2_rows(state, c, cs.id));
    }
    out
}

pub fn country_phase2_rows(state: &ModelState, c: usize, id: CountryId) -> Vec<(String, Vec<f64>)> {
    let p = &state.countries[c].p2;
    let mut out = vec![
        (file_name(PHASE2_COUNTRY_NAMES[0], Some(id)), p.gamma.to_vec()),
        (file_name(PHASE2_COUNTRY_NAMES[1], Some(id)), vec![p.deltas[3]]),
        (file_name(PHASE2_COUNTRY_NAMES[2], Some(id)), vec![p.dc]),
        (file_name(PHASE2_COUNTRY_NAMES[3], Some(id)), vec![p.uc]),
    ];
    if state.flags.uncertainty {
        out.push((file_name(TFR_NAME, Some(id)), state.tfr.row(c).to_vec()));
    }
    out
}

/// Trace rows of the post-transition model.
pub fn phase3_rows(state: &ModelState) -> Vec<(String, Vec<f64>)> {
    let h = &state.hyper3;
    let mut out: Vec<(String, Vec<f64>)> = PHASE3_HYPER_NAMES
        .iter()
        .zip([h.mu_bar, h.rho_bar, h.sigma_mu, h.sigma_rho, h.sigma_eps])
        .map(|(n, v)| (file_name(n, None), vec![v]))
        .collect();
    for cs in &state.countries {
        if let Some(p3) = &cs.p3 {
            out.extend(country_phase3_rows(p3, cs.id));
        }
    }
    out
}

pub fn country_phase3_rows(p3: &Phase3CountryParams, id: CountryId) -> Vec<(String, Vec<f64>)> {
    vec![
        (file_name(PHASE3_COUNTRY_NAMES[0], Some(id)), vec![p3.mu]),
        (file_name(PHASE3_COUNTRY_NAMES[1], Some(id)), vec![p3.rho]),
    ]
}

fn column(store: &Store, part: Part, chain: usize, name: &str, country: Option<CountryId>) -> Result<Vec<Vec<f64>>> {
    let rows = store.read_param(part, chain, name, country)?;
    let expected = store.meta().rows_per_chain();
    if rows.len() != expected {
        return Err(Error::integrity(
            store.trace_path(part, chain, name, country),
            format!("has {} rows, expected {expected}", rows.len()),
        ));
    }
    Ok(rows)
}

fn scalar(rows: &[Vec<f64>], r: usize) -> f64 {
    rows[r].first().copied().unwrap_or(f64::NAN)
}

fn triple(rows: &[Vec<f64>], r: usize) -> [f64; 3] {
    std::array::from_fn(|i| rows[r].get(i).copied().unwrap_or(f64::NAN))
}

/// Transition-model world parameters of every stored row of a chain.
pub fn read_hyper2(store: &Store, chain: usize) -> Result<Vec<Phase2Hyper>> {
    let meta = store.meta();
    let get = |name: &str| column(store, Part::Phase2, chain, name, None);
    let cols: Vec<Vec<Vec<f64>>> = PHASE2_HYPER_NAMES.iter().map(|n| get(n)).collect::<Result<_>>()?;
    let phi = if meta.flags.ar_phase2 { Some(get(PHI_NAME)?) } else { None };
    Ok((0..meta.rows_per_chain())
        .map(|r| Phase2Hyper {
            alpha: triple(&cols[0], r),
            delta: triple(&cols[1], r),
            delta4_mean: scalar(&cols[2], r),
            delta4_sd: scalar(&cols[3], r),
            psi: scalar(&cols[4], r),
            chi: scalar(&cols[5], r),
            a: scalar(&cols[6], r),
            b: scalar(&cols[7], r),
            const_c: scalar(&cols[8], r),
            s: scalar(&cols[9], r),
            sigma0: scalar(&cols[10], r),
            m_tau: scalar(&cols[11], r),
            s_tau: scalar(&cols[12], r),
            phi: phi.as_ref().map(|p| scalar(p, r)),
        })
        .collect())
}

pub fn read_hyper3(store: &Store, chain: usize) -> Result<Vec<Phase3Hyper>> {
    let cols: Vec<Vec<Vec<f64>>> = PHASE3_HYPER_NAMES
        .iter()
        .map(|n| column(store, Part::Phase3, chain, n, None))
        .collect::<Result<_>>()?;
    Ok((0..store.meta().rows_per_chain())
        .map(|r| Phase3Hyper {
            mu_bar: scalar(&cols[0], r),
            rho_bar: scalar(&cols[1], r),
            sigma_mu: scalar(&cols[2], r),
            sigma_rho: scalar(&cols[3], r),
            sigma_eps: scalar(&cols[4], r),
        })
        .collect())
}

/// Rebuild country transition parameters from their stored natural-scale
/// values.
pub fn country_params_from_values(
    gamma: [f64; 3],
    delta4: f64,
    dc: f64,
    uc: f64,
    bounds: DecrementBounds,
) -> Phase2CountryParams {
    let mut p = Phase2CountryParams::from_transformed(
        gamma,
        bounded_logit(delta4, DELTA4_BOUNDS.0, DELTA4_BOUNDS.1),
        bounded_logit(dc, bounds.lo, bounds.hi),
        uc,
        bounds,
    );
    // keep the stored values exactly rather than their transform round trip
    let range = uc - delta4;
    let shares = p.softmax_shares();
    p.deltas = [shares[0] * range, shares[1] * range, shares[2] * range, delta4];
    p.dc = dc;
    p
}

/// Country transition parameters of every stored row of a chain.
pub fn read_country2(store: &Store, chain: usize, id: CountryId) -> Result<Vec<Phase2CountryParams>> {
    let bounds = store.meta().flags.bounds();
    let cols: Vec<Vec<Vec<f64>>> = PHASE2_COUNTRY_NAMES
        .iter()
        .map(|n| column(store, Part::Phase2, chain, n, Some(id)))
        .collect::<Result<_>>()?;
    Ok((0..store.meta().rows_per_chain())
        .map(|r| {
            country_params_from_values(
                triple(&cols[0], r),
                scalar(&cols[1], r),
                scalar(&cols[2], r),
                scalar(&cols[3], r),
                bounds,
            )
        })
        .collect())
}

pub fn read_country3(store: &Store, chain: usize, id: CountryId) -> Result<Vec<Phase3CountryParams>> {
    let mu = column(store, Part::Phase3, chain, PHASE3_COUNTRY_NAMES[0], Some(id))?;
    let rho = column(store, Part::Phase3, chain, PHASE3_COUNTRY_NAMES[1], Some(id))?;
    Ok((0..store.meta().rows_per_chain())
        .map(|r| Phase3CountryParams {
            mu: scalar(&mu, r),
            rho: scalar(&rho, r),
        })
        .collect())
}

pub fn read_tfr(store: &Store, chain: usize, id: CountryId) -> Result<Vec<Vec<f64>>> {
    let rows = column(store, Part::Phase2, chain, TFR_NAME, Some(id))?;
    let n = store.meta().grid.n_periods;
    if let Some(bad) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::integrity(
            store.trace_path(Part::Phase2, chain, TFR_NAME, Some(id)),
            format!("row {} has {} columns, expected {n}", bad + 1, rows[bad].len()),
        ));
    }
    Ok(rows)
}
