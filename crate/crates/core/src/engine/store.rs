//! On-disk chain store: meta record, plain-text trace files and
//! checkpoints.
//!
//! ```text
//! <root>/
//!   mcmc.meta.json  raw_data.csv  reference.csv
//!   mc1 .. mcK/            transition-model traces, checkpoint.json
//!   phaseIII/              meta.json, mc1 .. mcK/ post-transition traces
//!   thinned_mcmc_<thin>_<burnin>/   meta.json, mc1/ pooled selection
//!   predictions/  diagnostics/
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{CountryId, ModeFlags, PhaseMarkers, TimeGrid};

pub const META_FILE: &str = "mcmc.meta.json";
pub const PHASE3_DIR: &str = "phaseIII";
pub const PHASE3_META_FILE: &str = "meta.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RAW_FILE: &str = "raw_data.csv";
pub const REFERENCE_FILE: &str = "reference.csv";
pub const RAW_EXTRA_DIR: &str = "raw_data_extra";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const DIAGNOSTICS_DIR: &str = "diagnostics";

/// Convergence criterion recorded in the meta record.
pub const CONVERGENCE_RULE: &str = "split-chain PSRF < 1.1; tfr: at least 95% of periods";

/// Transition-model world parameters, in file order.
pub const PHASE2_HYPER_NAMES: [&str; 13] = [
    "alpha",
    "delta",
    "Triangle4",
    "delta4",
    "psi",
    "chi",
    "a_sd",
    "b_sd",
    "const_sd",
    "S_sd",
    "sigma0",
    "mean_eps_tau",
    "sd_eps_tau",
];
pub const PHI_NAME: &str = "rho_phase2";
pub const PHASE2_COUNTRY_NAMES: [&str; 4] = ["gamma", "Triangle_c4", "d", "U"];
pub const TFR_NAME: &str = "tfr";
pub const PHASE3_HYPER_NAMES: [&str; 5] = ["mu", "rho", "sigma.mu", "sigma.rho", "sigma.eps"];
pub const PHASE3_COUNTRY_NAMES: [&str; 2] = ["mu.c", "rho.c"];

/// Which model a trace file belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Part {
    Phase2,
    Phase3,
}

/// Name of the trace file of a parameter.
pub fn file_name(name: &str, country: Option<CountryId>) -> String {
    match country {
        Some(c) => format!("{name}_country{c}.txt"),
        None => format!("{name}.txt"),
    }
}

/// Format a number with 15 significant digits, `%.15g` style.
pub fn format_g15(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "Inf".into()
        } else {
            "-Inf".into()
        };
    }
    let sci = format!("{x:.14e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..15).contains(&exp) {
        let mant = trim_zeros(mant);
        format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (14 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Per-country information fixed at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryMeta {
    pub id: CountryId,
    pub markers: PhaseMarkers,
}

/// Settings and raw-data overrides of a country re-estimated with `extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraRecord {
    pub extra_iter: u64,
    pub extra_burnin: u64,
    pub extra_thin: u64,
    /// Raw data used for the country, relative to the store root.
    pub raw_data: Option<String>,
    pub covariates: Vec<String>,
    pub cont_covariates: Vec<String>,
    pub unbiased_vr: bool,
}

/// Top-level meta record of a store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub flags: ModeFlags,
    pub sigma0_min: f64,
    pub grid: TimeGrid,
    pub countries: Vec<CountryMeta>,
    pub covariates: Vec<String>,
    pub cont_covariates: Vec<String>,
    pub source_column: String,
    pub unbiased_vr: BTreeSet<CountryId>,
    pub n_chains: usize,
    pub thin: u64,
    /// Iterations with proposal adaptation.
    pub burnin: u64,
    pub seed: u64,
    /// Iterations completed per chain.
    pub iters: u64,
    pub parallel: bool,
    pub convergence_rule: String,
    /// Present only for countries re-estimated with `extra`.
    #[serde(default)]
    pub extra: BTreeMap<CountryId, ExtraRecord>,
}

impl Meta {
    pub fn country_ids(&self) -> Vec<CountryId> {
        self.countries.iter().map(|c| c.id).collect()
    }

    pub fn markers(&self, id: CountryId) -> Option<PhaseMarkers> {
        self.countries.iter().find(|c| c.id == id).map(|c| c.markers)
    }

    pub fn phase3_countries(&self) -> Vec<CountryId> {
        self.countries
            .iter()
            .filter(|c| c.markers.lambda.is_some())
            .map(|c| c.id)
            .collect()
    }

    /// Iteration number of each stored row.
    pub fn stored_iterations(&self) -> Vec<u64> {
        (1..=self.iters / self.thin).map(|r| r * self.thin).collect()
    }

    pub fn rows_per_chain(&self) -> usize {
        (self.iters / self.thin) as usize
    }

    /// Names of the world parameters of a part, in file order.
    pub fn hyper_names(&self, part: Part) -> Vec<&'static str> {
        match part {
            Part::Phase2 => {
                let mut v = PHASE2_HYPER_NAMES.to_vec();
                if self.flags.ar_phase2 {
                    v.push(PHI_NAME);
                }
                v
            }
            Part::Phase3 => PHASE3_HYPER_NAMES.to_vec(),
        }
    }

    /// Names of the country-specific parameters stored for `country`.
    pub fn country_names(&self, part: Part, country: CountryId) -> Vec<&'static str> {
        match part {
            Part::Phase2 => {
                let mut v = PHASE2_COUNTRY_NAMES.to_vec();
                if self.flags.uncertainty {
                    v.push(TFR_NAME);
                }
                v
            }
            Part::Phase3 => {
                if self.markers(country).is_some_and(|m| m.lambda.is_some()) {
                    PHASE3_COUNTRY_NAMES.to_vec()
                } else {
                    Vec::new()
                }
            }
        }
    }
}

/// Row count, size and digest of a trace file as of the last checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMark {
    pub rows: u64,
    pub bytes: u64,
    pub sha256: String,
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Current mark of a file on disk.
pub fn mark_of(path: &Path) -> Result<FileMark> {
    let bytes = read_bytes(path)?;
    Ok(FileMark {
        rows: bytes.iter().filter(|b| **b == b'\n').count() as u64,
        bytes: bytes.len() as u64,
        sha256: digest(&bytes),
    })
}

/// Check that `path` still matches its checkpoint mark.
pub fn verify_mark(path: &Path, expected: &FileMark) -> Result<()> {
    if !path.exists() {
        return Err(Error::integrity(path, "trace file is missing"));
    }
    let got = mark_of(path)?;
    if got.rows != expected.rows {
        return Err(Error::integrity(
            path,
            format!("has {} rows, checkpoint recorded {}", got.rows, expected.rows),
        ));
    }
    if got != *expected {
        return Err(Error::integrity(path, "contents differ from the checkpoint"));
    }
    Ok(())
}

/// Parse a whitespace-separated trace file into rows.
pub fn read_trace(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| Error::Row {
                        path: path.display().to_string(),
                        line: i as u64 + 1,
                        message: format!("'{tok}' is not a number"),
                    })
                })
                .collect()
        })
        .collect()
}

pub fn format_row(values: &[f64]) -> String {
    let mut s = values.iter().map(|v| format_g15(*v)).collect::<Vec<_>>().join(" ");
    s.push('\n');
    s
}

/// Write a whole trace file, replacing any previous content.
pub fn write_trace(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format_row(r));
    }
    write_file(path, out.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Buffered appender for the trace files of one chain.
#[derive(Debug, Default)]
pub struct TraceBuffer {
    pending: BTreeMap<PathBuf, String>,
    rows: usize,
}

impl TraceBuffer {
    pub fn push(&mut self, path: PathBuf, values: &[f64]) {
        self.pending.entry(path).or_default().push_str(&format_row(values));
    }

    /// Call once per stored iteration after all its rows were pushed.
    pub fn end_row(&mut self) {
        self.rows += 1;
    }

    pub fn buffered_rows(&self) -> usize {
        self.rows
    }

    pub fn flush(&mut self) -> Result<()> {
        for (path, text) in std::mem::take(&mut self.pending) {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        self.rows = 0;
        Ok(())
    }
}

/// Read-only handle on a chain store.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    meta: Meta,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let meta_path = root.join(META_FILE);
        if !meta_path.exists() {
            return Err(Error::Config(format!("{} is not a chain store (no {META_FILE})", root.display())));
        }
        let meta = read_json(&meta_path)?;
        Ok(Store { root, meta })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn chain_dir(&self, part: Part, chain: usize) -> PathBuf {
        chain_dir(&self.root, part, chain)
    }

    pub fn trace_path(&self, part: Part, chain: usize, name: &str, country: Option<CountryId>) -> PathBuf {
        self.chain_dir(part, chain).join(file_name(name, country))
    }

    /// Rows of one parameter file of one chain (1-based).
    pub fn read_param(&self, part: Part, chain: usize, name: &str, country: Option<CountryId>) -> Result<Vec<Vec<f64>>> {
        let path = self.trace_path(part, chain, name, country);
        if !path.exists() {
            return Err(Error::integrity(path, "trace file is missing"));
        }
        read_trace(&path)
    }

    /// Which part stores the parameter `name` (country-specific or not).
    pub fn part_of(&self, name: &str) -> Option<(Part, bool)> {
        for part in [Part::Phase2, Part::Phase3] {
            if self.meta.hyper_names(part).contains(&name) {
                return Some((part, false));
            }
        }
        let p2 = PHASE2_COUNTRY_NAMES.contains(&name) || (name == TFR_NAME && self.meta.flags.uncertainty);
        if p2 {
            return Some((Part::Phase2, true));
        }
        PHASE3_COUNTRY_NAMES.contains(&name).then_some((Part::Phase3, true))
    }

    pub fn require_country(&self, id: CountryId) -> Result<()> {
        if self.meta.markers(id).is_some() {
            Ok(())
        } else {
            Err(Error::UnknownCountry(id.0))
        }
    }
}

pub fn chain_dir(root: &Path, part: Part, chain: usize) -> PathBuf {
    match part {
        Part::Phase2 => root.join(format!("mc{chain}")),
        Part::Phase3 => root.join(PHASE3_DIR).join(format!("mc{chain}")),
    }
}

pub fn thinned_dir(root: &Path, thin: usize, burnin: u64) -> PathBuf {
    root.join(format!("thinned_mcmc_{thin}_{burnin}"))
}
