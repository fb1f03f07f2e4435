//! Reading raw-observation and reference CSV files, and aligning
//! observations with the estimation grid.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CountryId, CovariateValue, RawObservation, ReferenceSeries, TimeGrid};

/// Category used for blank categorical cells.
pub const UNKNOWN_LEVEL: &str = "unknown";

const YEAR_RANGE: (f64, f64) = (1900.0, 2100.0);

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawDataset {
    pub observations: Vec<RawObservation>,
    pub covariate_names: Vec<String>,
    pub cont_covariate_names: Vec<String>,
}

impl RawDataset {
    pub fn countries(&self) -> BTreeSet<CountryId> {
        self.observations.iter().map(|o| o.country).collect()
    }

    pub fn for_country(&self, country: CountryId) -> Vec<&RawObservation> {
        self.observations
            .iter()
            .filter(|o| o.country == country)
            .collect()
    }

    /// Copy of the dataset keeping only the listed countries.
    pub fn restricted_to(&self, countries: &BTreeSet<CountryId>) -> RawDataset {
        RawDataset {
            observations: self
                .observations
                .iter()
                .filter(|o| countries.contains(&o.country))
                .cloned()
                .collect(),
            covariate_names: self.covariate_names.clone(),
            cont_covariate_names: self.cont_covariate_names.clone(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::format(path, format!("missing column '{name}'")))
}

fn row_err(path: &Path, line: u64, message: String) -> Error {
    Error::Row {
        path: path.display().to_string(),
        line,
        message,
    }
}

fn parse_f64(raw: &str, what: &str, path: &Path, line: u64) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| row_err(path, line, format!("{what} '{raw}' is not a number")))
}

/// Parse a raw-observation CSV with columns `country_code`, `year`, `tfr`
/// plus the named categorical and continuous covariates.
pub fn load_raw(path: &Path, covariates: &[String], cont_covariates: &[String]) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let i_country = column(&headers, "country_code", path)?;
    let i_year = column(&headers, "year", path)?;
    let i_tfr = column(&headers, "tfr", path)?;
    let cat_idx = covariates
        .iter()
        .map(|n| column(&headers, n, path))
        .collect::<Result<Vec<_>>>()?;
    let cont_idx = cont_covariates
        .iter()
        .map(|n| column(&headers, n, path))
        .collect::<Result<Vec<_>>>()?;

    let mut observations = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| row_err(path, line, e.to_string()))?;
        let get = |idx: usize| rec.get(idx).unwrap_or("");
        let code = get(i_country)
            .parse::<u32>()
            .ok()
            .filter(|c| *c > 0)
            .ok_or_else(|| {
                row_err(
                    path,
                    line,
                    format!("country_code '{}' is not a positive integer", get(i_country)),
                )
            })?;
        let year = parse_f64(get(i_year), "year", path, line)?;
        if year < YEAR_RANGE.0 || year > YEAR_RANGE.1 {
            return Err(row_err(path, line, format!("year {year} outside [1900, 2100]")));
        }
        let tfr = parse_f64(get(i_tfr), "tfr", path, line)?;
        if tfr <= 0.0 {
            return Err(row_err(path, line, format!("tfr {tfr} is not positive")));
        }
        let mut cov = BTreeMap::new();
        for (name, &idx) in covariates.iter().zip(&cat_idx) {
            let v = get(idx);
            let level = if v.is_empty() || v == "NA" { UNKNOWN_LEVEL } else { v };
            cov.insert(name.clone(), CovariateValue::Category(level.to_string()));
        }
        for (name, &idx) in cont_covariates.iter().zip(&cont_idx) {
            let v = parse_f64(get(idx), name, path, line)?;
            cov.insert(name.clone(), CovariateValue::Real(v));
        }
        observations.push(RawObservation {
            country: CountryId(code),
            year,
            tfr,
            covariates: cov,
        });
    }
    Ok(RawDataset {
        observations,
        covariate_names: covariates.to_vec(),
        cont_covariate_names: cont_covariates.to_vec(),
    })
}

/// Write a dataset in the layout accepted by [`load_raw`].
pub fn write_raw(data: &RawDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["country_code".to_string(), "year".into(), "tfr".into()];
    header.extend(data.covariate_names.iter().cloned());
    header.extend(data.cont_covariate_names.iter().cloned());
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for o in &data.observations {
        let mut rec = vec![o.country.to_string(), o.year.to_string(), o.tfr.to_string()];
        for name in data.covariate_names.iter().chain(&data.cont_covariate_names) {
            rec.push(o.covariates.get(name).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse a reference CSV: `country_code` followed by one column per
/// period labelled with its start year.
pub fn load_reference(path: &Path) -> Result<Vec<ReferenceSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let i_country = column(&headers, "country_code", path)?;
    let mut years = Vec::new();
    let mut year_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == i_country {
            continue;
        }
        // tolerate labels such as "1950-1955": the start year labels the period
        let label = h.split(['-', '–']).next().unwrap_or(h).trim();
        if let Ok(y) = label.parse::<i32>() {
            years.push(y);
            year_cols.push(i);
        }
    }
    if years.len() < 3 {
        return Err(Error::format(path, "need at least three period columns"));
    }
    let step = years[1] - years[0];
    if !(step == 1 || step == 5) || years.windows(2).any(|w| w[1] - w[0] != step) {
        return Err(Error::format(
            path,
            "period columns must be consecutive years or consecutive five-year periods",
        ));
    }
    let grid = TimeGrid::new(years[0], step as u32, years.len())?;

    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| row_err(path, line, e.to_string()))?;
        let raw_code = rec.get(i_country).unwrap_or("");
        let code = raw_code.parse::<u32>().ok().filter(|c| *c > 0).ok_or_else(|| {
            row_err(path, line, format!("country_code '{raw_code}' is not a positive integer"))
        })?;
        if !seen.insert(code) {
            return Err(row_err(path, line, format!("duplicate country {code}")));
        }
        let values = year_cols
            .iter()
            .map(|&c| parse_f64(rec.get(c).unwrap_or(""), "tfr", path, line))
            .collect::<Result<Vec<_>>>()?;
        let series = ReferenceSeries::new(CountryId(code), grid, values)
            .map_err(|e| row_err(path, line, e.to_string()))?;
        out.push(series);
    }
    Ok(out)
}

pub fn write_reference(series: &[ReferenceSeries], path: &Path) -> Result<()> {
    let Some(first) = series.first() else {
        return Err(Error::Invalid("no reference series to write".into()));
    };
    let grid = first.grid;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    let mut header = vec!["country_code".to_string()];
    header.extend(grid.years().map(|y| y.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for s in series {
        if s.grid != grid {
            return Err(Error::Invalid("reference series on different grids".into()));
        }
        let mut rec = vec![s.country.to_string()];
        rec.extend(s.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Calendar year an observation is attributed to in annual mode.
pub fn align_year(year: f64) -> i32 {
    year.floor() as i32
}

/// Linear interpolation of a five-year series onto an annual grid.
pub fn interpolate_reference(series: &ReferenceSeries, target: TimeGrid) -> Result<ReferenceSeries> {
    if series.grid.step != 5 || target.step != 1 {
        return Err(Error::Invalid(
            "interpolation maps a five-year series onto an annual grid".into(),
        ));
    }
    if target.start_year < series.grid.start_year || target.end_year() > series.grid.end_year() {
        return Err(Error::Range(format!(
            "target {}-{} outside reference span {}-{}",
            target.start_year,
            target.end_year(),
            series.grid.start_year,
            series.grid.end_year()
        )));
    }
    let values = target
        .years()
        .map(|y| interpolate_at(&series.values, series.grid, y as f64))
        .collect();
    ReferenceSeries::new(series.country, target, values)
}

/// Value at `year` of the piecewise-linear path through `values` on `grid`.
/// Years outside the grid are clamped to the end values.
pub fn interpolate_at(values: &[f64], grid: TimeGrid, year: f64) -> f64 {
    let step = grid.step as f64;
    let pos = (year - grid.start_year as f64) / step;
    if pos <= 0.0 {
        return values[0];
    }
    let lo = pos.floor() as usize;
    if lo >= grid.n_periods - 1 {
        return values[grid.n_periods - 1];
    }
    let w = (year - grid.year(lo) as f64) / step;
    if w == 0.0 {
        return values[lo];
    }
    values[lo] + w * (values[lo + 1] - values[lo])
}

/// Reference series restricted (or interpolated) to `grid`.
pub fn reference_on_grid(series: &ReferenceSeries, grid: TimeGrid) -> Result<ReferenceSeries> {
    if series.grid.step == grid.step {
        let first = series.grid.index_of(grid.start_year).ok_or_else(|| {
            Error::Range(format!(
                "country {}: start year {} not on the reference grid",
                series.country, grid.start_year
            ))
        })?;
        if first + grid.n_periods > series.grid.n_periods {
            return Err(Error::Range(format!(
                "country {}: reference ends {} before requested {}",
                series.country,
                series.grid.end_year(),
                grid.end_year()
            )));
        }
        ReferenceSeries::new(
            series.country,
            grid,
            series.values[first..first + grid.n_periods].to_vec(),
        )
    } else if series.grid.step == 5 && grid.step == 1 {
        interpolate_reference(series, grid)
    } else {
        Err(Error::Invalid(
            "an annual reference cannot drive a five-year run".into(),
        ))
    }
}

/// Link between a raw observation and the latent periods it measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttachedObservation {
    /// Index into `RawDataset::observations`.
    pub obs_index: usize,
    pub lo: usize,
    pub hi: usize,
    /// Interpolation weight on period `lo`; `1 - w_lo` goes to `hi`.
    pub w_lo: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Attachment {
    pub by_country: BTreeMap<CountryId, Vec<AttachedObservation>>,
    pub dropped: usize,
}

impl Attachment {
    /// Observations whose latent value involves period `t` of `country`.
    pub fn at_period(&self, country: CountryId, t: usize) -> Vec<AttachedObservation> {
        self.by_country
            .get(&country)
            .map(|v| v.iter().filter(|a| a.lo == t || a.hi == t).copied().collect())
            .unwrap_or_default()
    }
}

/// Locate an observation year on `grid`.
pub fn locate(grid: TimeGrid, year: f64) -> Option<(usize, usize, f64)> {
    if grid.is_annual() {
        let t = align_year(year) - grid.start_year;
        (t >= 0 && (t as usize) < grid.n_periods).then_some((t as usize, t as usize, 1.0))
    } else {
        let step = grid.step as f64;
        let pos = (year - grid.start_year as f64) / step;
        let last = (grid.n_periods - 1) as f64;
        if !(0.0..=last).contains(&pos) {
            return None;
        }
        let lo = pos.floor() as usize;
        if lo == grid.n_periods - 1 {
            return Some((lo, lo, 1.0));
        }
        let w_lo = (grid.year(lo + 1) as f64 - year) / step;
        if w_lo >= 1.0 {
            Some((lo, lo, 1.0))
        } else {
            Some((lo, lo + 1, w_lo))
        }
    }
}

/// Map every observation onto the period (annual) or flanking period pair
/// (five-year) it informs; observations off the grid are dropped.
pub fn attach_observations(raw: &RawDataset, grid: TimeGrid) -> Attachment {
    let mut out = Attachment::default();
    for (i, o) in raw.observations.iter().enumerate() {
        match locate(grid, o.year) {
            Some((lo, hi, w_lo)) => out.by_country.entry(o.country).or_default().push(
                AttachedObservation {
                    obs_index: i,
                    lo,
                    hi,
                    w_lo,
                },
            ),
            None => out.dropped += 1,
        }
    }
    if out.dropped > 0 {
        log::info!("{} observations outside {}-{} dropped", out.dropped, grid.start_year, grid.end_year());
    }
    out
}
