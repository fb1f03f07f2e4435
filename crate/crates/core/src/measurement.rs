//! Per-country bias and sd of raw observations, fitted by least squares on
//! data-quality covariates against the reference series.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::ingest::{interpolate_at, Attachment, RawDataset};
use crate::types::{
    BiasSdRow, CountryId, CovariateValue, MeasurementParams, ObservationError, ObservationTerm, RawObservation,
    ReferenceSeries,
};

/// Source level treated as vital registration.
pub const VR_LEVEL: &str = "VR";
/// Sd assigned to vital registration of countries with unbiased VR.
pub const VR_SD: f64 = 0.0161;
/// Lower bound of the adjusted sd.
pub const MIN_SD: f64 = 0.1;
/// Default name of the data-source covariate.
pub const DEFAULT_SOURCE_COLUMN: &str = "source";

/// Countries whose vital registration is treated as unbiased by default.
pub const DEFAULT_UNBIASED_VR: [u32; 27] = [
    36, 40, 56, 124, 203, 208, 246, 250, 276, 300, 352, 372, 380, 392, 410, 428, 442, 528, 554, 578, 620, 724, 752,
    756, 792, 826, 840,
];

const ALIAS_TOL: f64 = 1e-9;

/// Design matrix column: intercept, one dummy per non-baseline level, or a
/// continuous covariate.
#[derive(Debug, Clone, PartialEq)]
enum Column {
    Intercept,
    Dummy { covariate: String, level: String },
    Continuous(String),
}

impl Column {
    fn name(&self) -> String {
        match self {
            Column::Intercept => "(Intercept)".into(),
            Column::Dummy { covariate, level } => format!("{covariate}{level}"),
            Column::Continuous(n) => n.clone(),
        }
    }

    fn value(&self, o: &RawObservation) -> f64 {
        match self {
            Column::Intercept => 1.0,
            Column::Dummy { covariate, level } => f64::from(u8::from(o.category(covariate) == Some(level))),
            Column::Continuous(n) => match o.covariates.get(n) {
                Some(CovariateValue::Real(v)) => *v,
                _ => 0.0,
            },
        }
    }
}

fn design_columns(obs: &[&RawObservation], raw: &RawDataset) -> Vec<Column> {
    let mut cols = vec![Column::Intercept];
    for name in &raw.covariate_names {
        let levels: BTreeSet<&str> = obs.iter().filter_map(|o| o.category(name)).collect();
        // alphabetically first level is the baseline
        for level in levels.into_iter().skip(1) {
            cols.push(Column::Dummy {
                covariate: name.clone(),
                level: level.to_string(),
            });
        }
    }
    cols.extend(raw.cont_covariate_names.iter().cloned().map(Column::Continuous));
    cols
}

/// Least-squares fit via modified Gram–Schmidt. Columns that are (numerically)
/// linear combinations of earlier ones are dropped. Returns the kept column
/// indices and their coefficients.
pub fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col.clone();
        let mut rj = Vec::with_capacity(q.len() + 1);
        for qk in &q {
            let d: f64 = qk.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(qk) {
                *vi -= d * qi;
            }
            rj.push(d);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= ALIAS_TOL * norm0.max(1.0) {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rj.push(norm);
        q.push(v);
        r.push(rj);
        kept.push(j);
    }
    let qty: Vec<f64> = q.iter().map(|qk| qk.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    let k = kept.len();
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = qty[i];
        for j in i + 1..k {
            s -= r[j][i] * beta[j];
        }
        beta[i] = s / r[i][i];
    }
    (kept, beta)
}

fn combination_key(o: &RawObservation, raw: &RawDataset) -> Vec<String> {
    raw.covariate_names
        .iter()
        .chain(&raw.cont_covariate_names)
        .map(|n| o.covariates.get(n).map(|v| v.to_string()).unwrap_or_default())
        .collect()
}

/// Fit the bias and sd models of one country.
pub fn fit_bias_sd(
    raw: &RawDataset,
    reference: &ReferenceSeries,
    country: CountryId,
    unbiased_vr: &BTreeSet<CountryId>,
    source_column: &str,
) -> Result<MeasurementParams> {
    let obs = raw.for_country(country);
    let covariate_names: Vec<String> = raw
        .covariate_names
        .iter()
        .chain(&raw.cont_covariate_names)
        .cloned()
        .collect();
    if obs.is_empty() {
        return Ok(MeasurementParams {
            country: Some(country),
            covariate_names,
            warnings: vec![format!("country {country}: no observations")],
            ..Default::default()
        });
    }
    let grid = reference.grid;
    let span = (grid.start_year as f64, (grid.end_year() + grid.step as i32) as f64);
    let mut resid = Vec::with_capacity(obs.len());
    for o in &obs {
        if o.year < span.0 || o.year > span.1 {
            return Err(Error::Range(format!(
                "country {country}: observation year {} outside the reference span {}-{}",
                o.year, span.0, span.1
            )));
        }
        resid.push(o.tfr - interpolate_at(&reference.values, grid, o.year));
    }

    let cols = design_columns(&obs, raw);
    let x: Vec<Vec<f64>> = cols.iter().map(|c| obs.iter().map(|o| c.value(o)).collect()).collect();
    let (kept, beta) = least_squares(&x, &resid);
    let mut warnings = Vec::new();
    if kept.len() < cols.len() {
        let dropped: Vec<String> = (0..cols.len())
            .filter(|j| !kept.contains(j))
            .map(|j| cols[j].name())
            .collect();
        warnings.push(format!(
            "country {country}: aliased design columns dropped: {}",
            dropped.join(", ")
        ));
    }
    let fitted = |coef: &[f64], i: usize| -> f64 { kept.iter().zip(coef).map(|(&j, b)| x[j][i] * b).sum() };
    let bias: Vec<f64> = (0..obs.len()).map(|i| fitted(&beta, i)).collect();
    let abs_dev: Vec<f64> = resid.iter().zip(&bias).map(|(r, b)| (r - b).abs()).collect();
    let (_, gamma) = least_squares(&kept.iter().map(|&j| x[j].clone()).collect::<Vec<_>>(), &abs_dev);
    let scale = (std::f64::consts::PI / 2.0).sqrt();
    let gamma: Vec<f64> = gamma.iter().map(|g| g * scale).collect();
    let kept_idx: Vec<usize> = (0..kept.len()).collect();

    let vr_override = unbiased_vr.contains(&country);
    let mut per_observation = Vec::with_capacity(obs.len());
    let mut table: Vec<BiasSdRow> = Vec::new();
    for (i, o) in obs.iter().enumerate() {
        let sd_fit: f64 = kept_idx.iter().map(|&k| x[kept[k]][i] * gamma[k]).sum();
        let floor = MIN_SD.max(bias[i].abs() / 2.0);
        let mut err = ObservationError {
            bias: bias[i],
            sd: sd_fit.max(floor),
        };
        if vr_override && o.category(source_column) == Some(VR_LEVEL) {
            err = ObservationError { bias: 0.0, sd: VR_SD };
        }
        per_observation.push(err);
        let key = combination_key(o, raw);
        if !table.iter().any(|r| r.covariates == key) {
            table.push(BiasSdRow {
                covariates: key,
                bias: err.bias,
                sd: err.sd,
            });
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(MeasurementParams {
        country: Some(country),
        covariate_names,
        beta: kept.iter().zip(&beta).map(|(&j, b)| (cols[j].name(), *b)).collect(),
        gamma: kept.iter().zip(&gamma).map(|(&j, g)| (cols[j].name(), *g)).collect(),
        per_observation,
        table,
        warnings,
    })
}

/// Likelihood terms of every attached observation of `country`, given
/// fitted measurement parameters whose `per_observation` entries follow
/// the country's observations in input order.
pub fn observation_terms(
    raw: &RawDataset,
    attachment: &Attachment,
    country: CountryId,
    params: &MeasurementParams,
) -> Vec<ObservationTerm> {
    let Some(attached) = attachment.by_country.get(&country) else {
        return Vec::new();
    };
    // position of each dataset row within the country's observations
    let order: Vec<usize> = raw
        .observations
        .iter()
        .enumerate()
        .filter(|(_, o)| o.country == country)
        .map(|(i, _)| i)
        .collect();
    attached
        .iter()
        .filter_map(|a| {
            let k = order.binary_search(&a.obs_index).ok()?;
            let err = params.per_observation.get(k)?;
            Some(ObservationTerm {
                lo: a.lo,
                hi: a.hi,
                w_lo: a.w_lo,
                y: raw.observations[a.obs_index].tfr,
                bias: err.bias,
                sd: err.sd,
            })
        })
        .collect()
}

/// Write a bias/sd table as CSV: covariate columns, `bias`, `sd`.
pub fn write_table<W: std::io::Write>(params: &MeasurementParams, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Invalid(format!("writing bias/sd table: {e}"));
    let mut header = params.covariate_names.clone();
    header.push("bias".into());
    header.push("sd".into());
    w.write_record(&header).map_err(to_err)?;
    for row in &params.table {
        let mut rec = row.covariates.clone();
        rec.push(row.bias.to_string());
        rec.push(row.sd.to_string());
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("writing bias/sd table: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TimeGrid;
    use std::collections::BTreeMap;

    fn obs(country: u32, year: f64, tfr: f64, cats: &[(&str, &str)]) -> RawObservation {
        RawObservation {
            country: CountryId(country),
            year,
            tfr,
            covariates: cats
                .iter()
                .map(|(k, v)| (k.to_string(), CovariateValue::Category(v.to_string())))
                .collect::<BTreeMap<_, _>>(),
        }
    }

    fn flat_reference(country: u32, level: f64) -> ReferenceSeries {
        let grid = TimeGrid::new(1950, 5, 15).unwrap();
        ReferenceSeries::new(CountryId(country), grid, vec![level; 15]).unwrap()
    }

    fn dataset(observations: Vec<RawObservation>, covs: &[&str]) -> RawDataset {
        RawDataset {
            observations,
            covariate_names: covs.iter().map(|s| s.to_string()).collect(),
            cont_covariate_names: vec![],
        }
    }

    #[test]
    fn single_combination_bias_is_mean_residual() {
        let data = dataset(
            vec![
                obs(1, 1960.0, 5.1, &[("source", "DHS")]),
                obs(1, 1970.0, 5.4, &[("source", "DHS")]),
                obs(1, 1980.0, 4.6, &[("source", "DHS")]),
            ],
            &["source"],
        );
        let p = fit_bias_sd(&data, &flat_reference(1, 5.0), CountryId(1), &BTreeSet::new(), "source").unwrap();
        let mean = (0.1 + 0.4 - 0.4) / 3.0;
        assert!((p.per_observation[0].bias - mean).abs() < 1e-12);
        assert_eq!(p.table.len(), 1);
    }

    #[test]
    fn single_point_group_gets_adjusted_sd() {
        let data = dataset(
            vec![
                obs(1, 1960.0, 5.06, &[("source", "Census")]),
                obs(1, 1970.0, 5.3, &[("source", "DHS")]),
                obs(1, 1975.0, 5.1, &[("source", "DHS")]),
            ],
            &["source"],
        );
        let p = fit_bias_sd(&data, &flat_reference(1, 5.0), CountryId(1), &BTreeSet::new(), "source").unwrap();
        let census = &p.table[0];
        assert!((census.bias - 0.06).abs() < 1e-12);
        assert_eq!(census.sd, 0.1);
    }

    #[test]
    fn unbiased_vr_override() {
        let data = dataset(
            vec![
                obs(840, 1960.0, 3.5, &[("source", "VR")]),
                obs(840, 1970.0, 2.6, &[("source", "VR")]),
                obs(840, 1975.0, 1.9, &[("source", "DHS")]),
            ],
            &["source"],
        );
        let set: BTreeSet<_> = [CountryId(840)].into();
        let p = fit_bias_sd(&data, &flat_reference(840, 2.5), CountryId(840), &set, "source").unwrap();
        assert_eq!(p.per_observation[0], ObservationError { bias: 0.0, sd: VR_SD });
        assert_eq!(p.per_observation[1], ObservationError { bias: 0.0, sd: VR_SD });
        assert_ne!(p.per_observation[2].sd, VR_SD);
    }

    #[test]
    fn aliased_columns_are_dropped_with_warning() {
        // method is a copy of source
        let data = dataset(
            vec![
                obs(1, 1960.0, 5.2, &[("source", "A"), ("method", "X")]),
                obs(1, 1965.0, 5.3, &[("source", "B"), ("method", "Y")]),
                obs(1, 1970.0, 4.8, &[("source", "A"), ("method", "X")]),
                obs(1, 1975.0, 5.5, &[("source", "B"), ("method", "Y")]),
            ],
            &["source", "method"],
        );
        let p = fit_bias_sd(&data, &flat_reference(1, 5.0), CountryId(1), &BTreeSet::new(), "source").unwrap();
        assert_eq!(p.warnings.len(), 1);
        assert!(p.warnings[0].contains("methodY"));
        let names: Vec<&str> = p.beta.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["(Intercept)", "sourceB"]);
    }

    #[test]
    fn no_observations_gives_empty_params() {
        let data = dataset(vec![obs(2, 1960.0, 5.0, &[])], &[]);
        let p = fit_bias_sd(&data, &flat_reference(1, 5.0), CountryId(1), &BTreeSet::new(), "source").unwrap();
        assert!(p.per_observation.is_empty());
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        // y = 1 + 2 x exactly
        let x0 = vec![1.0; 4];
        let x1 = vec![0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x1.iter().map(|v| 1.0 + 2.0 * v).collect();
        let (kept, b) = least_squares(&[x0, x1], &y);
        assert_eq!(kept, [0, 1]);
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }
}
