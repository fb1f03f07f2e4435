//! `tfrcast` command-line front end.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tfrcast::diagnostics::{diagnose, estimation_quantiles, render, summarize, summary_csv};
use tfrcast::engine::store::Store;
use tfrcast::engine::{continue_run, country_measurement, load_store_inputs, run, run_extra, ExtraConfig, RunConfig};
use tfrcast::ingest::{load_raw, load_reference, write_raw, write_reference, RawDataset};
use tfrcast::measurement::{write_table, DEFAULT_SOURCE_COLUMN, DEFAULT_UNBIASED_VR};
use tfrcast::projection::{predict, read_predictions, table_csv, trajectory_table, DEFAULT_LEVELS};
use tfrcast::synthetic::{generate, WorldSpec};
use tfrcast::types::CountryId;
use tfrcast::Error;

#[derive(Parser, Debug)]
#[command(name = "tfrcast", version, about = "Bayesian estimation and projection of total fertility rates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the model and write a new store.
    Run(RunArgs),
    /// Append iterations to every chain of a store.
    Continue {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long)]
        iters: u64,
    },
    /// Re-estimate selected countries against the stored world parameters.
    Extra(ExtraArgs),
    /// Generate trajectories from a store.
    Predict {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 2100)]
        end_year: i32,
        #[arg(long)]
        burnin: u64,
        #[arg(long, default_value_t = 1000)]
        nr_traj: usize,
        /// Start from sampled past values; defaults to the store's setting.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        uncertainty: Option<bool>,
    },
    /// Posterior summaries of stored parameters.
    Summarize {
        #[arg(long)]
        output_dir: PathBuf,
        /// Parameter names; all world parameters when omitted.
        #[arg(long, value_delimiter = ',')]
        params: Vec<String>,
        #[arg(long)]
        country: Option<u32>,
        #[arg(long, default_value_t = 1)]
        thin: u64,
        #[arg(long, default_value_t = 0)]
        burnin: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Posterior quantiles (or draws) of a country's past TFR.
    Estimate {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long)]
        country: u32,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LEVELS)]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        thin: u64,
        #[arg(long, default_value_t = 0)]
        burnin: u64,
        /// Write the full draw matrix instead of quantiles.
        #[arg(long)]
        draws: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Trajectory quantile table with ±0.5-child columns.
    Table {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long)]
        country: u32,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LEVELS)]
        levels: Vec<f64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Fitted measurement bias and sd of one country.
    BiasSd(BiasSdArgs),
    /// Convergence report; also written under diagnostics/.
    Diagnose {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        thin: u64,
        #[arg(long)]
        burnin: u64,
        /// Check world and country parameters only.
        #[arg(long)]
        express: bool,
    },
    /// Write a synthetic raw-data and reference pair.
    Simulate {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        countries: usize,
        #[arg(long, default_value_t = 40)]
        periods: usize,
        #[arg(long, default_value_t = 1980)]
        start_year: i32,
        #[arg(long, default_value_t = 0.7)]
        phi: f64,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct OutArg {
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Preset {
    Production,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    raw_file: Option<PathBuf>,
    #[arg(long)]
    ref_file: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = DEFAULT_SOURCE_COLUMN)]
    covariates: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    cont_covariates: Vec<String>,
    #[arg(long, default_value = DEFAULT_SOURCE_COLUMN)]
    source_col: String,
    #[arg(long)]
    annual: bool,
    #[arg(long)]
    ar_phase2: bool,
    #[arg(long)]
    uncertainty: bool,
    #[arg(long, value_delimiter = ',')]
    iso_unbiased: Option<Vec<u32>>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    thin: Option<u64>,
    #[arg(long)]
    burnin: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    sigma0_min: Option<f64>,
    #[arg(long)]
    start_year: Option<i32>,
    #[arg(long)]
    present_year: Option<i32>,
    /// Overwrite an existing store.
    #[arg(long)]
    replace: bool,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Args, Debug)]
struct ExtraArgs {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    countries: Vec<u32>,
    #[arg(long)]
    raw_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    cont_covariates: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    iso_unbiased: Option<Vec<u32>>,
    #[arg(long, default_value_t = 500)]
    iters: u64,
    #[arg(long)]
    burnin: u64,
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct BiasSdArgs {
    /// Read data from a store; otherwise --raw-file and --ref-file are used.
    #[arg(long, conflicts_with_all = ["raw_file", "ref_file"])]
    output_dir: Option<PathBuf>,
    #[arg(long, requires = "ref_file")]
    raw_file: Option<PathBuf>,
    #[arg(long, requires = "raw_file")]
    ref_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = DEFAULT_SOURCE_COLUMN)]
    covariates: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    cont_covariates: Vec<String>,
    #[arg(long, default_value = DEFAULT_SOURCE_COLUMN)]
    source_col: String,
    #[arg(long, value_delimiter = ',')]
    iso_unbiased: Vec<u32>,
    #[arg(long)]
    country: u32,
    #[command(flatten)]
    out: OutArg,
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Format { .. } | Error::Row { .. } | Error::Range(_) | Error::Io { .. } | Error::Json(_) => 2,
            Error::Integrity { .. } => 3,
            Error::Config(_) | Error::UnknownCountry(_) | Error::UnknownParameter { .. } | Error::Invalid(_) => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn ids(codes: &[u32]) -> BTreeSet<CountryId> {
    codes.iter().map(|&c| CountryId(c)).collect()
}

fn emit(out: &OutArg, text: &str) -> Result<(), Failure> {
    let io = |path: &Path, e: std::io::Error| Failure::from(Error::Io { path: path.to_path_buf(), source: e });
    match &out.out {
        Some(path) => std::fs::write(path, text).map_err(|e| io(path, e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| io(Path::new("<stdout>"), e)),
    }
}

fn run_config(a: &RunArgs) -> RunConfig {
    let production = matches!(a.preset, Some(Preset::Production));
    let mut cfg = RunConfig::new(&a.output_dir);
    if production {
        cfg.n_chains = 3;
        cfg.iters = 62_000;
        cfg.thin = 10;
        cfg.burnin = Some(2000);
        cfg.sigma0_min = Some(0.04);
        cfg.unbiased_vr = ids(&DEFAULT_UNBIASED_VR);
    }
    cfg.n_chains = a.chains.unwrap_or(cfg.n_chains);
    cfg.iters = a.iters.unwrap_or(cfg.iters);
    cfg.thin = a.thin.unwrap_or(cfg.thin);
    cfg.burnin = a.burnin.or(cfg.burnin);
    cfg.sigma0_min = a.sigma0_min.or(cfg.sigma0_min);
    if let Some(codes) = &a.iso_unbiased {
        cfg.unbiased_vr = ids(codes);
    }
    cfg.annual = a.annual;
    cfg.ar_phase2 = a.ar_phase2;
    cfg.uncertainty = a.uncertainty;
    cfg.seed = a.seed;
    cfg.parallel = a.parallel;
    cfg.start_year = a.start_year;
    cfg.present_year = a.present_year;
    cfg.source_column = a.source_col.clone();
    cfg.replace = a.replace;
    cfg
}

fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let cfg = run_config(a);
    let references = load_reference(&a.ref_file)?;
    let raw = match &a.raw_file {
        Some(path) => load_raw(path, &a.covariates, &a.cont_covariates)?,
        None if a.uncertainty => {
            return Err(Failure {
                code: 1,
                message: "--uncertainty needs --raw-file".into(),
            })
        }
        None => RawDataset::default(),
    };
    let store = run(&cfg, &raw, &references)?;
    log::info!("wrote {} chains to {}", store.meta().n_chains, store.root().display());
    Ok(())
}

fn cmd_extra(a: &ExtraArgs) -> Result<(), Failure> {
    let store = Store::open(&a.output_dir)?;
    let raw = match &a.raw_file {
        Some(path) => {
            let covs = a.covariates.clone().unwrap_or_else(|| store.meta().covariates.clone());
            let cont = a.cont_covariates.clone().unwrap_or_else(|| store.meta().cont_covariates.clone());
            Some((load_raw(path, &covs, &cont)?, path.clone()))
        }
        None => None,
    };
    let cfg = ExtraConfig {
        countries: ids(&a.countries),
        raw,
        unbiased_vr: a.iso_unbiased.as_deref().map(ids),
        iters: a.iters,
        burnin: a.burnin,
        parallel: a.parallel,
        ..ExtraConfig::default()
    };
    run_extra(&a.output_dir, &cfg)?;
    Ok(())
}

fn cmd_bias_sd(a: &BiasSdArgs) -> Result<(), Failure> {
    let id = CountryId(a.country);
    let (raw, references, unbiased, source) = match &a.output_dir {
        Some(dir) => {
            let store = Store::open(dir)?;
            let (raw, refs) = load_store_inputs(&store)?;
            let meta = store.meta();
            (raw, refs, meta.unbiased_vr.clone(), meta.source_column.clone())
        }
        None => {
            let (Some(raw_file), Some(ref_file)) = (&a.raw_file, &a.ref_file) else {
                return Err(Failure {
                    code: 1,
                    message: "give --output-dir or both --raw-file and --ref-file".into(),
                });
            };
            let raw = load_raw(raw_file, &a.covariates, &a.cont_covariates)?;
            (raw, load_reference(ref_file)?, ids(&a.iso_unbiased), a.source_col.clone())
        }
    };
    let reference = references.iter().find(|r| r.country == id).ok_or(Error::UnknownCountry(id.0))?;
    let (params, _) = country_measurement(&raw, reference, &unbiased, &source)?;
    for w in &params.warnings {
        log::warn!("{w}");
    }
    let mut buf = Vec::new();
    write_table(&params, &mut buf)?;
    emit(&a.out, &String::from_utf8_lossy(&buf))
}

fn estimate_csv(years: &[i32], header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (y, row) in years.iter().zip(rows) {
        out.push_str(&y.to_string());
        for v in row {
            out.push(',');
            out.push_str(&tfrcast::engine::store::format_g15(v));
        }
        out.push('\n');
    }
    out
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Continue { output_dir, iters } => {
            continue_run(&output_dir, iters)?;
            Ok(())
        }
        Command::Extra(a) => cmd_extra(&a),
        Command::Predict {
            output_dir,
            end_year,
            burnin,
            nr_traj,
            uncertainty,
        } => {
            let store = Store::open(&output_dir)?;
            let unc = uncertainty.unwrap_or(store.meta().flags.uncertainty);
            let set = predict(&store, end_year, burnin, nr_traj, unc)?;
            log::info!("{} trajectories per country up to {end_year}", set.n_trajectories());
            Ok(())
        }
        Command::Summarize {
            output_dir,
            params,
            country,
            thin,
            burnin,
            out,
        } => {
            let store = Store::open(&output_dir)?;
            let rows = summarize(&store, &params, country.map(CountryId), thin, burnin)?;
            emit(&out, &summary_csv(&rows))
        }
        Command::Estimate {
            output_dir,
            country,
            levels,
            thin,
            burnin,
            draws,
            out,
        } => {
            let store = Store::open(&output_dir)?;
            let table = estimation_quantiles(&store, CountryId(country), Some(&levels), thin, burnin)?;
            let text = if draws {
                // one column per draw, one row per year
                let mut header = vec!["year".to_string()];
                header.extend((1..=table.matrix.len()).map(|i| format!("draw{i}")));
                let cols = table.years.len();
                estimate_csv(
                    &table.years,
                    &header,
                    (0..cols).map(|t| table.matrix.iter().map(|r| r[t]).collect()),
                )
            } else {
                let mut header = vec!["year".to_string()];
                header.extend(levels.iter().map(|p| if *p == 0.5 { "median".into() } else { p.to_string() }));
                estimate_csv(&table.years, &header, table.quantiles.unwrap_or_default().into_iter())
            };
            emit(&out, &text)
        }
        Command::Table {
            output_dir,
            country,
            levels,
            out,
        } => {
            let store = Store::open(&output_dir)?;
            let set = read_predictions(&store, CountryId(country))?;
            let table = trajectory_table(&set, CountryId(country), &levels)?;
            emit(&out, &table_csv(&table))
        }
        Command::BiasSd(a) => cmd_bias_sd(&a),
        Command::Diagnose {
            output_dir,
            thin,
            burnin,
            express,
        } => {
            let store = Store::open(&output_dir)?;
            let d = diagnose(&store, thin, burnin, express)?;
            emit(&OutArg { out: None }, &render(&d))
        }
        Command::Simulate {
            output_dir,
            countries,
            periods,
            start_year,
            phi,
            seed,
        } => {
            let spec = WorldSpec {
                n_countries: countries,
                n_periods: periods,
                start_year,
                phi,
                n_with_vr: countries.div_ceil(2),
                seed,
                ..WorldSpec::default()
            };
            let w = generate(&spec);
            std::fs::create_dir_all(&output_dir).map_err(|e| Error::Io {
                path: output_dir.clone(),
                source: e,
            })?;
            write_raw(&w.raw, &output_dir.join("raw.csv"))?;
            write_reference(&w.references, &output_dir.join("reference.csv"))?;
            let codes: Vec<String> = w.unbiased_vr.iter().map(|c| c.to_string()).collect();
            println!("unbiased VR countries: {}", codes.join(","));
            Ok(())
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("TFR_ENGINE_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| Failure {
        code: 1,
        message: format!("TFR_ENGINE_THREADS must be a positive integer, got '{value}'"),
    })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure {
        code: 1,
        message: format!("thread pool: {e}"),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match configure_threads().and_then(|()| dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
