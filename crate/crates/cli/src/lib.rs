//! Subcommands behind the `neurath` binary.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use neurath::{
    compare_models, emit_reports, export_behavior, fit_population, ingest_behavior, read_records,
    records_to_participants, recovery_study, run_simulation, summarize, write_confusion_csv, write_fits_csv,
    write_records, BeliefMode, ExperimentSpec, FitOptions, FitResult, IngestOptions, InterventionKind, JudgmentKind,
    ModelKind, OmegaMode, RationalScale, ReportFormat, StayRule,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "neurath", version, about = "Active causal structure learning: simulation, model fitting and the task server")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation described by a TOML spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Fit models to a behavioral CSV.
    Fit(FitArgs),
    /// Model recovery from a previous fit.
    Recover {
        /// `fits.json` written by `fit`.
        #[arg(long)]
        fits: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Behavioral CSV; defaults to the one recorded in the fits file.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Summary tables from a `simulate` output directory.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Start the session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "sessions")]
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Switch::Off)]
        analytics: Switch,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> ReportFormat {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Both => ReportFormat::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated model names; `judgment`, `intervention` and `all` expand to families.
    #[arg(long, default_value = "judgment")]
    pub models: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value = "condition")]
    pub belief: String,
    #[arg(long, default_value = "two-pass")]
    pub omega_mode: String,
    #[arg(long, default_value = "likelihood")]
    pub stay_rule: String,
    #[arg(long, default_value = "probability")]
    pub rational_scale: String,
    /// Reject cyclic judgments instead of skipping them.
    #[arg(long)]
    pub strict: bool,
}

/// Written by `fit`, read by `recover`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsFile {
    pub data_path: PathBuf,
    pub seed: u64,
    pub options: FitOptions,
    pub fits: Vec<FitResult>,
}

fn kebab<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).with_context(|| format!("unknown {what} '{s}'"))
}

pub fn parse_models(list: &str) -> Result<Vec<ModelKind>> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let judg = JudgmentKind::ALL.into_iter().map(ModelKind::Judgment);
        let intv = InterventionKind::ALL.into_iter().map(ModelKind::Intervention);
        match item {
            "judgment" => out.extend(judg),
            "intervention" => out.extend(intv),
            "all" => out.extend(judg.chain(intv)),
            name => match ModelKind::parse(name) {
                Some(k) => out.push(k),
                None => bail!("unknown model '{name}'"),
            },
        }
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|k| seen.insert(*k));
    if out.is_empty() {
        bail!("no models given");
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn simulate(spec: &Path, out: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let spec = ExperimentSpec::load(spec).with_context(|| format!("reading {}", spec.display()))?;
    let records = run_simulation(&spec)?;
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let rec = out.join("records.json");
    write_records(&records, &rec)?;
    written.push(rec);
    let beh = out.join("behavior.csv");
    export_behavior(&beh, &records_to_participants(&records, &spec.experiment())?)?;
    written.push(beh);
    written.extend(emit_reports(&summarize(&records), format.into(), out)?);
    Ok(written)
}

pub fn fit(args: &FitArgs) -> Result<Vec<PathBuf>> {
    let options = FitOptions {
        restarts: args.restarts,
        belief: kebab::<BeliefMode>("belief mode", &args.belief)?,
        omega_mode: kebab::<OmegaMode>("omega mode", &args.omega_mode)?,
        stay_rule: kebab::<StayRule>("stay rule", &args.stay_rule)?,
        rational_scale: kebab::<RationalScale>("rational scale", &args.rational_scale)?,
        ..FitOptions::default()
    };
    let kinds = parse_models(&args.models)?;
    let data = ingest_behavior(&args.data, IngestOptions { strict: args.strict })
        .with_context(|| format!("reading {}", args.data.display()))?;
    let fits = fit_population(&data, &kinds, &options, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let csv = args.out.join("fits.csv");
    write_fits_csv(std::fs::File::create(&csv)?, &fits)?;
    let json = args.out.join("fits.json");
    let data_path = std::fs::canonicalize(&args.data).unwrap_or_else(|_| args.data.clone());
    write_json(
        &json,
        &FitsFile {
            data_path,
            seed: args.seed,
            options,
            fits: fits.clone(),
        },
    )?;
    let cmp = args.out.join("comparison.json");
    write_json(&cmp, &compare_models(&fits))?;
    Ok(vec![csv, json, cmp])
}

pub fn recover(
    fits: &Path,
    out: &Path,
    data: Option<&Path>,
    seed: Option<u64>,
    restarts: Option<usize>,
) -> Result<Vec<PathBuf>> {
    let file: FitsFile = serde_json::from_str(&std::fs::read_to_string(fits).with_context(|| format!("reading {}", fits.display()))?)?;
    let data_path = data.map(Path::to_path_buf).unwrap_or_else(|| file.data_path.clone());
    let data = ingest_behavior(&data_path, IngestOptions::default())
        .with_context(|| format!("reading {}", data_path.display()))?;
    let mut options = file.options.clone();
    if let Some(r) = restarts {
        options.restarts = r;
    }
    let report = recovery_study(&data, &file.fits, &options, seed.unwrap_or(file.seed))?;
    std::fs::create_dir_all(out)?;
    let csv = out.join("confusion.csv");
    write_confusion_csv(std::fs::File::create(&csv)?, &report)?;
    let json = out.join("recovery.json");
    write_json(&json, &report)?;
    Ok(vec![csv, json])
}

pub fn report(records: &Path, out: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let path = if records.is_dir() {
        records.join("records.json")
    } else {
        records.to_path_buf()
    };
    let recs = read_records(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(emit_reports(&summarize(&recs), format.into(), out)?)
}

pub fn serve(port: u16, data_dir: PathBuf, analytics: Switch) -> Result<()> {
    let store = neurath_service::Store::open(neurath_service::ServiceConfig {
        data_dir: Some(data_dir),
        analytics: analytics == Switch::On,
    })?;
    let rt = tokio::runtime::Runtime::new()?;
    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], port));
    eprintln!("listening on {addr}");
    rt.block_on(neurath_service::serve(Arc::new(store), addr))?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let written = match cli.command {
        Command::Simulate { spec, out, format } => simulate(&spec, &out, format)?,
        Command::Fit(args) => fit(&args)?,
        Command::Recover {
            fits,
            out,
            data,
            seed,
            restarts,
        } => recover(&fits, &out, data.as_deref(), seed, restarts)?,
        Command::Report { records, out, format } => report(&records, &out, format)?,
        Command::Serve {
            port,
            data_dir,
            analytics,
        } => return serve(port, data_dir, analytics),
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
