//! `ljm`: simulate, fit, personalize, predict and report for the latent-age
//! joint model.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latent_joint::io::{self, Schema};
use latent_joint::personalize::FittedModel;
use latent_joint::pipeline;
use latent_joint::saem::{run_saem, write_trace_csv, SaemConfig};
use latent_joint::simulate::{simulate_cohort, SimConfig};
use latent_joint::Error;
use serde_json::json;

/// Relative output paths are resolved under this directory when it is set.
const OUT_DIR_ENV: &str = "LJM_OUT_DIR";

#[derive(Parser)]
#[command(name = "ljm", version, about = "Joint longitudinal-survival model on a latent disease age")]
struct Cli {
    /// Overrides the seed of the simulation or fit config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel steps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic cohort and its ground truth.
    Simulate(SimulateArgs),
    /// Estimate the population model by MCMC-SAEM.
    Fit(FitArgs),
    /// MAP random effects of each patient from its first visits.
    Personalize(PersonalizeArgs),
    /// Conditional survival and score predictions.
    Predict(PredictArgs),
    /// Prediction metrics against the full data.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config JSON; missing fields take the default preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// SAEM config JSON; missing fields take the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset schema JSON.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Model JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration trace CSV output.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct PersonalizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Number of leading visits used per patient.
    #[arg(long, default_value_t = 2)]
    k_visits: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    effects: PathBuf,
    /// Years after the last used visit, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.5")]
    horizons: Vec<f64>,
    /// Also predict scores at the later visits of this dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Skip the integrated Brier score grid.
    #[arg(long)]
    no_brier_grid: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    preds: PathBuf,
    /// Dataset directory holding the full follow-up.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Horizons for C-index and AUC.
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.5")]
    horizons: Vec<f64>,
    /// Effects CSV to compare with the dataset's `truth.csv`.
    #[arg(long)]
    effects: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn schema(path: &Option<PathBuf>) -> Result<Schema, Error> {
    path.as_deref().map_or(Ok(Schema::default()), io::load_json)
}

fn simulate(args: &SimulateArgs, seed: Option<u64>) -> Result<(), Error> {
    let mut config: SimConfig = args.config.as_deref().map_or(Ok(SimConfig::default()), io::load_json)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let cohort = simulate_cohort(&config)?;
    let dir = out_path(&args.out);
    io::save_dataset(&dir, &cohort.records)?;
    let ids: Vec<String> = cohort.records.iter().map(|r| r.id.clone()).collect();
    io::save_truth(&dir, &ids, &cohort.truth)?;
    log::info!(
        "simulated {} patients, {} visits, {:.1}% censored",
        cohort.records.len(),
        cohort.n_visits(),
        100.0 * cohort.censoring_rate()
    );
    Ok(())
}

fn fit(args: &FitArgs, seed: Option<u64>) -> Result<(), Error> {
    let mut config: SaemConfig = args.config.as_deref().map_or(Ok(SaemConfig::default()), io::load_json)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let records = io::load_dataset(&args.data, &schema(&args.schema)?)?;
    let result = run_saem(&records, &config)?;
    io::save_model(&out_path(&args.out), &FittedModel::from(&result))?;
    if let Some(trace) = &args.trace {
        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        let path = out_path(trace);
        write_trace_csv(&result.trace, &ids, BufWriter::new(File::create(path)?))?;
    }
    let d = &result.diagnostics;
    if d.stalled_windows > 0 {
        log::warn!("{} stalled sampling windows", d.stalled_windows);
    }
    Ok(())
}

fn personalize(args: &PersonalizeArgs) -> Result<(), Error> {
    let model = io::load_model(&args.model)?;
    let records = io::load_dataset(&args.data, &schema(&args.schema)?)?;
    let rows = pipeline::personalize_records(&records, args.k_visits, &model)?;
    let unconverged = rows.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        log::warn!("{unconverged} patients did not reach a stationary point");
    }
    io::save_effects(&out_path(&args.out), &rows)
}

fn predict(args: &PredictArgs) -> Result<(), Error> {
    let model = io::load_model(&args.model)?;
    let effects = io::load_effects(&args.effects)?;
    let records = match &args.data {
        Some(d) => Some(io::load_dataset(d, &schema(&args.schema)?)?),
        None => None,
    };
    let horizons = pipeline::survival_horizons(&args.horizons, !args.no_brier_grid)?;
    let rows = pipeline::predict(&model, &effects, &horizons, records.as_deref())?;
    io::save_predictions(&out_path(&args.out), &rows)
}

fn report(args: &ReportArgs) -> Result<(), Error> {
    let preds = io::load_predictions(&args.preds)?;
    let records = io::load_dataset(&args.truth, &schema(&args.schema)?)?;
    let prediction = pipeline::prediction_report(&preds, &records, &args.horizons)?;
    let mut out = json!({ "prediction": prediction });
    if let Some(e) = &args.effects {
        let estimated = io::load_effects(e)?
            .into_iter()
            .map(|r| (r.patient_id.clone(), r.effects()))
            .collect();
        let truth = io::load_truth(&args.truth)?;
        let (icc_tau, icc_xi) = pipeline::effects_icc(&estimated, &truth)?;
        out["icc_tau"] = json!(icc_tau);
        out["icc_xi"] = json!(icc_xi);
    }
    io::save_json(&out_path(&args.out), &out)
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Fit(a) => fit(a, cli.seed),
        Command::Personalize(a) => personalize(a),
        Command::Predict(a) => predict(a),
        Command::Report(a) => report(a),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Input(_) | Error::Json(_) | Error::Csv(_) => 2,
        _ => 1,
    }
}

fn report_error(kind: &str, message: &str, details: Option<serde_json::Value>) {
    let mut v = json!({ "error": kind, "message": message });
    if let Some(d) = details {
        v["details"] = d;
    }
    eprintln!("{v}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim(), None);
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let details = match &e {
                Error::Validation(r) => serde_json::to_value(r).ok(),
                _ => None,
            };
            report_error(e.kind(), &e.to_string(), details);
            ExitCode::from(exit_code(&e))
        }
    }
}
