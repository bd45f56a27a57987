use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use anova_evidence::report::{
    self, AnalyzeOptions, CalibrateOptions, ModelChoice, SimulateOptions,
};
use anova_evidence::study::{parse_study, StudySummary};
use anova_evidence::Error;

#[derive(Parser)]
#[command(
    name = "anova-evidence",
    version,
    about = "Evidential value for fabrication of ANOVA data"
)]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Pooled,
    PerGroup,
    Both,
}

impl From<ModelArg> for ModelChoice {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Pooled => ModelChoice::Pooled,
            ModelArg::PerGroup => ModelChoice::PerGroup,
            ModelArg::Both => ModelChoice::Both,
        }
    }
}

#[derive(clap::Args)]
struct EvidenceArgs {
    /// Study file (JSON).
    study: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Both)]
    model: ModelArg,
    /// Error variance; overrides the study file and F-statistic recovery.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Observations per cell; defaults to total_observations / cells.
    #[arg(long)]
    n: Option<f64>,
    /// Prior odds of fabrication, multiplied into posterior odds.
    #[arg(long)]
    prior_odds: Option<f64>,
}

impl EvidenceArgs {
    fn options(&self) -> AnalyzeOptions {
        AnalyzeOptions {
            model: Some(self.model.into()),
            sigma2: self.sigma2,
            n: self.n,
            prior_odds: self.prior_odds,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evidential value of a study.
    Analyze(EvidenceArgs),
    /// Recover the error variance from the study's F-statistics.
    Sigma { study: PathBuf },
    /// Compare the study with its worst-case table inside the rounding box.
    Sensitivity {
        #[command(flatten)]
        args: EvidenceArgs,
        /// Error variance for the worst-case table.
        #[arg(long)]
        worst_sigma2: Option<f64>,
    },
    /// Fabricate one raw dataset under the copying model.
    Simulate {
        /// Number of cells.
        #[arg(long = "I", alias = "cells", default_value_t = 2)]
        cells: usize,
        /// Subjects per cell.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        /// Cell means (comma separated); zeros by default.
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the raw dataset (JSON) here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulated distribution of the evidential value for a study design.
    Calibrate {
        study: PathBuf,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Correlation of the simulated errors (0 = proper data).
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        /// Report P(V > v) for these values (comma separated).
        #[arg(long, value_delimiter = ',')]
        threshold: Vec<f64>,
    },
    /// Multiply evidential values of independent studies.
    Combine {
        /// Numbers, `infinity`, or paths to JSON reports.
        #[arg(required = true)]
        values: Vec<String>,
        /// Read the per-group value from report files instead of the pooled one.
        #[arg(long)]
        per_group: bool,
        #[arg(long)]
        prior_odds: Option<f64>,
    },
}

fn load_study(path: &Path) -> Result<StudySummary, Error> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_study(&text)
}

fn emit<T: Serialize>(format: Format, report: &T, text: impl FnOnce(&T) -> String) {
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(report).expect("reports serialize")
        ),
        Format::Text => print!("{}", text(report)),
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let format = cli.format;
    match cli.command {
        Command::Analyze(args) => {
            let study = load_study(&args.study)?;
            let r = report::analyze(&study, &args.options())?;
            emit(format, &r, report::AnalysisReport::to_text);
        }
        Command::Sigma { study } => {
            let study = load_study(&study)?;
            let r = report::sigma(&study)?;
            emit(format, &r, report::SigmaReport::to_text);
            if r.recovery.pooled.is_none() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sensitivity { args, worst_sigma2 } => {
            let study = load_study(&args.study)?;
            let r = report::sensitivity(&study, &args.options(), worst_sigma2)?;
            emit(format, &r, report::AnalysisReport::to_text);
        }
        Command::Simulate {
            cells,
            n,
            rho,
            sigma2,
            mu,
            seed,
            output,
        } => {
            let (r, data) = report::simulate(&SimulateOptions {
                cells,
                n,
                rho,
                sigma2,
                mu,
                seed,
            })?;
            if let Some(path) = output {
                let json = serde_json::to_string(&data).expect("dataset serializes");
                fs::write(&path, json)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            }
            emit(format, &r, report::SimulationReport::to_text);
        }
        Command::Calibrate {
            study,
            sigma2,
            reps,
            seed,
            rho,
            threshold,
        } => {
            let study = load_study(&study)?;
            let r = report::calibrate(
                &study,
                &CalibrateOptions {
                    sigma2,
                    reps,
                    seed,
                    rho,
                    thresholds: threshold,
                },
            )?;
            emit(format, &r, report::CalibrateReport::to_text);
        }
        Command::Combine {
            values,
            per_group,
            prior_odds,
        } => {
            let mut inputs = Vec::with_capacity(values.len());
            for v in values {
                let value = match report::parse_extended(&v) {
                    Some(x) => x,
                    None => {
                        let text = fs::read_to_string(&v).map_err(|e| {
                            Error::Validation(format!(
                                "`{v}` is neither a number nor a readable report: {e}"
                            ))
                        })?;
                        report::v_from_report(&text, per_group)?
                    }
                };
                inputs.push((v, value));
            }
            let r = report::combine(inputs, prior_odds)?;
            emit(format, &r, report::CombineReport::to_text);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // Usage errors share exit code 1 with validation errors; 2 is reserved
    // for inputs from which no error variance can be resolved.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
