//! `kobmetric <experiment> --domain <file.json|inline> --seed <int> --budget <json> --out <path> --format csv|json`
//!
//! Exit codes: 0 success, 2 configuration error, 3 when any sub-run failed
//! (the report is still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kobmetric::domains::DomainSpec;
use kobmetric::harness::{emit_report, failed_runs, run_experiment, Experiment, ExperimentConfig, ReportFormat};
use kobmetric::optimize::OptimizerBudget;

#[derive(Parser, Debug)]
#[command(name = "kobmetric", version, about = "Run an invariant-metric experiment and write its report")]
struct Cli {
    experiment: Experiment,
    /// Domain descriptor: a JSON object or a path to a file holding one.
    /// Defaults to the experiment's standard domain.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optimizer budget as JSON (inline or file); missing fields keep their defaults.
    #[arg(long)]
    budget: Option<String>,
    /// Report path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    format: ReportFormat,
}

fn inline_or_file(arg: &str) -> Result<String, String> {
    if arg.trim_start().starts_with('{') {
        Ok(arg.to_string())
    } else {
        std::fs::read_to_string(arg).map_err(|e| format!("cannot read {arg}: {e}"))
    }
}

fn configure(cli: Cli) -> Result<ExperimentConfig, String> {
    let domain = match &cli.domain {
        Some(arg) => DomainSpec::from_json(&inline_or_file(arg)?).map_err(|e| format!("domain: {e}"))?,
        None => cli.experiment.default_domain(),
    };
    let budget: OptimizerBudget = match &cli.budget {
        Some(arg) => serde_json::from_str(&inline_or_file(arg)?).map_err(|e| format!("budget: {e}"))?,
        None => OptimizerBudget::default(),
    };
    let mut config = ExperimentConfig::new(cli.experiment, domain, budget, cli.seed).map_err(|e| e.to_string())?;
    config.out = cli.out;
    config.format = cli.format;
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = match configure(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("kobmetric: {e}");
            return ExitCode::from(2);
        }
    };
    let rows = match run_experiment(&config) {
        Ok(rows) => rows,
        Err(e) => {
            eprintln!("kobmetric: {e}");
            return ExitCode::from(2);
        }
    };
    let text = match emit_report(&rows, &config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("kobmetric: {e}");
            return ExitCode::from(2);
        }
    };
    if config.out.is_none() {
        print!("{text}");
    }
    let failed = failed_runs(&rows);
    if failed > 0 {
        eprintln!("kobmetric: {failed} sub-run(s) failed");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
