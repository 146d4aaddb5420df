use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use bergman_lab::experiments::{self, ExperimentConfig, ExperimentKind, OutputFormat};
use bergman_lab::LabError;

/// Numerical experiments on the harmonic Bergman projection.
#[derive(Parser, Debug)]
#[command(name = "bergman-lab", version)]
struct Cli {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// kernel, counterexample, smoothing, decomposition or all.
    #[arg(long)]
    experiment: Option<ExperimentKind>,
    /// Dimension (3 only for the kernel experiment).
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated orders, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<u32>>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long)]
    format: Option<OutputFormat>,
    #[arg(long)]
    seed: Option<u64>,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, LabError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = cli.experiment {
        config.experiment = e;
    }
    if let Some(n) = cli.n {
        config.n = n;
    }
    if let Some(k) = &cli.k {
        config.k_list = k.clone();
    }
    if let Some(out) = &cli.out {
        config.output = Some(out.clone());
    }
    if let Some(f) = cli.format {
        config.format = f;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn init_threads() -> Result<(), LabError> {
    let threads = match std::env::var("BERGMAN_LAB_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| LabError::Usage(format!("BERGMAN_LAB_THREADS must be a count, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| LabError::Usage(format!("cannot start worker pool: {e}")))
}

fn run(cli: &Cli) -> Result<bool, LabError> {
    init_threads()?;
    let config = build_config(cli)?;
    let report = experiments::run(&config)?;
    let text = match config.format {
        OutputFormat::Csv => report.to_csv()?,
        OutputFormat::Json => report.to_json(),
    };
    match &config.output {
        Some(path) => std::fs::write(path, &text)
            .map_err(|e| LabError::Usage(format!("cannot write {}: {e}", path.display())))?,
        None => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(text.as_bytes());
        }
    }
    for row in report.failures() {
        eprintln!(
            "FAIL {} k={} {}: measured {} ({})",
            row.experiment,
            row.k.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
            row.quantity,
            row.measured,
            row.tolerance.label()
        );
    }
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ LabError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
