use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spurbench::harness::{self, DataSource, ExperimentConfig, HarnessError, Report, ReportFormat};
use spurbench::{dataspec, embio, nnopt, Method};

#[derive(Parser)]
#[command(name = "spurbench", version, about = "Loss-based last-layer retraining benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as EMB (or CSV).
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.95)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long, default_value = "emb")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the ERM model of one cell and write its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every method on one (rho, seed) cell.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Run the full rho x seed sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Re-render a saved JSON report.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Overrides applied on top of the config file.
#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated rho values.
    #[arg(long, value_delimiter = ',')]
    spuriosity_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Dataset file (.emb or .csv) instead of synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    erm_epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    afr_gammas: Option<Vec<f64>>,
    #[arg(long)]
    record_timing: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::UnknownFormat(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.spuriosity_list {
            cfg.spuriosity_list = v.clone();
        }
        if let Some(v) = &self.methods {
            cfg.methods = v
                .iter()
                .map(|m| Method::parse(m).ok_or_else(|| config_err(format!("unknown method {m:?}"))))
                .collect::<Result<_, _>>()?;
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.hidden {
            cfg.hidden = v.clone();
        }
        if let Some(path) = &self.data {
            let format = match path.extension().and_then(|e| e.to_str()) {
                Some("csv") => harness::FileFormat::Csv,
                _ => harness::FileFormat::Emb,
            };
            cfg.data = DataSource::File {
                path: path.clone(),
                format,
                has_groups: true,
                fractions: Default::default(),
                llr_rho_cap: 0.95,
            };
        }
        if let Some(e) = self.erm_epochs {
            cfg.erm.epochs = e;
        }
        if let Some(v) = &self.afr_gammas {
            cfg.afr_gammas = v.clone();
        }
        cfg.record_timing |= self.record_timing;
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(text: &str, output: Option<&PathBuf>) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| run_err(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cell_rho(cfg: &ExperimentConfig, rho: Option<f64>) -> Result<Option<f64>, Failure> {
    match (&cfg.data, rho) {
        (DataSource::Synthetic { .. }, None) => Err(config_err("--rho is required for synthetic data")),
        (DataSource::Synthetic { .. }, Some(r)) => Ok(Some(r)),
        (DataSource::File { .. }, _) => Ok(None),
    }
}

fn finish(report: &Report, format: ReportFormat, output: Option<&PathBuf>) -> Result<bool, Failure> {
    emit(&harness::render_report(report, format)?, output)?;
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        log::error!("{} rho={:?} seed={}: {}", row.method, row.rho, row.seed, row.error.as_deref().unwrap_or(""));
    }
    Ok(!report.has_errors())
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Gen { common, rho, seed, n_per_class, format, out } => {
            let cfg = common.resolve()?;
            let DataSource::Synthetic { config, .. } = &cfg.data else {
                return Err(config_err("gen needs a synthetic data source"));
            };
            let mut spur = config.with_rho(rho);
            if let Some(n) = n_per_class {
                spur.n_per_class = n;
            }
            spur.validate().map_err(config_err)?;
            let dataset = dataspec::generate(&spur, seed).map_err(run_err)?;
            match format.as_str() {
                "emb" => embio::write_emb(&dataset, &out),
                "csv" => embio::write_csv(&dataset, &out),
                other => return Err(config_err(format!("unknown dataset format {other:?} (expected emb or csv)"))),
            }
            .map_err(run_err)?;
            log::info!("wrote {} samples of dim {} to {}", dataset.samples().len(), spur.dim(), out.display());
            Ok(true)
        }
        Command::Train { common, rho, seed, out } => {
            let cfg = common.resolve()?;
            let rho = cell_rho(&cfg, rho)?;
            let (dataset, split) = harness::cell_data(&cfg, rho, seed)?;
            let model = harness::train_erm(&cfg, &dataset, &split, rho, seed)?;
            let val = spurbench::evalmetrics::group_accuracies(&model, &dataset, &split.val).map_err(run_err)?;
            let file = std::fs::File::create(&out).map_err(|e| run_err(format!("{}: {e}", out.display())))?;
            nnopt::write_checkpoint(&model, std::io::BufWriter::new(file)).map_err(run_err)?;
            println!("val wga {:.4} mean_group {:.4} -> {}", val.wga, val.mean_group, out.display());
            Ok(true)
        }
        Command::Run { common, rho, seed, format } => {
            let cfg = common.resolve()?;
            let format: ReportFormat = format.parse()?;
            let rho = cell_rho(&cfg, rho)?;
            let rows = harness::run_cell(&cfg, rho, seed)?;
            finish(&Report::from_rows(rows), format, cfg.output.as_ref())
        }
        Command::Sweep { common, format } => {
            let cfg = common.resolve()?;
            let format: ReportFormat = format.parse()?;
            let report = harness::sweep(&cfg)?;
            finish(&report, format, cfg.output.as_ref())
        }
        Command::Report { input, format, output } => {
            let format: ReportFormat = format.parse()?;
            let text = std::fs::read_to_string(&input).map_err(|e| config_err(format!("{}: {e}", input.display())))?;
            let report = Report::from_json(&text).map_err(config_err)?;
            emit(&harness::render_report(&report, format)?, output.as_ref())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
