use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use transfer_risk::pipeline::{
    self, DatasetFormat, FitForm, FitGrid, PipelineConfig,
};

#[derive(Parser)]
#[command(name = "trisk", version, about = "Transfer risk between source and target learning tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config and write report.json and pairs.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config, defaults to ./trisk-out.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Precomputed risk table replacing the risk computation.
        #[arg(long)]
        override_risks: Option<PathBuf>,
    },
    /// Fit combiner coefficients to a table with input_risk, output_risk and accuracy columns.
    FitCombiner {
        /// CSV rows to fit; a pairs.csv from `run` works as-is.
        #[arg(long)]
        rows: PathBuf,
        #[arg(long, value_enum, default_value_t = FormArg::Polynomial2)]
        form: FormArg,
        /// Take the grid from this config's `fit` section.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the fitted combiner as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse datasets and print a summary without computing anything.
    IngestCheck {
        /// Check every dataset listed in an empirical-mode config.
        #[arg(long, conflicts_with = "path")]
        config: Option<PathBuf>,
        /// A single dataset file.
        #[arg(long, requires = "label")]
        path: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Linear,
    Polynomial2,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn summary(path: &Path, label: &str, format: Option<DatasetFormat>) -> anyhow::Result<serde_json::Value> {
    let format = match format {
        Some(f) => f,
        None => DatasetFormat::from_path(path)?,
    };
    let data = pipeline::ingest_dataset(path, format, label)?;
    let (lo, hi) = data
        .labels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    Ok(json!({
        "path": path.display().to_string(),
        "rows": data.features.len(),
        "dim": data.features.dim(),
        "features": data.feature_names,
        "label": data.label_name,
        "label_range": [lo, hi],
        "mean": data.features.mean().as_slice(),
    }))
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            override_risks,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = Some(o);
            }
            if let Some(r) = override_risks {
                cfg.override_risks = Some(r);
            }
            let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("trisk-out"));
            log::info!("running {:?} mode, seed {}", cfg.mode, cfg.seed);
            let report = pipeline::run(&cfg)?;
            let (json_path, csv_path) = pipeline::write_report(&report, &dir)?;
            log::info!("{} rows in {:.3}s", report.rows.len(), report.timings["total"]);
            println!(
                "{}",
                json!({
                    "report": json_path.display().to_string(),
                    "pairs": csv_path.display().to_string(),
                    "rows": report.rows.len(),
                    "correlation": report.correlation,
                })
            );
        }
        Command::FitCombiner { rows, form, config, out } => {
            let grid = match config {
                Some(p) => PipelineConfig::load(&p)?.fit,
                None => FitGrid::default(),
            };
            let form = match form {
                FormArg::Linear => FitForm::Linear,
                FormArg::Polynomial2 => FitForm::Polynomial2,
            };
            let data = pipeline::read_fit_rows(&rows)?;
            let fit = pipeline::fit_combiner(&data, form, &grid)?;
            let text = serde_json::to_string_pretty(&fit)?;
            match out {
                Some(p) => std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
        }
        Command::IngestCheck {
            config,
            path,
            label,
            format,
        } => {
            let format = format.map(|f| match f {
                FormatArg::Csv => DatasetFormat::Csv,
                FormatArg::Json => DatasetFormat::Json,
            });
            let summaries = match (config, path) {
                (Some(c), None) => {
                    let cfg = PipelineConfig::load(&c)?;
                    let Some(spec) = cfg.empirical else {
                        bail!("config {} has no empirical section", c.display());
                    };
                    spec.datasets
                        .iter()
                        .map(|d| summary(&d.path, &d.label, d.format))
                        .collect::<anyhow::Result<Vec<_>>>()?
                }
                (None, Some(p)) => vec![summary(&p, label.as_deref().unwrap_or_default(), format)?],
                _ => bail!("ingest-check needs --config or --path"),
            };
            println!("{}", serde_json::to_string_pretty(&summaries)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRK_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Library errors already render their cause.
            let (kind, message) = match err.downcast_ref::<transfer_risk::Error>() {
                Some(e) => (e.kind(), e.to_string()),
                None => ("cli", format!("{err:#}")),
            };
            eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
            ExitCode::FAILURE
        }
    }
}
