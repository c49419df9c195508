use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gea_core::experiment::{cmd_report, cmd_search, cmd_sweep, write_sweep_csv, ExperimentError, RunConfig};
use gea_core::MethodRegistry;

#[derive(Parser)]
#[command(name = "gea", version, about = "Proxy-guided aging evolution over a cell search space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method over a set of seeds and write a JSON result file.
    Search(RunArgs),
    /// Run G-EA and REA at several budgets and write a CSV.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated list of budgets.
        #[arg(long, value_delimiter = ',')]
        c_values: Option<Vec<usize>>,
    },
    /// Summarize result files as a table.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML file of settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// proxy, mock or oracle.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    /// synthetic or bench.
    #[arg(long)]
    fitness: Option<String>,
    #[arg(long)]
    bench: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(short = 'P', long = "population")]
    population: Option<usize>,
    #[arg(short = 'S', long = "sample")]
    sample: Option<usize>,
    #[arg(short = 'C', long = "budget")]
    budget: Option<usize>,
    /// Comma-separated seed list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    batch_file: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Any other setting, as key=value. Repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, ExperimentError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let flags: [(&str, Option<String>); 12] = [
            ("method", self.method.clone()),
            ("mode", self.mode.clone()),
            ("rho", self.rho.map(|v| v.to_string())),
            ("fitness", self.fitness.clone()),
            ("bench_path", self.bench.as_ref().map(|p| p.display().to_string())),
            ("dataset", self.dataset.clone()),
            ("P", self.population.map(|v| v.to_string())),
            ("S", self.sample.map(|v| v.to_string())),
            ("C", self.budget.map(|v| v.to_string())),
            ("seeds", self.seeds.clone()),
            ("batch_file", self.batch_file.as_ref().map(|p| p.display().to_string())),
            ("output", self.output.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        if self.bench.is_some() && self.fitness.is_none() {
            config.set("fitness", "bench")?;
        }
        for pair in &self.set {
            config.set_pair(pair)?;
        }
        Ok(config)
    }
}

fn write_or_print(path: Option<&PathBuf>, bytes: &[u8]) -> Result<(), ExperimentError> {
    match path {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let registry = MethodRegistry::default();
    match cli.command {
        Command::Search(args) => {
            let config = args.resolve()?;
            let doc = cmd_search(&config, &registry)?;
            let a = &doc.aggregate;
            eprintln!(
                "{} [{}] on {}: val {:.2}±{:.2}, test {:.2}±{:.2} over {} seeds",
                a.label,
                doc.mode,
                a.dataset,
                a.val_mean,
                a.val_std,
                a.test_mean,
                a.test_std,
                a.rows.len()
            );
            if config.output.is_none() {
                let mut text = serde_json::to_string_pretty(&doc)?;
                text.push('\n');
                write_or_print(None, text.as_bytes())?;
            }
        }
        Command::Sweep { run, c_values } => {
            let config = run.resolve()?;
            let cs = c_values.unwrap_or_else(|| config.c_values.clone());
            let rows = cmd_sweep(&config, &cs, &registry)?;
            let mut buf = Vec::new();
            write_sweep_csv(&rows, &mut buf)?;
            write_or_print(config.output.as_ref(), &buf)?;
        }
        Command::Report { files, format, output } => {
            let table = cmd_report(&files)?;
            let bytes = match format {
                Format::Text => table.render_text().into_bytes(),
                Format::Csv => {
                    let mut buf = Vec::new();
                    table.write_csv(&mut buf)?;
                    buf
                }
            };
            write_or_print(output.as_ref(), &bytes)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
