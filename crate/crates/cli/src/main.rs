use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use euds::pipeline::{
    read_report, run_command, Command, PipelineError, RunConfig, RunReport, RESULT_HEADER,
};
use euds::scoring::Normalization;

#[derive(Parser)]
#[command(
    name = "euds",
    version,
    about = "Entropy-based selection of training data"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Cmd {
    /// Score every sample and write score tables and histograms.
    Score,
    /// Select with one fixed interval, without searching.
    Select,
    /// Search for the best interval and write the result tables.
    Search,
    /// Select and build the configured mix of original and synthetic data.
    Mix,
    /// Run every configured stage.
    Run,
    /// Print the result tables of an earlier run.
    Report {
        /// Report file; defaults to report.json in the output directory.
        path: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Original dataset (JSONL).
    #[arg(long, global = true)]
    original: Option<PathBuf>,
    /// Synthetic dataset (JSONL).
    #[arg(long, global = true)]
    synthetic: Option<PathBuf>,
    /// Comma-separated entropy types: ie, ge, se.
    #[arg(long, global = true)]
    entropy: Option<String>,
    /// Catalog label such as 3-10, or bounds such as 2.5:7.
    #[arg(long, global = true)]
    interval: Option<String>,
    /// minmax or percentile.
    #[arg(long, global = true)]
    normalize: Option<Normalization>,
    /// builtin or external:<command>.
    #[arg(long, global = true)]
    evaluator: Option<String>,
    /// Weight of data reduction in the search objective.
    #[arg(long, global = true)]
    lambda: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(p) = &self.original {
            cfg.input.original = Some(p.clone());
        }
        if let Some(p) = &self.synthetic {
            cfg.input.synthetic = Some(p.clone());
        }
        if let Some(list) = &self.entropy {
            cfg.set_entropy_types(list);
        }
        if let Some(iv) = &self.interval {
            cfg.set_interval(iv);
        }
        if let Some(n) = self.normalize {
            cfg.normalize = n;
        }
        if let Some(e) = &self.evaluator {
            cfg.search.evaluator = e.clone();
        }
        if let Some(l) = self.lambda {
            cfg.search.lambda = l;
        }
        Ok(cfg)
    }
}

fn print_report(report: &RunReport) {
    for table in &report.tables {
        println!(
            "# {} {} (subset {}, chosen {})",
            table.pool, table.entropy_type, table.subset_size, table.chosen
        );
        println!("{RESULT_HEADER}");
        for row in table.rows() {
            println!("{}", row.fields().join(","));
        }
        println!();
    }
    for c in &report.chosen {
        let intervals: Vec<String> = c
            .spec
            .intervals
            .iter()
            .map(|(k, iv)| format!("{k} {iv}"))
            .collect();
        println!("{}: {}", c.pool, intervals.join(" & "));
    }
    for m in &report.manifests {
        println!(
            "{}: {} of {} kept ({:.2}% reduction)",
            m.dataset, m.selected_count, m.original_count, m.reduction_pct
        );
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = cli.common.config()?;
    let command = match cli.command {
        Cmd::Score => Command::Score,
        Cmd::Select => {
            cfg.search.enabled = false;
            Command::Select
        }
        Cmd::Search => {
            cfg.search.enabled = true;
            Command::Search
        }
        Cmd::Mix => Command::Mix,
        Cmd::Run => Command::Run,
        Cmd::Report { path } => {
            let path = path.unwrap_or_else(|| cfg.output_dir.join("report.json"));
            print_report(&read_report(&path)?);
            return Ok(());
        }
    };
    let report = run_command(&cfg, command)?;
    print_report(&report);
    println!(
        "wrote {} files to {}",
        report.files.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
