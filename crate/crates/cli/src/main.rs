use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffrec::corpus::write_fold_manifest;
use diffrec::harness::{self, EvaluationReport};
use diffrec::recommend::write_lists_csv;
use diffrec::{dataset_stats, ExperimentConfig, HarnessError, Method};
use log::info;

/// Bipartite-network recommenders and their evaluation harness.
#[derive(Debug, Parser)]
#[command(name = "diffrec", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file with one `key = value` per line
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Ratings file
    #[arg(long, global = true)]
    input: Option<String>,
    /// ml100k-tsv or generic-csv
    #[arg(long, global = true)]
    format: Option<String>,
    /// Rating scale as min:max:step
    #[arg(long, global = true)]
    scale: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Worker threads, 0 for all cores
    #[arg(long, global = true)]
    threads: Option<String>,
    /// Output directory; defaults to $DIFFREC_OUT_DIR
    #[arg(long, global = true)]
    out_dir: Option<String>,
    /// Recommendation list length
    #[arg(short = 'L', global = true)]
    list_len: Option<String>,
    #[arg(long, global = true)]
    theta: Option<String>,
    /// Method, or a comma-separated list for experiments
    #[arg(long, global = true)]
    method: Option<String>,
    /// Neighborhood size for UBCF and IBCF
    #[arg(long, global = true)]
    k: Option<String>,
    #[arg(long, global = true)]
    like_threshold: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print users,items,ratings,sparsity of the (filtered) input
    Stats,
    /// Filter the input and write the fold assignment
    Prepare,
    /// Cross-validated comparison of the configured methods
    Eval,
    /// PIM+RA metrics over the configured theta values
    SweepTheta,
    /// List metrics over the configured list lengths
    SweepLength,
    /// Rating-prediction error over similarity measures and neighborhood sizes
    SweepKnn,
    /// Co-rating, popularity and similarity-distribution analyses
    Analyze,
    /// Print one user's recommendation list
    Recommend {
        #[arg(long)]
        user: String,
    },
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => Failure::Usage(c.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        cfg.merge(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    let env_out = std::env::var("DIFFREC_OUT_DIR").ok().filter(|v| !v.is_empty());
    if cfg.out_dir.is_none() {
        if let Some(dir) = &env_out {
            cfg.out_dir = Some(PathBuf::from(dir));
        }
    }
    let method_key = match cli.command {
        Command::Recommend { .. } => None,
        _ => Some("methods"),
    };
    let overrides = [
        (Some("input"), &cli.input),
        (Some("format"), &cli.format),
        (Some("scale"), &cli.scale),
        (Some("seed"), &cli.seed),
        (Some("threads"), &cli.threads),
        (Some("out_dir"), &cli.out_dir),
        (Some("list_len"), &cli.list_len),
        (Some("theta"), &cli.theta),
        (method_key, &cli.method),
        (Some("knn_k"), &cli.k),
        (Some("like_threshold"), &cli.like_threshold),
    ];
    for (key, value) in overrides {
        if let (Some(key), Some(value)) = (key, value) {
            cfg.set_override(key, value)
                .map_err(|e| Failure::Usage(e.to_string()))?;
        }
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn emit_report(report: &EvaluationReport, cfg: &ExperimentConfig, stem: &str) -> Result<(), Failure> {
    match &cfg.out_dir {
        Some(dir) => {
            report.write_to_dir(dir, stem)?;
            info!("wrote {}", dir.join(format!("{stem}.csv")).display());
        }
        None => report.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(fs::File) -> Result<(), Failure>) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    f(fs::File::create(dir.join(name))?)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve(cli)?;
    eprint!("# resolved configuration\n{}", cfg.render());
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Failure::Data(e.to_string()))?;
    }
    let data_err = |e: diffrec::corpus::CorpusError| Failure::Data(e.to_string());
    match &cli.command {
        Command::Stats => {
            let ds = harness::load_dataset(&cfg)?;
            println!("{}", dataset_stats(&ds));
        }
        Command::Prepare => {
            let folds = harness::prepare_folds(&cfg)?;
            match &cfg.out_dir {
                Some(dir) => write_file(dir, "folds.csv", |f| {
                    write_fold_manifest(&folds, io::BufWriter::new(f)).map_err(data_err)
                })?,
                None => write_fold_manifest(&folds, io::stdout().lock()).map_err(data_err)?,
            }
            info!("wrote {} folds", folds.len());
        }
        Command::Eval => emit_report(&harness::run_experiment(&cfg)?, &cfg, "eval")?,
        Command::SweepTheta => emit_report(&harness::sweep_theta(&cfg)?, &cfg, "sweep_theta")?,
        Command::SweepLength => emit_report(&harness::sweep_list_length(&cfg)?, &cfg, "sweep_length")?,
        Command::SweepKnn => emit_report(&harness::sweep_knn(&cfg)?, &cfg, "sweep_knn")?,
        Command::Analyze => {
            let ds = harness::load_dataset(&cfg)?;
            let analysis = harness::analyze_corpus(&ds, &cfg)?;
            print!("{}", analysis.summary_csv());
            if let Some(dir) = &cfg.out_dir {
                analysis.write_to_dir(dir, &ds)?;
            }
        }
        Command::Recommend { user } => {
            let method: Method = match &cli.method {
                Some(m) => m.parse().map_err(Failure::Usage)?,
                None => Method::PimRa,
            };
            let (ds, list) = harness::recommend_user(&cfg, user, method)?;
            write_lists_csv(&[list], &ds, cfg.list_len, io::stdout().lock())
                .map_err(|e| Failure::Data(e.to_string()))?;
        }
    }
    io::stdout().flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
