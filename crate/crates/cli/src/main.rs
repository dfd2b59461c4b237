use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use grag_cli::config::{ConfigFile, FlagOverrides, GeneratorKind, RunConfig};
use grag_cli::server::{self, ServiceState};
use grag_cli::{cmd_bench, cmd_generate, cmd_ingest, cmd_query, CliError};

/// Graph-based retrieval-augmented generation.
#[derive(Debug, Parser)]
#[command(name = "grag", version)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Encoder parameter file (replaces the seeded initialization).
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    generator: Option<GeneratorKind>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    max_tokens: Option<usize>,
    /// Print the effective configuration to stderr and log progress.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the fragment index from a corpus.
    Ingest,
    /// Print the top-k fragments for a query.
    Query {
        text: String,
        #[arg(long)]
        json: bool,
    },
    /// Retrieve, then generate an answer.
    Generate {
        text: String,
        #[arg(long)]
        trace: bool,
    },
    /// Run the document-count sweep and write ablation reports.
    Bench {
        /// Comma-separated retrieval depths.
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
    },
    /// Serve /query, /generate and /healthz over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let file = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    let k_list = match &cli.command {
        Command::Bench { k_list } => k_list.clone(),
        _ => None,
    };
    let flags = FlagOverrides {
        corpus: cli.corpus.clone(),
        index: cli.index.clone(),
        seed: cli.seed,
        params: cli.params.clone(),
        generator: cli.generator,
        k: cli.k,
        k_list,
        out: cli.out.clone(),
        max_tokens: cli.max_tokens,
    };
    RunConfig::resolve(file, flags)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    if cli.verbose {
        eprintln!("{}", cfg.to_json());
    }
    match cli.command {
        Command::Ingest => print!("{}", cmd_ingest(&cfg)?.render()),
        Command::Query { text, json } => print!("{}", cmd_query(&cfg, &text, json)?),
        Command::Generate { text, trace } => print!("{}", cmd_generate(&cfg, &text, trace)?),
        Command::Bench { .. } => {
            let report = cmd_bench(&cfg)?;
            print!("{}", report.table);
            let failures = &report.outcome.failures;
            for f in failures {
                eprintln!("warning[{}]: record {}: {}", f.class, f.record + 1, f.message);
            }
            if !failures.is_empty() {
                return Err(CliError::RecordFailures {
                    failed: failures.len(),
                    total: report.outcome.retrieved.len(),
                });
            }
        }
        Command::Serve { bind, workers } => {
            let state = ServiceState::new(cfg)?;
            let handle = server::spawn(state, &bind, workers.unwrap_or_else(server::default_workers))?;
            eprintln!("listening on http://{}", handle.addr());
            handle.join();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[UsageError]: {first}");
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.render());
            if e.class() == "UsageError" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
