use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{ArgAction, Parser, Subcommand};

use maf::eval::AblationPlan;
use maf::lm::SessionMode;
use maf_cli::commands::{
    cmd_ablate, cmd_check, cmd_report, cmd_run, render_ablation_table, render_run_summary,
    RunOverrides,
};

/// Iterative refinement of language-model reasoning with decoupled feedback modules.
#[derive(Parser)]
#[command(name = "maf", version, about)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine every problem in the configured dataset and write traces plus a report.
    Run {
        /// Path to the run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the iteration budget.
        #[arg(long)]
        max_iterations: Option<usize>,
        /// Override the iteration called out in the report summary.
        #[arg(long)]
        report_iteration: Option<usize>,
        /// Stop each problem as soon as its extracted answer matches gold.
        #[arg(long)]
        oracle: bool,
        /// Comma-separated subset of configured modules to run.
        #[arg(long, value_delimiter = ',')]
        modules: Option<Vec<String>>,
        /// Session mode: live, record, or replay.
        #[arg(long)]
        session: Option<String>,
        /// Run directory (defaults to the config's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run selected feedback modules once against a single solution file.
    Check {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated module names to run.
        #[arg(long, value_delimiter = ',', required = true)]
        modules: Vec<String>,
        /// Problem statement to show LM critics (tool modules ignore it).
        #[arg(long)]
        problem: Option<String>,
        /// File holding the candidate solution, one reasoning step per line.
        solution_file: PathBuf,
    },
    /// Run an ablation plan and compare each variant against the full roster.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Ablation plan: leave-one-out or strategy-sweep.
        #[arg(long)]
        plan: String,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        session: Option<String>,
        /// Parent directory for the per-variant run directories.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute accuracy-at-iteration curves from a directory of trace files.
    Report {
        /// Directory containing trace JSONL files (usually a run directory).
        dir: PathBuf,
        /// Config to use instead of the directory's own config.toml.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn init_logging(verbose: u8) {
    let default_level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level))
        .format_timestamp(None)
        .init();
}

fn parse_session(flag: Option<String>) -> maf::Result<Option<SessionMode>> {
    flag.map(|s| SessionMode::from_str(&s)).transpose()
}

fn run(cli: Cli) -> maf::Result<()> {
    match cli.command {
        Command::Run {
            config,
            max_iterations,
            report_iteration,
            oracle,
            modules,
            session,
            out,
        } => {
            let overrides = RunOverrides {
                max_iterations,
                report_iteration,
                oracle,
                modules,
                session: parse_session(session)?,
                out,
            };
            let summary = cmd_run(&config, &overrides)?;
            print!("{}", render_run_summary(&summary));
            Ok(())
        }
        Command::Check {
            config,
            modules,
            problem,
            solution_file,
        } => {
            let output = cmd_check(&config, &solution_file, &modules, problem.as_deref())?;
            print!("{output}");
            Ok(())
        }
        Command::Ablate {
            config,
            plan,
            max_iterations,
            oracle,
            session,
            out,
        } => {
            let plan = AblationPlan::from_str(&plan)?;
            let overrides = RunOverrides {
                max_iterations,
                oracle,
                session: parse_session(session)?,
                out,
                ..RunOverrides::default()
            };
            let summary = cmd_ablate(&config, plan, &overrides)?;
            print!("{}", render_ablation_table(&summary));
            println!("wrote {}/ablation.csv", summary.root.display());
            Ok(())
        }
        Command::Report { dir, config } => {
            let render = cmd_report(&dir, config.as_deref())?;
            print!("{}", render.table);
            println!("wrote {}/report.csv", render.dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
