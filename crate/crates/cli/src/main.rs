use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode as ProcessExit;

use clap::{Args, Parser, Subcommand, ValueEnum};
use probcer_cli::commands::{
    run_bench, run_oracle, run_recognize, run_score, run_validate, BenchConfig, ModelKind,
    NegationMode, OracleConfig, ReportMode, RunConfig,
};
use probcer_cli::{CliError, ExitCode};
use probcer_core::synth::GenSpec;

/// Streaming probabilistic complex event recognition.
#[derive(Parser)]
#[command(name = "probcer", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Independent,
    Markov,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Independent => ModelKind::Independent,
            ModelArg::Markov => ModelKind::Markov,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    PerMatch,
    Marginal,
    Map,
}

#[derive(Clone, Copy, ValueEnum)]
enum NegationArg {
    Prob,
    Hard,
}

#[derive(Args)]
struct ModelOpts {
    /// Dependency model for match probabilities.
    #[arg(long, value_enum, default_value = "independent")]
    model: ModelArg,
    /// Conditional probability table (JSON map {"prev->next": p}).
    #[arg(long)]
    cpt: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run recognition over a JSONL event stream.
    Recognize {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file (stdout when omitted).
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        model: ModelOpts,
        /// Per-intervening-event belief decay in (0,1].
        #[arg(long)]
        decay: Option<f64>,
        /// Confidence threshold for pruning and reporting.
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        #[arg(long, value_enum, default_value = "per-match")]
        report: ReportArg,
        /// Treat promoted CEs as fresh independent events (noisy-or merging).
        #[arg(long)]
        approx_hierarchy: bool,
        #[arg(long, default_value_t = 100_000)]
        run_cap: usize,
        #[arg(long, default_value_t = 25)]
        lineage_cap: usize,
        /// Negation semantics: probabilistic factor or hard filter.
        #[arg(long, value_enum, default_value = "prob")]
        negation: NegationArg,
    },
    /// Exact possible-worlds marginals by full history enumeration.
    Oracle {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Restrict the report to one CE type.
        #[arg(long)]
        ce: Option<String>,
        #[command(flatten)]
        model: ModelOpts,
    },
    /// Precision/recall/F against gold labels.
    Score {
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
    },
    /// Throughput and latency over a seeded synthetic stream.
    Bench {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        gen_events: usize,
        #[arg(long, default_value_t = 26)]
        gen_types: usize,
        /// Fraction of events drawn from the rule-relevant types.
        #[arg(long, default_value_t = 0.01)]
        gen_relevant: f64,
        #[arg(long, default_value_t = 0.5)]
        gen_prob_min: f64,
        #[arg(long, default_value_t = 1.0)]
        gen_prob_max: f64,
        #[arg(long, default_value_t = 1)]
        gen_events_per_tick: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        #[arg(long, default_value_t = 100_000)]
        run_cap: usize,
    },
    /// Parse and compile a rule file; print diagnostics.
    Validate {
        #[arg(long)]
        rules: PathBuf,
        /// Print the compiled plans as deterministic text.
        #[arg(long)]
        dump_plan: bool,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    match cli.command {
        Command::Recognize {
            rules,
            input,
            output,
            model,
            decay,
            threshold,
            report,
            approx_hierarchy,
            run_cap,
            lineage_cap,
            negation,
        } => {
            let cfg = RunConfig {
                rules,
                input,
                output: output.clone(),
                model: model.model.into(),
                cpt: model.cpt,
                decay,
                threshold,
                report: match report {
                    ReportArg::PerMatch => ReportMode::PerMatch,
                    ReportArg::Marginal => ReportMode::Marginal,
                    ReportArg::Map => ReportMode::Map,
                },
                approx_hierarchy,
                run_cap,
                lineage_cap,
                negation: match negation {
                    NegationArg::Prob => NegationMode::Prob,
                    NegationArg::Hard => NegationMode::Hard,
                },
            };
            let summary = match &cfg.output {
                Some(path) => {
                    let mut f = std::fs::File::create(path).map_err(|e| {
                        CliError::config("IO_ERROR", format!("{}: {e}", path.display()))
                    })?;
                    run_recognize(&cfg, &mut f)?
                }
                None => run_recognize(&cfg, &mut stdout.lock())?,
            };
            let _ = writeln!(
                std::io::stderr(),
                "{}",
                serde_json::to_string(&summary).unwrap_or_default()
            );
            Ok(())
        }
        Command::Oracle {
            rules,
            input,
            ce,
            model,
        } => run_oracle(
            &OracleConfig {
                rules,
                input,
                ce,
                model: model.model.into(),
                cpt: model.cpt,
            },
            &mut stdout.lock(),
        ),
        Command::Score {
            predicted,
            gold,
            threshold,
        } => run_score(&predicted, &gold, threshold, &mut stdout.lock()).map(|_| ()),
        Command::Bench {
            rules,
            gen_events,
            gen_types,
            gen_relevant,
            gen_prob_min,
            gen_prob_max,
            gen_events_per_tick,
            seed,
            threshold,
            run_cap,
        } => run_bench(
            &BenchConfig {
                rules,
                gen: GenSpec {
                    events: gen_events,
                    types: gen_types,
                    relevant_fraction: gen_relevant,
                    relevant_types: Vec::new(),
                    prob_min: gen_prob_min,
                    prob_max: gen_prob_max,
                    events_per_tick: gen_events_per_tick,
                    seed,
                },
                threshold,
                run_cap,
            },
            &mut stdout.lock(),
        ),
        Command::Validate { rules, dump_plan } => {
            run_validate(&rules, dump_plan, &mut stdout.lock())
        }
    }
}

fn main() -> ProcessExit {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ProcessExit::from(0),
        Err(err) => {
            let _ = writeln!(std::io::stderr(), "{}", err.to_json());
            ProcessExit::from(match err.exit {
                ExitCode::Ok => 0,
                ExitCode::Config => 2,
                ExitCode::Stream => 3,
                ExitCode::Capacity => 4,
            })
        }
    }
}
