mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "subsbench", version, about = "Ingredient-substitution benchmarking toolkit")]
struct Cli {
    /// Experiment config (TOML or JSON).
    #[arg(long, global = true, env = "SUBSBENCH_CONFIG")]
    config: Option<PathBuf>,
    /// Validate the configuration and print the plan without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flag-level overrides, applied after the config file and environment.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub recipes: Option<PathBuf>,
    /// recipe1m-json or jsonl.
    #[arg(long, global = true)]
    pub recipe_format: Option<String>,
    #[arg(long, global = true)]
    pub train: Option<PathBuf>,
    #[arg(long, global = true)]
    pub valid: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test: Option<PathBuf>,
    /// Saved vocabulary JSONL.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Context variant, e.g. source-title.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// figure or extended.
    #[arg(long, global = true)]
    pub wording: Option<String>,
    /// http or mock.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[arg(long, global = true)]
    pub mock_responses: Option<PathBuf>,
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load recipes and substitution splits and report what joins.
    Ingest {
        /// Write title-joined samples as `samples.<split>.jsonl` here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Ingredient vocabulary.
    Vocab {
        #[command(subcommand)]
        command: VocabCommand,
    },
    /// Training datasets.
    Forge {
        #[command(subcommand)]
        command: ForgeCommand,
    },
    /// Experiment runs and Hit@k reports.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Vocabulary retrieval baseline.
    Retrieve {
        #[command(subcommand)]
        command: RetrieveCommand,
    },
}

#[derive(Subcommand, Debug)]
enum VocabCommand {
    Build {
        #[arg(long)]
        out: PathBuf,
        /// JSONL log of rare-variant merges.
        #[arg(long)]
        merge_log: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum ForgeCommand {
    /// Substitution SFT records.
    Sft {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        split: Option<String>,
        /// Seeded subset size.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Recipe-QA records.
    Qa {
        #[arg(long)]
        out: PathBuf,
    },
    /// Substitution and recipe-QA mixture.
    Multitask {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        /// subst:qa, e.g. 1:1.
        #[arg(long)]
        ratio: Option<String>,
    },
    /// Preference triplets mined from a predictions file.
    Dpo {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cap: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Render, complete, parse and score every sample of a split.
    Run {
        /// Predictions JSONL.
        #[arg(long)]
        out: PathBuf,
        /// Report JSON; defaults next to the predictions.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long = "k")]
        ks: Vec<usize>,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score a stored predictions file.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long = "k")]
        ks: Vec<usize>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Side-by-side table with the published numbers.
    Compare {
        /// Report JSON, optionally `label=path`.
        #[arg(long = "report")]
        reports: Vec<String>,
        /// Predictions JSONL to score, optionally `label=path`.
        #[arg(long = "predictions")]
        predictions: Vec<String>,
        /// Row the deltas are measured against.
        #[arg(long, default_value = "GISMO")]
        reference: String,
        #[arg(long)]
        no_literature: bool,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand, Debug)]
enum RetrieveCommand {
    /// Nearest vocabulary neighbours of one ingredient.
    Topk {
        #[arg(long)]
        source: String,
        #[arg(long)]
        k: Option<usize>,
        /// cosine, bm25 or margin[:k].
        #[arg(long)]
        metric: Option<String>,
    },
    /// Retrieval + LLM selection over a split.
    Baseline2 {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        metric: Option<String>,
        /// none or category.
        #[arg(long)]
        rerank: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = config::layered(cli.config.as_deref(), std::env::vars()).map_err(ConfigError::wrap)?;
    commands::apply_overrides(&mut cfg, &cli.overrides)?;
    let ctx = commands::Context::new(cfg, cli.dry_run);
    match cli.command {
        Command::Ingest { out_dir } => commands::ingest(&ctx, out_dir.as_deref()),
        Command::Vocab {
            command: VocabCommand::Build { out, merge_log },
        } => commands::vocab_build(&ctx, &out, merge_log.as_deref()),
        Command::Forge { command } => match command {
            ForgeCommand::Sft { out, split, n } => commands::forge_sft(ctx.with_forge(split, n, None, None)?, &out),
            ForgeCommand::Qa { out } => commands::forge_qa(&ctx, &out),
            ForgeCommand::Multitask { out, split, n, ratio } => {
                commands::forge_multitask(ctx.with_forge(split, n, ratio, None)?, &out)
            }
            ForgeCommand::Dpo { predictions, out, cap } => {
                commands::forge_dpo(ctx.with_forge(None, None, None, cap)?, &predictions, &out)
            }
        },
        Command::Eval { command } => match command {
            EvalCommand::Run {
                out,
                report,
                split,
                ks,
                shots,
                limit,
            } => commands::eval_run(ctx.with_eval(split, ks, shots, limit)?, &out, report.as_deref()),
            EvalCommand::Score {
                predictions,
                ks,
                out,
                json,
            } => commands::eval_score(ctx.with_eval(None, ks, None, None)?, &predictions, out.as_deref(), json),
            EvalCommand::Compare {
                reports,
                predictions,
                reference,
                no_literature,
                json,
            } => commands::eval_compare(&ctx, &reports, &predictions, &reference, !no_literature, json),
        },
        Command::Retrieve { command } => match command {
            RetrieveCommand::Topk { source, k, metric } => {
                commands::retrieve_topk(ctx.with_retrieval(k, metric, None)?, &source)
            }
            RetrieveCommand::Baseline2 {
                out,
                report,
                split,
                k,
                metric,
                rerank,
                limit,
            } => commands::retrieve_baseline2(
                ctx.with_retrieval(k, metric, rerank)?.with_eval(split, Vec::new(), None, limit)?,
                &out,
                report.as_deref(),
            ),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SUBSBENCH_LOG", "info"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.chain().any(|e| e.is::<ConfigError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
