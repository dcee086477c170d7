//! `xfaith`: score summary faithfulness with NLI, benchmark scoring
//! strategies, and curate training data.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AnnotateOutputs, LossCheckOptions, TransformMode, XnliOptions};
use config::{RunConfig, Settings};

#[derive(Parser)]
#[command(name = "xfaith", version, about = "Faithfulness scoring and data curation for cross-lingual summarisation")]
struct Cli {
    #[command(flatten)]
    config: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score corpus summaries with one or more strategies
    Score {
        /// Also write the full NLI matrix of every example
        #[arg(long)]
        matrix_out: Option<PathBuf>,
    },
    /// ROC-AUC / Fleiss kappa table over human-annotated sentences
    Benchmark {
        /// Language pair for records without a lang_pair field
        #[arg(long, default_value = "all")]
        lang_pair: String,
    },
    /// Label sentences and build removal / Test_Faith id sets from scores
    Annotate {
        /// Clean removal set at --pct
        #[arg(long)]
        removal_out: Option<PathBuf>,
        /// Random removal set of the same size
        #[arg(long)]
        random_out: Option<PathBuf>,
        /// Test_Faith retain set at --fraction
        #[arg(long)]
        test_faith_out: Option<PathBuf>,
        /// Corpus providing reference summaries for Test_Faith similarity
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Precomputed similarity JSONL ({"id", "score"}) for Test_Faith
        #[arg(long)]
        similarity: Option<PathBuf>,
        /// Comma-separated pct grid; --out becomes a directory
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
    },
    /// Build Clean / Random / Test_Faith / Mask / Unlike training data
    Transform {
        #[arg(long, value_enum)]
        mode: TransformMode,
        /// Id set written by `annotate`
        #[arg(long)]
        ids: Option<PathBuf>,
        /// Annotations JSONL written by `annotate`
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Extractiveness and extractive-baseline statistics as TSV
    Stats,
    /// Evaluate the training losses and check their gradients
    LossCheck {
        /// JSON file with logits, targets and faithful flags
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 3)]
        timesteps: usize,
        #[arg(long, default_value_t = 5)]
        vocab: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Include the literal reading of the unlikelihood objective
        #[arg(long)]
        literal: bool,
    },
    /// Derive cross-lingual NLI pairs and evaluate scorer accuracy
    XnliPairs {
        #[arg(long)]
        premise_lang: Option<String>,
        #[arg(long)]
        hypothesis_lang: Option<String>,
        /// Accuracy table over all language combinations
        #[arg(long)]
        accuracy_out: Option<PathBuf>,
        /// Languages for the accuracy table (default: all shared ones)
        #[arg(long, value_delimiter = ',')]
        langs: Option<Vec<String>>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = Settings::resolve(&cli.config)?;
    match cli.command {
        Command::Score { matrix_out } => commands::score(&settings, matrix_out.as_deref()),
        Command::Benchmark { lang_pair } => commands::benchmark(&settings, &lang_pair),
        Command::Annotate {
            removal_out,
            random_out,
            test_faith_out,
            corpus,
            similarity,
            sweep,
        } => commands::annotate(
            &settings,
            &AnnotateOutputs {
                removal_out,
                random_out,
                test_faith_out,
                corpus,
                similarity,
                sweep,
            },
        ),
        Command::Transform { mode, ids, annotations } => {
            commands::transform(&settings, mode, ids.as_deref(), annotations.as_deref())
        }
        Command::Stats => commands::stats(&settings),
        Command::LossCheck {
            instance,
            cases,
            timesteps,
            vocab,
            h,
            tol,
            literal,
        } => commands::loss_check(
            &settings,
            &LossCheckOptions {
                instance,
                cases,
                timesteps,
                vocab,
                h,
                tol,
                literal,
            },
        ),
        Command::XnliPairs {
            premise_lang,
            hypothesis_lang,
            accuracy_out,
            langs,
        } => commands::xnli_pairs(
            &settings,
            &XnliOptions {
                premise_lang,
                hypothesis_lang,
                accuracy_out,
                langs,
            },
        ),
    }
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_TRANSPORT: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn io_code(e: &std::io::Error) -> u8 {
    use std::io::ErrorKind::*;
    match e.kind() {
        NotFound | PermissionDenied | InvalidData | InvalidInput | IsADirectory => EXIT_VALIDATION,
        _ => EXIT_INTERNAL,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<xfaith::Error>() {
            return match e {
                xfaith::Error::Transport(_) | xfaith::Error::Protocol(_) => EXIT_TRANSPORT,
                xfaith::Error::Io(io) => io_code(io),
                _ => EXIT_VALIDATION,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return io_code(io);
        }
        if cause.downcast_ref::<std::string::FromUtf8Error>().is_some() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_INTERNAL
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
