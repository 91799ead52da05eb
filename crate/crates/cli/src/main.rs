use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bugprio::bridge::mock::{MockBehavior, MockWorker};
use bugprio::corpus::Priority;
use bugprio::pipeline::{self, predict_stream, Pipeline, PipelineConfig, PipelineError};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bugprio", version, about = "Topic-routed bug report priority prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Pipeline configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Classifier kind: multinomial_nb, gaussian_nb or external.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    num_topics: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    min_topic_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the dataset into the canonical corpus.
    Ingest(ConfigArgs),
    /// Split, fit topics and train the classifier bank.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Evaluate on the test split in the same session.
        #[arg(long)]
        evaluate: bool,
    },
    /// Score the held-out split with the saved bundle.
    Evaluate(ConfigArgs),
    /// Predict priorities for JSONL reports.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        /// Bundle directory; defaults to the run's bundle.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Input JSONL; standard input when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output JSONL; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print distribution, topic, metric and timing tables.
    Report(ConfigArgs),
    /// Protocol v1 test worker on stdin/stdout.
    #[command(hide = true)]
    MockWorker {
        /// Always predict this level instead of recalling training labels.
        #[arg(long)]
        fixed: Option<String>,
        /// Protocol version to announce.
        #[arg(long, default_value = "1")]
        announce: String,
        /// Answer TRAIN for this topic with an error.
        #[arg(long)]
        fail_topic: Vec<u32>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig, PipelineError> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(path) = &args.dataset {
        config.dataset.path = path.clone();
    }
    if let Some(kind) = &args.kind {
        config.classifier.kind = kind.clone();
    }
    if let Some(k) = args.num_topics {
        config.lda.num_topics = k;
        config.lda.alpha = None;
    }
    if let Some(iterations) = args.iterations {
        config.lda.iterations = iterations;
    }
    if let Some(m) = args.min_topic_size {
        config.classifier.min_topic_size = m;
    }
    config.validate()?;
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest(args) => {
            let summary = Pipeline::new(load_config(&args)?)?.ingest()?;
            print_json(&summary);
        }
        Command::Train { config, evaluate } => {
            let mut p = Pipeline::new(load_config(&config)?)?;
            if evaluate {
                let (summary, metrics) = p.train_and_evaluate()?;
                print_json(&json!({ "train": summary, "metrics": metrics }));
            } else {
                print_json(&p.train()?);
            }
        }
        Command::Evaluate(args) => {
            let metrics = Pipeline::new(load_config(&args)?)?.evaluate()?;
            print_json(&metrics);
        }
        Command::Predict {
            config,
            bundle,
            input,
            output,
        } => {
            let p = Pipeline::new(load_config(&config)?)?;
            let loaded = match bundle {
                Some(dir) => pipeline::load_bundle(&dir, p.registry())?,
                None => p.load_bundle()?,
            };
            let reader: Box<dyn BufRead> = match &input {
                Some(path) => Box::new(BufReader::new(File::open(path).map_err(|e| PipelineError::io(path, e))?)),
                None => Box::new(io::stdin().lock()),
            };
            let writer: Box<dyn Write> = match &output {
                Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| PipelineError::io(path, e))?)),
                None => Box::new(BufWriter::new(io::stdout().lock())),
            };
            let summary = predict_stream(&loaded.predictor, reader, writer)?;
            log::info!("{} predictions, {} malformed records", summary.predicted, summary.errors);
        }
        Command::Report(args) => {
            print!("{}", Pipeline::new(load_config(&args)?)?.report()?);
        }
        Command::MockWorker {
            fixed,
            announce,
            fail_topic,
        } => {
            let behavior = match fixed {
                Some(level) => MockBehavior::Fixed(
                    Priority::parse(&level)
                        .ok_or_else(|| PipelineError::Config(format!("unknown priority `{level}`")))?,
                ),
                None => MockBehavior::Memorize,
            };
            let (mut worker, _) = MockWorker::with_version(behavior, &announce);
            for t in fail_topic {
                worker = worker.fail_training_for(t);
            }
            worker
                .serve(io::stdin().lock(), io::stdout().lock())
                .map_err(|e| PipelineError::io(&PathBuf::from("<stdio>"), e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({ "error": { "code": e.code(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
