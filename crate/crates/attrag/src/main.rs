use std::path::PathBuf;
use std::process::ExitCode;

use attrag::commands::{self, StatsFormat};
use attrag::Error;
use attrag_core::attribution::{AttributionConfig, SimilarityWeights};
use attrag_core::generation::{AttributionMode, PromptSpec, Shots, DEFAULT_TEMPERATURE, DEFAULT_WORD_LIMIT};
use attrag_core::QueryMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "attrag", version, about = "Retrieval, attributed generation and evaluation for clinical question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArg {
    /// Dataset JSON file.
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    /// Run directory holding stage artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct EmbeddingArg {
    /// file:<path.jsonl>, http(s)://<url>, or hash:<dim> (offline).
    #[arg(long, default_value = "hash:1024")]
    embedding: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PostRetrieval,
    PostGeneration,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShotsArg {
    Zero,
    One,
}

#[derive(Clone, Copy, ValueEnum)]
enum QueryArg {
    Patient,
    Clinician,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset file; exits 2 on invalid data.
    Validate {
        #[command(flatten)]
        dataset: DatasetArg,
    },
    /// Sentence count and length distributions.
    Stats {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long, value_enum, default_value = "table")]
        format: StatsFormat,
        /// List every case instead of summary rows (CSV) or in addition (table).
        #[arg(long)]
        per_case: bool,
    },
    /// Precompute embeddings into a JSONL file for `--embedding file:`.
    Index {
        #[command(flatten)]
        dataset: DatasetArg,
        #[command(flatten)]
        embedding: EmbeddingArg,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank note sentences and truncate the ranking.
    Retrieve {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        embedding: EmbeddingArg,
        /// fixed:<k>, rerank:<k>:<n>, autocut[:tol], autocut-star, elbow, surprise[:alpha].
        #[arg(long, default_value = "surprise")]
        strategy: String,
        #[arg(long, value_enum, default_value = "both")]
        query_mode: QueryArg,
        /// Recorded in the artifact; retrieval itself is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Prompt the model with the retrieved sentences.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        /// mock:echo, mock:script:<file.json>, or an http(s) URL. The bearer
        /// token is read from LLM_API_TOKEN.
        #[arg(long)]
        llm_endpoint: String,
        #[arg(long, default_value = "llama-3.3-70b-instruct")]
        model: String,
        #[arg(long, value_enum, default_value = "post-retrieval")]
        attribution_mode: ModeArg,
        #[arg(long, value_enum, default_value = "one")]
        shots: ShotsArg,
        #[arg(long, default_value_t = 200)]
        max_tokens: u32,
        #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
        temperature: f64,
        #[arg(long, default_value_t = DEFAULT_WORD_LIMIT)]
        word_limit: usize,
    },
    /// Turn generated answers into cited answers.
    Attribute {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        embedding: EmbeddingArg,
        /// Lexical, fuzzy and semantic weights, comma separated.
        #[arg(long, default_value = "0,0.5,0.5")]
        weights: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Factuality and relevance of the attributed answers.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        embedding: EmbeddingArg,
        /// Extra relevance metric as name=url; reported but not averaged.
        #[arg(long = "external-scorer")]
        external: Vec<String>,
    },
    /// Sweep attribution weights and thresholds over generated answers.
    GridSearch {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        embedding: EmbeddingArg,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// Require every weight to be at least one step.
        #[arg(long)]
        exclude_zero_weights: bool,
        /// Comma-separated thresholds (default 0.1..0.9).
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
    },
}

fn parse_weights(s: &str) -> Result<SimilarityWeights, Error> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad weights {s:?}: {e}")))?;
    let [l, f, m] = parts[..] else {
        return Err(Error::Config(format!("expected three weights, got {s:?}")));
    };
    Ok(SimilarityWeights::new(l, f, m)?)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate { dataset } => {
            let r = commands::validate(&dataset.dataset)?;
            println!(
                "ok: {} cases, {} sentences, {} labeled",
                r.cases, r.sentences, r.labeled_cases
            );
        }
        Command::Stats { dataset, format, per_case } => {
            print!("{}", commands::stats(&dataset.dataset, format, per_case)?);
        }
        Command::Index { dataset, embedding, out } => {
            let n = commands::index(&dataset.dataset, &embedding.embedding.parse()?, &out)?;
            println!("wrote {n} vectors to {}", out.display());
        }
        Command::Retrieve { run, embedding, strategy, query_mode, seed } => {
            let query_mode = match query_mode {
                QueryArg::Patient => QueryMode::PatientOnly,
                QueryArg::Clinician => QueryMode::ClinicianOnly,
                QueryArg::Both => QueryMode::Both,
            };
            let a = commands::retrieve(&commands::RetrieveOptions {
                dataset: run.dataset.dataset,
                out: run.out,
                embedding: embedding.embedding,
                strategy,
                query_mode,
                jobs: run.jobs,
                seed,
            })?;
            if let Some(e) = a.evaluation {
                println!(
                    "strict P {:.4} R {:.4} F1 {:.4} | lenient P {:.4} R {:.4} F1 {:.4}",
                    e.strict.precision, e.strict.recall, e.strict.f1, e.lenient.precision, e.lenient.recall, e.lenient.f1
                );
            }
        }
        Command::Generate {
            run,
            llm_endpoint,
            model,
            attribution_mode,
            shots,
            max_tokens,
            temperature,
            word_limit,
        } => {
            let prompt = PromptSpec {
                attribution_mode: match attribution_mode {
                    ModeArg::PostRetrieval => AttributionMode::PostRetrieval,
                    ModeArg::PostGeneration => AttributionMode::PostGeneration,
                },
                shots: match shots {
                    ShotsArg::Zero => Shots::Zero,
                    ShotsArg::One => Shots::One,
                },
                max_tokens,
                temperature,
            };
            let a = commands::generate(&commands::GenerateOptions {
                dataset: run.dataset.dataset,
                out: run.out,
                endpoint: llm_endpoint,
                model,
                prompt,
                word_limit,
                jobs: run.jobs,
            })?;
            let ok = a.cases.iter().filter(|c| c.output.is_some()).count();
            println!("{ok}/{} cases produced a valid answer", a.cases.len());
        }
        Command::Attribute { run, embedding, weights, threshold } => {
            let config = AttributionConfig::new(parse_weights(&weights)?, threshold)?;
            let a = commands::attribute(&commands::AttributeOptions {
                dataset: run.dataset.dataset,
                out: run.out,
                embedding: embedding.embedding,
                config,
                jobs: run.jobs,
            })?;
            println!("attributed {} answers", a.cases.len());
        }
        Command::Evaluate { run, embedding, external } => {
            let a = commands::evaluate(&commands::EvaluateOptions {
                dataset: run.dataset.dataset,
                out: run.out,
                embedding: embedding.embedding,
                external,
                jobs: run.jobs,
            })?;
            let (s, l) = (a.factuality.strict, a.factuality.lenient);
            println!(
                "strict P {:.4} R {:.4} F1 {:.4} | lenient P {:.4} R {:.4} F1 {:.4} | relevance {:.4} | overall {:.4}",
                s.precision, s.recall, s.f1, l.precision, l.recall, l.f1, a.relevance.mean, a.overall
            );
        }
        Command::GridSearch { run, embedding, step, exclude_zero_weights, thresholds } => {
            let rows = commands::grid_search(&commands::GridSearchOptions {
                dataset: run.dataset.dataset,
                out: run.out,
                embedding: embedding.embedding,
                step,
                include_zero: !exclude_zero_weights,
                thresholds,
                jobs: run.jobs,
            })?;
            if let Some(best) = rows.first() {
                let w = best.weights;
                println!(
                    "{} configurations; best w=({}, {}, {}) T={} overall {:.4}",
                    rows.len(),
                    w.lexical,
                    w.fuzzy,
                    w.semantic,
                    best.threshold,
                    best.score.overall
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
