use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use grantrank::cli::{self, PipelineConfig, Query};

/// Recommends funding grants for scientific publications with a
/// LambdaMART ranker.
#[derive(Debug, Parser)]
#[command(name = "grantrank", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured work directory.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Also writes a machine-readable report to this path.
    #[arg(long, global = true)]
    json: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter raw grants, publications and links into the work directory.
    Ingest {
        #[arg(long)]
        grants: Option<PathBuf>,
        #[arg(long)]
        publications: Option<PathBuf>,
        #[arg(long)]
        links: Option<PathBuf>,
    },
    /// Build train and validation ranking lists.
    Dataset {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        split_ratio: Option<f64>,
    },
    /// Train the ranker on the training split.
    Train {
        #[arg(long)]
        num_trees: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Report NDCG and feature importance on the validation split.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Ranking lists to score instead of the validation split.
        #[arg(long)]
        lists: Option<PathBuf>,
    },
    /// Print the cumulative split gain of each feature.
    Importance {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = cli::IMPORTANCE_ROWS)]
        top: usize,
    },
    /// Rank grants for one publication.
    Recommend(RecommendArgs),
    /// Write a synthetic corpus with embeddings.
    Synth {
        /// Output directory; defaults to `<workdir>/synth`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RecommendArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// JSON file with `title`, `abstract` and `year`.
    #[arg(long, conflicts_with_all = ["title", "abstract_text", "year"])]
    pub_file: Option<PathBuf>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long = "abstract")]
    abstract_text: Option<String>,
    #[arg(long)]
    year: Option<i32>,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(args: Cli) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    set(&mut config.seed, args.seed);
    set(&mut config.paths.workdir, args.workdir);
    let json = args.json.as_deref();
    let stdout = std::io::stdout();
    let out = &mut stdout.lock();

    match args.command {
        Command::Ingest {
            grants,
            publications,
            links,
        } => {
            config.paths.grants = grants.or(config.paths.grants);
            config.paths.publications = publications.or(config.paths.publications);
            config.paths.links = links.or(config.paths.links);
            cli::emit_json(json, &cli::cmd_ingest(&config, out)?)?;
        }
        Command::Dataset {
            embeddings,
            split_ratio,
        } => {
            config.paths.embeddings = embeddings.or(config.paths.embeddings);
            set(&mut config.dataset.split_ratio, split_ratio);
            cli::emit_json(json, &cli::cmd_dataset(&config, out)?)?;
        }
        Command::Train {
            num_trees,
            learning_rate,
        } => {
            set(&mut config.ranker.num_trees, num_trees);
            set(&mut config.ranker.learning_rate, learning_rate);
            cli::emit_json(json, &cli::cmd_train(&config, out)?)?;
        }
        Command::Evaluate { model, lists } => {
            let report = cli::cmd_evaluate(&config, model.as_deref(), lists.as_deref(), out)?;
            cli::emit_json(json, &report)?;
        }
        Command::Importance { model, top } => {
            cli::emit_json(
                json,
                &cli::cmd_importance(&config, model.as_deref(), top, out)?,
            )?;
        }
        Command::Recommend(r) => {
            config.paths.embeddings = r.embeddings.or(config.paths.embeddings);
            let query = match r.pub_file {
                Some(path) => Query::File(path),
                None => Query::Inline {
                    title: r.title.unwrap_or_default(),
                    abstract_text: r.abstract_text.unwrap_or_default(),
                    year: r
                        .year
                        .context("--year is required unless --pub-file is given")?,
                },
            };
            let report = cli::cmd_recommend(&config, r.model.as_deref(), &query, r.top, out)?;
            cli::emit_json(json, &report)?;
        }
        Command::Synth { out: dir } => {
            let dir = dir.unwrap_or_else(|| config.paths.workdir.join("synth"));
            cli::emit_json(json, &cli::cmd_synth(&config, &dir, out)?)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
