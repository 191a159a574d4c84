//! Pipeline commands: ingest, dataset, train, evaluate, importance,
//! recommend and synth. Each reads and writes under a work directory and
//! prints a human-readable summary to the given writer.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    corpus_stats, filter_corpus, ingest_grants, ingest_links, ingest_publications, CorpusBundle,
    CorpusStats, IngestReport, InputFormat, PublicationRecord,
};
use crate::dataset::{
    build_dataset, publication_description, read_lists, split_dataset, write_lists, CandidateIndex,
    FeatureContext, FeatureSchema, RankingList, SkippedList, LIST_SIZE,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, importance_report, random_baseline, ImportanceReport};
use crate::ranker::{
    load_model, predict_scores, save_model, train, RankerConfig, RankingModel, RoundLog,
};
use crate::semfeat::{load_embeddings, EmbeddingTable};
use crate::statfeat::StatParams;
use crate::synth::{write_synthetic, SynthConfig, SynthPaths};
use crate::textproc::Tokenizer;

pub const CORPUS_DIR: &str = "corpus";
pub const DATASET_DIR: &str = "dataset";
pub const MODEL_DIR: &str = "model";
pub const STATS_FILE: &str = "stats.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const SCHEMA_FILE: &str = "schema.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const IMPORTANCE_ROWS: usize = 20;
pub const MIN_RETRIEVAL_DEPTH: usize = 50;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub grants: Option<PathBuf>,
    pub publications: Option<PathBuf>,
    pub links: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    /// One stopword per line; no stopword removal when unset.
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Share of publications placed in the training split.
    pub split_ratio: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { split_ratio: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Simulated lists for the random-order baseline.
    pub baseline_trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![1, 5],
            baseline_trials: 10_000,
        }
    }
}

/// Everything a pipeline run depends on. Read from TOML; command-line flags
/// override individual fields afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives the split, ranker subsampling and the random baseline.
    pub seed: u64,
    pub paths: PathsConfig,
    pub tokenizer: TokenizerConfig,
    pub dataset: DatasetConfig,
    pub features: StatParams,
    pub ranker: RankerConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: PathsConfig {
                workdir: PathBuf::from("work"),
                ..PathsConfig::default()
            },
            tokenizer: TokenizerConfig::default(),
            dataset: DatasetConfig::default(),
            features: StatParams::default(),
            ranker: RankerConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.paths.workdir.join(CORPUS_DIR)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.paths.workdir.join(DATASET_DIR)
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths.workdir.join(MODEL_DIR).join(MODEL_FILE)
    }

    pub fn tokenizer(&self) -> Result<Tokenizer> {
        match &self.tokenizer.stopwords {
            Some(path) => Tokenizer::from_stopword_file(path),
            None => Ok(Tokenizer::new()),
        }
    }

    fn ranker_config(&self) -> RankerConfig {
        RankerConfig {
            seed: self.seed,
            ..self.ranker.clone()
        }
    }

    fn required(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let path = path
            .clone()
            .ok_or_else(|| Error::Config(format!("paths.{key} is not set")))?;
        if !path.exists() {
            return Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "file does not exist"),
            ));
        }
        Ok(path)
    }

    fn embeddings(&self) -> Result<EmbeddingTable> {
        load_embeddings(&Self::required(&self.paths.embeddings, "embeddings")?)
    }
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn note_ingest<T>(what: &str, path: &Path, report: &IngestReport<T>) {
    for err in &report.row_errors {
        warn!(
            "{}:{}: skipped {what}: {}",
            path.display(),
            err.line,
            err.message
        );
    }
    if report.duplicates > 0 {
        warn!(
            "{}: {} duplicate {what} records ignored",
            path.display(),
            report.duplicates
        );
    }
    if report.dropped_blank > 0 {
        warn!(
            "{}: {} {what} records with blank text dropped",
            path.display(),
            report.dropped_blank
        );
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub seed: u64,
    pub raw_grants: usize,
    pub raw_publications: usize,
    pub raw_links: usize,
    pub rejected_rows: usize,
    pub filtered: CorpusStats,
}

/// Reads the raw inputs, applies corpus filtering and writes the result
/// to `<workdir>/corpus`.
pub fn cmd_ingest(config: &PipelineConfig, out: &mut dyn Write) -> Result<IngestSummary> {
    let grants_path = PipelineConfig::required(&config.paths.grants, "grants")?;
    let pubs_path = PipelineConfig::required(&config.paths.publications, "publications")?;
    let links_path = PipelineConfig::required(&config.paths.links, "links")?;

    let grants = ingest_grants(&grants_path, InputFormat::from_path(&grants_path))?;
    note_ingest("grant", &grants_path, &grants);
    let pubs = ingest_publications(&pubs_path)?;
    note_ingest("publication", &pubs_path, &pubs);
    let links = ingest_links(&links_path)?;
    note_ingest("link", &links_path, &links);

    let rejected_rows = grants.row_errors.len() + pubs.row_errors.len() + links.row_errors.len();
    let raw = CorpusBundle::from_parts(grants.records, pubs.records, links.records);
    let (raw_grants, raw_publications, raw_links) =
        (raw.grants.len(), raw.publications.len(), raw.links.len());
    let filtered = filter_corpus(&raw)?;
    let dir = config.corpus_dir();
    filtered.write_to(&dir)?;

    let summary = IngestSummary {
        seed: config.seed,
        raw_grants,
        raw_publications,
        raw_links,
        rejected_rows,
        filtered: corpus_stats(&filtered),
    };
    write_json(&dir.join(STATS_FILE), &summary)?;
    info!("filtered corpus written to {}", dir.display());

    let s = &summary.filtered;
    writeln!(out, "corpus        raw  filtered").map_err(out_err)?;
    writeln!(out, "grants       {raw_grants:>5}  {:>8}", s.grants).map_err(out_err)?;
    writeln!(
        out,
        "publications {raw_publications:>5}  {:>8}",
        s.publications
    )
    .map_err(out_err)?;
    writeln!(out, "links        {raw_links:>5}  {:>8}", s.links).map_err(out_err)?;
    writeln!(out, "rejected rows: {rejected_rows}").map_err(out_err)?;
    writeln!(
        out,
        "publications per grant: {}",
        histogram_line(&s.grant_degree_histogram)
    )
    .map_err(out_err)?;
    writeln!(
        out,
        "grants per publication: {}",
        histogram_line(&s.publication_degree_histogram)
    )
    .map_err(out_err)?;
    Ok(summary)
}

fn histogram_line(h: &BTreeMap<usize, usize>) -> String {
    h.iter()
        .map(|(d, n)| format!("{d}:{n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub seed: u64,
    pub split_ratio: f64,
    pub lists: usize,
    pub train_lists: usize,
    pub validation_lists: usize,
    pub skipped: Vec<SkippedList>,
}

/// Builds ranking lists from the filtered corpus and writes the train and
/// validation splits with their schema.
pub fn cmd_dataset(config: &PipelineConfig, out: &mut dyn Write) -> Result<DatasetSummary> {
    let bundle = CorpusBundle::read_from(&config.corpus_dir())?;
    let embeddings = config.embeddings()?;
    let tokenizer = config.tokenizer()?;
    let build = build_dataset(&bundle, &embeddings, &tokenizer, config.features)?;
    if build.lists.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no ranking list could be built: all {} funding links skipped; the corpus has {} grants \
             and each list needs at least {} grants that do not fund the publication",
            build.skipped.len(),
            bundle.grants.len(),
            LIST_SIZE - 1
        )));
    }
    if !build.skipped.is_empty() {
        warn!(
            "{} of {} funding links skipped",
            build.skipped.len(),
            bundle.links.len()
        );
    }
    let (train_lists, valid_lists) =
        split_dataset(&build.lists, config.dataset.split_ratio, config.seed)?;

    let dir = config.dataset_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_lists(&dir.join(TRAIN_FILE), &train_lists)?;
    write_lists(&dir.join(VALIDATION_FILE), &valid_lists)?;
    FeatureSchema::standard().write(&dir.join(SCHEMA_FILE))?;
    let summary = DatasetSummary {
        seed: config.seed,
        split_ratio: config.dataset.split_ratio,
        lists: build.lists.len(),
        train_lists: train_lists.len(),
        validation_lists: valid_lists.len(),
        skipped: build.skipped,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;

    writeln!(
        out,
        "ranking lists: {} ({} train, {} validation), skipped: {}",
        summary.lists,
        summary.train_lists,
        summary.validation_lists,
        summary.skipped.len()
    )
    .map_err(out_err)?;
    writeln!(
        out,
        "features per candidate: {}",
        FeatureSchema::standard().len()
    )
    .map_err(out_err)?;
    Ok(summary)
}

fn load_split(config: &PipelineConfig, file: &str) -> Result<(FeatureSchema, Vec<RankingList>)> {
    let dir = config.dataset_dir();
    let schema = FeatureSchema::read(&dir.join(SCHEMA_FILE))?;
    let lists = read_lists(&dir.join(file))?;
    Ok((schema, lists))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub train_lists: usize,
    pub trees: usize,
    pub final_round: RoundLog,
}

/// Trains on the training split and saves the model plus a per-round log.
pub fn cmd_train(config: &PipelineConfig, out: &mut dyn Write) -> Result<TrainSummary> {
    let (schema, lists) = load_split(config, TRAIN_FILE)?;
    let outcome = train(&lists, &schema, &config.ranker_config())?;
    let model_path = config.model_path();
    let model_dir = model_path.parent().expect("model path has a parent");
    fs::create_dir_all(model_dir).map_err(|e| Error::io(model_dir, e))?;
    save_model(&outcome.model, &model_path)?;

    let log_path = model_dir.join(TRAIN_LOG_FILE);
    let mut log = csv::Writer::from_path(&log_path)
        .map_err(|e| Error::io(&log_path, std::io::Error::other(e.to_string())))?;
    for row in &outcome.rounds {
        log.serialize(row)
            .map_err(|e| Error::io(&log_path, std::io::Error::other(e.to_string())))?;
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let final_round = outcome.rounds.last().cloned().expect("at least one round");
    writeln!(
        out,
        "trained {} trees on {} lists; training NDCG@1 {:.4}, NDCG@5 {:.4}",
        outcome.model.trees.len(),
        lists.len(),
        final_round.ndcg_at_1,
        final_round.ndcg_at_5
    )
    .map_err(out_err)?;
    writeln!(out, "model: {}", model_path.display()).map_err(out_err)?;
    Ok(TrainSummary {
        seed: config.seed,
        train_lists: lists.len(),
        trees: outcome.model.trees.len(),
        final_round,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationSummary {
    pub seed: u64,
    pub list_count: usize,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub random_baseline: BTreeMap<usize, f64>,
    pub importance: ImportanceSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImportanceSummary {
    pub top: Vec<(String, f64)>,
    pub per_view_totals: BTreeMap<String, f64>,
    pub statistical_total: f64,
    pub semantic_total: f64,
    pub year_diff_gain: f64,
    pub total: f64,
}

impl ImportanceSummary {
    fn from_report(report: &ImportanceReport, rows: usize) -> Self {
        ImportanceSummary {
            top: report.per_feature.iter().take(rows).cloned().collect(),
            per_view_totals: report.per_view_totals.clone(),
            statistical_total: report.statistical_total,
            semantic_total: report.semantic_total,
            year_diff_gain: report.year_diff_gain,
            total: report.total,
        }
    }
}

fn print_importance(out: &mut dyn Write, summary: &ImportanceSummary) -> Result<()> {
    writeln!(
        out,
        "top {} features by cumulative split gain",
        summary.top.len()
    )
    .map_err(out_err)?;
    for (i, (name, gain)) in summary.top.iter().enumerate() {
        writeln!(out, "{:>3}  {name:<22} {gain:>12.3}", i + 1).map_err(out_err)?;
    }
    writeln!(out, "statistical total {:.3}", summary.statistical_total).map_err(out_err)?;
    writeln!(out, "semantic total    {:.3}", summary.semantic_total).map_err(out_err)?;
    writeln!(out, "year_diff         {:.3}", summary.year_diff_gain).map_err(out_err)?;
    for (view, total) in &summary.per_view_totals {
        writeln!(out, "  {view:<6} {total:.3}").map_err(out_err)?;
    }
    Ok(())
}

fn model_for(config: &PipelineConfig, model_path: Option<&Path>) -> Result<RankingModel> {
    load_model(&model_path.map_or_else(|| config.model_path(), Path::to_owned))
}

/// Scores the validation split (or `lists_path`) and reports NDCG, the
/// random baseline and the importance table.
pub fn cmd_evaluate(
    config: &PipelineConfig,
    model_path: Option<&Path>,
    lists_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<EvaluationSummary> {
    let model = model_for(config, model_path)?;
    let (schema, lists) = match lists_path {
        Some(path) => (
            FeatureSchema::read(&config.dataset_dir().join(SCHEMA_FILE))?,
            read_lists(path)?,
        ),
        None => load_split(config, VALIDATION_FILE)?,
    };
    model.check_schema(&schema)?;
    let report = evaluate_model(&model, &lists, &config.eval.ks)?;
    let baseline = random_baseline(
        &[4, 3, 2, 1, 0],
        config.eval.baseline_trials,
        &config.eval.ks,
        config.seed,
    );
    let importance = ImportanceSummary::from_report(&importance_report(&model), IMPORTANCE_ROWS);

    writeln!(out, "lists evaluated: {}", report.list_count).map_err(out_err)?;
    for (k, v) in &report.ndcg_at {
        writeln!(out, "NDCG@{k}: {v:.4} (random baseline {:.4})", baseline[k]).map_err(out_err)?;
    }
    print_importance(out, &importance)?;
    Ok(EvaluationSummary {
        seed: config.seed,
        list_count: report.list_count,
        ndcg_at: report.ndcg_at,
        random_baseline: baseline,
        importance,
    })
}

pub fn cmd_importance(
    config: &PipelineConfig,
    model_path: Option<&Path>,
    rows: usize,
    out: &mut dyn Write,
) -> Result<ImportanceSummary> {
    let model = model_for(config, model_path)?;
    let summary = ImportanceSummary::from_report(&importance_report(&model), rows);
    print_importance(out, &summary)?;
    Ok(summary)
}

/// A publication to recommend grants for.
#[derive(Debug, Clone)]
pub enum Query {
    /// A JSON file holding one publication record.
    File(PathBuf),
    Inline {
        title: String,
        abstract_text: String,
        year: i32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub grant_id: String,
    pub score: f64,
    pub title: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecommendSummary {
    pub seed: u64,
    pub retrieved: usize,
    pub recommendations: Vec<Recommendation>,
}

/// Retrieves candidates by tf-idf cosine on the full grant text, then
/// orders them by model score, ties by grant id.
pub fn cmd_recommend(
    config: &PipelineConfig,
    model_path: Option<&Path>,
    query: &Query,
    top_n: usize,
    out: &mut dyn Write,
) -> Result<RecommendSummary> {
    if top_n == 0 {
        return Err(Error::Usage("--top must be at least 1".into()));
    }
    let publication = match query {
        Query::File(path) => read_json::<PublicationRecord>(path)?,
        Query::Inline {
            title,
            abstract_text,
            year,
        } => PublicationRecord {
            pub_id: "query".into(),
            title: title.clone(),
            abstract_text: abstract_text.clone(),
            year: *year,
        },
    };
    let text = publication_description(&publication);
    let tokenizer = config.tokenizer()?;
    if tokenizer.tokenize(&text).is_empty() {
        return Err(Error::Usage(
            "the query has no usable title or abstract text".into(),
        ));
    }

    let model = model_for(config, model_path)?;
    model.check_schema(&FeatureSchema::standard())?;
    let bundle = CorpusBundle::read_from(&config.corpus_dir())?;
    let embeddings = config.embeddings()?;
    let index = CandidateIndex::build(&bundle, &tokenizer)?;
    let depth = (top_n.saturating_mul(10)).max(MIN_RETRIEVAL_DEPTH);
    let retrieved: Vec<String> = index
        .top_n(&text, depth)
        .into_iter()
        .map(|(id, _)| id.to_owned())
        .collect();

    let context = FeatureContext::new(&bundle, &embeddings, &tokenizer, config.features)?;
    let prepared = context.prepare(&publication);
    let rows = retrieved
        .iter()
        .map(|id| context.row(&prepared, id))
        .collect::<Result<Vec<_>>>()?;
    let scores = predict_scores(&model, &rows)?;
    let mut ranked: Vec<(&String, f64)> = retrieved.iter().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let recommendations: Vec<Recommendation> = ranked
        .into_iter()
        .take(top_n)
        .map(|(id, score)| Recommendation {
            grant_id: id.clone(),
            score,
            title: bundle.grants[id].title.clone(),
        })
        .collect();
    for (i, r) in recommendations.iter().enumerate() {
        writeln!(
            out,
            "{:>3}  {:<14} {:>10.4}  {}",
            i + 1,
            r.grant_id,
            r.score,
            r.title
        )
        .map_err(out_err)?;
    }
    Ok(RecommendSummary {
        seed: config.seed,
        retrieved: retrieved.len(),
        recommendations,
    })
}

/// Writes a synthetic corpus and embedding table to `dir`.
pub fn cmd_synth(config: &PipelineConfig, dir: &Path, out: &mut dyn Write) -> Result<SynthPaths> {
    let paths = write_synthetic(dir, &config.synth)?;
    writeln!(
        out,
        "synthetic corpus: {} grants, {} publications, {} topics in {}",
        config.synth.grants,
        config.synth.publications,
        config.synth.topics,
        dir.display()
    )
    .map_err(out_err)?;
    Ok(paths)
}

/// Writes `value` as pretty JSON to `path`, when a path was requested.
pub fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => Ok(()),
    }
}
