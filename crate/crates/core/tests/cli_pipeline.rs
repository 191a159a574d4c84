use std::fs;
use std::path::Path;
use std::process::Command;

use grantrank::cli::{self, PipelineConfig, Query};
use grantrank::corpus::{CorpusBundle, FundingLink, GrantRecord, PublicationRecord};
use grantrank::dataset::{FeatureContext, FeatureSchema, RankedCandidate, RankingList};
use grantrank::ranker::{rank_candidates, save_model, RankerConfig, RankingModel};
use grantrank::semfeat::load_embeddings;
use grantrank::synth::SynthConfig;
use grantrank::Error;

fn small_config(root: &Path) -> PipelineConfig {
    let mut config = PipelineConfig {
        synth: SynthConfig {
            grants: 20,
            publications: 50,
            topics: 4,
            ..SynthConfig::default()
        },
        ranker: RankerConfig {
            num_trees: 5,
            min_samples_per_leaf: 5,
            ..RankerConfig::default()
        },
        ..PipelineConfig::default()
    };
    config.paths.workdir = root.join("work");
    config
}

/// Synthesizes a small corpus and runs ingest, dataset and train.
fn trained(root: &Path) -> PipelineConfig {
    let mut config = small_config(root);
    let paths = cli::cmd_synth(&config, &root.join("synth"), &mut Vec::new()).unwrap();
    config.paths.grants = Some(paths.grants);
    config.paths.publications = Some(paths.publications);
    config.paths.links = Some(paths.links);
    config.paths.embeddings = Some(paths.embeddings);
    cli::cmd_ingest(&config, &mut Vec::new()).unwrap();
    cli::cmd_dataset(&config, &mut Vec::new()).unwrap();
    cli::cmd_train(&config, &mut Vec::new()).unwrap();
    config
}

#[test]
fn pipeline_outputs_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let config = trained(dir.path());
    let log =
        fs::read_to_string(config.paths.workdir.join("model").join(cli::TRAIN_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1 + 5);
    assert!(log.starts_with("round,ndcg_at_1,ndcg_at_5\n"));

    let mut out = Vec::new();
    let report = cli::cmd_evaluate(&config, None, None, &mut out).unwrap();
    assert!(report.importance.top.len() <= cli::IMPORTANCE_ROWS);
    assert!(report.importance.top.windows(2).all(|w| w[0].1 >= w[1].1));
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("NDCG@1") && text.contains("NDCG@5"));
}

#[test]
fn dataset_counts_one_list_per_link() {
    let dir = tempfile::tempdir().unwrap();
    let config = trained(dir.path());
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(config.dataset_dir().join(cli::SUMMARY_FILE)).unwrap(),
    )
    .unwrap();
    let links = CorpusBundle::read_from(&config.corpus_dir())
        .unwrap()
        .links
        .len();
    assert_eq!(summary["lists"].as_u64().unwrap() as usize, links);
    assert_eq!(summary["seed"], 0);
}

fn grant(id: &str, text: &str) -> GrantRecord {
    GrantRecord {
        grant_id: id.into(),
        agency_name: String::new(),
        agency_description: String::new(),
        title: text.into(),
        abstract_text: String::new(),
        fiscal_year: 2010,
        subproject_id: None,
    }
}

#[test]
fn four_grant_corpus_yields_no_lists() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    let grants = [
        "gene therapy",
        "tumor cells",
        "brain imaging",
        "virus entry",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| grant(&format!("G{i}"), t));
    let pubs = (0..4).map(|i| PublicationRecord {
        pub_id: format!("P{i}"),
        title: "gene tumor brain virus".into(),
        abstract_text: String::new(),
        year: 2011,
    });
    let links = (0..4).map(|i| FundingLink::new(format!("G{i}"), format!("P{i}")));
    CorpusBundle::from_parts(grants, pubs, links)
        .write_to(&config.corpus_dir())
        .unwrap();
    let emb = dir.path().join("emb.txt");
    fs::write(&emb, "gene 1 0\ntumor 0 1\n").unwrap();
    config.paths.embeddings = Some(emb);
    match cli::cmd_dataset(&config, &mut Vec::new()) {
        Err(Error::EmptyCorpus(msg)) => {
            assert!(msg.contains("all 4 funding links skipped"), "{msg}")
        }
        other => panic!("expected an empty-corpus error, got {other:?}"),
    }
}

#[test]
fn ingest_of_only_subgrants_is_an_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    let mut g = grant("G1", "gene therapy");
    g.subproject_id = Some("S1".into());
    let raw = dir.path().join("raw");
    CorpusBundle::from_parts(
        [g],
        [PublicationRecord {
            pub_id: "P1".into(),
            title: "gene".into(),
            abstract_text: String::new(),
            year: 2010,
        }],
        [FundingLink::new("G1", "P1")],
    )
    .write_to(&raw)
    .unwrap();
    config.paths.grants = Some(raw.join("grants.jsonl"));
    config.paths.publications = Some(raw.join("publications.jsonl"));
    config.paths.links = Some(raw.join("links.csv"));
    assert!(matches!(
        cli::cmd_ingest(&config, &mut Vec::new()),
        Err(Error::EmptyCorpus(_))
    ));
}

#[test]
fn evaluate_rejects_a_model_with_another_schema() {
    let dir = tempfile::tempdir().unwrap();
    let config = trained(dir.path());
    let other = FeatureSchema::new(vec!["a".into(), "b".into()]).unwrap();
    let path = dir.path().join("other.json");
    save_model(&RankingModel::empty(other, RankerConfig::default()), &path).unwrap();
    assert!(matches!(
        cli::cmd_evaluate(&config, Some(&path), None, &mut Vec::new()),
        Err(Error::Schema(_))
    ));
}

#[test]
fn recommend_matches_library_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let config = trained(dir.path());
    let bundle = CorpusBundle::read_from(&config.corpus_dir()).unwrap();
    let target = bundle.grants.values().next().unwrap();
    let query = Query::Inline {
        title: String::new(),
        abstract_text: target.abstract_text.clone(),
        year: target.fiscal_year,
    };
    let result = cli::cmd_recommend(&config, None, &query, 1000, &mut Vec::new()).unwrap();
    assert_eq!(result.recommendations.len(), bundle.grants.len());
    assert!(result
        .recommendations
        .iter()
        .any(|r| r.grant_id == target.grant_id));

    let model = grantrank::ranker::load_model(&config.model_path()).unwrap();
    let embeddings = load_embeddings(config.paths.embeddings.as_ref().unwrap()).unwrap();
    let tokenizer = config.tokenizer().unwrap();
    let context = FeatureContext::new(&bundle, &embeddings, &tokenizer, config.features).unwrap();
    let publication = PublicationRecord {
        pub_id: "query".into(),
        title: String::new(),
        abstract_text: target.abstract_text.clone(),
        year: target.fiscal_year,
    };
    let prepared = context.prepare(&publication);
    let ids: Vec<&String> = bundle.grants.keys().collect();
    let list = RankingList {
        pub_id: "query".into(),
        candidates: ids
            .iter()
            .map(|id| RankedCandidate::new(id.as_str(), 0))
            .collect(),
        features: ids
            .iter()
            .map(|id| context.row(&prepared, id).unwrap())
            .collect(),
    };
    let order: Vec<&str> = rank_candidates(&model, &list)
        .unwrap()
        .into_iter()
        .map(|i| list.candidates[i].grant_id.as_str())
        .collect();
    let got: Vec<&str> = result
        .recommendations
        .iter()
        .map(|r| r.grant_id.as_str())
        .collect();
    assert_eq!(got, order);
}

#[test]
fn recommend_rejects_an_empty_query() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let query = Query::Inline {
        title: "  ".into(),
        abstract_text: "a ; -".into(),
        year: 2000,
    };
    assert!(matches!(
        cli::cmd_recommend(&config, None, &query, 5, &mut Vec::new()),
        Err(Error::Usage(_))
    ));
}

#[test]
fn binary_reports_missing_inputs_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let grants = dir.path().join("grants.jsonl");
    fs::write(&grants, "").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_grantrank"))
        .args([
            "--workdir",
            dir.path().join("w").to_str().unwrap(),
            "ingest",
            "--grants",
        ])
        .arg(&grants)
        .arg("--publications")
        .arg(&grants)
        .arg("--links")
        .arg(dir.path().join("missing_links.csv"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("missing_links.csv"), "{stderr}");
}

#[test]
fn binary_runs_synth_and_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_grantrank");
    let work = dir.path().join("w");
    let config = dir.path().join("config.toml");
    fs::write(
        &config,
        format!(
            "[paths]\nworkdir = {work:?}\ngrants = {g:?}\npublications = {p:?}\nlinks = {l:?}\n\
             [synth]\ngrants = 20\npublications = 50\ntopics = 4\n",
            g = work.join("synth/grants.jsonl"),
            p = work.join("synth/publications.jsonl"),
            l = work.join("synth/links.csv"),
        ),
    )
    .unwrap();
    for cmd in ["synth", "ingest"] {
        let status = Command::new(bin)
            .arg("--config")
            .arg(&config)
            .arg(cmd)
            .status()
            .unwrap();
        assert!(status.success(), "{cmd}");
    }
    let stats: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(work.join("corpus").join(cli::STATS_FILE)).unwrap(),
    )
    .unwrap();
    assert_eq!(stats["filtered"]["grants"], 20);
}
