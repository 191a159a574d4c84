//! LambdaMART: LambdaRank gradients driving gradient-boosted regression
//! trees, with split-gain feature importance.

mod lambda;
mod tree;

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lambda::{compute_lambdas, LambdaStats};
pub use tree::{
    fit_tree, FeatureMatrix, Node, RegressionTree, TreeParams, HESSIAN_EPSILON, LEAF_CLIP,
};

use crate::dataset::{FeatureSchema, RankingList};
use crate::error::{Error, Result};
use crate::eval::ndcg_at_k;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerConfig {
    pub num_trees: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_samples_per_leaf: usize,
    pub sigma: f64,
    /// NDCG truncation used for the swap deltas.
    pub ndcg_k: usize,
    pub seed: u64,
    /// Share of features offered to each tree; 1 disables subsampling.
    pub feature_fraction: f64,
    /// Share of rows each tree is fitted on; 1 disables subsampling.
    pub row_fraction: f64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            num_trees: 100,
            learning_rate: 0.1,
            max_leaves: 31,
            min_samples_per_leaf: 20,
            sigma: 1.0,
            ndcg_k: 5,
            seed: 0,
            feature_fraction: 1.0,
            row_fraction: 1.0,
        }
    }
}

impl RankerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_owned()));
        if self.num_trees < 1 {
            return fail("num_trees must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return fail("learning_rate must lie in (0, 1]");
        }
        if self.max_leaves < 2 {
            return fail("max_leaves must be at least 2");
        }
        if self.min_samples_per_leaf < 1 {
            return fail("min_samples_per_leaf must be at least 1");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail("sigma must be positive");
        }
        if self.ndcg_k < 1 {
            return fail("ndcg_k must be at least 1");
        }
        for (name, f) in [
            ("feature_fraction", self.feature_fraction),
            ("row_fraction", self.row_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1]")));
            }
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_leaves: self.max_leaves,
            min_samples_per_leaf: self.min_samples_per_leaf,
        }
    }
}

/// A trained ensemble. Scores are `Σ learning_rate · tree(row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingModel {
    pub config: RankerConfig,
    pub learning_rate: f64,
    pub schema: FeatureSchema,
    pub trees: Vec<RegressionTree>,
    /// Total split gain per schema index.
    pub cumulative_gain: Vec<f64>,
}

impl RankingModel {
    /// A model with no trees, which scores every row 0.
    pub fn empty(schema: FeatureSchema, config: RankerConfig) -> Self {
        RankingModel {
            learning_rate: config.learning_rate,
            cumulative_gain: vec![0.0; schema.len()],
            config,
            schema,
            trees: Vec::new(),
        }
    }

    /// Appends a tree and folds its split gains into the importance totals.
    pub fn push_tree(&mut self, tree: RegressionTree) {
        for (feature, gain) in tree.splits() {
            self.cumulative_gain[feature] += gain;
        }
        self.trees.push(tree);
    }

    pub fn score_row(&self, row: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(0.0, |acc, t| acc + self.learning_rate * t.predict(row))
    }

    /// `(name, total gain)` sorted by descending gain; ties keep schema
    /// order.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .schema
            .names()
            .iter()
            .cloned()
            .zip(self.cumulative_gain.iter().copied())
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    pub fn check_schema(&self, expected: &FeatureSchema) -> Result<()> {
        if &self.schema == expected {
            return Ok(());
        }
        let first_diff = self
            .schema
            .names()
            .iter()
            .zip(expected.names())
            .position(|(a, b)| a != b);
        Err(Error::Schema(match first_diff {
            Some(i) => format!(
                "model feature {i} is {:?}, expected {:?}",
                self.schema.names()[i],
                expected.names()[i]
            ),
            None => format!(
                "model has {} features, expected {}",
                self.schema.len(),
                expected.len()
            ),
        }))
    }
}

pub fn predict_scores<R: AsRef<[f64]>>(model: &RankingModel, rows: &[R]) -> Result<Vec<f64>> {
    let width = model.schema.len();
    rows.iter()
        .map(|row| {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::Schema(format!(
                    "row has {} features, model expects {width}",
                    row.len()
                )));
            }
            Ok(model.score_row(row))
        })
        .collect()
}

/// Candidate indices by descending score, ties by ascending grant id.
pub fn order_by_score(scores: &[f64], list: &RankingList) -> Vec<usize> {
    let mut order: Vec<usize> = (0..list.candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then_with(|| {
            list.candidates[a]
                .grant_id
                .cmp(&list.candidates[b].grant_id)
        })
    });
    order
}

pub fn rank_candidates(model: &RankingModel, list: &RankingList) -> Result<Vec<usize>> {
    let scores = predict_scores(model, &list.features)?;
    Ok(order_by_score(&scores, list))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub ndcg_at_1: f64,
    pub ndcg_at_5: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RankingModel,
    /// Training-set NDCG after each boosting round.
    pub rounds: Vec<RoundLog>,
}

/// Trains from zero scores: every round computes lambdas per list, fits one
/// tree on all rows pooled, and adds `learning_rate ×` its output.
pub fn train(
    lists: &[RankingList],
    schema: &FeatureSchema,
    config: &RankerConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if lists.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    for list in lists {
        list.validate(schema.len())?;
    }

    let mut offsets = Vec::with_capacity(lists.len() + 1);
    let mut rows: Vec<&[f64]> = Vec::new();
    for list in lists {
        offsets.push(rows.len());
        rows.extend(list.features.iter().map(Vec::as_slice));
    }
    offsets.push(rows.len());
    let gains: Vec<Vec<u32>> = lists.iter().map(RankingList::gains).collect();
    let matrix = FeatureMatrix::from_rows(&rows);
    let n_rows = rows.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = RankingModel::empty(schema.clone(), config.clone());
    let mut scores = vec![0.0f64; n_rows];
    let mut log = Vec::with_capacity(config.num_trees);

    for round in 1..=config.num_trees {
        let stats: Vec<LambdaStats> = (0..lists.len())
            .into_par_iter()
            .map(|l| {
                let range = offsets[l]..offsets[l + 1];
                compute_lambdas(&scores[range], &gains[l], config.sigma, config.ndcg_k)
            })
            .collect();
        let mut gradients = Vec::with_capacity(n_rows);
        let mut hessians = Vec::with_capacity(n_rows);
        for s in &stats {
            gradients.extend(s.lambdas.iter().map(|l| -l));
            hessians.extend_from_slice(&s.hessians);
        }

        let include = row_mask(n_rows, config.row_fraction, &mut rng);
        let features = feature_subset(schema.len(), config.feature_fraction, &mut rng);
        let tree = tree::fit_tree_on(
            &matrix,
            &include,
            &features,
            &gradients,
            &hessians,
            config.tree_params(),
        );

        for (score, row) in scores.iter_mut().zip(&rows) {
            *score += config.learning_rate * tree.predict(row);
        }
        model.push_tree(tree);
        log.push(training_ndcg(round, lists, &offsets, &scores)?);
    }

    Ok(TrainOutcome { model, rounds: log })
}

fn row_mask(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    if fraction >= 1.0 {
        return vec![true; n];
    }
    let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
    let mut mask = vec![false; n];
    for i in sample(rng, n, take) {
        mask[i] = true;
    }
    mask
}

fn feature_subset(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n).collect();
    }
    let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
    let mut features = sample(rng, n, take).into_vec();
    features.sort_unstable();
    features
}

fn training_ndcg(
    round: usize,
    lists: &[RankingList],
    offsets: &[usize],
    scores: &[f64],
) -> Result<RoundLog> {
    let mut at1 = 0.0;
    let mut at5 = 0.0;
    for (l, list) in lists.iter().enumerate() {
        let order = order_by_score(&scores[offsets[l]..offsets[l + 1]], list);
        let predicted: Vec<u32> = order.iter().map(|&i| list.candidates[i].gain).collect();
        let ideal = list.ideal_gains();
        at1 += ndcg_at_k(&predicted, &ideal, 1)?;
        at5 += ndcg_at_k(&predicted, &ideal, 5)?;
    }
    let n = lists.len() as f64;
    Ok(RoundLog {
        round,
        ndcg_at_1: at1 / n,
        ndcg_at_5: at5 / n,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    config: RankerConfig,
    learning_rate: f64,
    schema: Vec<String>,
    trees: Vec<Vec<Node>>,
    cumulative_gain: Vec<f64>,
}

pub fn model_to_json(model: &RankingModel) -> String {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        config: model.config.clone(),
        learning_rate: model.learning_rate,
        schema: model.schema.names().to_vec(),
        trees: model.trees.iter().map(|t| t.nodes().to_vec()).collect(),
        cumulative_gain: model.cumulative_gain.clone(),
    };
    serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
}

pub fn model_from_json(text: &str) -> Result<RankingModel> {
    let bad = |msg: String| Error::ModelFormat(msg);
    let probe: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    match probe
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
    {
        Some(v) if v == u64::from(MODEL_FORMAT_VERSION) => {}
        Some(v) => return Err(bad(format!("unsupported format_version {v}"))),
        None => return Err(bad("missing format_version".into())),
    }
    let file: ModelFile = serde_json::from_value(probe).map_err(|e| bad(e.to_string()))?;
    let schema = FeatureSchema::new(file.schema).map_err(|e| bad(e.to_string()))?;
    if file.cumulative_gain.len() != schema.len() {
        return Err(bad(format!(
            "cumulative_gain has {} entries for {} features",
            file.cumulative_gain.len(),
            schema.len()
        )));
    }
    let mut model = RankingModel::empty(schema, file.config);
    model.learning_rate = file.learning_rate;
    for (i, nodes) in file.trees.into_iter().enumerate() {
        let tree = RegressionTree::from_nodes(nodes, model.schema.len())
            .map_err(|e| bad(format!("tree {i}: {e}")))?;
        model.push_tree(tree);
    }
    if model.cumulative_gain != file.cumulative_gain {
        return Err(bad(
            "cumulative_gain does not match the trees' split gains".into()
        ));
    }
    Ok(model)
}

pub fn save_model(model: &RankingModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<RankingModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
