//! NDCG@k and the evaluation / feature-importance reports.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{RankingList, SEMANTIC_SUFFIX, YEAR_DIFF_FEATURE};
use crate::error::{Error, Result};
use crate::ranker::{rank_candidates, RankingModel};

/// Exponential-gain DCG truncated at `k`.
pub fn dcg_at_k(gains_in_order: &[u32], k: usize) -> f64 {
    gains_in_order
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG of `predicted` over the DCG of the ideal (descending) arrangement of
/// the same gains. A list whose ideal DCG is 0 scores 1.
pub fn ndcg_at_k(predicted: &[u32], ideal: &[u32], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Evaluation("k must be at least 1".into()));
    }
    let mut a = predicted.to_vec();
    let mut ideal_sorted = ideal.to_vec();
    a.sort_unstable();
    ideal_sorted.sort_unstable();
    if a != ideal_sorted {
        return Err(Error::Evaluation(format!(
            "predicted gains {predicted:?} are not a permutation of ideal gains {ideal:?}"
        )));
    }
    ideal_sorted.reverse();
    Ok(ndcg_unchecked(predicted, &ideal_sorted, k))
}

/// `ideal_desc` must already be sorted in descending order.
pub(crate) fn ndcg_unchecked(predicted: &[u32], ideal_desc: &[u32], k: usize) -> f64 {
    let ideal = dcg_at_k(ideal_desc, k);
    if ideal == 0.0 {
        return 1.0;
    }
    dcg_at_k(predicted, k) / ideal
}

/// NDCG@k of a scored list: items ordered by descending score, ties by
/// position.
pub fn ndcg_of_scores(scores: &[f64], gains: &[u32], k: usize) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let predicted: Vec<u32> = order.iter().map(|&i| gains[i]).collect();
    let mut ideal = gains.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    ndcg_unchecked(&predicted, &ideal, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListEval {
    pub pub_id: String,
    /// Grant ids in model order.
    pub ranked: Vec<String>,
    pub ndcg_at: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean NDCG over lists, keyed by k.
    pub ndcg_at: BTreeMap<usize, f64>,
    pub list_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_list: Option<Vec<ListEval>>,
}

impl EvalReport {
    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.ndcg_at.get(&k).copied()
    }
}

/// Mean NDCG@k of the model's ordering over `lists`.
pub fn evaluate_model(
    model: &RankingModel,
    lists: &[RankingList],
    ks: &[usize],
) -> Result<EvalReport> {
    let mut per_list = Vec::with_capacity(lists.len());
    for list in lists {
        let order = rank_candidates(model, list)?;
        per_list.push(order);
    }
    summarize(lists, per_list, ks)
}

/// Same as [`evaluate_model`] for an arbitrary per-row scoring function.
pub fn evaluate_with<F>(lists: &[RankingList], ks: &[usize], mut score: F) -> Result<EvalReport>
where
    F: FnMut(&[f64]) -> f64,
{
    let orders = lists
        .iter()
        .map(|list| {
            let scores: Vec<f64> = list.features.iter().map(|row| score(row)).collect();
            crate::ranker::order_by_score(&scores, list)
        })
        .collect();
    summarize(lists, orders, ks)
}

fn summarize(lists: &[RankingList], orders: Vec<Vec<usize>>, ks: &[usize]) -> Result<EvalReport> {
    if lists.is_empty() {
        return Err(Error::Evaluation("no ranking lists to evaluate".into()));
    }
    if ks.contains(&0) {
        return Err(Error::Evaluation("k must be at least 1".into()));
    }
    let mut totals: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut details = Vec::with_capacity(lists.len());
    for (list, order) in lists.iter().zip(orders) {
        let predicted: Vec<u32> = order.iter().map(|&i| list.candidates[i].gain).collect();
        let ideal = list.ideal_gains();
        let mut ndcg_at = BTreeMap::new();
        for (&k, total) in totals.iter_mut() {
            let v = ndcg_at_k(&predicted, &ideal, k)?;
            *total += v;
            ndcg_at.insert(k, v);
        }
        details.push(ListEval {
            pub_id: list.pub_id.clone(),
            ranked: order
                .iter()
                .map(|&i| list.candidates[i].grant_id.clone())
                .collect(),
            ndcg_at,
        });
    }
    let n = lists.len() as f64;
    Ok(EvalReport {
        ndcg_at: totals.into_iter().map(|(k, t)| (k, t / n)).collect(),
        list_count: lists.len(),
        per_list: Some(details),
    })
}

/// Monte Carlo mean NDCG@k of a scorer that orders each list uniformly at
/// random.
pub fn random_baseline(
    gains: &[u32],
    trials: usize,
    ks: &[usize],
    seed: u64,
) -> BTreeMap<usize, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ideal = gains.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let mut totals: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut order = gains.to_vec();
    for _ in 0..trials {
        order.shuffle(&mut rng);
        for (&k, total) in totals.iter_mut() {
            *total += ndcg_unchecked(&order, &ideal, k);
        }
    }
    totals
        .into_iter()
        .map(|(k, t)| (k, t / trials.max(1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Descending by gain, zero-gain features last.
    pub per_feature: Vec<(String, f64)>,
    /// Keyed by view prefix (`APP_1` .. `APP_4`).
    pub per_view_totals: BTreeMap<String, f64>,
    pub statistical_total: f64,
    pub semantic_total: f64,
    pub year_diff_gain: f64,
    /// Features outside the view and year groups; 0 for the standard schema.
    pub other_total: f64,
    pub total: f64,
}

pub fn importance_report(model: &RankingModel) -> ImportanceReport {
    let mut per_view_totals: BTreeMap<String, f64> = BTreeMap::new();
    let mut statistical_total = 0.0;
    let mut semantic_total = 0.0;
    let mut year_diff_gain = 0.0;
    let mut other_total = 0.0;
    for (name, &gain) in model.schema.names().iter().zip(&model.cumulative_gain) {
        match feature_group(name) {
            FeatureGroup::Statistical { view } => {
                *per_view_totals.entry(view).or_default() += gain;
                statistical_total += gain;
            }
            FeatureGroup::Semantic { view } => {
                *per_view_totals.entry(view).or_default() += gain;
                semantic_total += gain;
            }
            FeatureGroup::YearDiff => year_diff_gain += gain,
            FeatureGroup::Other => other_total += gain,
        }
    }
    ImportanceReport {
        per_feature: model.feature_importance(),
        per_view_totals,
        statistical_total,
        semantic_total,
        year_diff_gain,
        other_total,
        total: model.cumulative_gain.iter().sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureGroup {
    Statistical { view: String },
    Semantic { view: String },
    YearDiff,
    Other,
}

/// Classifies a schema name: `APP_v/semantic`, `APP_v/Feature_i`,
/// `year_diff`, or anything else.
pub fn feature_group(name: &str) -> FeatureGroup {
    if name == YEAR_DIFF_FEATURE {
        return FeatureGroup::YearDiff;
    }
    match name.split_once('/') {
        Some((view, rest)) if view.starts_with("APP_") => {
            let view = view.to_owned();
            if rest == SEMANTIC_SUFFIX {
                FeatureGroup::Semantic { view }
            } else {
                FeatureGroup::Statistical { view }
            }
        }
        _ => FeatureGroup::Other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RankedCandidate;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Brute-force normaliser: the best DCG over every ordering.
    fn brute_force_ndcg(predicted: &[u32], k: usize) -> f64 {
        fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
            if items.len() <= 1 {
                return vec![items.to_vec()];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.to_vec();
                let head = rest.remove(i);
                for mut tail in permutations(&rest) {
                    tail.insert(0, head);
                    out.push(tail);
                }
            }
            out
        }
        let best = permutations(predicted)
            .iter()
            .map(|p| {
                p.iter()
                    .take(k)
                    .enumerate()
                    .map(|(i, &g)| {
                        (2f64.powf(f64::from(g)) - 1.0) / (i as f64 + 2.0).ln()
                            * std::f64::consts::LN_2
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        let own: f64 = predicted
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| {
                (2f64.powf(f64::from(g)) - 1.0) / (i as f64 + 2.0).ln() * std::f64::consts::LN_2
            })
            .sum();
        if best == 0.0 {
            1.0
        } else {
            own / best
        }
    }

    #[test]
    fn dcg_examples() {
        assert_eq!(dcg_at_k(&[4], 1), 15.0);
        assert_eq!(dcg_at_k(&[0, 0, 0], 3), 0.0);
        assert!(close(dcg_at_k(&[0, 3], 2), 4.416508, 1e-6));
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(
            ndcg_at_k(&[4, 3, 2, 1, 0], &[4, 3, 2, 1, 0], 5).unwrap(),
            1.0
        );
        assert!(close(
            ndcg_at_k(&[0, 3], &[3, 0], 2).unwrap(),
            0.630930,
            1e-6
        ));
        assert_eq!(
            ndcg_at_k(&[4, 0, 1, 3, 2], &[4, 3, 2, 1, 0], 1).unwrap(),
            1.0
        );
        assert_eq!(ndcg_at_k(&[0, 0], &[0, 0], 2).unwrap(), 1.0);
        assert!(matches!(
            ndcg_at_k(&[1, 2], &[2, 2], 2),
            Err(Error::Evaluation(_))
        ));
    }

    fn list(id: &str, gains: [u32; 5]) -> RankingList {
        RankingList {
            pub_id: id.into(),
            candidates: gains
                .iter()
                .enumerate()
                .map(|(i, &g)| RankedCandidate::new(format!("G{i}"), g))
                .collect(),
            features: gains.iter().map(|&g| vec![f64::from(g)]).collect(),
        }
    }

    #[test]
    fn oracle_and_anti_oracle() {
        let lists = vec![list("P1", [0, 4, 2, 3, 1]), list("P2", [4, 3, 2, 1, 0])];
        let oracle = evaluate_with(&lists, &[1, 5], |row| row[0]).unwrap();
        assert_eq!(oracle.ndcg(1), Some(1.0));
        assert_eq!(oracle.ndcg(5), Some(1.0));
        let anti = evaluate_with(&lists, &[1, 5], |row| -row[0]).unwrap();
        assert_eq!(anti.ndcg(1), Some(0.0));
        assert!(evaluate_with(&[], &[1], |row| row[0]).is_err());
    }

    #[test]
    fn random_baseline_lies_between_anti_oracle_and_one() {
        let gains = [4, 3, 2, 1, 0];
        let base = random_baseline(&gains, 10_000, &[1, 5], 7);
        let anti5 = ndcg_at_k(&[0, 1, 2, 3, 4], &gains, 5).unwrap();
        assert!(base[&1] > 0.0 && base[&1] < 1.0);
        assert!(base[&5] > anti5 && base[&5] < 1.0);
        // E[NDCG@1] = mean(2^g - 1) / 15 = 26 / 75.
        assert!(close(base[&1], 26.0 / 75.0, 0.01), "{}", base[&1]);
    }

    #[test]
    fn ndcg_of_scores_breaks_ties_by_position() {
        assert_eq!(ndcg_of_scores(&[0.0, 0.0], &[1, 0], 1), 1.0);
        assert_eq!(ndcg_of_scores(&[0.0, 0.0], &[0, 1], 1), 0.0);
    }

    proptest! {
        #[test]
        fn matches_brute_force_on_five_items(gains in prop::array::uniform5(0u32..5), k in 1usize..6) {
            let mut ideal = gains.to_vec();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let fast = ndcg_at_k(&gains, &ideal, k).unwrap();
            prop_assert!((fast - brute_force_ndcg(&gains, k)).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&fast));
        }

        #[test]
        fn permuting_below_k_does_not_matter(gains in prop::collection::vec(0u32..5, 2..9), k in 1usize..8) {
            let mut ideal = gains.clone();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let mut tail_reversed = gains.clone();
            if k < gains.len() {
                tail_reversed[k..].reverse();
            }
            prop_assert_eq!(
                ndcg_at_k(&gains, &ideal, k).unwrap(),
                ndcg_at_k(&tail_reversed, &ideal, k).unwrap()
            );
        }

        #[test]
        fn perfect_iff_sorted_in_top_k(gains in prop::collection::vec(0u32..5, 1..8), k in 1usize..8) {
            let mut ideal = gains.clone();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let v = ndcg_at_k(&gains, &ideal, k).unwrap();
            let top = k.min(gains.len());
            let top_is_ideal = gains[..top] == ideal[..top];
            prop_assert_eq!(v == 1.0 || (v - 1.0).abs() < 1e-12, top_is_ideal || ideal.iter().all(|&g| g == 0));
        }
    }
}
