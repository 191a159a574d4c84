//! Training-data construction: grant-description views, five-candidate
//! ranking lists and the 129-wide feature rows.
//!
//! Each list belongs to one funding link. Candidate 1 is the funding grant
//! (gain 4), candidate 2 the grant nearest to the publication in tf-idf
//! space among the non-funders (gain 3), and candidates 3-5 sit at the
//! 25th, 50th and 75th distance percentiles of the remaining non-funders
//! (gains 2, 1, 0).

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, CorpusBundle, GrantRecord, PublicationRecord};
use crate::error::{Error, Result};
use crate::semfeat::{embed_document, EmbeddingTable};
use crate::statfeat::{extract_stat_features_with, StatParams, STAT_FEATURE_COUNT};
use crate::textproc::{cosine_dense, tfidf_vector, SparseVector, TermBag, Tokenizer, Vocabulary};

pub const VIEW_COUNT: usize = 4;
pub const LIST_SIZE: usize = 5;
pub const FEATURE_COUNT: usize = VIEW_COUNT * STAT_FEATURE_COUNT + VIEW_COUNT + 1;
pub const SEMANTIC_SUFFIX: &str = "semantic";
pub const YEAR_DIFF_FEATURE: &str = "year_diff";
/// Smallest non-funder pool that still yields ranks 2-5.
pub const MIN_CANDIDATE_POOL: usize = 4;

/// Ordered feature names. Model files store the schema they were trained
/// on, so the standard order must never change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    /// `APP_v/Feature_i` for the four views, then `APP_v/semantic`, then
    /// `year_diff`.
    pub fn standard() -> Self {
        let mut names = Vec::with_capacity(FEATURE_COUNT);
        for view in 1..=VIEW_COUNT {
            for i in 1..=STAT_FEATURE_COUNT {
                names.push(format!("APP_{view}/Feature_{i}"));
            }
        }
        for view in 1..=VIEW_COUNT {
            names.push(format!("APP_{view}/{SEMANTIC_SUFFIX}"));
        }
        names.push(YEAR_DIFF_FEATURE.to_owned());
        FeatureSchema { names }
    }

    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {n:?}")));
            }
        }
        if names.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        Ok(FeatureSchema { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("schema serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let names: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        FeatureSchema::new(names)
    }
}

/// Title and abstract joined by a single space; an empty part adds no
/// separator.
pub fn publication_description(publication: &PublicationRecord) -> String {
    join_nonempty(&[&publication.title, &publication.abstract_text])
}

fn join_nonempty(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// The four texts a grant is scored through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrantViews {
    pub agency: String,
    pub title: String,
    pub abstract_text: String,
    pub union: String,
}

impl GrantViews {
    pub fn texts(&self) -> [&str; VIEW_COUNT] {
        [&self.agency, &self.title, &self.abstract_text, &self.union]
    }
}

pub fn grant_views(grant: &GrantRecord) -> GrantViews {
    let agency = join_nonempty(&[&grant.agency_name, &grant.agency_description]);
    let union = join_nonempty(&[&agency, &grant.title, &grant.abstract_text]);
    GrantViews {
        agency,
        title: grant.title.trim().to_owned(),
        abstract_text: grant.abstract_text.trim().to_owned(),
        union,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CandidateRepr", into = "CandidateRepr")]
pub struct RankedCandidate {
    pub grant_id: String,
    /// 1 (funder) to 5 (75th distance percentile).
    pub rank_label: u32,
    /// `5 - rank_label`.
    pub gain: u32,
}

impl RankedCandidate {
    /// Panics unless `gain` is in 0..=4.
    pub fn new(grant_id: impl Into<String>, gain: u32) -> Self {
        assert!(gain < LIST_SIZE as u32, "gain {gain} out of range");
        RankedCandidate {
            grant_id: grant_id.into(),
            rank_label: LIST_SIZE as u32 - gain,
            gain,
        }
    }

    pub fn with_rank(grant_id: impl Into<String>, rank_label: u32) -> Self {
        Self::new(grant_id, LIST_SIZE as u32 - rank_label)
    }
}

#[derive(Serialize, Deserialize)]
struct CandidateRepr {
    grant_id: String,
    gain: u32,
}

impl TryFrom<CandidateRepr> for RankedCandidate {
    type Error = String;

    fn try_from(r: CandidateRepr) -> std::result::Result<Self, String> {
        if r.gain >= LIST_SIZE as u32 {
            return Err(format!("gain {} out of range 0..=4", r.gain));
        }
        Ok(RankedCandidate::new(r.grant_id, r.gain))
    }
}

impl From<RankedCandidate> for CandidateRepr {
    fn from(c: RankedCandidate) -> Self {
        CandidateRepr {
            grant_id: c.grant_id,
            gain: c.gain,
        }
    }
}

/// One publication with its labelled candidates and aligned feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingList {
    pub pub_id: String,
    pub candidates: Vec<RankedCandidate>,
    pub features: Vec<Vec<f64>>,
}

impl RankingList {
    /// Gains sorted in descending order.
    pub fn ideal_gains(&self) -> Vec<u32> {
        let mut gains: Vec<u32> = self.candidates.iter().map(|c| c.gain).collect();
        gains.sort_unstable_by(|a, b| b.cmp(a));
        gains
    }

    pub fn gains(&self) -> Vec<u32> {
        self.candidates.iter().map(|c| c.gain).collect()
    }

    /// Grant id of the gain-4 candidate.
    pub fn funder(&self) -> Option<&str> {
        self.candidates
            .iter()
            .find(|c| c.rank_label == 1)
            .map(|c| c.grant_id.as_str())
    }

    /// Checks row alignment, row width and finiteness.
    pub fn validate(&self, width: usize) -> Result<()> {
        if self.features.len() != self.candidates.len() {
            return Err(Error::Schema(format!(
                "list {}: {} feature rows for {} candidates",
                self.pub_id,
                self.features.len(),
                self.candidates.len()
            )));
        }
        for row in &self.features {
            if row.len() != width {
                return Err(Error::Schema(format!(
                    "list {}: feature row has {} values, schema has {width}",
                    self.pub_id,
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "list {}: non-finite feature",
                    self.pub_id
                )));
            }
        }
        Ok(())
    }
}

/// tf-idf vectors of every grant's union view, used to pick negatives and
/// to retrieve candidates for ad-hoc queries.
#[derive(Debug, Clone)]
pub struct CandidateIndex {
    tokenizer: Tokenizer,
    vocab: Vocabulary,
    /// Sorted by grant id.
    grants: Vec<(String, SparseVector)>,
}

impl CandidateIndex {
    pub fn build(bundle: &CorpusBundle, tokenizer: &Tokenizer) -> Result<Self> {
        let bags: Vec<TermBag> = bundle
            .grants
            .values()
            .map(|g| tokenizer.bag(&grant_views(g).union))
            .collect();
        let vocab = Vocabulary::build(&bags)?;
        let grants = bundle
            .grants
            .keys()
            .zip(&bags)
            .map(|(id, bag)| (id.clone(), tfidf_vector(bag, &vocab)))
            .collect();
        Ok(CandidateIndex {
            tokenizer: tokenizer.clone(),
            vocab,
            grants,
        })
    }

    pub fn len(&self) -> usize {
        self.grants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grants.is_empty()
    }

    pub fn query_vector(&self, text: &str) -> SparseVector {
        tfidf_vector(&self.tokenizer.bag(text), &self.vocab)
    }

    /// Cosine similarity of `query` to every grant, in grant-id order.
    pub fn similarities(&self, query: &SparseVector) -> Vec<(&str, f64)> {
        self.grants
            .iter()
            .map(|(id, v)| (id.as_str(), query.cosine(v)))
            .collect()
    }

    /// The `n` most similar grants, ties by ascending grant id.
    pub fn top_n(&self, text: &str, n: usize) -> Vec<(&str, f64)> {
        let mut sims = self.similarities(&self.query_vector(text));
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        sims.truncate(n);
        sims
    }
}

/// Picks ranks 2-5 from `(grant_id, distance)` pairs of non-funders.
/// Requires at least [`MIN_CANDIDATE_POOL`] entries.
pub fn select_negatives(mut pool: Vec<(&str, f64)>) -> Option<[&str; 4]> {
    if pool.len() < MIN_CANDIDATE_POOL {
        return None;
    }
    pool.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let nearest = pool[0].0;
    let rest = &pool[1..];
    let n = rest.len() as f64;
    let at = |q: f64| rest[(q * n).ceil() as usize - 1].0;
    Some([nearest, at(0.25), at(0.5), at(0.75)])
}

/// Labels for one (publication, funding grant) pair; features are left
/// empty. Every grant linked to the publication is excluded from the
/// negatives.
pub fn build_candidate_list(
    publication: &PublicationRecord,
    true_grant_id: &str,
    bundle: &CorpusBundle,
    index: &CandidateIndex,
) -> Result<RankingList> {
    let funders: Vec<&str> = bundle
        .links
        .iter()
        .filter(|l| l.pub_id == publication.pub_id)
        .map(|l| l.grant_id.as_str())
        .collect();
    if !funders.contains(&true_grant_id) {
        return Err(Error::Usage(format!(
            "grant {true_grant_id} does not fund publication {}",
            publication.pub_id
        )));
    }
    let query = index.query_vector(&publication_description(publication));
    candidates_for(publication, true_grant_id, &funders, index, &query)
}

fn candidates_for(
    publication: &PublicationRecord,
    true_grant_id: &str,
    funders: &[&str],
    index: &CandidateIndex,
    query: &SparseVector,
) -> Result<RankingList> {
    let pool: Vec<(&str, f64)> = index
        .similarities(query)
        .into_iter()
        .filter(|(id, _)| !funders.contains(id))
        .map(|(id, sim)| (id, 1.0 - sim))
        .collect();
    let available = pool.len();
    let negatives = select_negatives(pool).ok_or_else(|| Error::InsufficientCandidates {
        pub_id: publication.pub_id.clone(),
        available,
    })?;
    let mut candidates = vec![RankedCandidate::with_rank(true_grant_id, 1)];
    for (i, id) in negatives.iter().enumerate() {
        candidates.push(RankedCandidate::with_rank(*id, i as u32 + 2));
    }
    Ok(RankingList {
        pub_id: publication.pub_id.clone(),
        candidates,
        features: Vec::new(),
    })
}

/// Assembles the 129 features of one pair from scratch.
pub fn assemble_feature_vector(
    publication: &PublicationRecord,
    grant: &GrantRecord,
    vocabs: &[Vocabulary; VIEW_COUNT],
    embeddings: &EmbeddingTable,
    tokenizer: &Tokenizer,
    params: &StatParams,
) -> Vec<f64> {
    let pub_tokens = tokenizer.tokenize(&publication_description(publication));
    let pub_bag = TermBag::from_tokens(pub_tokens.iter().cloned());
    let views = grant_views(grant);
    let mut stat = Vec::with_capacity(FEATURE_COUNT);
    let mut semantic = Vec::with_capacity(VIEW_COUNT);
    for (text, vocab) in views.texts().iter().zip(vocabs) {
        let grant_tokens = tokenizer.tokenize(text);
        let grant_bag = TermBag::from_tokens(grant_tokens.iter().cloned());
        stat.extend_from_slice(
            extract_stat_features_with(&pub_bag, &grant_bag, vocab, params).values(),
        );
        semantic.push(crate::semfeat::semantic_similarity(
            &pub_tokens,
            &grant_tokens,
            embeddings,
        ));
    }
    stat.extend(semantic);
    stat.push(f64::from(publication.year - grant.fiscal_year));
    stat
}

struct PreparedGrant {
    fiscal_year: i32,
    bags: [TermBag; VIEW_COUNT],
    embedded: [Vec<f64>; VIEW_COUNT],
}

/// Per-view vocabularies plus cached grant bags and embeddings, so that
/// feature rows can be assembled for many pairs without re-tokenizing.
pub struct FeatureContext<'a> {
    tokenizer: Tokenizer,
    params: StatParams,
    embeddings: &'a EmbeddingTable,
    vocabs: [Vocabulary; VIEW_COUNT],
    grants: std::collections::HashMap<String, PreparedGrant>,
}

/// A publication tokenized and embedded once.
pub struct PreparedPublication {
    year: i32,
    bag: TermBag,
    embedded: Vec<f64>,
}

impl<'a> FeatureContext<'a> {
    pub fn new(
        bundle: &CorpusBundle,
        embeddings: &'a EmbeddingTable,
        tokenizer: &Tokenizer,
        params: StatParams,
    ) -> Result<Self> {
        let mut per_view: [Vec<TermBag>; VIEW_COUNT] = Default::default();
        let mut grants = std::collections::HashMap::with_capacity(bundle.grants.len());
        for grant in bundle.grants.values() {
            let views = grant_views(grant);
            let mut bags: [TermBag; VIEW_COUNT] = Default::default();
            let mut embedded: [Vec<f64>; VIEW_COUNT] = Default::default();
            for (v, text) in views.texts().iter().enumerate() {
                let tokens = tokenizer.tokenize(text);
                embedded[v] = embed_document(&tokens, embeddings).values;
                bags[v] = TermBag::from_tokens(tokens);
                per_view[v].push(bags[v].clone());
            }
            grants.insert(
                grant.grant_id.clone(),
                PreparedGrant {
                    fiscal_year: grant.fiscal_year,
                    bags,
                    embedded,
                },
            );
        }
        let [a, b, c, d] = per_view;
        let vocabs = [
            Vocabulary::build(&a)?,
            Vocabulary::build(&b)?,
            Vocabulary::build(&c)?,
            Vocabulary::build(&d)?,
        ];
        Ok(FeatureContext {
            tokenizer: tokenizer.clone(),
            params,
            embeddings,
            vocabs,
            grants,
        })
    }

    pub fn vocabularies(&self) -> &[Vocabulary; VIEW_COUNT] {
        &self.vocabs
    }

    pub fn prepare(&self, publication: &PublicationRecord) -> PreparedPublication {
        let tokens = self
            .tokenizer
            .tokenize(&publication_description(publication));
        PreparedPublication {
            year: publication.year,
            embedded: embed_document(&tokens, self.embeddings).values,
            bag: TermBag::from_tokens(tokens),
        }
    }

    /// Feature row for a prepared publication against a grant of the
    /// bundle the context was built from.
    pub fn row(&self, publication: &PreparedPublication, grant_id: &str) -> Result<Vec<f64>> {
        let grant = self
            .grants
            .get(grant_id)
            .ok_or_else(|| Error::Usage(format!("unknown grant {grant_id}")))?;
        let mut row = Vec::with_capacity(FEATURE_COUNT);
        for v in 0..VIEW_COUNT {
            let stat = extract_stat_features_with(
                &publication.bag,
                &grant.bags[v],
                &self.vocabs[v],
                &self.params,
            );
            row.extend_from_slice(stat.values());
        }
        for v in 0..VIEW_COUNT {
            row.push(cosine_dense(&publication.embedded, &grant.embedded[v]));
        }
        row.push(f64::from(publication.year - grant.fiscal_year));
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedList {
    pub pub_id: String,
    pub grant_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct DatasetBuild {
    /// Sorted by publication id, then funding grant id.
    pub lists: Vec<RankingList>,
    pub skipped: Vec<SkippedList>,
}

/// One ranking list per funding link, features included. Lists whose
/// publication has too few non-funding grants are skipped and reported.
pub fn build_dataset(
    bundle: &CorpusBundle,
    embeddings: &EmbeddingTable,
    tokenizer: &Tokenizer,
    params: StatParams,
) -> Result<DatasetBuild> {
    let index = CandidateIndex::build(bundle, tokenizer)?;
    let context = FeatureContext::new(bundle, embeddings, tokenizer, params)?;
    let funders = bundle.funders_by_publication();

    let jobs: Vec<(&PublicationRecord, &Vec<&str>)> = funders
        .iter()
        .filter_map(|(pub_id, grants)| bundle.publications.get(*pub_id).map(|p| (p, grants)))
        .collect();

    let results: Vec<Vec<std::result::Result<RankingList, SkippedList>>> = jobs
        .par_iter()
        .map(|(publication, grants)| {
            let query = index.query_vector(&publication_description(publication));
            let prepared = context.prepare(publication);
            grants
                .iter()
                .map(|true_grant| {
                    let skip = |reason: String| SkippedList {
                        pub_id: publication.pub_id.clone(),
                        grant_id: (*true_grant).to_owned(),
                        reason,
                    };
                    let mut list = candidates_for(publication, true_grant, grants, &index, &query)
                        .map_err(|e| skip(e.to_string()))?;
                    list.features = list
                        .candidates
                        .iter()
                        .map(|c| context.row(&prepared, &c.grant_id))
                        .collect::<Result<_>>()
                        .map_err(|e| skip(e.to_string()))?;
                    Ok(list)
                })
                .collect()
        })
        .collect();

    let mut build = DatasetBuild {
        lists: Vec::new(),
        skipped: Vec::new(),
    };
    for r in results.into_iter().flatten() {
        match r {
            Ok(list) => build.lists.push(list),
            Err(skip) => {
                warn!(
                    "skipped publication {} / grant {}: {}",
                    skip.pub_id, skip.grant_id, skip.reason
                );
                build.skipped.push(skip);
            }
        }
    }
    Ok(build)
}

/// Publication-level shuffle split: every list of a publication lands on
/// the same side. Both sides keep the input order.
pub fn split_dataset(
    lists: &[RankingList],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<RankingList>, Vec<RankingList>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!("ratio {ratio} outside (0, 1)")));
    }
    let mut pubs: Vec<&str> = lists.iter().map(|l| l.pub_id.as_str()).collect();
    pubs.sort_unstable();
    pubs.dedup();
    if pubs.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 publications to split, found {}",
            pubs.len()
        )));
    }
    pubs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * pubs.len() as f64).round() as usize).clamp(1, pubs.len() - 1);
    let train_pubs: HashSet<&str> = pubs[..n_train].iter().copied().collect();
    let (train, valid) = lists
        .iter()
        .cloned()
        .partition(|l| train_pubs.contains(l.pub_id.as_str()));
    Ok((train, valid))
}

pub fn write_lists(path: &Path, lists: &[RankingList]) -> Result<()> {
    write_jsonl(path, lists)
}

pub fn read_lists(path: &Path) -> Result<Vec<RankingList>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lists = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let list: RankingList = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        lists.push(list);
    }
    Ok(lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FundingLink;
    use crate::statfeat::extract_stat_features;

    fn grant(id: &str, title: &str, abstract_text: &str, year: i32) -> GrantRecord {
        GrantRecord {
            grant_id: id.into(),
            agency_name: "NIH".into(),
            agency_description: "National Institutes of Health".into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
            fiscal_year: year,
            subproject_id: None,
        }
    }

    fn publication(id: &str, title: &str, abstract_text: &str, year: i32) -> PublicationRecord {
        PublicationRecord {
            pub_id: id.into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
            year,
        }
    }

    #[test]
    fn schema_layout() {
        let s = FeatureSchema::standard();
        assert_eq!(s.len(), 129);
        assert_eq!(s.names()[0], "APP_1/Feature_1");
        assert_eq!(s.names()[123], "APP_4/Feature_31");
        assert_eq!(s.names()[124], "APP_1/semantic");
        assert_eq!(s.names()[127], "APP_4/semantic");
        assert_eq!(s.names()[128], "year_diff");
        assert!(FeatureSchema::new(s.names().to_vec()).is_ok());
        assert!(FeatureSchema::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn publication_description_examples() {
        assert_eq!(
            publication_description(&publication("P", "T1", "A1", 2000)),
            "T1 A1"
        );
        assert_eq!(
            publication_description(&publication("P", "T1", "", 2000)),
            "T1"
        );
        assert_eq!(publication_description(&publication("P", "", "", 2000)), "");
    }

    #[test]
    fn grant_view_examples() {
        let g = grant("G", "T", "Ab", 2000);
        let v = grant_views(&g);
        assert_eq!(v.agency, "NIH National Institutes of Health");
        assert_eq!(v.union, "NIH National Institutes of Health T Ab");

        let mut g = grant("G", "T", "Ab", 2000);
        g.agency_description.clear();
        assert_eq!(grant_views(&g).agency, "NIH");

        let mut g = grant("G", "", "", 2000);
        g.agency_name.clear();
        g.agency_description.clear();
        assert!(grant_views(&g).texts().iter().all(|t| t.is_empty()));
    }

    #[test]
    fn union_view_token_count_is_sum_of_parts() {
        let tok = Tokenizer::default();
        let g = grant(
            "G",
            "Gene-therapy trial",
            "We study (CD8+) cells, in vivo.",
            2000,
        );
        let v = grant_views(&g);
        let parts: usize = v.texts()[..3].iter().map(|t| tok.tokenize(t).len()).sum();
        assert_eq!(tok.tokenize(&v.union).len(), parts);
    }

    fn pool(entries: &[(&'static str, f64)]) -> Vec<(&'static str, f64)> {
        entries.to_vec()
    }

    #[test]
    fn quantile_positions_for_pool_of_eight() {
        let p = pool(&[
            ("a", 0.10),
            ("b", 0.20),
            ("c", 0.30),
            ("d", 0.40),
            ("e", 0.50),
            ("f", 0.60),
            ("g", 0.70),
            ("h", 0.80),
        ]);
        // Remaining 7 after "a": positions 2, 4, 6 are c, e, g.
        assert_eq!(select_negatives(p), Some(["a", "c", "e", "g"]));
    }

    #[test]
    fn tie_at_minimum_prefers_smaller_id() {
        let p = pool(&[("z", 0.1), ("m", 0.1), ("b", 0.5), ("c", 0.6), ("d", 0.7)]);
        assert_eq!(select_negatives(p).unwrap()[0], "m");
    }

    #[test]
    fn pool_of_four_collapses_quantiles() {
        let p = pool(&[("d", 0.9), ("a", 0.1), ("c", 0.5), ("b", 0.3)]);
        assert_eq!(select_negatives(p), Some(["a", "b", "c", "d"]));
        assert_eq!(
            select_negatives(pool(&[("a", 0.1), ("b", 0.2), ("c", 0.3)])),
            None
        );
    }

    fn small_bundle() -> CorpusBundle {
        let grants = vec![
            grant("G1", "gene therapy", "gene therapy for als patients", 2010),
            grant("G2", "gene editing", "crispr gene editing in mice", 2011),
            grant("G3", "ocean acidification", "coral reef chemistry", 2009),
            grant("G4", "deep learning", "neural networks for images", 2015),
            grant(
                "G5",
                "als biomarkers",
                "biomarkers of als progression",
                2012,
            ),
            grant("G6", "cancer immunology", "t cell therapy for tumors", 2013),
        ];
        let pubs = vec![
            publication("P1", "Gene therapy in ALS", "A trial of gene therapy", 2013),
            publication("P2", "Coral reefs", "acidification and reef decline", 2011),
        ];
        let links = vec![
            FundingLink::new("G1", "P1"),
            FundingLink::new("G5", "P1"),
            FundingLink::new("G3", "P2"),
        ];
        CorpusBundle::from_parts(grants, pubs, links)
    }

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(3);
        for (i, w) in ["gene", "therapy", "als", "coral", "reef", "nih", "cell"]
            .iter()
            .enumerate()
        {
            t.insert(*w, vec![i as f32, 1.0, (i % 3) as f32 - 1.0]);
        }
        t
    }

    #[test]
    fn candidate_list_excludes_all_funders() {
        let bundle = small_bundle();
        let index = CandidateIndex::build(&bundle, &Tokenizer::default()).unwrap();
        let p1 = &bundle.publications["P1"];
        let list = build_candidate_list(p1, "G1", &bundle, &index).unwrap();
        assert_eq!(list.candidates[0].grant_id, "G1");
        assert_eq!(list.gains(), [4, 3, 2, 1, 0]);
        assert!(list.candidates[1..]
            .iter()
            .all(|c| c.grant_id != "G5" && c.grant_id != "G1"));
        // G2 shares "gene" with the publication; it is the nearest non-funder.
        assert_eq!(list.candidates[1].grant_id, "G2");

        assert!(build_candidate_list(p1, "G3", &bundle, &index).is_err());
    }

    #[test]
    fn insufficient_pool_is_reported() {
        let mut bundle = small_bundle();
        bundle.grants.remove("G6");
        bundle.grants.remove("G4");
        let index = CandidateIndex::build(&bundle, &Tokenizer::default()).unwrap();
        let err =
            build_candidate_list(&bundle.publications["P1"], "G1", &bundle, &index).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientCandidates { available: 2, .. }
        ));
    }

    #[test]
    fn year_diff_and_composition() {
        let bundle = small_bundle();
        let emb = table();
        let tok = Tokenizer::default();
        let ctx = FeatureContext::new(&bundle, &emb, &tok, StatParams::default()).unwrap();
        let p = publication("PX", "Gene therapy", "als trial", 2015);
        let g = &bundle.grants["G1"];
        let full = assemble_feature_vector(
            &p,
            g,
            ctx.vocabularies(),
            &emb,
            &tok,
            &StatParams::default(),
        );
        assert_eq!(full.len(), FEATURE_COUNT);
        assert_eq!(full[128], 5.0);
        assert_eq!(ctx.row(&ctx.prepare(&p), "G1").unwrap(), full);

        // Independently recomputed per-view blocks.
        let pub_bag = tok.bag(&publication_description(&p));
        for (v, text) in grant_views(g).texts().iter().enumerate() {
            let stat = extract_stat_features(&pub_bag, &tok.bag(text), &ctx.vocabularies()[v]);
            assert_eq!(&full[v * 31..(v + 1) * 31], stat.values());
            let sem = crate::semfeat::semantic_similarity(
                &tok.tokenize(&publication_description(&p)),
                &tok.tokenize(text),
                &emb,
            );
            assert_eq!(full[124 + v], sem);
        }
    }

    #[test]
    fn empty_abstract_view_follows_empty_bag_conventions() {
        let mut bundle = small_bundle();
        bundle.grants.get_mut("G4").unwrap().abstract_text.clear();
        let emb = table();
        let tok = Tokenizer::default();
        let ctx = FeatureContext::new(&bundle, &emb, &tok, StatParams::default()).unwrap();
        let row = ctx
            .row(&ctx.prepare(&bundle.publications["P1"]), "G4")
            .unwrap();
        let view3 = &row[2 * 31..3 * 31];
        assert!(view3.iter().all(|v| *v == 0.0 || v.is_finite()));
        assert_eq!(view3[0], 0.0);
        assert_eq!(view3[3], 0.0);
        assert_eq!(row[124 + 2], 0.0);
    }

    #[test]
    fn dataset_has_one_list_per_link() {
        let bundle = small_bundle();
        let build = build_dataset(
            &bundle,
            &table(),
            &Tokenizer::default(),
            StatParams::default(),
        )
        .unwrap();
        assert_eq!(build.lists.len(), 3);
        assert!(build.skipped.is_empty());
        let ids: Vec<(&str, &str)> = build
            .lists
            .iter()
            .map(|l| (l.pub_id.as_str(), l.funder().unwrap()))
            .collect();
        assert_eq!(ids, [("P1", "G1"), ("P1", "G5"), ("P2", "G3")]);
        for l in &build.lists {
            l.validate(FEATURE_COUNT).unwrap();
        }
    }

    #[test]
    fn split_examples() {
        let lists: Vec<RankingList> = (0..10)
            .flat_map(|i| {
                let n = if i == 3 { 2 } else { 1 };
                (0..n).map(move |j| RankingList {
                    pub_id: format!("P{i}"),
                    candidates: vec![RankedCandidate::new(format!("G{j}"), 4)],
                    features: vec![vec![0.0]],
                })
            })
            .collect();
        let (train, valid) = split_dataset(&lists, 0.8, 42).unwrap();
        let count = |ls: &[RankingList]| {
            let mut p: Vec<&str> = ls.iter().map(|l| l.pub_id.as_str()).collect();
            p.dedup();
            p.len()
        };
        assert_eq!((count(&train), count(&valid)), (8, 2));
        let p3_sides = (
            train.iter().filter(|l| l.pub_id == "P3").count(),
            valid.iter().filter(|l| l.pub_id == "P3").count(),
        );
        assert!(p3_sides == (2, 0) || p3_sides == (0, 2));
        assert_eq!(split_dataset(&lists, 0.8, 42).unwrap(), (train, valid));

        assert!(split_dataset(&lists[..1], 0.8, 1).is_err());
        assert!(split_dataset(&lists, 1.0, 1).is_err());
    }

    #[test]
    fn lists_roundtrip_through_jsonl() {
        let bundle = small_bundle();
        let build = build_dataset(
            &bundle,
            &table(),
            &Tokenizer::default(),
            StatParams::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lists.jsonl");
        write_lists(&path, &build.lists).unwrap();
        assert_eq!(read_lists(&path).unwrap(), build.lists);
        let line = fs::read_to_string(&path).unwrap();
        assert!(
            line.starts_with("{\"pub_id\":\"P1\",\"candidates\":[{\"grant_id\":\"G1\",\"gain\":4}")
        );
    }
}
