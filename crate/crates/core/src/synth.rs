//! Synthetic corpus with planted topic clusters, for end-to-end checks
//! without real funding data.
//!
//! Every grant belongs to one topic; its text mixes that topic's words, a
//! few words of its own and general filler, at varying lengths. A
//! publication draws on its funding grant's topic words, strongly for about
//! half of the publications and faintly for the rest, and is dated within
//! two years of the grant's fiscal year. Embeddings place each topic's
//! words around a shared centroid.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    CorpusBundle, FundingLink, GrantRecord, PublicationRecord, MAX_PUBLICATIONS_PER_GRANT,
};
use crate::error::{Error, Result};
use crate::semfeat::EmbeddingTable;

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub grants: usize,
    pub publications: usize,
    pub topics: usize,
    pub embedding_dim: usize,
    pub seed: u64,
    pub first_fiscal_year: i32,
    pub last_fiscal_year: i32,
    /// Share of publications that name a second grant from the same topic.
    pub co_funded_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grants: 200,
            publications: 500,
            topics: 10,
            embedding_dim: 32,
            seed: 7,
            first_fiscal_year: 1990,
            last_fiscal_year: 2018,
            co_funded_share: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.topics == 0 || self.grants < self.topics {
            return fail(format!(
                "need at least one grant per topic ({} grants, {} topics)",
                self.grants, self.topics
            ));
        }
        if self.publications < self.grants {
            return fail("every grant needs a publication: publications must be >= grants".into());
        }
        if self.publications > self.grants * MAX_PUBLICATIONS_PER_GRANT {
            return fail(format!(
                "{} publications exceed the cap of {MAX_PUBLICATIONS_PER_GRANT} per grant",
                self.publications
            ));
        }
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive".into());
        }
        if self.first_fiscal_year > self.last_fiscal_year {
            return fail("first_fiscal_year is after last_fiscal_year".into());
        }
        if !(0.0..=1.0).contains(&self.co_funded_share) {
            return fail("co_funded_share must lie in [0, 1]".into());
        }
        Ok(())
    }
}

const TOPIC_WORDS: usize = 30;
const PRIVATE_WORDS: usize = 6;
const GENERAL_WORDS: usize = 120;

const AGENCIES: [(&str, &str); 5] = [
    (
        "National Institute of General Medical Sciences",
        "supports basic research that increases understanding of biological processes",
    ),
    (
        "National Cancer Institute",
        "leads research on the causes diagnosis and treatment of cancer",
    ),
    (
        "National Institute of Mental Health",
        "funds research on mental illnesses and the brain",
    ),
    (
        "National Heart Lung and Blood Institute",
        "supports research on heart lung and blood diseases and sleep disorders",
    ),
    (
        "National Institute of Allergy and Infectious Diseases",
        "conducts research on infectious immunologic and allergic diseases",
    ),
];

const ONSETS: [&str; 16] = [
    "b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "th",
];
const NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "y"];

/// Unique pseudo-words of two or three syllables.
struct WordMint {
    seen: BTreeSet<String>,
}

impl WordMint {
    fn mint(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).unwrap());
                w.push_str(NUCLEI.choose(rng).unwrap());
            }
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }

    fn batch(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        (0..n).map(|_| self.mint(rng)).collect()
    }
}

struct SynthGrant {
    topic: usize,
    private: Vec<String>,
}

/// Draws `n` words: topic, private and general in the given proportions.
fn sample_text(
    n: usize,
    mix: (f64, f64),
    topic: &[String],
    private: &[String],
    general: &[String],
    rng: &mut ChaCha8Rng,
) -> String {
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let pool = if u < mix.0 {
            topic
        } else if u < mix.0 + mix.1 {
            private
        } else {
            general
        };
        words.push(pool.choose(rng).unwrap().as_str());
    }
    words.join(" ")
}

/// Builds the corpus and its embedding table.
pub fn generate(config: &SynthConfig) -> Result<(CorpusBundle, EmbeddingTable)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mint = WordMint {
        seen: BTreeSet::new(),
    };
    let topics: Vec<Vec<String>> = (0..config.topics)
        .map(|_| mint.batch(TOPIC_WORDS, &mut rng))
        .collect();
    let general = mint.batch(GENERAL_WORDS, &mut rng);

    let mut grants = Vec::with_capacity(config.grants);
    let mut meta = Vec::with_capacity(config.grants);
    for g in 0..config.grants {
        let topic = g % config.topics;
        let private = mint.batch(PRIVATE_WORDS, &mut rng);
        let (agency_name, agency_description) = AGENCIES[topic % AGENCIES.len()];
        let title = sample_text(8, (0.6, 0.3), &topics[topic], &private, &general, &mut rng);
        let length = rng.random_range(40..=400);
        let abstract_text = sample_text(
            length,
            (0.5, 0.02),
            &topics[topic],
            &private,
            &general,
            &mut rng,
        );
        grants.push(GrantRecord {
            grant_id: format!("G{g:04}"),
            agency_name: agency_name.to_owned(),
            agency_description: agency_description.to_owned(),
            title,
            abstract_text,
            fiscal_year: rng.random_range(config.first_fiscal_year..=config.last_fiscal_year),
            subproject_id: None,
        });
        meta.push(SynthGrant { topic, private });
    }

    // Every grant funds at least one publication; the rest are spread at
    // random under the per-grant cap.
    let mut owners: Vec<usize> = (0..config.grants).collect();
    let mut load = vec![1usize; config.grants];
    while owners.len() < config.publications {
        let g = rng.random_range(0..config.grants);
        if load[g] < MAX_PUBLICATIONS_PER_GRANT {
            load[g] += 1;
            owners.push(g);
        }
    }
    owners.shuffle(&mut rng);

    let by_topic: Vec<Vec<usize>> = (0..config.topics)
        .map(|t| (0..config.grants).filter(|&g| meta[g].topic == t).collect())
        .collect();

    let mut publications = Vec::with_capacity(config.publications);
    let mut links = Vec::with_capacity(config.publications);
    for (p, &g) in owners.iter().enumerate() {
        let pub_id = format!("P{p:05}");
        let topic = meta[g].topic;
        let focus = if rng.random_bool(0.5) { 0.05 } else { 0.4 };
        let title = sample_text(10, (focus, 0.0), &topics[topic], &[], &general, &mut rng);
        let length = rng.random_range(30..=150);
        let abstract_text = sample_text(
            length,
            (focus, 0.0),
            &topics[topic],
            &[],
            &general,
            &mut rng,
        );
        publications.push(PublicationRecord {
            pub_id: pub_id.clone(),
            title,
            abstract_text,
            year: grants[g].fiscal_year + rng.random_range(-2..=2),
        });
        links.push(FundingLink::new(grants[g].grant_id.clone(), pub_id.clone()));
        if rng.random_bool(config.co_funded_share) {
            let partner = *by_topic[topic].choose(&mut rng).unwrap();
            if partner != g && load[partner] < MAX_PUBLICATIONS_PER_GRANT {
                load[partner] += 1;
                links.push(FundingLink::new(grants[partner].grant_id.clone(), pub_id));
            }
        }
    }

    let embeddings = synth_embeddings(config.embedding_dim, &topics, &meta, &general, &mut rng);
    Ok((
        CorpusBundle::from_parts(grants, publications, links),
        embeddings,
    ))
}

fn synth_embeddings(
    dim: usize,
    topics: &[Vec<String>],
    grants: &[SynthGrant],
    general: &[String],
    rng: &mut ChaCha8Rng,
) -> EmbeddingTable {
    let unit = Normal::new(0.0f32, 1.0).unwrap();
    let noise = Normal::new(0.0f32, 0.6).unwrap();
    let draw = |dist: &Normal<f32>, rng: &mut ChaCha8Rng| -> Vec<f32> {
        (0..dim).map(|_| dist.sample(rng)).collect()
    };

    let centroids: Vec<Vec<f32>> = topics.iter().map(|_| draw(&unit, rng)).collect();
    let mut table = EmbeddingTable::new(dim);
    let near = |centroid: &[f32], rng: &mut ChaCha8Rng| -> Vec<f32> {
        centroid
            .iter()
            .zip(draw(&noise, rng))
            .map(|(c, n)| c + n)
            .collect()
    };
    for (words, centroid) in topics.iter().zip(&centroids) {
        for w in words {
            table.insert(w.clone(), near(centroid, rng));
        }
    }
    for g in grants {
        for w in &g.private {
            table.insert(w.clone(), near(&centroids[g.topic], rng));
        }
    }
    for w in general {
        table.insert(w.clone(), draw(&unit, rng));
    }
    table
}

/// Where [`write_synthetic`] put its files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthPaths {
    pub grants: PathBuf,
    pub publications: PathBuf,
    pub links: PathBuf,
    pub embeddings: PathBuf,
}

/// Writes `grants.jsonl`, `publications.jsonl`, `links.csv` and
/// `embeddings.txt` into `dir`.
pub fn write_synthetic(dir: &Path, config: &SynthConfig) -> Result<SynthPaths> {
    let (bundle, embeddings) = generate(config)?;
    bundle.write_to(dir)?;
    let paths = SynthPaths {
        grants: dir.join(crate::corpus::GRANTS_FILE),
        publications: dir.join(crate::corpus::PUBLICATIONS_FILE),
        links: dir.join(crate::corpus::LINKS_FILE),
        embeddings: dir.join(EMBEDDINGS_FILE),
    };
    embeddings.write(&paths.embeddings)?;
    Ok(paths)
}
