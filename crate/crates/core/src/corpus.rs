//! Grant, publication and funding-link ingestion and filtering.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Grants with more links than this are dropped by [`filter_corpus`].
pub const MAX_PUBLICATIONS_PER_GRANT: usize = 10;
/// Publications with more funders than this are dropped by [`filter_corpus`].
pub const MAX_GRANTS_PER_PUBLICATION: usize = 3;

const MIN_YEAR: i32 = 1900;
const MAX_YEAR: i32 = 2100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantRecord {
    pub grant_id: String,
    #[serde(default)]
    pub agency_name: String,
    #[serde(default)]
    pub agency_description: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    pub fiscal_year: i32,
    #[serde(
        default,
        deserialize_with = "empty_as_none",
        skip_serializing_if = "Option::is_none"
    )]
    pub subproject_id: Option<String>,
}

impl GrantRecord {
    pub fn is_subproject(&self) -> bool {
        self.subproject_id.as_deref().is_some_and(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicationRecord {
    pub pub_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FundingLink {
    pub grant_id: String,
    pub pub_id: String,
}

impl FundingLink {
    pub fn new(grant_id: impl Into<String>, pub_id: impl Into<String>) -> Self {
        FundingLink {
            grant_id: grant_id.into(),
            pub_id: pub_id.into(),
        }
    }
}

fn empty_as_none<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let value: Option<String> = Option::deserialize(d)?;
    Ok(value.filter(|s| !s.trim().is_empty()))
}

/// Row-level validation shared by the three ingesters.
trait IngestRecord: DeserializeOwned {
    fn key(&self) -> String;
    fn check(&self) -> std::result::Result<(), String>;
    /// Records carrying no text are dropped silently (counted).
    fn is_blank(&self) -> bool {
        false
    }
}

fn check_year(field: &str, year: i32) -> std::result::Result<(), String> {
    if (MIN_YEAR..=MAX_YEAR).contains(&year) {
        Ok(())
    } else {
        Err(format!("{field} {year} outside [{MIN_YEAR}, {MAX_YEAR}]"))
    }
}

impl IngestRecord for GrantRecord {
    fn key(&self) -> String {
        self.grant_id.clone()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.grant_id.trim().is_empty() {
            return Err("empty grant_id".into());
        }
        check_year("fiscal_year", self.fiscal_year)
    }

    fn is_blank(&self) -> bool {
        self.title.trim().is_empty() && self.abstract_text.trim().is_empty()
    }
}

impl IngestRecord for PublicationRecord {
    fn key(&self) -> String {
        self.pub_id.clone()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.pub_id.trim().is_empty() {
            return Err("empty pub_id".into());
        }
        check_year("year", self.year)
    }

    fn is_blank(&self) -> bool {
        self.title.trim().is_empty() && self.abstract_text.trim().is_empty()
    }
}

impl IngestRecord for FundingLink {
    fn key(&self) -> String {
        format!("{}\u{0}{}", self.grant_id, self.pub_id)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.grant_id.trim().is_empty() {
            return Err("empty grant_id".into());
        }
        if self.pub_id.trim().is_empty() {
            return Err("empty pub_id".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl InputFormat {
    /// `.csv` files are CSV; anything else is read as JSON lines.
    pub fn from_path(path: &Path) -> InputFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct IngestReport<T> {
    /// Valid records in file order, first occurrence of each key.
    pub records: Vec<T>,
    pub duplicates: usize,
    pub dropped_blank: usize,
    pub row_errors: Vec<RowError>,
}

fn read_rows<T: DeserializeOwned>(
    path: &Path,
    format: InputFormat,
) -> Result<Vec<(usize, std::result::Result<T, String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    match format {
        InputFormat::Jsonl => {
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                rows.push((
                    idx + 1,
                    serde_json::from_str(&line).map_err(|e| e.to_string()),
                ));
            }
        }
        InputFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .flexible(true)
                .from_reader(file);
            let headers = match reader.headers() {
                Ok(h) => h.clone(),
                Err(e) => return Err(csv_error(path, e)),
            };
            for result in reader.records() {
                let record = result.map_err(|e| csv_error(path, e))?;
                let line = record.position().map_or(0, |p| p.line() as usize);
                rows.push((
                    line,
                    record
                        .deserialize(Some(&headers))
                        .map_err(|e| e.to_string()),
                ));
            }
        }
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

fn ingest<T: IngestRecord>(
    path: &Path,
    format: InputFormat,
    what: &str,
) -> Result<IngestReport<T>> {
    let rows = read_rows::<T>(path, format)?;
    let mut report = IngestReport {
        records: Vec::new(),
        duplicates: 0,
        dropped_blank: 0,
        row_errors: Vec::new(),
    };
    let mut seen = HashSet::new();
    for (line, row) in rows {
        let record = match row.and_then(|r| r.check().map(|_| r)) {
            Ok(r) => r,
            Err(message) => {
                report.row_errors.push(RowError { line, message });
                continue;
            }
        };
        if record.is_blank() {
            report.dropped_blank += 1;
            continue;
        }
        if !seen.insert(record.key()) {
            report.duplicates += 1;
            continue;
        }
        report.records.push(record);
    }
    for err in &report.row_errors {
        warn!(
            "{}:{}: skipped {what} row: {}",
            path.display(),
            err.line,
            err.message
        );
    }
    if report.duplicates > 0 {
        warn!(
            "{}: {} duplicate {what} rows collapsed",
            path.display(),
            report.duplicates
        );
    }
    if report.records.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no valid {what} records in {}",
            path.display()
        )));
    }
    Ok(report)
}

pub fn ingest_grants(path: &Path, format: InputFormat) -> Result<IngestReport<GrantRecord>> {
    ingest(path, format, "grant")
}

pub fn ingest_publications(path: &Path) -> Result<IngestReport<PublicationRecord>> {
    ingest(path, InputFormat::from_path(path), "publication")
}

pub fn ingest_links(path: &Path) -> Result<IngestReport<FundingLink>> {
    ingest(path, InputFormat::from_path(path), "link")
}

/// Grants, publications and the funded-by relation between them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusBundle {
    pub grants: BTreeMap<String, GrantRecord>,
    pub publications: BTreeMap<String, PublicationRecord>,
    pub links: BTreeSet<FundingLink>,
}

impl CorpusBundle {
    /// Assembles a bundle; on duplicate keys the first record wins.
    pub fn from_parts(
        grants: impl IntoIterator<Item = GrantRecord>,
        publications: impl IntoIterator<Item = PublicationRecord>,
        links: impl IntoIterator<Item = FundingLink>,
    ) -> Self {
        let mut bundle = CorpusBundle::default();
        for g in grants {
            bundle.grants.entry(g.grant_id.clone()).or_insert(g);
        }
        for p in publications {
            bundle.publications.entry(p.pub_id.clone()).or_insert(p);
        }
        bundle.links.extend(links);
        bundle
    }

    /// Grant ids funding each publication, both levels sorted.
    pub fn funders_by_publication(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for link in &self.links {
            map.entry(link.pub_id.as_str())
                .or_default()
                .push(link.grant_id.as_str());
        }
        for funders in map.values_mut() {
            funders.sort_unstable();
        }
        map
    }

    pub fn is_empty(&self) -> bool {
        self.grants.is_empty() && self.publications.is_empty() && self.links.is_empty()
    }

    /// Writes `grants.jsonl`, `publications.jsonl` and `links.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(GRANTS_FILE), self.grants.values())?;
        write_jsonl(&dir.join(PUBLICATIONS_FILE), self.publications.values())?;
        let links_path = dir.join(LINKS_FILE);
        let file = File::create(&links_path).map_err(|e| Error::io(&links_path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let io_err = |e: csv::Error| Error::io(&links_path, std::io::Error::other(e.to_string()));
        for link in &self.links {
            w.serialize(link).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::io(&links_path, e))?;
        Ok(())
    }

    /// Reads a bundle previously written with [`CorpusBundle::write_to`].
    pub fn read_from(dir: &Path) -> Result<Self> {
        let grants = ingest_grants(&dir.join(GRANTS_FILE), InputFormat::Jsonl)?;
        let pubs = ingest_publications(&dir.join(PUBLICATIONS_FILE))?;
        let links = ingest_links(&dir.join(LINKS_FILE))?;
        Ok(CorpusBundle::from_parts(
            grants.records,
            pubs.records,
            links.records,
        ))
    }
}

pub const GRANTS_FILE: &str = "grants.jsonl";
pub const PUBLICATIONS_FILE: &str = "publications.jsonl";
pub const LINKS_FILE: &str = "links.csv";

pub(crate) fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Applies the corpus cleaning rules and iterates them to a fixed point:
///
/// 1. drop sub-grants (non-empty `subproject_id`);
/// 2. drop grants with more than 10 links;
/// 3. drop publications with more than 3 links;
/// 4. drop links whose grant or publication is gone;
/// 5. drop grants and publications left without links.
///
/// Steps 2-5 repeat until nothing changes.
pub fn filter_corpus(bundle: &CorpusBundle) -> Result<CorpusBundle> {
    let mut grants: BTreeMap<String, GrantRecord> = bundle
        .grants
        .iter()
        .filter(|(_, g)| !g.is_subproject())
        .map(|(k, g)| (k.clone(), g.clone()))
        .collect();
    let mut publications = bundle.publications.clone();
    let mut links = bundle.links.clone();

    loop {
        let before = (grants.len(), publications.len(), links.len());

        let mut grant_degree: BTreeMap<&str, usize> = BTreeMap::new();
        let mut pub_degree: BTreeMap<&str, usize> = BTreeMap::new();
        for link in &links {
            *grant_degree.entry(&link.grant_id).or_default() += 1;
            *pub_degree.entry(&link.pub_id).or_default() += 1;
        }
        let degree = |map: &BTreeMap<&str, usize>, key: &str| map.get(key).copied().unwrap_or(0);
        grants.retain(|id, _| degree(&grant_degree, id) <= MAX_PUBLICATIONS_PER_GRANT);
        publications.retain(|id, _| degree(&pub_degree, id) <= MAX_GRANTS_PER_PUBLICATION);

        links.retain(|l| grants.contains_key(&l.grant_id) && publications.contains_key(&l.pub_id));

        let linked_grants: HashSet<&str> = links.iter().map(|l| l.grant_id.as_str()).collect();
        let linked_pubs: HashSet<&str> = links.iter().map(|l| l.pub_id.as_str()).collect();
        grants.retain(|id, _| linked_grants.contains(id.as_str()));
        publications.retain(|id, _| linked_pubs.contains(id.as_str()));

        if (grants.len(), publications.len(), links.len()) == before {
            break;
        }
    }

    if grants.is_empty() || publications.is_empty() || links.is_empty() {
        return Err(Error::EmptyCorpus(
            "every record was removed by filtering".into(),
        ));
    }
    Ok(CorpusBundle {
        grants,
        publications,
        links,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub grants: usize,
    pub publications: usize,
    pub links: usize,
    /// Number of grants per count of linked publications.
    pub grant_degree_histogram: BTreeMap<usize, usize>,
    /// Number of publications per count of funding grants.
    pub publication_degree_histogram: BTreeMap<usize, usize>,
}

pub fn corpus_stats(bundle: &CorpusBundle) -> CorpusStats {
    let mut grant_degree: BTreeMap<&str, usize> =
        bundle.grants.keys().map(|k| (k.as_str(), 0)).collect();
    let mut pub_degree: BTreeMap<&str, usize> = bundle
        .publications
        .keys()
        .map(|k| (k.as_str(), 0))
        .collect();
    for link in &bundle.links {
        if let Some(d) = grant_degree.get_mut(link.grant_id.as_str()) {
            *d += 1;
        }
        if let Some(d) = pub_degree.get_mut(link.pub_id.as_str()) {
            *d += 1;
        }
    }
    let histogram = |degrees: BTreeMap<&str, usize>| {
        let mut h = BTreeMap::new();
        for d in degrees.into_values() {
            *h.entry(d).or_insert(0) += 1;
        }
        h
    };
    CorpusStats {
        grants: bundle.grants.len(),
        publications: bundle.publications.len(),
        links: bundle.links.len(),
        grant_degree_histogram: histogram(grant_degree),
        publication_degree_histogram: histogram(pub_degree),
    }
}
