//! BEIR-layout dataset loading: corpora, queries, qrels, and relevant-pair
//! sampling.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// Text used by every downstream stage: `title + " " + text` when the
    /// title is non-empty, the bare text otherwise.
    pub fn full_text(&self) -> String {
        if self.title.trim().is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Qrel {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u32,
}

/// A positively judged (document, query) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevantPair {
    pub doc: Document,
    pub query: Query,
}

/// Documents keyed (and iterated) by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: BTreeMap<String, Document>,
}

impl Corpus {
    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for doc in docs {
            corpus.insert(doc)?;
        }
        Ok(corpus)
    }

    pub fn insert(&mut self, doc: Document) -> Result<()> {
        if doc.id.is_empty() {
            return Err(Error::invalid("document id is empty"));
        }
        if doc.full_text().trim().is_empty() {
            return Err(Error::invalid(format!("document `{}` has no text", doc.id)));
        }
        if self.docs.contains_key(&doc.id) {
            return Err(Error::DuplicateId(doc.id));
        }
        self.docs.insert(doc.id.clone(), doc);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.docs.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Documents in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuerySet {
    queries: BTreeMap<String, Query>,
}

impl QuerySet {
    pub fn from_queries(queries: impl IntoIterator<Item = Query>) -> Result<Self> {
        let mut set = QuerySet::default();
        for q in queries {
            if q.text.trim().is_empty() {
                return Err(Error::invalid(format!("query `{}` has empty text", q.id)));
            }
            if set.queries.contains_key(&q.id) {
                return Err(Error::DuplicateId(q.id));
            }
            set.queries.insert(q.id.clone(), q);
        }
        Ok(set)
    }

    pub fn get(&self, id: &str) -> Option<&Query> {
        self.queries.get(id)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Query> {
        self.queries.values()
    }

    /// Restrict to the ids present in `qrels` (e.g. the test split).
    pub fn restricted_to(&self, qrels: &QrelSet) -> QuerySet {
        QuerySet {
            queries: self
                .queries
                .iter()
                .filter(|(id, _)| qrels.judged(id).is_some())
                .map(|(id, q)| (id.clone(), q.clone()))
                .collect(),
        }
    }
}

/// Graded judgments: query id → doc id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelSet {
    by_query: BTreeMap<String, BTreeMap<String, u32>>,
}

/// Outcome of cross-checking qrels against the loaded corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelCheck {
    pub dangling_docs: usize,
}

impl QrelSet {
    pub fn from_qrels(qrels: impl IntoIterator<Item = Qrel>) -> Result<Self> {
        let mut set = QrelSet::default();
        for q in qrels {
            let judged = set.by_query.entry(q.query_id.clone()).or_default();
            if judged.insert(q.doc_id.clone(), q.grade).is_some() {
                return Err(Error::DuplicateId(format!("{}/{}", q.query_id, q.doc_id)));
            }
        }
        Ok(set)
    }

    pub fn judged(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.by_query.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.by_query
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &String> {
        self.by_query.keys()
    }

    pub fn num_queries(&self) -> usize {
        self.by_query.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = Qrel> + '_ {
        self.by_query.iter().flat_map(|(q, docs)| {
            docs.iter().map(move |(d, g)| Qrel {
                query_id: q.clone(),
                doc_id: d.clone(),
                grade: *g,
            })
        })
    }

    pub fn positives(&self) -> impl Iterator<Item = Qrel> + '_ {
        self.iter().filter(|q| q.grade >= 1)
    }

    /// Every query id must exist in `queries`; doc ids absent from
    /// `corpus` are tolerated and counted.
    pub fn check(&self, queries: &QuerySet, corpus: &Corpus) -> Result<QrelCheck> {
        let mut report = QrelCheck::default();
        for (qid, docs) in &self.by_query {
            if queries.get(qid).is_none() {
                return Err(Error::invalid(format!("qrels reference unknown query `{qid}`")));
            }
            report.dangling_docs += docs.keys().filter(|d| !corpus.contains(d)).count();
        }
        if report.dangling_docs > 0 {
            log::warn!("qrels reference {} documents absent from the corpus", report.dangling_docs);
        }
        Ok(report)
    }
}

#[derive(Deserialize)]
struct RawDocument {
    #[serde(rename = "_id")]
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

#[derive(Deserialize)]
struct RawQuery {
    #[serde(rename = "_id")]
    id: String,
    text: String,
}

fn for_each_line(path: &Path, mut f: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    let reader = BufReader::new(File::open(path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line)?;
    }
    Ok(())
}

/// Load a BEIR `corpus.jsonl`.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut corpus = Corpus::default();
    for_each_line(path, |line_no, line| {
        let raw: RawDocument =
            serde_json::from_str(line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        corpus
            .insert(Document::new(raw.id, raw.title, raw.text))
            .map_err(|e| Error::parse(path, line_no, e.to_string()))
    })?;
    log::info!("loaded {} documents from {}", corpus.len(), path.display());
    Ok(corpus)
}

/// Load a BEIR `queries.jsonl`.
pub fn load_queries(path: impl AsRef<Path>) -> Result<QuerySet> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for_each_line(path, |line_no, line| {
        let raw: RawQuery =
            serde_json::from_str(line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::parse(path, line_no, format!("duplicate id `{}`", raw.id)));
        }
        queries.push(Query::new(raw.id, raw.text));
        Ok(())
    })?;
    QuerySet::from_queries(queries)
}

/// Load a BEIR qrels TSV (`query-id<TAB>corpus-id<TAB>score`). A header on
/// the first line is detected by its non-numeric score column and skipped.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<QrelSet> {
    let path = path.as_ref();
    let mut qrels = Vec::new();
    let mut first = true;
    for_each_line(path, |line_no, line| {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let is_first = std::mem::replace(&mut first, false);
        if cols.len() < 3 {
            return Err(Error::parse(path, line_no, format!("expected 3 columns, found {}", cols.len())));
        }
        let grade = match cols[2].parse::<i64>() {
            Ok(g) => g,
            Err(_) if is_first => return Ok(()),
            Err(_) => {
                return Err(Error::parse(path, line_no, format!("non-integer grade `{}`", cols[2])))
            }
        };
        if grade < 0 {
            return Err(Error::parse(path, line_no, format!("negative grade {grade}")));
        }
        qrels.push(Qrel {
            query_id: cols[0].to_string(),
            doc_id: cols[1].to_string(),
            grade: grade as u32,
        });
        Ok(())
    })?;
    QrelSet::from_qrels(qrels)
}

/// Draw up to `n` relevant (document, query) pairs from the positive qrels.
///
/// Pairs are taken in rounds: each round visits every document that still
/// has unused positive queries, in a seeded order, and takes one of them.
/// The first round therefore covers as many distinct documents as possible
/// before any document contributes a second pair. Qrels whose query or
/// document is missing from the loaded sets are not available.
pub fn sample_relevant_pairs(
    corpus: &Corpus,
    queries: &QuerySet,
    qrels: &QrelSet,
    n: usize,
    seed: u64,
) -> Result<Vec<RelevantPair>> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut by_doc: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (qid, docs) in &qrels.by_query {
        if queries.get(qid).is_none() {
            continue;
        }
        for (did, grade) in docs {
            if *grade >= 1 && corpus.contains(did) {
                by_doc.entry(did.as_str()).or_default().push(qid.as_str());
            }
        }
    }
    if by_doc.is_empty() {
        return Err(Error::invalid("no positive qrels to sample from"));
    }

    let mut rng = rng_for(seed, "relevant-pairs");
    let mut pools: Vec<(&str, Vec<&str>)> = by_doc.into_iter().collect();
    for (_, qids) in pools.iter_mut() {
        qids.shuffle(&mut rng);
    }
    pools.shuffle(&mut rng);

    let mut out = Vec::new();
    while out.len() < n && !pools.is_empty() {
        for (did, qids) in pools.iter_mut() {
            if out.len() == n {
                break;
            }
            if let Some(qid) = qids.pop() {
                out.push(RelevantPair {
                    doc: corpus.get(did).expect("filtered above").clone(),
                    query: queries.get(qid).expect("filtered above").clone(),
                });
            }
        }
        pools.retain(|(_, qids)| !qids.is_empty());
    }
    Ok(out)
}
