//! TREC run files: `qid Q0 docid rank score tag`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    /// 1-based.
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Ranked lists grouped by query id. Each list is in rank order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    by_query: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn from_entries(entries: impl IntoIterator<Item = RunEntry>) -> Result<Self> {
        let mut by_query: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
        for e in entries {
            by_query.entry(e.query_id.clone()).or_default().push(e);
        }
        for list in by_query.values_mut() {
            list.sort_by_key(|e| e.rank);
        }
        let run = Run { by_query };
        run.validate()?;
        Ok(run)
    }

    /// Build one query's list from `(doc_id, score)` pairs already in rank order.
    pub fn push_ranked(&mut self, query_id: &str, ranked: &[(String, f64)], tag: &str) {
        let list = ranked
            .iter()
            .enumerate()
            .map(|(i, (doc, score))| RunEntry {
                query_id: query_id.to_string(),
                doc_id: doc.clone(),
                rank: i + 1,
                score: *score,
                tag: tag.to_string(),
            })
            .collect();
        self.by_query.insert(query_id.to_string(), list);
    }

    pub fn get(&self, query_id: &str) -> Option<&[RunEntry]> {
        self.by_query.get(query_id).map(Vec::as_slice)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&String, &Vec<RunEntry>)> {
        self.by_query.iter()
    }

    pub fn entries(&self) -> impl Iterator<Item = &RunEntry> {
        self.by_query.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.by_query.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ranks contiguous from 1, scores non-increasing with rank.
    pub fn validate(&self) -> Result<()> {
        for (qid, list) in &self.by_query {
            check_ranked(qid, list.iter())?;
        }
        Ok(())
    }
}

fn check_ranked<'a>(qid: &str, list: impl Iterator<Item = &'a RunEntry>) -> Result<()> {
    let mut prev: Option<f64> = None;
    for (i, e) in list.enumerate() {
        if e.rank != i + 1 {
            return Err(Error::invalid(format!(
                "query `{qid}`: rank {} at position {} (ranks must be contiguous from 1)",
                e.rank,
                i + 1
            )));
        }
        if !e.score.is_finite() {
            return Err(Error::invalid(format!("query `{qid}`: non-finite score")));
        }
        if let Some(p) = prev {
            if e.score > p {
                return Err(Error::invalid(format!(
                    "query `{qid}`: entries not sorted by descending score at rank {}",
                    e.rank
                )));
            }
        }
        prev = Some(e.score);
    }
    Ok(())
}

/// Write entries in the given order. Each query's entries must appear in
/// rank order with non-increasing scores.
pub fn write_run(path: impl AsRef<Path>, entries: &[RunEntry]) -> Result<()> {
    let mut grouped: BTreeMap<&str, Vec<&RunEntry>> = BTreeMap::new();
    for e in entries {
        grouped.entry(&e.query_id).or_default().push(e);
    }
    for (qid, list) in &grouped {
        check_ranked(qid, list.iter().copied())?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for e in entries {
        writeln!(out, "{} Q0 {} {} {:.6} {}", e.query_id, e.doc_id, e.rank, e.score, e.tag)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<RunEntry>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::parse(path, i + 1, format!("expected 6 columns, found {}", cols.len())));
        }
        let rank = cols[3]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad rank `{}`", cols[3])))?;
        let score = cols[4]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad score `{}`", cols[4])))?;
        entries.push(RunEntry {
            query_id: cols[0].to_string(),
            doc_id: cols[2].to_string(),
            rank,
            score,
            tag: cols[5].to_string(),
        });
    }
    Ok(entries)
}

impl Run {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let entries: Vec<RunEntry> = self.entries().cloned().collect();
        write_run(path, &entries)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Run::from_entries(read_run(path)?)
    }
}
