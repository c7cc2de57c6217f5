use std::collections::HashMap;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Lowercase, split on anything that is not alphanumeric, drop empties.
/// No stemming, no stop words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Term → multiplicity, in first-occurrence order.
pub(crate) fn term_counts(tokens: &[String]) -> Vec<(&str, u32)> {
    let mut order: Vec<(&str, u32)> = Vec::new();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        match pos.get(t.as_str()) {
            Some(&i) => order[i].1 += 1,
            None => {
                pos.insert(t, order.len());
                order.push((t, 1));
            }
        }
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !self.k1.is_finite() || self.k1 <= 0.0 {
            return Err(Error::invalid(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::invalid(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Inverted index over a corpus. Document slots follow ascending doc id,
/// so ordering by slot is ordering by id.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    slots: HashMap<String, u32>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    postings: HashMap<String, Vec<Posting>>,
}

impl Bm25Index {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(Error::invalid("cannot index an empty corpus"));
        }
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut slots = HashMap::with_capacity(corpus.len());
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        for (slot, doc) in corpus.iter().enumerate() {
            let slot = slot as u32;
            let tokens = tokenize(&doc.full_text());
            doc_lengths.push(tokens.len() as u32);
            for (term, tf) in term_counts(&tokens) {
                postings.entry(term.to_owned()).or_default().push(Posting { doc: slot, tf });
            }
            slots.insert(doc.id.clone(), slot);
            doc_ids.push(doc.id.clone());
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / doc_lengths.len() as f64;
        Ok(Bm25Index {
            params,
            doc_ids,
            slots,
            doc_lengths,
            avg_doc_len,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u32> {
        self.slots.get(doc_id).map(|&s| self.doc_lengths[s as usize])
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.slots.contains_key(doc_id)
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `(doc_id, tf)` for every document containing `term`.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings.get(term).map_or_else(Vec::new, |list| {
            list.iter()
                .map(|p| (self.doc_ids[p.doc as usize].as_str(), p.tf))
                .collect()
        })
    }

    /// ln(1 + (N − df + 0.5) / (df + 0.5)); always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * doc_len as f64 / self.avg_doc_len;
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    fn slot(&self, doc_id: &str) -> Result<u32> {
        self.slots
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))
    }

    pub fn score(&self, query: &str, doc_id: &str) -> Result<f64> {
        let slot = self.slot(doc_id)?;
        let tokens = tokenize(query);
        let doc_len = self.doc_lengths[slot as usize];
        let mut score = 0.0;
        for (term, qtf) in term_counts(&tokens) {
            let Some(list) = self.postings.get(term) else { continue };
            if let Ok(i) = list.binary_search_by_key(&slot, |p| p.doc) {
                score += qtf as f64 * self.idf(term) * self.term_weight(list[i].tf, doc_len);
            }
        }
        Ok(score)
    }

    /// Scores of every document sharing at least one term with the query,
    /// as `(slot, score)` in ascending slot order.
    fn matching(&self, query: &str) -> Vec<(u32, f64)> {
        let tokens = tokenize(query);
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for (term, qtf) in term_counts(&tokens) {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for p in list {
                *acc.entry(p.doc).or_insert(0.0) +=
                    qtf as f64 * idf * self.term_weight(p.tf, self.doc_lengths[p.doc as usize]);
            }
        }
        let mut out: Vec<(u32, f64)> = acc.into_iter().collect();
        out.sort_unstable_by_key(|&(slot, _)| slot);
        out
    }

    /// Raw BM25 of every corpus document, in doc-id order.
    pub fn score_all(&self, query: &str) -> Vec<f64> {
        let mut all = vec![0.0; self.doc_count()];
        for (slot, s) in self.matching(query) {
            all[slot as usize] = s;
        }
        all
    }

    /// Top `k` documents with positive score, by descending score then
    /// ascending doc id.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut hits: Vec<(u32, f64)> = self.matching(query).into_iter().filter(|&(_, s)| s > 0.0).collect();
        let order = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(order);
        hits.into_iter()
            .map(|(slot, s)| (self.doc_ids[slot as usize].clone(), s))
            .collect()
    }

    /// Probability of `doc_id` under a softmax over the BM25 scores of the
    /// whole corpus. Non-matching documents take part with score 0.
    pub fn softmax_score(&self, query: &str, doc_id: &str, temperature: f64) -> Result<f64> {
        let slot = self.slot(doc_id)?;
        check_temperature(temperature)?;
        let matched = self.matching(query);
        let zeros = self.doc_count() - matched.len();
        let mut max = matched.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
        if zeros > 0 {
            max = max.max(0.0);
        }
        let mut z = zeros as f64 * ((0.0 - max) / temperature).exp();
        let mut target = (0.0 - max) / temperature;
        for &(s_slot, s) in &matched {
            let e = (s - max) / temperature;
            z += e.exp();
            if s_slot == slot {
                target = e;
            }
        }
        Ok((target.exp() / z).clamp(0.0, 1.0))
    }

    /// The full softmax distribution over the corpus, in doc-id order.
    pub fn softmax_distribution(&self, query: &str, temperature: f64) -> Result<Vec<f64>> {
        check_temperature(temperature)?;
        let scores = self.score_all(query);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / z).collect())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("softmax temperature must be > 0, got {t}")))
    }
}
