//! Fixtures shared by the benchmarks.

use std::path::{Path, PathBuf};

use qgen_core::corpus::{load_corpus, load_queries, Corpus, Document, QuerySet};

pub fn mini_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mini")
}

/// The bundled mini corpus repeated `copies` times under fresh ids, so
/// index sizes can be scaled without shipping more data.
pub fn replicated_corpus(copies: usize) -> Corpus {
    let base = load_corpus(mini_dir().join("corpus.jsonl")).expect("bundled corpus");
    Corpus::from_documents(
        (0..copies).flat_map(|c| base.iter().map(move |d| Document::new(format!("{}-{c}", d.id), d.title.clone(), d.text.clone()))),
    )
    .expect("unique ids")
}

pub fn mini_queries() -> QuerySet {
    load_queries(mini_dir().join("queries.jsonl")).expect("bundled queries")
}
