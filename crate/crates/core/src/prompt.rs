//! Prompt templates and rendering.
//!
//! A template file is a `key: value` header, a `---` line, the body, and
//! optionally a second `---` line followed by the per-example format.
//!
//! Body placeholders: `{examples}`, `{document}`, `{next}` (number of the
//! target block). Example placeholders: `{example_document}`,
//! `{example_query}`, `{bad_query}`, `{good_query}`, `{n}`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Deserialize;

use crate::corpus::{Corpus, Document, RelevantPair};
use crate::error::{Error, Result};
use crate::seed::rng_for;

const PLACEHOLDERS: &[&str] = &[
    "examples",
    "document",
    "next",
    "example_document",
    "example_query",
    "bad_query",
    "good_query",
    "n",
];

const BUNDLED: &[(&str, &str)] = &[
    ("inpars-vanilla", include_str!("../templates/inpars-vanilla.txt")),
    ("inpars-gbq", include_str!("../templates/inpars-gbq.txt")),
    ("inpars-plus", include_str!("../templates/inpars-plus.txt")),
    ("promptagator-scifact", include_str!("../templates/promptagator-scifact.txt")),
    ("promptagator-nfcorpus", include_str!("../templates/promptagator-nfcorpus.txt")),
    ("promptagator-arguana", include_str!("../templates/promptagator-arguana.txt")),
    ("promptagator-msmarco", include_str!("../templates/promptagator-msmarco.txt")),
    ("cot-agent", include_str!("../templates/cot-agent.txt")),
];

const VANILLA_EXAMPLES: &str = include_str!("../templates/msmarco-vanilla.jsonl");
const GBQ_EXAMPLES: &str = include_str!("../templates/gbq-examples.jsonl");

pub fn bundled_template_ids() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(id, _)| *id).filter(|id| *id != "cot-agent")
}

/// Raw split of a template file into header, body and example format.
struct TemplateFile {
    header: BTreeMap<String, String>,
    body: String,
    example_format: Option<String>,
}

fn split_template(source: &str, name: &str) -> Result<TemplateFile> {
    let err = |message: String| Error::Template {
        template: name.to_string(),
        message,
    };
    let mut sections: Vec<Vec<&str>> = vec![Vec::new()];
    for line in source.lines() {
        if line.trim_end() == "---" {
            sections.push(Vec::new());
        } else {
            sections.last_mut().expect("non-empty").push(line);
        }
    }
    if sections.len() < 2 || sections.len() > 3 {
        return Err(err("expected a header, `---`, a body and an optional `---` example section".into()));
    }
    let mut header = BTreeMap::new();
    for line in &sections[0] {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| err(format!("header line without `:`: {line}")))?;
        header.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(TemplateFile {
        header,
        body: sections[1].join("\n"),
        example_format: sections.get(2).map(|s| s.join("\n")),
    })
}

fn parse_stop(value: Option<&String>, name: &str) -> Result<Vec<String>> {
    match value {
        None => Ok(Vec::new()),
        Some(v) => serde_json::from_str(v).map_err(|e| Error::Template {
            template: name.to_string(),
            message: format!("`stop` must be a JSON array of strings: {e}"),
        }),
    }
}

fn check_keys(file: &TemplateFile, allowed: &[&str], name: &str) -> Result<()> {
    for key in file.header.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Template {
                template: name.to_string(),
                message: format!("unknown header key `{key}`"),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub example_format: String,
    pub stop_sequences: Vec<String>,
    pub max_examples: usize,
    /// Marker preceding the final answer in the model output, if any.
    pub answer_marker: Option<String>,
}

impl PromptTemplate {
    pub fn parse(source: &str, name: &str) -> Result<Self> {
        let file = split_template(source, name)?;
        check_keys(&file, &["id", "max_examples", "stop", "marker"], name)?;
        let id = file.header.get("id").cloned().unwrap_or_else(|| name.to_string());
        let max_examples = match file.header.get("max_examples") {
            None => 0,
            Some(v) => v.parse().map_err(|_| Error::Template {
                template: id.clone(),
                message: format!("max_examples must be a count, got `{v}`"),
            })?,
        };
        let template = PromptTemplate {
            stop_sequences: parse_stop(file.header.get("stop"), &id)?,
            answer_marker: file.header.get("marker").cloned(),
            example_format: file.example_format.unwrap_or_default(),
            body: file.body,
            max_examples,
            id,
        };
        template.validate()?;
        Ok(template)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("template");
        Self::parse(&std::fs::read_to_string(path)?, name)
    }

    pub fn bundled(id: &str) -> Result<Self> {
        let (_, source) = BUNDLED
            .iter()
            .find(|(name, _)| *name == id && *name != "cot-agent")
            .ok_or_else(|| Error::invalid(format!("no bundled template `{id}`")))?;
        Self::parse(source, id)
    }

    /// Bundled template id, or else a path to a template file.
    pub fn resolve(id_or_path: &str) -> Result<Self> {
        if BUNDLED.iter().any(|(name, _)| *name == id_or_path) {
            Self::bundled(id_or_path)
        } else {
            Self::load(id_or_path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |message: &str| Error::Template {
            template: self.id.clone(),
            message: message.to_string(),
        };
        if self.body.matches("{document}").count() != 1 {
            return Err(err("body must contain `{document}` exactly once"));
        }
        if self.max_examples > 0 {
            if !self.body.contains("{examples}") {
                return Err(err("templates with max_examples > 0 need `{examples}` in the body"));
            }
            if self.example_format.trim().is_empty() {
                return Err(err("templates with max_examples > 0 need an example section"));
            }
        }
        Ok(())
    }

    /// True when each example block carries a bad and a good question.
    pub fn is_guided_by_bad_question(&self) -> bool {
        self.example_format.contains("{bad_query}") && self.example_format.contains("{good_query}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct FewShotExample {
    #[serde(default)]
    pub doc_id: Option<String>,
    pub document: String,
    pub query: String,
    #[serde(default)]
    pub bad_query: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExampleSet(pub Vec<FewShotExample>);

impl ExampleSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn from_jsonl(source: &str) -> Self {
        ExampleSet(
            source
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).expect("bundled examples parse"))
                .collect(),
        )
    }

    /// The fixed three web-search pairs used by the vanilla template.
    pub fn vanilla() -> Self {
        Self::from_jsonl(VANILLA_EXAMPLES)
    }

    /// The fixed three (bad, good) question examples of the GBQ template.
    pub fn guided_by_bad_question() -> Self {
        Self::from_jsonl(GBQ_EXAMPLES)
    }

    pub fn from_pairs(pairs: &[&RelevantPair]) -> Self {
        ExampleSet(
            pairs
                .iter()
                .map(|p| FewShotExample {
                    doc_id: Some(p.doc.id.clone()),
                    document: p.doc.full_text(),
                    query: p.query.text.clone(),
                    bad_query: None,
                })
                .collect(),
        )
    }
}

/// Draw `k` in-distribution examples without replacement, optionally never
/// using `exclude_doc` (the generation target).
pub fn sample_fewshot_examples(
    pairs: &[RelevantPair],
    k: usize,
    seed: u64,
    exclude_doc: Option<&str>,
) -> Result<ExampleSet> {
    let label = match exclude_doc {
        Some(d) => format!("fewshot/{d}"),
        None => "fewshot".to_string(),
    };
    if k == 0 {
        return Ok(ExampleSet::default());
    }
    let candidates: Vec<&RelevantPair> = pairs
        .iter()
        .filter(|p| exclude_doc.is_none_or(|d| p.doc.id != d))
        .collect();
    if k > candidates.len() {
        return Err(Error::invalid(format!(
            "asked for {k} few-shot examples but only {} pairs are available",
            candidates.len()
        )));
    }
    let mut rng = rng_for(seed, &label);
    let picked: Vec<&RelevantPair> = sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    Ok(ExampleSet::from_pairs(&picked))
}

/// A rendered generation request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub doc_id: String,
    pub text: String,
    pub template_id: String,
    pub stop_sequences: Vec<String>,
    pub answer_marker: Option<String>,
    /// Byte range of the target document inside `text`.
    pub document_span: (usize, usize),
}

impl Prompt {
    pub fn document(&self) -> &str {
        &self.text[self.document_span.0..self.document_span.1]
    }

    /// The prompt with the document removed: the static part of the prompt.
    pub fn prefix(&self) -> String {
        let (start, end) = self.document_span;
        format!("{}{}", &self.text[..start], &self.text[end..])
    }
}

/// Single-pass substitution: inserted values are never re-scanned, so
/// braces inside documents are left alone. Returns the output and the byte
/// span of the `{document}` value, if it was substituted.
fn substitute(
    template_id: &str,
    source: &str,
    values: &[(&str, &str)],
) -> Result<(String, Option<(usize, usize)>)> {
    let mut out = String::with_capacity(source.len() + 256);
    let mut span = None;
    let mut rest = source;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        let name = &after[..name_len];
        if after[name_len..].starts_with('}') && PLACEHOLDERS.contains(&name) {
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Template {
                    template: template_id.to_string(),
                    message: format!("unfilled placeholder `{{{name}}}`"),
                })?;
            if name == "document" {
                span = Some((out.len(), out.len() + value.len()));
            }
            out.push_str(value);
            rest = &after[name_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok((out, span))
}

fn render(template: &PromptTemplate, examples: &ExampleSet, document: &str) -> Result<(String, (usize, usize))> {
    if examples.len() > template.max_examples {
        return Err(Error::Template {
            template: template.id.clone(),
            message: format!("{} examples given, template allows {}", examples.len(), template.max_examples),
        });
    }
    let mut blocks = Vec::with_capacity(examples.len());
    for (i, ex) in examples.0.iter().enumerate() {
        let n = (i + 1).to_string();
        let mut values = vec![
            ("example_document", ex.document.as_str()),
            ("example_query", ex.query.as_str()),
            ("good_query", ex.query.as_str()),
            ("n", n.as_str()),
        ];
        if let Some(bad) = &ex.bad_query {
            values.push(("bad_query", bad.as_str()));
        }
        blocks.push(substitute(&template.id, &template.example_format, &values)?.0);
    }
    // Examples end with a blank line; with none, their line disappears.
    let (joined, body) = if blocks.is_empty() {
        (String::new(), template.body.replacen("{examples}\n", "", 1))
    } else {
        (blocks.join("\n\n") + "\n", template.body.clone())
    };
    let next = (examples.len() + 1).to_string();
    let (text, span) = substitute(
        &template.id,
        &body,
        &[("examples", joined.as_str()), ("document", document), ("next", next.as_str())],
    )?;
    Ok((text, span.expect("validated: body contains {document}")))
}

/// Render `template` for `doc` with the given few-shot examples.
pub fn build_prompt(template: &PromptTemplate, examples: &ExampleSet, doc: &Document) -> Result<Prompt> {
    let document = doc.full_text();
    let (text, document_span) = render(template, examples, &document)?;
    Ok(Prompt {
        doc_id: doc.id.clone(),
        text,
        template_id: template.id.clone(),
        stop_sequences: template.stop_sequences.clone(),
        answer_marker: template.answer_marker.clone(),
        document_span,
    })
}

/// Agent-style instructions: a role, a stepwise-reasoning cue, and the
/// marker after which the single final query is written.
#[derive(Debug, Clone, PartialEq)]
pub struct InstructionProfile {
    pub id: String,
    pub role: String,
    pub task: String,
    pub reasoning_cue: String,
    pub answer_marker: String,
    pub stop_sequences: Vec<String>,
}

impl Default for InstructionProfile {
    fn default() -> Self {
        let (_, source) = BUNDLED.iter().find(|(id, _)| *id == "cot-agent").expect("bundled");
        Self::parse(source, "cot-agent").expect("bundled cot-agent profile parses")
    }
}

impl InstructionProfile {
    pub fn parse(source: &str, name: &str) -> Result<Self> {
        let file = split_template(source, name)?;
        check_keys(&file, &["id", "role", "reasoning", "marker", "stop"], name)?;
        let get = |k: &str| file.header.get(k).cloned().unwrap_or_default();
        let stop = match file.header.get("stop") {
            None => vec!["\n\n".to_string()],
            some => parse_stop(some, name)?,
        };
        let marker = file.header.get("marker").cloned().unwrap_or_else(|| "Query:".to_string());
        Ok(InstructionProfile {
            id: file.header.get("id").cloned().unwrap_or_else(|| name.to_string()),
            role: get("role"),
            task: file.body.trim().to_string(),
            reasoning_cue: get("reasoning"),
            answer_marker: marker,
            stop_sequences: stop,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("profile");
        Self::parse(&std::fs::read_to_string(path)?, name)
    }

    fn to_template(&self) -> Result<PromptTemplate> {
        let err = |message: &str| Error::Template {
            template: self.id.clone(),
            message: message.to_string(),
        };
        if self.role.trim().is_empty() {
            return Err(err("instruction profile needs role text"));
        }
        if self.reasoning_cue.trim().is_empty() {
            return Err(err("instruction profile needs a reasoning cue"));
        }
        if self.answer_marker.trim().is_empty() {
            return Err(err("instruction profile needs a final-answer marker"));
        }
        let mut body = format!("{}\n", self.role.trim());
        if !self.task.is_empty() {
            body.push_str(&format!("{}\n", self.task));
        }
        body.push_str(&format!(
            "The final answer marker is `{marker}`.\n\nDocument: {{document}}\n\nReasoning: {cue}",
            marker = self.answer_marker,
            cue = self.reasoning_cue.trim()
        ));
        let template = PromptTemplate {
            id: self.id.clone(),
            body,
            example_format: String::new(),
            stop_sequences: self.stop_sequences.clone(),
            max_examples: 0,
            answer_marker: Some(self.answer_marker.clone()),
        };
        template.validate()?;
        Ok(template)
    }
}

pub fn build_cot_prompt(doc: &Document, profile: &InstructionProfile) -> Result<Prompt> {
    build_prompt(&profile.to_template()?, &ExampleSet::default(), doc)
}

/// Where each document's few-shot examples come from.
#[derive(Debug, Clone)]
pub enum ExamplePolicy {
    None,
    /// Same examples in every prompt.
    Fixed(ExampleSet),
    /// `k` examples per document drawn from `pairs`, never from the target
    /// document itself.
    Sampled { pairs: Vec<RelevantPair>, k: usize, seed: u64 },
}

impl ExamplePolicy {
    pub fn examples_for(&self, doc_id: &str) -> Result<ExampleSet> {
        match self {
            ExamplePolicy::None => Ok(ExampleSet::default()),
            ExamplePolicy::Fixed(set) => Ok(set.clone()),
            ExamplePolicy::Sampled { pairs, k, seed } => sample_fewshot_examples(pairs, *k, *seed, Some(doc_id)),
        }
    }
}

/// One prompt per corpus document, in doc-id order, built on `workers`
/// threads. The output does not depend on `workers`.
pub fn build_prompts_parallel(
    template: &PromptTemplate,
    policy: &ExamplePolicy,
    corpus: &Corpus,
    workers: usize,
) -> Result<Vec<Prompt>> {
    if workers == 0 {
        return Err(Error::invalid("workers must be at least 1"));
    }
    let docs: Vec<&Document> = corpus.iter().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| {
        docs.par_iter()
            .map(|doc| {
                policy
                    .examples_for(&doc.id)
                    .and_then(|ex| build_prompt(template, &ex, doc))
                    .map_err(|e| Error::ForDocument {
                        doc_id: doc.id.clone(),
                        source: Box::new(e),
                    })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Query;

    fn doc() -> Document {
        Document::new("d1", "", "Myelodysplastic syndromes are age-dependent stem cell malignancies.")
    }

    fn pairs(n: usize) -> Vec<RelevantPair> {
        (0..n)
            .map(|i| RelevantPair {
                doc: Document::new(format!("d{i}"), "", format!("document number {i}")),
                query: Query::new(format!("q{i}"), format!("query {i}")),
            })
            .collect()
    }

    #[test]
    fn examples_end_with_blank_line() {
        let t = PromptTemplate::bundled("inpars-vanilla").unwrap();
        let p = build_prompt(&t, &ExampleSet::vanilla(), &doc()).unwrap();
        assert_eq!(p.text.matches("\n\nExample ").count(), 3);
        let bare = build_prompt(&t, &ExampleSet::default(), &doc()).unwrap();
        assert!(bare.text.starts_with("Example 1:\nDocument: "), "{}", bare.text);
    }

    #[test]
    fn bundled_templates_parse() {
        for id in bundled_template_ids() {
            let t = PromptTemplate::bundled(id).unwrap();
            assert_eq!(t.id, id);
        }
        assert_eq!(PromptTemplate::bundled("inpars-vanilla").unwrap().max_examples, 3);
        assert_eq!(PromptTemplate::bundled("promptagator-scifact").unwrap().max_examples, 8);
        assert!(PromptTemplate::bundled("inpars-gbq").unwrap().is_guided_by_bad_question());
        assert!(PromptTemplate::bundled("nope").is_err());
    }

    #[test]
    fn missing_document_placeholder() {
        let err = PromptTemplate::parse("id: x\n---\nno placeholder here\n", "x").unwrap_err();
        assert!(err.to_string().contains("{document}"));
        assert!(PromptTemplate::parse("id: x\nmax_examples: 2\n---\n{document}\n---\n{example_query}", "x").is_err());
        assert!(PromptTemplate::parse("id: x\nbogus: 1\n---\n{document}", "x").is_err());
        assert!(PromptTemplate::parse("id: x\n---\n{document} {document}", "x").is_err());
    }

    #[test]
    fn vanilla_prompt_structure() {
        let t = PromptTemplate::bundled("inpars-vanilla").unwrap();
        let p = build_prompt(&t, &ExampleSet::vanilla(), &doc()).unwrap();
        assert!(p.text.ends_with(&format!("Document: {}\nRelevant Query:", doc().full_text())));
        assert_eq!(p.text.matches("Relevant Query:").count(), 4);
        assert!(p.text.contains("Example 4:"));
        assert_eq!(p.document(), doc().full_text());
        assert_eq!(p.stop_sequences, vec!["\n"]);
        for name in PLACEHOLDERS {
            assert!(!p.text.contains(&format!("{{{name}}}")));
        }
    }

    #[test]
    fn gbq_blocks_have_both_slots() {
        let t = PromptTemplate::bundled("inpars-gbq").unwrap();
        let p = build_prompt(&t, &ExampleSet::guided_by_bad_question(), &doc()).unwrap();
        assert_eq!(p.text.matches("Bad Question:").count(), 3);
        assert_eq!(p.text.matches("Good Question:").count(), 4);
        // GBQ examples without a bad question cannot fill the template.
        let err = build_prompt(&t, &ExampleSet::vanilla(), &doc()).unwrap_err();
        assert!(err.to_string().contains("unfilled placeholder"));
    }

    #[test]
    fn zero_examples() {
        let t = PromptTemplate::parse("id: bare\n---\nWrite a query.\nDocument: {document}\nQuery:", "bare").unwrap();
        let p = build_prompt(&t, &ExampleSet::default(), &doc()).unwrap();
        assert_eq!(p.text, format!("Write a query.\nDocument: {}\nQuery:", doc().full_text()));
        assert!(build_prompt(&t, &ExampleSet::vanilla(), &doc()).is_err());
    }

    #[test]
    fn braces_in_documents_are_not_placeholders() {
        let t = PromptTemplate::bundled("inpars-plus").unwrap();
        let d = Document::new("x", "", "set {document} and {examples} literally");
        let p = build_prompt(&t, &ExampleSet::default(), &d).unwrap();
        assert!(p.text.contains("set {document} and {examples} literally"));
    }

    #[test]
    fn prefix_is_document_independent() {
        let t = PromptTemplate::bundled("inpars-plus").unwrap();
        let ex = sample_fewshot_examples(&pairs(10), 3, 1, Some("d1")).unwrap();
        let a = build_prompt(&t, &ex, &doc()).unwrap();
        let b = build_prompt(&t, &ex, &Document::new("d1", "Other", "entirely different text")).unwrap();
        assert_eq!(a.prefix(), b.prefix());
        let (empty, _) = render(&t, &ex, "").unwrap();
        assert_eq!(a.prefix(), empty);
    }

    #[test]
    fn fewshot_sampling() {
        let p = pairs(10);
        assert!(sample_fewshot_examples(&p, 0, 1, None).unwrap().is_empty());
        assert_eq!(
            sample_fewshot_examples(&p, 3, 5, None).unwrap(),
            sample_fewshot_examples(&p, 3, 5, None).unwrap()
        );
        for seed in 0..50 {
            let ex = sample_fewshot_examples(&p, 9, seed, Some("d7")).unwrap();
            assert!(ex.0.iter().all(|e| e.doc_id.as_deref() != Some("d7")));
        }
        assert!(sample_fewshot_examples(&p, 10, 1, Some("d7")).is_err());
        assert!(sample_fewshot_examples(&p, 11, 1, None).is_err());
    }

    #[test]
    fn cot_prompt() {
        let profile = InstructionProfile::default();
        let p = build_cot_prompt(&doc(), &profile).unwrap();
        assert!(p.text.contains("skilled research assistant"));
        assert!(p.text.contains("Query:"));
        assert!(p.text.contains(&doc().full_text()));
        assert_eq!(p.stop_sequences, vec!["\n\n"]);
        assert_eq!(p.answer_marker.as_deref(), Some("Query:"));

        let blank = InstructionProfile { role: "  ".into(), ..profile };
        assert!(build_cot_prompt(&doc(), &blank).is_err());
    }

    #[test]
    fn parallel_matches_serial() {
        let corpus = Corpus::from_documents((0..200).map(|i| Document::new(format!("doc{i:04}"), "", format!("text {i} about things")))).unwrap();
        let t = PromptTemplate::bundled("inpars-plus").unwrap();
        let policy = ExamplePolicy::Sampled { pairs: pairs(20), k: 3, seed: 9 };
        let one = build_prompts_parallel(&t, &policy, &corpus, 1).unwrap();
        let eight = build_prompts_parallel(&t, &policy, &corpus, 8).unwrap();
        assert_eq!(one, eight);
        assert_eq!(one.len(), 200);
        assert!(one.windows(2).all(|w| w[0].doc_id < w[1].doc_id));
        assert!(build_prompts_parallel(&t, &policy, &Corpus::default(), 4).unwrap().is_empty());
        assert!(build_prompts_parallel(&t, &policy, &corpus, 0).is_err());
    }

    #[test]
    fn per_document_errors_carry_the_id() {
        let corpus = Corpus::from_documents([Document::new("only", "", "text")]).unwrap();
        let t = PromptTemplate::bundled("inpars-plus").unwrap();
        let policy = ExamplePolicy::Sampled { pairs: pairs(2), k: 5, seed: 0 };
        let err = build_prompts_parallel(&t, &policy, &corpus, 2).unwrap_err();
        assert!(err.to_string().contains("only"), "{err}");
    }
}
