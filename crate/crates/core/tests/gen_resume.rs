use std::fs::{self, OpenOptions};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use qgen_core::corpus::{Corpus, Document};
use qgen_core::generate::{
    generate_batch, plan_round_robin, read_checkpoint, write_generations, Backend, BatchOptions, Completion, CompletionRequest,
    GenerationParams, MockBackend, MockSpec, PlannedPrompt, RetryPolicy,
};
use qgen_core::prompt::{build_prompts_parallel, ExamplePolicy, ExampleSet, PromptTemplate};
use qgen_core::BackendError;

fn corpus(n: usize) -> Corpus {
    Corpus::from_documents((0..n).map(|i| {
        Document::new(
            format!("doc{i:05}"),
            format!("Title {i}"),
            format!("Measurements of marker {i} in cohort {} showed changes", i % 7),
        )
    }))
    .unwrap()
}

fn plan(docs: usize, total: usize) -> Vec<PlannedPrompt> {
    let template = PromptTemplate::bundled("inpars-vanilla").unwrap();
    let prompts = build_prompts_parallel(&template, &ExamplePolicy::Fixed(ExampleSet::vanilla()), &corpus(docs), 4).unwrap();
    assert_eq!(prompts.len(), docs);
    plan_round_robin(&prompts, Some(total))
}

fn options(checkpoint: std::path::PathBuf, concurrency: usize) -> BatchOptions {
    BatchOptions {
        concurrency,
        checkpoint,
        retry: RetryPolicy {
            attempts: 1,
            base_delay: Duration::ZERO,
        },
    }
}

fn mock() -> MockBackend {
    MockBackend::new(MockSpec {
        noise_fraction: 0.2,
        noise_seed: 1,
        population: 100,
        ..Default::default()
    })
}

/// Serves `budget` requests, then fails every later one like a dead server.
struct Dying {
    inner: MockBackend,
    budget: usize,
    served: AtomicUsize,
}

impl Backend for Dying {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        if self.served.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(BackendError::Protocol("gone".into()));
        }
        self.inner.complete(request)
    }

    fn tag(&self) -> String {
        self.inner.tag()
    }
}

fn reference_output(plan: &[PlannedPrompt], dir: &std::path::Path) -> Vec<u8> {
    let params = GenerationParams::default();
    let out = generate_batch(plan, &params, &mock(), &options(dir.join("ref.ckpt"), 4), |_| {}).unwrap();
    assert!(out.failures.is_empty());
    write_generations(dir.join("ref.jsonl"), &out.generations).unwrap();
    fs::read(dir.join("ref.jsonl")).unwrap()
}

#[test]
fn interrupted_run_resumes_to_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan(30, 100);
    let want = reference_output(&plan, dir.path());
    let params = GenerationParams::default();
    let ckpt = dir.path().join("run.ckpt");

    let dying = Dying {
        inner: mock(),
        budget: 40,
        served: AtomicUsize::new(0),
    };
    let first = generate_batch(&plan, &params, &dying, &options(ckpt.clone(), 4), |_| {}).unwrap();
    assert_eq!(first.generations.len(), 40);
    assert_eq!(first.failures.len(), 60);
    assert_eq!(read_checkpoint(&ckpt).unwrap().0.len(), 40);

    let mut emitted = 0;
    let second = generate_batch(&plan, &params, &mock(), &options(ckpt.clone(), 3), |_| emitted += 1).unwrap();
    assert_eq!(second.resumed, 40);
    assert_eq!(emitted, 60);
    write_generations(dir.path().join("run.jsonl"), &second.generations).unwrap();
    assert_eq!(fs::read(dir.path().join("run.jsonl")).unwrap(), want);
}

#[test]
fn torn_and_truncated_checkpoints_resume_to_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan(30, 100);
    let want = reference_output(&plan, dir.path());
    let params = GenerationParams::default();
    let full = fs::read(dir.path().join("ref.ckpt")).unwrap();
    let line_ends: Vec<usize> = full.iter().enumerate().filter(|(_, b)| **b == b'\n').map(|(i, _)| i + 1).collect();
    assert_eq!(line_ends.len(), 100);

    // 40 whole records, then 40 whole records plus half of the next one
    let cut_clean = line_ends[39];
    let cut_torn = cut_clean + (line_ends[40] - cut_clean) / 2;
    for (name, cut) in [("clean", cut_clean), ("torn", cut_torn)] {
        let ckpt = dir.path().join(format!("{name}.ckpt"));
        fs::write(&ckpt, &full[..cut]).unwrap();
        let out = generate_batch(&plan, &params, &mock(), &options(ckpt.clone(), 4), |_| {}).unwrap();
        assert_eq!(out.resumed, 40, "{name}");
        let path = dir.path().join(format!("{name}.jsonl"));
        write_generations(&path, &out.generations).unwrap();
        assert_eq!(fs::read(&path).unwrap(), want, "{name}");
        // the checkpoint holds each seq exactly once
        let (records, _) = read_checkpoint(&ckpt).unwrap();
        let mut seqs: Vec<u64> = records.iter().map(|g| g.seq).collect();
        seqs.sort_unstable();
        assert_eq!(seqs, (0..100).collect::<Vec<_>>());
    }

    // a complete checkpoint means nothing left to do
    let ckpt = dir.path().join("complete.ckpt");
    fs::write(&ckpt, &full).unwrap();
    let mut emitted = 0;
    let out = generate_batch(&plan, &params, &mock(), &options(ckpt.clone(), 4), |_| emitted += 1).unwrap();
    assert_eq!((out.resumed, emitted), (100, 0));

    // stray bytes after a crash in the middle of a write
    let mut f = OpenOptions::new().append(true).open(&ckpt).unwrap();
    f.write_all(b"{\"doc_id\":\"doc0").unwrap();
    drop(f);
    let out = generate_batch(&plan, &params, &mock(), &options(ckpt, 4), |_| {}).unwrap();
    assert_eq!(out.resumed, 100);
}

#[test]
fn large_plan_over_many_short_documents() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan(5183, 100_000);
    let distinct: std::collections::HashSet<&str> = plan.iter().map(|p| p.prompt.doc_id.as_str()).collect();
    assert_eq!(distinct.len(), 5183);
    let out = generate_batch(
        &plan,
        &GenerationParams::default(),
        &MockBackend::clean(),
        &options(dir.path().join("big.ckpt"), 8),
        |_| {},
    )
    .unwrap();
    assert_eq!(out.generations.len(), 100_000);
    assert!(out.failures.is_empty());
    let docs: std::collections::HashSet<&str> = out.generations.iter().map(|g| g.doc_id.as_str()).collect();
    assert_eq!(docs.len(), 5183);
}

#[test]
fn output_does_not_depend_on_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan(30, 200);
    let params = GenerationParams::default();
    let one = generate_batch(&plan, &params, &mock(), &options(dir.path().join("one.ckpt"), 1), |_| {}).unwrap();
    let many = generate_batch(&plan, &params, &mock(), &options(dir.path().join("many.ckpt"), 16), |_| {}).unwrap();
    assert!(one.failures.is_empty() && many.failures.is_empty());
    assert_eq!(one.generations.len(), 200);
    assert_eq!(one.generations, many.generations);
}
