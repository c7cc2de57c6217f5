//! Bounded-concurrency batch generation with an append-only checkpoint.
//!
//! Each finished generation is appended to the checkpoint and flushed
//! before it is handed to the caller. A restarted run reads the checkpoint,
//! skips every sequence number already present, and finishes the rest.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded};
use serde::{Deserialize, Serialize};

use super::{generate, Backend, Generation, GenerationParams};
use crate::error::{BackendError, Error, Result};
use crate::prompt::Prompt;

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPrompt {
    pub seq: u64,
    pub prompt: Prompt,
}

/// Cycle through `prompts` until `total` requests are planned (defaults to
/// one per prompt). Sequence numbers are the plan positions.
pub fn plan_round_robin(prompts: &[Prompt], total: Option<usize>) -> Vec<PlannedPrompt> {
    if prompts.is_empty() {
        return Vec::new();
    }
    let total = total.unwrap_or(prompts.len());
    (0..total)
        .map(|i| PlannedPrompt {
            seq: i as u64,
            prompt: prompts[i % prompts.len()].clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub concurrency: usize,
    pub checkpoint: PathBuf,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedGeneration {
    pub seq: u64,
    pub doc_id: String,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    /// Every successful generation, sorted by (doc_id, seq).
    pub generations: Vec<Generation>,
    pub failures: Vec<FailedGeneration>,
    /// How many came from an earlier, interrupted run.
    pub resumed: usize,
}

/// Read a checkpoint, tolerating a torn final line. Returns the records and
/// the byte length of the valid prefix.
pub fn read_checkpoint(path: &Path) -> Result<(Vec<Generation>, u64)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let valid_len = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut records = Vec::new();
    for (i, line) in bytes[..valid_len].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let g: Generation =
            serde_json::from_slice(line).map_err(|e| Error::parse(path, i + 1, format!("bad checkpoint record: {e}")))?;
        records.push(g);
    }
    Ok((records, valid_len as u64))
}

fn open_checkpoint(path: &Path) -> Result<(Vec<Generation>, BufWriter<File>)> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let (records, valid_len) = if path.exists() {
        read_checkpoint(path)?
    } else {
        (Vec::new(), 0)
    };
    let mut file = OpenOptions::new().create(true).truncate(false).read(true).write(true).open(path)?;
    file.set_len(valid_len)?;
    file.seek(SeekFrom::End(0))?;
    Ok((records, BufWriter::new(file)))
}

pub(crate) fn generate_with_retry(
    planned: &PlannedPrompt,
    params: &GenerationParams,
    backend: &dyn Backend,
    retry: RetryPolicy,
) -> std::result::Result<Generation, (u32, BackendError)> {
    let attempts = retry.attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match generate(&planned.prompt, params, backend, planned.seq) {
            Ok(g) => return Ok(g),
            Err(e) if e.is_retryable() && attempt < attempts => {
                log::debug!("seq {} attempt {attempt} failed: {e}", planned.seq);
                thread::sleep(retry.base_delay * 2u32.pow(attempt - 1));
            }
            Err(e) => return Err((attempt, e)),
        }
    }
}

/// Generate every planned prompt not already in the checkpoint, with at
/// most `concurrency` requests in flight. `on_emit` sees each new
/// generation after its checkpoint record is flushed, in completion order.
pub fn generate_batch(
    plan: &[PlannedPrompt],
    params: &GenerationParams,
    backend: &dyn Backend,
    options: &BatchOptions,
    mut on_emit: impl FnMut(&Generation),
) -> Result<BatchOutcome> {
    params.validate()?;
    if options.concurrency == 0 {
        return Err(Error::invalid("concurrency must be at least 1"));
    }
    let (previous, mut writer) = open_checkpoint(&options.checkpoint)?;
    let planned_seqs: HashSet<u64> = plan.iter().map(|p| p.seq).collect();
    let mut done: BTreeMap<u64, Generation> = previous
        .into_iter()
        .filter(|g| planned_seqs.contains(&g.seq))
        .map(|g| (g.seq, g))
        .collect();
    let resumed = done.len();
    let pending: Vec<&PlannedPrompt> = plan.iter().filter(|p| !done.contains_key(&p.seq)).collect();
    if resumed > 0 {
        log::info!("resuming: {resumed} generations in checkpoint, {} to go", pending.len());
    }

    let mut failures = Vec::new();
    let (job_tx, job_rx) = bounded::<&PlannedPrompt>(options.concurrency);
    let (result_tx, result_rx) = unbounded();
    let io_result: Result<()> = thread::scope(|scope| {
        for _ in 0..options.concurrency {
            let job_rx = job_rx.clone();
            let result_tx = result_tx.clone();
            scope.spawn(move || {
                for planned in job_rx {
                    let outcome = generate_with_retry(planned, params, backend, options.retry);
                    if result_tx.send((planned, outcome)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(result_tx);
        scope.spawn(move || {
            for planned in pending {
                if job_tx.send(planned).is_err() {
                    break;
                }
            }
        });

        for (planned, outcome) in result_rx {
            match outcome {
                Ok(g) => {
                    serde_json::to_writer(&mut writer, &g)?;
                    writer.write_all(b"\n")?;
                    writer.flush()?;
                    on_emit(&g);
                    done.insert(g.seq, g);
                }
                Err((attempts, e)) => {
                    log::warn!("seq {} (doc {}) failed after {attempts} attempts: {e}", planned.seq, planned.prompt.doc_id);
                    failures.push(FailedGeneration {
                        seq: planned.seq,
                        doc_id: planned.prompt.doc_id.clone(),
                        attempts,
                        error: e.to_string(),
                    });
                }
            }
        }
        Ok(())
    });
    io_result?;

    failures.sort_by_key(|f| f.seq);
    let mut generations: Vec<Generation> = done.into_values().collect();
    generations.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.seq.cmp(&b.seq)));
    Ok(BatchOutcome {
        generations,
        failures,
        resumed,
    })
}

/// Write generations as JSON lines, atomically (temp file + rename).
pub fn write_generations(path: impl AsRef<Path>, generations: &[Generation]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        for g in generations {
            serde_json::to_writer(&mut out, g)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_generations(path: impl AsRef<Path>) -> Result<Vec<Generation>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}
