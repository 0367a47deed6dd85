use crate::factory::{ComponentFactory, Job};
use crate::report::{Report, RunRow, ERROR_FILE};
use anyhow::{bail, Context};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use tokio::sync::Semaphore;
use webgen_core::engine::{Engine, RunDir, RunResult};

/// An instruction read from disk; the id is the file stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub id: String,
    pub text: String,
}

impl Instruction {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("read instruction {}", path.display()))?;
        if text.trim().is_empty() {
            bail!("instruction file {} is empty", path.display());
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| !s.is_empty())
            .with_context(|| format!("no usable file name in {}", path.display()))?
            .to_string();
        Ok(Self { id, text })
    }
}

/// Expands directories into their `.txt` and `.md` files (sorted) and loads
/// everything. Duplicate ids are an error since they would share a run
/// directory.
pub fn load_instructions(paths: &[PathBuf]) -> anyhow::Result<Vec<Instruction>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inside: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("list {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && matches!(f.extension().and_then(|e| e.to_str()), Some("txt" | "md")))
                .collect();
            inside.sort();
            files.extend(inside);
        } else {
            files.push(p.clone());
        }
    }
    let mut out: Vec<Instruction> = Vec::new();
    for f in files {
        let ins = Instruction::load(&f)?;
        if out.iter().any(|o| o.id == ins.id) {
            bail!("two instructions share the id `{}`", ins.id);
        }
        out.push(ins);
    }
    Ok(out)
}

/// Runs one job to completion. Errors cover setup and local I/O; a run that
/// ends early because a model endpoint failed is still `Ok`.
pub async fn run_job(factory: &dyn ComponentFactory, job: &Job) -> anyhow::Result<RunResult> {
    let c = factory
        .build(job)
        .await
        .with_context(|| format!("set up run `{}`", job.instruction_id))?;
    c.config.validate()?;
    std::fs::create_dir_all(&job.run_dir).with_context(|| format!("create {}", job.run_dir.display()))?;
    let mut engine = Engine::new(
        c.config,
        c.model,
        c.executor,
        c.screenshots,
        c.gui,
        c.clock,
        RunDir::new(&job.run_dir),
    );
    let result = engine.run(&job.instruction).await?;
    drop(c.guard);
    Ok(result)
}

/// Runs every job with at most `parallelism` in flight. Results come back
/// in job order.
pub async fn run_jobs(
    factory: Arc<dyn ComponentFactory>,
    jobs: Vec<Job>,
    parallelism: usize,
) -> Vec<(Job, anyhow::Result<RunResult>)> {
    let gate = Arc::new(Semaphore::new(parallelism.max(1)));
    let mut handles = Vec::with_capacity(jobs.len());
    for job in jobs {
        let gate = gate.clone();
        let factory = factory.clone();
        handles.push(tokio::spawn(async move {
            let _permit = gate.acquire_owned().await.expect("semaphore open");
            tracing::info!(id = %job.instruction_id, sample = job.sample, "run started");
            let result = run_job(factory.as_ref(), &job).await;
            match &result {
                Ok(r) => tracing::info!(id = %job.instruction_id, finished_by = ?r.finished_by, "run finished"),
                Err(e) => {
                    tracing::error!(id = %job.instruction_id, "run failed: {e:#}");
                    if std::fs::create_dir_all(&job.run_dir).is_ok() {
                        let _ = std::fs::write(job.run_dir.join(ERROR_FILE), format!("{e:#}\n"));
                    }
                }
            }
            (job, result)
        }));
    }
    let mut out = Vec::with_capacity(handles.len());
    for h in handles {
        out.push(h.await.expect("run task panicked"));
    }
    out
}

pub fn batch_jobs(instructions: &[Instruction], run_root: &Path) -> Vec<Job> {
    instructions
        .iter()
        .map(|i| Job {
            instruction_id: i.id.clone(),
            instruction: i.text.clone(),
            sample: 0,
            run_dir: run_root.join(&i.id),
        })
        .collect()
}

/// Runs a batch and writes `report.json` and `report.md` under the root.
pub async fn run_batch(
    factory: Arc<dyn ComponentFactory>,
    instructions: &[Instruction],
    run_root: &Path,
    parallelism: usize,
) -> anyhow::Result<Report> {
    std::fs::create_dir_all(run_root).with_context(|| format!("create {}", run_root.display()))?;
    let results = run_jobs(factory, batch_jobs(instructions, run_root), parallelism).await;
    let rows: Vec<RunRow> = results.iter().map(|(job, r)| RunRow::from_outcome(job, r)).collect();
    let report = Report::from_rows(rows);
    report.write(run_root)?;
    Ok(report)
}
