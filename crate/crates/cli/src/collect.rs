//! Samples several runs per instruction and turns them into trajectory
//! groups for advantage computation.

use crate::factory::{ComponentFactory, Job};
use crate::runner::{run_jobs, Instruction};
use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use webgen_core::engine::{FinishReason, RunResult, TRAJECTORY_FILE};
use webgen_core::step_grpo::{MemberStep, TrajectoryGroup, TrajectoryMember};
use webgen_core::trajectory::EntryKind;
use webgen_core::workspace::write_atomic;

pub const GROUPS_DIR: &str = "groups";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectedGroup {
    /// False when fewer than two members finished; such a group has no
    /// meaningful within-group baseline.
    pub usable: bool,
    pub requested: u32,
    /// `sample-k: reason` for each member left out.
    pub failures: Vec<String>,
    pub group: TrajectoryGroup,
}

impl CollectedGroup {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("read {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parse group file {}", path.display()))
    }
}

/// One group member from a finished run: every step still in the final
/// trajectory, scored from the memory list (unscored steps get `None`).
pub fn member_from_run(run_id: &str, run_dir: &Path, r: &RunResult) -> TrajectoryMember {
    let entries = r.trajectory.entries();
    let steps = r
        .trajectory
        .steps()
        .into_iter()
        .filter_map(|step| {
            let output_line = entries
                .iter()
                .position(|e| e.step == step && e.kind == EntryKind::ModelEdit)?;
            let record = r.records.iter().find(|x| x.step_index == step);
            Some(MemberStep {
                step,
                score_shot: record.and_then(|x| x.score_shot),
                score_gui: record.and_then(|x| x.score_gui),
                output_line,
            })
        })
        .collect();
    TrajectoryMember {
        run_id: run_id.to_string(),
        trajectory_log: run_dir.join(TRAJECTORY_FILE),
        steps,
    }
}

pub fn sample_jobs(instructions: &[Instruction], group_size: u32, run_root: &Path) -> Vec<Job> {
    instructions
        .iter()
        .flat_map(|i| {
            (0..group_size).map(move |k| Job {
                instruction_id: i.id.clone(),
                instruction: i.text.clone(),
                sample: k,
                run_dir: run_root.join(&i.id).join(format!("sample-{k}")),
            })
        })
        .collect()
}

/// Runs `group_size` samples of every instruction and writes one group file
/// per instruction under `<run_root>/groups/`.
pub async fn collect_groups(
    factory: Arc<dyn ComponentFactory>,
    instructions: &[Instruction],
    group_size: u32,
    run_root: &Path,
    parallelism: usize,
) -> anyhow::Result<Vec<(PathBuf, CollectedGroup)>> {
    if group_size == 0 {
        bail!("group size must be at least 1");
    }
    let results = run_jobs(factory, sample_jobs(instructions, group_size, run_root), parallelism).await;
    let mut out = Vec::new();
    for ins in instructions {
        let mut members = Vec::new();
        let mut failures = Vec::new();
        for (job, result) in results.iter().filter(|(j, _)| j.instruction_id == ins.id) {
            match result {
                Ok(r) if r.finished_by != FinishReason::Aborted => {
                    let run_id = format!("{}/sample-{}", ins.id, job.sample);
                    let m = member_from_run(&run_id, &job.run_dir, r);
                    if m.steps.is_empty() {
                        failures.push(format!("sample-{}: no steps", job.sample));
                    } else {
                        members.push(m);
                    }
                }
                Ok(r) => failures.push(format!(
                    "sample-{}: aborted: {}",
                    job.sample,
                    r.abort_reason.as_deref().unwrap_or("unknown")
                )),
                Err(e) => failures.push(format!("sample-{}: {e:#}", job.sample)),
            }
        }
        let usable = members.len() >= 2;
        if !usable {
            tracing::warn!(id = %ins.id, members = members.len(), "group flagged unusable");
        }
        let collected = CollectedGroup {
            usable,
            requested: group_size,
            failures,
            group: TrajectoryGroup {
                instruction_id: ins.id.clone(),
                members,
            },
        };
        let path = run_root.join(GROUPS_DIR).join(format!("{}.json", ins.id));
        write_atomic(&path, &serde_json::to_vec_pretty(&collected)?)?;
        out.push((path, collected));
    }
    Ok(out)
}
