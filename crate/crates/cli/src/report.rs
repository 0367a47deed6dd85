//! Batch metrics. Every number is a function of the per-run summaries on
//! disk, so a report can always be rebuilt from a run root.

use crate::factory::Job;
use anyhow::Context;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use webgen_core::engine::{FinishReason, RunResult, SUMMARY_FILE};
use webgen_core::gateway::UsageSummary;
use webgen_core::workspace::write_atomic;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const ERROR_FILE: &str = "error.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub id: String,
    pub run_dir: PathBuf,
    /// Set when the run could not be carried out at all.
    pub error: Option<String>,
    pub finished_by: Option<FinishReason>,
    pub exceed_flag: bool,
    pub final_step: Option<u32>,
    pub final_score_shot: Option<u8>,
    pub final_score_gui: Option<u8>,
    pub steps: u32,
    pub backtracks: usize,
    pub degraded: bool,
    pub usage: UsageSummary,
}

impl RunRow {
    pub fn from_result(id: &str, run_dir: &Path, r: &RunResult) -> Self {
        Self {
            id: id.to_string(),
            run_dir: run_dir.to_path_buf(),
            error: None,
            finished_by: Some(r.finished_by),
            exceed_flag: r.exceed_flag,
            final_step: r.final_step,
            final_score_shot: r.final_score_shot,
            final_score_gui: r.final_score_gui,
            steps: r.trajectory.last_step(),
            backtracks: r.backtracks.len(),
            degraded: r.degraded,
            usage: r.usage.clone(),
        }
    }

    pub fn failed(id: &str, run_dir: &Path, error: String) -> Self {
        Self {
            id: id.to_string(),
            run_dir: run_dir.to_path_buf(),
            error: Some(error),
            finished_by: None,
            exceed_flag: false,
            final_step: None,
            final_score_shot: None,
            final_score_gui: None,
            steps: 0,
            backtracks: 0,
            degraded: false,
            usage: UsageSummary::default(),
        }
    }

    pub fn from_outcome(job: &Job, outcome: &anyhow::Result<RunResult>) -> Self {
        match outcome {
            Ok(r) => Self::from_result(&job.instruction_id, &job.run_dir, r),
            Err(e) => Self::failed(&job.instruction_id, &job.run_dir, format!("{e:#}")),
        }
    }

    /// Finished by a GUI pass or by the iteration cap.
    pub fn completed(&self) -> bool {
        matches!(
            self.finished_by,
            Some(FinishReason::GuiPass | FinishReason::IterationCap)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunRow>,
    pub total: usize,
    pub completed: usize,
    pub aborted: usize,
    pub failed: usize,
    pub gui_passes: usize,
    pub exceeded: usize,
    /// Mean screenshot score of the selected best steps, over completed runs
    /// that selected one.
    pub mean_best_score_shot: Option<f64>,
    /// GUI passes over completed runs.
    pub gui_pass_fraction: Option<f64>,
    /// Runs stopped by the iteration cap over completed runs.
    pub exceed_rate: Option<f64>,
    pub usage: UsageSummary,
}

fn ratio(n: usize, d: usize) -> Option<f64> {
    (d > 0).then(|| n as f64 / d as f64)
}

impl Report {
    pub fn from_rows(mut runs: Vec<RunRow>) -> Self {
        runs.sort_by(|a, b| a.id.cmp(&b.id).then(a.run_dir.cmp(&b.run_dir)));
        let completed: Vec<&RunRow> = runs.iter().filter(|r| r.completed()).collect();
        let gui_passes = completed
            .iter()
            .filter(|r| r.finished_by == Some(FinishReason::GuiPass))
            .count();
        let exceeded = completed.iter().filter(|r| r.exceed_flag).count();
        let shots: Vec<f64> = completed
            .iter()
            .filter_map(|r| r.final_score_shot)
            .map(f64::from)
            .collect();
        let mut usage = UsageSummary::default();
        for r in &runs {
            usage.merge(&r.usage);
        }
        Self {
            total: runs.len(),
            completed: completed.len(),
            aborted: runs
                .iter()
                .filter(|r| r.finished_by == Some(FinishReason::Aborted))
                .count(),
            failed: runs.iter().filter(|r| r.error.is_some()).count(),
            gui_passes,
            exceeded,
            mean_best_score_shot: (!shots.is_empty()).then(|| shots.iter().sum::<f64>() / shots.len() as f64),
            gui_pass_fraction: ratio(gui_passes, completed.len()),
            exceed_rate: ratio(exceeded, completed.len()),
            usage,
            runs,
        }
    }

    /// Rebuilds the report from the run directories directly under `root`:
    /// a summary makes a finished row, an error file a failed one.
    pub fn recompute(root: &Path) -> anyhow::Result<Self> {
        let mut rows = Vec::new();
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
            .with_context(|| format!("list {}", root.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            if dir.join(SUMMARY_FILE).is_file() {
                let r = RunResult::load_summary(&dir).with_context(|| format!("load summary in {}", dir.display()))?;
                rows.push(RunRow::from_result(&id, &dir, &r));
            } else if let Ok(e) = std::fs::read_to_string(dir.join(ERROR_FILE)) {
                rows.push(RunRow::failed(&id, &dir, e.trim().to_string()));
            }
        }
        Ok(Self::from_rows(rows))
    }

    pub fn write(&self, root: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        write_atomic(&root.join(REPORT_JSON), &json)?;
        write_atomic(&root.join(REPORT_MD), self.markdown().as_bytes())?;
        Ok(())
    }

    pub fn markdown(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.1}%", v * 100.0));
        let mut s = String::from("# Batch report\n\n");
        let _ = writeln!(
            s,
            "- runs: {} ({} completed, {} aborted, {} failed)",
            self.total, self.completed, self.aborted, self.failed
        );
        let _ = writeln!(s, "- GUI pass fraction: {}", pct(self.gui_pass_fraction));
        let _ = writeln!(s, "- exceed rate: {}", pct(self.exceed_rate));
        let _ = writeln!(
            s,
            "- mean best screenshot score: {}",
            self.mean_best_score_shot.map_or("n/a".into(), |m| format!("{m:.2}"))
        );
        let _ = writeln!(
            s,
            "- model calls: {} ({} attempts, {} tokens)\n",
            self.usage.calls, self.usage.attempts, self.usage.tokens.total_tokens
        );
        s.push_str("The pass metric is this agent's own GUI-test verdict, not an external judge's.\n\n");
        s.push_str("| id | outcome | steps | best step | shot | gui |\n|---|---|---|---|---|---|\n");
        let opt = |v: Option<u8>| v.map_or("-".to_string(), |v| v.to_string());
        for r in &self.runs {
            let outcome = match (&r.error, r.finished_by) {
                (Some(_), _) => "failed".to_string(),
                (None, Some(f)) => serde_json::to_value(f)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                (None, None) => "-".to_string(),
            };
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                r.id,
                outcome,
                r.steps,
                r.final_step.map_or("-".to_string(), |v| v.to_string()),
                opt(r.final_score_shot),
                opt(r.final_score_gui)
            );
        }
        s
    }
}
