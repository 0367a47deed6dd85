//! The generate → execute → feedback loop for one website request, with
//! backtracking after repeated execution errors and best-step restoration
//! at the end.

use crate::actions::{self, ActionSet};
use crate::clock::Clock;
use crate::config::RunConfig;
use crate::exec::Executor;
use crate::feedback::{self, ScreenshotFeedback, ScreenshotSource};
use crate::gateway::{
    trajectory_to_turns, ChatModel, ChatTurn, GatewayError, MeteredModel, ModelEndpoint, Role, TurnOptions,
    UsageSummary,
};
use crate::gui::{self, GuiSession, SynthesisError};
use crate::prompts;
use crate::trajectory::{select_best_step, EntryKind, StepRecord, Trajectory, TrajectoryEntry};
use crate::workspace::{write_atomic, SnapshotId, Workspace, WorkspaceError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinishReason {
    GuiPass,
    IterationCap,
    /// A model endpoint failed for good; the partial trajectory is kept.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktrackEvent {
    /// Step whose error completed the run of consecutive errors.
    pub at_step: u32,
    /// Step restored to; `None` when nothing had been archived yet.
    pub restored_step: Option<u32>,
    pub snapshot_id: Option<SnapshotId>,
    /// Workspace hash right after the restore.
    pub workspace_hash: SnapshotId,
    pub entries_kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub final_snapshot_id: Option<SnapshotId>,
    pub final_step: Option<u32>,
    pub finished_by: FinishReason,
    pub exceed_flag: bool,
    /// Nothing was archived; the final state is just the last workspace.
    pub degraded: bool,
    /// Memory list at the end of the run.
    pub records: Vec<StepRecord>,
    /// Every record archived during the run, including ones later dropped
    /// by backtracking.
    pub archived: Vec<StepRecord>,
    pub backtracks: Vec<BacktrackEvent>,
    pub generation_calls: u32,
    pub final_score_shot: Option<u8>,
    pub final_score_gui: Option<u8>,
    pub abort_reason: Option<String>,
    pub usage: UsageSummary,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

impl RunResult {
    pub fn load_summary(run_dir: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(run_dir.join(SUMMARY_FILE))?;
        let mut r: RunResult =
            serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let log = std::fs::read_to_string(run_dir.join(TRAJECTORY_FILE))?;
        r.trajectory = Trajectory::from_jsonl(&log)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        Ok(r)
    }
}

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const SNAPSHOT_INDEX_FILE: &str = "snapshot_index.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("the instruction is empty")]
    EmptyInstruction,
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trajectory bookkeeping failed: {0}")]
    Trajectory(String),
}

/// Hooks for tests and tooling; all methods default to no-ops.
pub trait RunObserver: Send {
    fn step_done(&mut self, _step: u32, _erroneous: bool) {}
    fn backtracked(&mut self, _before: &Trajectory, _after: &Trajectory, _restored: Option<&StepRecord>) {}
}

/// Where a run keeps its artifacts.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn root(&self) -> &Path {
        &self.root
    }
    pub fn workspace(&self) -> PathBuf {
        self.root.join("workspace")
    }
    pub fn snapshots(&self) -> PathBuf {
        self.root.join("snapshots")
    }
    pub fn trajectory_log(&self) -> PathBuf {
        self.root.join(TRAJECTORY_FILE)
    }
    pub fn shot(&self, step: u32) -> PathBuf {
        self.root.join("shots").join(format!("step-{step}.png"))
    }
    pub fn gui_log(&self, step: u32) -> PathBuf {
        self.root.join("gui").join(format!("step-{step}.jsonl"))
    }
}

pub struct Engine {
    config: RunConfig,
    model: Arc<MeteredModel>,
    executor: Box<dyn Executor>,
    screenshots: Arc<dyn ScreenshotSource>,
    gui: Arc<dyn GuiSession>,
    clock: Arc<dyn Clock>,
    run_dir: RunDir,
    observer: Option<Box<dyn RunObserver>>,
}

struct RunState {
    trajectory: Trajectory,
    memory: Vec<StepRecord>,
    archived: Vec<StepRecord>,
    backtracks: Vec<BacktrackEvent>,
    generation_calls: u32,
    compact_before: u32,
}

impl Engine {
    pub fn new(
        config: RunConfig,
        model: Arc<dyn ChatModel>,
        executor: Box<dyn Executor>,
        screenshots: Arc<dyn ScreenshotSource>,
        gui: Arc<dyn GuiSession>,
        clock: Arc<dyn Clock>,
        run_dir: RunDir,
    ) -> Self {
        Self {
            config,
            model: Arc::new(MeteredModel::new(model)),
            executor,
            screenshots,
            gui,
            clock,
            run_dir,
            observer: None,
        }
    }

    pub fn with_observer(mut self, observer: Box<dyn RunObserver>) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn run_dir(&self) -> &RunDir {
        &self.run_dir
    }

    fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> EngineError {
        let context = context.into();
        move |source| EngineError::Io { context, source }
    }

    fn push(&self, state: &mut RunState, step: u32, kind: EntryKind, payload: String) -> Result<(), EngineError> {
        state
            .trajectory
            .push(TrajectoryEntry {
                step,
                kind,
                payload,
                timestamp: self.clock.now(),
            })
            .map_err(|e| EngineError::Trajectory(e.to_string()))?;
        self.persist_log(&state.trajectory)
    }

    fn persist_log(&self, trajectory: &Trajectory) -> Result<(), EngineError> {
        let path = self.run_dir.trajectory_log();
        trajectory
            .write_log(&path)
            .map_err(Self::io(format!("write {}", path.display())))
    }

    fn persist_index(&self, memory: &[StepRecord]) -> Result<(), EngineError> {
        let index: BTreeMap<String, &str> = memory
            .iter()
            .map(|r| (r.step_index.to_string(), r.snapshot_id.as_str()))
            .collect();
        let bytes = serde_json::to_vec_pretty(&index).expect("index serializes");
        write_atomic(&self.run_dir.root().join(SNAPSHOT_INDEX_FILE), &bytes)?;
        Ok(())
    }

    /// Runs the loop for one website request. Model-endpoint failures end the
    /// run early with `FinishReason::Aborted`; local I/O failures are errors.
    pub async fn run(&mut self, request: &str) -> Result<RunResult, EngineError> {
        if request.trim().is_empty() {
            return Err(EngineError::EmptyInstruction);
        }
        std::fs::create_dir_all(self.run_dir.workspace()).map_err(Self::io("create workspace"))?;
        let workspace = Workspace::open(self.run_dir.workspace(), self.run_dir.snapshots())?;
        let mut state = RunState {
            trajectory: Trajectory::new(prompts::instruction(request), self.clock.now()),
            memory: Vec::new(),
            archived: Vec::new(),
            backtracks: Vec::new(),
            generation_calls: 0,
            compact_before: 0,
        };
        self.persist_log(&state.trajectory)?;
        self.persist_index(&state.memory)?;

        let outcome = self.drive(request, &workspace, &mut state).await;
        self.executor.shutdown().await;
        let (finished_by, abort_reason) = match outcome {
            Ok(f) => (f, None),
            Err(StepErrorOrIo::Abort(reason)) => (FinishReason::Aborted, Some(reason)),
            Err(StepErrorOrIo::Io(e)) => return Err(e),
        };

        let (final_snapshot_id, final_step, degraded, best) = match select_best_step(&state.memory) {
            Ok(best) => {
                workspace.restore(&best.snapshot_id)?;
                (
                    Some(best.snapshot_id.clone()),
                    Some(best.step_index),
                    false,
                    Some(best.clone()),
                )
            }
            Err(_) => {
                let snap = workspace.snapshot(state.trajectory.last_step())?;
                (Some(snap.id), None, true, None)
            }
        };
        let result = RunResult {
            final_snapshot_id,
            final_step,
            finished_by,
            exceed_flag: finished_by == FinishReason::IterationCap,
            degraded,
            records: state.memory,
            archived: state.archived,
            backtracks: state.backtracks,
            generation_calls: state.generation_calls,
            final_score_shot: best.as_ref().and_then(|b| b.score_shot),
            final_score_gui: best.as_ref().and_then(|b| b.score_gui),
            abort_reason,
            usage: self.model.usage(),
            trajectory: state.trajectory,
        };
        let summary = serde_json::to_vec_pretty(&result).expect("summary serializes");
        write_atomic(&self.run_dir.root().join(SUMMARY_FILE), &summary)?;
        Ok(result)
    }

    async fn drive(
        &mut self,
        request: &str,
        workspace: &Workspace,
        state: &mut RunState,
    ) -> Result<FinishReason, StepErrorOrIo> {
        let coding = self.config.coding_endpoint();
        let vlm = self.config.feedback_vlm.clone();
        let limit = self.config.consecutive_error_limit;
        let budget = self.config.generation_budget();
        let mut t: u32 = 1;
        let mut consecutive_errors: u32 = 0;

        while t <= self.config.max_iterations {
            if state.generation_calls >= budget {
                tracing::warn!(budget, "generation budget exhausted");
                return Ok(FinishReason::IterationCap);
            }
            let text = self.generate(&coding, state).await?;
            self.push(state, t, EntryKind::ModelEdit, text.clone())?;

            let parsed = actions::parse(&text);
            for w in &parsed.warnings {
                tracing::debug!(step = t, warning = ?w, "action parse warning");
            }
            let (message, served_url) = self
                .execute(workspace, &parsed.actions, parsed.is_empty_edit(), &parsed.warnings)
                .await?;
            self.push(state, t, EntryKind::ExecutionOutput, message)?;

            let served_url = match served_url {
                Some(url) => url,
                None => {
                    self.on_error(workspace, state, &mut t, &mut consecutive_errors, limit)?;
                    continue;
                }
            };

            let shot = self.screenshot_feedback(&vlm, &served_url, t).await?;
            self.push(state, t, EntryKind::ScreenshotFeedback, shot.to_message())?;
            if shot.is_error {
                self.on_error(workspace, state, &mut t, &mut consecutive_errors, limit)?;
                continue;
            }
            consecutive_errors = 0;
            if let Some(o) = self.observer.as_mut() {
                o.step_done(t, false);
            }

            let go_next = should_run_gui_test(
                &state.trajectory,
                &shot.suggestions,
                self.model.as_ref(),
                &coding,
                TurnOptions {
                    compact_before: state.compact_before,
                },
            )
            .await
            .map_err(|e| StepErrorOrIo::Abort(format!("agent decision: {e}")))?;

            if !go_next {
                self.archive(workspace, state, t, Some(shot.score_shot), None)?;
                t += 1;
                continue;
            }

            let gui_instruction = match parsed.actions.gui_test_instruction.clone() {
                Some(i) => Some(i),
                None => match gui::synthesize_instruction(self.model.as_ref(), &coding, request).await {
                    Ok(i) => Some(i),
                    Err(SynthesisError::MissingBlock) => {
                        tracing::warn!(
                            step = t,
                            "no GUI-test instruction; scoring the step without GUI feedback"
                        );
                        None
                    }
                    Err(SynthesisError::Gateway(e)) => {
                        return Err(StepErrorOrIo::Abort(format!("GUI-test synthesis: {e}")))
                    }
                },
            };
            let Some(gui_instruction) = gui_instruction else {
                self.archive(workspace, state, t, Some(shot.score_shot), None)?;
                t += 1;
                continue;
            };

            let session = self
                .gui
                .run(&gui_instruction, &served_url)
                .await
                .map_err(|e| StepErrorOrIo::Abort(format!("GUI session: {e}")))?;
            let gui_path = self.run_dir.gui_log(t);
            write_atomic(&gui_path, session.to_jsonl().as_bytes()).map_err(EngineError::from)?;
            let verdict = gui::judge(self.model.as_ref(), &coding, &gui_instruction, &session)
                .await
                .map_err(|e| StepErrorOrIo::Abort(format!("GUI judging: {e}")))?;
            self.push(state, t, EntryKind::GuiFeedback, verdict.to_message(&gui_instruction))?;
            self.archive(workspace, state, t, Some(shot.score_shot), Some(verdict.score_gui))?;
            if verdict.test_passed {
                return Ok(FinishReason::GuiPass);
            }
            t += 1;
        }
        Ok(FinishReason::IterationCap)
    }

    async fn generate(&mut self, coding: &ModelEndpoint, state: &mut RunState) -> Result<String, StepErrorOrIo> {
        loop {
            let turns = trajectory_to_turns(
                &state.trajectory,
                TurnOptions {
                    compact_before: state.compact_before,
                },
            );
            state.generation_calls += 1;
            match self.model.complete(coding, &turns).await {
                Ok(c) => return Ok(c.text),
                Err(GatewayError::ContextLength(msg)) => {
                    let next = state
                        .trajectory
                        .steps()
                        .into_iter()
                        .find(|s| *s >= state.compact_before);
                    match next {
                        Some(s) => {
                            tracing::info!(compact_before = s + 1, "context too long; compacting older steps");
                            state.compact_before = s + 1;
                        }
                        None => {
                            return Err(StepErrorOrIo::Abort(format!(
                                "context length exceeded with every step compacted: {msg}"
                            )))
                        }
                    }
                    if state.generation_calls >= self.config.generation_budget() {
                        return Err(StepErrorOrIo::Abort(
                            "generation budget exhausted while compacting".into(),
                        ));
                    }
                }
                Err(e) => return Err(StepErrorOrIo::Abort(format!("code generation: {e}"))),
            }
        }
    }

    /// Applies the edit and runs the project. Returns the execution message
    /// and, on success, the served URL.
    async fn execute(
        &mut self,
        workspace: &Workspace,
        actions: &ActionSet,
        empty: bool,
        warnings: &[actions::ParseWarning],
    ) -> Result<(String, Option<String>), EngineError> {
        if empty {
            let mut msg = "Execution failed: the response contained no recognizable actions.".to_string();
            for w in warnings {
                msg.push_str(&format!("\nWarning: {w}"));
            }
            return Ok((msg, None));
        }
        if let Err(e) = workspace.apply(actions) {
            return Ok((format!("Execution failed while writing the edited files: {e}"), None));
        }
        let out = self.executor.execute(workspace, &actions.shell_commands).await;
        let url = if out.is_error { None } else { out.served_url.clone() };
        Ok((out.to_message(), url))
    }

    async fn screenshot_feedback(
        &mut self,
        vlm: &ModelEndpoint,
        url: &str,
        step: u32,
    ) -> Result<ScreenshotFeedback, StepErrorOrIo> {
        let image = match self.screenshots.capture(url).await {
            Ok(img) => img,
            Err(e) => return Ok(ScreenshotFeedback::error(format!("screenshot capture failed: {e}"))),
        };
        let path = self.run_dir.shot(step);
        write_atomic(&path, &image.png).map_err(EngineError::from)?;
        let fb = feedback::assess(self.model.as_ref(), vlm, &image)
            .await
            .map_err(|e| StepErrorOrIo::Abort(format!("screenshot feedback: {e}")))?;
        debug_assert!(fb.check().is_ok());
        Ok(fb)
    }

    fn on_error(
        &mut self,
        workspace: &Workspace,
        state: &mut RunState,
        t: &mut u32,
        consecutive_errors: &mut u32,
        limit: u32,
    ) -> Result<(), EngineError> {
        if let Some(o) = self.observer.as_mut() {
            o.step_done(*t, true);
        }
        *consecutive_errors += 1;
        if *consecutive_errors < limit {
            *t += 1;
            return Ok(());
        }
        *consecutive_errors = 0;
        let before = state.trajectory.clone();
        let best = select_best_step(&state.memory).ok().cloned();
        let event = match &best {
            Some(best) => {
                workspace.restore(&best.snapshot_id)?;
                state.trajectory = state
                    .trajectory
                    .truncate(best.step_index)
                    .map_err(|e| EngineError::Trajectory(e.to_string()))?;
                state.memory.retain(|r| r.step_index <= best.step_index);
                BacktrackEvent {
                    at_step: *t,
                    restored_step: Some(best.step_index),
                    snapshot_id: Some(best.snapshot_id.clone()),
                    workspace_hash: workspace.content_hash()?,
                    entries_kept: state.trajectory.len(),
                }
            }
            None => {
                workspace.clear()?;
                state.trajectory = state
                    .trajectory
                    .truncate(0)
                    .map_err(|e| EngineError::Trajectory(e.to_string()))?;
                state.memory.clear();
                BacktrackEvent {
                    at_step: *t,
                    restored_step: None,
                    snapshot_id: None,
                    workspace_hash: workspace.content_hash()?,
                    entries_kept: state.trajectory.len(),
                }
            }
        };
        tracing::info!(at = *t, to = ?event.restored_step, "backtracking after consecutive errors");
        *t = event.restored_step.unwrap_or(0) + 1;
        state.compact_before = state.compact_before.min(*t);
        state.backtracks.push(event);
        self.persist_log(&state.trajectory)?;
        self.persist_index(&state.memory)?;
        if let Some(o) = self.observer.as_mut() {
            o.backtracked(&before, &state.trajectory, best.as_ref());
        }
        Ok(())
    }

    fn archive(
        &self,
        workspace: &Workspace,
        state: &mut RunState,
        step: u32,
        score_shot: Option<u8>,
        score_gui: Option<u8>,
    ) -> Result<(), EngineError> {
        let snap = workspace.snapshot(step)?;
        let record = StepRecord {
            step_index: step,
            snapshot_id: snap.id,
            score_shot,
            score_gui,
        };
        state.memory.push(record.clone());
        state.archived.push(record);
        self.persist_index(&state.memory)
    }
}

enum StepErrorOrIo {
    Abort(String),
    Io(EngineError),
}

impl From<EngineError> for StepErrorOrIo {
    fn from(e: EngineError) -> Self {
        StepErrorOrIo::Io(e)
    }
}

/// Reads a yes/no verdict from the first word of a reply.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    let word: String = text
        .trim_start_matches(|c: char| !c.is_alphabetic())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_ascii_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Whether the appearance is good enough to move on to GUI testing. Empty
/// screenshot suggestions mean yes without asking; an answer that stays
/// unreadable after one reprompt means no.
pub async fn should_run_gui_test(
    trajectory: &Trajectory,
    suggestions_shot: &str,
    model: &dyn ChatModel,
    endpoint: &ModelEndpoint,
    options: TurnOptions,
) -> Result<bool, GatewayError> {
    if suggestions_shot.trim().is_empty() {
        return Ok(true);
    }
    let mut turns = trajectory_to_turns(trajectory, options);
    let question = prompts::fill(prompts::AGENT_DECISION, &[]);
    match turns.last_mut() {
        Some(last) if last.role == Role::User => {
            let merged = format!("{}\n\n{question}", last.plain_text());
            *last = ChatTurn::user(merged);
        }
        _ => turns.push(ChatTurn::user(question)),
    }
    let first = model.complete(endpoint, &turns).await?.text;
    if let Some(v) = parse_yes_no(&first) {
        return Ok(v);
    }
    turns.push(ChatTurn::assistant(first));
    turns.push(ChatTurn::user(prompts::REPROMPT_YES_NO));
    let second = model.complete(endpoint, &turns).await?.text;
    Ok(parse_yes_no(&second).unwrap_or_else(|| {
        tracing::warn!("agent decision unreadable after a reprompt; staying on appearance");
        false
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yes_no_first_word() {
        assert_eq!(parse_yes_no("Yes."), Some(true));
        assert_eq!(parse_yes_no("**no** - fix colors"), Some(false));
        assert_eq!(parse_yes_no("  \"YES\""), Some(true));
        assert_eq!(parse_yes_no("Not yet"), None);
        assert_eq!(parse_yes_no("maybe"), None);
        assert_eq!(parse_yes_no(""), None);
    }
}
