use std::sync::{Arc, Mutex};
use webgen_core::clock::LogicalClock;
use webgen_core::config::RunConfig;
use webgen_core::engine::{should_run_gui_test, Engine, FinishReason, RunDir, RunObserver, RunResult};
use webgen_core::gateway::{
    ChatModel, ChatTurn, Completion, GatewayError, ModelEndpoint, ModelRole, TokenUsage, TurnOptions,
};
use webgen_core::testkit::{
    GuiVerdict, InstantGuiSession, ScriptedExecutor, ScriptedModel, StaticScreenshots, StepPlan,
};
use webgen_core::trajectory::{EntryKind, StepRecord, Trajectory};
use webgen_core::workspace::Workspace;

fn scored(shot: u8, gui: u8, passed: bool) -> StepPlan {
    StepPlan::Scored {
        shot,
        suggestions: String::new(),
        move_on: true,
        gui: Some(GuiVerdict {
            passed,
            grade: gui,
            suggestions: if passed {
                String::new()
            } else {
                "the button does nothing".into()
            },
        }),
    }
}

fn engine_with(dir: &std::path::Path, model: Arc<dyn ChatModel>, config: RunConfig) -> Engine {
    Engine::new(
        config,
        model,
        Box::new(ScriptedExecutor::default()),
        Arc::new(StaticScreenshots),
        Arc::new(InstantGuiSession),
        Arc::new(LogicalClock::new()),
        RunDir::new(dir),
    )
}

async fn run(plans: Vec<StepPlan>) -> (tempfile::TempDir, RunResult, ScriptedModel) {
    let dir = tempfile::tempdir().unwrap();
    let model = ScriptedModel::new(plans);
    let mut engine = engine_with(dir.path(), Arc::new(model.clone()), RunConfig::default());
    let result = engine.run("Build a counter page.").await.unwrap();
    (dir, result, model)
}

fn workspace_hash(dir: &std::path::Path) -> String {
    let rd = RunDir::new(dir);
    Workspace::open(rd.workspace(), rd.snapshots())
        .unwrap()
        .content_hash()
        .unwrap()
}

#[tokio::test]
async fn single_step_pass() {
    let (dir, r, _) = run(vec![scored(5, 5, true)]).await;
    assert_eq!(r.finished_by, FinishReason::GuiPass);
    assert!(!r.exceed_flag && !r.degraded);
    assert_eq!(r.final_step, Some(1));
    assert_eq!(r.records.len(), 1);
    assert_eq!((r.final_score_shot, r.final_score_gui), (Some(5), Some(5)));
    assert_eq!(r.final_snapshot_id.as_deref(), Some(r.records[0].snapshot_id.as_str()));
    assert_eq!(workspace_hash(dir.path()), r.records[0].snapshot_id);
    let kinds: Vec<EntryKind> = r.trajectory.entries().iter().map(|e| e.kind).collect();
    assert_eq!(
        kinds,
        vec![
            EntryKind::Instruction,
            EntryKind::ModelEdit,
            EntryKind::ExecutionOutput,
            EntryKind::ScreenshotFeedback,
            EntryKind::GuiFeedback
        ]
    );
    let persisted = RunResult::load_summary(dir.path()).unwrap();
    assert_eq!(persisted, r);
}

type Cut = (Trajectory, Trajectory, Option<StepRecord>);

#[derive(Default, Clone)]
struct Events(Arc<Mutex<Vec<Cut>>>);

impl RunObserver for Events {
    fn backtracked(&mut self, before: &Trajectory, after: &Trajectory, restored: Option<&StepRecord>) {
        self.0
            .lock()
            .unwrap()
            .push((before.clone(), after.clone(), restored.cloned()));
    }
}

#[tokio::test]
async fn five_errors_after_a_good_step_backtrack_to_it() {
    let mut plans = vec![scored(4, 2, false)];
    plans.extend(std::iter::repeat_n(StepPlan::ExecError, 5));
    plans.push(scored(5, 5, true));
    let dir = tempfile::tempdir().unwrap();
    let events = Events::default();
    let mut engine = engine_with(dir.path(), Arc::new(ScriptedModel::new(plans)), RunConfig::default())
        .with_observer(Box::new(events.clone()));
    let r = engine.run("Build a counter page.").await.unwrap();

    assert_eq!(r.backtracks.len(), 1);
    let b = &r.backtracks[0];
    assert_eq!((b.at_step, b.restored_step), (6, Some(1)));
    assert_eq!(b.workspace_hash, r.archived[0].snapshot_id);
    let (before, after, restored) = events.0.lock().unwrap()[0].clone();
    assert_eq!(after, before.truncate(1).unwrap());
    assert_eq!(restored.unwrap().step_index, 1);

    // The loop resumed at step 2 and passed there.
    assert_eq!(r.finished_by, FinishReason::GuiPass);
    assert_eq!(r.records.iter().map(|x| x.step_index).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(r.final_step, Some(2));
    assert_eq!(r.trajectory.steps(), vec![1, 2]);
}

#[tokio::test]
async fn backtrack_with_empty_memory_resets_everything() {
    let mut plans: Vec<StepPlan> = std::iter::repeat_n(StepPlan::ShotError, 3).collect();
    plans.extend([StepPlan::EmptyEdit, StepPlan::ExecError, scored(3, 5, true)]);
    let (dir, r, _) = run(plans).await;
    assert_eq!(r.backtracks.len(), 1);
    assert_eq!(r.backtracks[0].restored_step, None);
    assert_eq!(r.backtracks[0].entries_kept, 1);
    assert_eq!(r.final_step, Some(1));
    assert_eq!(r.trajectory.steps(), vec![1]);
    assert_eq!(workspace_hash(dir.path()), r.records[0].snapshot_id);
}

#[tokio::test]
async fn never_passing_run_stops_at_the_cap() {
    let plans: Vec<StepPlan> = (0..40)
        .map(|i| scored((i % 6) as u8, 1 + (i % 4) as u8, false))
        .collect();
    let (dir, r, model) = run(plans).await;
    assert_eq!(r.finished_by, FinishReason::IterationCap);
    assert!(r.exceed_flag);
    assert_eq!(model.generations(), 20);
    assert_eq!(r.records.len(), 20);
    assert_eq!(r.trajectory.last_step(), 20);
    // Best is the latest step with the top (gui, shot) pair: gui 4 with shot 5
    // happens at i = 11 (step 12).
    assert_eq!(r.final_step, Some(12));
    assert_eq!(workspace_hash(dir.path()), r.records[11].snapshot_id);
}

#[tokio::test]
async fn only_errors_hit_the_generation_budget() {
    let plans: Vec<StepPlan> = std::iter::repeat_n(StepPlan::ExecError, 100).collect();
    let (_dir, r, model) = run(plans).await;
    assert_eq!(model.generations(), 60);
    assert_eq!(r.generation_calls, 60);
    assert_eq!(r.finished_by, FinishReason::IterationCap);
    assert!(r.degraded);
    assert_eq!(r.final_step, None);
    assert_eq!(r.backtracks.len(), 12);
}

#[tokio::test]
async fn appearance_only_step_is_archived_without_gui_score() {
    let first = StepPlan::Scored {
        shot: 2,
        suggestions: "use a larger heading".into(),
        move_on: false,
        gui: Some(GuiVerdict {
            passed: true,
            grade: 5,
            suggestions: String::new(),
        }),
    };
    let no_block = StepPlan::Scored {
        shot: 4,
        suggestions: String::new(),
        move_on: true,
        gui: None,
    };
    let (_dir, r, _) = run(vec![first, no_block, scored(4, 5, true)]).await;
    assert_eq!(r.records[0].score_gui, None);
    assert_eq!(r.records[1].score_gui, None);
    assert_eq!(r.records[1].score_shot, Some(4));
    assert_eq!(r.final_step, Some(3));
    assert!(!r
        .trajectory
        .step_entries(1)
        .any(|(_, e)| e.kind == EntryKind::GuiFeedback));
}

#[tokio::test]
async fn exhausted_model_aborts_with_partial_log() {
    let (dir, r, _) = run(vec![scored(3, 2, false), StepPlan::ExecError]).await;
    assert_eq!(r.finished_by, FinishReason::Aborted);
    assert!(!r.exceed_flag);
    assert!(r.abort_reason.unwrap().contains("script exhausted"));
    assert_eq!(r.final_step, Some(1));
    let log = std::fs::read_to_string(dir.path().join("trajectory.jsonl")).unwrap();
    assert_eq!(Trajectory::from_jsonl(&log).unwrap(), r.trajectory);
    assert_eq!(r.trajectory.last_step(), 2);
}

#[tokio::test]
async fn empty_request_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut e = engine_with(dir.path(), Arc::new(ScriptedModel::new([])), RunConfig::default());
    assert!(e.run("   ").await.is_err());
}

/// Fails the second generation with a context-length error, then delegates.
struct Cramped {
    inner: ScriptedModel,
    seen: Mutex<Vec<usize>>,
}

#[async_trait::async_trait]
impl ChatModel for Cramped {
    async fn complete(&self, endpoint: &ModelEndpoint, turns: &[ChatTurn]) -> Result<Completion, GatewayError> {
        let is_generation =
            endpoint.role == ModelRole::CodingLlm && turns[0].plain_text().starts_with("You are an expert");
        if is_generation {
            let mut seen = self.seen.lock().unwrap();
            seen.push(turns.iter().map(|t| t.plain_text().len()).sum());
            if seen.len() == 2 {
                return Err(GatewayError::ContextLength("too long".into()));
            }
        }
        self.inner.complete(endpoint, turns).await
    }
}

#[tokio::test]
async fn context_length_compacts_and_retries() {
    let plans = vec![scored(3, 2, false), scored(4, 5, true)];
    let model = Arc::new(Cramped {
        inner: ScriptedModel::new(plans),
        seen: Mutex::new(Vec::new()),
    });
    let dir = tempfile::tempdir().unwrap();
    let mut e = engine_with(dir.path(), model.clone(), RunConfig::default());
    let r = e.run("Build a counter page.").await.unwrap();
    assert_eq!(r.finished_by, FinishReason::GuiPass);
    assert_eq!(r.generation_calls, 3);
    let seen = model.seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen[2] < seen[1], "compacted prompt should be shorter: {seen:?}");
}

struct Answers(Mutex<Vec<&'static str>>);

#[async_trait::async_trait]
impl ChatModel for Answers {
    async fn complete(&self, _e: &ModelEndpoint, _t: &[ChatTurn]) -> Result<Completion, GatewayError> {
        let text = self.0.lock().unwrap().remove(0).to_string();
        Ok(Completion {
            text,
            usage: TokenUsage::default(),
            attempts: 1,
        })
    }
}

#[tokio::test]
async fn decision_fast_path_and_defaults() {
    let t = Trajectory::new("Build it", webgen_core::clock::Timestamp::from_unix_secs(0));
    let ep = ModelEndpoint::new("http://127.0.0.1:9/v1", "m", ModelRole::CodingLlm);
    let opts = TurnOptions::default();
    let none = Answers(Mutex::new(vec![]));
    assert!(should_run_gui_test(&t, "", &none, &ep, opts).await.unwrap());
    let no = Answers(Mutex::new(vec!["No, the colours clash."]));
    assert!(!should_run_gui_test(&t, "fix colours", &no, &ep, opts).await.unwrap());
    let garbage = Answers(Mutex::new(vec!["hmm", "perhaps"]));
    assert!(!should_run_gui_test(&t, "fix colours", &garbage, &ep, opts)
        .await
        .unwrap());
    assert!(garbage.0.lock().unwrap().is_empty());
    let late = Answers(Mutex::new(vec!["hmm", "yes"]));
    assert!(should_run_gui_test(&t, "fix colours", &late, &ep, opts).await.unwrap());
}
