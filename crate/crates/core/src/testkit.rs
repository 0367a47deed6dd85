//! In-process stand-ins for the model, executor, screenshot source and GUI
//! session. Each scripted step decides what every collaborator reports for
//! it, so whole runs can be replayed offline in milliseconds.

use crate::browser::{BrowserError, ScreenshotImage};
use crate::exec::{ExecPhase, ExecutionOutput, Executor};
use crate::feedback::ScreenshotSource;
use crate::gateway::{ChatModel, ChatTurn, Completion, GatewayError, ModelEndpoint, Role, TokenUsage};
use crate::gui::{GuiSession, GuiTrajectory};
use crate::workspace::Workspace;
use async_trait::async_trait;
use serde_json::json;
use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

pub const SERVED_URL: &str = "http://127.0.0.1:1/";
const FAIL_MARKER: &str = "<!-- scripted execution failure -->";

/// GUI-test outcome of a scripted step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuiVerdict {
    pub passed: bool,
    pub grade: u8,
    pub suggestions: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepPlan {
    /// The edit fails to run.
    ExecError,
    /// The site runs but the screenshot shows an error page.
    ShotError,
    /// The model replies with no actions at all.
    EmptyEdit,
    Scored {
        shot: u8,
        suggestions: String,
        /// Answer to the move-on question; only asked when `suggestions` is
        /// non-empty.
        move_on: bool,
        /// `None` drops the GUI-test block and makes synthesis fail too.
        gui: Option<GuiVerdict>,
    },
}

impl StepPlan {
    pub fn is_erroneous(&self) -> bool {
        !matches!(self, StepPlan::Scored { .. })
    }

    /// Whether the engine gets as far as GUI testing on this step.
    pub fn reaches_gui(&self) -> bool {
        matches!(self, StepPlan::Scored { suggestions, move_on, gui: Some(_), .. } if suggestions.is_empty() || *move_on)
    }

    pub fn gui_pass(&self) -> bool {
        self.reaches_gui()
            && matches!(
                self,
                StepPlan::Scored {
                    gui: Some(GuiVerdict { passed: true, .. }),
                    ..
                }
            )
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    plans: VecDeque<StepPlan>,
    current: Option<StepPlan>,
    generations: u32,
}

/// A chat model that follows a list of step plans. Each code-generation
/// call takes the next plan; every feedback call answers for the plan of
/// the latest generation.
#[derive(Debug, Clone, Default)]
pub struct ScriptedModel {
    state: Arc<Mutex<ScriptState>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Request {
    Generate,
    Describe,
    Grade,
    Decide,
    Synthesize,
    Judge,
    GuiStep,
}

fn classify(turns: &[ChatTurn]) -> Request {
    let first = turns.first().map(|t| t.plain_text()).unwrap_or_default();
    if first.starts_with("You are given a single website screenshot") {
        Request::Describe
    } else if first.starts_with("You are tasked with evaluating the design of a webpage") {
        Request::Grade
    } else if first.starts_with("**Prompt:** You are given a GUI-agent testing trajectory") {
        Request::Judge
    } else if first.starts_with("Based on the original website development instruction") {
        Request::Synthesize
    } else if first.starts_with("You are a web-navigation GUI agent") {
        Request::GuiStep
    } else if turns
        .iter()
        .any(|t| t.role == Role::User && t.plain_text().contains("Answer with a single word: yes"))
    {
        Request::Decide
    } else {
        Request::Generate
    }
}

impl ScriptedModel {
    pub fn new(plans: impl IntoIterator<Item = StepPlan>) -> Self {
        Self {
            state: Arc::new(Mutex::new(ScriptState {
                plans: plans.into_iter().collect(),
                ..ScriptState::default()
            })),
        }
    }

    pub fn generations(&self) -> u32 {
        self.state.lock().unwrap().generations
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().plans.len()
    }

    fn answer(&self, turns: &[ChatTurn]) -> Result<String, GatewayError> {
        let mut s = self.state.lock().unwrap();
        let kind = classify(turns);
        if kind == Request::Generate {
            let plan = s.plans.pop_front().ok_or_else(|| GatewayError::Exhausted {
                attempts: 1,
                last_status: Some(500),
                message: "script exhausted".into(),
            })?;
            s.generations += 1;
            let n = s.generations;
            s.current = Some(plan.clone());
            return Ok(edit_text(&plan, n));
        }
        let plan = s.current.clone().ok_or_else(|| GatewayError::Rejected {
            status: 400,
            message: "feedback before any edit".into(),
        })?;
        Ok(match (kind, &plan) {
            (Request::Describe, StepPlan::ShotError) => {
                json!({"is_error": true, "error_message": "Internal Server Error", "screenshot_description": "", "suggestions": ""}).to_string()
            }
            (Request::Describe, StepPlan::Scored { suggestions, .. }) => json!({
                "is_error": false,
                "error_message": "",
                "screenshot_description": "A landing page with a header and a button.",
                "suggestions": suggestions,
            })
            .to_string(),
            (Request::Grade, StepPlan::Scored { shot, .. }) => json!({"analysis": "scripted", "grade": shot}).to_string(),
            (Request::Decide, StepPlan::Scored { move_on, .. }) => if *move_on { "yes" } else { "no" }.to_string(),
            (Request::Judge, StepPlan::Scored { gui: Some(v), .. }) => json!({
                "test_passed": v.passed,
                "improvement_suggestions": v.suggestions,
                "grade": v.grade,
            })
            .to_string(),
            (Request::Synthesize, _) => "I would rather not.".to_string(),
            (Request::GuiStep, _) => json!({"action": "finish", "summary": "done"}).to_string(),
            (kind, plan) => return Err(GatewayError::Rejected { status: 400, message: format!("unexpected {kind:?} request for {plan:?}") }),
        })
    }
}

fn edit_text(plan: &StepPlan, n: u32) -> String {
    let body = match plan {
        StepPlan::EmptyEdit => return "I will think about it.".to_string(),
        StepPlan::ExecError => format!("<h1>revision {n}</h1>\n{FAIL_MARKER}"),
        _ => format!("<h1>revision {n}</h1>"),
    };
    let gui = match plan {
        StepPlan::Scored { gui: None, .. } => String::new(),
        _ => "\n<boltAction type=\"gui_agent_test\">\nOpen the page and press the button.\n</boltAction>".to_string(),
    };
    format!(
        "<boltArtifact id=\"site\" title=\"Site\">\n<boltAction type=\"file\" filePath=\"index.html\">\n{body}\n</boltAction>{gui}\n</boltArtifact>"
    )
}

#[async_trait]
impl ChatModel for ScriptedModel {
    async fn complete(&self, _endpoint: &ModelEndpoint, turns: &[ChatTurn]) -> Result<Completion, GatewayError> {
        let text = self.answer(turns)?;
        Ok(Completion {
            text,
            usage: TokenUsage::default(),
            attempts: 1,
        })
    }
}

/// Fails whenever the workspace's `index.html` carries the failure marker
/// written by a scripted `ExecError` edit.
#[derive(Debug, Default)]
pub struct ScriptedExecutor {
    pub runs: u32,
}

#[async_trait]
impl Executor for ScriptedExecutor {
    async fn execute(&mut self, workspace: &Workspace, _commands: &[String]) -> ExecutionOutput {
        self.runs += 1;
        let page = std::fs::read_to_string(workspace.root().join("index.html")).unwrap_or_default();
        if page.contains(FAIL_MARKER) {
            return ExecutionOutput {
                stderr: "Error: boom".into(),
                exit_code: Some(1),
                ..ExecutionOutput::error(ExecPhase::Launch, "the server exited during startup")
            };
        }
        ExecutionOutput {
            phase: ExecPhase::Runtime,
            stdout: String::new(),
            stderr: String::new(),
            exit_code: None,
            is_error: false,
            served_url: Some(SERVED_URL.into()),
            diagnostic: None,
        }
    }

    async fn shutdown(&mut self) {}
}

/// Returns the same tiny image for every URL.
#[derive(Debug, Default)]
pub struct StaticScreenshots;

#[async_trait]
impl ScreenshotSource for StaticScreenshots {
    async fn capture(&self, url: &str) -> Result<ScreenshotImage, BrowserError> {
        Ok(ScreenshotImage {
            png: b"\x89PNG\r\n\x1a\nscripted".to_vec(),
            width: 1,
            height: 1,
            url: url.to_string(),
        })
    }
}

/// A GUI session that finishes immediately.
#[derive(Debug, Default)]
pub struct InstantGuiSession;

#[async_trait]
impl GuiSession for InstantGuiSession {
    async fn run(&self, _instruction: &str, _served_url: &str) -> Result<GuiTrajectory, GatewayError> {
        Ok(GuiTrajectory {
            steps: Vec::new(),
            cap: 15,
            aborted: None,
        })
    }
}
