//! GUI-agent testing: instruction synthesis, the browser action loop, and
//! judging of the resulting trajectory.

use crate::actions;
use crate::browser::{Browser, BrowserError, Page};
use crate::gateway::{ChatModel, ChatTurn, GatewayError, ModelEndpoint};
use crate::json_extract::{bool_field, extract_object, integer_field, string_field};
use crate::prompts;
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::sync::Arc;
use std::time::Duration;

pub const JUDGING_FAILED: &str = "judging failed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuiActionKind {
    Click,
    TypeText,
    Scroll,
    Navigate,
    Wait,
    Finish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Index(u32),
    Selector(String),
    Point { x: f64, y: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuiAction {
    pub kind: GuiActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    /// Text to type, URL, scroll offset, wait in ms, or the finish summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argument: Option<String>,
}

impl GuiAction {
    pub fn finish(summary: impl Into<String>) -> Self {
        Self {
            kind: GuiActionKind::Finish,
            target: None,
            argument: Some(summary.into()),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        match self.kind {
            GuiActionKind::Click | GuiActionKind::TypeText if self.target.is_none() => {
                Err(format!("{:?} needs a target", self.kind))
            }
            GuiActionKind::TypeText | GuiActionKind::Navigate | GuiActionKind::Finish if self.argument.is_none() => {
                Err(format!("{:?} needs an argument", self.kind))
            }
            _ => Ok(()),
        }
    }

    /// Reads the agent reply format (`{"action": "click", "index": 3}` ...).
    pub fn from_reply(obj: &Map<String, Value>) -> Result<Self, String> {
        let name = string_field(obj, "action").ok_or("missing \"action\"")?;
        let kind = match name.trim().to_ascii_lowercase().as_str() {
            "click" => GuiActionKind::Click,
            "type_text" | "type" => GuiActionKind::TypeText,
            "scroll" => GuiActionKind::Scroll,
            "navigate" | "goto" => GuiActionKind::Navigate,
            "wait" => GuiActionKind::Wait,
            "finish" | "done" => GuiActionKind::Finish,
            other => return Err(format!("unknown action \"{other}\"")),
        };
        let target = if let Some(i) = integer_field(obj, "index") {
            Some(Target::Index(u32::try_from(i).map_err(|_| "negative index")?))
        } else if let Some(s) = string_field(obj, "selector").filter(|s| !s.is_empty()) {
            Some(Target::Selector(s))
        } else {
            match (
                obj.get("x").and_then(Value::as_f64),
                obj.get("y").and_then(Value::as_f64),
            ) {
                (Some(x), Some(y)) => Some(Target::Point { x, y }),
                _ => None,
            }
        };
        let argument = match kind {
            GuiActionKind::TypeText => string_field(obj, "text"),
            GuiActionKind::Navigate => string_field(obj, "url"),
            GuiActionKind::Scroll => Some(integer_field(obj, "dy").unwrap_or(600).to_string()),
            GuiActionKind::Wait => Some(integer_field(obj, "ms").unwrap_or(500).clamp(0, 10_000).to_string()),
            GuiActionKind::Finish => Some(string_field(obj, "summary").unwrap_or_default()),
            GuiActionKind::Click => None,
        };
        let action = Self { kind, target, argument };
        action.check()?;
        Ok(action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuiStep {
    pub observation: String,
    pub action: GuiAction,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GuiTrajectory {
    pub steps: Vec<GuiStep>,
    pub cap: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl GuiTrajectory {
    /// The text handed to the judge. Every field is JSON-encoded so that
    /// `parse_judge_text` recovers the trajectory exactly.
    pub fn judge_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "Step {}\n  observation: {}\n  action: {}\n  outcome: {}\n",
                i + 1,
                serde_json::to_string(&s.observation).expect("string serializes"),
                serde_json::to_string(&s.action).expect("action serializes"),
                serde_json::to_string(&s.outcome).expect("outcome serializes"),
            ));
        }
        if let Some(reason) = &self.aborted {
            out.push_str(&format!(
                "Session aborted: {}\n",
                serde_json::to_string(reason).expect("string serializes")
            ));
        }
        out
    }

    pub fn parse_judge_text(text: &str, cap: u32) -> Result<Self, String> {
        let mut t = GuiTrajectory {
            cap,
            ..Default::default()
        };
        let mut lines = text.lines();
        while let Some(line) = lines.next() {
            if let Some(rest) = line.strip_prefix("Session aborted: ") {
                t.aborted = Some(serde_json::from_str(rest).map_err(|e| e.to_string())?);
                continue;
            }
            if !line.starts_with("Step ") {
                return Err(format!("unexpected line: {line}"));
            }
            let mut field = |name: &str| -> Result<String, String> {
                let l = lines.next().ok_or("truncated step")?;
                l.strip_prefix(&format!("  {name}: "))
                    .map(str::to_string)
                    .ok_or_else(|| format!("expected {name}"))
            };
            let observation = serde_json::from_str(&field("observation")?).map_err(|e| e.to_string())?;
            let action = serde_json::from_str(&field("action")?).map_err(|e| e.to_string())?;
            let outcome = serde_json::from_str(&field("outcome")?).map_err(|e| e.to_string())?;
            t.steps.push(GuiStep {
                observation,
                action,
                outcome,
            });
        }
        Ok(t)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serializes"));
            out.push('\n');
        }
        if let Some(reason) = &self.aborted {
            out.push_str(&json!({ "aborted": reason }).to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuiFeedback {
    pub test_passed: bool,
    pub score_gui: u8,
    pub suggestions: String,
}

impl GuiFeedback {
    pub fn judging_failed() -> Self {
        Self {
            test_passed: false,
            score_gui: 1,
            suggestions: JUDGING_FAILED.into(),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if !(1..=5).contains(&self.score_gui) {
            return Err(format!("score_gui {} outside 1..=5", self.score_gui));
        }
        if self.test_passed && !self.suggestions.is_empty() {
            return Err("a passing test carries suggestions".into());
        }
        Ok(())
    }

    pub fn to_message(&self, instruction: &str) -> String {
        if self.test_passed {
            format!("GUI-agent testing passed.\nTesting instruction: {}", instruction.trim())
        } else {
            format!(
                "GUI-agent testing revealed problems.\nTesting instruction: {}\nImprovement suggestions: {}",
                instruction.trim(),
                self.suggestions.trim()
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthesisError {
    #[error("no gui_agent_test block in the reply after a reprompt")]
    MissingBlock,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Asks the coding model for a GUI-test instruction covering every
/// requirement of the original request.
pub async fn synthesize_instruction(
    model: &dyn ChatModel,
    endpoint: &ModelEndpoint,
    original_instruction: &str,
) -> Result<String, SynthesisError> {
    let prompt = prompts::fill(
        prompts::GUI_TEST_TRIGGER,
        &[("instruction", original_instruction.trim())],
    );
    let mut turns = vec![ChatTurn::user(prompt)];
    let first = model.complete(endpoint, &turns).await?.text;
    if let Some(i) = actions::parse(&first).actions.gui_test_instruction {
        return Ok(i);
    }
    turns.push(ChatTurn::assistant(first));
    turns.push(ChatTurn::user(prompts::REPROMPT_GUI_TRIGGER));
    let second = model.complete(endpoint, &turns).await?.text;
    actions::parse(&second)
        .actions
        .gui_test_instruction
        .ok_or(SynthesisError::MissingBlock)
}

fn parse_judgement(text: &str) -> Result<GuiFeedback, String> {
    let obj = extract_object(text).ok_or("no JSON object found")?;
    let test_passed = bool_field(&obj, "test_passed").ok_or("missing boolean field \"test_passed\"")?;
    let grade = integer_field(&obj, "grade").ok_or("missing integer field \"grade\"")?;
    if !(1..=5).contains(&grade) {
        return Err(format!("grade {grade} is outside 1 to 5"));
    }
    let mut suggestions = string_field(&obj, "improvement_suggestions").unwrap_or_default();
    if test_passed && !suggestions.trim().is_empty() {
        tracing::warn!("judge passed the test but gave suggestions; dropping them");
        suggestions.clear();
    }
    Ok(GuiFeedback {
        test_passed,
        score_gui: grade as u8,
        suggestions: suggestions.trim().to_string(),
    })
}

/// `test_passed` is read by its name: true means the run revealed no flaw.
pub async fn judge(
    model: &dyn ChatModel,
    endpoint: &ModelEndpoint,
    gui_instruction: &str,
    trajectory: &GuiTrajectory,
) -> Result<GuiFeedback, GatewayError> {
    let prompt = prompts::fill(
        prompts::GUI_JUDGE,
        &[
            ("gui_instruction", gui_instruction.trim()),
            ("result", trajectory.judge_text().trim_end()),
        ],
    );
    let mut turns = vec![ChatTurn::user(prompt)];
    let first = model.complete(endpoint, &turns).await?.text;
    let reason = match parse_judgement(&first) {
        Ok(f) => return Ok(f),
        Err(r) => r,
    };
    turns.push(ChatTurn::assistant(first));
    turns.push(ChatTurn::user(prompts::fill(
        prompts::REPROMPT_JSON,
        &[("reason", &reason)],
    )));
    let second = model.complete(endpoint, &turns).await?.text;
    Ok(parse_judgement(&second).unwrap_or_else(|reason| {
        tracing::warn!(%reason, "GUI judgement unparseable after reprompt");
        GuiFeedback::judging_failed()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementInfo {
    pub index: u32,
    pub tag: String,
    pub role: String,
    pub text: String,
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub url: String,
    pub title: String,
    pub elements: Vec<ElementInfo>,
    pub screenshot: Vec<u8>,
}

impl Observation {
    pub fn summary(&self) -> String {
        format!(
            "{} \"{}\" ({} interactable elements)",
            self.url,
            self.title,
            self.elements.len()
        )
    }

    fn element_lines(&self) -> String {
        if self.elements.is_empty() {
            return "(none)".into();
        }
        self.elements
            .iter()
            .map(|e| {
                let role = if e.role.is_empty() {
                    e.tag.as_str()
                } else {
                    e.role.as_str()
                };
                format!(
                    "[{}] {} \"{}\" @ {},{},{},{}",
                    e.index, role, e.text, e.x, e.y, e.width, e.height
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A browser page the agent can look at and act on.
#[async_trait]
pub trait GuiSurface: Send {
    async fn observe(&mut self) -> Result<Observation, BrowserError>;
    /// Element-level failures come back as `Outcome::Failed`; an `Err` means
    /// the browser itself is gone.
    async fn perform(&mut self, action: &GuiAction) -> Result<Outcome, BrowserError>;
}

const DIGEST_JS: &str = r#"(() => {
  const sel = 'a,button,input,select,textarea,summary,label,[role=button],[role=link],[role=checkbox],[role=tab],[role=menuitem],[onclick],[contenteditable=""],[contenteditable=true]';
  document.querySelectorAll('[data-webgen-idx]').forEach(e => e.removeAttribute('data-webgen-idx'));
  const out = [];
  for (const el of document.querySelectorAll(sel)) {
    const r = el.getBoundingClientRect();
    const st = getComputedStyle(el);
    if (r.width < 1 || r.height < 1 || st.visibility === 'hidden' || st.display === 'none') continue;
    const i = out.length;
    el.setAttribute('data-webgen-idx', String(i));
    const text = (el.innerText || el.value || el.getAttribute('aria-label') || el.getAttribute('placeholder') || el.getAttribute('title') || '').trim().replace(/\s+/g, ' ').slice(0, 80);
    out.push({index: i, tag: el.tagName.toLowerCase(), role: el.getAttribute('role') || el.getAttribute('type') || '', text,
      x: Math.round(r.left), y: Math.round(r.top), width: Math.round(r.width), height: Math.round(r.height)});
    if (out.length >= 100) break;
  }
  return out;
})()"#;

pub struct PageSurface {
    page: Page,
    base_url: String,
}

impl PageSurface {
    pub fn new(page: Page, base_url: impl Into<String>) -> Self {
        Self {
            page,
            base_url: base_url.into(),
        }
    }

    pub fn into_page(self) -> Page {
        self.page
    }

    fn locate_js(target: &Target) -> Option<String> {
        let query = match target {
            Target::Index(i) => format!("document.querySelector('[data-webgen-idx=\"{i}\"]')"),
            Target::Selector(s) => format!(
                "(() => {{ try {{ return document.querySelector({}); }} catch (e) {{ return null; }} }})()",
                serde_json::to_string(s).expect("string serializes")
            ),
            Target::Point { .. } => return None,
        };
        Some(query)
    }

    /// Scrolls the target into view and returns its centre, if it exists.
    async fn centre(&self, target: &Target) -> Result<Option<(f64, f64)>, BrowserError> {
        let Some(query) = Self::locate_js(target) else {
            if let Target::Point { x, y } = target {
                return Ok(Some((*x, *y)));
            }
            return Ok(None);
        };
        let v = self
            .page
            .evaluate(&format!(
                "(() => {{ const el = {query}; if (!el) return null; el.scrollIntoView({{block: 'center', inline: 'center'}}); const r = el.getBoundingClientRect(); return [r.left + r.width / 2, r.top + r.height / 2]; }})()"
            ))
            .await?;
        Ok(v.as_array()
            .and_then(|a| Some((a.first()?.as_f64()?, a.get(1)?.as_f64()?))))
    }
}

fn failed(reason: impl Into<String>) -> Outcome {
    Outcome::Failed { reason: reason.into() }
}

fn is_fatal(e: &BrowserError) -> bool {
    matches!(e, BrowserError::Closed | BrowserError::Timeout(_))
}

#[async_trait]
impl GuiSurface for PageSurface {
    async fn observe(&mut self) -> Result<Observation, BrowserError> {
        let elements: Vec<ElementInfo> =
            serde_json::from_value(self.page.evaluate(DIGEST_JS).await?).unwrap_or_default();
        let meta = self.page.evaluate("[location.href, document.title]").await?;
        let shot = self.page.screenshot().await?;
        Ok(Observation {
            url: meta[0].as_str().unwrap_or_default().to_string(),
            title: meta[1].as_str().unwrap_or_default().to_string(),
            elements,
            screenshot: shot.png,
        })
    }

    async fn perform(&mut self, action: &GuiAction) -> Result<Outcome, BrowserError> {
        let result: Result<Outcome, BrowserError> = async {
            match action.kind {
                GuiActionKind::Finish => Ok(Outcome::Ok),
                GuiActionKind::Wait => {
                    let ms = action.argument.as_deref().and_then(|a| a.parse().ok()).unwrap_or(500u64);
                    tokio::time::sleep(Duration::from_millis(ms)).await;
                    Ok(Outcome::Ok)
                }
                GuiActionKind::Scroll => {
                    let dy: i64 = action.argument.as_deref().and_then(|a| a.parse().ok()).unwrap_or(600);
                    self.page.evaluate(&format!("window.scrollBy(0, {dy})")).await?;
                    Ok(Outcome::Ok)
                }
                GuiActionKind::Navigate => {
                    let raw = action.argument.clone().unwrap_or_default();
                    let url = match reqwest::Url::parse(&self.base_url).and_then(|b| b.join(&raw)) {
                        Ok(u) => u.to_string(),
                        Err(e) => return Ok(failed(format!("bad URL {raw:?}: {e}"))),
                    };
                    match self.page.navigate(&url).await {
                        Ok(()) => Ok(Outcome::Ok),
                        Err(e) if is_fatal(&e) => Err(e),
                        Err(e) => Ok(failed(e.to_string())),
                    }
                }
                GuiActionKind::Click => {
                    let target = action.target.as_ref().expect("checked");
                    let Some((x, y)) = self.centre(target).await? else {
                        return Ok(failed(format!("no element matches {target:?}")));
                    };
                    self.page.click_at(x, y).await?;
                    tokio::time::sleep(Duration::from_millis(300)).await;
                    Ok(Outcome::Ok)
                }
                GuiActionKind::TypeText => {
                    let target = action.target.as_ref().expect("checked");
                    if let Some(query) = Self::locate_js(target) {
                        let focused = self
                            .page
                            .evaluate(&format!(
                                "(() => {{ const el = {query}; if (!el) return false; el.scrollIntoView({{block: 'center'}}); el.focus(); return document.activeElement === el; }})()"
                            ))
                            .await?;
                        if focused != Value::Bool(true) {
                            return Ok(failed(format!("no focusable element matches {target:?}")));
                        }
                    } else if let Some((x, y)) = self.centre(target).await? {
                        self.page.click_at(x, y).await?;
                    }
                    self.page.insert_text(action.argument.as_deref().unwrap_or_default()).await?;
                    Ok(Outcome::Ok)
                }
            }
        }
        .await;
        match result {
            Err(e) if !is_fatal(&e) => Ok(failed(e.to_string())),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuiConfig {
    pub step_cap: u32,
    pub viewport_width: u32,
    pub viewport_height: u32,
}

impl Default for GuiConfig {
    fn default() -> Self {
        Self {
            step_cap: 15,
            viewport_width: 1280,
            viewport_height: 720,
        }
    }
}

/// Observe, ask the VLM for one action, perform it, record the outcome;
/// until `finish`, the step cap, or a dead browser.
pub async fn run_gui_session(
    surface: &mut dyn GuiSurface,
    model: &dyn ChatModel,
    endpoint: &ModelEndpoint,
    instruction: &str,
    step_cap: u32,
) -> Result<GuiTrajectory, GatewayError> {
    let mut trajectory = GuiTrajectory {
        steps: Vec::new(),
        cap: step_cap,
        aborted: None,
    };
    let mut history: Vec<String> = Vec::new();
    while (trajectory.steps.len() as u32) < step_cap {
        let obs = match surface.observe().await {
            Ok(o) => o,
            Err(e) => {
                trajectory.aborted = Some(format!("browser failure while observing: {e}"));
                break;
            }
        };
        let prompt = prompts::fill(
            prompts::GUI_AGENT_STEP,
            &[
                ("task", instruction.trim()),
                ("url", &obs.url),
                ("title", &obs.title),
                ("elements", &obs.element_lines()),
                (
                    "history",
                    &if history.is_empty() {
                        "(none)".to_string()
                    } else {
                        history.join("\n")
                    },
                ),
            ],
        );
        let mut turns = vec![ChatTurn::user_with_png(prompt, &obs.screenshot)];
        let first = model.complete(endpoint, &turns).await?.text;
        let action = match extract_object(&first)
            .ok_or_else(|| "no JSON object found".to_string())
            .and_then(|o| GuiAction::from_reply(&o))
        {
            Ok(a) => a,
            Err(reason) => {
                turns.push(ChatTurn::assistant(first));
                turns.push(ChatTurn::user(prompts::fill(
                    prompts::REPROMPT_JSON,
                    &[("reason", &reason)],
                )));
                let second = model.complete(endpoint, &turns).await?.text;
                match extract_object(&second)
                    .ok_or_else(|| "no JSON object found".to_string())
                    .and_then(|o| GuiAction::from_reply(&o))
                {
                    Ok(a) => a,
                    Err(reason) => {
                        trajectory.aborted = Some(format!("agent reply unusable after a reprompt: {reason}"));
                        break;
                    }
                }
            }
        };
        let outcome = match surface.perform(&action).await {
            Ok(o) => o,
            Err(e) => {
                trajectory.steps.push(GuiStep {
                    observation: obs.summary(),
                    action,
                    outcome: failed(e.to_string()),
                });
                trajectory.aborted = Some(format!("browser failure: {e}"));
                break;
            }
        };
        history.push(format!(
            "{}. {} -> {}",
            history.len() + 1,
            serde_json::to_string(&action).expect("action serializes"),
            match &outcome {
                Outcome::Ok => "ok".to_string(),
                Outcome::Failed { reason } => format!("failed: {reason}"),
            }
        ));
        let done = action.kind == GuiActionKind::Finish;
        trajectory.steps.push(GuiStep {
            observation: obs.summary(),
            action,
            outcome,
        });
        if done {
            break;
        }
    }
    Ok(trajectory)
}

/// Runs a GUI-agent session against a served site.
#[async_trait]
pub trait GuiSession: Send + Sync {
    async fn run(&self, instruction: &str, served_url: &str) -> Result<GuiTrajectory, GatewayError>;
}

pub struct BrowserGuiSession {
    browser: Arc<Browser>,
    model: Arc<dyn ChatModel>,
    endpoint: ModelEndpoint,
    config: GuiConfig,
}

impl BrowserGuiSession {
    pub fn new(browser: Arc<Browser>, model: Arc<dyn ChatModel>, endpoint: ModelEndpoint, config: GuiConfig) -> Self {
        Self {
            browser,
            model,
            endpoint,
            config,
        }
    }
}

#[async_trait]
impl GuiSession for BrowserGuiSession {
    async fn run(&self, instruction: &str, served_url: &str) -> Result<GuiTrajectory, GatewayError> {
        let aborted = |reason: String| GuiTrajectory {
            steps: Vec::new(),
            cap: self.config.step_cap,
            aborted: Some(reason),
        };
        let page = match self
            .browser
            .new_page(self.config.viewport_width, self.config.viewport_height)
            .await
        {
            Ok(p) => p,
            Err(e) => return Ok(aborted(format!("could not open a page: {e}"))),
        };
        if let Err(e) = page.navigate(served_url).await {
            page.close().await;
            return Ok(aborted(format!("could not load the site: {e}")));
        }
        let mut surface = PageSurface::new(page, served_url);
        let result = run_gui_session(
            &mut surface,
            self.model.as_ref(),
            &self.endpoint,
            instruction,
            self.config.step_cap,
        )
        .await;
        surface.into_page().close().await;
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(s: &str) -> Map<String, Value> {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn reply_forms() {
        let a = GuiAction::from_reply(&obj(r#"{"action": "click", "index": 3}"#)).unwrap();
        assert_eq!(a.target, Some(Target::Index(3)));
        let a = GuiAction::from_reply(&obj(r##"{"action": "type_text", "selector": "#q", "text": "hi"}"##)).unwrap();
        assert_eq!(a.argument.as_deref(), Some("hi"));
        assert!(GuiAction::from_reply(&obj(r#"{"action": "type_text", "text": "hi"}"#)).is_err());
        assert!(GuiAction::from_reply(&obj(r#"{"action": "click"}"#)).is_err());
        assert!(GuiAction::from_reply(&obj(r#"{"action": "fly"}"#)).is_err());
        let f = GuiAction::from_reply(&obj(r#"{"action": "finish", "summary": "all good"}"#)).unwrap();
        assert_eq!(f, GuiAction::finish("all good"));
    }

    #[test]
    fn judgement_contract() {
        let f = parse_judgement("Looks fine.\n```json\n{\"test_passed\": true, \"improvement_suggestions\": \"add footer\", \"grade\": 5}\n```").unwrap();
        assert!(f.test_passed && f.suggestions.is_empty());
        assert!(parse_judgement("{\"test_passed\": false, \"grade\": 0}").is_err());
        assert!(GuiFeedback::judging_failed().check().is_ok());
    }

    #[test]
    fn judge_text_round_trip() {
        let t = GuiTrajectory {
            steps: vec![
                GuiStep {
                    observation: "http://x/ \"Home\" (2 interactable elements)".into(),
                    action: GuiAction {
                        kind: GuiActionKind::Click,
                        target: Some(Target::Point { x: 1.5, y: 2.0 }),
                        argument: None,
                    },
                    outcome: failed("no element\nmatches"),
                },
                GuiStep {
                    observation: String::new(),
                    action: GuiAction::finish("done"),
                    outcome: Outcome::Ok,
                },
            ],
            cap: 15,
            aborted: Some("browser died".into()),
        };
        assert_eq!(GuiTrajectory::parse_judge_text(&t.judge_text(), 15).unwrap(), t);
    }
}
