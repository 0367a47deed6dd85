//! Landing-page screenshot capture and the describe/grade exchange with the
//! feedback VLM.

use crate::browser::{Browser, BrowserError, ScreenshotImage};
use crate::gateway::{ChatModel, ChatTurn, GatewayError, ModelEndpoint};
use crate::json_extract::{bool_field, extract_object, integer_field, string_field};
use crate::prompts;
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Duration;

pub const UNPARSEABLE: &str = "unparseable VLM output";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenshotFeedback {
    pub is_error: bool,
    pub error_message: String,
    pub description: String,
    pub suggestions: String,
    pub score_shot: u8,
}

impl ScreenshotFeedback {
    pub fn error(message: impl Into<String>) -> Self {
        Self {
            is_error: true,
            error_message: message.into(),
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.score_shot > 5 {
            return Err(format!("score_shot {} outside 0..=5", self.score_shot));
        }
        if self.is_error && !self.description.is_empty() {
            return Err("error feedback carries a description".into());
        }
        Ok(())
    }

    /// Trajectory message: description and suggestions (the score stays in
    /// the step record).
    pub fn to_message(&self) -> String {
        if self.is_error {
            return format!(
                "Screenshot feedback: the landing page shows an error.\nError: {}",
                self.error_message
            );
        }
        let suggestions = if self.suggestions.trim().is_empty() {
            "none"
        } else {
            self.suggestions.trim()
        };
        format!(
            "Screenshot feedback for the landing page.\nDescription: {}\nSuggestions: {suggestions}",
            self.description.trim()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisualConfig {
    pub viewport_width: u32,
    pub viewport_height: u32,
    pub settle_delay_ms: u64,
}

impl Default for VisualConfig {
    fn default() -> Self {
        Self {
            viewport_width: 1280,
            viewport_height: 720,
            settle_delay_ms: 2000,
        }
    }
}

/// Anything that can photograph the served landing page.
#[async_trait]
pub trait ScreenshotSource: Send + Sync {
    async fn capture(&self, url: &str) -> Result<ScreenshotImage, BrowserError>;
}

pub struct BrowserCapture {
    browser: Arc<Browser>,
    config: VisualConfig,
}

impl BrowserCapture {
    pub fn new(browser: Arc<Browser>, config: VisualConfig) -> Self {
        Self { browser, config }
    }
}

#[async_trait]
impl ScreenshotSource for BrowserCapture {
    async fn capture(&self, url: &str) -> Result<ScreenshotImage, BrowserError> {
        capture(&self.browser, url, &self.config).await
    }
}

/// Opens a fresh page at the viewport size, waits for the load to settle and
/// takes a viewport screenshot.
pub async fn capture(browser: &Browser, url: &str, config: &VisualConfig) -> Result<ScreenshotImage, BrowserError> {
    let page = browser.new_page(config.viewport_width, config.viewport_height).await?;
    let result = async {
        page.navigate(url).await?;
        if config.settle_delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(config.settle_delay_ms)).await;
        }
        page.screenshot().await
    }
    .await;
    page.close().await;
    let mut image = result?;
    if image.url.is_empty() {
        image.url = url.to_string();
    }
    Ok(image)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Described {
    is_error: bool,
    error_message: String,
    description: String,
    suggestions: String,
}

fn parse_description(text: &str) -> Result<Described, String> {
    let obj = extract_object(text).ok_or("no JSON object found")?;
    let is_error = bool_field(&obj, "is_error").ok_or("missing boolean field \"is_error\"")?;
    Ok(Described {
        is_error,
        error_message: string_field(&obj, "error_message").unwrap_or_default(),
        description: string_field(&obj, "screenshot_description").unwrap_or_default(),
        suggestions: string_field(&obj, "suggestions").unwrap_or_default(),
    })
}

fn parse_grade(text: &str) -> Result<u8, String> {
    let obj = extract_object(text).ok_or("no JSON object found")?;
    let grade = integer_field(&obj, "grade").ok_or("missing integer field \"grade\"")?;
    if !(0..=5).contains(&grade) {
        return Err(format!("grade {grade} is outside 0 to 5"));
    }
    Ok(grade as u8)
}

/// Sends the prompt with the image; on a parse failure asks once more.
/// `Ok(Err(reason))` means both replies were unusable.
async fn ask_with_reprompt<T>(
    model: &dyn ChatModel,
    endpoint: &ModelEndpoint,
    prompt: &str,
    image: &ScreenshotImage,
    parse: fn(&str) -> Result<T, String>,
) -> Result<Result<T, String>, GatewayError> {
    let mut turns = vec![ChatTurn::user_with_png(prompt, &image.png)];
    let first = model.complete(endpoint, &turns).await?.text;
    let reason = match parse(&first) {
        Ok(v) => return Ok(Ok(v)),
        Err(reason) => reason,
    };
    tracing::debug!(%reason, "reprompting feedback model");
    turns.push(ChatTurn::assistant(first));
    turns.push(ChatTurn::user(prompts::fill(
        prompts::REPROMPT_JSON,
        &[("reason", &reason)],
    )));
    let second = model.complete(endpoint, &turns).await?.text;
    Ok(parse(&second))
}

/// Error check, description and suggestions; `score_shot` is left at 0.
pub async fn describe(
    model: &dyn ChatModel,
    endpoint: &ModelEndpoint,
    image: &ScreenshotImage,
) -> Result<ScreenshotFeedback, GatewayError> {
    let prompt = prompts::fill(prompts::SCREENSHOT_DESCRIPTION, &[]);
    Ok(
        match ask_with_reprompt(model, endpoint, &prompt, image, parse_description).await? {
            Ok(d) if d.is_error => ScreenshotFeedback::error(if d.error_message.is_empty() {
                "the screenshot shows an error".to_string()
            } else {
                d.error_message
            }),
            Ok(d) => ScreenshotFeedback {
                is_error: false,
                error_message: String::new(),
                description: d.description,
                suggestions: d.suggestions,
                score_shot: 0,
            },
            Err(reason) => {
                tracing::warn!(%reason, "screenshot description unparseable after reprompt");
                ScreenshotFeedback::error(UNPARSEABLE)
            }
        },
    )
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GradeError {
    #[error("appearance grading failed: {0}")]
    Unusable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub async fn grade_appearance(
    model: &dyn ChatModel,
    endpoint: &ModelEndpoint,
    image: &ScreenshotImage,
) -> Result<u8, GradeError> {
    let prompt = prompts::fill(prompts::APPEARANCE_GRADE, &[]);
    ask_with_reprompt(model, endpoint, &prompt, image, parse_grade)
        .await?
        .map_err(GradeError::Unusable)
}

/// Describe then grade. An error page is not graded (score 0); a grade that
/// stays unusable marks the feedback as an error.
pub async fn assess(
    model: &dyn ChatModel,
    endpoint: &ModelEndpoint,
    image: &ScreenshotImage,
) -> Result<ScreenshotFeedback, GatewayError> {
    let mut feedback = describe(model, endpoint, image).await?;
    if feedback.is_error {
        return Ok(feedback);
    }
    match grade_appearance(model, endpoint, image).await {
        Ok(score) => feedback.score_shot = score,
        Err(GradeError::Gateway(e)) => return Err(e),
        Err(e @ GradeError::Unusable(_)) => {
            tracing::warn!(error = %e, "appearance grade unusable");
            return Ok(ScreenshotFeedback::error(e.to_string()));
        }
    }
    Ok(feedback)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn description_contract() {
        let d = parse_description(
            "Sure!\n```json\n{\"is_error\": true, \"error_message\": \"404 Not Found\", \"screenshot_description\": \"\", \"suggestions\": \"\"}\n```",
        )
        .unwrap();
        assert!(d.is_error);
        assert_eq!(d.error_message, "404 Not Found");
        assert!(parse_description("{\"error_message\": \"x\"}").is_err());
    }

    #[test]
    fn grade_range() {
        assert_eq!(parse_grade("{\"analysis\": \"ok\", \"grade\": 5}"), Ok(5));
        assert_eq!(parse_grade("{\"grade\": \"4\"}"), Ok(4));
        assert!(parse_grade("{\"grade\": 7}").is_err());
        assert!(parse_grade("{\"grade\": -1}").is_err());
        assert!(parse_grade("grade: 3").is_err());
    }

    #[test]
    fn message_first_line() {
        let ok = ScreenshotFeedback {
            description: "A hero banner.".into(),
            score_shot: 4,
            ..Default::default()
        };
        assert_eq!(
            ok.to_message(),
            "Screenshot feedback for the landing page.\nDescription: A hero banner.\nSuggestions: none"
        );
        assert!(ScreenshotFeedback::error("boom").check().is_ok());
    }
}
