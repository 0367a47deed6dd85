use crate::browser::BrowserConfig;
use crate::exec::ExecConfig;
use crate::feedback::VisualConfig;
use crate::gateway::{ModelEndpoint, ModelRole};
use crate::gui::GuiConfig;
use crate::step_grpo::MissingScorePolicy;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_iterations: u32,
    pub consecutive_error_limit: u32,
    /// Sampling temperature of the coding model.
    pub model_temperature: f64,
    /// Hard cap on code-generation calls, as a multiple of `max_iterations`.
    pub generation_budget_factor: u32,
    pub coding_llm: ModelEndpoint,
    pub feedback_vlm: ModelEndpoint,
    pub exec: ExecConfig,
    pub browser: BrowserConfig,
    pub visual: VisualConfig,
    pub gui: GuiConfig,
    pub missing_score_policy: MissingScorePolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            consecutive_error_limit: 5,
            model_temperature: 0.5,
            generation_budget_factor: 3,
            coding_llm: ModelEndpoint::new("http://127.0.0.1:8000/v1", "coding-llm", ModelRole::CodingLlm),
            feedback_vlm: ModelEndpoint::new("http://127.0.0.1:8000/v1", "feedback-vlm", ModelRole::FeedbackVlm),
            exec: ExecConfig::default(),
            browser: BrowserConfig::default(),
            visual: VisualConfig::default(),
            gui: GuiConfig::default(),
            missing_score_policy: MissingScorePolicy::Zero,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let config: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.max_iterations == 0 {
            return invalid("max_iterations must be >= 1".into());
        }
        if self.consecutive_error_limit == 0 {
            return invalid("consecutive_error_limit must be >= 1".into());
        }
        if self.generation_budget_factor == 0 {
            return invalid("generation_budget_factor must be >= 1".into());
        }
        if self.model_temperature.is_nan() || self.model_temperature < 0.0 {
            return invalid(format!(
                "model_temperature must be >= 0, got {}",
                self.model_temperature
            ));
        }
        if self.coding_llm.role != ModelRole::CodingLlm || self.feedback_vlm.role != ModelRole::FeedbackVlm {
            return invalid("coding_llm and feedback_vlm must carry their own roles".into());
        }
        self.coding_llm
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.feedback_vlm
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.exec.validate().map_err(ConfigError::Invalid)?;
        if self.gui.step_cap == 0 {
            return invalid("gui.step_cap must be >= 1".into());
        }
        if self.visual.viewport_width == 0 || self.visual.viewport_height == 0 {
            return invalid("viewport dimensions must be positive".into());
        }
        Ok(())
    }

    /// The coding endpoint with the run's sampling temperature applied.
    pub fn coding_endpoint(&self) -> ModelEndpoint {
        ModelEndpoint {
            temperature: self.model_temperature,
            ..self.coding_llm.clone()
        }
    }

    pub fn generation_budget(&self) -> u32 {
        self.max_iterations.saturating_mul(self.generation_budget_factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.max_iterations, c.consecutive_error_limit), (20, 5));
        assert_eq!(c.coding_endpoint().temperature, 0.5);
        assert_eq!(c.gui.step_cap, 15);
        assert_eq!((c.visual.viewport_width, c.visual.viewport_height), (1280, 720));
        c.validate().unwrap();
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: RunConfig = toml::from_str("max_iterations = 7\n[exec]\nreadiness_timeout_secs = 5\n").unwrap();
        assert_eq!(c.max_iterations, 7);
        assert_eq!(c.exec.readiness_timeout_secs, 5);
        assert_eq!(c.exec.install_timeout_secs, 300);
        let bad: RunConfig = toml::from_str("max_iterations = 0").unwrap();
        assert!(bad.validate().is_err());
    }
}
