//! Agentic website generation: edit/execute/feedback loop with
//! checkpointed backtracking, visual and GUI feedback, and step-level
//! advantage computation for training.

pub mod actions;
pub mod browser;
pub mod clock;
pub mod config;
pub mod engine;
pub mod exec;
pub mod feedback;
pub mod gateway;
pub mod gui;
pub mod json_extract;
pub mod prompts;
pub mod step_grpo;
pub mod testkit;
pub mod trajectory;
pub mod workspace;
