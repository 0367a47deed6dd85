//! Prompt assets. The files under `prompts/` are the source of truth; this
//! module only fills their placeholders.

pub const SYSTEM_PREAMBLE: &str = include_str!("../prompts/system_preamble.md");
pub const SCREENSHOT_DESCRIPTION: &str = include_str!("../prompts/screenshot_description.md");
pub const APPEARANCE_GRADE: &str = include_str!("../prompts/appearance_grade.md");
pub const GUI_TEST_TRIGGER: &str = include_str!("../prompts/gui_test_trigger.md");
pub const GUI_JUDGE: &str = include_str!("../prompts/gui_judge.md");
pub const GUI_AGENT_STEP: &str = include_str!("../prompts/gui_agent_step.md");
pub const AGENT_DECISION: &str = include_str!("../prompts/agent_decision.md");

pub const REPROMPT_JSON: &str =
    "Your previous response could not be used: {reason}. Reply again with only the JSON object in the required format.";
pub const REPROMPT_YES_NO: &str = "Please answer with exactly one word: yes or no.";
pub const REPROMPT_GUI_TRIGGER: &str = "Your previous response did not contain a <boltAction type=\"gui_agent_test\"> block. Reply with only that block containing the GUI-agent testing instruction.";

fn strip_version_header(text: &str) -> &str {
    match text.strip_prefix("<!--") {
        Some(rest) => rest.find("-->\n").map(|i| &rest[i + 4..]).unwrap_or(text),
        None => text,
    }
}

/// Replaces `{name}` placeholders; unknown braces are left untouched.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = strip_version_header(template).trim_end().to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// The first trajectory message: the agent preamble followed by the user's
/// website request.
pub fn instruction(request: &str) -> String {
    format!("{}\n\n{}", fill(SYSTEM_PREAMBLE, &[]), request.trim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_named_placeholders_only() {
        let s = fill(GUI_JUDGE, &[("gui_instruction", "click it"), ("result", "ok")]);
        assert!(s.contains("click it"));
        assert!(!s.contains("{gui_instruction}"));
        assert!(s.contains("\"grade\": <int>"));
        let step = fill(GUI_AGENT_STEP, &[("task", "t")]);
        assert!(step.contains(r#"{"action": "finish""#));
        assert!(!step.starts_with("<!--"));
    }

    #[test]
    fn trigger_prompt_embeds_instruction() {
        let s = fill(GUI_TEST_TRIGGER, &[("instruction", "Build a todo app")]);
        assert!(s.contains("<instruction>Build a todo app</instruction>"));
        assert!(s.contains("Verify cream background and dark-teal buttons."));
    }
}
