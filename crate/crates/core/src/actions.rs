//! Tagged-action parsing for coding-model output.
//!
//! The model edits the project through `boltAction` blocks:
//!
//! ```text
//! <boltAction type="file" filePath="src/App.jsx">
//! ...whole file...
//! </boltAction>
//! <boltAction type="shell">
//! npm install react-router-dom
//! </boltAction>
//! <boltAction type="gui_agent_test">
//! Verify the search box filters the list.
//! </boltAction>
//! ```
//!
//! Accepted attributes are `type` and `filePath` (quoted with `"` or `'`).
//! `boltArtifact` wrappers and any text between blocks are ignored. The body
//! of a block starts after the opening tag and ends at the first
//! `</boltAction>`; one newline directly after the opening tag and one
//! directly before the closing tag belong to the markup, not the body.
//!
//! A body that itself contains the closing tag is escaped on render by
//! inserting a backslash after the `<` (`<\/boltAction`); every run of
//! backslashes in that position gains one more, so the escape is reversible.

use serde::{Deserialize, Serialize};
use std::fmt;

const OPEN_TAG: &str = "<boltAction";
const CLOSE_TAG: &str = "</boltAction>";
const CLOSE_STEM: &str = "/boltAction";

/// Parsed model output: file replacements, shell commands and an optional
/// GUI-test trigger.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSet {
    pub file_edits: Vec<FileEdit>,
    pub shell_commands: Vec<String>,
    pub gui_test_instruction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEdit {
    /// Normalized, workspace-relative path using `/` separators.
    pub path: String,
    pub content: String,
}

impl ActionSet {
    pub fn is_empty(&self) -> bool {
        self.file_edits.is_empty() && self.shell_commands.is_empty() && self.gui_test_instruction.is_none()
    }

    /// Checks the invariants `render` relies on for a lossless round trip.
    pub fn validate(&self) -> Result<(), InvalidActionSet> {
        for edit in &self.file_edits {
            match normalize_path(&edit.path) {
                Ok(norm) if norm == edit.path => {}
                Ok(_) => return Err(InvalidActionSet::UnnormalizedPath(edit.path.clone())),
                Err(e) => return Err(InvalidActionSet::Path(e)),
            }
        }
        for cmd in &self.shell_commands {
            if cmd.trim().is_empty() || cmd.trim() != cmd {
                return Err(InvalidActionSet::ShellCommand(cmd.clone()));
            }
        }
        if let Some(text) = &self.gui_test_instruction {
            if text.trim().is_empty() || text.trim() != text {
                return Err(InvalidActionSet::GuiInstruction(text.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidActionSet {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("path `{0}` is not in normalized form")]
    UnnormalizedPath(String),
    #[error("shell command must be non-empty and carry no surrounding whitespace: {0:?}")]
    ShellCommand(String),
    #[error("GUI-test instruction must be non-empty and carry no surrounding whitespace: {0:?}")]
    GuiInstruction(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PathError {
    #[error("empty path")]
    Empty,
    #[error("absolute path `{0}`")]
    Absolute(String),
    #[error("path `{0}` escapes the workspace root")]
    Escapes(String),
    #[error("path `{0}` contains a forbidden character")]
    ForbiddenChar(String),
}

/// Normalizes a model-supplied path to a workspace-relative `a/b/c` form.
///
/// `.` segments and empty segments are dropped and `..` pops the previous
/// segment; popping past the root is rejected, as are absolute paths, drive
/// prefixes and control characters.
pub fn normalize_path(raw: &str) -> Result<String, PathError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(PathError::Empty);
    }
    if trimmed.chars().any(|c| c.is_control() || matches!(c, '"' | '<' | '>')) {
        return Err(PathError::ForbiddenChar(raw.to_string()));
    }
    let unified = trimmed.replace('\\', "/");
    if unified.starts_with('/') || unified.starts_with('~') {
        return Err(PathError::Absolute(raw.to_string()));
    }
    let bytes = unified.as_bytes();
    if bytes.len() >= 2 && bytes[1] == b':' && bytes[0].is_ascii_alphabetic() {
        return Err(PathError::Absolute(raw.to_string()));
    }
    let mut segments: Vec<&str> = Vec::new();
    for seg in unified.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                if segments.pop().is_none() {
                    return Err(PathError::Escapes(raw.to_string()));
                }
            }
            s => segments.push(s),
        }
    }
    if segments.is_empty() {
        return Err(PathError::Empty);
    }
    Ok(segments.join("/"))
}

/// Non-fatal problems found while parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseWarning {
    /// Opening tag never closed with `>`.
    MalformedTag {
        offset: usize,
    },
    /// No `</boltAction>` after an opening tag.
    Unterminated {
        offset: usize,
    },
    MissingType {
        offset: usize,
    },
    UnknownType {
        offset: usize,
        action_type: String,
    },
    MissingFilePath {
        offset: usize,
    },
    RejectedPath {
        offset: usize,
        path: String,
        reason: String,
    },
    EmptyBody {
        offset: usize,
        action_type: String,
    },
    ExtraGuiTest {
        offset: usize,
    },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::MalformedTag { offset } => {
                write!(f, "malformed action tag at byte {offset}")
            }
            ParseWarning::Unterminated { offset } => {
                write!(f, "action at byte {offset} is missing {CLOSE_TAG}")
            }
            ParseWarning::MissingType { offset } => {
                write!(f, "action at byte {offset} has no type attribute")
            }
            ParseWarning::UnknownType { offset, action_type } => {
                write!(f, "unknown action type `{action_type}` at byte {offset}")
            }
            ParseWarning::MissingFilePath { offset } => {
                write!(f, "file action at byte {offset} has no filePath attribute")
            }
            ParseWarning::RejectedPath { offset, path, reason } => {
                write!(f, "file action at byte {offset} rejected (`{path}`): {reason}")
            }
            ParseWarning::EmptyBody { offset, action_type } => {
                write!(f, "{action_type} action at byte {offset} has an empty body")
            }
            ParseWarning::ExtraGuiTest { offset } => {
                write!(f, "additional gui_agent_test action at byte {offset} ignored")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedOutput {
    pub actions: ActionSet,
    pub warnings: Vec<ParseWarning>,
}

impl ParsedOutput {
    /// No recognizable action: the engine treats the step as erroneous.
    pub fn is_empty_edit(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Lossy entry point for raw bytes.
pub fn parse_bytes(bytes: &[u8]) -> ParsedOutput {
    parse(&String::from_utf8_lossy(bytes))
}

/// Extracts every well-formed action block. Never fails; problems become
/// warnings.
pub fn parse(text: &str) -> ParsedOutput {
    let mut out = ParsedOutput::default();
    let mut cursor = 0;

    while let Some(rel) = text[cursor..].find(OPEN_TAG) {
        let start = cursor + rel;
        let after_name = start + OPEN_TAG.len();
        // `<boltActionFoo` is not our tag.
        match text[after_name..].chars().next() {
            Some(c) if c.is_whitespace() || c == '>' => {}
            _ => {
                cursor = after_name;
                continue;
            }
        }
        let Some(tag_end) = find_tag_end(text, after_name) else {
            out.warnings.push(ParseWarning::MalformedTag { offset: start });
            break;
        };
        let attrs = parse_attributes(&text[after_name..tag_end]);
        let body_start = tag_end + 1;
        let Some(close_rel) = text[body_start..].find(CLOSE_TAG) else {
            out.warnings.push(ParseWarning::Unterminated { offset: start });
            break;
        };
        let body_end = body_start + close_rel;
        cursor = body_end + CLOSE_TAG.len();

        let body = unescape_body(strip_markup_newlines(&text[body_start..body_end]));
        let attr = |name: &str| attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str());

        match attr("type") {
            None => out.warnings.push(ParseWarning::MissingType { offset: start }),
            Some("file") => match attr("filePath") {
                None => out.warnings.push(ParseWarning::MissingFilePath { offset: start }),
                Some(raw) => match normalize_path(raw) {
                    Ok(path) => out.actions.file_edits.push(FileEdit { path, content: body }),
                    Err(e) => out.warnings.push(ParseWarning::RejectedPath {
                        offset: start,
                        path: raw.to_string(),
                        reason: e.to_string(),
                    }),
                },
            },
            Some("shell") => {
                let cmd = body.trim();
                if cmd.is_empty() {
                    out.warnings.push(ParseWarning::EmptyBody {
                        offset: start,
                        action_type: "shell".into(),
                    });
                } else {
                    out.actions.shell_commands.push(cmd.to_string());
                }
            }
            Some("gui_agent_test") => {
                let instruction = body.trim();
                if instruction.is_empty() {
                    out.warnings.push(ParseWarning::EmptyBody {
                        offset: start,
                        action_type: "gui_agent_test".into(),
                    });
                } else if out.actions.gui_test_instruction.is_some() {
                    out.warnings.push(ParseWarning::ExtraGuiTest { offset: start });
                } else {
                    out.actions.gui_test_instruction = Some(instruction.to_string());
                }
            }
            Some(other) => out.warnings.push(ParseWarning::UnknownType {
                offset: start,
                action_type: other.to_string(),
            }),
        }
    }
    out
}

/// Renders an action set back into tagged blocks. `parse(render(a)) == a`
/// for every `a` that passes [`ActionSet::validate`].
pub fn render(actions: &ActionSet) -> String {
    let mut out = String::new();
    for edit in &actions.file_edits {
        out.push_str(&format!(
            "<boltAction type=\"file\" filePath=\"{}\">\n{}\n{CLOSE_TAG}\n",
            escape_attr(&edit.path),
            escape_body(&edit.content)
        ));
    }
    for cmd in &actions.shell_commands {
        out.push_str(&format!(
            "<boltAction type=\"shell\">\n{}\n{CLOSE_TAG}\n",
            escape_body(cmd)
        ));
    }
    if let Some(text) = &actions.gui_test_instruction {
        out.push_str(&format!(
            "<boltAction type=\"gui_agent_test\">\n{}\n{CLOSE_TAG}\n",
            escape_body(text)
        ));
    }
    out
}

/// Position of the `>` closing an opening tag, skipping quoted values.
fn find_tag_end(text: &str, from: usize) -> Option<usize> {
    let mut quote: Option<char> = None;
    for (i, c) in text[from..].char_indices() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), _) => {}
            (None, '"') | (None, '\'') => quote = Some(c),
            (None, '>') => return Some(from + i),
            (None, '<') => return None,
            _ => {}
        }
    }
    None
}

fn parse_attributes(raw: &str) -> Vec<(String, String)> {
    let mut attrs = Vec::new();
    let mut rest = raw.trim_start();
    while !rest.is_empty() {
        let name_end = rest.find(|c: char| c == '=' || c.is_whitespace()).unwrap_or(rest.len());
        let name = &rest[..name_end];
        rest = rest[name_end..].trim_start();
        if let Some(after_eq) = rest.strip_prefix('=') {
            let after_eq = after_eq.trim_start();
            let mut chars = after_eq.chars();
            match chars.next() {
                Some(q @ ('"' | '\'')) => {
                    let inner = &after_eq[1..];
                    let end = inner.find(q).unwrap_or(inner.len());
                    attrs.push((name.to_string(), unescape_attr(&inner[..end])));
                    rest = inner.get(end + 1..).unwrap_or("").trim_start();
                }
                _ => {
                    let end = after_eq.find(char::is_whitespace).unwrap_or(after_eq.len());
                    attrs.push((name.to_string(), unescape_attr(&after_eq[..end])));
                    rest = after_eq[end..].trim_start();
                }
            }
        } else if !name.is_empty() {
            attrs.push((name.to_string(), String::new()));
        } else {
            break;
        }
    }
    attrs
}

fn strip_markup_newlines(body: &str) -> &str {
    let body = body
        .strip_prefix("\r\n")
        .or_else(|| body.strip_prefix('\n'))
        .unwrap_or(body);
    body.strip_suffix('\n').unwrap_or(body)
}

fn escape_attr(value: &str) -> String {
    value
        .replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn unescape_attr(value: &str) -> String {
    value
        .replace("&quot;", "\"")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&apos;", "'")
        .replace("&amp;", "&")
}

/// `<` + k backslashes + `/boltAction` becomes `<` + (k+1) backslashes + ...
fn escape_body(body: &str) -> String {
    rewrite_close_stems(body, |n| n + 1)
}

fn unescape_body(body: &str) -> String {
    rewrite_close_stems(body, |n| n.saturating_sub(1))
}

fn rewrite_close_stems(body: &str, count: impl Fn(usize) -> usize) -> String {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(pos) = rest.find('<') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos + 1..];
        let slashes = tail.bytes().take_while(|b| *b == b'\\').count();
        if tail[slashes..].starts_with(CLOSE_STEM) {
            out.push('<');
            out.push_str(&"\\".repeat(count(slashes)));
            rest = &tail[slashes..];
        } else {
            out.push('<');
            rest = tail;
        }
    }
    out.push_str(rest);
    out
}
