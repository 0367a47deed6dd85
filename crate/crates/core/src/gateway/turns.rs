use super::ChatTurn;
use crate::actions;
use crate::trajectory::{EntryKind, Trajectory};

/// How a trajectory is laid out as chat turns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TurnOptions {
    /// Steps strictly below this index are reduced to one-line summaries.
    pub compact_before: u32,
}

/// The instruction is the first user turn, every model edit an assistant
/// turn, and the execution output plus feedback of a step one user turn.
pub fn trajectory_to_turns(trajectory: &Trajectory, options: TurnOptions) -> Vec<ChatTurn> {
    let mut turns = vec![ChatTurn::user(trajectory.instruction())];
    for step in trajectory.steps() {
        let compact = step < options.compact_before;
        let mut feedback = Vec::new();
        for (_, entry) in trajectory.step_entries(step) {
            match entry.kind {
                EntryKind::ModelEdit if compact => turns.push(ChatTurn::assistant(edit_summary(step, &entry.payload))),
                EntryKind::ModelEdit => turns.push(ChatTurn::assistant(entry.payload.clone())),
                EntryKind::Instruction => {}
                _ if compact => feedback.push(entry.payload.lines().next().unwrap_or("").to_string()),
                _ => feedback.push(entry.payload.clone()),
            }
        }
        if !feedback.is_empty() {
            turns.push(ChatTurn::user(feedback.join("\n\n")));
        }
    }
    turns
}

fn edit_summary(step: u32, payload: &str) -> String {
    let parsed = actions::parse(payload);
    let files: Vec<&str> = parsed.actions.file_edits.iter().map(|e| e.path.as_str()).collect();
    format!(
        "[step {step} output omitted to save context: wrote {} file(s){}{}]",
        files.len(),
        if files.is_empty() {
            String::new()
        } else {
            format!(" ({})", files.join(", "))
        },
        if parsed.actions.shell_commands.is_empty() {
            String::new()
        } else {
            format!(", ran {} command(s)", parsed.actions.shell_commands.len())
        }
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Timestamp;
    use crate::gateway::Role;
    use crate::trajectory::TrajectoryEntry;

    fn t() -> Trajectory {
        let ts = Timestamp::from_unix_secs(0);
        let mut t = Trajectory::new("SYSTEM\n\nbuild a site", ts);
        let push = |t: &mut Trajectory, step, kind, payload: &str| {
            t.push(TrajectoryEntry {
                step,
                kind,
                payload: payload.into(),
                timestamp: ts,
            })
            .unwrap()
        };
        push(
            &mut t,
            1,
            EntryKind::ModelEdit,
            "<boltAction type=\"file\" filePath=\"index.html\">x</boltAction>",
        );
        push(&mut t, 1, EntryKind::ExecutionOutput, "Execution succeeded.\nlog line");
        push(&mut t, 1, EntryKind::ScreenshotFeedback, "Screenshot feedback\nnice");
        push(&mut t, 2, EntryKind::ModelEdit, "edit two");
        push(&mut t, 2, EntryKind::ExecutionOutput, "Execution failed.\nboom");
        t
    }

    #[test]
    fn role_mapping() {
        let turns = trajectory_to_turns(&t(), TurnOptions::default());
        let roles: Vec<Role> = turns.iter().map(|t| t.role).collect();
        assert_eq!(
            roles,
            [Role::User, Role::Assistant, Role::User, Role::Assistant, Role::User]
        );
        assert_eq!(
            turns[2].plain_text(),
            "Execution succeeded.\nlog line\n\nScreenshot feedback\nnice"
        );
    }

    #[test]
    fn compaction_keeps_one_line_summaries() {
        let turns = trajectory_to_turns(&t(), TurnOptions { compact_before: 2 });
        assert_eq!(
            turns[1].plain_text(),
            "[step 1 output omitted to save context: wrote 1 file(s) (index.html)]"
        );
        assert_eq!(turns[2].plain_text(), "Execution succeeded.\n\nScreenshot feedback");
        assert_eq!(turns[3].plain_text(), "edit two");
    }
}
