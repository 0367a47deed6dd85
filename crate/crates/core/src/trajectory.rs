//! The agent trajectory and the memory list of archived steps.

use crate::clock::Timestamp;
use crate::workspace::SnapshotId;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Instruction,
    ModelEdit,
    ExecutionOutput,
    ScreenshotFeedback,
    GuiFeedback,
}

impl EntryKind {
    /// Position within a step: edit, execution output, screenshot, GUI.
    fn rank(self) -> u8 {
        match self {
            EntryKind::Instruction => 0,
            EntryKind::ModelEdit => 1,
            EntryKind::ExecutionOutput => 2,
            EntryKind::ScreenshotFeedback => 3,
            EntryKind::GuiFeedback => 4,
        }
    }
}

/// One message of the trajectory; `step` is 0 for the instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub step: u32,
    pub kind: EntryKind,
    pub payload: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("step {0} is not in the trajectory")]
    StepNotFound(u32),
    #[error("entry {kind:?} for step {step} breaks the trajectory order")]
    OutOfOrder { step: u32, kind: EntryKind },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    entries: Vec<TrajectoryEntry>,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new("", Timestamp::from_unix_secs(0))
    }
}

impl Trajectory {
    pub fn new(instruction: impl Into<String>, timestamp: Timestamp) -> Self {
        Self {
            entries: vec![TrajectoryEntry {
                step: 0,
                kind: EntryKind::Instruction,
                payload: instruction.into(),
                timestamp,
            }],
        }
    }

    /// Rebuilds a trajectory from logged entries, checking the ordering
    /// invariants.
    pub fn from_entries(entries: Vec<TrajectoryEntry>) -> Result<Self, TrajectoryError> {
        let mut iter = entries.into_iter();
        let first = match iter.next() {
            Some(e) if e.kind == EntryKind::Instruction && e.step == 0 => e,
            Some(e) => {
                return Err(TrajectoryError::OutOfOrder {
                    step: e.step,
                    kind: e.kind,
                })
            }
            None => {
                return Err(TrajectoryError::OutOfOrder {
                    step: 0,
                    kind: EntryKind::Instruction,
                })
            }
        };
        let mut t = Trajectory { entries: vec![first] };
        for e in iter {
            t.push(e)?;
        }
        Ok(t)
    }

    pub fn instruction(&self) -> &str {
        &self.entries[0].payload
    }

    pub fn entries(&self) -> &[TrajectoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last_step(&self) -> u32 {
        self.entries.last().map(|e| e.step).unwrap_or(0)
    }

    /// Appends an entry. A new step must start with its model edit and the
    /// kinds inside one step must follow edit, execution output,
    /// screenshot feedback, GUI feedback.
    pub fn push(&mut self, entry: TrajectoryEntry) -> Result<(), TrajectoryError> {
        let last = self.entries.last().expect("instruction is always present");
        let ok = match entry.kind {
            EntryKind::Instruction => false,
            EntryKind::ModelEdit => entry.step > last.step,
            _ => entry.step == last.step && entry.kind.rank() > last.kind.rank(),
        };
        if !ok {
            return Err(TrajectoryError::OutOfOrder {
                step: entry.step,
                kind: entry.kind,
            });
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn contains_step(&self, step: u32) -> bool {
        step == 0 || self.entries.iter().any(|e| e.step == step)
    }

    /// Prefix ending just after the last entry of `step`. Step 0 keeps the
    /// instruction alone.
    pub fn truncate(&self, step: u32) -> Result<Trajectory, TrajectoryError> {
        let end = self
            .entries
            .iter()
            .rposition(|e| e.step == step)
            .ok_or(TrajectoryError::StepNotFound(step))?;
        Ok(Trajectory {
            entries: self.entries[..=end].to_vec(),
        })
    }

    /// Step numbers in order of appearance.
    pub fn steps(&self) -> Vec<u32> {
        let mut steps: Vec<u32> = self.entries.iter().map(|e| e.step).filter(|s| *s > 0).collect();
        steps.dedup();
        steps
    }

    pub fn step_entries(&self, step: u32) -> impl Iterator<Item = (usize, &TrajectoryEntry)> {
        self.entries.iter().enumerate().filter(move |(_, e)| e.step == step)
    }

    /// One JSON object per line, in trajectory order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TrajectoryLogError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            entries.push(serde_json::from_str(line).map_err(|e| TrajectoryLogError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(Trajectory::from_entries(entries)?)
    }

    /// Rewrites `path` atomically with the current trajectory.
    pub fn write_log(&self, path: &Path) -> std::io::Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(self.to_jsonl().as_bytes())?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryLogError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Order(#[from] TrajectoryError),
}

/// Memory-list entry: the archived state of one completed step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: u32,
    pub snapshot_id: SnapshotId,
    pub score_shot: Option<u8>,
    pub score_gui: Option<u8>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("cannot select a best step from an empty memory list")]
pub struct EmptySelection;

/// Orders records by GUI score, then screenshot score, then recency; an
/// absent score ranks below every present one.
pub fn compare_records(a: &StepRecord, b: &StepRecord) -> Ordering {
    a.score_gui
        .cmp(&b.score_gui)
        .then(a.score_shot.cmp(&b.score_shot))
        .then(a.step_index.cmp(&b.step_index))
}

/// Highest GUI score wins; ties go to the highest screenshot score, then to
/// the latest step.
pub fn select_best_step(records: &[StepRecord]) -> Result<&StepRecord, EmptySelection> {
    records
        .iter()
        .max_by(|a, b| compare_records(a, b))
        .ok_or(EmptySelection)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts() -> Timestamp {
        Timestamp::from_unix_secs(0)
    }

    fn entry(step: u32, kind: EntryKind) -> TrajectoryEntry {
        TrajectoryEntry {
            step,
            kind,
            payload: format!("{step}:{kind:?}"),
            timestamp: ts(),
        }
    }

    fn rec(step: u32, gui: Option<u8>, shot: Option<u8>) -> StepRecord {
        StepRecord {
            step_index: step,
            snapshot_id: format!("s{step}"),
            score_shot: shot,
            score_gui: gui,
        }
    }

    fn build(steps: u32) -> Trajectory {
        let mut t = Trajectory::new("make a site", ts());
        for s in 1..=steps {
            t.push(entry(s, EntryKind::ModelEdit)).unwrap();
            t.push(entry(s, EntryKind::ExecutionOutput)).unwrap();
            if s % 2 == 0 {
                t.push(entry(s, EntryKind::ScreenshotFeedback)).unwrap();
                t.push(entry(s, EntryKind::GuiFeedback)).unwrap();
            }
        }
        t
    }

    /// Independent oracle: keep the instruction and every entry tagged with a
    /// step at or below the target.
    fn prefix_oracle(t: &Trajectory, step: u32) -> Vec<TrajectoryEntry> {
        t.entries().iter().filter(|e| e.step <= step).cloned().collect()
    }

    #[test]
    fn truncate_matches_prefix_oracle() {
        let t = build(4);
        assert_eq!(t.truncate(2).unwrap().entries(), prefix_oracle(&t, 2).as_slice());
        let t5 = build(5);
        let one = t5.truncate(1).unwrap();
        assert_eq!(one.entries(), prefix_oracle(&t5, 1).as_slice());
        assert_eq!(one.len(), 3);
        assert_eq!(t.truncate(4).unwrap(), t);
        assert_eq!(t.truncate(0).unwrap().len(), 1);
        assert_eq!(t.truncate(9), Err(TrajectoryError::StepNotFound(9)));
        // the original is untouched
        assert_eq!(t.len(), build(4).len());
    }

    #[test]
    fn push_enforces_order() {
        let mut t = Trajectory::new("i", ts());
        assert!(t.push(entry(1, EntryKind::ExecutionOutput)).is_err());
        t.push(entry(1, EntryKind::ModelEdit)).unwrap();
        t.push(entry(1, EntryKind::ExecutionOutput)).unwrap();
        assert!(t.push(entry(1, EntryKind::ModelEdit)).is_err());
        assert!(t.push(entry(1, EntryKind::ExecutionOutput)).is_err());
        t.push(entry(1, EntryKind::GuiFeedback)).unwrap();
        assert!(t.push(entry(1, EntryKind::ScreenshotFeedback)).is_err());
        t.push(entry(2, EntryKind::ModelEdit)).unwrap();
    }

    #[test]
    fn jsonl_round_trip() {
        let t = build(3);
        assert_eq!(Trajectory::from_jsonl(&t.to_jsonl()).unwrap(), t);
        let line = t.to_jsonl().lines().nth(1).unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let pos: Vec<usize> = ["\"step\"", "\"kind\"", "\"payload\"", "\"timestamp\""]
            .iter()
            .map(|k| line.find(k).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{line}");
        assert_eq!(v["kind"], "model-edit");
    }

    #[test]
    fn select_best_examples() {
        assert_eq!(select_best_step(&[rec(1, Some(3), Some(4))]).unwrap().step_index, 1);
        let records = [
            rec(1, Some(5), Some(2)),
            rec(2, Some(5), Some(4)),
            rec(3, Some(4), Some(5)),
        ];
        assert_eq!(select_best_step(&records).unwrap().step_index, 2);
        let tie = [rec(1, Some(5), Some(4)), rec(2, Some(5), Some(4))];
        assert_eq!(select_best_step(&tie).unwrap().step_index, 2);
        // absent gui ranks below gui 1
        let absent = [rec(1, Some(1), Some(0)), rec(2, None, Some(5))];
        assert_eq!(select_best_step(&absent).unwrap().step_index, 1);
        assert_eq!(select_best_step(&[]), Err(EmptySelection));
    }
}
