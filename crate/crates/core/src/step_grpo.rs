//! Step rewards and group-normalized advantages over sampled trajectories,
//! plus the trainer-facing JSONL export.

use crate::trajectory::{EntryKind, TrajectoryEntry};
use crate::workspace::write_atomic;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub const EXPORT_SCHEMA: &str = "webgen.step-advantages";
pub const EXPORT_VERSION: u32 = 1;

const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageMode {
    PerStep,
    Outcome,
    Cumulative,
}

impl std::str::FromStr for AdvantageMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-step" => Ok(Self::PerStep),
            "outcome" => Ok(Self::Outcome),
            "cumulative" => Ok(Self::Cumulative),
            other => Err(format!("unknown advantage mode `{other}`")),
        }
    }
}

/// What an unscored component is worth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingScorePolicy {
    /// The missing component contributes 0.
    #[default]
    Zero,
    /// Steps with neither score are left out of the pool and the export.
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberStep {
    pub step: u32,
    pub score_shot: Option<u8>,
    pub score_gui: Option<u8>,
    /// 0-based line of this step's model edit in the member's trajectory log.
    pub output_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryMember {
    pub run_id: String,
    pub trajectory_log: PathBuf,
    pub steps: Vec<MemberStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryGroup {
    pub instruction_id: String,
    pub members: Vec<TrajectoryMember>,
}

impl TrajectoryGroup {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.members.len() < 2 {
            return Err(GrpoError::GroupTooSmall(self.members.len()));
        }
        for (i, m) in self.members.iter().enumerate() {
            if m.steps.is_empty() {
                return Err(GrpoError::EmptyMember(i));
            }
            if m.steps.windows(2).any(|w| w[0].step >= w[1].step) {
                return Err(GrpoError::UnorderedSteps(i));
            }
            for s in &m.steps {
                step_reward(s.score_shot, s.score_gui)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub trajectory: usize,
    pub step: u32,
    pub reward: f64,
    pub advantage: f64,
    pub mode: AdvantageMode,
}

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("screenshot score {0} is outside 0..=5")]
    ShotOutOfRange(u8),
    #[error("GUI score {0} is outside 1..=5")]
    GuiOutOfRange(u8),
    #[error("a group needs at least 2 members, got {0}")]
    GroupTooSmall(usize),
    #[error("member {0} has no steps")]
    EmptyMember(usize),
    #[error("member {0} lists steps out of order")]
    UnorderedSteps(usize),
    #[error("no step rewards to normalize")]
    EmptyPool,
    #[error("member {trajectory} step {step}: line {line} of {log} is not that step's model edit")]
    DanglingReference {
        trajectory: usize,
        step: u32,
        line: usize,
        log: String,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Screenshot score plus GUI score; an absent component counts 0.
pub fn step_reward(score_shot: Option<u8>, score_gui: Option<u8>) -> Result<f64, GrpoError> {
    if let Some(s) = score_shot.filter(|s| *s > 5) {
        return Err(GrpoError::ShotOutOfRange(s));
    }
    if let Some(g) = score_gui.filter(|g| !(1..=5).contains(g)) {
        return Err(GrpoError::GuiOutOfRange(g));
    }
    Ok(score_shot.unwrap_or(0) as f64 + score_gui.unwrap_or(0) as f64)
}

/// (x - mean) / std with the population std; all zeros when std vanishes.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= DEGENERATE_STD {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

fn included(step: &MemberStep, policy: MissingScorePolicy) -> bool {
    policy == MissingScorePolicy::Zero || step.score_shot.is_some() || step.score_gui.is_some()
}

/// (member, step, reward) for every step that enters the pool.
fn pool(group: &TrajectoryGroup, policy: MissingScorePolicy) -> Result<Vec<(usize, u32, f64)>, GrpoError> {
    group.validate()?;
    let mut out = Vec::new();
    for (i, m) in group.members.iter().enumerate() {
        for s in m.steps.iter().filter(|s| included(s, policy)) {
            out.push((i, s.step, step_reward(s.score_shot, s.score_gui)?));
        }
    }
    if out.is_empty() {
        return Err(GrpoError::EmptyPool);
    }
    Ok(out)
}

pub fn advantages(
    group: &TrajectoryGroup,
    mode: AdvantageMode,
    policy: MissingScorePolicy,
) -> Result<Vec<AdvantageRecord>, GrpoError> {
    match mode {
        AdvantageMode::PerStep => advantages_per_step(group, policy),
        AdvantageMode::Outcome => advantages_outcome(group, policy),
        AdvantageMode::Cumulative => advantages_cumulative(group, policy),
    }
}

pub fn advantages_per_step(
    group: &TrajectoryGroup,
    policy: MissingScorePolicy,
) -> Result<Vec<AdvantageRecord>, GrpoError> {
    let pooled = pool(group, policy)?;
    let rewards: Vec<f64> = pooled.iter().map(|p| p.2).collect();
    Ok(pooled
        .iter()
        .zip(standardize(&rewards))
        .map(|(&(trajectory, step, reward), advantage)| AdvantageRecord {
            trajectory,
            step,
            reward,
            advantage,
            mode: AdvantageMode::PerStep,
        })
        .collect())
}

pub fn advantages_outcome(
    group: &TrajectoryGroup,
    policy: MissingScorePolicy,
) -> Result<Vec<AdvantageRecord>, GrpoError> {
    let pooled = pool(group, policy)?;
    let mut members: Vec<usize> = pooled.iter().map(|p| p.0).collect();
    members.dedup();
    let outcomes: Vec<f64> = members
        .iter()
        .map(|m| {
            pooled
                .iter()
                .filter(|p| p.0 == *m)
                .map(|p| p.2)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let normalized: HashMap<usize, f64> = members.iter().copied().zip(standardize(&outcomes)).collect();
    Ok(pooled
        .iter()
        .map(|&(trajectory, step, reward)| AdvantageRecord {
            trajectory,
            step,
            reward,
            advantage: normalized[&trajectory],
            mode: AdvantageMode::Outcome,
        })
        .collect())
}

pub fn advantages_cumulative(
    group: &TrajectoryGroup,
    policy: MissingScorePolicy,
) -> Result<Vec<AdvantageRecord>, GrpoError> {
    let mut records = advantages_per_step(group, policy)?;
    // Records are grouped by member and ordered by step, so a reverse scan
    // builds each member's suffix sums.
    let mut running = 0.0;
    let mut current = None;
    for r in records.iter_mut().rev() {
        if current != Some(r.trajectory) {
            current = Some(r.trajectory);
            running = 0.0;
        }
        running += r.advantage;
        r.advantage = running;
        r.mode = AdvantageMode::Cumulative;
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub schema: String,
    pub version: u32,
    pub instruction_id: String,
    pub mode: AdvantageMode,
    pub missing_score_policy: MissingScorePolicy,
    pub group_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRange {
    pub log: String,
    /// Half-open range of log lines.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRef {
    pub log: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub instruction_id: String,
    pub trajectory: usize,
    pub run_id: String,
    pub step: u32,
    /// Everything the model saw before producing this step's edit.
    pub prompt_context: LineRange,
    /// The edit itself; the only span a trainer applies loss to.
    pub model_output: LineRef,
    pub reward: f64,
    pub advantage: f64,
    pub mode: AdvantageMode,
}

fn load_log(path: &Path) -> Result<Vec<String>, GrpoError> {
    let text = std::fs::read_to_string(path).map_err(|source| GrpoError::Io {
        context: format!("read {}", path.display()),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Builds the export lines (header first) after checking that every output
/// reference points at the right model edit.
pub fn export_lines(
    records: &[AdvantageRecord],
    group: &TrajectoryGroup,
    policy: MissingScorePolicy,
) -> Result<Vec<String>, GrpoError> {
    let mode = records.first().map(|r| r.mode).unwrap_or(AdvantageMode::PerStep);
    let header = ExportHeader {
        schema: EXPORT_SCHEMA.into(),
        version: EXPORT_VERSION,
        instruction_id: group.instruction_id.clone(),
        mode,
        missing_score_policy: policy,
        group_size: group.members.len(),
    };
    let mut sorted: Vec<&AdvantageRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.trajectory, r.step));

    let mut logs: HashMap<usize, Vec<String>> = HashMap::new();
    let mut lines = vec![serde_json::to_string(&header).expect("header serializes")];
    for r in sorted {
        let member = &group.members[r.trajectory];
        let log_name = member.trajectory_log.display().to_string();
        let dangling = |line| GrpoError::DanglingReference {
            trajectory: r.trajectory,
            step: r.step,
            line,
            log: log_name.clone(),
        };
        let step = member
            .steps
            .iter()
            .find(|s| s.step == r.step)
            .ok_or_else(|| dangling(0))?;
        if let std::collections::hash_map::Entry::Vacant(e) = logs.entry(r.trajectory) {
            e.insert(load_log(&member.trajectory_log)?);
        }
        let log = &logs[&r.trajectory];
        let entry: Option<TrajectoryEntry> = log.get(step.output_line).and_then(|l| serde_json::from_str(l).ok());
        match entry {
            Some(e) if e.kind == EntryKind::ModelEdit && e.step == r.step => {}
            _ => return Err(dangling(step.output_line)),
        }
        let rec = ExportRecord {
            instruction_id: group.instruction_id.clone(),
            trajectory: r.trajectory,
            run_id: member.run_id.clone(),
            step: r.step,
            prompt_context: LineRange {
                log: log_name.clone(),
                start: 0,
                end: step.output_line,
            },
            model_output: LineRef {
                log: log_name.clone(),
                line: step.output_line,
            },
            reward: r.reward,
            advantage: r.advantage,
            mode: r.mode,
        };
        lines.push(serde_json::to_string(&rec).expect("record serializes"));
    }
    Ok(lines)
}

pub fn export(
    records: &[AdvantageRecord],
    group: &TrajectoryGroup,
    policy: MissingScorePolicy,
    out: &Path,
) -> Result<usize, GrpoError> {
    let lines = export_lines(records, group, policy)?;
    let mut text = lines.join("\n");
    text.push('\n');
    write_atomic(out, text.as_bytes()).map_err(|e| GrpoError::Io {
        context: format!("write {}", out.display()),
        source: std::io::Error::other(e.to_string()),
    })?;
    Ok(lines.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(scores: &[(Option<u8>, Option<u8>)]) -> TrajectoryMember {
        TrajectoryMember {
            run_id: "r".into(),
            trajectory_log: PathBuf::from("t.jsonl"),
            steps: scores
                .iter()
                .enumerate()
                .map(|(j, (s, g))| MemberStep {
                    step: j as u32 + 1,
                    score_shot: *s,
                    score_gui: *g,
                    output_line: 1 + 3 * j,
                })
                .collect(),
        }
    }

    fn group(members: Vec<TrajectoryMember>) -> TrajectoryGroup {
        TrajectoryGroup {
            instruction_id: "q".into(),
            members,
        }
    }

    #[test]
    fn reward_examples() {
        assert_eq!(step_reward(Some(4), Some(5)).unwrap(), 9.0);
        assert_eq!(step_reward(Some(5), None).unwrap(), 5.0);
        assert_eq!(step_reward(Some(0), Some(1)).unwrap(), 1.0);
        assert!(step_reward(Some(6), None).is_err());
        assert!(step_reward(None, Some(0)).is_err());
    }

    #[test]
    fn standardize_three() {
        let a = standardize(&[2.0, 4.0, 6.0]);
        let expect = 2.0 / (8.0f64 / 3.0).sqrt();
        assert!((a[0] + expect).abs() < 1e-12 && a[1].abs() < 1e-12 && (a[2] - expect).abs() < 1e-12);
        assert_eq!(standardize(&[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn exclude_policy_drops_unscored() {
        let g = group(vec![
            member(&[(None, None), (Some(5), None)]),
            member(&[(Some(1), None)]),
        ]);
        let zero = advantages_per_step(&g, MissingScorePolicy::Zero).unwrap();
        let excl = advantages_per_step(&g, MissingScorePolicy::Exclude).unwrap();
        assert_eq!(zero.len(), 3);
        assert_eq!(excl.len(), 2);
        assert_eq!(excl[0].step, 2);
    }

    #[test]
    fn group_preconditions() {
        assert!(matches!(
            advantages_per_step(&group(vec![member(&[(Some(1), None)])]), MissingScorePolicy::Zero),
            Err(GrpoError::GroupTooSmall(1))
        ));
        assert!(matches!(
            advantages_per_step(
                &group(vec![member(&[(Some(1), None)]), member(&[])]),
                MissingScorePolicy::Zero
            ),
            Err(GrpoError::EmptyMember(1))
        ));
        assert!(matches!(
            advantages_per_step(
                &group(vec![member(&[(None, None)]), member(&[(None, None)])]),
                MissingScorePolicy::Exclude
            ),
            Err(GrpoError::EmptyPool)
        ));
    }
}
