use crate::collect::{collect_groups, CollectedGroup};
use crate::factory::{ComponentFactory, Job, Mode, StandardFactory};
use crate::report::Report;
use crate::runner::{load_instructions, run_batch, run_job, Instruction};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use webgen_core::config::RunConfig;
use webgen_core::step_grpo::{advantages, export, AdvantageMode, MissingScorePolicy};

#[derive(Debug, Parser)]
#[command(
    name = "webgen",
    version,
    about = "Iterative website generation with screenshot and GUI-test feedback"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct RunOptions {
    /// TOML configuration; every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "live")]
    pub mode: Mode,
    /// Mock-endpoint script file, or a directory of `<id>.json` /
    /// `<id>.<sample>.json` scripts.
    #[arg(long)]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one instruction file.
    Run {
        instruction: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        #[command(flatten)]
        opts: RunOptions,
    },
    /// Run many instructions and write a report.
    Batch {
        #[arg(required = true)]
        instructions: Vec<PathBuf>,
        #[arg(long)]
        run_root: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[command(flatten)]
        opts: RunOptions,
    },
    /// Sample G runs per instruction and write trajectory groups.
    Collect {
        #[arg(required = true)]
        instructions: Vec<PathBuf>,
        #[arg(long)]
        run_root: PathBuf,
        #[arg(short = 'g', long, default_value_t = 5)]
        group_size: u32,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[command(flatten)]
        opts: RunOptions,
    },
    /// Compute advantages for collected groups and export them as JSONL.
    Advantages {
        #[arg(required = true)]
        groups: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "per-step")]
        mode: AdvantageMode,
        /// `zero` or `exclude`; defaults to the configuration's policy.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rebuild a batch report from the run directories under a root.
    Report {
        #[arg(long)]
        run_root: PathBuf,
    },
}

/// Bad command-line input, as opposed to a failure while running.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn require_exists(paths: &[PathBuf]) -> Result<(), UsageError> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(UsageError(format!(
            "no such instruction file or directory: {}",
            p.display()
        ))),
        None => Ok(()),
    }
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => {
            let c = RunConfig::default();
            c.validate()?;
            Ok(c)
        }
    }
}

fn parse_policy(s: &str) -> anyhow::Result<MissingScorePolicy> {
    match s {
        "zero" => Ok(MissingScorePolicy::Zero),
        "exclude" => Ok(MissingScorePolicy::Exclude),
        other => bail!("unknown missing-score policy `{other}` (expected zero or exclude)"),
    }
}

fn standard_factory(opts: &RunOptions) -> anyhow::Result<StandardFactory> {
    StandardFactory::new(load_config(opts.config.as_deref())?, opts.mode, opts.script.clone())
}

/// Runs a parsed command. `factory` replaces the standard components when
/// given (tests inject scripted ones this way).
pub async fn execute(cli: Cli, factory: Option<Arc<dyn ComponentFactory>>) -> anyhow::Result<String> {
    // The standard factory is handed back separately so it can be shut down.
    type Picked = (Arc<dyn ComponentFactory>, Option<Arc<StandardFactory>>);
    let pick = |opts: &RunOptions| -> anyhow::Result<Picked> {
        if let Some(f) = &factory {
            load_config(opts.config.as_deref())?;
            return Ok((f.clone(), None));
        }
        let std = Arc::new(standard_factory(opts)?);
        Ok((std.clone(), Some(std)))
    };
    match cli.command {
        Command::Run {
            instruction,
            run_dir,
            opts,
        } => {
            require_exists(std::slice::from_ref(&instruction))?;
            let ins = Instruction::load(&instruction)?;
            let (f, std) = pick(&opts)?;
            let job = Job {
                instruction_id: ins.id,
                instruction: ins.text,
                sample: 0,
                run_dir: run_dir.clone(),
            };
            let result = run_job(f.as_ref(), &job).await;
            drop(f);
            close(std).await;
            let r = result?;
            Ok(format!(
                "{}: finished by {:?} after {} steps; best step {:?} (shot {:?}, gui {:?}); summary in {}",
                job.instruction_id,
                r.finished_by,
                r.trajectory.last_step(),
                r.final_step,
                r.final_score_shot,
                r.final_score_gui,
                run_dir.display()
            ))
        }
        Command::Batch {
            instructions,
            run_root,
            parallelism,
            opts,
        } => {
            require_exists(&instructions)?;
            let set = load_instructions(&instructions)?;
            let (f, std) = pick(&opts)?;
            let report = run_batch(f, &set, &run_root, parallelism).await;
            close(std).await;
            Ok(report?.markdown())
        }
        Command::Collect {
            instructions,
            run_root,
            group_size,
            parallelism,
            opts,
        } => {
            require_exists(&instructions)?;
            let set = load_instructions(&instructions)?;
            let (f, std) = pick(&opts)?;
            let groups = collect_groups(f, &set, group_size, &run_root, parallelism).await;
            close(std).await;
            let mut out = String::new();
            for (path, g) in groups? {
                out.push_str(&format!(
                    "{}: {} of {} members{} -> {}\n",
                    g.group.instruction_id,
                    g.group.members.len(),
                    g.requested,
                    if g.usable { "" } else { " (unusable)" },
                    path.display()
                ));
            }
            Ok(out)
        }
        Command::Advantages {
            groups,
            out_dir,
            mode,
            policy,
            config,
        } => {
            let policy = match policy {
                Some(p) => parse_policy(&p)?,
                None => load_config(config.as_deref())?.missing_score_policy,
            };
            let mut out = String::new();
            for path in groups {
                let g = CollectedGroup::load(&path)?;
                if !g.usable {
                    out.push_str(&format!("{}: skipped, group flagged unusable\n", path.display()));
                    continue;
                }
                let recs =
                    advantages(&g.group, mode, policy).with_context(|| format!("advantages for {}", path.display()))?;
                let mode_name = serde_json::to_value(mode)?.as_str().unwrap_or_default().to_string();
                let target = out_dir.join(format!("{}.{mode_name}.jsonl", g.group.instruction_id));
                let n = export(&recs, &g.group, policy, &target)?;
                out.push_str(&format!(
                    "{}: {n} records -> {}\n",
                    g.group.instruction_id,
                    target.display()
                ));
            }
            Ok(out)
        }
        Command::Report { run_root } => {
            let report = Report::recompute(&run_root)?;
            report.write(&run_root)?;
            Ok(report.markdown())
        }
    }
}

async fn close(factory: Option<Arc<StandardFactory>>) {
    if let Some(f) = factory {
        match Arc::try_unwrap(f) {
            Ok(mut f) => f.shutdown().await,
            Err(_) => tracing::warn!("factory still shared at shutdown"),
        }
    }
}
