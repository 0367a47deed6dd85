//! Scripted run components shared by the integration tests.

#![allow(dead_code)]

use async_trait::async_trait;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use webgen_cli::factory::{ComponentFactory, Components, Job};
use webgen_core::clock::LogicalClock;
use webgen_core::config::RunConfig;
use webgen_core::testkit::{
    GuiVerdict, InstantGuiSession, ScriptedExecutor, ScriptedModel, StaticScreenshots, StepPlan,
};

pub fn scored(shot: u8, gui: u8, passed: bool) -> StepPlan {
    StepPlan::Scored {
        shot,
        suggestions: String::new(),
        move_on: true,
        gui: Some(GuiVerdict {
            passed,
            grade: gui,
            suggestions: if passed {
                String::new()
            } else {
                "nothing happens on click".into()
            },
        }),
    }
}

pub fn never_passing() -> Vec<StepPlan> {
    (0..20).map(|_| scored(2, 2, false)).collect()
}

type Plans = Box<dyn Fn(&Job) -> Vec<StepPlan> + Send + Sync>;

/// Scripted collaborators per job; records which run directories it built.
pub struct Scripted {
    plans: Plans,
    pub built: Mutex<Vec<PathBuf>>,
}

impl Scripted {
    pub fn new(plans: impl Fn(&Job) -> Vec<StepPlan> + Send + Sync + 'static) -> Arc<Self> {
        Arc::new(Self {
            plans: Box::new(plans),
            built: Mutex::new(Vec::new()),
        })
    }
}

#[async_trait]
impl ComponentFactory for Scripted {
    async fn build(&self, job: &Job) -> anyhow::Result<Components> {
        self.built.lock().unwrap().push(job.run_dir.clone());
        Ok(Components {
            config: RunConfig::default(),
            model: Arc::new(ScriptedModel::new((self.plans)(job))),
            executor: Box::new(ScriptedExecutor::default()),
            screenshots: Arc::new(StaticScreenshots),
            gui: Arc::new(InstantGuiSession),
            clock: Arc::new(LogicalClock::new()),
            guard: None,
        })
    }
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
