//! Builds the collaborators for one run. Live mode talks to the configured
//! endpoints; mock mode serves a scripted endpoint per run and uses a
//! logical clock so reruns reproduce the same trajectory log.

use anyhow::{bail, Context};
use async_trait::async_trait;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use tokio::sync::OnceCell;
use webgen_core::browser::Browser;
use webgen_core::clock::{Clock, LogicalClock, SystemClock};
use webgen_core::config::RunConfig;
use webgen_core::exec::{ExecHarness, Executor};
use webgen_core::feedback::{BrowserCapture, ScreenshotSource};
use webgen_core::gateway::{ChatModel, HttpGateway, MockScript, MockServer};
use webgen_core::gui::{BrowserGuiSession, GuiSession};

/// One unit of work: an instruction, which sample of it, and where its
/// artifacts go.
#[derive(Debug, Clone)]
pub struct Job {
    pub instruction_id: String,
    pub instruction: String,
    pub sample: u32,
    pub run_dir: PathBuf,
}

pub struct Components {
    pub config: RunConfig,
    pub model: Arc<dyn ChatModel>,
    pub executor: Box<dyn Executor>,
    pub screenshots: Arc<dyn ScreenshotSource>,
    pub gui: Arc<dyn GuiSession>,
    pub clock: Arc<dyn Clock>,
    /// Kept alive for the duration of the run (mock endpoint, for example).
    pub guard: Option<Box<dyn std::any::Any + Send>>,
}

#[async_trait]
pub trait ComponentFactory: Send + Sync {
    async fn build(&self, job: &Job) -> anyhow::Result<Components>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Live,
    Mock,
}

/// Where mock runs find their scripts: one file for every run, or a
/// directory holding `<id>.<sample>.json` or `<id>.json`.
#[derive(Debug, Clone)]
pub struct ScriptSource(pub PathBuf);

impl ScriptSource {
    pub fn resolve(&self, job: &Job) -> anyhow::Result<PathBuf> {
        if self.0.is_file() {
            return Ok(self.0.clone());
        }
        let per_sample = self.0.join(format!("{}.{}.json", job.instruction_id, job.sample));
        let per_instruction = self.0.join(format!("{}.json", job.instruction_id));
        for p in [per_sample, per_instruction] {
            if p.is_file() {
                return Ok(p);
            }
        }
        bail!("no mock script for `{}` under {}", job.instruction_id, self.0.display())
    }
}

/// Real harness and browser; the model endpoints depend on the mode.
pub struct StandardFactory {
    config: RunConfig,
    mode: Mode,
    script: Option<ScriptSource>,
    gateway: Arc<HttpGateway>,
    browser: OnceCell<Arc<Browser>>,
}

impl StandardFactory {
    pub fn new(config: RunConfig, mode: Mode, script: Option<PathBuf>) -> anyhow::Result<Self> {
        if mode == Mode::Mock && script.is_none() {
            bail!("mock mode needs --script");
        }
        Ok(Self {
            config,
            mode,
            script: script.map(ScriptSource),
            gateway: Arc::new(HttpGateway::new()),
            browser: OnceCell::new(),
        })
    }

    async fn browser(&self) -> anyhow::Result<Arc<Browser>> {
        self.browser
            .get_or_try_init(|| async {
                Browser::start(self.config.browser.clone())
                    .await
                    .map(Arc::new)
                    .context("start headless browser")
            })
            .await
            .cloned()
    }

    /// Closes the shared browser, if one was started.
    pub async fn shutdown(&mut self) {
        if let Some(browser) = self.browser.take() {
            match Arc::try_unwrap(browser) {
                Ok(mut b) => b.shutdown().await,
                Err(_) => tracing::warn!("browser still in use at shutdown"),
            }
        }
    }
}

fn load_script(path: &Path) -> anyhow::Result<MockScript> {
    MockScript::load(path).with_context(|| format!("load mock script {}", path.display()))
}

#[async_trait]
impl ComponentFactory for StandardFactory {
    async fn build(&self, job: &Job) -> anyhow::Result<Components> {
        let mut config = self.config.clone();
        let mut guard: Option<Box<dyn std::any::Any + Send>> = None;
        let clock: Arc<dyn Clock> = match self.mode {
            Mode::Live => Arc::new(SystemClock),
            Mode::Mock => {
                let script = self.script.as_ref().expect("checked in new").resolve(job)?;
                let server = MockServer::start(load_script(&script)?)
                    .await
                    .context("start mock endpoint")?;
                for endpoint in [&mut config.coding_llm, &mut config.feedback_vlm] {
                    endpoint.base_url = server.url();
                    endpoint.api_key_env = None;
                }
                guard = Some(Box::new(server));
                Arc::new(LogicalClock::new())
            }
        };
        let browser = self.browser().await?;
        let model: Arc<dyn ChatModel> = self.gateway.clone();
        let executor = ExecHarness::new(config.exec.clone()).map_err(anyhow::Error::msg)?;
        Ok(Components {
            screenshots: Arc::new(BrowserCapture::new(browser.clone(), config.visual.clone())),
            gui: Arc::new(BrowserGuiSession::new(
                browser,
                model.clone(),
                config.feedback_vlm.clone(),
                config.gui.clone(),
            )),
            executor: Box::new(executor),
            model,
            clock,
            config,
            guard,
        })
    }
}
