//! Dependency installation, dev-server supervision and readiness probing.
//!
//! Every server runs in its own process group so that `shutdown` can take
//! down the whole tree (`npm` → `sh` → `node` ...). Projects without a
//! package manifest but with a static entry page are served in-process.

use crate::workspace::Workspace;
use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::path::Path;
use std::process::Stdio;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};
use tokio::io::{AsyncRead, AsyncReadExt};
use tokio::process::{Child, Command};
use tokio::task::JoinHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecPhase {
    Install,
    Launch,
    Runtime,
}

impl std::fmt::Display for ExecPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExecPhase::Install => "install",
            ExecPhase::Launch => "launch",
            ExecPhase::Runtime => "runtime",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutput {
    pub phase: ExecPhase,
    pub stdout: String,
    pub stderr: String,
    pub exit_code: Option<i32>,
    pub is_error: bool,
    pub served_url: Option<String>,
    /// Short human-readable cause when `is_error` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl ExecutionOutput {
    pub fn error(phase: ExecPhase, diagnostic: impl Into<String>) -> Self {
        Self {
            phase,
            stdout: String::new(),
            stderr: String::new(),
            exit_code: None,
            is_error: true,
            served_url: None,
            diagnostic: Some(diagnostic.into()),
        }
    }

    /// The execution-output message shown to the coding model. The first
    /// line is a self-contained summary.
    pub fn to_message(&self) -> String {
        let mut msg = if self.is_error {
            format!(
                "Execution failed during {}: {}",
                self.phase,
                self.diagnostic.as_deref().unwrap_or("unknown error")
            )
        } else {
            "Execution succeeded: the dependencies were installed and the website service started.".to_string()
        };
        if let Some(code) = self.exit_code {
            msg.push_str(&format!("\nExit code: {code}"));
        }
        if !self.stdout.trim().is_empty() {
            msg.push_str("\n--- stdout ---\n");
            msg.push_str(self.stdout.trim_end());
        }
        if !self.stderr.trim().is_empty() {
            msg.push_str("\n--- stderr ---\n");
            msg.push_str(self.stderr.trim_end());
        }
        msg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub install_command: String,
    /// `{port}` is replaced by the chosen port; `PORT` is also exported.
    pub serve_command: String,
    pub manifest_file: String,
    pub static_entry: String,
    pub install_timeout_secs: u64,
    pub readiness_timeout_secs: u64,
    pub poll_interval_ms: u64,
    /// Output after readiness is watched this long for fatal patterns.
    pub runtime_watch_ms: u64,
    pub output_budget_bytes: usize,
    pub port_range: (u16, u16),
    pub fatal_patterns: Vec<String>,
    /// Variables passed through to child processes; a trailing `*` matches
    /// a prefix.
    pub env_allowlist: Vec<String>,
    pub run_shell_commands: bool,
    /// Model shell commands matching any of these are not run (the harness
    /// starts the server itself).
    pub skip_command_patterns: Vec<String>,
    pub shutdown_grace_ms: u64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            install_command: "npm install".into(),
            serve_command: "npm run dev -- --port {port} --host 127.0.0.1".into(),
            manifest_file: "package.json".into(),
            static_entry: "index.html".into(),
            install_timeout_secs: 300,
            readiness_timeout_secs: 60,
            poll_interval_ms: 250,
            runtime_watch_ms: 500,
            output_budget_bytes: 4096,
            port_range: (5200, 5999),
            fatal_patterns: vec![
                r"Uncaught (Error|TypeError|ReferenceError|SyntaxError)".into(),
                r"UnhandledPromiseRejection".into(),
                r"\[plugin:vite:[^\]]*\]".into(),
                r"Error: Cannot find module".into(),
            ],
            env_allowlist: [
                "PATH",
                "HOME",
                "USER",
                "LANG",
                "LC_ALL",
                "TERM",
                "TMPDIR",
                "NODE_OPTIONS",
                "NODE_PATH",
                "npm_config_*",
                "HTTP_PROXY",
                "HTTPS_PROXY",
                "NO_PROXY",
                "http_proxy",
                "https_proxy",
                "no_proxy",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            run_shell_commands: true,
            skip_command_patterns: vec![
                r"^\s*(npm|pnpm|yarn|bun)\s+(run\s+)?(dev|start|serve|preview)\b".into(),
                r"^\s*(npx\s+)?(vite|serve|http-server|live-server)(\s+(dev|--\S+|\.))*\s*$".into(),
                r"^\s*(npm|pnpm|yarn)\s+(install|i)\s*$".into(),
            ],
            shutdown_grace_ms: 2000,
        }
    }
}

impl ExecConfig {
    pub fn validate(&self) -> Result<(), String> {
        for p in self.fatal_patterns.iter().chain(&self.skip_command_patterns) {
            Regex::new(p).map_err(|e| format!("bad pattern `{p}`: {e}"))?;
        }
        if self.port_range.0 == 0 || self.port_range.0 > self.port_range.1 {
            return Err(format!("bad port range {:?}", self.port_range));
        }
        if self.output_budget_bytes == 0 {
            return Err("output_budget_bytes must be positive".into());
        }
        Ok(())
    }
}

/// Keeps the last `budget` bytes written to it.
#[derive(Debug, Clone)]
pub struct TailBuffer {
    budget: usize,
    buf: Vec<u8>,
    dropped: u64,
}

impl TailBuffer {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            buf: Vec::new(),
            dropped: 0,
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
        if self.buf.len() > self.budget {
            let excess = self.buf.len() - self.budget;
            self.buf.drain(..excess);
            self.dropped += excess as u64;
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn render(&self) -> String {
        let text = String::from_utf8_lossy(&self.buf);
        if self.dropped > 0 {
            format!("[... {} earlier bytes truncated]\n{text}", self.dropped)
        } else {
            text.into_owned()
        }
    }
}

type SharedTail = Arc<Mutex<TailBuffer>>;

fn spawn_reader<R: AsyncRead + Unpin + Send + 'static>(mut reader: R, sink: SharedTail) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut chunk = [0u8; 4096];
        loop {
            match reader.read(&mut chunk).await {
                Ok(0) | Err(_) => break,
                Ok(n) => sink.lock().expect("tail poisoned").push(&chunk[..n]),
            }
        }
    })
}

fn ports() -> &'static Mutex<HashSet<u16>> {
    static PORTS: OnceLock<Mutex<HashSet<u16>>> = OnceLock::new();
    PORTS.get_or_init(|| Mutex::new(HashSet::new()))
}

/// Reserves a port in `range` that is bindable right now and not held by
/// another harness in this process.
fn reserve_port(range: (u16, u16), skip: &HashSet<u16>) -> Option<u16> {
    let mut held = ports().lock().expect("port set poisoned");
    (range.0..=range.1).find(|p| {
        !held.contains(p)
            && !skip.contains(p)
            && std::net::TcpListener::bind(("127.0.0.1", *p)).is_ok()
            && held.insert(*p)
    })
}

fn release_port(port: u16) {
    ports().lock().expect("port set poisoned").remove(&port);
}

/// True when a live (non-zombie) process belongs to process group `pgid`.
pub fn process_group_alive(pgid: i32) -> bool {
    let Ok(entries) = std::fs::read_dir("/proc") else {
        return false;
    };
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(pid) = name.to_str().and_then(|s| s.parse::<i32>().ok()) else {
            continue;
        };
        let Ok(stat) = std::fs::read_to_string(format!("/proc/{pid}/stat")) else {
            continue;
        };
        // Fields after the parenthesised command: state ppid pgrp ...
        let Some(rest) = stat.rfind(')').map(|i| &stat[i + 1..]) else {
            continue;
        };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.len() > 2 && fields[0] != "Z" && fields[2] == pgid.to_string() {
            return true;
        }
    }
    false
}

fn signal_group(pgid: i32, signal: i32) {
    // SAFETY: killpg only sends a signal; an invalid group yields ESRCH.
    unsafe {
        libc::killpg(pgid, signal);
    }
}

async fn kill_group(child: &mut Child, pgid: i32, grace: Duration) {
    signal_group(pgid, libc::SIGTERM);
    let deadline = Instant::now() + grace;
    while Instant::now() < deadline && process_group_alive(pgid) {
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    if process_group_alive(pgid) {
        tracing::warn!(pgid, "process group ignored SIGTERM; sending SIGKILL");
        signal_group(pgid, libc::SIGKILL);
    }
    let _ = tokio::time::timeout(Duration::from_secs(5), child.wait()).await;
    let deadline = Instant::now() + Duration::from_secs(2);
    while Instant::now() < deadline && process_group_alive(pgid) {
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
}

enum Server {
    Process {
        child: Child,
        pgid: i32,
        port: u16,
        readers: Vec<JoinHandle<()>>,
    },
    Static {
        port: u16,
        stop: tokio::sync::oneshot::Sender<()>,
        task: JoinHandle<()>,
    },
}

impl Server {
    fn port(&self) -> u16 {
        match self {
            Server::Process { port, .. } | Server::Static { port, .. } => *port,
        }
    }
}

/// Produces the execution output of a step.
#[async_trait]
pub trait Executor: Send {
    async fn execute(&mut self, workspace: &Workspace, shell_commands: &[String]) -> ExecutionOutput;
    async fn shutdown(&mut self);
}

pub struct ExecHarness {
    config: ExecConfig,
    fatal: Vec<Regex>,
    skip: Vec<Regex>,
    server: Option<Server>,
    installed_manifest: Option<String>,
    last_pgid: Option<i32>,
    http: reqwest::Client,
}

struct RunOutcome {
    exit_code: Option<i32>,
    timed_out: bool,
}

impl ExecHarness {
    pub fn new(config: ExecConfig) -> Result<Self, String> {
        config.validate()?;
        let compile = |ps: &[String]| -> Vec<Regex> { ps.iter().map(|p| Regex::new(p).expect("validated")).collect() };
        Ok(Self {
            fatal: compile(&config.fatal_patterns),
            skip: compile(&config.skip_command_patterns),
            config,
            server: None,
            installed_manifest: None,
            last_pgid: None,
            http: reqwest::Client::builder()
                .no_proxy()
                .timeout(Duration::from_secs(3))
                .build()
                .expect("http client"),
        })
    }

    pub fn config(&self) -> &ExecConfig {
        &self.config
    }

    /// Process group of the most recently launched server, for audits.
    pub fn last_process_group(&self) -> Option<i32> {
        self.last_pgid
    }

    pub fn served_port(&self) -> Option<u16> {
        self.server.as_ref().map(Server::port)
    }

    fn command(&self, cmd: &str, dir: &Path) -> Command {
        let mut c = Command::new("sh");
        c.arg("-c").arg(cmd).current_dir(dir).env_clear();
        for (key, value) in std::env::vars() {
            let allowed = self.config.env_allowlist.iter().any(|a| match a.strip_suffix('*') {
                Some(prefix) => key.starts_with(prefix),
                None => *a == key,
            });
            if allowed {
                c.env(key, value);
            }
        }
        c.env("BROWSER", "none")
            .env("NO_COLOR", "1")
            .env("CI", "1")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0)
            .kill_on_drop(true);
        c
    }

    /// Runs a command to completion (or timeout) in its own process group.
    async fn run_to_end(
        &self,
        cmd: &str,
        dir: &Path,
        timeout: Duration,
        stdout: &SharedTail,
        stderr: &SharedTail,
    ) -> std::io::Result<RunOutcome> {
        let mut child = self.command(cmd, dir).spawn()?;
        let pgid = child.id().map(|p| p as i32).unwrap_or(0);
        let r1 = spawn_reader(child.stdout.take().expect("piped"), stdout.clone());
        let r2 = spawn_reader(child.stderr.take().expect("piped"), stderr.clone());
        let outcome = match tokio::time::timeout(timeout, child.wait()).await {
            Ok(status) => RunOutcome {
                exit_code: status?.code(),
                timed_out: false,
            },
            Err(_) => {
                kill_group(&mut child, pgid, Duration::from_millis(self.config.shutdown_grace_ms)).await;
                RunOutcome {
                    exit_code: None,
                    timed_out: true,
                }
            }
        };
        // Grandchildren may hold the pipes open; do not wait on them forever.
        signal_group(pgid, libc::SIGKILL);
        let _ = tokio::time::timeout(Duration::from_secs(2), async {
            let _ = r1.await;
            let _ = r2.await;
        })
        .await;
        Ok(outcome)
    }

    async fn probe(&self, url: &str) -> Option<u16> {
        match self.http.get(url).send().await {
            Ok(resp) => Some(resp.status().as_u16()),
            Err(_) => None,
        }
    }

    async fn launch_static(&mut self, root: &Path) -> Result<u16, String> {
        let port =
            reserve_port(self.config.port_range, &HashSet::new()).ok_or("no free port in the configured range")?;
        let listener = match tokio::net::TcpListener::bind(("127.0.0.1", port)).await {
            Ok(l) => l,
            Err(e) => {
                release_port(port);
                return Err(format!("bind static server: {e}"));
            }
        };
        let service = tower_http::services::ServeDir::new(root).append_index_html_on_directories(true);
        let app = axum::Router::new().fallback_service(service);
        let (stop, rx) = tokio::sync::oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        self.server = Some(Server::Static { port, stop, task });
        Ok(port)
    }

    fn manifest_hash(&self, root: &Path) -> Option<String> {
        std::fs::read(root.join(&self.config.manifest_file))
            .ok()
            .map(|b| hex::encode(Sha256::digest(b)))
    }

    async fn execute_inner(
        &mut self,
        root: &Path,
        shell_commands: &[String],
        out: &SharedTail,
        err: &SharedTail,
    ) -> ExecutionOutput {
        let tails = |phase, is_error, exit_code, served_url, diagnostic: Option<String>| ExecutionOutput {
            phase,
            stdout: out.lock().expect("tail").render(),
            stderr: err.lock().expect("tail").render(),
            exit_code,
            is_error,
            served_url,
            diagnostic,
        };
        let install_timeout = Duration::from_secs(self.config.install_timeout_secs);
        let manifest = self.manifest_hash(root);
        let has_static_entry = root.join(&self.config.static_entry).is_file();
        if manifest.is_none() && !has_static_entry {
            return tails(
                ExecPhase::Launch,
                true,
                None,
                None,
                Some(format!(
                    "the project has neither a {} nor a static {}",
                    self.config.manifest_file, self.config.static_entry
                )),
            );
        }

        if manifest.is_some() && manifest != self.installed_manifest {
            let cmd = self.config.install_command.clone();
            match self.run_to_end(&cmd, root, install_timeout, out, err).await {
                Err(e) => {
                    return tails(
                        ExecPhase::Install,
                        true,
                        None,
                        None,
                        Some(format!("could not run `{cmd}`: {e}")),
                    )
                }
                Ok(r) if r.timed_out => {
                    return tails(
                        ExecPhase::Install,
                        true,
                        None,
                        None,
                        Some(format!("`{cmd}` timed out after {}s", install_timeout.as_secs())),
                    )
                }
                Ok(r) if r.exit_code != Some(0) => {
                    return tails(
                        ExecPhase::Install,
                        true,
                        r.exit_code,
                        None,
                        Some(format!("`{cmd}` exited with a non-zero status")),
                    )
                }
                Ok(_) => self.installed_manifest = manifest.clone(),
            }
        }

        if self.config.run_shell_commands {
            for cmd in shell_commands {
                if self.skip.iter().any(|re| re.is_match(cmd)) {
                    tracing::debug!(command = %cmd, "skipping server-style shell command");
                    continue;
                }
                match self.run_to_end(cmd, root, install_timeout, out, err).await {
                    Err(e) => {
                        return tails(
                            ExecPhase::Install,
                            true,
                            None,
                            None,
                            Some(format!("could not run `{cmd}`: {e}")),
                        )
                    }
                    Ok(r) if r.timed_out => {
                        return tails(ExecPhase::Install, true, None, None, Some(format!("`{cmd}` timed out")))
                    }
                    Ok(r) if r.exit_code != Some(0) => {
                        return tails(
                            ExecPhase::Install,
                            true,
                            r.exit_code,
                            None,
                            Some(format!("`{cmd}` exited with a non-zero status")),
                        )
                    }
                    Ok(_) => {}
                }
            }
            // A shell command may have changed the manifest (e.g. `npm install x`).
            if manifest.is_some() {
                self.installed_manifest = self.manifest_hash(root);
            }
        }

        let readiness = Duration::from_secs(self.config.readiness_timeout_secs);
        let poll = Duration::from_millis(self.config.poll_interval_ms.max(10));

        if manifest.is_none() {
            return match self.launch_static(root).await {
                Err(e) => tails(ExecPhase::Launch, true, None, None, Some(e)),
                Ok(port) => {
                    let url = format!("http://127.0.0.1:{port}/");
                    let deadline = Instant::now() + readiness;
                    loop {
                        if matches!(self.probe(&url).await, Some(s) if s < 500) {
                            break tails(ExecPhase::Runtime, false, None, Some(url), None);
                        }
                        if Instant::now() >= deadline {
                            self.shutdown_server().await;
                            break tails(
                                ExecPhase::Launch,
                                true,
                                None,
                                None,
                                Some("static server never became ready".into()),
                            );
                        }
                        tokio::time::sleep(poll).await;
                    }
                }
            };
        }

        let mut tried = HashSet::new();
        for _attempt in 0..3 {
            let Some(port) = reserve_port(self.config.port_range, &tried) else {
                return tails(
                    ExecPhase::Launch,
                    true,
                    None,
                    None,
                    Some("no free port in the configured range".into()),
                );
            };
            tried.insert(port);
            let cmd = self.config.serve_command.replace("{port}", &port.to_string());
            let mut command = self.command(&cmd, root);
            command.env("PORT", port.to_string()).env("HOST", "127.0.0.1");
            let mut child = match command.spawn() {
                Ok(c) => c,
                Err(e) => {
                    release_port(port);
                    return tails(
                        ExecPhase::Launch,
                        true,
                        None,
                        None,
                        Some(format!("could not start `{cmd}`: {e}")),
                    );
                }
            };
            let pgid = child.id().map(|p| p as i32).unwrap_or(0);
            self.last_pgid = Some(pgid);
            let readers = vec![
                spawn_reader(child.stdout.take().expect("piped"), out.clone()),
                spawn_reader(child.stderr.take().expect("piped"), err.clone()),
            ];
            self.server = Some(Server::Process {
                child,
                pgid,
                port,
                readers,
            });

            let url = format!("http://127.0.0.1:{port}/");
            let deadline = Instant::now() + readiness;
            let mut last_status = None;
            let verdict = loop {
                if let Some(Server::Process { child, .. }) = &mut self.server {
                    if let Ok(Some(status)) = child.try_wait() {
                        // Let the readers drain what the process printed.
                        tokio::time::sleep(Duration::from_millis(50)).await;
                        break Err((
                            status.code(),
                            "the server process exited before becoming ready".to_string(),
                        ));
                    }
                }
                match self.probe(&url).await {
                    Some(s) if s < 500 => break Ok(()),
                    s => last_status = s.or(last_status),
                }
                if Instant::now() >= deadline {
                    let detail = match last_status {
                        Some(s) => {
                            format!(
                                "the server answered HTTP {s} until the {}s readiness timeout",
                                readiness.as_secs()
                            )
                        }
                        None => {
                            format!(
                                "the server did not answer within the {}s readiness timeout",
                                readiness.as_secs()
                            )
                        }
                    };
                    break Err((None, detail));
                }
                tokio::time::sleep(poll).await;
            };

            match verdict {
                Ok(()) => {
                    tokio::time::sleep(Duration::from_millis(self.config.runtime_watch_ms)).await;
                    let seen = format!(
                        "{}\n{}",
                        String::from_utf8_lossy(out.lock().expect("tail").bytes()),
                        String::from_utf8_lossy(err.lock().expect("tail").bytes())
                    );
                    if let Some(m) = self.fatal.iter().find_map(|re| re.find(&seen)) {
                        let diag = format!("fatal runtime output: {}", m.as_str());
                        self.shutdown_server().await;
                        return tails(ExecPhase::Runtime, true, None, None, Some(diag));
                    }
                    return tails(ExecPhase::Runtime, false, None, Some(url), None);
                }
                Err((code, detail)) => {
                    self.shutdown_server().await;
                    let seen = String::from_utf8_lossy(err.lock().expect("tail").bytes()).to_string()
                        + &String::from_utf8_lossy(out.lock().expect("tail").bytes());
                    if code.is_some() && (seen.contains("EADDRINUSE") || seen.contains("address already in use")) {
                        tracing::info!(port, "port taken; retrying on the next free port");
                        continue;
                    }
                    return tails(ExecPhase::Launch, true, code, None, Some(detail));
                }
            }
        }
        tails(
            ExecPhase::Launch,
            true,
            None,
            None,
            Some("could not find a port the server could bind".into()),
        )
    }

    async fn shutdown_server(&mut self) {
        let Some(server) = self.server.take() else {
            return;
        };
        let port = server.port();
        match server {
            Server::Process {
                mut child,
                pgid,
                readers,
                ..
            } => {
                kill_group(&mut child, pgid, Duration::from_millis(self.config.shutdown_grace_ms)).await;
                for r in readers {
                    r.abort();
                }
            }
            Server::Static { stop, task, .. } => {
                let _ = stop.send(());
                let _ = tokio::time::timeout(Duration::from_secs(2), task).await;
            }
        }
        release_port(port);
    }
}

#[async_trait]
impl Executor for ExecHarness {
    async fn execute(&mut self, workspace: &Workspace, shell_commands: &[String]) -> ExecutionOutput {
        self.shutdown_server().await;
        let budget = self.config.output_budget_bytes;
        let out = Arc::new(Mutex::new(TailBuffer::new(budget)));
        let err = Arc::new(Mutex::new(TailBuffer::new(budget)));
        self.execute_inner(workspace.root(), shell_commands, &out, &err).await
    }

    async fn shutdown(&mut self) {
        self.shutdown_server().await;
    }
}

impl Drop for ExecHarness {
    fn drop(&mut self) {
        if let Some(server) = self.server.take() {
            release_port(server.port());
            match server {
                Server::Process { pgid, .. } => signal_group(pgid, libc::SIGKILL),
                Server::Static { stop, .. } => {
                    let _ = stop.send(());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn message_summary_first_line() {
        let mut o = ExecutionOutput::error(ExecPhase::Install, "`npm install` exited with a non-zero status");
        o.exit_code = Some(1);
        o.stderr = "npm ERR! boom\n".into();
        assert_eq!(
            o.to_message(),
            "Execution failed during install: `npm install` exited with a non-zero status\nExit code: 1\n--- stderr ---\nnpm ERR! boom"
        );
    }

    #[test]
    fn default_skip_patterns() {
        let h = ExecHarness::new(ExecConfig::default()).unwrap();
        let skipped = |c: &str| h.skip.iter().any(|re| re.is_match(c));
        assert!(skipped("npm run dev"));
        assert!(skipped("npm start"));
        assert!(skipped("npx vite"));
        assert!(skipped("npm install"));
        assert!(!skipped("npm install react-router-dom"));
        assert!(!skipped("npx vite build"));
        assert!(!skipped("mkdir -p src"));
    }

    proptest! {
        #[test]
        fn tail_keeps_final_bytes(chunks in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..64), 0..40), budget in 1usize..200) {
            let mut tail = TailBuffer::new(budget);
            let mut all = Vec::new();
            for c in &chunks {
                tail.push(c);
                all.extend_from_slice(c);
            }
            let keep = all.len().min(budget);
            prop_assert_eq!(tail.bytes(), &all[all.len() - keep..]);
            prop_assert_eq!(tail.dropped() as usize, all.len() - keep);
        }
    }
}
