//! Minimal DevTools-protocol client: launch or attach to a headless
//! Chromium, open pages, navigate, evaluate script, dispatch input and
//! capture screenshots.

use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::HashMap;
use std::path::PathBuf;
use std::process::Stdio;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::process::{Child, Command};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio_tungstenite::tungstenite::Message;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrowserConfig {
    /// Explicit executable; otherwise `CHROME_PATH`, then `PATH`, then
    /// `/tmp/chromium`.
    pub executable: Option<PathBuf>,
    /// Attach to an already running browser (`ws://...` endpoint) instead of
    /// launching one.
    pub devtools_endpoint: Option<String>,
    pub args: Vec<String>,
    pub launch_timeout_secs: u64,
    pub command_timeout_secs: u64,
    pub navigation_timeout_secs: u64,
    /// How long after `load` to keep waiting for network idle.
    pub idle_grace_ms: u64,
}

impl Default for BrowserConfig {
    fn default() -> Self {
        Self {
            executable: None,
            devtools_endpoint: None,
            args: [
                "--headless=shell",
                "--no-sandbox",
                "--no-zygote",
                "--single-process",
                "--disable-gpu",
                "--disable-dev-shm-usage",
                "--no-first-run",
                "--no-default-browser-check",
                "--disable-extensions",
                "--hide-scrollbars",
                "--mute-audio",
                "--font-render-hinting=none",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            launch_timeout_secs: 20,
            command_timeout_secs: 30,
            navigation_timeout_secs: 30,
            idle_grace_ms: 3000,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BrowserError {
    #[error("no Chromium executable found (set CHROME_PATH or browser.executable)")]
    NotFound,
    #[error("browser launch failed: {0}")]
    Launch(String),
    #[error("{method} failed: {message}")]
    Protocol { method: String, message: String },
    #[error("the browser connection is closed")]
    Closed,
    #[error("{0} timed out")]
    Timeout(String),
    #[error("navigation to {url} failed: {reason}")]
    Navigation { url: String, reason: String },
}

pub fn find_executable(config: &BrowserConfig) -> Option<PathBuf> {
    if let Some(p) = &config.executable {
        return p.is_file().then(|| p.clone());
    }
    if let Some(p) = std::env::var_os("CHROME_PATH").map(PathBuf::from) {
        if p.is_file() {
            return Some(p);
        }
    }
    let names = [
        "chromium",
        "chromium-browser",
        "google-chrome",
        "google-chrome-stable",
        "headless_shell",
        "chrome",
    ];
    if let Some(path) = std::env::var_os("PATH") {
        for dir in std::env::split_paths(&path) {
            for n in names {
                let candidate = dir.join(n);
                if candidate.is_file() {
                    return Some(candidate);
                }
            }
        }
    }
    let fallback = PathBuf::from("/tmp/chromium");
    fallback.is_file().then_some(fallback)
}

#[derive(Debug, Clone)]
pub struct CdpEvent {
    pub method: String,
    pub params: Value,
    pub session_id: Option<String>,
}

type Pending = Arc<Mutex<HashMap<u64, oneshot::Sender<Result<Value, BrowserError>>>>>;

/// One websocket to the browser endpoint, multiplexing flat sessions.
struct Connection {
    next_id: AtomicU64,
    outgoing: mpsc::UnboundedSender<String>,
    pending: Pending,
    events: broadcast::Sender<CdpEvent>,
    closed: Arc<AtomicBool>,
    timeout: Duration,
}

impl Connection {
    async fn open(ws_url: &str, timeout: Duration) -> Result<Self, BrowserError> {
        let (ws, _) = tokio::time::timeout(timeout, tokio_tungstenite::connect_async(ws_url))
            .await
            .map_err(|_| BrowserError::Timeout("DevTools connect".into()))?
            .map_err(|e| BrowserError::Launch(format!("connect {ws_url}: {e}")))?;
        let (mut sink, mut stream) = ws.split();
        let (tx, mut rx) = mpsc::unbounded_channel::<String>();
        let pending: Pending = Arc::default();
        let (events, _) = broadcast::channel(1024);
        let closed = Arc::new(AtomicBool::new(false));

        tokio::spawn(async move {
            while let Some(text) = rx.recv().await {
                if sink.send(Message::Text(text)).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        });

        let reader_pending = pending.clone();
        let reader_events = events.clone();
        let reader_closed = closed.clone();
        tokio::spawn(async move {
            while let Some(Ok(msg)) = stream.next().await {
                let text = match msg {
                    Message::Text(t) => t,
                    Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
                    Message::Close(_) => break,
                    _ => continue,
                };
                let Ok(v) = serde_json::from_str::<Value>(&text) else {
                    continue;
                };
                if let Some(id) = v.get("id").and_then(Value::as_u64) {
                    let waiter = reader_pending.lock().expect("pending poisoned").remove(&id);
                    if let Some(w) = waiter {
                        let result = match v.get("error") {
                            Some(err) => Err(BrowserError::Protocol {
                                method: String::new(),
                                message: err["message"].as_str().unwrap_or("unknown error").to_string(),
                            }),
                            None => Ok(v.get("result").cloned().unwrap_or(Value::Null)),
                        };
                        let _ = w.send(result);
                    }
                } else if let Some(method) = v.get("method").and_then(Value::as_str) {
                    let _ = reader_events.send(CdpEvent {
                        method: method.to_string(),
                        params: v.get("params").cloned().unwrap_or(Value::Null),
                        session_id: v.get("sessionId").and_then(Value::as_str).map(str::to_string),
                    });
                }
            }
            reader_closed.store(true, Ordering::SeqCst);
            for (_, w) in reader_pending.lock().expect("pending poisoned").drain() {
                let _ = w.send(Err(BrowserError::Closed));
            }
        });

        Ok(Self {
            next_id: AtomicU64::new(1),
            outgoing: tx,
            pending,
            events,
            closed,
            timeout,
        })
    }

    async fn call(&self, method: &str, params: Value, session: Option<&str>) -> Result<Value, BrowserError> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(BrowserError::Closed);
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let mut msg = json!({"id": id, "method": method, "params": params});
        if let Some(s) = session {
            msg["sessionId"] = json!(s);
        }
        let (tx, rx) = oneshot::channel();
        self.pending.lock().expect("pending poisoned").insert(id, tx);
        if self.outgoing.send(msg.to_string()).is_err() {
            self.pending.lock().expect("pending poisoned").remove(&id);
            return Err(BrowserError::Closed);
        }
        match tokio::time::timeout(self.timeout, rx).await {
            Err(_) => {
                self.pending.lock().expect("pending poisoned").remove(&id);
                Err(BrowserError::Timeout(method.to_string()))
            }
            Ok(Err(_)) => Err(BrowserError::Closed),
            Ok(Ok(Err(BrowserError::Protocol { message, .. }))) => Err(BrowserError::Protocol {
                method: method.to_string(),
                message,
            }),
            Ok(Ok(r)) => r,
        }
    }
}

pub struct Browser {
    conn: Arc<Connection>,
    child: Option<Child>,
    pgid: Option<i32>,
    _profile: Option<tempfile::TempDir>,
    config: BrowserConfig,
}

impl Browser {
    /// Attaches to `config.devtools_endpoint` when set, otherwise launches a
    /// fresh headless browser with a throwaway profile.
    pub async fn start(config: BrowserConfig) -> Result<Self, BrowserError> {
        let timeout = Duration::from_secs(config.command_timeout_secs);
        if let Some(endpoint) = &config.devtools_endpoint {
            let conn = Connection::open(endpoint, timeout).await?;
            return Ok(Self {
                conn: Arc::new(conn),
                child: None,
                pgid: None,
                _profile: None,
                config,
            });
        }
        let exe = find_executable(&config).ok_or(BrowserError::NotFound)?;
        let profile = tempfile::Builder::new()
            .prefix("webgen-chrome-")
            .tempdir()
            .map_err(|e| BrowserError::Launch(format!("profile dir: {e}")))?;
        let mut child = Command::new(&exe)
            .args(&config.args)
            .arg("--remote-debugging-port=0")
            .arg(format!("--user-data-dir={}", profile.path().display()))
            .arg("about:blank")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .process_group(0)
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| BrowserError::Launch(format!("spawn {}: {e}", exe.display())))?;
        let pgid = child.id().map(|p| p as i32);
        let mut lines = BufReader::new(child.stderr.take().expect("piped")).lines();
        let deadline = Duration::from_secs(config.launch_timeout_secs);
        let found = tokio::time::timeout(deadline, async {
            let mut seen = Vec::new();
            while let Ok(Some(line)) = lines.next_line().await {
                if let Some(url) = line.strip_prefix("DevTools listening on ") {
                    return Ok(url.trim().to_string());
                }
                seen.push(line);
            }
            Err(seen.join("\n"))
        })
        .await;
        let ws_url = match found {
            Ok(Ok(url)) => url,
            Ok(Err(log)) => {
                kill_tree(pgid);
                return Err(BrowserError::Launch(format!("browser exited early: {log}")));
            }
            Err(_) => {
                kill_tree(pgid);
                return Err(BrowserError::Timeout("browser launch".into()));
            }
        };
        // Keep draining stderr so the browser never blocks on a full pipe.
        tokio::spawn(async move { while let Ok(Some(_)) = lines.next_line().await {} });
        let conn = match Connection::open(&ws_url, timeout).await {
            Ok(c) => c,
            Err(e) => {
                kill_tree(pgid);
                return Err(e);
            }
        };
        Ok(Self {
            conn: Arc::new(conn),
            child: Some(child),
            pgid,
            _profile: Some(profile),
            config,
        })
    }

    pub fn is_alive(&self) -> bool {
        !self.conn.closed.load(Ordering::SeqCst)
    }

    pub fn process_group(&self) -> Option<i32> {
        self.pgid
    }

    pub async fn version(&self) -> Result<String, BrowserError> {
        let v = self.conn.call("Browser.getVersion", json!({}), None).await?;
        Ok(v["product"].as_str().unwrap_or_default().to_string())
    }

    /// Opens a blank page with the given viewport.
    pub async fn new_page(&self, width: u32, height: u32) -> Result<Page, BrowserError> {
        let target = self
            .conn
            .call("Target.createTarget", json!({"url": "about:blank"}), None)
            .await?;
        let target_id = target["targetId"].as_str().unwrap_or_default().to_string();
        let attached = self
            .conn
            .call(
                "Target.attachToTarget",
                json!({"targetId": target_id, "flatten": true}),
                None,
            )
            .await?;
        let session_id = attached["sessionId"].as_str().unwrap_or_default().to_string();
        let page = Page {
            conn: self.conn.clone(),
            session_id,
            target_id,
            navigation_timeout: Duration::from_secs(self.config.navigation_timeout_secs),
            idle_grace: Duration::from_millis(self.config.idle_grace_ms),
            width,
            height,
        };
        page.call("Page.enable", json!({})).await?;
        page.call("Runtime.enable", json!({})).await?;
        page.call("Page.setLifecycleEventsEnabled", json!({"enabled": true}))
            .await?;
        page.call(
            "Emulation.setDeviceMetricsOverride",
            json!({"width": width, "height": height, "deviceScaleFactor": 1, "mobile": false}),
        )
        .await?;
        Ok(page)
    }

    /// Closes the browser and kills its process group. Idempotent.
    pub async fn shutdown(&mut self) {
        if self.child.is_none() {
            return;
        }
        let _ = tokio::time::timeout(Duration::from_secs(2), self.conn.call("Browser.close", json!({}), None)).await;
        if let Some(mut child) = self.child.take() {
            if tokio::time::timeout(Duration::from_secs(3), child.wait())
                .await
                .is_err()
            {
                kill_tree(self.pgid);
                let _ = tokio::time::timeout(Duration::from_secs(3), child.wait()).await;
            }
            kill_tree(self.pgid);
        }
    }
}

impl Drop for Browser {
    fn drop(&mut self) {
        if self.child.is_some() {
            kill_tree(self.pgid);
        }
    }
}

fn kill_tree(pgid: Option<i32>) {
    if let Some(pgid) = pgid {
        // SAFETY: sending a signal has no memory-safety implications.
        unsafe {
            libc::killpg(pgid, libc::SIGKILL);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenshotImage {
    #[serde(skip)]
    pub png: Vec<u8>,
    pub width: u32,
    pub height: u32,
    pub url: String,
}

/// Width and height from a PNG's IHDR chunk.
pub fn png_dimensions(png: &[u8]) -> Option<(u32, u32)> {
    if png.len() < 24 || &png[..8] != b"\x89PNG\r\n\x1a\n" || &png[12..16] != b"IHDR" {
        return None;
    }
    let w = u32::from_be_bytes(png[16..20].try_into().ok()?);
    let h = u32::from_be_bytes(png[20..24].try_into().ok()?);
    Some((w, h))
}

pub struct Page {
    conn: Arc<Connection>,
    session_id: String,
    target_id: String,
    navigation_timeout: Duration,
    idle_grace: Duration,
    width: u32,
    height: u32,
}

impl Page {
    pub async fn call(&self, method: &str, params: Value) -> Result<Value, BrowserError> {
        self.conn.call(method, params, Some(&self.session_id)).await
    }

    pub fn viewport(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Navigates and waits for network idle (or `load` plus a grace period).
    pub async fn navigate(&self, url: &str) -> Result<(), BrowserError> {
        let mut events = self.conn.events.subscribe();
        let nav = self.call("Page.navigate", json!({"url": url})).await?;
        if let Some(err) = nav["errorText"].as_str().filter(|e| !e.is_empty()) {
            return Err(BrowserError::Navigation {
                url: url.to_string(),
                reason: err.to_string(),
            });
        }
        let Some(loader) = nav["loaderId"].as_str().map(str::to_string) else {
            // Same-document navigation: nothing to wait for.
            return Ok(());
        };
        let deadline = Instant::now() + self.navigation_timeout;
        let mut loaded_at: Option<Instant> = None;
        loop {
            let now = Instant::now();
            let mut limit = deadline;
            if let Some(t) = loaded_at {
                limit = limit.min(t + self.idle_grace);
            }
            if now >= limit {
                return if loaded_at.is_some() {
                    Ok(())
                } else {
                    Err(BrowserError::Navigation {
                        url: url.to_string(),
                        reason: "timed out waiting for the page to load".into(),
                    })
                };
            }
            match tokio::time::timeout(limit - now, events.recv()).await {
                Err(_) => continue,
                Ok(Err(broadcast::error::RecvError::Lagged(_))) => continue,
                Ok(Err(broadcast::error::RecvError::Closed)) => return Err(BrowserError::Closed),
                Ok(Ok(ev)) => {
                    if ev.session_id.as_deref() != Some(self.session_id.as_str())
                        || ev.method != "Page.lifecycleEvent"
                        || ev.params["loaderId"].as_str() != Some(loader.as_str())
                    {
                        continue;
                    }
                    match ev.params["name"].as_str() {
                        Some("networkIdle") => return Ok(()),
                        Some("load") => loaded_at = loaded_at.or(Some(Instant::now())),
                        _ => {}
                    }
                }
            }
        }
    }

    /// Evaluates an expression and returns its JSON value.
    pub async fn evaluate(&self, expression: &str) -> Result<Value, BrowserError> {
        let r = self
            .call(
                "Runtime.evaluate",
                json!({"expression": expression, "returnByValue": true, "awaitPromise": true}),
            )
            .await?;
        if let Some(ex) = r.get("exceptionDetails") {
            let message = ex["exception"]["description"]
                .as_str()
                .or(ex["text"].as_str())
                .unwrap_or("script exception")
                .to_string();
            return Err(BrowserError::Protocol {
                method: "Runtime.evaluate".into(),
                message,
            });
        }
        Ok(r["result"]["value"].clone())
    }

    pub async fn screenshot(&self) -> Result<ScreenshotImage, BrowserError> {
        let r = self
            .call("Page.captureScreenshot", json!({"format": "png", "fromSurface": true}))
            .await?;
        let data = r["data"].as_str().ok_or_else(|| BrowserError::Protocol {
            method: "Page.captureScreenshot".into(),
            message: "no image data".into(),
        })?;
        use base64::Engine as _;
        let png = base64::engine::general_purpose::STANDARD
            .decode(data)
            .map_err(|e| BrowserError::Protocol {
                method: "Page.captureScreenshot".into(),
                message: format!("bad base64: {e}"),
            })?;
        let (width, height) = png_dimensions(&png).ok_or_else(|| BrowserError::Protocol {
            method: "Page.captureScreenshot".into(),
            message: "not a PNG".into(),
        })?;
        let url = self
            .evaluate("location.href")
            .await?
            .as_str()
            .unwrap_or_default()
            .to_string();
        Ok(ScreenshotImage {
            png,
            width,
            height,
            url,
        })
    }

    pub async fn click_at(&self, x: f64, y: f64) -> Result<(), BrowserError> {
        self.call(
            "Input.dispatchMouseEvent",
            json!({"type": "mouseMoved", "x": x, "y": y}),
        )
        .await?;
        for kind in ["mousePressed", "mouseReleased"] {
            self.call(
                "Input.dispatchMouseEvent",
                json!({"type": kind, "x": x, "y": y, "button": "left", "clickCount": 1}),
            )
            .await?;
        }
        Ok(())
    }

    pub async fn insert_text(&self, text: &str) -> Result<(), BrowserError> {
        self.call("Input.insertText", json!({"text": text})).await.map(|_| ())
    }

    pub async fn close(self) {
        let _ = self
            .conn
            .call("Target.closeTarget", json!({"targetId": self.target_id}), None)
            .await;
    }
}
