use std::io::Cursor;
use webgen_core::browser::{find_executable, Browser, BrowserConfig};
use webgen_core::exec::{ExecConfig, ExecHarness, Executor};
use webgen_core::feedback::{capture, VisualConfig};
use webgen_core::workspace::Workspace;

fn have_browser() -> bool {
    let found = find_executable(&BrowserConfig::default()).is_some();
    if !found {
        eprintln!("skipped: no Chromium executable (see scripts/fetch-chromium.sh)");
    }
    found
}

fn red_fraction(png: &[u8]) -> f64 {
    let img = image::load(Cursor::new(png), image::ImageFormat::Png)
        .unwrap()
        .to_rgb8();
    let red = img.pixels().filter(|p| p[0] > 200 && p[1] < 60 && p[2] < 60).count();
    red as f64 / (img.width() * img.height()) as f64
}

async fn static_site(html: &str) -> (tempfile::TempDir, ExecHarness, String) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("ws")).unwrap();
    std::fs::write(dir.path().join("ws/index.html"), html).unwrap();
    let ws = Workspace::open(dir.path().join("ws"), dir.path().join("snaps")).unwrap();
    let mut harness = ExecHarness::new(ExecConfig::default()).unwrap();
    let out = harness.execute(&ws, &[]).await;
    assert!(!out.is_error, "{out:?}");
    let url = out.served_url.unwrap();
    (dir, harness, url)
}

#[tokio::test]
async fn red_page_screenshot_has_viewport_size() {
    if !have_browser() {
        return;
    }
    let (_dir, mut harness, url) =
        static_site("<!doctype html><html><body style=\"margin:0;background:#ff0000\"></body></html>").await;
    let browser = Browser::start(BrowserConfig::default()).await.unwrap();
    let cfg = VisualConfig {
        settle_delay_ms: 0,
        ..VisualConfig::default()
    };
    let shot = capture(&browser, &url, &cfg).await.unwrap();
    assert_eq!((shot.width, shot.height), (1280, 720));
    assert!(red_fraction(&shot.png) > 0.95);

    let small = VisualConfig {
        viewport_width: 400,
        viewport_height: 300,
        settle_delay_ms: 0,
    };
    let shot = capture(&browser, &url, &small).await.unwrap();
    assert_eq!((shot.width, shot.height), (400, 300));
    harness.shutdown().await;
}

#[tokio::test]
async fn unreachable_url_is_a_navigation_error() {
    if !have_browser() {
        return;
    }
    let browser = Browser::start(BrowserConfig::default()).await.unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let cfg = VisualConfig {
        settle_delay_ms: 0,
        ..VisualConfig::default()
    };
    let err = capture(&browser, &format!("http://127.0.0.1:{port}/"), &cfg)
        .await
        .unwrap_err();
    assert!(err.to_string().contains("ERR_CONNECTION_REFUSED"), "{err}");
}

#[tokio::test]
async fn browser_shutdown_leaves_no_processes() {
    if !have_browser() {
        return;
    }
    let mut browser = Browser::start(BrowserConfig::default()).await.unwrap();
    assert!(!browser.version().await.unwrap().is_empty());
    let pgid = browser.process_group().unwrap();
    browser.shutdown().await;
    browser.shutdown().await;
    assert!(!webgen_core::exec::process_group_alive(pgid));
}
