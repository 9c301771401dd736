// SPDX-License-Identifier: Apache-2.0

//! Static file server for the browser console bundle.

use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Response, Server};

use super::PipelineError;

/// Serves files under a directory, plus `/openteach.json` carrying the
/// discovery document (gateway URL, robot model constants).
pub struct StaticServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "wasm" => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Maps a request path onto `root`, refusing anything that escapes it.
fn resolve(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let mut full = root.join(rel);
    if full.is_dir() {
        full.push("index.html");
    }
    Some(full)
}

impl StaticServer {
    pub fn serve(root: &Path, addr: &str, discovery: serde_json::Value) -> Result<Self, PipelineError> {
        if !root.is_dir() {
            return Err(PipelineError::Config(format!(
                "console directory {} does not exist",
                root.display()
            )));
        }
        let server =
            Server::http(addr).map_err(|e| PipelineError::Config(format!("cannot serve console on {addr}: {e}")))?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| PipelineError::Config("console server has no IP address".into()))?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let root = root.to_path_buf();
        let discovery = discovery.to_string();
        let thread = std::thread::Builder::new().name("console-http".into()).spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                let req = match server.recv_timeout(Duration::from_millis(50)) {
                    Ok(Some(r)) => r,
                    Ok(None) => continue,
                    Err(e) => {
                        log::warn!("console server: {e}");
                        continue;
                    }
                };
                let result = if req.url() == "/openteach.json" {
                    let h = Header::from_bytes("Content-Type", "application/json").expect("static header");
                    req.respond(Response::from_string(discovery.clone()).with_header(h))
                } else {
                    match resolve(&root, req.url()).and_then(|p| std::fs::read(&p).ok().map(|b| (p, b))) {
                        Some((p, bytes)) => {
                            let h = Header::from_bytes("Content-Type", content_type(&p)).expect("static header");
                            req.respond(Response::from_data(bytes).with_header(h))
                        }
                        None => req.respond(Response::from_string("not found").with_status_code(404)),
                    }
                };
                if let Err(e) = result {
                    log::debug!("console response failed: {e}");
                }
            }
        })?;
        log::info!("console served on http://{local}");
        Ok(Self {
            addr: local,
            stop,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for StaticServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}
