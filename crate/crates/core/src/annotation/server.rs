use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

use super::{AnnotationError, AnnotationTask, SubmitError, TaskStore};
use crate::jsonl;
use crate::labels::PerceivedAxis;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// `host:port`; port 0 picks a free one.
    pub addr: String,
    /// Built UI bundle served under `/`.
    pub static_dir: Option<PathBuf>,
    /// Base for relative `image_ref`s.
    pub image_root: Option<PathBuf>,
    pub workers: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions { addr: "127.0.0.1:8080".into(), static_dir: None, image_root: None, workers: 4 }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stop accepting requests and wait for in-flight ones.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    /// Block until the process is killed.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

pub fn start(store: Arc<TaskStore>, options: ServerOptions) -> Result<ServerHandle, AnnotationError> {
    let server = Server::http(&options.addr).map_err(|e| AnnotationError::Bind(e.to_string()))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| AnnotationError::Bind("not a TCP listener".into()))?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let ctx = Arc::new(Context { store, static_dir: options.static_dir, image_root: options.image_root });
    let workers = (0..options.workers.max(1))
        .map(|_| {
            let (server, stop, ctx) = (Arc::clone(&server), Arc::clone(&stop), Arc::clone(&ctx));
            thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(req)) => ctx.handle(req),
                        Ok(None) => {}
                        Err(e) => {
                            log::error!("annotation service: {e}");
                            break;
                        }
                    }
                }
            })
        })
        .collect();
    log::info!("annotation service listening on http://{addr}");
    Ok(ServerHandle { addr, stop, workers })
}

struct Context {
    store: Arc<TaskStore>,
    static_dir: Option<PathBuf>,
    image_root: Option<PathBuf>,
}

#[derive(Deserialize)]
struct Submission {
    axis: String,
    label: String,
    annotator: String,
}

struct Reply {
    status: u16,
    content_type: &'static str,
    body: Vec<u8>,
}

impl Reply {
    fn json(status: u16, value: Value) -> Self {
        Reply { status, content_type: "application/json", body: value.to_string().into_bytes() }
    }

    fn error(status: u16, message: impl std::fmt::Display) -> Self {
        Reply::json(status, json!({ "error": message.to_string() }))
    }
}

const PLACEHOLDER: &str = "<!doctype html><title>annotation</title>\
<p>No UI bundle configured. The JSON API is at <code>/tasks/next</code>, \
<code>/progress</code> and <code>/export</code>.</p>";

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

fn vocabulary() -> Value {
    PerceivedAxis::ALL
        .iter()
        .map(|a| (a.as_str().to_string(), json!(a.annotator_labels())))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

impl Context {
    fn handle(&self, mut req: Request) {
        let reply = self.route(&mut req);
        let header = Header::from_bytes(&b"Content-Type"[..], reply.content_type.as_bytes()).expect("static header");
        let response = Response::from_data(reply.body).with_status_code(reply.status).with_header(header);
        if let Err(e) = req.respond(response) {
            log::warn!("annotation service: response failed: {e}");
        }
    }

    fn route(&self, req: &mut Request) -> Reply {
        let url = req.url().to_string();
        let (path, query) = url.split_once('?').unwrap_or((&url, ""));
        let segments: Vec<&str> = path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        match (req.method(), segments.as_slice()) {
            (Method::Get, ["tasks", "next"]) => {
                let annotator = form_urlencoded::parse(query.as_bytes())
                    .find(|(k, _)| k == "annotator")
                    .map(|(_, v)| v.into_owned())
                    .unwrap_or_default();
                if annotator.trim().is_empty() {
                    return Reply::error(400, "annotator query parameter is required");
                }
                let task = self.store.next_task(annotator.trim());
                Reply::json(
                    200,
                    json!({ "task": task.map(|t| self.task_view(&t)), "progress": self.store.progress() }),
                )
            }
            (Method::Post, ["tasks", id, "labels"]) => self.submit(id, req),
            (Method::Get, ["tasks", id]) => match self.store.task(id) {
                Some(t) => Reply::json(200, self.task_view(&t)),
                None => Reply::error(404, format!("no task `{id}`")),
            },
            (Method::Get, ["images", id]) => {
                match self.store.task(id).and_then(|t| self.image_path(&t.image_ref)).and_then(|p| {
                    std::fs::read(&p).ok().map(|b| (mime_for(&p), b))
                }) {
                    Some((content_type, body)) => Reply { status: 200, content_type, body },
                    None => Reply::error(404, "image not available"),
                }
            }
            (Method::Get, ["progress"]) => Reply::json(200, json!(self.store.progress())),
            (Method::Get, ["vocabulary"]) => Reply::json(200, vocabulary()),
            (Method::Get, ["export"]) => match jsonl::to_string(&self.store.export()) {
                Ok(text) => Reply { status: 200, content_type: "application/x-ndjson", body: text.into_bytes() },
                Err(e) => Reply::error(500, e),
            },
            (Method::Get, rest) => self.static_file(rest),
            _ => Reply::error(405, "method not allowed"),
        }
    }

    fn submit(&self, id: &str, req: &mut Request) -> Reply {
        let mut body = String::new();
        if let Err(e) = req.as_reader().read_to_string(&mut body) {
            return Reply::error(400, e);
        }
        let sub: Submission = match serde_json::from_str(&body) {
            Ok(s) => s,
            Err(e) => return Reply::error(400, format!("malformed submission: {e}")),
        };
        match self.store.submit(id, &sub.axis, &sub.label, &sub.annotator) {
            Ok(task) => Reply::json(200, json!({ "task": self.task_view(&task), "progress": self.store.progress() })),
            Err(SubmitError::InvalidLabel { axis, label, options }) => Reply::json(
                422,
                json!({ "error": format!("`{label}` is not a valid {axis} label"), "axis": axis, "options": options }),
            ),
            Err(e @ SubmitError::AxisNotRequested { .. }) => Reply::error(422, e),
            Err(e @ SubmitError::UnknownTask(_)) => Reply::error(404, e),
            Err(e @ (SubmitError::UnknownAxis(_) | SubmitError::MissingAnnotator)) => Reply::error(400, e),
            Err(e @ SubmitError::Journal(_)) => {
                log::error!("{e}");
                Reply::error(500, e)
            }
        }
    }

    fn image_path(&self, image_ref: &str) -> Option<PathBuf> {
        if image_ref.contains("://") {
            return None;
        }
        let p = Path::new(image_ref);
        let full = match (&self.image_root, p.is_relative()) {
            (Some(root), true) => root.join(p),
            _ => p.to_path_buf(),
        };
        full.is_file().then_some(full)
    }

    fn task_view(&self, t: &AnnotationTask) -> Value {
        let image = self.image_path(&t.image_ref);
        let inline = image.as_ref().and_then(|p| std::fs::read(p).ok()).map(|bytes| {
            base64::engine::general_purpose::STANDARD.encode(bytes)
        });
        let axes: Vec<Value> = t
            .axes
            .iter()
            .map(|a| json!({ "axis": a, "options": a.annotator_labels(), "label": t.labels.get(a) }))
            .collect();
        json!({
            "task_id": t.task_id,
            "image_ref": t.image_ref,
            "model_tag": t.model_tag,
            "status": t.status,
            "image_url": image.as_ref().map(|_| format!("/images/{}", t.task_id)),
            "image_mime": image.as_deref().map(mime_for),
            "image_base64": inline,
            "axes": axes,
        })
    }

    fn static_file(&self, segments: &[&str]) -> Reply {
        let Some(root) = &self.static_dir else {
            return if segments.is_empty() {
                Reply { status: 200, content_type: "text/html; charset=utf-8", body: PLACEHOLDER.into() }
            } else {
                Reply::error(404, "not found")
            };
        };
        let rel: PathBuf = if segments.is_empty() { PathBuf::from("index.html") } else { segments.iter().collect() };
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Reply::error(404, "not found");
        }
        let full = root.join(&rel);
        match std::fs::read(&full) {
            Ok(body) => Reply { status: 200, content_type: mime_for(&full), body },
            Err(_) => Reply::error(404, "not found"),
        }
    }
}
