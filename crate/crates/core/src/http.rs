//! Minimal blocking HTTP plumbing shared by the service server, the
//! discovery registry and the package remote.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::Value;

pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub query: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn query_param(&self, key: &str) -> Option<&str> {
        self.query.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Path split on `/`, empty segments dropped.
    pub fn segments(&self) -> Vec<&str> {
        self.path.split('/').filter(|s| !s.is_empty()).collect()
    }
}

pub struct HttpResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn json(status: u16, v: &Value) -> Self {
        Self {
            status,
            content_type: "application/json",
            body: serde_json::to_vec(v).expect("json values serialize"),
        }
    }

    pub fn error(status: u16, message: impl Into<String>) -> Self {
        Self::json(status, &serde_json::json!({ "error": message.into() }))
    }

    pub fn not_found() -> Self {
        Self::error(404, "not found")
    }
}

/// A running server. Dropping the handle stops it.
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

    /// Blocks the calling thread until the server stops.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

const WORKERS: usize = 4;
const POLL: Duration = Duration::from_millis(50);

pub fn serve<F>(addr: &str, handler: F) -> std::io::Result<ServerHandle>
where
    F: Fn(HttpRequest) -> HttpResponse + Send + Sync + 'static,
{
    let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
    let server = Arc::new(server);
    let handler = Arc::new(handler);
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..WORKERS)
        .map(|_| {
            let server = Arc::clone(&server);
            let handler = Arc::clone(&handler);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let Ok(Some(mut req)) = server.recv_timeout(POLL) else {
                        continue;
                    };
                    let mut body = Vec::new();
                    let resp = match req.as_reader().read_to_end(&mut body) {
                        Ok(_) => handler(to_request(&req, body)),
                        Err(e) => HttpResponse::error(400, e.to_string()),
                    };
                    let header = tiny_http::Header::from_bytes("Content-Type", resp.content_type)
                        .expect("static header is valid");
                    let out = tiny_http::Response::from_data(resp.body)
                        .with_status_code(resp.status)
                        .with_header(header);
                    let _ = req.respond(out);
                }
            })
        })
        .collect();
    Ok(ServerHandle { addr, stop, workers })
}

fn to_request(req: &tiny_http::Request, body: Vec<u8>) -> HttpRequest {
    let (path, query) = match req.url().split_once('?') {
        Some((p, q)) => (p, q),
        None => (req.url(), ""),
    };
    HttpRequest {
        method: req.method().as_str().to_ascii_uppercase(),
        path: path.to_string(),
        query: url::form_urlencoded::parse(query.as_bytes()).into_owned().collect(),
        body,
    }
}

pub(crate) fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .new_agent()
}
