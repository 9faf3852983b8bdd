#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn json(body: serde_json::Value) -> Self {
        Self {
            status: 200,
            body: body.to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: "{}".into(),
        }
    }
}

pub struct Seen {
    pub method: String,
    pub path: String,
    pub auth: Option<String>,
    pub body: serde_json::Value,
}

/// Local HTTP server answering every request with `handler`; returns the
/// base URL and a request counter.
pub fn serve<F>(handler: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(usize, &Seen) -> Reply + Send + 'static,
{
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let port = server.server_addr().to_ip().unwrap().port();
    let count = Arc::new(AtomicUsize::new(0));
    let counter = count.clone();
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let mut raw = String::new();
            req.as_reader().read_to_string(&mut raw).unwrap();
            let seen = Seen {
                method: req.method().to_string(),
                path: req.url().to_string(),
                auth: req
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .map(|h| h.value.to_string()),
                body: serde_json::from_str(&raw).unwrap_or(serde_json::Value::Null),
            };
            let reply = handler(n, &seen);
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            let resp = tiny_http::Response::from_string(reply.body)
                .with_status_code(reply.status)
                .with_header(header);
            let _ = req.respond(resp);
        }
    });
    (format!("http://127.0.0.1:{port}"), count)
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}
