//! HTTP front end for [`Service`].

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Response, Server};

use super::api::{ApiRequest, Service};

pub struct HttpServer {
    server: Arc<Server>,
    addr: SocketAddr,
    thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn start(bind: &str, service: Arc<Service>) -> io::Result<Self> {
        let server = Arc::new(Server::http(bind).map_err(|e| io::Error::other(e.to_string()))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("not an IP listener"))?;
        let srv = server.clone();
        let thread = std::thread::spawn(move || {
            for mut request in srv.incoming_requests() {
                let mut body = String::new();
                if let Err(e) = request.as_reader().read_to_string(&mut body) {
                    let _ =
                        request.respond(Response::from_string(format!("{{\"error\":\"{e}\"}}")).with_status_code(400));
                    continue;
                }
                let token = request.headers().iter().find_map(|h| {
                    let v = h.value.as_str();
                    if h.field.equiv("Authorization") {
                        v.strip_prefix("Bearer ").map(str::to_string)
                    } else if h.field.equiv("X-Api-Token") {
                        Some(v.to_string())
                    } else {
                        None
                    }
                });
                let method = match request.method() {
                    Method::Get => "GET",
                    Method::Post => "POST",
                    Method::Put => "PUT",
                    Method::Delete => "DELETE",
                    _ => "OTHER",
                };
                let api = ApiRequest {
                    method: method.to_string(),
                    path: request.url().to_string(),
                    body,
                    token,
                };
                let resp = service.dispatch(&api);
                let json = Header::from_bytes("Content-Type", "application/json").expect("static header");
                let out = Response::from_string(resp.body.to_string())
                    .with_status_code(resp.status)
                    .with_header(json);
                if let Err(e) = request.respond(out) {
                    log::warn!("http write failed: {e}");
                }
            }
        });
        Ok(Self {
            server,
            addr,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
