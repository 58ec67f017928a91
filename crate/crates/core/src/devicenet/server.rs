//! TCP transport for the fleet protocol, and client-side links.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use thiserror::Error;

use crate::time::Timestamp;

use super::protocol::{execute, Reply, Request};
use super::Fleet;

pub type SharedFleet = Arc<Mutex<Fleet>>;

/// Time source for the fleet. Replays share a [`SimClock`]; live mode uses wall time.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Clone, Default)]
pub struct SimClock(Arc<AtomicI64>);

impl SimClock {
    pub fn new(start: Timestamp) -> Self {
        Self(Arc::new(AtomicI64::new(start.0)))
    }

    pub fn set(&self, t: Timestamp) {
        self.0.store(t.0, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WallClock;

impl Clock for WallClock {
    fn now(&self) -> Timestamp {
        Timestamp::now_unix()
    }
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("unparseable reply {0:?}")]
    BadReply(String),
}

/// Something that carries protocol requests to a fleet.
pub trait DeviceLink: Send {
    /// `at` is the caller's notion of now; transports with their own clock ignore it.
    fn exchange(&mut self, request: &Request, at: Timestamp) -> Result<Reply, LinkError>;
}

/// Calls straight into a shared fleet without a socket.
pub struct LocalLink(pub SharedFleet);

impl DeviceLink for LocalLink {
    fn exchange(&mut self, request: &Request, at: Timestamp) -> Result<Reply, LinkError> {
        let mut fleet = self.0.lock().unwrap_or_else(|e| e.into_inner());
        Ok(execute(&mut fleet, &request.to_line(), at))
    }
}

pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpLink {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    /// Sends a raw line and collects the full reply (continuation lines included).
    pub fn send_line(&mut self, line: &str) -> Result<Vec<String>, LinkError> {
        self.writer.write_all(format!("{line}\n").as_bytes())?;
        let first = self.read_line()?;
        let mut lines = vec![first];
        for _ in 0..Reply::continuation_lines(&lines[0]) {
            lines.push(self.read_line()?);
        }
        Ok(lines)
    }

    fn read_line(&mut self) -> Result<String, LinkError> {
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(LinkError::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "fleet closed connection",
            )));
        }
        Ok(buf.trim_end_matches(['\r', '\n']).to_string())
    }
}

impl DeviceLink for TcpLink {
    fn exchange(&mut self, request: &Request, _at: Timestamp) -> Result<Reply, LinkError> {
        let lines = self.send_line(&request.to_line())?;
        Reply::parse(&lines[0], &lines[1..]).ok_or_else(|| LinkError::BadReply(lines.join("\\n")))
    }
}

/// Serves the fleet protocol on a TCP listener, one thread per connection.
///
/// Requests are serialized per fleet by its mutex.
pub struct FleetServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl FleetServer {
    pub fn start(bind: impl ToSocketAddrs, fleet: SharedFleet, clock: Arc<dyn Clock>) -> io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let accept_thread = thread::spawn(move || {
            for conn in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let fleet = fleet.clone();
                let clock = clock.clone();
                thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, &fleet, clock.as_ref()) {
                        log::debug!("fleet connection ended: {e}");
                    }
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept_thread.take() {
            let _ = h.join();
        }
    }
}

impl Drop for FleetServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_connection(stream: TcpStream, fleet: &SharedFleet, clock: &dyn Clock) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        // non-UTF-8 input still gets a (BADCMD) reply
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim_end_matches(['\r', '\n']);
        let reply = {
            let mut f = fleet.lock().unwrap_or_else(|e| e.into_inner());
            execute(&mut f, line, clock.now())
        };
        let mut wire = reply.to_wire();
        wire.push('\n');
        writer.write_all(wire.as_bytes())?;
    }
}
