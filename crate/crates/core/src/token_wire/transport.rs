//! Length-prefixed frame transport.
//!
//! Each message is a `u32` little-endian body length followed by one token
//! frame. The receiver answers `ACK` once the frame is validated and stored,
//! or `NAK` and closes the connection if it is not.

use std::fs;
use std::io::{self, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::unpack;
use crate::error::{Error, Result};

pub const ACK: u8 = 0x06;
pub const NAK: u8 = 0x15;
pub const MAX_BODY_LEN: usize = 64 * 1024 * 1024;

const ACCEPT_POLL: Duration = Duration::from_millis(5);
const SERVER_READ_TIMEOUT: Duration = Duration::from_secs(30);

pub fn write_message<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    if body.len() > MAX_BODY_LEN {
        return Err(io::Error::new(ErrorKind::InvalidInput, "frame exceeds 64 MiB cap"));
    }
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(body)
}

/// Reads one message body. `Ok(None)` is a clean end of stream at a message
/// boundary.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut prefix = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut prefix[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::frame(filled, "stream ended inside length prefix")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_BODY_LEN {
        return Err(Error::frame(0, format!("declared length {len} exceeds 64 MiB cap")));
    }
    let mut body = Vec::new();
    let got = r.take(len as u64).read_to_end(&mut body)?;
    if got < len {
        return Err(Error::frame(
            4 + got,
            format!("stream ended after {got} of {len} body bytes"),
        ));
    }
    Ok(Some(body))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendOptions {
    /// Pace the upload to this many bytes per second.
    pub throttle_bytes_per_sec: Option<u64>,
    pub ack_timeout: Duration,
    pub connect_timeout: Duration,
}

impl Default for SendOptions {
    fn default() -> Self {
        SendOptions {
            throttle_bytes_per_sec: None,
            ack_timeout: Duration::from_secs(10),
            connect_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SendReport {
    /// Prefix plus body.
    pub bytes_sent: usize,
    /// From the first byte written to the acknowledgment.
    pub elapsed: Duration,
}

impl SendReport {
    pub fn throughput_bytes_per_sec(&self) -> f64 {
        self.bytes_sent as f64 / self.elapsed.as_secs_f64().max(f64::EPSILON)
    }
}

fn transport_err(e: io::Error) -> Error {
    Error::Transport(e.to_string())
}

/// Writes `data` in small slices, sleeping so that the cumulative rate
/// stays at `rate` bytes per second.
fn paced_write<W: Write>(w: &mut W, data: &[u8], rate: u64, start: Instant) -> io::Result<()> {
    let chunk = (rate / 50).max(1) as usize;
    let mut sent = 0usize;
    for piece in data.chunks(chunk) {
        w.write_all(piece)?;
        sent += piece.len();
        let due = start + Duration::from_secs_f64(sent as f64 / rate as f64);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
    }
    Ok(())
}

/// Persistent connection; sends any number of frames, one acknowledgment
/// each.
pub struct Client {
    stream: TcpStream,
    opts: SendOptions,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs, opts: SendOptions) -> Result<Self> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs().map_err(transport_err)?.collect();
        let mut last = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, opts.connect_timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true).map_err(transport_err)?;
                    stream.set_read_timeout(Some(opts.ack_timeout)).map_err(transport_err)?;
                    return Ok(Client { stream, opts });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Transport(last.map_or_else(
            || "address resolved to nothing".into(),
            |e| e.to_string(),
        )))
    }

    pub fn send_frame(&mut self, frame: &[u8]) -> Result<SendReport> {
        if frame.len() > MAX_BODY_LEN {
            return Err(Error::Transport("frame exceeds 64 MiB cap".into()));
        }
        let mut message = Vec::with_capacity(4 + frame.len());
        message.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        message.extend_from_slice(frame);

        let start = Instant::now();
        match self.opts.throttle_bytes_per_sec {
            Some(rate) if rate > 0 => paced_write(&mut self.stream, &message, rate, start),
            _ => self.stream.write_all(&message),
        }
        .and_then(|_| self.stream.flush())
        .map_err(transport_err)?;

        let mut ack = [0u8; 1];
        match self.stream.read(&mut ack) {
            Ok(1) if ack[0] == ACK => Ok(SendReport {
                bytes_sent: message.len(),
                elapsed: start.elapsed(),
            }),
            Ok(1) if ack[0] == NAK => Err(Error::Transport("server rejected the frame".into())),
            Ok(1) => Err(Error::Transport(format!("unexpected reply byte {:#04x}", ack[0]))),
            Ok(_) => Err(Error::Transport("connection closed before acknowledgment".into())),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Err(Error::AckTimeout(self.opts.ack_timeout))
            }
            Err(e) => Err(transport_err(e)),
        }
    }
}

/// One frame over a fresh connection.
pub fn send(addr: impl ToSocketAddrs, frame: &[u8], opts: &SendOptions) -> Result<SendReport> {
    let mut client = Client::connect(addr, *opts)?;
    let report = client.send_frame(frame)?;
    let _ = client.stream.shutdown(Shutdown::Both);
    Ok(report)
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub accepted: AtomicU64,
    pub rejected: AtomicU64,
    pub connections: AtomicU64,
}

/// Content-addressed sink: each valid frame is stored as `<sha256>.tok`.
pub struct Server {
    listener: TcpListener,
    sink: PathBuf,
    stop: Arc<AtomicBool>,
    stats: Arc<ServerStats>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn store_frame(sink: &Path, body: &[u8]) -> io::Result<PathBuf> {
    let name = format!("{}.tok", hex::encode(Sha256::digest(body)));
    let dest = sink.join(&name);
    if dest.exists() {
        return Ok(dest);
    }
    let tmp = sink.join(format!(
        ".{name}.{}.{}.part",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let written = fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(body)?;
        f.sync_all()
    });
    match written.and_then(|_| fs::rename(&tmp, &dest)) {
        Ok(()) => Ok(dest),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Serves one connection until the peer closes or sends something invalid.
pub(crate) fn handle_connection<S: Read + Write>(stream: &mut S, sink: &Path, stats: &ServerStats) {
    loop {
        let body = match read_message(stream) {
            Ok(Some(body)) => body,
            Ok(None) => return,
            Err(_) => {
                stats.rejected.fetch_add(1, Ordering::Relaxed);
                let _ = stream.write_all(&[NAK]);
                return;
            }
        };
        let stored = unpack(&body).is_ok() && store_frame(sink, &body).is_ok();
        if !stored {
            stats.rejected.fetch_add(1, Ordering::Relaxed);
            let _ = stream.write_all(&[NAK]);
            return;
        }
        stats.accepted.fetch_add(1, Ordering::Relaxed);
        if stream.write_all(&[ACK]).and_then(|_| stream.flush()).is_err() {
            return;
        }
    }
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, sink: impl Into<PathBuf>) -> Result<Self> {
        let sink = sink.into();
        fs::create_dir_all(&sink).map_err(|e| Error::Startup(format!("sink {}: {e}", sink.display())))?;
        let listener = TcpListener::bind(addr).map_err(|e| Error::Startup(e.to_string()))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::Startup(e.to_string()))?;
        Ok(Server {
            listener,
            sink,
            stop: Arc::new(AtomicBool::new(false)),
            stats: Arc::new(ServerStats::default()),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn stats(&self) -> Arc<ServerStats> {
        Arc::clone(&self.stats)
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    /// Accept loop; returns once the stop flag is raised.
    pub fn run(&self) -> Result<()> {
        while !self.stop.load(Ordering::Relaxed) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    self.stats.connections.fetch_add(1, Ordering::Relaxed);
                    let sink = self.sink.clone();
                    let stats = Arc::clone(&self.stats);
                    thread::spawn(move || {
                        let mut stream = stream;
                        if stream.set_nonblocking(false).is_err()
                            || stream.set_read_timeout(Some(SERVER_READ_TIMEOUT)).is_err()
                        {
                            return;
                        }
                        handle_connection(&mut stream, &sink, &stats);
                        let _ = stream.shutdown(Shutdown::Both);
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                // transient accept failures (e.g. fd pressure) must not end the service
                Err(_) => thread::sleep(ACCEPT_POLL),
            }
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> ServerHandle {
        let addr = self.local_addr();
        let stop = self.stop_flag();
        let stats = self.stats();
        let join = thread::spawn(move || self.run());
        ServerHandle {
            addr,
            stop,
            stats,
            join: Some(join),
        }
    }
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    pub stats: Arc<ServerStats>,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<Result<()>>>,
}

impl ServerHandle {
    pub fn is_running(&self) -> bool {
        self.join.as_ref().is_some_and(|j| !j.is_finished())
    }

    pub fn shutdown(mut self) -> Result<()> {
        self.stop.store(true, Ordering::Relaxed);
        match self.join.take().map(JoinHandle::join) {
            Some(Ok(r)) => r,
            Some(Err(_)) => Err(Error::Transport("server thread panicked".into())),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

/// Binds `0.0.0.0:port` and serves until the process is stopped.
pub fn serve(port: u16, sink: impl Into<PathBuf>) -> Result<()> {
    Server::bind(("0.0.0.0", port), sink)?.run()
}
