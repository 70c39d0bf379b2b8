use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::wire::{self, FrameScanner};
use super::{split_flags, Ack, Hub};
use crate::edge::{LatentRecord, Sink};
use crate::error::{Error, Result};
use crate::train::Split;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub bytes: u64,
    pub accepted: u64,
    pub rejected: u64,
}

/// Ingest frames from one ordered byte stream, writing one ack byte per frame
/// or rejection, until the peer closes its write side.
pub fn serve_stream<S: Read + Write>(hub: &Hub, mut stream: S) -> io::Result<ServeStats> {
    let mut scanner = FrameScanner::default();
    let mut stats = ServeStats::default();
    let mut buf = vec![0u8; 64 * 1024];
    let mut acks = Vec::new();
    let record = |ack: Ack, acks: &mut Vec<u8>, stats: &mut ServeStats| {
        if ack.is_accepted() {
            stats.accepted += 1;
        } else {
            stats.rejected += 1;
        }
        acks.push(ack.code());
    };
    loop {
        let n = match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        stats.bytes += n as u64;
        scanner.feed(&buf[..n]);
        while let Some(event) = scanner.next() {
            record(hub.ingest_event(event), &mut acks, &mut stats);
        }
        if !acks.is_empty() {
            stream.write_all(&acks)?;
            stream.flush()?;
            acks.clear();
        }
    }
    if let Some(event) = scanner.finish() {
        record(hub.ingest_event(event), &mut acks, &mut stats);
        // The peer may already be gone; a lost final ack is not an error.
        let _ = stream.write_all(&acks).and_then(|_| stream.flush());
    }
    Ok(stats)
}

/// TCP ingestion service; one thread per connection.
#[derive(Debug)]
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    connections: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl Server {
    pub fn spawn(hub: Arc<Hub>, addr: impl ToSocketAddrs) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let connections: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::default();
        let acceptor = {
            let (stop, connections) = (stop.clone(), connections.clone());
            std::thread::Builder::new().name("hub-accept".into()).spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let stream = match conn {
                        Ok(s) => s,
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    let hub = hub.clone();
                    let handle = std::thread::spawn(move || {
                        let peer = stream.peer_addr().ok();
                        let _ = stream.set_nodelay(true);
                        match serve_stream(&hub, stream) {
                            Ok(stats) => log::info!("connection {peer:?} closed: {stats:?}"),
                            Err(e) => log::warn!("connection {peer:?} failed: {e}"),
                        }
                    });
                    let mut conns = connections.lock().expect("connection list poisoned");
                    conns.retain(|h| !h.is_finished());
                    conns.push(handle);
                }
            })?
        };
        Ok(Self { addr, stop, acceptor: Some(acceptor), connections })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting, then wait for open connections to finish.
    pub fn shutdown(mut self) {
        self.stop_accepting();
        let conns = std::mem::take(&mut *self.connections.lock().expect("connection list poisoned"));
        for h in conns {
            let _ = h.join();
        }
    }

    fn stop_accepting(&mut self) {
        if let Some(acceptor) = self.acceptor.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect(self.addr);
            let _ = acceptor.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

/// Device-side TCP connection to a hub. Sends are synchronous: one frame, one ack.
#[derive(Debug)]
pub struct WireClient {
    stream: Mutex<TcpStream>,
}

impl WireClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream: Mutex::new(stream) })
    }

    pub fn send(&self, record: &LatentRecord, split: Split) -> Result<Ack> {
        let frame = wire::encode_frame(record, split_flags(split))?;
        let mut stream = self.stream.lock().expect("client stream poisoned");
        stream.write_all(&frame)?;
        read_ack(&mut stream)
    }

    /// Write raw bytes and collect `expected_acks` ack codes.
    pub fn send_raw(&self, bytes: &[u8], expected_acks: usize) -> Result<Vec<Ack>> {
        let mut stream = self.stream.lock().expect("client stream poisoned");
        stream.write_all(bytes)?;
        (0..expected_acks).map(|_| read_ack(&mut stream)).collect()
    }

    /// Half-close so the server sees end of stream.
    pub fn finish(self) -> io::Result<()> {
        self.stream.into_inner().expect("client stream poisoned").shutdown(std::net::Shutdown::Write)
    }
}

fn read_ack(stream: &mut TcpStream) -> Result<Ack> {
    let mut code = [0u8];
    stream.read_exact(&mut code)?;
    Ack::from_code(code[0]).ok_or_else(|| Error::Parse(format!("unknown ack code {:#04x}", code[0])))
}

impl Sink for WireClient {
    fn push(&self, record: &LatentRecord, split: Split) -> Result<()> {
        match self.send(record, split)? {
            Ack::Accepted => Ok(()),
            ack => Err(Error::Rejected(ack)),
        }
    }
}
