//! Loopback origin and player used by the proxy tests.
#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use socket2::{Domain, Socket, Type};

fn read_head(s: &mut TcpStream) -> Vec<u8> {
    let mut head = Vec::new();
    let mut b = [0u8; 1];
    while !head.ends_with(b"\r\n\r\n") {
        if s.read(&mut b).unwrap_or(0) == 0 {
            break;
        }
        head.push(b[0]);
    }
    head
}

/// Serves one request with `bytes` of body announced at `rate_bps`,
/// optionally throttled to `send_bps`.
pub fn origin(bytes: usize, rate_bps: Option<u64>, send_bps: Option<f64>) -> (SocketAddr, JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let h = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let request = String::from_utf8_lossy(&read_head(&mut s)).into_owned();
        let mut head = format!("HTTP/1.1 200 OK\r\nContent-Type: video/mp4\r\nContent-Length: {bytes}\r\n");
        if let Some(r) = rate_bps {
            head.push_str(&format!("X-Stream-Info: duration={};bitrate={r};seconds=0-;\r\n", bytes as u64 * 8 / r));
        }
        head.push_str("Connection: close\r\n\r\n");
        if s.write_all(head.as_bytes()).is_err() {
            return request;
        }
        let chunk = vec![0x5au8; 8 * 1024];
        let start = Instant::now();
        let mut sent = 0usize;
        while sent < bytes {
            let n = chunk.len().min(bytes - sent);
            if let Some(bps) = send_bps {
                let due = Duration::from_secs_f64(sent as f64 * 8.0 / bps);
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    thread::sleep(wait);
                }
            }
            if s.write_all(&chunk[..n]).is_err() {
                break;
            }
            sent += n;
        }
        request
    });
    (addr, h)
}

/// Player with an application buffer of `buffer_bytes` played out at
/// `rate_bps`; it only reads from the socket when the buffer has room.
/// Without a buffer it reads as fast as it can.
pub struct Player {
    pub stop: Arc<AtomicBool>,
    pub handle: JoinHandle<(String, u64)>,
}

pub fn player(proxy: SocketAddr, origin: SocketAddr, buffer_bytes: Option<u64>, rate_bps: f64, close_after: Option<u64>) -> Player {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let handle = thread::spawn(move || {
        let sock = Socket::new(Domain::IPV4, Type::STREAM, None).unwrap();
        if buffer_bytes.is_some() {
            sock.set_recv_buffer_size(16 * 1024).unwrap();
        }
        sock.connect(&proxy.into()).unwrap();
        let mut s: TcpStream = sock.into();
        let req = format!("GET http://{origin}/stream HTTP/1.1\r\nHost: {origin}\r\nX-Device: ANDROID\r\n\r\n");
        s.write_all(req.as_bytes()).unwrap();
        let head = String::from_utf8_lossy(&read_head(&mut s)).into_owned();
        s.set_read_timeout(Some(Duration::from_millis(20))).unwrap();
        let mut received = 0u64;
        let mut drained = 0.0f64;
        let mut playing_since: Option<Instant> = None;
        let mut last = Instant::now();
        let mut buf = vec![0u8; 16 * 1024];
        while !flag.load(Ordering::Relaxed) {
            let now = Instant::now();
            if playing_since.is_some() {
                drained = (drained + now.duration_since(last).as_secs_f64() * rate_bps / 8.0).min(received as f64);
            }
            last = now;
            let room = match buffer_bytes {
                Some(b) => (b as f64 - (received as f64 - drained)).max(0.0) as usize,
                None => buf.len(),
            };
            if room == 0 {
                thread::sleep(Duration::from_millis(5));
                continue;
            }
            let want = room.min(buf.len());
            match s.read(&mut buf[..want]) {
                Ok(0) => break,
                Ok(n) => received += n as u64,
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                Err(_) => break,
            }
            if playing_since.is_none() && received as f64 >= 2.0 * rate_bps / 8.0 {
                playing_since = Some(Instant::now());
            }
            if close_after.is_some_and(|c| received >= c) {
                break;
            }
        }
        (head, received)
    });
    Player { stop, handle }
}
