//! HTTP forward proxy that releases origin streams to clients in shaped
//! bursts.
//!
//! The proxy cannot see the client's TCP window, so a send buffer that stays
//! saturated (every write blocked or partial) for longer than a threshold
//! stands in for a zero window advertisement. Bytes the socket accepted up to
//! that point count as the burst's SentBytes.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use socket2::SockRef;
use thiserror::Error;

use crate::client::AckEvent;
use crate::media_http::{parse_head, Header, StreamInfo};
use crate::profiler::{Profiler, ProfilerError};
use crate::shaper::{write_burst_rows, BurstLogEntry, Phase, PlayoutEstimator, QualityLadder, Shaper, ShaperConfig, StreamSpec, Termination, BURST_LOG_HEADER};

const MAX_HEAD_BYTES: usize = 64 * 1024;
const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("origin: {0}")]
    Origin(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Profiler(#[from] ProfilerError),
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub listen: SocketAddr,
    /// `host:port` used for every request instead of the request target.
    pub origin: Option<String>,
    /// Radio profile name, for reports only.
    pub profile_tag: Option<String>,
    pub fast_start_s: f64,
    pub granularity_s: f64,
    pub rate_override_bps: Option<f64>,
    /// Burst log, appended to by every session.
    pub log_path: Option<PathBuf>,
    /// How long the send buffer must stay saturated to count as a zero
    /// window.
    pub saturation: Duration,
    /// Requested SO_SNDBUF for client sockets; small values make
    /// backpressure visible sooner.
    pub send_buffer_bytes: Option<usize>,
    pub write_chunk_bytes: usize,
    pub lead_s: f64,
    pub startup_s: f64,
}

impl ProxyConfig {
    pub fn new(listen: SocketAddr) -> Self {
        ProxyConfig {
            listen,
            origin: None,
            profile_tag: None,
            fast_start_s: 40.0,
            granularity_s: 1.0,
            rate_override_bps: None,
            log_path: None,
            saturation: Duration::from_millis(500),
            send_buffer_bytes: Some(64 * 1024),
            write_chunk_bytes: 16 * 1024,
            lead_s: 5.0,
            startup_s: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProxyError> {
        if !(self.fast_start_s > 0.0) {
            return Err(ProxyError::Config("fast_start_seconds must be > 0".into()));
        }
        if !(self.granularity_s > 0.0) || self.write_chunk_bytes == 0 {
            return Err(ProxyError::Config("granularity and write chunk must be > 0".into()));
        }
        if self.rate_override_bps.is_some_and(|r| !(r > 0.0)) {
            return Err(ProxyError::Config("rate override must be > 0".into()));
        }
        Ok(())
    }
}

/// Where the encoding rate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateSource {
    StreamInfo,
    Override,
    LengthDuration,
}

#[derive(Debug, Clone, Default)]
pub struct SessionReport {
    pub peer: Option<SocketAddr>,
    pub target: String,
    pub profile_tag: Option<String>,
    pub status: u16,
    pub r_s_bps: Option<f64>,
    pub rate_source: Option<RateSource>,
    pub bytes_forwarded: u64,
    pub bs_opt_bytes: Option<u64>,
    pub t_max_s: f64,
    pub termination: Option<Termination>,
    pub final_interval_s: f64,
    /// Phases in the order they were entered.
    pub phases: Vec<Phase>,
    pub log: Vec<BurstLogEntry>,
    pub client_closed: bool,
}

/// Finds the end of an HTTP head (after the blank line).
fn head_end(buf: &[u8]) -> Option<usize> {
    let crlf = buf.windows(4).position(|w| w == b"\r\n\r\n").map(|i| i + 4);
    let lf = buf.windows(2).position(|w| w == b"\n\n").map(|i| i + 2);
    match (crlf, lf) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Reads a head; returns it and any body bytes read past it.
fn read_head(s: &mut TcpStream) -> io::Result<(Vec<u8>, Vec<u8>)> {
    let mut buf = Vec::new();
    let mut tmp = [0u8; 4096];
    loop {
        if let Some(end) = head_end(&buf) {
            let rest = buf.split_off(end);
            return Ok((buf, rest));
        }
        if buf.len() > MAX_HEAD_BYTES {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "head too large"));
        }
        let n = s.read(&mut tmp)?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed inside head"));
        }
        buf.extend_from_slice(&tmp[..n]);
    }
}

fn header<'a>(headers: &'a [Header], name: &str) -> Option<&'a Header> {
    headers.iter().find(|h| h.name.eq_ignore_ascii_case(name))
}

fn render_header(h: &Header, out: &mut String) {
    out.push_str(&h.name);
    out.push_str(&h.separator);
    out.push_str(&h.value);
    out.push_str("\r\n");
    for c in &h.continuation {
        out.push_str(c);
        out.push_str("\r\n");
    }
}

/// Origin `host:port` and origin-form path of a request.
fn route(start_line: &str, headers: &[Header], origin_override: Option<&str>) -> Result<(String, String, String, String), ProxyError> {
    let parts: Vec<&str> = start_line.split_whitespace().collect();
    let [method, target, version] = parts[..] else {
        return Err(ProxyError::BadRequest(format!("request line '{start_line}'")));
    };
    let (authority, path) = match target.strip_prefix("http://") {
        Some(rest) => match rest.find('/') {
            Some(i) => (Some(rest[..i].to_string()), rest[i..].to_string()),
            None => (Some(rest.to_string()), "/".to_string()),
        },
        None => (header(headers, "Host").map(|h| h.full_value().trim().to_string()), target.to_string()),
    };
    let origin = match (origin_override, authority) {
        (Some(o), _) => o.to_string(),
        (None, Some(a)) if a.contains(':') => a,
        (None, Some(a)) => format!("{a}:80"),
        (None, None) => return Err(ProxyError::BadRequest("no absolute target or Host header".into())),
    };
    Ok((method.to_string(), path, version.to_string(), origin))
}

/// Stream bytes from the origin, filled by a reader thread.
struct Ingress {
    state: Mutex<IngressState>,
    cv: Condvar,
}

#[derive(Default)]
struct IngressState {
    buf: VecDeque<u8>,
    eof: bool,
}

impl Ingress {
    fn new(initial: Vec<u8>) -> Arc<Self> {
        Arc::new(Ingress { state: Mutex::new(IngressState { buf: initial.into(), eof: false }), cv: Condvar::new() })
    }

    fn pump(self: Arc<Self>, mut origin: TcpStream, mut remaining: Option<u64>) {
        let mut tmp = vec![0u8; 64 * 1024];
        loop {
            let want = remaining.map_or(tmp.len(), |r| (r as usize).min(tmp.len()));
            if want == 0 {
                break;
            }
            match origin.read(&mut tmp[..want]) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if let Some(r) = remaining.as_mut() {
                        *r -= n as u64;
                    }
                    let mut st = self.state.lock().expect("ingress lock");
                    st.buf.extend(&tmp[..n]);
                    self.cv.notify_all();
                }
            }
        }
        self.state.lock().expect("ingress lock").eof = true;
        self.cv.notify_all();
    }

    /// Up to `max` bytes, waiting at most `wait` for some to arrive. The
    /// flag is set once the origin is done and everything was taken.
    fn take(&self, max: usize, wait: Duration) -> (Vec<u8>, bool) {
        let mut st = self.state.lock().expect("ingress lock");
        if st.buf.is_empty() && !st.eof {
            st = self.cv.wait_timeout(st, wait).expect("ingress lock").0;
        }
        let n = max.min(st.buf.len());
        let data: Vec<u8> = st.buf.drain(..n).collect();
        (data, st.eof && st.buf.is_empty())
    }

    fn unread(&self, bytes: &[u8]) {
        let mut st = self.state.lock().expect("ingress lock");
        for &b in bytes.iter().rev() {
            st.buf.push_front(b);
        }
    }

    fn finished(&self) -> bool {
        let st = self.state.lock().expect("ingress lock");
        st.eof && st.buf.is_empty()
    }
}

/// Client socket writer that reports sustained saturation.
struct Sink<'a> {
    stream: &'a TcpStream,
    threshold: Duration,
    saturated_since: Option<Instant>,
}

impl Sink<'_> {
    /// Writes as much of `data` as possible. Returns the bytes accepted and
    /// whether saturation lasted past the threshold.
    fn write(&mut self, data: &[u8], deadline: Option<Instant>) -> io::Result<(usize, bool)> {
        let mut pos = 0;
        let mut blocked = false;
        while pos < data.len() {
            match (&*self.stream).write(&data[pos..]) {
                Ok(0) => return Err(io::ErrorKind::WriteZero.into()),
                Ok(n) => {
                    pos += n;
                    if pos < data.len() {
                        blocked = true;
                        self.saturated_since.get_or_insert_with(Instant::now);
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    blocked = true;
                    self.saturated_since.get_or_insert_with(Instant::now);
                    thread::sleep(Duration::from_millis(1));
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
            if self.saturated_since.is_some_and(|s| s.elapsed() >= self.threshold) {
                return Ok((pos, true));
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Ok((pos, false));
            }
        }
        if !blocked {
            self.saturated_since = None;
        }
        Ok((pos, false))
    }
}

fn is_disconnect(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted | io::ErrorKind::WriteZero
    )
}

/// True once the client has closed its side.
fn client_gone(stream: &TcpStream) -> bool {
    let mut b = [0u8; 1];
    match stream.peek(&mut b) {
        Ok(0) => true,
        Ok(_) => false,
        Err(e) if e.kind() == io::ErrorKind::WouldBlock => false,
        Err(_) => true,
    }
}

struct Session<'a> {
    cfg: &'a ProxyConfig,
    client: &'a TcpStream,
    ingress: Arc<Ingress>,
    epoch: Instant,
    rate: f64,
    profiler: Profiler,
    playout: PlayoutEstimator,
    forwarded: u64,
}

struct BurstResult {
    acks: Vec<AckEvent>,
    sent: u64,
}

impl Session<'_> {
    fn now_s(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    /// Waits until `at_s`; false if the client left meanwhile.
    fn wait_until(&self, at_s: f64) -> bool {
        loop {
            if client_gone(self.client) {
                return false;
            }
            let left = at_s - self.now_s();
            if left <= 0.0 {
                return true;
            }
            thread::sleep(POLL.min(Duration::from_secs_f64(left)));
        }
    }

    fn burst(&mut self, target: u64, stop_on_zwa: bool, round: Option<Duration>) -> io::Result<BurstResult> {
        let deadline = round.map(|r| Instant::now() + r);
        let mut sink = Sink { stream: self.client, threshold: self.cfg.saturation, saturated_since: None };
        let mut acks = Vec::new();
        let mut sent = 0u64;
        let mut zwa_reported = false;
        while sent < target {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                break;
            }
            let want = (self.cfg.write_chunk_bytes as u64).min(target - sent) as usize;
            let (data, done) = self.ingress.take(want, POLL);
            if data.is_empty() {
                if done {
                    break;
                }
                if client_gone(self.client) {
                    return Err(io::ErrorKind::ConnectionAborted.into());
                }
                continue;
            }
            let (n, saturated) = sink.write(&data, deadline)?;
            if n < data.len() {
                self.ingress.unread(&data[n..]);
            }
            sent += n as u64;
            self.forwarded += n as u64;
            let t = self.now_s();
            if n > 0 {
                self.playout.record(t, n as f64 * 8.0 / self.rate);
            }
            if saturated {
                if !zwa_reported {
                    acks.push(AckEvent { time_s: t, cum_ack_bytes: self.forwarded, window_bytes: 0 });
                    zwa_reported = true;
                }
                if stop_on_zwa {
                    break;
                }
                sink.saturated_since = None;
            } else if n > 0 {
                acks.push(AckEvent { time_s: t, cum_ack_bytes: self.forwarded, window_bytes: 1 });
            }
        }
        Ok(BurstResult { acks, sent })
    }

    fn run(&mut self, shaper: &mut Shaper, report: &mut SessionReport) -> Result<(), ProxyError> {
        while !self.ingress.finished() {
            let plan = shaper.plan();
            if report.phases.last() != Some(&plan.phase) {
                report.phases.push(plan.phase);
            }
            let (target, stop, round) = match plan.phase {
                Phase::FastStart => (plan.bytes, true, None),
                // the deadline ends the round; the size only has to be out of reach
                Phase::LowBandwidth => (u64::MAX >> 8, false, plan.round_s.map(Duration::from_secs_f64)),
                Phase::Searching | Phase::Steady => {
                    let at = self.playout.time_for_lead(self.now_s(), shaper.release_lead_s(self.cfg.lead_s));
                    if !self.wait_until(at) {
                        report.client_closed = true;
                        return Ok(());
                    }
                    (plan.bytes, true, None)
                }
            };
            let start = self.now_s();
            self.profiler.begin_burst(target, start);
            let res = match self.burst(target, stop, round) {
                Ok(r) => r,
                Err(e) if is_disconnect(&e) => {
                    report.client_closed = true;
                    return Ok(());
                }
                Err(e) => return Err(e.into()),
            };
            let obs = self.profiler.ingest_all(&res.acks)?.expect("burst is open");
            debug!("burst {} {:?}: {} bytes, zwa {}, est {:?}", plan.burst_id, plan.phase, res.sent, obs.zwa_seen, obs.est_bandwidth_bps);
            if res.sent == 0 && plan.phase == Phase::FastStart {
                // nothing arrived from the origin
                break;
            }
            shaper.on_burst_feedback(&obs);
        }
        Ok(())
    }
}

/// Rate from `X-Stream-Info`, else the override, else length over duration.
fn discover_rate(headers: &[Header], over: Option<f64>) -> (Option<f64>, Option<RateSource>, Option<f64>) {
    let info_raw = header(headers, "X-Stream-Info").map(|h| h.full_value());
    let info = info_raw.as_deref().and_then(|v| v.parse::<StreamInfo>().ok());
    let duration = info.as_ref().and_then(|i| i.duration_s).or_else(|| {
        let from_info = info_raw.as_deref().and_then(|v| {
            v.split(';').filter_map(|kv| kv.trim().split_once('=')).find(|(k, _)| k.trim() == "duration").and_then(|(_, d)| d.trim().parse().ok())
        });
        from_info.or_else(|| header(headers, "X-Content-Duration").and_then(|h| h.full_value().trim().parse().ok()))
    });
    if let Some(i) = &info {
        return (Some(i.bitrate_bps as f64), Some(RateSource::StreamInfo), duration);
    }
    if let Some(r) = over {
        return (Some(r), Some(RateSource::Override), duration);
    }
    let length: Option<f64> = header(headers, "Content-Length").and_then(|h| h.full_value().trim().parse().ok());
    match (length, duration) {
        (Some(l), Some(d)) if d > 0.0 => (Some(l * 8.0 / d), Some(RateSource::LengthDuration), duration),
        _ => (None, None, duration),
    }
}

/// Serves one client connection to completion.
pub fn handle_client(mut client: TcpStream, cfg: &ProxyConfig) -> Result<SessionReport, ProxyError> {
    let mut report = SessionReport { peer: client.peer_addr().ok(), profile_tag: cfg.profile_tag.clone(), ..Default::default() };
    let (head, early_body) = read_head(&mut client)?;
    let head_text = String::from_utf8_lossy(&head).into_owned();
    let (start_line, headers) = parse_head(&head_text).map_err(|e| ProxyError::BadRequest(e.to_string()))?;
    let (method, path, version, origin_addr) = route(&start_line, &headers, cfg.origin.as_deref())?;
    report.target = format!("{origin_addr}{path}");
    info!("{} -> {}", report.peer.map_or("?".into(), |p| p.to_string()), report.target);

    let addr = origin_addr
        .to_socket_addrs()
        .map_err(|e| ProxyError::Origin(format!("{origin_addr}: {e}")))?
        .next()
        .ok_or_else(|| ProxyError::Origin(format!("{origin_addr}: no address")))?;
    let mut origin = TcpStream::connect(addr).map_err(|e| ProxyError::Origin(format!("{origin_addr}: {e}")))?;
    let mut fwd = format!("{method} {path} {version}\r\n");
    for h in headers.iter().filter(|h| !["connection", "proxy-connection", "keep-alive"].contains(&h.name.to_ascii_lowercase().as_str())) {
        render_header(h, &mut fwd);
    }
    fwd.push_str("Connection: close\r\n\r\n");
    origin.write_all(fwd.as_bytes())?;
    origin.write_all(&early_body)?;

    let (resp_head, body_start) = read_head(&mut origin)?;
    let resp_text = String::from_utf8_lossy(&resp_head).into_owned();
    let (status_line, resp_headers) = parse_head(&resp_text).map_err(|e| ProxyError::Origin(e.to_string()))?;
    report.status = status_line
        .split_whitespace()
        .find_map(|t| t.parse::<u16>().ok())
        .ok_or_else(|| ProxyError::Origin(format!("status line '{status_line}'")))?;
    client.write_all(&resp_head)?;

    let length: Option<u64> = header(&resp_headers, "Content-Length").and_then(|h| h.full_value().trim().parse().ok());
    let remaining = length.map(|l| l.saturating_sub(body_start.len() as u64));
    let ingress = Ingress::new(body_start);
    let pump_origin = origin.try_clone()?;
    let pump = {
        let ingress = Arc::clone(&ingress);
        thread::spawn(move || ingress.pump(pump_origin, remaining))
    };

    let (rate, source, duration) = discover_rate(&resp_headers, cfg.rate_override_bps);
    report.r_s_bps = rate;
    report.rate_source = source;
    let shaped = matches!(report.status, 200 | 206) && rate.is_some();
    let result = if let (true, Some(rate)) = (shaped, rate) {
        if let Some(n) = cfg.send_buffer_bytes {
            SockRef::from(&client).set_send_buffer_size(n)?;
        }
        client.set_nodelay(true)?;
        client.set_nonblocking(true)?;
        let spec = StreamSpec::new(QualityLadder::single(rate), duration.unwrap_or(1e9), cfg.fast_start_s)
            .map_err(|e| ProxyError::Config(e.to_string()))?;
        let mut shaper = Shaper::new(spec, ShaperConfig { granularity_s: cfg.granularity_s, ..ShaperConfig::default() });
        let mut session = Session {
            cfg,
            client: &client,
            ingress: Arc::clone(&ingress),
            epoch: Instant::now(),
            rate,
            profiler: Profiler::new(),
            playout: PlayoutEstimator::new(cfg.startup_s),
            forwarded: 0,
        };
        let r = session.run(&mut shaper, &mut report);
        report.bytes_forwarded = session.forwarded;
        report.bs_opt_bytes = shaper.bs_opt_bytes();
        report.t_max_s = shaper.t_max_s();
        report.termination = shaper.termination();
        report.final_interval_s = shaper.interval_s();
        report.log = shaper.log().to_vec();
        r
    } else {
        if rate.is_none() {
            warn!("no encoding rate for {}; forwarding unshaped", report.target);
        }
        passthrough(&client, &ingress, &mut report)
    };
    let _ = origin.shutdown(Shutdown::Both);
    let _ = pump.join();
    let _ = client.set_nonblocking(false);
    let _ = client.flush();
    let _ = client.shutdown(Shutdown::Write);
    result.map(|_| report)
}

fn passthrough(client: &TcpStream, ingress: &Ingress, report: &mut SessionReport) -> Result<(), ProxyError> {
    loop {
        let (data, done) = ingress.take(64 * 1024, POLL);
        if !data.is_empty() {
            if let Err(e) = (&*client).write_all(&data) {
                if is_disconnect(&e) {
                    report.client_closed = true;
                    return Ok(());
                }
                return Err(e.into());
            }
            report.bytes_forwarded += data.len() as u64;
        }
        if done {
            return Ok(());
        }
    }
}

/// Append-only burst log shared by sessions.
#[derive(Debug, Clone)]
struct LogSink(Arc<Mutex<File>>);

impl LogSink {
    fn open(path: &PathBuf) -> io::Result<Self> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if f.metadata()?.len() == 0 {
            writeln!(f, "{BURST_LOG_HEADER}")?;
        }
        Ok(LogSink(Arc::new(Mutex::new(f))))
    }

    fn append(&self, entries: &[BurstLogEntry]) -> io::Result<()> {
        let mut rows = Vec::new();
        write_burst_rows(entries, &mut rows)?;
        let mut f = self.0.lock().expect("log lock");
        f.write_all(&rows)?;
        f.flush()
    }
}

pub struct Proxy {
    listener: TcpListener,
    cfg: Arc<ProxyConfig>,
    log: Option<LogSink>,
}

impl Proxy {
    pub fn bind(cfg: ProxyConfig) -> Result<Self, ProxyError> {
        cfg.validate()?;
        let listener = TcpListener::bind(cfg.listen)?;
        let log = cfg.log_path.as_ref().map(LogSink::open).transpose()?;
        Ok(Proxy { listener, cfg: Arc::new(cfg), log })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    fn finish(log: Option<&LogSink>, r: Result<SessionReport, ProxyError>) -> Result<SessionReport, ProxyError> {
        if let (Some(log), Ok(rep)) = (log, &r) {
            log.append(&rep.log)?;
        }
        r
    }

    /// Accepts one connection and serves it on this thread.
    pub fn serve_one(&self) -> Result<SessionReport, ProxyError> {
        let (stream, _) = self.listener.accept()?;
        Self::finish(self.log.as_ref(), handle_client(stream, &self.cfg))
    }

    /// Serves connections forever, one thread each.
    pub fn serve(&self) -> Result<(), ProxyError> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let cfg = Arc::clone(&self.cfg);
            let log = self.log.clone();
            thread::spawn(move || match Self::finish(log.as_ref(), handle_client(stream, &cfg)) {
                Ok(rep) => info!(
                    "{} done: {} bytes, BS_OPT {:?}, T {:.3} s, closed early {}",
                    rep.target, rep.bytes_forwarded, rep.bs_opt_bytes, rep.final_interval_s, rep.client_closed
                ),
                Err(e) => warn!("session failed: {e}"),
            });
        }
        Ok(())
    }
}
