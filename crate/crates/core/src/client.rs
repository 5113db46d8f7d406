//! Deterministic streaming client: a finite combined player/receive buffer
//! drained at the content bitrate, advertised-window flow control and
//! stall detection.

use std::collections::VecDeque;
use std::io;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("delivery at {start_s} s is before the client clock {now_s} s")]
    Ordering { start_s: f64, now_s: f64 },
    #[error("link has no capacity after {0} s")]
    DeadLink(f64),
    #[error("invalid bandwidth trace: {0}")]
    Trace(String),
    #[error("invalid client config: {0}")]
    Config(String),
}

/// Piecewise-constant link capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    /// `(time_s, bps)` change points; the first rate also applies before
    /// its time.
    points: Vec<(f64, f64)>,
}

impl BandwidthTrace {
    pub fn constant(bps: f64) -> Self {
        BandwidthTrace { points: vec![(0.0, bps)] }
    }

    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, ClientError> {
        if points.is_empty() {
            return Err(ClientError::Trace("no points".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(ClientError::Trace(format!("times not increasing at {}", w[1].0)));
            }
        }
        if points.iter().any(|&(t, r)| !(r >= 0.0) || !t.is_finite() || !r.is_finite()) {
            return Err(ClientError::Trace("rates must be finite and >= 0".into()));
        }
        Ok(BandwidthTrace { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn index_at(&self, t: f64) -> usize {
        self.points.partition_point(|&(pt, _)| pt <= t).saturating_sub(1)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        self.points[self.index_at(t)].1
    }

    fn next_change(&self, idx: usize) -> f64 {
        self.points.get(idx + 1).map_or(f64::INFINITY, |p| p.0)
    }

    /// Time at which `bytes` sent from `t0` at `min(cap, link)` finish.
    pub fn transfer_end(&self, t0: f64, bytes: f64, cap_bps: f64) -> Result<f64, ClientError> {
        let mut bits = bytes * 8.0;
        let mut t = t0;
        let mut idx = self.index_at(t0);
        loop {
            let rate = self.points[idx].1.min(cap_bps);
            let next = self.next_change(idx);
            if rate > 0.0 {
                let end = t + bits / rate;
                if end <= next {
                    return Ok(end);
                }
                bits -= rate * (next - t);
            } else if next.is_infinite() {
                return Err(ClientError::DeadLink(t));
            }
            t = next;
            idx += 1;
        }
    }

    /// Bits transferable over `[t0, t1]` at `min(cap, link)`.
    pub fn bits_between(&self, t0: f64, t1: f64, cap_bps: f64) -> f64 {
        let mut bits = 0.0;
        let mut t = t0;
        let mut idx = self.index_at(t0);
        while t < t1 {
            let next = self.next_change(idx).min(t1);
            bits += self.points[idx].1.min(cap_bps) * (next - t);
            t = next;
            idx += 1;
        }
        bits
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    /// Combined playback and TCP receive buffer.
    pub capacity_bytes: u64,
    /// Default content bitrate for [`ClientSim::deliver`].
    pub drain_rate_bps: f64,
    /// Content buffered before playback starts or resumes.
    pub startup_threshold_s: f64,
    pub segment_bytes: u64,
    pub link: BandwidthTrace,
}

impl ClientConfig {
    pub fn new(capacity_bytes: u64, drain_rate_bps: f64, link: BandwidthTrace) -> Self {
        ClientConfig { capacity_bytes, drain_rate_bps, startup_threshold_s: 2.0, segment_bytes: 1460, link }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckEvent {
    pub time_s: f64,
    pub cum_ack_bytes: u64,
    pub window_bytes: u64,
}

impl AckEvent {
    pub fn is_zwa(&self) -> bool {
        self.window_bytes == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stall {
    pub start_s: f64,
    /// `None` while the stall is ongoing.
    pub end_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Playback {
    /// Waiting for the startup threshold.
    Waiting,
    Playing,
    Stalled,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClientEvent {
    PlaybackStarted(f64),
    StallStarted(f64),
    StallEnded(f64),
    Finished(f64),
}

/// How a [`ClientSim::send`] call behaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SendOptions {
    /// Sender-side pacing; `INFINITY` sends at link rate.
    pub rate_cap_bps: f64,
    /// Stop at the first zero-window ACK instead of trickling the rest.
    pub stop_on_zwa: bool,
    /// Stop sending at this time; a partial last segment is cut to what the
    /// link carries before it.
    pub deadline_s: Option<f64>,
    /// Bitrate of the content carried by these bytes.
    pub content_rate_bps: f64,
}

impl SendOptions {
    pub fn burst(content_rate_bps: f64) -> Self {
        SendOptions { rate_cap_bps: f64::INFINITY, stop_on_zwa: false, deadline_s: None, content_rate_bps }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SendOutcome {
    pub acks: Vec<AckEvent>,
    pub sent_bytes: u64,
    /// Bytes of this send delivered when the first zero window was seen.
    pub sent_at_first_zwa: Option<u64>,
    pub start_s: f64,
    pub end_s: f64,
    /// Maximal intervals the link was busy, with the bytes carried.
    pub busy: Vec<(f64, f64, u64)>,
}

#[derive(Debug, Clone, Copy)]
struct Chunk {
    bytes: f64,
    rate_bps: f64,
}

#[derive(Debug, Clone)]
pub struct ClientSim {
    cfg: ClientConfig,
    now: f64,
    delivered: u64,
    consumed: f64,
    queue: VecDeque<Chunk>,
    state: Playback,
    end_of_stream: bool,
    stalls: Vec<Stall>,
    events: Vec<ClientEvent>,
    played_s: f64,
}

impl ClientSim {
    pub fn new(cfg: ClientConfig) -> Result<Self, ClientError> {
        if cfg.capacity_bytes == 0 || cfg.segment_bytes == 0 {
            return Err(ClientError::Config("capacity and segment size must be > 0".into()));
        }
        if !(cfg.drain_rate_bps > 0.0) || !(cfg.startup_threshold_s >= 0.0) {
            return Err(ClientError::Config("drain rate must be > 0 and startup threshold >= 0".into()));
        }
        Ok(ClientSim {
            cfg,
            now: 0.0,
            delivered: 0,
            consumed: 0.0,
            queue: VecDeque::new(),
            state: Playback::Waiting,
            end_of_stream: false,
            stalls: Vec::new(),
            events: Vec::new(),
            played_s: 0.0,
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn delivered_bytes(&self) -> u64 {
        self.delivered
    }

    pub fn consumed_bytes(&self) -> f64 {
        self.consumed
    }

    pub fn occupancy_bytes(&self) -> f64 {
        self.delivered as f64 - self.consumed
    }

    /// Free space rounded down to whole bytes.
    pub fn window_bytes(&self) -> u64 {
        (self.cfg.capacity_bytes as f64 - self.occupancy_bytes()).floor().max(0.0) as u64
    }

    /// Seconds of content in the buffer.
    pub fn buffered_s(&self) -> f64 {
        self.queue.iter().map(|c| c.bytes * 8.0 / c.rate_bps).sum()
    }

    pub fn playback(&self) -> Playback {
        self.state
    }

    pub fn playback_position_s(&self) -> f64 {
        self.played_s
    }

    pub fn stalls(&self) -> &[Stall] {
        &self.stalls
    }

    pub fn events(&self) -> &[ClientEvent] {
        &self.events
    }

    /// Marks that no more content will arrive; draining the buffer then
    /// finishes playback instead of stalling.
    pub fn end_of_stream(&mut self) {
        self.end_of_stream = true;
        if self.queue.is_empty() && self.state != Playback::Finished {
            self.finish_or_stall();
        } else if self.state != Playback::Playing && self.state != Playback::Finished {
            self.start_playing();
        }
    }

    /// Plays content up to `to_s`.
    pub fn advance(&mut self, to_s: f64) -> &[ClientEvent] {
        let first_new = self.events.len();
        while self.now < to_s {
            if self.state != Playback::Playing {
                self.now = to_s;
                break;
            }
            let Some(head) = self.queue.front_mut() else {
                self.finish_or_stall();
                continue;
            };
            let head_time = head.bytes * 8.0 / head.rate_bps;
            let dt = to_s - self.now;
            if head_time <= dt {
                self.now += head_time;
                self.consumed += head.bytes;
                self.played_s += head_time;
                self.queue.pop_front();
                if self.queue.is_empty() {
                    self.finish_or_stall();
                }
            } else {
                let bytes = dt * head.rate_bps / 8.0;
                head.bytes -= bytes;
                self.consumed += bytes;
                self.played_s += dt;
                self.now = to_s;
            }
        }
        // guard against float residue in the consumed counter
        if self.queue.is_empty() {
            self.consumed = self.delivered as f64;
        }
        &self.events[first_new..]
    }

    fn finish_or_stall(&mut self) {
        if self.end_of_stream {
            self.state = Playback::Finished;
            self.events.push(ClientEvent::Finished(self.now));
        } else if self.state == Playback::Playing {
            self.state = Playback::Stalled;
            self.stalls.push(Stall { start_s: self.now, end_s: None });
            self.events.push(ClientEvent::StallStarted(self.now));
        }
    }

    fn start_playing(&mut self) {
        match self.state {
            Playback::Waiting => self.events.push(ClientEvent::PlaybackStarted(self.now)),
            Playback::Stalled => {
                if let Some(s) = self.stalls.last_mut() {
                    s.end_s = Some(self.now);
                }
                self.events.push(ClientEvent::StallEnded(self.now));
            }
            _ => {}
        }
        self.state = Playback::Playing;
    }

    fn receive(&mut self, bytes: u64, rate_bps: f64) {
        self.delivered += bytes;
        match self.queue.back_mut() {
            Some(last) if last.rate_bps == rate_bps => last.bytes += bytes as f64,
            _ => self.queue.push_back(Chunk { bytes: bytes as f64, rate_bps }),
        }
        if matches!(self.state, Playback::Waiting | Playback::Stalled)
            && (self.buffered_s() >= self.cfg.startup_threshold_s || self.window_bytes() < self.cfg.segment_bytes)
        {
            self.start_playing();
        }
    }

    /// Playback time until the window reaches `need` bytes.
    fn time_until_window(&self, need: u64) -> Option<f64> {
        if self.state != Playback::Playing {
            return None;
        }
        let mut to_free = need as f64 - (self.cfg.capacity_bytes as f64 - self.occupancy_bytes());
        let mut t = 0.0;
        for c in &self.queue {
            if to_free <= 0.0 {
                break;
            }
            let take = to_free.min(c.bytes);
            t += take * 8.0 / c.rate_bps;
            to_free -= take;
        }
        // one extra byte of margin for the floor in window_bytes
        Some(t + 8.0 / self.queue.front().map_or(1.0, |c| c.rate_bps))
    }

    /// Sends `bytes` starting at `start_s` under flow control.
    pub fn send(&mut self, bytes: u64, start_s: f64, opts: &SendOptions) -> Result<SendOutcome, ClientError> {
        if start_s < self.now - 1e-9 {
            return Err(ClientError::Ordering { start_s, now_s: self.now });
        }
        self.advance(start_s);
        let mut out = SendOutcome { start_s, end_s: start_s, ..Default::default() };
        let mut t = start_s;
        let mut remaining = bytes;
        let deadline = opts.deadline_s.unwrap_or(f64::INFINITY);
        while remaining > 0 && t < deadline {
            let need = remaining.min(self.cfg.segment_bytes);
            let window = self.window_bytes();
            if window == 0 {
                if out.acks.is_empty() {
                    out.acks.push(AckEvent { time_s: t, cum_ack_bytes: self.delivered, window_bytes: 0 });
                    out.sent_at_first_zwa.get_or_insert(0);
                }
                if opts.stop_on_zwa {
                    break;
                }
                let Some(wait) = self.time_until_window(need) else { break };
                t = (t + wait).min(deadline);
                self.advance(t);
                continue;
            }
            let mut size = need.min(window);
            let mut end = self.cfg.link.transfer_end(t, size as f64, opts.rate_cap_bps)?;
            if end > deadline {
                size = (self.cfg.link.bits_between(t, deadline, opts.rate_cap_bps) / 8.0).floor() as u64;
                end = deadline;
                if size == 0 {
                    t = deadline;
                    break;
                }
            }
            self.advance(end);
            self.receive(size, opts.content_rate_bps);
            remaining -= size;
            out.sent_bytes += size;
            let ack = AckEvent { time_s: end, cum_ack_bytes: self.delivered, window_bytes: self.window_bytes() };
            out.acks.push(ack);
            match out.busy.last_mut() {
                Some(b) if b.1 == t => {
                    b.1 = end;
                    b.2 += size;
                }
                _ => out.busy.push((t, end, size)),
            }
            t = end;
            if ack.is_zwa() {
                out.sent_at_first_zwa.get_or_insert(out.sent_bytes);
                if opts.stop_on_zwa {
                    break;
                }
            }
        }
        out.end_s = t;
        self.advance(t);
        Ok(out)
    }

    /// Delivers `bytes` of default-rate content at `min(at_rate, link)`;
    /// bytes that do not fit trickle in as playback frees space.
    pub fn deliver(&mut self, bytes: u64, at_rate_bps: f64, start_s: f64) -> Result<Vec<AckEvent>, ClientError> {
        let opts = SendOptions { rate_cap_bps: at_rate_bps, ..SendOptions::burst(self.cfg.drain_rate_bps) };
        Ok(self.send(bytes, start_s, &opts)?.acks)
    }

    /// As [`ClientSim::deliver`] but stops at the first zero window.
    pub fn deliver_until_zwa(&mut self, bytes: u64, at_rate_bps: f64, start_s: f64) -> Result<SendOutcome, ClientError> {
        let opts = SendOptions { rate_cap_bps: at_rate_bps, stop_on_zwa: true, ..SendOptions::burst(self.cfg.drain_rate_bps) };
        self.send(bytes, start_s, &opts)
    }

    /// Stall intervals after `after_s`.
    pub fn stalls_after(&self, after_s: f64) -> impl Iterator<Item = &Stall> {
        self.stalls.iter().filter(move |s| s.start_s > after_s)
    }

    pub fn write_stall_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["start_s", "end_s"])?;
        for s in &self.stalls {
            w.write_record([s.start_s.to_string(), s.end_s.map_or(String::new(), |e| e.to_string())])?;
        }
        w.flush()
    }
}
