//! Traffic profiler: turns the ACK stream of each burst into a burst
//! observation (duration, zero-window detection, bandwidth).

use log::debug;
use thiserror::Error;

use crate::client::AckEvent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfilerError {
    #[error("cumulative ACK went backwards: {previous} -> {got}")]
    AckRegression { previous: u64, got: u64 },
    #[error("ACK at {0} s arrived before any burst was announced")]
    NoBurst(f64),
    #[error("zero burst duration")]
    ZeroDuration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurstObservation {
    pub burst_id: u64,
    /// Bytes the shaper planned for this burst.
    pub planned_bytes: u64,
    pub sent_at_s: f64,
    /// First to last ACK.
    pub t_bd_s: f64,
    pub acked_bytes: u64,
    pub complete: bool,
    pub zwa_seen: bool,
    /// Bytes of this burst acknowledged when the first zero window arrived.
    pub sent_bytes_at_first_zwa: Option<u64>,
    /// Bandwidth over the span before the first zero window.
    pub est_bandwidth_bps: Option<f64>,
}

#[derive(Debug, Clone)]
struct OpenBurst {
    id: u64,
    base: u64,
    size: u64,
    sent_at: f64,
    first: Option<(f64, u64)>,
    last: Option<(f64, u64)>,
    /// Last ACK before (or at) the first zero window.
    pre_zwa_last: Option<(f64, u64)>,
    zwa_at: Option<u64>,
}

/// ACK-driven burst profiler. Bursts are never pipelined, so every ACK
/// belongs to the most recently announced burst.
#[derive(Debug, Clone, Default)]
pub struct Profiler {
    next_id: u64,
    cum_ack: u64,
    current: Option<OpenBurst>,
}

impl Profiler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts a burst of `size` bytes; its first byte follows the highest
    /// acknowledged byte so far.
    pub fn begin_burst(&mut self, size: u64, sent_at_s: f64) -> u64 {
        if let Some(open) = &self.current {
            if open.last.map_or(0, |l| l.1) < open.base + open.size {
                debug!("burst {} closed at {} of {} bytes", open.id, open.last.map_or(0, |l| l.1) - open.base, open.size);
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        self.current = Some(OpenBurst {
            id,
            base: self.cum_ack,
            size,
            sent_at: sent_at_s,
            first: None,
            last: None,
            pre_zwa_last: None,
            zwa_at: None,
        });
        id
    }

    pub fn ingest(&mut self, ack: &AckEvent) -> Result<BurstObservation, ProfilerError> {
        if ack.cum_ack_bytes < self.cum_ack {
            return Err(ProfilerError::AckRegression { previous: self.cum_ack, got: ack.cum_ack_bytes });
        }
        let open = self.current.as_mut().ok_or(ProfilerError::NoBurst(ack.time_s))?;
        self.cum_ack = ack.cum_ack_bytes;
        let acked = ack.cum_ack_bytes - open.base;
        let point = (ack.time_s, acked);
        if acked > 0 && open.first.is_none() {
            open.first = Some(point);
        }
        if acked > 0 || open.last.is_some() {
            open.last = Some(point);
        }
        if open.zwa_at.is_none() {
            if acked > 0 {
                open.pre_zwa_last = Some(point);
            }
            if ack.window_bytes == 0 {
                open.zwa_at = Some(acked);
            }
        }
        Ok(Self::snapshot(open))
    }

    pub fn ingest_all<'a>(&mut self, acks: impl IntoIterator<Item = &'a AckEvent>) -> Result<Option<BurstObservation>, ProfilerError> {
        let mut obs = None;
        for a in acks {
            obs = Some(self.ingest(a)?);
        }
        Ok(obs.or_else(|| self.observation()))
    }

    /// Current state of the open burst.
    pub fn observation(&self) -> Option<BurstObservation> {
        self.current.as_ref().map(Self::snapshot)
    }

    fn snapshot(open: &OpenBurst) -> BurstObservation {
        let acked = open.last.map_or(0, |l| l.1);
        let t_bd = match (open.first, open.last) {
            (Some(f), Some(l)) => l.0 - f.0,
            _ => 0.0,
        };
        let est = match (open.first, open.pre_zwa_last) {
            (Some(f), Some(l)) => estimate_bandwidth(l.1 - f.1, l.0 - f.0).ok(),
            _ => None,
        };
        BurstObservation {
            burst_id: open.id,
            planned_bytes: open.size,
            sent_at_s: open.sent_at,
            t_bd_s: t_bd,
            acked_bytes: acked,
            complete: acked >= open.size,
            zwa_seen: open.zwa_at.is_some(),
            sent_bytes_at_first_zwa: open.zwa_at,
            est_bandwidth_bps: est,
        }
    }
}

/// `bytes·8 / t_bd`.
pub fn estimate_bandwidth(bytes: u64, t_bd_s: f64) -> Result<f64, ProfilerError> {
    if !(t_bd_s > 0.0) {
        return Err(ProfilerError::ZeroDuration);
    }
    Ok(bytes as f64 * 8.0 / t_bd_s)
}
