//! Burst shaper: Fast Start accounting, binary search for the largest burst
//! the client absorbs, low-bandwidth fallback and quality switching.

mod playout;
mod quality;

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use log::warn;
use thiserror::Error;

pub use playout::PlayoutEstimator;
pub use quality::{propagate_bs_opt, BsOptSource, HeadroomPolicy, Quality, QualityDecision, QualityLadder, QualityPolicy};

use crate::profiler::BurstObservation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShaperError {
    #[error("invalid quality ladder: {0}")]
    Ladder(String),
    #[error("invalid stream: {0}")]
    Stream(String),
    #[error("Fast Start delivered no data")]
    EmptyFastStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub ladder: QualityLadder,
    pub duration_s: f64,
    /// Seconds of content forwarded unshaped at session start.
    pub fast_start_s: f64,
}

impl StreamSpec {
    pub fn new(ladder: QualityLadder, duration_s: f64, fast_start_s: f64) -> Result<Self, ShaperError> {
        if !(duration_s > 0.0) || !(fast_start_s > 0.0) {
            return Err(ShaperError::Stream("duration and fast start must be > 0".into()));
        }
        Ok(StreamSpec { ladder, duration_s, fast_start_s })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShaperConfig {
    /// Search stops once the gap to `T_max` is at most this.
    pub granularity_s: f64,
    /// Leave the low-bandwidth fallback once the estimate reaches this
    /// multiple of the encoding rate.
    pub recovery_factor: f64,
}

impl Default for ShaperConfig {
    fn default() -> Self {
        ShaperConfig { granularity_s: 1.0, recovery_factor: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    FastStart,
    Searching,
    Steady,
    LowBandwidth,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::FastStart => "FAST_START",
            Phase::Searching => "SEARCHING",
            Phase::Steady => "STEADY",
            Phase::LowBandwidth => "LOW_BANDWIDTH",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the optimum was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Zero window during Fast Start.
    FastStartZwa,
    /// Zero window during the search, below `T_max`.
    SearchZwa,
    /// Search reached `T_max` without a zero window.
    ReachedTMax,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::FastStartZwa => "fast_start_zwa",
            Termination::SearchZwa => "search_zwa",
            Termination::ReachedTMax => "reached_t_max",
        }
    }
}

/// What to send next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurstPlan {
    pub burst_id: u64,
    pub quality_index: usize,
    pub bitrate_bps: f64,
    pub interval_s: f64,
    /// Bytes to send; unbounded (`u64::MAX`) for continuous rounds.
    pub bytes: u64,
    /// Continuous sending for this many seconds instead of a burst.
    pub round_s: Option<f64>,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    SendBurst { interval_s: f64 },
    SetBsOpt { bytes: u64, termination: Termination },
    EnterLowBandwidth { t_old_s: f64 },
    Recover { interval_s: f64 },
    SwitchQuality { from: usize, to: usize, stall_risk: bool },
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurstLogEntry {
    pub burst_id: u64,
    pub quality_bps: f64,
    pub interval_s: f64,
    pub bytes: u64,
    pub zwa: bool,
    /// Optimal burst size after the feedback for this burst.
    pub bs_opt_bytes: Option<u64>,
    /// Phase the burst was sent in.
    pub phase: Phase,
}

pub const BURST_LOG_HEADER: &str = "burst_id,quality_bps,T_s,bytes,zwa,bs_opt_bytes,phase";

pub fn write_burst_log<W: io::Write>(entries: &[BurstLogEntry], out: W) -> io::Result<()> {
    write_log(entries, out, true)
}

/// As [`write_burst_log`] without the header, for appending.
pub fn write_burst_rows<W: io::Write>(entries: &[BurstLogEntry], out: W) -> io::Result<()> {
    write_log(entries, out, false)
}

fn write_log<W: io::Write>(entries: &[BurstLogEntry], out: W, header: bool) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        w.write_record(BURST_LOG_HEADER.split(','))?;
    }
    for e in entries {
        w.write_record([
            e.burst_id.to_string(),
            e.quality_bps.to_string(),
            format!("{:.3}", e.interval_s),
            e.bytes.to_string(),
            u8::from(e.zwa).to_string(),
            e.bs_opt_bytes.map_or(String::new(), |b| b.to_string()),
            e.phase.as_str().to_string(),
        ])?;
    }
    w.flush()
}

#[derive(Debug)]
pub struct Shaper {
    spec: StreamSpec,
    cfg: ShaperConfig,
    policy: Box<dyn QualityPolicy>,
    phase: Phase,
    t_s: f64,
    t_min_s: f64,
    t_max_s: f64,
    t_old_s: Option<f64>,
    t_max_at_low_entry: f64,
    low_sent_bytes: u64,
    bs_opt_bytes: Option<u64>,
    termination: Option<Termination>,
    quality: usize,
    per_quality_bs_opt: BTreeMap<usize, u64>,
    sent_bytes_total: u64,
    next_burst: u64,
    outstanding: Option<(u64, Phase, f64, f64)>,
    search_rounds: u32,
    log: Vec<BurstLogEntry>,
}

impl Shaper {
    pub fn new(spec: StreamSpec, cfg: ShaperConfig) -> Self {
        Self::with_policy(spec, cfg, Box::new(HeadroomPolicy::default()))
    }

    pub fn with_policy(spec: StreamSpec, cfg: ShaperConfig, policy: Box<dyn QualityPolicy>) -> Self {
        let quality = policy.initial(&spec.ladder);
        Shaper {
            spec,
            cfg,
            policy,
            phase: Phase::FastStart,
            t_s: 0.0,
            t_min_s: 0.0,
            t_max_s: 0.0,
            t_old_s: None,
            t_max_at_low_entry: 0.0,
            low_sent_bytes: 0,
            bs_opt_bytes: None,
            termination: None,
            quality,
            per_quality_bs_opt: BTreeMap::new(),
            sent_bytes_total: 0,
            next_burst: 0,
            outstanding: None,
            search_rounds: 0,
            log: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn interval_s(&self) -> f64 {
        self.t_s
    }

    pub fn t_min_s(&self) -> f64 {
        self.t_min_s
    }

    pub fn t_max_s(&self) -> f64 {
        self.t_max_s
    }

    pub fn t_old_s(&self) -> Option<f64> {
        self.t_old_s
    }

    pub fn bs_opt_bytes(&self) -> Option<u64> {
        self.bs_opt_bytes
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    pub fn quality_index(&self) -> usize {
        self.quality
    }

    pub fn bitrate_bps(&self) -> f64 {
        self.spec.ladder.rate(self.quality)
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    pub fn per_quality_bs_opt(&self) -> &BTreeMap<usize, u64> {
        &self.per_quality_bs_opt
    }

    pub fn sent_bytes_total(&self) -> u64 {
        self.sent_bytes_total
    }

    /// Feedback rounds spent in the search phase.
    pub fn search_rounds(&self) -> u32 {
        self.search_rounds
    }

    pub fn log(&self) -> &[BurstLogEntry] {
        &self.log
    }

    /// `T·r_s/8`, capped by the optimal burst size once known.
    fn burst_bytes(&self) -> u64 {
        let by_interval = (self.t_s * self.bitrate_bps() / 8.0).floor() as u64;
        match self.bs_opt_bytes {
            Some(b) => by_interval.min(b),
            None => by_interval,
        }
    }

    /// Plans the next transmission. The plan stays outstanding until its
    /// feedback arrives.
    pub fn plan(&mut self) -> BurstPlan {
        let id = self.next_burst;
        self.next_burst += 1;
        let rate = self.bitrate_bps();
        let (bytes, round_s, interval) = match self.phase {
            Phase::FastStart => ((self.spec.fast_start_s * rate / 8.0).floor() as u64, None, self.spec.fast_start_s),
            Phase::LowBandwidth => {
                let round = self.t_old_s.unwrap_or(self.t_s);
                (u64::MAX, Some(round), round)
            }
            _ => (self.burst_bytes(), None, self.t_s),
        };
        self.outstanding = Some((id, self.phase, rate, interval));
        BurstPlan { burst_id: id, quality_index: self.quality, bitrate_bps: rate, interval_s: interval, bytes, round_s, phase: self.phase }
    }

    /// Ends Fast Start after `sent_bytes` were delivered. Returns `T_max`.
    pub fn end_fast_start(&mut self, sent_bytes: u64, zwa_sent_bytes: Option<u64>) -> Result<f64, ShaperError> {
        if sent_bytes == 0 {
            return Err(ShaperError::EmptyFastStart);
        }
        let rate = self.bitrate_bps();
        self.t_max_s = sent_bytes as f64 * 8.0 / rate;
        match zwa_sent_bytes {
            Some(bs) if bs > 0 => {
                self.set_bs_opt(bs, BsOptSource::Zwa, Termination::FastStartZwa);
            }
            _ => {
                self.t_s = self.t_max_s / 2.0;
                self.t_min_s = 0.0;
                self.phase = Phase::Searching;
            }
        }
        Ok(self.t_max_s)
    }

    /// Buffered content, in seconds, at which the next burst should go out:
    /// `lead_s`, but at most half the optimal interval so a small buffer
    /// still has room for the burst.
    pub fn release_lead_s(&self, lead_s: f64) -> f64 {
        match self.bs_opt_bytes {
            Some(b) => lead_s.min(b as f64 * 8.0 / self.bitrate_bps() / 2.0),
            None => lead_s,
        }
    }

    fn set_bs_opt(&mut self, bytes: u64, source: BsOptSource, termination: Termination) {
        // a zero window right after release says more about the lead than
        // about the buffer
        let bytes = bytes.max((self.cfg.granularity_s * self.bitrate_bps() / 8.0) as u64);
        self.bs_opt_bytes = Some(bytes);
        self.termination = Some(termination);
        self.t_s = bytes as f64 * 8.0 / self.bitrate_bps();
        self.t_min_s = self.t_min_s.min(self.t_s);
        self.phase = Phase::Steady;
        self.per_quality_bs_opt = propagate_bs_opt(&self.spec.ladder, self.quality, bytes, source);
    }

    /// Applies the profiler's view of the outstanding burst.
    pub fn on_burst_feedback(&mut self, obs: &BurstObservation) -> Vec<Action> {
        let Some((id, phase, rate, interval)) = self.outstanding else {
            warn!("feedback for burst {} with nothing outstanding", obs.burst_id);
            return vec![Action::Ignored];
        };
        if obs.burst_id != id {
            warn!("stale feedback for burst {} (expecting {id})", obs.burst_id);
            return vec![Action::Ignored];
        }
        self.outstanding = None;
        self.sent_bytes_total += obs.acked_bytes;
        let mut actions = Vec::new();

        match phase {
            Phase::FastStart => {
                if self.end_fast_start(obs.acked_bytes, obs.sent_bytes_at_first_zwa).is_ok() {
                    if let Some(b) = self.bs_opt_bytes {
                        actions.push(Action::SetBsOpt { bytes: b, termination: Termination::FastStartZwa });
                    }
                }
            }
            Phase::LowBandwidth => self.low_bandwidth_round(obs, &mut actions),
            Phase::Searching | Phase::Steady => self.shaped_feedback(obs, &mut actions),
        }
        if self.phase != Phase::LowBandwidth {
            if let Some(est) = obs.est_bandwidth_bps {
                self.consider_quality(est, &mut actions);
            }
        }
        actions.push(Action::SendBurst { interval_s: self.t_s });
        self.log.push(BurstLogEntry {
            burst_id: id,
            quality_bps: rate,
            interval_s: interval,
            bytes: obs.acked_bytes,
            zwa: obs.zwa_seen,
            bs_opt_bytes: self.bs_opt_bytes,
            phase,
        });
        actions
    }

    fn shaped_feedback(&mut self, obs: &BurstObservation, actions: &mut Vec<Action>) {
        let rate = self.bitrate_bps();
        if let Some(est) = obs.est_bandwidth_bps {
            let can_downgrade = self.spec.ladder.len() > 1 && self.quality > 0;
            if est < rate && !can_downgrade {
                self.enter_low_bandwidth(actions);
                return;
            }
        }
        if self.phase == Phase::Searching {
            self.search_rounds += 1;
        }
        match obs.sent_bytes_at_first_zwa {
            Some(sent) if obs.zwa_seen && sent > 0 => {
                let termination = if self.phase == Phase::Searching { Termination::SearchZwa } else { self.termination.unwrap_or(Termination::SearchZwa) };
                self.set_bs_opt(sent, BsOptSource::Zwa, termination);
                actions.push(Action::SetBsOpt { bytes: self.bs_opt_bytes.unwrap_or(sent), termination });
            }
            _ if self.phase == Phase::Searching => {
                self.t_min_s = self.t_s;
                if self.t_max_s - self.t_s <= self.cfg.granularity_s {
                    let bytes = (self.t_max_s * rate / 8.0).floor() as u64;
                    self.set_bs_opt(bytes, BsOptSource::TMax, Termination::ReachedTMax);
                    self.t_s = self.t_max_s;
                    actions.push(Action::SetBsOpt { bytes, termination: Termination::ReachedTMax });
                } else {
                    self.t_s = (self.t_s + self.t_max_s) / 2.0;
                }
            }
            _ => {}
        }
    }

    fn enter_low_bandwidth(&mut self, actions: &mut Vec<Action>) {
        self.t_old_s = Some(self.t_s);
        self.t_max_at_low_entry = self.t_max_s;
        self.low_sent_bytes = 0;
        self.phase = Phase::LowBandwidth;
        actions.push(Action::EnterLowBandwidth { t_old_s: self.t_s });
    }

    fn low_bandwidth_round(&mut self, obs: &BurstObservation, actions: &mut Vec<Action>) {
        let rate = self.bitrate_bps();
        let recovered = obs.est_bandwidth_bps.is_some_and(|e| e >= self.cfg.recovery_factor * rate);
        if recovered {
            let t_old = self.t_old_s.take().unwrap_or(self.t_s);
            self.t_s = t_old;
            self.t_min_s = 0.0;
            self.t_max_s = self.t_max_s.max(t_old);
            self.bs_opt_bytes = None;
            self.termination = None;
            self.per_quality_bs_opt.clear();
            self.phase = Phase::Searching;
            actions.push(Action::Recover { interval_s: t_old });
        } else {
            self.low_sent_bytes += obs.acked_bytes;
            self.t_max_s = self.t_max_at_low_entry + self.low_sent_bytes as f64 * 8.0 / rate;
        }
    }

    /// Evaluates the quality policy on a bandwidth estimate.
    pub fn select_quality(&self, est_bps: f64) -> QualityDecision {
        self.policy.select(self.quality, est_bps, &self.spec.ladder)
    }

    fn consider_quality(&mut self, est: f64, actions: &mut Vec<Action>) {
        let decision = self.select_quality(est);
        if decision.index == self.quality {
            return;
        }
        let from = self.quality;
        self.quality = decision.index;
        let r_new = self.bitrate_bps();
        match self.per_quality_bs_opt.get(&decision.index).copied() {
            Some(bytes) => {
                self.bs_opt_bytes = Some(bytes);
                self.t_s = bytes as f64 * 8.0 / r_new;
                self.phase = Phase::Steady;
            }
            None => {
                // no bound known for the higher quality: search again from
                // the interval that carries the known burst size
                if let Some(b) = self.bs_opt_bytes.take() {
                    self.t_s = b as f64 * 8.0 / r_new;
                }
                self.t_s = self.t_s.min(self.t_max_s);
                self.t_min_s = self.t_min_s.min(self.t_s);
                self.termination = None;
                self.phase = Phase::Searching;
            }
        }
        actions.push(Action::SwitchQuality { from, to: decision.index, stall_risk: decision.stall_risk });
    }

    /// Reacts to a bandwidth estimate outside of burst feedback.
    pub fn on_bandwidth_change(&mut self, est_bps: f64) -> Vec<Action> {
        let mut actions = Vec::new();
        match self.phase {
            Phase::Searching | Phase::Steady => {
                if est_bps < self.bitrate_bps() {
                    self.enter_low_bandwidth(&mut actions);
                }
            }
            Phase::LowBandwidth => {
                if est_bps >= self.cfg.recovery_factor * self.bitrate_bps() {
                    let obs = BurstObservation {
                        burst_id: 0,
                        planned_bytes: 0,
                        sent_at_s: 0.0,
                        t_bd_s: 0.0,
                        acked_bytes: 0,
                        complete: true,
                        zwa_seen: false,
                        sent_bytes_at_first_zwa: None,
                        est_bandwidth_bps: Some(est_bps),
                    };
                    self.low_bandwidth_round(&obs, &mut actions);
                }
            }
            Phase::FastStart => {}
        }
        actions
    }
}
