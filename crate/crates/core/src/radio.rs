//! RRC state machine simulation for HSPA, LTE (with optional connected-mode
//! DRX) and Wi-Fi PSM over a packet-activity timeline.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use thiserror::Error;

use crate::energy::{FastDormancy, RadioProfile, Technology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("activity trace: {0}")]
    Trace(String),
    #[error("no signaling cost configured for {0} -> {1}")]
    MissingCost(RrcState, RrcState),
    #[error("invalid cost table: {0}")]
    CostTable(String),
    #[error(transparent)]
    Model(#[from] crate::energy::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActivityKind {
    RxStart,
    RxEnd,
    TxStart,
    TxEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityEvent {
    pub time_s: f64,
    pub kind: ActivityKind,
    pub bytes: Option<u64>,
}

/// Start/end events of radio activity over `[0, horizon_s]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivityTrace {
    pub events: Vec<ActivityEvent>,
    pub horizon_s: f64,
}

/// Merged activity interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activity {
    pub start_s: f64,
    pub end_s: f64,
    pub rx_bytes: Option<u64>,
}

impl ActivityTrace {
    pub fn new(horizon_s: f64) -> Self {
        ActivityTrace { events: Vec::new(), horizon_s }
    }

    /// Appends a reception; `bytes` is attached to the end event.
    pub fn push_rx(&mut self, start_s: f64, end_s: f64, bytes: Option<u64>) -> &mut Self {
        self.events.push(ActivityEvent { time_s: start_s, kind: ActivityKind::RxStart, bytes: None });
        self.events.push(ActivityEvent { time_s: end_s, kind: ActivityKind::RxEnd, bytes });
        self
    }

    pub fn push_tx(&mut self, start_s: f64, end_s: f64) -> &mut Self {
        self.events.push(ActivityEvent { time_s: start_s, kind: ActivityKind::TxStart, bytes: None });
        self.events.push(ActivityEvent { time_s: end_s, kind: ActivityKind::TxEnd, bytes: None });
        self
    }

    /// Bursts of `burst_s` seconds every `period_s`, starting at `first_s`,
    /// while the burst start is before `horizon_s`.
    pub fn periodic(first_s: f64, period_s: f64, burst_s: f64, bytes: Option<u64>, horizon_s: f64) -> Self {
        let mut trace = ActivityTrace::new(horizon_s);
        let mut k = 0u32;
        loop {
            let start = first_s + f64::from(k) * period_s;
            if start >= horizon_s {
                break;
            }
            trace.push_rx(start, start + burst_s, bytes);
            k += 1;
        }
        trace
    }

    /// Pairs start/end events per direction and merges overlapping
    /// intervals of either direction.
    pub fn intervals(&self) -> Result<Vec<Activity>, RadioError> {
        let mut events = self.events.clone();
        // stable: preserves push order for equal timestamps
        events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        let mut raw = Vec::new();
        let mut open_rx: Option<f64> = None;
        let mut open_tx: Option<f64> = None;
        for ev in &events {
            if !ev.time_s.is_finite() || ev.time_s < 0.0 {
                return Err(RadioError::Trace(format!("bad event time {}", ev.time_s)));
            }
            let (slot, is_start, is_rx) = match ev.kind {
                ActivityKind::RxStart => (&mut open_rx, true, true),
                ActivityKind::RxEnd => (&mut open_rx, false, true),
                ActivityKind::TxStart => (&mut open_tx, true, false),
                ActivityKind::TxEnd => (&mut open_tx, false, false),
            };
            if is_start {
                if slot.is_some() {
                    return Err(RadioError::Trace(format!("nested start at {}", ev.time_s)));
                }
                *slot = Some(ev.time_s);
            } else {
                let start = slot
                    .take()
                    .ok_or_else(|| RadioError::Trace(format!("end without start at {}", ev.time_s)))?;
                let rx_bytes = if is_rx { ev.bytes } else { Some(0) };
                raw.push(Activity { start_s: start, end_s: ev.time_s, rx_bytes });
            }
        }
        if open_rx.is_some() || open_tx.is_some() {
            return Err(RadioError::Trace("unterminated activity".into()));
        }
        raw.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        let mut merged: Vec<Activity> = Vec::with_capacity(raw.len());
        for a in raw {
            match merged.last_mut() {
                Some(last) if a.start_s <= last.end_s => {
                    last.end_s = last.end_s.max(a.end_s);
                    last.rx_bytes = match (last.rx_bytes, a.rx_bytes) {
                        (Some(x), Some(y)) => Some(x + y),
                        _ => None,
                    };
                }
                _ => merged.push(a),
            }
        }
        Ok(merged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RrcState {
    Dch,
    Fach,
    Pch,
    Idle,
    Connected,
    ConnDrxOn,
    ConnDrxOff,
}

impl RrcState {
    pub fn as_str(self) -> &'static str {
        match self {
            RrcState::Dch => "DCH",
            RrcState::Fach => "FACH",
            RrcState::Pch => "PCH",
            RrcState::Idle => "IDLE",
            RrcState::Connected => "CONNECTED",
            RrcState::ConnDrxOn => "CONN_DRX_ON",
            RrcState::ConnDrxOff => "CONN_DRX_OFF",
        }
    }

    /// RRC-level state; DRX sub-states are part of CONNECTED.
    pub fn rrc_level(self) -> RrcState {
        match self {
            RrcState::ConnDrxOn | RrcState::ConnDrxOff => RrcState::Connected,
            s => s,
        }
    }

    pub fn is_dormant(self) -> bool {
        matches!(self, RrcState::Idle | RrcState::Pch)
    }
}

impl fmt::Display for RrcState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RrcState {
    type Err = RadioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "DCH" | "CELL_DCH" => RrcState::Dch,
            "FACH" | "CELL_FACH" => RrcState::Fach,
            "PCH" | "CELL_PCH" => RrcState::Pch,
            "IDLE" => RrcState::Idle,
            "CONNECTED" => RrcState::Connected,
            "CONN_DRX_ON" => RrcState::ConnDrxOn,
            "CONN_DRX_OFF" => RrcState::ConnDrxOff,
            other => return Err(RadioError::CostTable(format!("unknown state '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub state: RrcState,
    /// Data is being received or sent.
    pub active: bool,
    pub power_mw: f64,
    /// Mean receive rate while active, when the byte count is known.
    pub rx_rate_bps: Option<f64>,
}

impl StateSegment {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    /// State before the first segment.
    pub initial: RrcState,
    pub segments: Vec<StateSegment>,
    pub technology: Technology,
}

pub const STATE_CSV_HEADER: &str = "start_s,end_s,state,power_mw";

impl StateTrace {
    pub fn horizon_s(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end_s)
    }

    /// RRC-level transitions in time order, starting from `initial`.
    pub fn transitions(&self) -> Vec<(f64, RrcState, RrcState)> {
        let mut out = Vec::new();
        let mut current = self.initial.rrc_level();
        for seg in &self.segments {
            let next = seg.state.rrc_level();
            if next != current {
                out.push((seg.start_s, current, next));
                current = next;
            }
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(STATE_CSV_HEADER.split(','))?;
        for s in &self.segments {
            w.write_record([
                s.start_s.to_string(),
                s.end_s.to_string(),
                s.state.as_str().to_string(),
                s.power_mw.to_string(),
            ])?;
        }
        w.flush()
    }

    fn push(&mut self, seg: StateSegment) {
        if seg.end_s <= seg.start_s {
            return;
        }
        if let Some(last) = self.segments.last_mut() {
            if last.state == seg.state
                && last.active == seg.active
                && last.rx_rate_bps == seg.rx_rate_bps
                && last.power_mw == seg.power_mw
                && last.end_s == seg.start_s
            {
                last.end_s = seg.end_s;
                return;
            }
        }
        self.segments.push(seg);
    }
}

/// One phase of the post-activity timeline, offsets relative to the end of
/// the last activity.
#[derive(Debug, Clone, Copy)]
struct Phase {
    start: f64,
    end: f64,
    state: RrcState,
    power: f64,
}

struct Timeline {
    phases: Vec<Phase>,
}

impl Timeline {
    fn for_profile(p: &RadioProfile) -> Self {
        let f = &p.floor;
        let mut phases = Vec::new();
        let add = |phases: &mut Vec<Phase>, len: f64, state, power| {
            let start = phases.last().map_or(0.0, |ph: &Phase| ph.end);
            phases.push(Phase { start, end: start + len, state, power });
        };
        match p.technology {
            Technology::Hspa => {
                let fd = match p.fast_dormancy {
                    FastDormancy::None => f64::INFINITY,
                    _ => p.legacy_fd_timeout_s,
                };
                let mut timed = vec![(p.t1_s, RrcState::Dch, p.p1_mw), (p.t2_s, RrcState::Fach, p.p2_mw)];
                if p.pch_enabled {
                    timed.push((p.t3_s, RrcState::Pch, f.pch_mw));
                }
                let mut elapsed = 0.0;
                let mut demoted_by_fd = false;
                for (len, state, power) in timed {
                    if elapsed + len > fd {
                        let cut = (fd - elapsed).max(0.0);
                        add(&mut phases, cut, state, power);
                        demoted_by_fd = state != RrcState::Pch;
                        break;
                    }
                    add(&mut phases, len, state, power);
                    elapsed += len;
                }
                if demoted_by_fd && p.fast_dormancy == FastDormancy::Rel8 {
                    add(&mut phases, p.t3_s, RrcState::Pch, f.pch_mw);
                }
                add(&mut phases, f64::INFINITY, RrcState::Idle, f.idle_mw);
            }
            Technology::Wifi => {
                add(&mut phases, p.t1_s, RrcState::Connected, p.p1_mw);
                add(&mut phases, f64::INFINITY, RrcState::Idle, f.idle_mw);
            }
            Technology::Lte => match p.drx {
                Some(drx) if drx.idle_s() < p.t1_s => {
                    add(&mut phases, drx.idle_s(), RrcState::Connected, p.p1_mw);
                    let mut t = drx.idle_s();
                    while t < p.t1_s {
                        let on = drx.on_s().min(p.t1_s - t);
                        add(&mut phases, on, RrcState::ConnDrxOn, p.p1_mw);
                        let off = (drx.cycle_s() - drx.on_s()).min(p.t1_s - t - on);
                        if off > 0.0 {
                            add(&mut phases, off, RrcState::ConnDrxOff, f.drx_off_mw);
                        }
                        t += drx.cycle_s();
                    }
                    add(&mut phases, f64::INFINITY, RrcState::Idle, f.idle_mw);
                }
                _ => {
                    add(&mut phases, p.t1_s, RrcState::Connected, p.p1_mw);
                    add(&mut phases, f64::INFINITY, RrcState::Idle, f.idle_mw);
                }
            },
        }
        Timeline { phases }
    }

    /// Phase in force when activity arrives `tau` seconds after the last
    /// activity ended. A timer expiring exactly at `tau` has not fired yet.
    fn phase_at(&self, tau: f64) -> &Phase {
        self.phases.iter().find(|ph| tau <= ph.end && ph.end > ph.start).unwrap_or(self.phases.last().unwrap())
    }
}

fn active_state(tech: Technology) -> RrcState {
    match tech {
        Technology::Hspa => RrcState::Dch,
        _ => RrcState::Connected,
    }
}

/// Simulates the radio state over the activity trace.
///
/// The radio starts in IDLE. A packet arriving during a DRX sleep period is
/// delivered at the start of the next on-duration; later activity is pushed
/// back so receptions never overlap.
pub fn simulate(trace: &ActivityTrace, profile: &RadioProfile) -> Result<StateTrace, RadioError> {
    profile.validate()?;
    let timeline = Timeline::for_profile(profile);
    let activities = trace.intervals()?;
    let act_state = active_state(profile.technology);
    let default_power = profile.power_rx(profile.bulk_rate_bps)?;
    let mut out = StateTrace { initial: RrcState::Idle, segments: Vec::new(), technology: profile.technology };

    // end of the last reception, None before any activity
    let mut last_end: Option<f64> = None;
    let mut now = 0.0;
    for act in activities {
        let duration = act.end_s - act.start_s;
        let mut start = act.start_s.max(now);
        if let Some(end) = last_end {
            let tau = start - end;
            let phase = timeline.phase_at(tau);
            if phase.state == RrcState::ConnDrxOff {
                start = end + phase.end;
            }
            emit_tail(&mut out, &timeline, end, start);
        } else if start > 0.0 {
            out.push(StateSegment {
                start_s: 0.0,
                end_s: start,
                state: RrcState::Idle,
                active: false,
                power_mw: profile.floor.idle_mw,
                rx_rate_bps: None,
            });
        }
        let finish = start + duration;
        let rate = match act.rx_bytes {
            Some(b) if duration > 0.0 => Some(b as f64 * 8.0 / duration),
            _ => None,
        };
        let power = match rate {
            Some(r) => profile.power_rx(r)?,
            None => default_power,
        };
        out.push(StateSegment { start_s: start, end_s: finish, state: act_state, active: true, power_mw: power, rx_rate_bps: rate });
        last_end = Some(finish);
        now = finish;
    }
    let horizon = trace.horizon_s.max(now);
    match last_end {
        Some(end) => emit_tail(&mut out, &timeline, end, horizon),
        None => out.push(StateSegment {
            start_s: 0.0,
            end_s: horizon,
            state: RrcState::Idle,
            active: false,
            power_mw: profile.floor.idle_mw,
            rx_rate_bps: None,
        }),
    }
    Ok(out)
}

fn emit_tail(out: &mut StateTrace, timeline: &Timeline, from: f64, to: f64) {
    for ph in &timeline.phases {
        let s = from + ph.start;
        if s >= to {
            break;
        }
        let e = (from + ph.end).min(to);
        out.push(StateSegment { start_s: s, end_s: e, state: ph.state, active: false, power_mw: ph.power, rx_rate_bps: None });
    }
}

/// Energy split by origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    /// Receiving or sending.
    pub active_mj: f64,
    /// Elevated-power states after activity (DCH, FACH, CONNECTED, DRX on).
    pub tail_mj: f64,
    /// IDLE, PCH and DRX sleep.
    pub floor_mj: f64,
    /// Connection re-establishment out of IDLE/PCH.
    pub promotion_mj: f64,
}

impl EnergyBreakdown {
    pub fn total_mj(&self) -> f64 {
        self.active_mj + self.tail_mj + self.floor_mj + self.promotion_mj
    }
}

/// Integrates power over the trace. Active segments without a measured
/// rate are charged at `rx_rate_bps`.
pub fn energy_breakdown(trace: &StateTrace, profile: &RadioProfile, rx_rate_bps: f64) -> Result<EnergyBreakdown, RadioError> {
    let mut b = EnergyBreakdown::default();
    for seg in &trace.segments {
        let d = seg.duration();
        if seg.active {
            let p = profile.power_rx(seg.rx_rate_bps.unwrap_or(rx_rate_bps))?;
            b.active_mj += p * d;
        } else if matches!(seg.state, RrcState::Idle | RrcState::Pch | RrcState::ConnDrxOff) {
            b.floor_mj += seg.power_mw * d;
        } else {
            b.tail_mj += seg.power_mw * d;
        }
    }
    for (_, from, _) in trace.transitions() {
        let promo = match from {
            RrcState::Idle => profile.promotion_from_idle,
            RrcState::Pch => profile.promotion_from_pch,
            _ => None,
        };
        if let Some(p) = promo {
            b.promotion_mj += p.energy_mj();
        }
    }
    Ok(b)
}

/// Total radio energy of the trace in millijoules.
pub fn energy_of(trace: &StateTrace, profile: &RadioProfile, rx_rate_bps: f64) -> Result<f64, RadioError> {
    Ok(energy_breakdown(trace, profile, rx_rate_bps)?.total_mj())
}

/// Messages exchanged per RRC transition.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalingCostTable {
    pub costs: BTreeMap<(RrcState, RrcState), u32>,
}

impl Default for SignalingCostTable {
    fn default() -> Self {
        use RrcState::*;
        let costs = [
            ((Idle, Dch), 30),
            ((Dch, Fach), 3),
            ((Fach, Dch), 5),
            ((Fach, Pch), 3),
            ((Pch, Dch), 5),
            ((Dch, Pch), 3),
            ((Dch, Idle), 4),
            ((Fach, Idle), 4),
            ((Pch, Idle), 2),
            ((Idle, Connected), 16),
            ((Connected, Idle), 3),
        ];
        SignalingCostTable { costs: costs.into_iter().collect() }
    }
}

impl SignalingCostTable {
    pub fn cost(&self, from: RrcState, to: RrcState) -> Option<u32> {
        self.costs.get(&(from, to)).copied()
    }

    /// Reconnects out of IDLE must cost more than any transition between
    /// connected states.
    pub fn validate(&self) -> Result<(), RadioError> {
        let reconnect = self.costs.iter().filter(|((from, _), _)| *from == RrcState::Idle).map(|(_, c)| *c);
        let intra = self
            .costs
            .iter()
            .filter(|((from, to), _)| *from != RrcState::Idle && *to != RrcState::Idle)
            .map(|(_, c)| *c)
            .max()
            .unwrap_or(0);
        for c in reconnect {
            if c <= intra {
                return Err(RadioError::CostTable(format!(
                    "reconnect cost {c} does not exceed intra-connected cost {intra}"
                )));
            }
        }
        Ok(())
    }

    /// Parses `from,to,cost` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, RadioError> {
        let mut costs = BTreeMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<_> = line.split(',').map(str::trim).collect();
            let [from, to, cost] = parts[..] else {
                return Err(RadioError::CostTable(format!("expected from,to,cost: '{line}'")));
            };
            if from.eq_ignore_ascii_case("from") {
                continue;
            }
            let cost = cost.parse().map_err(|_| RadioError::CostTable(format!("bad cost '{cost}'")))?;
            costs.insert((from.parse()?, to.parse()?), cost);
        }
        let table = SignalingCostTable { costs };
        table.validate()?;
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionCount {
    pub count: u64,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalingLedger {
    pub transition_counts: BTreeMap<(RrcState, RrcState), TransitionCount>,
    pub total_transitions: u64,
    pub total_messages: u64,
    pub horizon_s: f64,
}

pub const LEDGER_CSV_HEADER: &str = "from,to,count,cost,total";

impl SignalingLedger {
    pub fn messages_per_minute(&self) -> f64 {
        per_minute(self.total_messages as f64, self.horizon_s)
    }

    pub fn transitions_per_minute(&self) -> f64 {
        per_minute(self.total_transitions as f64, self.horizon_s)
    }

    pub fn count(&self, from: RrcState, to: RrcState) -> u64 {
        self.transition_counts.get(&(from, to)).map_or(0, |t| t.count)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LEDGER_CSV_HEADER.split(','))?;
        for ((from, to), t) in &self.transition_counts {
            w.write_record([
                from.as_str().to_string(),
                to.as_str().to_string(),
                t.count.to_string(),
                t.cost.to_string(),
                (t.count * u64::from(t.cost)).to_string(),
            ])?;
        }
        w.flush()
    }
}

fn per_minute(value: f64, horizon_s: f64) -> f64 {
    if horizon_s > 0.0 {
        value * 60.0 / horizon_s
    } else {
        0.0
    }
}

/// Counts RRC transitions in the trace and weights them by `costs`.
pub fn signaling_of(trace: &StateTrace, costs: &SignalingCostTable) -> Result<SignalingLedger, RadioError> {
    let mut ledger = SignalingLedger { horizon_s: trace.horizon_s(), ..Default::default() };
    for (_, from, to) in trace.transitions() {
        let cost = costs.cost(from, to).ok_or(RadioError::MissingCost(from, to))?;
        let entry = ledger.transition_counts.entry((from, to)).or_insert(TransitionCount { count: 0, cost });
        entry.count += 1;
        ledger.total_transitions += 1;
        ledger.total_messages += u64::from(cost);
    }
    Ok(ledger)
}
