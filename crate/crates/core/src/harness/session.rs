//! End-to-end streaming sessions on the simulated client: a shaped run
//! driven by the profiler and shaper, and a server-paced baseline.

use crate::client::{BandwidthTrace, ClientConfig, ClientSim, SendOptions, Stall};
use crate::energy::RadioProfile;
use crate::profiler::Profiler;
use crate::radio::{energy_breakdown, simulate, ActivityTrace, EnergyBreakdown, StateTrace};
use crate::shaper::{Action, BurstLogEntry, Phase, PlayoutEstimator, Shaper, ShaperConfig, StreamSpec, Termination};

use super::HarnessError;

/// Periodic cross-traffic on the radio, independent of the stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Background {
    pub period_s: f64,
    /// Offset of the first transfer.
    pub phase_s: f64,
    pub duration_s: f64,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub stream: StreamSpec,
    pub capacity_bytes: u64,
    pub startup_s: f64,
    pub link: BandwidthTrace,
    pub shaper: ShaperConfig,
    /// A burst is released once the estimated buffer is down to this.
    pub lead_s: f64,
    pub background: Option<Background>,
}

impl SessionConfig {
    pub fn new(stream: StreamSpec, capacity_bytes: u64, link: BandwidthTrace) -> Self {
        SessionConfig { stream, capacity_bytes, startup_s: 2.0, link, shaper: ShaperConfig::default(), lead_s: 5.0, background: None }
    }

    fn client(&self) -> Result<ClientSim, HarnessError> {
        let mut cfg = ClientConfig::new(self.capacity_bytes, self.stream.ladder.rate(0), self.link.clone());
        cfg.startup_threshold_s = self.startup_s;
        Ok(ClientSim::new(cfg)?)
    }
}

/// One transmission of the shaped run.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstRecord {
    pub burst_id: u64,
    pub phase: Phase,
    pub quality_bps: f64,
    pub interval_s: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub sent_bytes: u64,
    pub zwa: bool,
    pub est_bandwidth_bps: Option<f64>,
    /// Shaper state once the feedback was applied.
    pub phase_after: Phase,
    pub interval_after_s: f64,
    pub t_max_after_s: f64,
}

/// Link activity and playback outcome of one run.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    /// `(start, end, bytes)` busy intervals, ordered.
    pub busy: Vec<(f64, f64, u64)>,
    pub stalls: Vec<Stall>,
    pub fast_start_end_s: f64,
    /// End of the last transfer.
    pub last_byte_s: f64,
    pub delivered_bytes: u64,
}

impl RunOutcome {
    /// Stalls that began after Fast Start.
    pub fn stalls_after_fast_start(&self) -> usize {
        self.stalls.iter().filter(|s| s.start_s > self.fast_start_end_s).count()
    }
}

#[derive(Debug, Clone)]
pub struct ShapedRun {
    pub run: RunOutcome,
    pub bursts: Vec<BurstRecord>,
    pub log: Vec<BurstLogEntry>,
    pub actions: Vec<(f64, Action)>,
    pub t_max_s: f64,
    pub bs_opt_bytes: Option<u64>,
    pub termination: Option<Termination>,
    pub search_rounds: u32,
    pub final_interval_s: f64,
}

impl ShapedRun {
    /// First burst sent in the given phase.
    pub fn first_in_phase(&self, phase: Phase) -> Option<&BurstRecord> {
        self.bursts.iter().find(|b| b.phase == phase)
    }
}

const MAX_TRANSMISSIONS: usize = 100_000;

fn content_bytes(seconds: f64, rate_bps: f64) -> u64 {
    (seconds * rate_bps / 8.0 + 1e-6).floor() as u64
}

/// Runs the full shaping loop.
pub fn run_shaped(cfg: &SessionConfig) -> Result<ShapedRun, HarnessError> {
    let mut client = cfg.client()?;
    let mut shaper = Shaper::new(cfg.stream.clone(), cfg.shaper);
    let mut profiler = Profiler::new();
    let mut playout = PlayoutEstimator::new(cfg.startup_s);
    let mut left_s = cfg.stream.duration_s;
    let mut t = 0.0;
    let mut run = RunOutcome::default();
    let mut bursts = Vec::new();
    let mut actions = Vec::new();

    for _ in 0..MAX_TRANSMISSIONS {
        let plan = shaper.plan();
        let rate = plan.bitrate_bps;
        let left = content_bytes(left_s, rate);
        if left == 0 {
            break;
        }
        let bytes = plan.bytes.min(left);
        let mut opts = SendOptions::burst(rate);
        match plan.round_s {
            Some(round) => opts.deadline_s = Some(t + round),
            None => opts.stop_on_zwa = true,
        }
        profiler.begin_burst(bytes, t);
        let out = client.send(bytes, t, &opts)?;
        let mut prev = client.delivered_bytes() - out.sent_bytes;
        for ack in &out.acks {
            playout.record(ack.time_s, (ack.cum_ack_bytes - prev) as f64 * 8.0 / rate);
            prev = ack.cum_ack_bytes;
        }
        let obs = profiler.ingest_all(&out.acks)?.expect("burst is open");
        left_s = (left_s - out.sent_bytes as f64 * 8.0 / rate).max(0.0);
        run.busy.extend_from_slice(&out.busy);
        if plan.phase == Phase::FastStart {
            run.fast_start_end_s = out.end_s;
        }
        for a in shaper.on_burst_feedback(&obs) {
            actions.push((out.end_s, a));
        }
        bursts.push(BurstRecord {
            burst_id: plan.burst_id,
            phase: plan.phase,
            quality_bps: rate,
            interval_s: plan.interval_s,
            start_s: t,
            end_s: out.end_s,
            sent_bytes: out.sent_bytes,
            zwa: obs.zwa_seen,
            est_bandwidth_bps: obs.est_bandwidth_bps,
            phase_after: shaper.phase(),
            interval_after_s: shaper.interval_s(),
            t_max_after_s: shaper.t_max_s(),
        });
        t = if shaper.phase() == Phase::LowBandwidth {
            out.end_s
        } else {
            playout.time_for_lead(out.end_s, shaper.release_lead_s(cfg.lead_s))
        };
        if out.sent_bytes == 0 {
            // nothing fit; give playback a segment's worth of time
            t = t.max(out.end_s + client.config().segment_bytes as f64 * 8.0 / rate);
        }
    }
    finish(&mut client, &mut run);
    Ok(ShapedRun {
        run,
        bursts,
        log: shaper.log().to_vec(),
        actions,
        t_max_s: shaper.t_max_s(),
        bs_opt_bytes: shaper.bs_opt_bytes(),
        termination: shaper.termination(),
        search_rounds: shaper.search_rounds(),
        final_interval_s: shaper.interval_s(),
    })
}

/// Same Fast Start, then the remaining `total_bytes` paced at the initial
/// encoding rate.
pub fn run_baseline(cfg: &SessionConfig, total_bytes: u64) -> Result<RunOutcome, HarnessError> {
    let mut client = cfg.client()?;
    let shaper = Shaper::new(cfg.stream.clone(), cfg.shaper);
    let rate = shaper.bitrate_bps();
    let mut run = RunOutcome::default();
    let fast = content_bytes(cfg.stream.fast_start_s, rate).min(total_bytes);
    let opts = SendOptions { stop_on_zwa: true, ..SendOptions::burst(rate) };
    let out = client.send(fast, 0.0, &opts)?;
    run.busy.extend_from_slice(&out.busy);
    run.fast_start_end_s = out.end_s;
    let rest = total_bytes - out.sent_bytes;
    if rest > 0 {
        let paced = SendOptions { rate_cap_bps: rate, ..SendOptions::burst(rate) };
        let out = client.send(rest, out.end_s, &paced)?;
        run.busy.extend_from_slice(&out.busy);
    }
    finish(&mut client, &mut run);
    Ok(run)
}

fn finish(client: &mut ClientSim, run: &mut RunOutcome) {
    run.last_byte_s = run.busy.last().map_or(0.0, |b| b.1);
    run.delivered_bytes = client.delivered_bytes();
    client.end_of_stream();
    let end = client.now() + client.buffered_s() + 1.0;
    client.advance(end);
    run.stalls = client.stalls().to_vec();
}

/// Background transfers as busy intervals up to `horizon_s`.
pub fn background_intervals(bg: &Background, horizon_s: f64) -> Vec<(f64, f64, u64)> {
    let mut out = Vec::new();
    let mut s = bg.phase_s;
    while s < horizon_s && bg.period_s > 0.0 {
        out.push((s, (s + bg.duration_s).min(horizon_s), bg.bytes));
        s += bg.period_s;
    }
    out
}

/// Unions overlapping intervals; bytes add up.
pub fn merge_intervals(mut iv: Vec<(f64, f64, u64)>) -> Vec<(f64, f64, u64)> {
    iv.retain(|i| i.1 > i.0);
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64, u64)> = Vec::with_capacity(iv.len());
    for (s, e, b) in iv {
        match out.last_mut() {
            Some(last) if s <= last.1 => {
                last.1 = last.1.max(e);
                last.2 += b;
            }
            _ => out.push((s, e, b)),
        }
    }
    out
}

/// Receive-activity trace for the radio.
pub fn activity_trace(busy: &[(f64, f64, u64)], background: Option<&Background>, horizon_s: f64) -> ActivityTrace {
    let mut all = busy.to_vec();
    if let Some(bg) = background {
        all.extend(background_intervals(bg, horizon_s));
    }
    let mut trace = ActivityTrace::new(horizon_s);
    for (s, e, b) in merge_intervals(all) {
        if s < horizon_s {
            trace.push_rx(s, e.min(horizon_s), Some(b));
        }
    }
    trace
}

/// Radio states and energy for a set of busy intervals.
pub fn radio_energy(
    busy: &[(f64, f64, u64)],
    background: Option<&Background>,
    horizon_s: f64,
    profile: &RadioProfile,
) -> Result<(StateTrace, EnergyBreakdown), HarnessError> {
    let trace = activity_trace(busy, background, horizon_s);
    let states = simulate(&trace, profile)?;
    let energy = energy_breakdown(&states, profile, profile.bulk_rate_bps)?;
    Ok((states, energy))
}

/// Shaped and baseline runs with radio energy under one profile.
#[derive(Debug, Clone)]
pub struct SessionReport {
    pub shaped: ShapedRun,
    pub baseline: RunOutcome,
    pub horizon_s: f64,
    pub shaped_states: StateTrace,
    pub baseline_states: StateTrace,
    pub shaped_energy: EnergyBreakdown,
    pub baseline_energy: EnergyBreakdown,
}

impl SessionReport {
    /// `1 − shaped/baseline` on radio energy.
    pub fn savings(&self) -> f64 {
        1.0 - self.shaped_energy.total_mj() / self.baseline_energy.total_mj()
    }
}

/// Both runs of a session; the radio horizon covers the later run plus
/// the full tail.
pub fn run_session(cfg: &SessionConfig, profile: &RadioProfile) -> Result<SessionReport, HarnessError> {
    let shaped = run_shaped(cfg)?;
    let baseline = run_baseline(cfg, shaped.run.delivered_bytes)?;
    evaluate(cfg, shaped, baseline, profile)
}

/// Radio evaluation of already simulated runs.
pub fn evaluate(cfg: &SessionConfig, shaped: ShapedRun, baseline: RunOutcome, profile: &RadioProfile) -> Result<SessionReport, HarnessError> {
    let horizon_s = shaped.run.last_byte_s.max(baseline.last_byte_s) + profile.tail_length_s() + 1.0;
    let bg = cfg.background.as_ref();
    let (shaped_states, shaped_energy) = radio_energy(&shaped.run.busy, bg, horizon_s, profile)?;
    let (baseline_states, baseline_energy) = radio_energy(&baseline.busy, bg, horizon_s, profile)?;
    Ok(SessionReport { shaped, baseline, horizon_s, shaped_states, baseline_states, shaped_energy, baseline_energy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shaper::QualityLadder;

    fn audio(fast_start_s: f64, capacity: u64, link: BandwidthTrace) -> SessionConfig {
        let stream = StreamSpec::new(QualityLadder::single(128_000.0), 300.0, fast_start_s).unwrap();
        SessionConfig::new(stream, capacity, link)
    }

    #[test]
    fn search_reaches_t_max_with_large_buffer() {
        let cfg = audio(14.0, 4_000_000, BandwidthTrace::constant(2e6));
        let run = run_shaped(&cfg).unwrap();
        let probes: Vec<f64> = run.bursts.iter().filter(|b| b.phase == Phase::Searching).map(|b| b.interval_s).collect();
        assert_eq!(probes, vec![7.0, 10.5, 12.25, 13.125]);
        assert_eq!(run.termination, Some(Termination::ReachedTMax));
        assert_eq!(run.final_interval_s, 14.0);
        assert_eq!(run.run.stalls_after_fast_start(), 0);
        assert_eq!(run.run.delivered_bytes, 300 * 16_000);
    }

    #[test]
    fn steady_bursts_are_spaced_by_interval() {
        let cfg = audio(14.0, 4_000_000, BandwidthTrace::constant(2e6));
        let run = run_shaped(&cfg).unwrap();
        let steady: Vec<&BurstRecord> = run.bursts.iter().filter(|b| b.phase == Phase::Steady).collect();
        assert!(steady.len() > 5);
        for w in steady.windows(2).take(steady.len() - 2) {
            assert!((w[1].start_s - w[0].start_s - 14.0).abs() < 1e-6, "{} {}", w[0].start_s, w[1].start_s);
        }
    }

    #[test]
    fn baseline_is_paced() {
        let cfg = audio(14.0, 4_000_000, BandwidthTrace::constant(2e6));
        let base = run_baseline(&cfg, 300 * 16_000).unwrap();
        assert_eq!(base.delivered_bytes, 300 * 16_000);
        assert_eq!(base.stalls_after_fast_start(), 0);
        // one fast-start interval, then one continuous paced interval
        let merged = merge_intervals(base.busy.clone());
        assert!(merged.len() <= 2);
        assert!((base.last_byte_s - (base.fast_start_end_s + 286.0)).abs() < 0.01);
    }

    #[test]
    fn shaping_saves_radio_energy() {
        let cfg = audio(14.0, 4_000_000, BandwidthTrace::constant(2e6));
        let rep = run_session(&cfg, &RadioProfile::lte_no_drx()).unwrap();
        assert!(rep.savings() > 0.0, "{}", rep.savings());
    }

    #[test]
    fn merging() {
        let m = merge_intervals(vec![(5.0, 6.0, 1), (0.0, 2.0, 1), (1.0, 3.0, 2), (3.0, 4.0, 1), (7.0, 7.0, 9)]);
        assert_eq!(m, vec![(0.0, 4.0, 4), (5.0, 6.0, 1)]);
    }

    #[test]
    fn buffer_smaller_than_lead() {
        // 500 KB holds under 2 s at 2 Mbit/s
        let stream = StreamSpec::new(QualityLadder::single(2e6), 120.0, 8.0).unwrap();
        let cfg = SessionConfig::new(stream, 500_000, BandwidthTrace::constant(4e6));
        let run = run_shaped(&cfg).unwrap();
        assert!(run.bursts.len() < 200, "{} transmissions", run.bursts.len());
        let bs = run.bs_opt_bytes.unwrap();
        assert!((250_000..=500_000).contains(&bs), "{bs}");
        assert_eq!(run.run.stalls_after_fast_start(), 0);
    }

    #[test]
    fn release_timing_survives_a_stall() {
        // the link collapses mid-burst; afterwards bursts must not hit a
        // buffer the sender wrongly believes is empty
        let link = BandwidthTrace::new(vec![(0.0, 2e6), (40.0, 64e3), (100.0, 2e6)]).unwrap();
        let run = run_shaped(&audio(14.0, 4_000_000, link)).unwrap();
        assert!(run.run.stalls_after_fast_start() > 0);
        let late: Vec<_> = run.bursts.iter().filter(|b| b.start_s > 150.0 && b.phase == Phase::Steady).collect();
        assert!(!late.is_empty());
        assert!(late.iter().all(|b| !b.zwa));
    }
}
