use burstshape::client::{BandwidthTrace, ClientConfig, ClientSim, SendOptions};
use burstshape::energy::{avg_power, avg_power_fitting, avg_power_overflow, tail_energy, BurstScenario, RadioProfile};
use burstshape::harness::{run_shaped, SessionConfig};
use burstshape::media_http::{ContentRange, RangeUnit, ReferenceClient, SecondsSpan, StreamInfo, StreamResponse};
use burstshape::profiler::Profiler;
use burstshape::radio::{energy_breakdown, signaling_of, simulate, ActivityTrace, SignalingCostTable};
use burstshape::shaper::{Phase, QualityLadder, StreamSpec};
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

/// Two-timer profile with `p2 <= p1` and `(a - 1)·p_tail >= p1`.
fn profile() -> impl Strategy<Value = RadioProfile> {
    (0.1..20.0f64, 0.0..15.0f64, 50.0..1500.0f64, 0.0..1.0f64, 50.0..1500.0f64, 0.0..2.0f64, 0.0..1e-7f64).prop_map(
        |(t1, t2, p1, p2_share, p_tail, a_extra, k)| RadioProfile {
            name: "generated".into(),
            t1_s: t1,
            t2_s: t2,
            p1_mw: p1,
            p2_mw: p1 * p2_share,
            p_tail_mw: p_tail,
            a_coeff: 1.0 + p1 / p_tail + a_extra,
            k_coeff: k,
            promotion_from_idle: None,
            promotion_from_pch: None,
            ..RadioProfile::hspa_default()
        },
    )
}

/// Rates with `r_s < r_btc`, plus a buffer in bytes.
fn rates() -> impl Strategy<Value = (f64, f64, f64)> {
    (64e3..4e6f64, 1.5..40.0f64, 2e5..6e7f64).prop_map(|(r_s, f, b)| (r_s, r_s * f, b))
}

proptest! {
    #[test]
    fn fitting_power_non_increasing(p in profile(), (r_s, r_btc, b) in rates(), u in 0.01..1.0f64, v in 0.01..1.0f64) {
        let t_fit = b * 8.0 / r_s;
        let (t_a, t_b) = (t_fit * u.min(v), t_fit * u.max(v));
        let pa = avg_power_fitting(&BurstScenario::new(r_s, r_btc, b, t_a).unwrap(), &p).unwrap();
        let pb = avg_power_fitting(&BurstScenario::new(r_s, r_btc, b, t_b).unwrap(), &p).unwrap();
        prop_assert!(pb <= pa * (1.0 + 1e-9), "{pa} -> {pb}");
    }

    #[test]
    fn overflow_power_non_decreasing(p in profile(), (r_s, r_btc, b) in rates(), u in 1.0..20.0f64, v in 1.0..20.0f64) {
        let t_fit = b * 8.0 / r_s;
        let (t_a, t_b) = (t_fit * u.min(v), t_fit * u.max(v));
        let pa = avg_power_overflow(&BurstScenario::new(r_s, r_btc, b, t_a).unwrap(), &p).unwrap();
        let pb = avg_power_overflow(&BurstScenario::new(r_s, r_btc, b, t_b).unwrap(), &p).unwrap();
        prop_assert!(pb >= pa * (1.0 - 1e-9), "{pa} -> {pb}");
    }

    #[test]
    fn minimum_at_buffer_boundary(p in profile(), (r_s, r_btc, b) in rates(), u in 0.01..1.0f64, v in 1.0..20.0f64) {
        let t_fit = b * 8.0 / r_s;
        let at = |t: f64| avg_power(&BurstScenario::new(r_s, r_btc, b, t).unwrap(), &p).unwrap();
        let best = at(t_fit);
        prop_assert!(best <= at(t_fit * u) * (1.0 + 1e-9));
        prop_assert!(best <= at(t_fit * v) * (1.0 + 1e-9));
    }

    #[test]
    fn regimes_meet_at_boundary(p in profile(), (r_s, r_btc, b) in rates()) {
        let t = b * 8.0 / r_s;
        let below = BurstScenario::new(r_s, r_btc, b, t * (1.0 - 1e-12)).unwrap();
        let above = BurstScenario::new(r_s, r_btc, b, t * (1.0 + 1e-12)).unwrap();
        prop_assert!(close(avg_power_fitting(&below, &p).unwrap(), avg_power_overflow(&above, &p).unwrap(), 1e-9));
    }

    #[test]
    fn tail_energy_continuous(p in profile(), which in 0..2usize) {
        let edge = if which == 0 { p.t1_s } else { p.t1_s + p.t2_s };
        let eps = edge * 1e-12;
        prop_assert!(close(p.tail_energy_over(edge - eps), p.tail_energy_over(edge + eps), 1e-9));
    }

    #[test]
    fn receive_power_above_tail(p in profile(), r in 0.0..1e8f64) {
        prop_assert!(p.power_rx(r).unwrap() >= p.p_tail_mw);
    }

    #[test]
    fn lower_rate_saves_energy(which in 0..2usize, r1 in 64e3..3e6f64, f in 1.0..4.0f64, mb in 1u32..50, t in 1u32..100) {
        let p = if which == 0 { RadioProfile::wifi() } else { RadioProfile::lte_no_drx() };
        let b = f64::from(mb) * 1e6;
        let r2 = (r1 * f).min(p.bulk_rate_bps);
        let lo = avg_power(&BurstScenario::new(r1, p.bulk_rate_bps, b, f64::from(t)).unwrap(), &p).unwrap();
        let hi = avg_power(&BurstScenario::new(r2, p.bulk_rate_bps, b, f64::from(t)).unwrap(), &p).unwrap();
        prop_assert!(lo <= hi * (1.0 + 1e-9), "{lo} vs {hi}");
    }

    #[test]
    fn isolated_burst_spends_full_tail(which in 0..3usize, burst in 0.1..5.0f64, extra in 0.0..100.0f64) {
        let p = [RadioProfile::hspa_default(), RadioProfile::hspa_aggressive(), RadioProfile::hspa_no_pch()][which].clone();
        let mut trace = ActivityTrace::new(burst + p.tail_length_s() + extra);
        trace.push_rx(0.0, burst, None);
        let tail = energy_breakdown(&simulate(&trace, &p).unwrap(), &p, p.bulk_rate_bps).unwrap().tail_mj;
        prop_assert!(close(tail, p.p1_mw * p.t1_s + p.p2_mw * p.t2_s, 1e-9));
    }

    #[test]
    fn periodic_tail_matches_closed_form(which in 0..3usize, period in 0.5..60.0f64, duty in 0.01..0.6f64, n in 2u32..8) {
        let p = [RadioProfile::hspa_default(), RadioProfile::hspa_aggressive(), RadioProfile::hspa_no_pch()][which].clone();
        let t_bd = period * duty;
        let bs = 100_000.0;
        let s = BurstScenario::new(bs * 8.0 / period, bs * 8.0 / t_bd, bs * 2.0, period).unwrap();
        let mut trace = ActivityTrace::new(0.0);
        for k in 0..n {
            trace.push_rx(f64::from(k) * period, f64::from(k) * period + t_bd, None);
        }
        trace.horizon_s = f64::from(n) * period;
        let tail = energy_breakdown(&simulate(&trace, &p).unwrap(), &p, p.bulk_rate_bps).unwrap().tail_mj;
        prop_assert!(close(tail / f64::from(n), tail_energy(&s, &p).unwrap(), 1e-6));
    }

    #[test]
    fn drx_adds_no_transitions(gaps in prop::collection::vec((0.05..30.0f64, 0.01..3.0f64), 1..20)) {
        let mut trace = ActivityTrace::new(0.0);
        let mut t = 0.0;
        for (gap, len) in gaps {
            t += gap;
            trace.push_rx(t, t + len, None);
            t += len;
        }
        trace.horizon_s = t + 30.0;
        let costs = SignalingCostTable::default();
        let drx = signaling_of(&simulate(&trace, &RadioProfile::lte_drx()).unwrap(), &costs).unwrap();
        let plain = signaling_of(&simulate(&trace, &RadioProfile::lte_no_drx()).unwrap(), &costs).unwrap();
        prop_assert!(drx.total_transitions <= plain.total_transitions);
    }

    #[test]
    fn no_pch_never_signals_less(gaps in prop::collection::vec((19.0..120.0f64, 0.01..3.0f64), 1..12)) {
        let mut trace = ActivityTrace::new(0.0);
        let mut t = 0.0;
        for (gap, len) in gaps {
            t += gap;
            trace.push_rx(t, t + len, None);
            t += len;
        }
        trace.horizon_s = t + 30.0;
        let costs = SignalingCostTable::default();
        let pch = signaling_of(&simulate(&trace, &RadioProfile::hspa_default()).unwrap(), &costs).unwrap();
        let nopch = signaling_of(&simulate(&trace, &RadioProfile::hspa_no_pch()).unwrap(), &costs).unwrap();
        prop_assert!(nopch.total_messages >= pch.total_messages);
        let again = signaling_of(&simulate(&trace, &RadioProfile::hspa_default()).unwrap(), &costs).unwrap();
        prop_assert_eq!(pch, again);
    }

    #[test]
    fn ledger_totals_are_weighted_counts(period in 5.0..60.0f64, n in 1u32..10) {
        let trace = ActivityTrace::periodic(0.0, period, 1.0, None, period * f64::from(n));
        let l = signaling_of(&simulate(&trace, &RadioProfile::hspa_default()).unwrap(), &SignalingCostTable::default()).unwrap();
        let sum: u64 = l.transition_counts.values().map(|t| t.count * u64::from(t.cost)).sum();
        prop_assert_eq!(sum, l.total_messages);
    }

    #[test]
    fn client_buffer_conservation(cap in 100_000u64..4_000_000, rate in 100e3..3e6f64, link in 1e6..30e6f64,
                                  sends in prop::collection::vec((1_000u64..2_000_000, 0.0..20.0f64), 1..8)) {
        let mut c = ClientSim::new(ClientConfig::new(cap, rate, BandwidthTrace::constant(link))).unwrap();
        for (bytes, wait) in sends {
            let at = c.now() + wait;
            c.advance(at);
            let out = c.send(bytes, at, &SendOptions { stop_on_zwa: true, ..SendOptions::burst(rate) }).unwrap();
            let occ = c.occupancy_bytes();
            prop_assert!(close(c.delivered_bytes() as f64, c.consumed_bytes() + occ, 1e-9));
            prop_assert!(occ >= -1e-6 && occ <= cap as f64 + 1e-6);
            prop_assert_eq!(c.window_bytes(), (cap as f64 - occ).floor().max(0.0) as u64);
            for a in &out.acks {
                prop_assert!(a.window_bytes <= cap);
            }
            prop_assert_eq!(out.sent_at_first_zwa.is_some(), out.acks.iter().any(|a| a.is_zwa()));
        }
    }

    #[test]
    fn estimate_tracks_link(link in 1e6..50e6f64, bytes in 200_000u64..3_000_000) {
        let mut c = ClientSim::new(ClientConfig::new(20_000_000, 500e3, BandwidthTrace::constant(link))).unwrap();
        let mut prof = Profiler::new();
        prof.begin_burst(bytes, 0.0);
        let out = c.send(bytes, 0.0, &SendOptions::burst(500e3)).unwrap();
        let obs = prof.ingest_all(&out.acks).unwrap().unwrap();
        prop_assert!(!obs.zwa_seen && obs.complete);
        let est = obs.est_bandwidth_bps.unwrap();
        prop_assert!((est - link).abs() / link < 0.02, "{est} vs {link}");
    }

    #[test]
    fn correction_resumes_after_end(end in 1u64..10_000, rate in 100_000u64..8_000_000) {
        let mut client = ReferenceClient::new("/s", "h", None);
        let span = SecondsSpan { start: end.saturating_sub(10), end: Some(end) };
        let info = StreamInfo::new((end + 100) as f64, rate, span, 720, 1280);
        client.on_response(&StreamResponse::correction(&info), 0);
        prop_assert_eq!(client.request().range_start_s, end + 1);
    }

    #[test]
    fn content_range_round_trips(start in 0u64..100_000, len in 1u64..100_000, bytes in any::<bool>()) {
        let unit = if bytes { RangeUnit::Bytes } else { RangeUnit::Seconds };
        let r = ContentRange::new(unit, start, start + len - 1);
        prop_assert_eq!(r.to_string().parse::<ContentRange>().unwrap(), r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shaper_respects_limits(rate in 128e3..3e6f64, cap in 500_000u64..8_000_000, link_f in 2.0..20.0f64, fs in 8.0..60.0f64) {
        let stream = StreamSpec::new(QualityLadder::single(rate), 400.0, fs).unwrap();
        let cfg = SessionConfig::new(stream, cap, BandwidthTrace::constant((rate * link_f).max(2e6)));
        let run = run_shaped(&cfg).unwrap();
        prop_assert_eq!(run.bursts.len(), run.log.len());
        let mut bs_opt: Option<u64> = None;
        let mut last_probe = 0.0;
        for (b, entry) in run.bursts.iter().zip(&run.log) {
            match b.phase {
                Phase::FastStart => {}
                Phase::Searching => {
                    prop_assert!(b.sent_bytes as f64 <= run.t_max_s * rate / 8.0 + 1.0);
                    prop_assert!(b.interval_s > last_probe, "probes not increasing");
                    last_probe = b.interval_s;
                }
                _ => {
                    if let Some(limit) = bs_opt {
                        prop_assert!(b.sent_bytes <= limit, "{} > {limit}", b.sent_bytes);
                    }
                }
            }
            bs_opt = entry.bs_opt_bytes;
        }
        prop_assert!(run.search_rounds <= (run.t_max_s).log2().ceil() as u32);
        prop_assert_eq!(run.run.stalls_after_fast_start(), 0);
    }
}
