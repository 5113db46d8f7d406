//! Per-profile energy and signaling for one workload.

use std::io;

use serde::Deserialize;

use crate::energy::RadioProfile;
use crate::radio::{energy_breakdown, signaling_of, simulate, ActivityTrace, EnergyBreakdown, SignalingCostTable, SignalingLedger};

use super::session::{evaluate, run_baseline, run_shaped, SessionConfig};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigRow {
    pub profile: String,
    pub technology: &'static str,
    pub energy: EnergyBreakdown,
    /// Paced delivery of the same bytes, for session workloads.
    pub baseline_mj: Option<f64>,
    pub ledger: SignalingLedger,
    pub baseline_ledger: Option<SignalingLedger>,
}

impl ConfigRow {
    pub fn savings(&self) -> Option<f64> {
        self.baseline_mj.map(|b| 1.0 - self.energy.total_mj() / b)
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Energy => self.energy.total_mj(),
            Metric::Messages => self.ledger.messages_per_minute(),
            Metric::Transitions => self.ledger.transitions_per_minute(),
        }
    }
}

pub const COMPARE_CSV_HEADER: &str =
    "profile,technology,energy_mj,active_mj,tail_mj,floor_mj,promotion_mj,baseline_mj,savings,transitions_per_min,messages_per_min";

fn ensure_two(profiles: &[RadioProfile]) -> Result<(), HarnessError> {
    if profiles.len() < 2 {
        return Err(HarnessError::Scenario("comparison needs at least two profiles".into()));
    }
    Ok(())
}

/// Evaluates a fixed activity trace under each profile.
pub fn compare_trace(trace: &ActivityTrace, profiles: &[RadioProfile], costs: &SignalingCostTable) -> Result<Vec<ConfigRow>, HarnessError> {
    ensure_two(profiles)?;
    profiles
        .iter()
        .map(|p| {
            let states = simulate(trace, p)?;
            Ok(ConfigRow {
                profile: p.name.clone(),
                technology: p.technology.as_str(),
                energy: energy_breakdown(&states, p, p.bulk_rate_bps)?,
                baseline_mj: None,
                ledger: signaling_of(&states, costs)?,
                baseline_ledger: None,
            })
        })
        .collect()
}

/// Runs the session once and evaluates both runs under each profile.
pub fn compare_configs(cfg: &SessionConfig, profiles: &[RadioProfile], costs: &SignalingCostTable) -> Result<Vec<ConfigRow>, HarnessError> {
    ensure_two(profiles)?;
    let shaped = run_shaped(cfg)?;
    let baseline = run_baseline(cfg, shaped.run.delivered_bytes)?;
    profiles
        .iter()
        .map(|p| {
            let rep = evaluate(cfg, shaped.clone(), baseline.clone(), p)?;
            Ok(ConfigRow {
                profile: p.name.clone(),
                technology: p.technology.as_str(),
                energy: rep.shaped_energy,
                baseline_mj: Some(rep.baseline_energy.total_mj()),
                ledger: signaling_of(&rep.shaped_states, costs)?,
                baseline_ledger: Some(signaling_of(&rep.baseline_states, costs)?),
            })
        })
        .collect()
}

pub fn write_compare_csv<W: io::Write>(rows: &[ConfigRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARE_CSV_HEADER.split(','))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for r in rows {
        w.write_record([
            r.profile.clone(),
            r.technology.to_string(),
            format!("{:.3}", r.energy.total_mj()),
            format!("{:.3}", r.energy.active_mj),
            format!("{:.3}", r.energy.tail_mj),
            format!("{:.3}", r.energy.floor_mj),
            format!("{:.3}", r.energy.promotion_mj),
            r.baseline_mj.map_or(String::new(), |b| format!("{b:.3}")),
            opt(r.savings()),
            format!("{:.6}", r.ledger.transitions_per_minute()),
            format!("{:.6}", r.ledger.messages_per_minute()),
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Energy,
    Messages,
    Transitions,
}

/// `lower` must score strictly below `higher` on `metric`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub metric: Metric,
    pub lower: String,
    pub higher: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationResult {
    pub expectation: Expectation,
    pub lower_value: Option<f64>,
    pub higher_value: Option<f64>,
    pub holds: bool,
}

impl std::fmt::Display for ExpectationResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let e = &self.expectation;
        let v = |x: Option<f64>| x.map_or("missing".to_string(), |v| format!("{v:.3}"));
        write!(
            f,
            "{} {:?}: {} ({}) < {} ({})",
            if self.holds { "ok" } else { "FAILED" },
            e.metric,
            e.lower,
            v(self.lower_value),
            e.higher,
            v(self.higher_value)
        )
    }
}

pub fn check_expectations(rows: &[ConfigRow], expectations: &[Expectation]) -> Vec<ExpectationResult> {
    expectations
        .iter()
        .map(|e| {
            let find = |name: &str| rows.iter().find(|r| r.profile == name).map(|r| r.metric(e.metric));
            let (lo, hi) = (find(&e.lower), find(&e.higher));
            ExpectationResult { expectation: e.clone(), lower_value: lo, higher_value: hi, holds: matches!((lo, hi), (Some(a), Some(b)) if a < b) }
        })
        .collect()
}
