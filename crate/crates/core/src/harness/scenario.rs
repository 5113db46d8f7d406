//! TOML scenario files and the single-scenario runner.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::client::{BandwidthTrace, Stall};
use crate::energy::RadioProfile;
use crate::radio::{energy_breakdown, signaling_of, simulate, ActivityTrace, EnergyBreakdown, SignalingCostTable, SignalingLedger, StateTrace};
use crate::shaper::{write_burst_log, QualityLadder, ShaperConfig, StreamSpec};

use super::compare::{compare_configs, compare_trace, ConfigRow, Expectation};
use super::session::{run_session, Background, SessionConfig, SessionReport};
use super::HarnessError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    profile: String,
    #[serde(default)]
    compare: Vec<String>,
    stream: Option<StreamSection>,
    client: Option<ClientSection>,
    link: Option<LinkSection>,
    #[serde(default)]
    shaper: ShaperSection,
    background: Option<BackgroundSection>,
    schedule: Option<ScheduleSection>,
    signaling_costs: Option<PathBuf>,
    #[serde(default)]
    output: OutputPaths,
    #[serde(default)]
    expect: Vec<Expectation>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamSection {
    bitrates_bps: Vec<f64>,
    duration_s: f64,
    fast_start_s: f64,
    session_s: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientSection {
    buffer_bytes: u64,
    startup_s: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSection {
    rate_bps: Option<f64>,
    trace: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShaperSection {
    granularity_s: Option<f64>,
    recovery_factor: Option<f64>,
    lead_s: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackgroundSection {
    period_s: f64,
    bytes: u64,
    #[serde(default)]
    phase_s: f64,
    duration_s: Option<f64>,
}

/// Fixed periodic bursts instead of a simulated session.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub period_s: f64,
    pub burst_s: f64,
    pub bytes: Option<u64>,
    #[serde(default)]
    pub first_s: f64,
    pub horizon_s: f64,
}

type ScheduleSection = Schedule;

/// Optional CSV destinations.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub summary: Option<PathBuf>,
    pub burst_log: Option<PathBuf>,
    pub stalls: Option<PathBuf>,
    pub states: Option<PathBuf>,
    pub ledger: Option<PathBuf>,
}

impl OutputPaths {
    /// Every output under `dir` with default file names.
    pub fn in_dir(dir: &Path) -> Self {
        OutputPaths {
            summary: Some(dir.join("summary.csv")),
            burst_log: Some(dir.join("bursts.csv")),
            stalls: Some(dir.join("stalls.csv")),
            states: Some(dir.join("states.csv")),
            ledger: Some(dir.join("signaling.csv")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Workload {
    Session(SessionConfig),
    Schedule(Schedule),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub profile: RadioProfile,
    /// Further profiles for comparisons.
    pub compare: Vec<RadioProfile>,
    pub workload: Workload,
    pub costs: SignalingCostTable,
    pub output: OutputPaths,
    pub expect: Vec<Expectation>,
}

/// A built-in profile name or a profile file, relative to `base`.
pub fn resolve_profile(name: &str, base: &Path) -> Result<RadioProfile, HarnessError> {
    if let Some(p) = RadioProfile::builtin(name) {
        return Ok(p);
    }
    let path = base.join(name);
    let text = fs::read_to_string(&path).map_err(|e| {
        HarnessError::Scenario(format!("profile '{name}' is neither built in ({}) nor readable at {}: {e}", RadioProfile::builtin_names().join(", "), path.display()))
    })?;
    Ok(RadioProfile::from_toml_str(&text)?)
}

/// Drops change points made obsolete by a later one at the same time.
fn link_trace(points: Vec<(f64, f64)>) -> Result<BandwidthTrace, HarnessError> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for p in points {
        match out.last_mut() {
            Some(last) if last.0 == p.0 => *last = p,
            Some(last) if p.0 < last.0 => return Err(HarnessError::Scenario(format!("link trace times go backwards at {}", p.0))),
            _ => out.push(p),
        }
    }
    Ok(BandwidthTrace::new(out)?)
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses scenario text; profile and cost-table paths are relative to
    /// `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, HarnessError> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        let missing = |what: &str| HarnessError::Scenario(format!("{what} section required without [schedule]"));
        let profile = resolve_profile(&f.profile, base)?;
        let compare = f.compare.iter().map(|n| resolve_profile(n, base)).collect::<Result<Vec<_>, _>>()?;
        let costs = match &f.signaling_costs {
            Some(p) => SignalingCostTable::parse(&fs::read_to_string(base.join(p))?)?,
            None => SignalingCostTable::default(),
        };
        let workload = match f.schedule {
            Some(s) => {
                if !(s.period_s > 0.0 && s.burst_s > 0.0 && s.burst_s < s.period_s && s.horizon_s > s.first_s) {
                    return Err(HarnessError::Scenario("schedule needs 0 < burst_s < period_s and horizon_s > first_s".into()));
                }
                Workload::Schedule(s)
            }
            None => {
                let st = f.stream.ok_or_else(|| missing("[stream]"))?;
                let client = f.client.ok_or_else(|| missing("[client]"))?;
                let link = f.link.ok_or_else(|| missing("[link]"))?;
                let length = match st.session_s {
                    Some(s) if s > st.duration_s => {
                        return Err(HarnessError::Scenario(format!("session_s {s} exceeds stream duration {}", st.duration_s)));
                    }
                    Some(s) => s,
                    None => st.duration_s,
                };
                let ladder = QualityLadder::from_rates(&st.bitrates_bps)?;
                let stream = StreamSpec::new(ladder, length, st.fast_start_s)?;
                let trace = match (link.rate_bps, link.trace) {
                    (_, Some(points)) => link_trace(points)?,
                    (Some(r), None) => BandwidthTrace::constant(r),
                    (None, None) => return Err(HarnessError::Scenario("[link] needs rate_bps or trace".into())),
                };
                let mut cfg = SessionConfig::new(stream, client.buffer_bytes, trace);
                let defaults = ShaperConfig::default();
                cfg.shaper = ShaperConfig {
                    granularity_s: f.shaper.granularity_s.unwrap_or(defaults.granularity_s),
                    recovery_factor: f.shaper.recovery_factor.unwrap_or(defaults.recovery_factor),
                };
                if let Some(l) = f.shaper.lead_s {
                    cfg.lead_s = l;
                }
                if let Some(s) = client.startup_s {
                    cfg.startup_s = s;
                }
                cfg.background = f.background.map(|b| Background {
                    period_s: b.period_s,
                    phase_s: b.phase_s,
                    duration_s: b.duration_s.unwrap_or_else(|| (b.bytes as f64 * 8.0 / profile.bulk_rate_bps).max(0.01)),
                    bytes: b.bytes,
                });
                Workload::Session(cfg)
            }
        };
        Ok(Scenario { name: f.name, profile, compare, workload, costs, output: f.output, expect: f.expect })
    }

    /// The workload as a fixed activity trace, for schedules.
    pub fn schedule_trace(s: &Schedule) -> ActivityTrace {
        ActivityTrace::periodic(s.first_s, s.period_s, s.burst_s, s.bytes, s.horizon_s)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub profile: String,
    pub session: Option<SessionReport>,
    pub states: StateTrace,
    pub energy: EnergyBreakdown,
    pub baseline_mj: Option<f64>,
    pub ledger: SignalingLedger,
}

pub const SUMMARY_CSV_HEADER: &str =
    "scenario,profile,energy_mj,baseline_mj,savings,stalls,bs_opt_bytes,t_opt_s,termination,transitions_per_min,messages_per_min";

impl RunReport {
    pub fn savings(&self) -> Option<f64> {
        self.baseline_mj.map(|b| 1.0 - self.energy.total_mj() / b)
    }

    pub fn write_summary<W: io::Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SUMMARY_CSV_HEADER.split(','))?;
        let s = self.session.as_ref();
        let bs = s.and_then(|s| s.shaped.bs_opt_bytes);
        let rate = s.map(|s| s.shaped.bursts.last().map_or(0.0, |b| b.quality_bps));
        w.write_record([
            self.scenario.clone(),
            self.profile.clone(),
            format!("{:.3}", self.energy.total_mj()),
            self.baseline_mj.map_or(String::new(), |b| format!("{b:.3}")),
            self.savings().map_or(String::new(), |v| format!("{v:.6}")),
            s.map_or(String::new(), |s| s.shaped.run.stalls_after_fast_start().to_string()),
            bs.map_or(String::new(), |b| b.to_string()),
            match (bs, rate) {
                (Some(b), Some(r)) if r > 0.0 => format!("{:.3}", b as f64 * 8.0 / r),
                _ => String::new(),
            },
            s.and_then(|s| s.shaped.termination).map_or(String::new(), |t| t.as_str().to_string()),
            format!("{:.6}", self.ledger.transitions_per_minute()),
            format!("{:.6}", self.ledger.messages_per_minute()),
        ])?;
        w.flush()
    }

    /// Writes every output that has a destination.
    pub fn write_outputs(&self, out: &OutputPaths) -> Result<(), HarnessError> {
        let create = |p: &Path| -> io::Result<BufWriter<File>> {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Ok(BufWriter::new(File::create(p)?))
        };
        if let Some(p) = &out.summary {
            self.write_summary(create(p)?)?;
        }
        if let Some(p) = &out.states {
            self.states.write_csv(create(p)?)?;
        }
        if let Some(p) = &out.ledger {
            self.ledger.write_csv(create(p)?)?;
        }
        if let Some(s) = &self.session {
            if let Some(p) = &out.burst_log {
                write_burst_log(&s.shaped.log, create(p)?)?;
            }
            if let Some(p) = &out.stalls {
                write_stalls(&s.shaped.run.stalls, create(p)?)?;
            }
        }
        Ok(())
    }
}

pub fn write_stalls<W: io::Write>(stalls: &[Stall], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["start_s", "end_s"])?;
    for st in stalls {
        w.write_record([st.start_s.to_string(), st.end_s.map_or(String::new(), |e| e.to_string())])?;
    }
    w.flush()
}

/// Evaluates the scenario's workload under each of `profiles`.
pub fn compare_scenario(sc: &Scenario, profiles: &[RadioProfile]) -> Result<Vec<ConfigRow>, HarnessError> {
    match &sc.workload {
        Workload::Session(cfg) => compare_configs(cfg, profiles, &sc.costs),
        Workload::Schedule(s) => compare_trace(&Scenario::schedule_trace(s), profiles, &sc.costs),
    }
}

/// Runs a scenario under its main profile.
pub fn run_scenario(sc: &Scenario) -> Result<RunReport, HarnessError> {
    run_with_profile(sc, &sc.profile)
}

pub fn run_with_profile(sc: &Scenario, profile: &RadioProfile) -> Result<RunReport, HarnessError> {
    match &sc.workload {
        Workload::Session(cfg) => {
            let rep = run_session(cfg, profile)?;
            Ok(RunReport {
                scenario: sc.name.clone(),
                profile: profile.name.clone(),
                states: rep.shaped_states.clone(),
                energy: rep.shaped_energy,
                baseline_mj: Some(rep.baseline_energy.total_mj()),
                ledger: signaling_of(&rep.shaped_states, &sc.costs)?,
                session: Some(rep),
            })
        }
        Workload::Schedule(s) => {
            let states = simulate(&Scenario::schedule_trace(s), profile)?;
            Ok(RunReport {
                scenario: sc.name.clone(),
                profile: profile.name.clone(),
                energy: energy_breakdown(&states, profile, profile.bulk_rate_bps)?,
                baseline_mj: None,
                ledger: signaling_of(&states, &sc.costs)?,
                states,
                session: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const AUDIO: &str = r#"
name = "audio"
profile = "lte-drx"
compare = ["lte-drx-long"]

[stream]
bitrates_bps = [128000]
duration_s = 200
fast_start_s = 14

[client]
buffer_bytes = 4000000

[link]
trace = [[0, 2e6], [60, 1e5], [60, 2e6]]

[[expect]]
metric = "energy"
lower = "lte-drx-long"
higher = "lte-drx"
"#;

    #[test]
    fn parses_and_runs() {
        let sc = Scenario::parse(AUDIO, Path::new(".")).unwrap();
        assert_eq!(sc.compare.len(), 1);
        let Workload::Session(cfg) = &sc.workload else { panic!() };
        // the zero-length drop disappears
        assert_eq!(cfg.link.points(), &[(0.0, 2e6), (60.0, 2e6)]);
        let rep = run_scenario(&sc).unwrap();
        assert!(rep.savings().unwrap() > 0.0);
        let mut out = Vec::new();
        rep.write_summary(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with(SUMMARY_CSV_HEADER));
        assert!(text.contains("reached_t_max"));
    }

    #[test]
    fn zero_length_drop_matches_flat() {
        let flat = AUDIO.replace("[[0, 2e6], [60, 1e5], [60, 2e6]]", "[[0, 2e6]]");
        let a = run_scenario(&Scenario::parse(AUDIO, Path::new(".")).unwrap()).unwrap();
        let b = run_scenario(&Scenario::parse(&flat, Path::new(".")).unwrap()).unwrap();
        assert_eq!(a.energy, b.energy);
        assert_eq!(a.session.unwrap().shaped.log, b.session.unwrap().shaped.log);
    }

    #[test]
    fn config_errors() {
        let bad_profile = AUDIO.replace("profile = \"lte-drx\"", "profile = \"no-such-profile\"");
        assert!(matches!(Scenario::parse(&bad_profile, Path::new(".")), Err(HarnessError::Scenario(_))));
        let too_long = AUDIO.replace("fast_start_s = 14", "fast_start_s = 14\nsession_s = 500");
        assert!(Scenario::parse(&too_long, Path::new(".")).is_err());
        let unknown = format!("{AUDIO}\n[extra]\nx = 1\n");
        assert!(Scenario::parse(&unknown, Path::new(".")).is_err());
        let backwards = AUDIO.replace("[[0, 2e6], [60, 1e5], [60, 2e6]]", "[[10, 2e6], [5, 1e5]]");
        assert!(Scenario::parse(&backwards, Path::new(".")).is_err());
    }

    #[test]
    fn schedule_workload() {
        let text = "name = \"yt\"\nprofile = \"hspa-default\"\n[schedule]\nperiod_s = 39\nburst_s = 4\nhorizon_s = 390\n";
        let sc = Scenario::parse(text, Path::new(".")).unwrap();
        let rep = run_scenario(&sc).unwrap();
        assert!(rep.session.is_none());
        assert!(rep.baseline_mj.is_none());
        assert!(rep.ledger.total_transitions > 0);
    }
}
