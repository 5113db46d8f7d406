//! Closed-form power and energy of periodic burst delivery.
//!
//! All quantities use one canonical unit set: bits, bits per second,
//! seconds, milliwatts and millijoules. Buffer sizes are carried in bytes at
//! the API boundary and converted to bits internally.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used for boundary-continuity comparisons.
pub const REL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("negative data rate: {0} bit/s")]
    NegativeRate(f64),
    #[error("invalid radio profile: {0}")]
    InvalidProfile(String),
    #[error("invalid burst scenario: {0}")]
    InvalidScenario(String),
    #[error(
        "burst of {burst_bits} bits exceeds the {buffer_bits} bit client buffer; \
         use avg_power_overflow for this regime"
    )]
    BufferOverflow { burst_bits: f64, buffer_bits: f64 },
    #[error("burst of {burst_bits} bits fits the {buffer_bits} bit client buffer; use avg_power_fitting")]
    NoOverflow { burst_bits: f64, buffer_bits: f64 },
    #[error("empty grid for {0}")]
    EmptyGrid(&'static str),
}

/// Wireless access technology of a [`RadioProfile`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technology {
    Wifi,
    Hspa,
    Lte,
}

impl Technology {
    pub fn as_str(self) -> &'static str {
        match self {
            Technology::Wifi => "WIFI",
            Technology::Hspa => "HSPA",
            Technology::Lte => "LTE",
        }
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technology {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wifi" | "wi-fi" => Ok(Technology::Wifi),
            "hspa" | "3g" => Ok(Technology::Hspa),
            "lte" | "4g" => Ok(Technology::Lte),
            other => Err(ModelError::InvalidProfile(format!("unknown technology '{other}'"))),
        }
    }
}

/// Device-initiated early demotion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FastDormancy {
    #[default]
    None,
    /// Drops the RRC connection and lands in IDLE.
    Legacy,
    /// Requests CELL_DCH/FACH -> CELL_PCH.
    Rel8,
}

/// Connected-state DRX parameters (LTE only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrxConfig {
    pub idle_ms: f64,
    pub cycle_ms: f64,
    pub on_ms: f64,
}

impl DrxConfig {
    pub fn idle_s(&self) -> f64 {
        self.idle_ms / 1000.0
    }

    pub fn cycle_s(&self) -> f64 {
        self.cycle_ms / 1000.0
    }

    pub fn on_s(&self) -> f64 {
        self.on_ms / 1000.0
    }
}

/// Powers of the low-power states. Baseline sleep power only adds a
/// constant, so these default to zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FloorPowers {
    pub idle_mw: f64,
    pub pch_mw: f64,
    pub drx_off_mw: f64,
}

/// Energy spent re-establishing a radio connection: a fixed-length period
/// at elevated power paid on every promotion out of a dormant state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub duration_s: f64,
    pub power_mw: f64,
}

impl Promotion {
    pub fn energy_mj(&self) -> f64 {
        self.duration_s * self.power_mw
    }
}

/// Radio parameters of one access network / device combination.
///
/// `t1_s`/`t2_s` are the two inactivity timers of HSPA. Wi-Fi and LTE have a
/// single timer: `t1_s` holds the PSM timer or `RRC_idle` and `t2_s` is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioProfile {
    pub name: String,
    pub technology: Technology,
    pub t1_s: f64,
    #[serde(default)]
    pub t2_s: f64,
    /// CELL_PCH -> IDLE timer.
    #[serde(default)]
    pub t3_s: f64,
    pub p1_mw: f64,
    #[serde(default)]
    pub p2_mw: f64,
    pub p_tail_mw: f64,
    pub a_coeff: f64,
    pub k_coeff: f64,
    #[serde(default)]
    pub drx: Option<DrxConfig>,
    #[serde(default)]
    pub pch_enabled: bool,
    #[serde(default)]
    pub fast_dormancy: FastDormancy,
    #[serde(default)]
    pub legacy_fd_timeout_s: f64,
    #[serde(default)]
    pub floor: FloorPowers,
    /// Promotion out of IDLE (RRC connection setup).
    #[serde(default)]
    pub promotion_from_idle: Option<Promotion>,
    /// Promotion out of CELL_PCH.
    #[serde(default)]
    pub promotion_from_pch: Option<Promotion>,
    /// Nominal TCP bulk transfer capacity over this network.
    pub bulk_rate_bps: f64,
}

impl RadioProfile {
    /// Wi-Fi with a 200 ms PSM timer, 435 mW idle power and
    /// `ΔP_rx(20 Mbit/s) = 760 mW`, with `ΔP_rx` growing linearly from the
    /// idle power at zero rate.
    pub fn wifi() -> Self {
        let p_tail = 435.0;
        let r_btc = 20e6;
        RadioProfile {
            name: "wifi".into(),
            technology: Technology::Wifi,
            t1_s: 0.2,
            t2_s: 0.0,
            t3_s: 0.0,
            p1_mw: p_tail,
            p2_mw: 0.0,
            p_tail_mw: p_tail,
            a_coeff: 2.0,
            k_coeff: (760.0 - p_tail) / (p_tail * r_btc),
            drx: None,
            pch_enabled: false,
            fast_dormancy: FastDormancy::None,
            legacy_fd_timeout_s: 0.0,
            floor: FloorPowers::default(),
            promotion_from_idle: None,
            promotion_from_pch: None,
            bulk_rate_bps: r_btc,
        }
    }

    /// LTE, `RRC_idle` = 10 s, cDRX off. Receive power does not scale with
    /// rate: `ΔP_rx(r) = 1520 mW` for every `r`.
    pub fn lte_no_drx() -> Self {
        let p_tail = 1216.0;
        RadioProfile {
            name: "lte-nodrx".into(),
            technology: Technology::Lte,
            t1_s: 10.0,
            t2_s: 0.0,
            t3_s: 0.0,
            p1_mw: p_tail,
            p2_mw: 0.0,
            p_tail_mw: p_tail,
            a_coeff: 1.0 + 1520.0 / p_tail,
            k_coeff: 0.0,
            drx: None,
            pch_enabled: false,
            fast_dormancy: FastDormancy::None,
            legacy_fd_timeout_s: 0.0,
            floor: FloorPowers::default(),
            promotion_from_idle: Some(Promotion { duration_s: 0.6, power_mw: p_tail }),
            promotion_from_pch: None,
            bulk_rate_bps: 16e6,
        }
    }

    /// LTE, `RRC_idle` = 10 s, DRX_idle 750 ms, DRX_c 640 ms, DRX_on 20 ms.
    pub fn lte_drx() -> Self {
        RadioProfile {
            name: "lte-drx".into(),
            drx: Some(DrxConfig { idle_ms: 750.0, cycle_ms: 640.0, on_ms: 20.0 }),
            ..Self::lte_no_drx()
        }
    }

    /// As [`RadioProfile::lte_drx`] with `RRC_idle` = 20 s.
    pub fn lte_drx_long_idle() -> Self {
        RadioProfile { name: "lte-drx-long".into(), t1_s: 20.0, ..Self::lte_drx() }
    }

    /// HSPA vendor defaults: T1 = 8 s, T2 = 3 s, T3 = 29 min, CELL_PCH on.
    ///
    /// The state powers are not published for these networks; CELL_DCH
    /// 800 mW and CELL_FACH 460 mW are typical handset values.
    pub fn hspa_default() -> Self {
        let p_tail = 800.0;
        RadioProfile {
            name: "hspa-default".into(),
            technology: Technology::Hspa,
            t1_s: 8.0,
            t2_s: 3.0,
            t3_s: 29.0 * 60.0,
            p1_mw: 800.0,
            p2_mw: 460.0,
            p_tail_mw: p_tail,
            a_coeff: 1.3,
            k_coeff: 0.2 / 5e6,
            drx: None,
            pch_enabled: true,
            fast_dormancy: FastDormancy::None,
            legacy_fd_timeout_s: 0.0,
            floor: FloorPowers::default(),
            promotion_from_idle: Some(Promotion { duration_s: 1.5, power_mw: 460.0 }),
            promotion_from_pch: Some(Promotion { duration_s: 0.3, power_mw: 460.0 }),
            bulk_rate_bps: 5e6,
        }
    }

    /// HSPA aggressive timers: T1 = 6 s, T2 = 2 s, T3 = 29 min, CELL_PCH on.
    pub fn hspa_aggressive() -> Self {
        RadioProfile { name: "hspa-aggressive".into(), t1_s: 6.0, t2_s: 2.0, ..Self::hspa_default() }
    }

    /// HSPA without CELL_PCH: T1 = 8 s, T2 = 10 s.
    pub fn hspa_no_pch() -> Self {
        RadioProfile {
            name: "hspa-nopch".into(),
            t1_s: 8.0,
            t2_s: 10.0,
            pch_enabled: false,
            promotion_from_pch: None,
            ..Self::hspa_default()
        }
    }

    /// Returns a copy with legacy fast dormancy after `timeout_s` of
    /// inactivity.
    pub fn with_legacy_fd(mut self, timeout_s: f64) -> Self {
        self.fast_dormancy = FastDormancy::Legacy;
        self.legacy_fd_timeout_s = timeout_s;
        self.name = format!("{}-legacy-fd", self.name.split('-').next().unwrap_or("profile"));
        self
    }

    /// Built-in profiles by name.
    pub fn builtin(name: &str) -> Option<Self> {
        Some(match name {
            "wifi" => Self::wifi(),
            "lte-nodrx" => Self::lte_no_drx(),
            "lte-drx" => Self::lte_drx(),
            "lte-drx-long" => Self::lte_drx_long_idle(),
            "hspa-default" => Self::hspa_default(),
            "hspa-aggressive" => Self::hspa_aggressive(),
            "hspa-nopch" => Self::hspa_no_pch(),
            "hspa-legacy-fd" => Self::hspa_default().with_legacy_fd(6.5),
            _ => return None,
        })
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["wifi", "lte-nodrx", "lte-drx", "lte-drx-long", "hspa-default", "hspa-aggressive", "hspa-nopch", "hspa-legacy-fd"]
    }

    /// Parses and validates a TOML profile.
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let profile: RadioProfile =
            toml::from_str(text).map_err(|e| ModelError::InvalidProfile(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidProfile(msg));
        if !(self.a_coeff >= 1.0) {
            return bad(format!("a_coeff must be >= 1, got {}", self.a_coeff));
        }
        let non_negative = [
            ("t1_s", self.t1_s),
            ("t2_s", self.t2_s),
            ("t3_s", self.t3_s),
            ("p1_mw", self.p1_mw),
            ("p2_mw", self.p2_mw),
            ("p_tail_mw", self.p_tail_mw),
            ("k_coeff", self.k_coeff),
            ("legacy_fd_timeout_s", self.legacy_fd_timeout_s),
            ("floor.idle_mw", self.floor.idle_mw),
            ("floor.pch_mw", self.floor.pch_mw),
            ("floor.drx_off_mw", self.floor.drx_off_mw),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0) || !value.is_finite() {
                return bad(format!("{name} must be a finite value >= 0, got {value}"));
            }
        }
        if !(self.bulk_rate_bps > 0.0) {
            return bad(format!("bulk_rate_bps must be > 0, got {}", self.bulk_rate_bps));
        }
        if self.p2_mw > self.p1_mw {
            return bad(format!("p2_mw ({}) must not exceed p1_mw ({})", self.p2_mw, self.p1_mw));
        }
        if self.technology != Technology::Hspa && self.t2_s != 0.0 {
            return bad(format!("{} has a single inactivity timer; t2_s must be 0", self.technology));
        }
        if let Some(drx) = &self.drx {
            if self.technology != Technology::Lte {
                return bad("drx is only valid for LTE".into());
            }
            if !(drx.cycle_ms > 0.0) || !(drx.on_ms > 0.0) || drx.on_ms > drx.cycle_ms || drx.idle_ms < 0.0 {
                return bad(format!("inconsistent DRX parameters {drx:?}"));
            }
        }
        if self.fast_dormancy != FastDormancy::None {
            if self.technology != Technology::Hspa {
                return bad("fast dormancy is only modelled for HSPA".into());
            }
            if !(self.legacy_fd_timeout_s > 0.0) {
                return bad("fast dormancy needs a positive legacy_fd_timeout_s".into());
            }
        }
        for promo in [self.promotion_from_idle, self.promotion_from_pch].into_iter().flatten() {
            if !(promo.duration_s >= 0.0) || !(promo.power_mw >= 0.0) {
                return bad(format!("negative promotion parameters {promo:?}"));
            }
        }
        Ok(())
    }

    /// Receive power at `rate_bps`: `(a + k·r)·P_tail`.
    pub fn power_rx(&self, rate_bps: f64) -> Result<f64, ModelError> {
        if rate_bps < 0.0 || rate_bps.is_nan() {
            return Err(ModelError::NegativeRate(rate_bps));
        }
        Ok((self.a_coeff + self.k_coeff * rate_bps) * self.p_tail_mw)
    }

    /// Receive power above the tail power.
    pub fn delta_rx(&self, rate_bps: f64) -> Result<f64, ModelError> {
        Ok(self.power_rx(rate_bps)? - self.p_tail_mw)
    }

    /// Tail energy spent over an idle gap of `idle_s` seconds, case-split
    /// over the two inactivity timers.
    pub fn tail_energy_over(&self, idle_s: f64) -> f64 {
        let idle = idle_s.max(0.0);
        if idle < self.t1_s {
            self.p1_mw * idle
        } else if idle < self.t1_s + self.t2_s {
            self.p1_mw * self.t1_s + self.p2_mw * (idle - self.t1_s)
        } else {
            self.p1_mw * self.t1_s + self.p2_mw * self.t2_s
        }
    }

    /// Idle duration after which the tail is fully spent.
    pub fn tail_length_s(&self) -> f64 {
        self.t1_s + self.t2_s
    }
}

/// One periodic-burst operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurstScenario {
    pub r_s_bps: f64,
    pub r_btc_bps: f64,
    pub buffer_bytes: f64,
    pub interval_s: f64,
}

impl BurstScenario {
    pub fn new(r_s_bps: f64, r_btc_bps: f64, buffer_bytes: f64, interval_s: f64) -> Result<Self, ModelError> {
        let s = BurstScenario { r_s_bps, r_btc_bps, buffer_bytes, interval_s };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("r_s_bps", self.r_s_bps),
            ("r_btc_bps", self.r_btc_bps),
            ("buffer_bytes", self.buffer_bytes),
            ("interval_s", self.interval_s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidScenario(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.r_s_bps > self.r_btc_bps {
            return Err(ModelError::InvalidScenario(format!(
                "encoding rate {} exceeds bulk transfer capacity {}",
                self.r_s_bps, self.r_btc_bps
            )));
        }
        Ok(())
    }

    pub fn burst_bits(&self) -> f64 {
        self.r_s_bps * self.interval_s
    }

    pub fn buffer_bits(&self) -> f64 {
        self.buffer_bytes * 8.0
    }

    pub fn fits_buffer(&self) -> bool {
        self.burst_bits() <= self.buffer_bits()
    }
}

/// Idle time between two consecutive bursts: `T·(1 − r_s/r_btc)`.
pub fn idle_time(s: &BurstScenario) -> f64 {
    s.interval_s * (1.0 - s.r_s_bps / s.r_btc_bps)
}

/// Tail energy per burst period when the whole burst fits the client buffer.
pub fn tail_energy(s: &BurstScenario, profile: &RadioProfile) -> Result<f64, ModelError> {
    s.validate()?;
    if !s.fits_buffer() {
        return Err(ModelError::BufferOverflow { burst_bits: s.burst_bits(), buffer_bits: s.buffer_bits() });
    }
    Ok(profile.tail_energy_over(idle_time(s)))
}

/// Average power while every burst fits the client buffer.
pub fn avg_power_fitting(s: &BurstScenario, profile: &RadioProfile) -> Result<f64, ModelError> {
    let tail = tail_energy(s, profile)?;
    let download = s.r_s_bps / s.r_btc_bps * profile.delta_rx(s.r_btc_bps)?;
    Ok(download + tail / s.interval_s)
}

/// Leftover idle time per period once the burst overflows the buffer:
/// `B/r_s − B/r_btc`, independent of `T`.
pub fn overflow_idle_time(s: &BurstScenario) -> f64 {
    s.buffer_bits() / s.r_s_bps - s.buffer_bits() / s.r_btc_bps
}

/// Tail energy per period in the overflow regime.
///
/// The tail is spent over the fixed leftover idle interval, so it obeys
/// `E_tail <= P̄_tail·(B/r_s − B/r_btc)` with `P̄_tail` the mean tail power,
/// and it reduces to the full-timer tail once that interval exceeds
/// `T1 + T2`. At `r_s·T = B` it equals the fitting-regime tail.
pub fn overflow_tail_energy(s: &BurstScenario, profile: &RadioProfile) -> f64 {
    profile.tail_energy_over(overflow_idle_time(s))
}

/// Average power when the burst exceeds the client buffer and the excess
/// trickles in at the encoding rate under flow control.
pub fn avg_power_overflow(s: &BurstScenario, profile: &RadioProfile) -> Result<f64, ModelError> {
    s.validate()?;
    let (burst, buffer) = (s.burst_bits(), s.buffer_bits());
    if burst < buffer {
        return Err(ModelError::NoOverflow { burst_bits: burst, buffer_bits: buffer });
    }
    let t = s.interval_s;
    let fitted = buffer * profile.delta_rx(s.r_btc_bps)? / (t * s.r_btc_bps);
    let trickled = (burst - buffer) / burst * profile.delta_rx(s.r_s_bps)?;
    Ok(fitted + trickled + overflow_tail_energy(s, profile) / t)
}

/// Average power, dispatching on whether the burst fits the buffer.
pub fn avg_power(s: &BurstScenario, profile: &RadioProfile) -> Result<f64, ModelError> {
    if s.fits_buffer() {
        avg_power_fitting(s, profile)
    } else {
        avg_power_overflow(s, profile)
    }
}

/// Energy-optimal burst interval: the burst exactly fills the buffer unless
/// the client's playout horizon `t_max_s` is shorter.
pub fn optimal_interval(r_s_bps: f64, buffer_bytes: f64, t_max_s: f64) -> f64 {
    (buffer_bytes * 8.0 / r_s_bps).min(t_max_s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub r_btc_bps: f64,
    pub r_s_bps: Vec<f64>,
    pub interval_s: Vec<f64>,
    pub buffer_bytes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceRow {
    pub technology: Technology,
    pub r_s_bps: f64,
    pub buffer_bytes: f64,
    pub interval_s: f64,
    pub avg_power_mw: f64,
}

pub const SURFACE_CSV_HEADER: &str = "technology,r_s_bps,buffer_bytes,interval_s,avg_power_mw";

/// Evaluates [`avg_power`] over a grid, ordered by `r_s`, then `B`, then `T`.
pub fn power_surface(profile: &RadioProfile, grid: &SurfaceGrid) -> Result<Vec<SurfaceRow>, ModelError> {
    if grid.r_s_bps.is_empty() {
        return Err(ModelError::EmptyGrid("r_s"));
    }
    if grid.interval_s.is_empty() {
        return Err(ModelError::EmptyGrid("T"));
    }
    if grid.buffer_bytes.is_empty() {
        return Err(ModelError::EmptyGrid("B"));
    }
    let mut rows = Vec::with_capacity(grid.r_s_bps.len() * grid.interval_s.len() * grid.buffer_bytes.len());
    for &r_s in &grid.r_s_bps {
        for &b in &grid.buffer_bytes {
            for &t in &grid.interval_s {
                let s = BurstScenario::new(r_s, grid.r_btc_bps, b, t)?;
                rows.push(SurfaceRow {
                    technology: profile.technology,
                    r_s_bps: r_s,
                    buffer_bytes: b,
                    interval_s: t,
                    avg_power_mw: avg_power(&s, profile)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Writes surface rows as CSV with [`SURFACE_CSV_HEADER`].
pub fn write_surface_csv<W: std::io::Write>(rows: &[SurfaceRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SURFACE_CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.technology.as_str().to_string(),
            r.r_s_bps.to_string(),
            r.buffer_bytes.to_string(),
            r.interval_s.to_string(),
            r.avg_power_mw.to_string(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn zero_rate_is_tail_power() {
        let p = RadioProfile { a_coeff: 1.0, k_coeff: 123.0, p_tail_mw: 435.0, ..RadioProfile::wifi() };
        assert_eq!(p.power_rx(0.0).unwrap(), 435.0);
    }

    #[test]
    fn wifi_and_lte_receive_power() {
        let wifi = RadioProfile::wifi();
        assert!(close(wifi.power_rx(20e6).unwrap(), 1195.0, 1e-12));
        assert!(close(wifi.delta_rx(20e6).unwrap(), 760.0, 1e-12));
        let lte = RadioProfile::lte_no_drx();
        assert!(close(lte.power_rx(16e6).unwrap(), 2736.0, 1e-12));
        // rate independent
        assert!(close(lte.delta_rx(0.5e6).unwrap(), 1520.0, 1e-12));
    }

    #[test]
    fn negative_rate_rejected() {
        assert_eq!(RadioProfile::wifi().power_rx(-1.0), Err(ModelError::NegativeRate(-1.0)));
    }

    #[test]
    fn idle_time_examples() {
        let s = BurstScenario::new(1e6, 1e6, 1e9, 7.0).unwrap();
        assert_eq!(idle_time(&s), 0.0);
        let s = BurstScenario::new(0.5e6, 16e6, 1e9, 5.0).unwrap();
        assert!(close(idle_time(&s), 4.84375, 1e-15));
        let s = BurstScenario::new(0.5e6, 20e6, 1e9, 10.0).unwrap();
        assert!(close(idle_time(&s), 9.75, 1e-15));
    }

    #[test]
    fn tail_energy_cases() {
        let s = BurstScenario::new(1e6, 1e6, 1e9, 7.0).unwrap();
        assert_eq!(tail_energy(&s, &RadioProfile::wifi()).unwrap(), 0.0);
        let s = BurstScenario::new(0.5e6, 20e6, 1e9, 10.0).unwrap();
        assert!(close(tail_energy(&s, &RadioProfile::wifi()).unwrap(), 87.0, 1e-12));
        let s = BurstScenario::new(0.5e6, 16e6, 1e9, 5.0).unwrap();
        assert!(close(tail_energy(&s, &RadioProfile::lte_no_drx()).unwrap(), 5890.0, 1e-12));
    }

    #[test]
    fn hspa_middle_case_matches_published_form() {
        // P1·T1 − P2·T1 + P2·t_idle
        let p = RadioProfile::hspa_default();
        let idle = 9.5;
        let published = p.p1_mw * p.t1_s - p.p2_mw * p.t1_s + p.p2_mw * idle;
        assert!(close(p.tail_energy_over(idle), published, 1e-12));
    }

    #[test]
    fn tail_energy_rejects_overflow() {
        let s = BurstScenario::new(1e6, 16e6, 1000.0, 10.0).unwrap();
        assert!(matches!(tail_energy(&s, &RadioProfile::lte_no_drx()), Err(ModelError::BufferOverflow { .. })));
        assert!(matches!(avg_power_fitting(&s, &RadioProfile::lte_no_drx()), Err(ModelError::BufferOverflow { .. })));
    }

    #[test]
    fn fitting_examples() {
        let s = BurstScenario::new(0.5e6, 20e6, 1e9, 10.0).unwrap();
        assert!(close(avg_power_fitting(&s, &RadioProfile::wifi()).unwrap(), 27.7, 1e-12));
        let s = BurstScenario::new(0.5e6, 16e6, 1e9, 5.0).unwrap();
        assert!(close(avg_power_fitting(&s, &RadioProfile::lte_no_drx()).unwrap(), 1225.5, 1e-12));
    }

    #[test]
    fn plateau_while_idle_below_first_timer() {
        let lte = RadioProfile::lte_no_drx();
        let a = avg_power_fitting(&BurstScenario::new(0.5e6, 16e6, 1e9, 3.0).unwrap(), &lte).unwrap();
        let b = avg_power_fitting(&BurstScenario::new(0.5e6, 16e6, 1e9, 9.0).unwrap(), &lte).unwrap();
        assert!(close(a, b, 1e-12));
    }

    #[test]
    fn overflow_continuous_at_boundary() {
        for profile in [RadioProfile::wifi(), RadioProfile::lte_no_drx(), RadioProfile::hspa_default()] {
            for (r_s, b) in [(0.5e6, 10e6), (2e6, 1e6), (128e3, 3e5)] {
                let t = b * 8.0 / r_s;
                let s = BurstScenario::new(r_s, profile.bulk_rate_bps, b, t).unwrap();
                let fit = avg_power_fitting(&s, &profile).unwrap();
                let over = avg_power_overflow(&s, &profile).unwrap();
                assert!(close(fit, over, REL_TOLERANCE), "{}: {fit} vs {over}", profile.name);
            }
        }
    }

    #[test]
    fn overflow_exceeds_boundary_power() {
        let lte = RadioProfile::lte_no_drx();
        let at = |t| BurstScenario::new(0.5e6, 16e6, 10e6, t).unwrap();
        let over = avg_power_overflow(&at(320.0), &lte).unwrap();
        let boundary = avg_power_fitting(&at(160.0), &lte).unwrap();
        assert!(over > boundary);
        // half of the burst trickles at the encoding rate
        assert!(over > lte.delta_rx(0.5e6).unwrap() / 2.0);
    }

    #[test]
    fn overflow_rejects_fitting_scenario() {
        let s = BurstScenario::new(0.5e6, 16e6, 10e6, 10.0).unwrap();
        assert!(matches!(avg_power_overflow(&s, &RadioProfile::lte_no_drx()), Err(ModelError::NoOverflow { .. })));
    }

    #[test]
    fn dispatch_on_buffer_boundary() {
        let lte = RadioProfile::lte_no_drx();
        let b = 1_000_000.0;
        let r_s = 8e5;
        // r_s·T = B − 1 byte and B + 1 byte
        let below = BurstScenario::new(r_s, 16e6, b, (b - 1.0) * 8.0 / r_s).unwrap();
        let above = BurstScenario::new(r_s, 16e6, b, (b + 1.0) * 8.0 / r_s).unwrap();
        assert!(below.fits_buffer());
        assert!(!above.fits_buffer());
        assert_eq!(avg_power(&below, &lte).unwrap(), avg_power_fitting(&below, &lte).unwrap());
        assert_eq!(avg_power(&above, &lte).unwrap(), avg_power_overflow(&above, &lte).unwrap());
    }

    #[test]
    fn optimal_interval_examples() {
        assert!(close(optimal_interval(500e3, 10e6, f64::INFINITY), 160.0, 1e-15));
        assert_eq!(optimal_interval(500e3, 10e6, 39.0), 39.0);
        assert_eq!(optimal_interval(500e3, 0.0, 39.0), 0.0);
    }

    #[test]
    fn surface_single_point_and_ordering() {
        let wifi = RadioProfile::wifi();
        let grid = SurfaceGrid { r_btc_bps: 20e6, r_s_bps: vec![0.5e6], interval_s: vec![10.0], buffer_bytes: vec![1e7] };
        let rows = power_surface(&wifi, &grid).unwrap();
        assert_eq!(rows.len(), 1);
        let s = BurstScenario::new(0.5e6, 20e6, 1e7, 10.0).unwrap();
        assert_eq!(rows[0].avg_power_mw, avg_power(&s, &wifi).unwrap());

        let grid = SurfaceGrid {
            r_btc_bps: 20e6,
            r_s_bps: vec![1e5, 2e5],
            interval_s: vec![1.0, 2.0, 3.0],
            buffer_bytes: vec![1e6, 2e6],
        };
        let rows = power_surface(&wifi, &grid).unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.r_s_bps, r.buffer_bytes, r.interval_s)).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(keys, sorted);
    }

    #[test]
    fn surface_rejects_empty_grid() {
        let grid = SurfaceGrid { r_btc_bps: 20e6, r_s_bps: vec![], interval_s: vec![1.0], buffer_bytes: vec![1.0] };
        assert_eq!(power_surface(&RadioProfile::wifi(), &grid), Err(ModelError::EmptyGrid("r_s")));
    }

    #[test]
    fn wifi_surface_decreases_along_interval_with_large_buffer() {
        let wifi = RadioProfile::wifi();
        let grid = SurfaceGrid {
            r_btc_bps: 20e6,
            r_s_bps: vec![0.5e6],
            interval_s: (1..=100).map(f64::from).collect(),
            buffer_bytes: vec![50e6],
        };
        let rows = power_surface(&wifi, &grid).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].avg_power_mw <= w[0].avg_power_mw * (1.0 + REL_TOLERANCE));
        }
    }

    #[test]
    fn lte_surface_plateau_below_rrc_timer() {
        let lte = RadioProfile::lte_no_drx();
        // t_idle < 10 s  <=>  T < 10 / (1 − 1/32)
        let grid = SurfaceGrid {
            r_btc_bps: 16e6,
            r_s_bps: vec![0.5e6],
            interval_s: (1..=10).map(f64::from).collect(),
            buffer_bytes: vec![50e6],
        };
        let rows = power_surface(&lte, &grid).unwrap();
        let first = rows[0].avg_power_mw;
        assert!(rows.iter().all(|r| close(r.avg_power_mw, first, 1e-9)));
    }

    #[test]
    fn lower_rate_lower_power() {
        for profile in [RadioProfile::wifi(), RadioProfile::lte_no_drx()] {
            let lo = BurstScenario::new(0.5e6, profile.bulk_rate_bps, 10e6, 40.0).unwrap();
            let hi = BurstScenario::new(2e6, profile.bulk_rate_bps, 10e6, 40.0).unwrap();
            assert!(avg_power(&lo, &profile).unwrap() < avg_power(&hi, &profile).unwrap());
        }
    }

    #[test]
    fn profile_validation() {
        let mut p = RadioProfile::wifi();
        p.a_coeff = 0.5;
        assert!(p.validate().is_err());
        let mut p = RadioProfile::hspa_default();
        p.p2_mw = p.p1_mw + 1.0;
        assert!(p.validate().is_err());
        let mut p = RadioProfile::wifi();
        p.drx = RadioProfile::lte_drx().drx;
        assert!(p.validate().is_err());
        for name in RadioProfile::builtin_names() {
            RadioProfile::builtin(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn profile_toml_round_trip() {
        for name in RadioProfile::builtin_names() {
            let p = RadioProfile::builtin(name).unwrap();
            let back = RadioProfile::from_toml_str(&p.to_toml_string()).unwrap();
            assert_eq!(p, back);
        }
    }

    #[test]
    fn scenario_requires_spare_bandwidth() {
        assert!(BurstScenario::new(2e6, 1e6, 1e6, 1.0).is_err());
        assert!(BurstScenario::new(1e6, 2e6, 0.0, 1.0).is_err());
    }
}
