use std::collections::BTreeMap;
use std::fmt;

use super::ShaperError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quality {
    pub bitrate_bps: f64,
    pub init_header_bytes: u64,
    pub width: u32,
    pub height: u32,
}

impl Quality {
    pub fn with_rate(bitrate_bps: f64) -> Self {
        Quality { bitrate_bps, init_header_bytes: 128_000, width: 0, height: 0 }
    }
}

/// Encodings of one title, strictly increasing in bitrate.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityLadder {
    qualities: Vec<Quality>,
}

impl QualityLadder {
    pub fn new(qualities: Vec<Quality>) -> Result<Self, ShaperError> {
        if qualities.is_empty() {
            return Err(ShaperError::Ladder("empty ladder".into()));
        }
        if qualities.iter().any(|q| !(q.bitrate_bps > 0.0)) {
            return Err(ShaperError::Ladder("bitrates must be > 0".into()));
        }
        if qualities.windows(2).any(|w| w[1].bitrate_bps <= w[0].bitrate_bps) {
            return Err(ShaperError::Ladder("bitrates must be strictly increasing".into()));
        }
        Ok(QualityLadder { qualities })
    }

    pub fn from_rates(rates_bps: &[f64]) -> Result<Self, ShaperError> {
        Self::new(rates_bps.iter().map(|&r| Quality::with_rate(r)).collect())
    }

    pub fn single(bitrate_bps: f64) -> Self {
        Self::from_rates(&[bitrate_bps]).expect("one positive rate")
    }

    /// 700 to 3000 kbit/s, the ladder of the rate-adaptive test content.
    pub fn reference() -> Self {
        let rows = [(700e3, 853, 480), (1200e3, 1024, 576), (1500e3, 1280, 720), (2000e3, 1280, 720), (2500e3, 1920, 1080), (3000e3, 1920, 1080)];
        Self::new(
            rows.iter()
                .map(|&(r, w, h)| Quality { bitrate_bps: r, init_header_bytes: 128_000, width: w, height: h })
                .collect(),
        )
        .expect("static ladder")
    }

    pub fn len(&self) -> usize {
        self.qualities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qualities.is_empty()
    }

    pub fn rate(&self, idx: usize) -> f64 {
        self.qualities[idx].bitrate_bps
    }

    pub fn get(&self, idx: usize) -> &Quality {
        &self.qualities[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Quality> {
        self.qualities.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QualityDecision {
    pub index: usize,
    /// Bandwidth is below every quality; playback may stall.
    pub stall_risk: bool,
}

/// Quality switching policy.
pub trait QualityPolicy: fmt::Debug + Send + Sync {
    fn initial(&self, ladder: &QualityLadder) -> usize;
    fn select(&self, current: usize, est_bps: f64, ladder: &QualityLadder) -> QualityDecision;
}

/// Starts at the best quality not above half of `initial_budget_bps`,
/// upgrades only when the bandwidth covers `upgrade_factor` times the new
/// bitrate, and downgrades to the best sustainable quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadroomPolicy {
    pub initial_budget_bps: f64,
    pub upgrade_factor: f64,
}

impl Default for HeadroomPolicy {
    fn default() -> Self {
        HeadroomPolicy { initial_budget_bps: 2e6, upgrade_factor: 2.0 }
    }
}

impl QualityPolicy for HeadroomPolicy {
    fn initial(&self, ladder: &QualityLadder) -> usize {
        let budget = self.initial_budget_bps / 2.0;
        (0..ladder.len()).rev().find(|&i| ladder.rate(i) <= budget).unwrap_or(0)
    }

    fn select(&self, current: usize, est_bps: f64, ladder: &QualityLadder) -> QualityDecision {
        if est_bps < ladder.rate(current) {
            return match (0..current).rev().find(|&i| ladder.rate(i) <= est_bps) {
                Some(i) => QualityDecision { index: i, stall_risk: false },
                None => QualityDecision { index: 0, stall_risk: est_bps < ladder.rate(0) },
            };
        }
        let up = (current + 1..ladder.len()).rev().find(|&i| self.upgrade_factor * ladder.rate(i) <= est_bps);
        QualityDecision { index: up.unwrap_or(current), stall_risk: false }
    }
}

/// Whether an optimal burst size came from a zero window or from the
/// playout horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsOptSource {
    Zwa,
    TMax,
}

/// Per-quality burst byte limits implied by `bs_opt` found at `found_at`.
///
/// A zero-window bound is a property of the client buffer and holds for
/// every quality. A horizon bound is an interval: lower qualities inherit
/// it, higher ones must search again.
pub fn propagate_bs_opt(ladder: &QualityLadder, found_at: usize, bs_opt: u64, source: BsOptSource) -> BTreeMap<usize, u64> {
    match source {
        BsOptSource::Zwa => (0..ladder.len()).map(|i| (i, bs_opt)).collect(),
        BsOptSource::TMax => {
            let t_opt = bs_opt as f64 * 8.0 / ladder.rate(found_at);
            (0..=found_at).map(|i| (i, (t_opt * ladder.rate(i) / 8.0).floor() as u64)).collect()
        }
    }
}
