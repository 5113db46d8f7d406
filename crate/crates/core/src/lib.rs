//! Energy-aware burst shaping for TCP media streaming.
//!
//! The crate bundles the analytical power model ([`energy`]), an RRC/DRX
//! radio simulator ([`radio`]), a flow-controlled streaming client
//! ([`client`]), the ACK profiler ([`profiler`]), the burst shaper
//! ([`shaper`]), the seconds-range HTTP dialect ([`media_http`]), a live
//! shaping proxy ([`proxy`]) and the scenario harness ([`harness`]).

pub mod client;
pub mod energy;
pub mod harness;
pub mod media_http;
pub mod profiler;
pub mod proxy;
pub mod radio;
pub mod shaper;

pub use client::{AckEvent, BandwidthTrace, ClientConfig, ClientSim};
pub use energy::{
    avg_power, avg_power_fitting, avg_power_overflow, idle_time, optimal_interval, power_surface, tail_energy,
    BurstScenario, DrxConfig, FastDormancy, ModelError, RadioProfile, SurfaceGrid, SurfaceRow, Technology,
};
pub use profiler::{BurstObservation, Profiler};
pub use radio::{
    energy_of, signaling_of, simulate, ActivityTrace, RrcState, SignalingCostTable, SignalingLedger, StateTrace,
};
pub use shaper::{Phase, QualityLadder, Shaper, ShaperConfig, StreamSpec};
