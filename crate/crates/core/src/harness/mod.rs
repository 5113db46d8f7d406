//! Scenario runner: simulated sessions, radio evaluation, profile
//! comparisons and power surfaces.

mod compare;
mod scenario;
mod session;

use std::io;

use thiserror::Error;

pub use compare::*;
pub use scenario::*;
pub use session::*;

use crate::energy::{power_surface, write_surface_csv, RadioProfile, SurfaceGrid};

use crate::client::ClientError;
use crate::energy::ModelError;
use crate::profiler::ProfilerError;
use crate::radio::RadioError;
use crate::shaper::ShaperError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shaper(#[from] ShaperError),
    #[error(transparent)]
    Profiler(#[from] ProfilerError),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Average-power surface of `profile` over `grid`, as CSV.
pub fn sweep_surface<W: io::Write>(profile: &RadioProfile, grid: &SurfaceGrid, out: W) -> Result<usize, HarnessError> {
    let rows = power_surface(profile, grid)?;
    write_surface_csv(&rows, out)?;
    Ok(rows.len())
}
