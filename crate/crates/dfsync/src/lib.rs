//! Event-driven simulation and stability analysis for populations of
//! degrade-and-fire oscillators coupled through a delayed common activator.
//!
//! Each repressor concentration decays at unit speed and resets to
//! `R + nu A(t - tau)` upon hitting zero, while the shared activator obeys
//! `A' = m - beta A` with `m` the population mean. Between firings both
//! flows have closed forms, so the [`engine`] advances trajectories exactly
//! from event to event. On top of it, [`maps`] provides the return maps on
//! the firing section, [`analysis`] computes fixed points, continuation in
//! the delay, spectra and the delay-dependent stability criteria, and
//! [`verify`] holds independent oracles and observables.

pub mod analysis;
pub mod cli;
pub mod cluster;
pub mod engine;
pub mod error;
pub mod maps;
pub mod params;
pub mod solve;
pub mod verify;

pub use cluster::ClusterState;
pub use engine::{
    check_wellposed, simulate, simulate_until, FiringEvent, InitialCondition, PopulationState,
    StopCondition, Trajectory,
};
pub use error::{Error, Result};
pub use maps::{f1, reset_coefficients, SectionPoint, SyncAnalysis};
pub use params::ParameterSet;
