//! Cycle-accurate simulation and verification of `n`×`n` mesh
//! networks-on-chip with single-flit packets.
//!
//! The crate is organised around the synchronous cycle engine in
//! [`engine`]. On top of it, [`smc`] estimates power-supply-noise event
//! probabilities from many seeded runs, and [`explorer`] enumerates the
//! reachable state space of small meshes to check functional properties and
//! compute exact bounded-reachability probabilities.

pub mod arbiter;
pub mod config;
pub mod engine;
pub mod error;
pub mod explorer;
pub mod mesh;
pub mod psn;
pub mod routing;
pub mod smc;
pub mod traffic;

pub use engine::{run, step_cycle, CycleEvents, EngineConfig, Mutation, Trace};
pub use error::{ConfigError, ContractError, EngineFault, ExploreError, SmcError};
pub use mesh::{Direction, FifoBuffer, Flit, NocState, RouterId, RouterState, Topology};
pub use psn::{NoiseKind, PsnScope, RouterClass};
