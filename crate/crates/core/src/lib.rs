//! Deterministic platoon microsimulation for mixed-autonomy speed harmonization.
//!
//! The library simulates a column of vehicles following an exogenous leading
//! trajectory. Human drivers follow the Intelligent Driver Model with seeded
//! Gaussian noise; automated vehicles run a two-layer controller that blends a
//! macroscopic speed target (a windowed average over segment speed estimates)
//! with ACC-style gap regulation, bounded by a forward-looking safety filter.
//! Energy, throughput, and headway metrics compare controlled runs against a
//! fully human-driven baseline.
//!
//! Everything is deterministic per `(config, trajectory, seed)`.

pub mod config;
pub mod driver;
pub mod error;
pub mod field;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod trajectory;

pub use config::{ControllerParams, EnergyParams, IdmParams, LaneChangeParams, SimConfig};
pub use error::Error;
pub use trajectory::LeadingTrajectory;
