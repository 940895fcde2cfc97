//! Error type shared across the simulation library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("leading trajectory is empty")]
    EmptyTrajectory,

    #[error("invalid trajectory: {0}")]
    Trajectory(String),

    #[error("no traffic state available")]
    EmptyField,

    #[error("no data yet: field has no records at or before t={0} s")]
    NoDataYet(f64),

    #[error("speed field geometry: {0}")]
    FieldGeometry(String),

    #[error(
        "collision at t={time:.1} s between vehicle {leader_id} and follower {follower_id} \
         (gap {gap:.3} m)"
    )]
    Collision {
        time: f64,
        leader_id: u64,
        follower_id: u64,
        gap: f64,
    },

    #[error("runs are not comparable: {0}")]
    Mismatch(String),

    #[error("fuel mass must be positive to compute MPG")]
    ZeroFuel,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
