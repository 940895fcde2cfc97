//! Leading trajectories: the exogenous time series the platoon follows.
//!
//! Recorded trajectories load from CSV; a synthetic generator stands in for
//! drives that cannot be redistributed. Both are sampled at fixed 0.1 s
//! increments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, STREAM_TRAJECTORY};

/// Fixed sample spacing of every leading trajectory, s.
pub const SAMPLE_DT: f64 = 0.1;

/// Ramp magnitude used when a synthetic stop event decelerates the leader to
/// a standstill and accelerates it back out, m/s^2.
pub const STOP_RAMP_ACCEL: f64 = 1.5;

/// One sample of the leading vehicle's motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub time: f64,
    pub position: f64,
    pub velocity: f64,
}

/// Position/speed time series replayed verbatim by the platoon leader.
#[derive(Clone, Debug, PartialEq)]
pub struct LeadingTrajectory {
    samples: Vec<TrajectorySample>,
}

impl LeadingTrajectory {
    /// Build from samples, enforcing the structural invariants: 0.1 s
    /// spacing, non-decreasing position, non-negative speed. Returns
    /// validation warnings (position/speed consistency) alongside.
    pub fn new(samples: Vec<TrajectorySample>) -> Result<(Self, Vec<String>)> {
        if samples.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        let mut warnings = Vec::new();
        for pair in samples.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if ((b.time - a.time) - SAMPLE_DT).abs() > 1e-6 {
                return Err(Error::Trajectory(format!(
                    "samples must be spaced {SAMPLE_DT} s apart; got {} -> {}",
                    a.time, b.time
                )));
            }
            if b.position < a.position {
                return Err(Error::Trajectory(format!(
                    "position decreases at t={} s",
                    b.time
                )));
            }
        }
        for s in &samples {
            if s.velocity < 0.0 {
                return Err(Error::Trajectory(format!(
                    "negative velocity at t={} s",
                    s.time
                )));
            }
        }

        // Position should be consistent with speed under trapezoidal
        // integration within 1 m per minute; drift beyond that is a warning,
        // not an error.
        let mut integrated = samples[0].position;
        let mut worst: f64 = 0.0;
        for pair in samples.windows(2) {
            integrated += 0.5 * (pair[0].velocity + pair[1].velocity) * SAMPLE_DT;
            let drift = (integrated - pair[1].position).abs();
            let elapsed_min = (pair[1].time - samples[0].time) / 60.0;
            let allowed = 1.0 * elapsed_min.max(1.0 / 60.0);
            if drift > allowed {
                worst = worst.max(drift);
            }
        }
        if worst > 0.0 {
            warnings.push(format!(
                "position drifts from integrated speed by up to {worst:.2} m \
                 (more than 1 m per minute)"
            ));
        }

        Ok((Self { samples }, warnings))
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total covered duration, s.
    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * SAMPLE_DT
    }

    /// Sample at step index, if within range.
    pub fn at_step(&self, step: usize) -> Option<TrajectorySample> {
        self.samples.get(step).copied()
    }

    /// Read from CSV with header `time_s,position_m,speed_mps`.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<(Self, Vec<String>)> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut samples = Vec::new();
        for record in rdr.deserialize() {
            let row: TrajectoryRow = record?;
            samples.push(TrajectorySample {
                time: row.time_s,
                position: row.position_m,
                velocity: row.speed_mps,
            });
        }
        Self::new(samples)
    }

    /// Write as CSV with header `time_s,position_m,speed_mps`.
    pub fn to_csv_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for s in &self.samples {
            wtr.serialize(TrajectoryRow {
                time_s: s.time,
                position_m: s.position,
                speed_mps: s.velocity,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRow {
    time_s: f64,
    position_m: f64,
    speed_mps: f64,
}

/// One sinusoidal speed component of a synthetic trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub amplitude: f64,
    pub period: f64,
}

/// Leader comes to a full stop at `time` and holds for `hold_duration`,
/// ramping in and out at `STOP_RAMP_ACCEL`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    pub time: f64,
    pub hold_duration: f64,
}

/// Specification of a synthetic leading trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub duration: f64,
    pub base_speed: f64,
    pub oscillations: Vec<Oscillation>,
    pub stop_events: Vec<StopEvent>,
}

/// Generate a 0.1 s-sampled trajectory from a synthetic spec.
///
/// The speed signal is the base speed plus seeded-random-phase sinusoids;
/// stop events overlay a bounded-deceleration envelope that takes the speed
/// to zero, holds, and releases. Position comes from trapezoidal
/// integration. Errors out before generation if the sinusoid superposition
/// can go negative.
pub fn generate_synthetic_trajectory(spec: &SyntheticSpec, seed: u64) -> Result<LeadingTrajectory> {
    if spec.duration <= 0.0 {
        return Err(Error::Trajectory("duration must be positive".into()));
    }
    let amp_sum: f64 = spec.oscillations.iter().map(|o| o.amplitude.abs()).sum();
    if spec.base_speed - amp_sum < 0.0 {
        return Err(Error::Trajectory(format!(
            "oscillation amplitudes sum to {amp_sum} m/s, exceeding base speed {} m/s; \
             speeds could go negative",
            spec.base_speed
        )));
    }
    for o in &spec.oscillations {
        if o.period <= 0.0 {
            return Err(Error::Trajectory("oscillation period must be positive".into()));
        }
    }

    let mut stream = rng::substream(seed, STREAM_TRAJECTORY);
    let phases: Vec<f64> = spec
        .oscillations
        .iter()
        .map(|_| rng::uniform(&mut stream) * std::f64::consts::TAU)
        .collect();

    let steps = (spec.duration / SAMPLE_DT).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut position = 0.0;
    let mut prev_speed = 0.0;
    for i in 0..=steps {
        let t = i as f64 * SAMPLE_DT;
        let mut v = spec.base_speed;
        for (o, phase) in spec.oscillations.iter().zip(&phases) {
            v += o.amplitude * (std::f64::consts::TAU * t / o.period + phase).sin();
        }
        for stop in &spec.stop_events {
            v = v.min(stop_envelope(t, stop));
        }
        let v = v.max(0.0);
        if i > 0 {
            position += 0.5 * (prev_speed + v) * SAMPLE_DT;
        }
        samples.push(TrajectorySample {
            time: t,
            position,
            velocity: v,
        });
        prev_speed = v;
    }

    let (traj, _warnings) = LeadingTrajectory::new(samples)?;
    Ok(traj)
}

/// Speed ceiling imposed by one stop event: a V-shaped envelope that is zero
/// during the hold and rises at the ramp rate on both sides.
fn stop_envelope(t: f64, stop: &StopEvent) -> f64 {
    if t < stop.time {
        STOP_RAMP_ACCEL * (stop.time - t)
    } else if t <= stop.time + stop.hold_duration {
        0.0
    } else {
        STOP_RAMP_ACCEL * (t - stop.time - stop.hold_duration)
    }
}
