//! Deterministic time-stepped platoon simulation.
//!
//! The leader replays its trajectory verbatim; every follower applies its
//! driver model to the pre-step state (synchronous update), then the engine
//! integrates with semi-implicit Euler and a velocity floor at zero.
//! Optional lane-change perturbations insert vehicles into wide gaps and
//! periodically remove surplus ones. All randomness comes from per-vehicle
//! substreams of the run seed, so churn in one part of the platoon never
//! shifts another vehicle's noise sequence.

use rand_chacha::ChaCha12Rng;

use crate::config::{LaneChangeParams, SimConfig, VehicleKind, VehicleState};
use crate::driver::{self, MicroObservation};
use crate::error::{Error, Result};
use crate::field::SpeedField;
use crate::rng::{self, NoiseStream, STREAM_LANE_CHANGE};
use crate::trajectory::LeadingTrajectory;

/// Spacing rule at initialization: followers start with this time gap, s.
pub const INITIAL_TIME_GAP: f64 = 2.0;

/// Something that happened mid-run, for the event log.
#[derive(Clone, Debug, PartialEq)]
pub enum SimEvent {
    Inserted { id: u64, position: f64 },
    Removed { id: u64 },
    InsertionSkipped { position: f64 },
}

/// Mutable state of one running simulation.
pub struct SimState {
    /// Completed steps; clock = step * dt.
    pub step: usize,
    /// Ordered platoon, leader first, positions strictly decreasing.
    pub vehicles: Vec<VehicleState>,
    /// Per-vehicle acceleration noise streams, indexed like `vehicles`.
    noise: Vec<NoiseStream>,
    /// Stream for insertion/removal draws.
    lane_rng: ChaCha12Rng,
    next_id: u64,
    last_removal_check: f64,
    pub events: Vec<(f64, SimEvent)>,
}

impl SimState {
    pub fn clock(&self, dt: f64) -> f64 {
        self.step as f64 * dt
    }
}

/// Place `platoon_size` followers upstream of the leader at 2-second gaps,
/// all moving at the leader's initial speed. With penetration `p > 0`,
/// every `(100/p)`-th follower is automated.
pub fn init_platoon(traj: &LeadingTrajectory, config: &SimConfig) -> Result<SimState> {
    let first = traj.at_step(0).ok_or(Error::EmptyTrajectory)?;
    let spacing = INITIAL_TIME_GAP * first.velocity + config.vehicle_length;
    let av_every = config.av_spacing();

    let mut vehicles = Vec::with_capacity(config.platoon_size + 1);
    let mut noise = Vec::with_capacity(config.platoon_size + 1);
    vehicles.push(VehicleState {
        id: 0,
        position: first.position,
        velocity: first.velocity,
        acceleration: 0.0,
        kind: VehicleKind::Human, // replayed verbatim, model never consulted
    });
    noise.push(NoiseStream::new(config.seed, 0, 0.0));

    for i in 1..=config.platoon_size {
        let kind = match av_every {
            Some(k) if i % k == 0 => VehicleKind::Automated,
            _ => VehicleKind::Human,
        };
        let id = i as u64;
        vehicles.push(VehicleState {
            id,
            position: first.position - i as f64 * spacing,
            velocity: first.velocity,
            acceleration: 0.0,
            kind,
        });
        // AVs receive no stochastic noise; the stream still exists so
        // indices stay aligned.
        let std = if kind == VehicleKind::Human {
            config.idm.noise_std
        } else {
            0.0
        };
        noise.push(NoiseStream::new(config.seed, id, std));
    }

    Ok(SimState {
        step: 0,
        vehicles,
        noise,
        lane_rng: rng::substream(config.seed, STREAM_LANE_CHANGE),
        next_id: config.platoon_size as u64 + 1,
        last_removal_check: 0.0,
        events: Vec::new(),
    })
}

/// Advance the simulation by one step.
///
/// Requires the trajectory to have a sample at `step + 1`. Returns a
/// collision error if any bumper-to-bumper gap closes to zero or below;
/// that is a bug in the controller or the scenario, never expected.
pub fn step(
    state: &mut SimState,
    traj: &LeadingTrajectory,
    field: &SpeedField,
    config: &SimConfig,
) -> Result<()> {
    let next = traj
        .at_step(state.step + 1)
        .ok_or(Error::EmptyTrajectory)?;
    let dt = config.dt;
    let clock = state.clock(dt);
    let n = state.vehicles.len();

    // accelerations from the pre-step state, so platoon order is irrelevant
    let mut accel = vec![0.0f64; n];
    for (i, slot) in accel.iter_mut().enumerate().skip(1) {
        let lead = state.vehicles[i - 1];
        let ego = state.vehicles[i];
        let obs = MicroObservation {
            v: ego.velocity,
            v_lead: lead.velocity,
            a_lead: lead.acceleration,
            gap: lead.position - ego.position - config.vehicle_length,
        };
        *slot = match ego.kind {
            VehicleKind::Human => {
                let eps = state.noise[i].sample();
                driver::idm_accel(&obs, &config.idm, eps)
            }
            VehicleKind::Automated => {
                let v_avg =
                    field.kernel_average(ego.position, clock, config.controller.w)?;
                let v_c = driver::command_speed(&obs, v_avg, &config.controller);
                driver::track_speed(ego.velocity, v_c, dt, config.av_accel_bounds)
            }
        };
    }

    // integrate; leader replays its recorded sample
    let leader = &mut state.vehicles[0];
    leader.acceleration = (next.velocity - leader.velocity) / dt;
    leader.velocity = next.velocity;
    leader.position = next.position;
    for (veh, &a) in state.vehicles.iter_mut().zip(&accel).skip(1) {
        let v = veh.velocity;
        let v_next = (v + a * dt).max(0.0);
        veh.velocity = v_next;
        veh.position += v_next * dt;
        // realized acceleration (differs from the commanded one at the
        // velocity floor), which is what the fuel model should see
        veh.acceleration = (v_next - v) / dt;
    }

    state.step += 1;
    let now = state.clock(dt);
    check_ordering(&state.vehicles, config.vehicle_length, now)?;

    if let Some(lc) = config.lane_change {
        apply_lane_changes(state, &lc, config)?;
        check_ordering(&state.vehicles, config.vehicle_length, now)?;
    }
    Ok(())
}

fn check_ordering(vehicles: &[VehicleState], length: f64, time: f64) -> Result<()> {
    for pair in vehicles.windows(2) {
        let gap = pair[0].position - pair[1].position - length;
        if gap <= 0.0 {
            return Err(Error::Collision {
                time,
                leader_id: pair[0].id,
                follower_id: pair[1].id,
                gap,
            });
        }
    }
    Ok(())
}

/// Stochastic lane-change perturbation: insert a human vehicle into each
/// sufficiently wide gap with the configured per-second probability, and
/// every `removal_period` remove one random human follower while the count
/// exceeds the target.
pub fn apply_lane_changes(
    state: &mut SimState,
    params: &LaneChangeParams,
    config: &SimConfig,
) -> Result<()> {
    let dt = config.dt;
    let now = state.clock(dt);
    let insert_prob = (params.insert_prob_per_s * dt).min(1.0);

    // decide on pre-insertion gaps, then apply back-to-front so indices stay valid
    let mut insertions: Vec<usize> = Vec::new();
    for i in 1..state.vehicles.len() {
        let gap =
            state.vehicles[i - 1].position - state.vehicles[i].position - config.vehicle_length;
        if gap > params.gap_threshold && rng::uniform(&mut state.lane_rng) < insert_prob {
            insertions.push(i);
        }
    }
    for &i in insertions.iter().rev() {
        let front = state.vehicles[i - 1];
        let rear = state.vehicles[i];
        let position = 0.5 * (front.position + rear.position);
        let front_gap = front.position - position - config.vehicle_length;
        let rear_gap = position - rear.position - config.vehicle_length;
        if front_gap < config.controller.s_min || rear_gap < config.controller.s_min {
            state
                .events
                .push((now, SimEvent::InsertionSkipped { position }));
            continue;
        }
        let id = state.next_id;
        state.next_id += 1;
        state.vehicles.insert(
            i,
            VehicleState {
                id,
                position,
                velocity: front.velocity,
                acceleration: 0.0,
                kind: VehicleKind::Human,
            },
        );
        state
            .noise
            .insert(i, NoiseStream::new(config.seed, id, config.idm.noise_std));
        state.events.push((now, SimEvent::Inserted { id, position }));
    }

    // periodic removal toward the target count
    if now - state.last_removal_check >= params.removal_period - 1e-9 {
        state.last_removal_check = now;
        let target = if params.target_count > 0 {
            params.target_count
        } else {
            config.platoon_size
        };
        if state.vehicles.len() - 1 > target {
            let humans: Vec<usize> = (1..state.vehicles.len())
                .filter(|&i| state.vehicles[i].kind == VehicleKind::Human)
                .collect();
            if !humans.is_empty() {
                let pick = (rng::uniform(&mut state.lane_rng) * humans.len() as f64) as usize;
                let idx = humans[pick.min(humans.len() - 1)];
                let id = state.vehicles[idx].id;
                state.vehicles.remove(idx);
                state.noise.remove(idx);
                state.events.push((now, SimEvent::Removed { id }));
            }
        }
    }
    Ok(())
}

/// Recorded motion of one vehicle across its lifetime in the run.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleTrace {
    pub id: u64,
    pub kind: VehicleKind,
    pub is_leader: bool,
    /// Step index of the first recorded sample.
    pub start_step: usize,
    pub position: Vec<f64>,
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
    /// Bumper-to-bumper gap to the vehicle ahead; NaN for the leader.
    pub gap: Vec<f64>,
    pub time_gap: Vec<f64>,
}

impl VehicleTrace {
    pub fn distance(&self) -> f64 {
        match (self.position.first(), self.position.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// Raw output of one simulation: full per-vehicle trajectories plus the
/// event log and the config echo.
pub struct RawRun {
    pub config: SimConfig,
    pub dt: f64,
    pub traces: Vec<VehicleTrace>,
    pub events: Vec<(f64, SimEvent)>,
}

/// Run the platoon to the end of the leading trajectory, recording every
/// vehicle at every step.
pub fn run(
    traj: &LeadingTrajectory,
    field: &SpeedField,
    config: &SimConfig,
) -> Result<RawRun> {
    let mut state = init_platoon(traj, config)?;
    let mut recorder = Recorder::new();
    recorder.record(&state, config);
    while traj.at_step(state.step + 1).is_some() {
        step(&mut state, traj, field, config)?;
        recorder.record(&state, config);
    }
    Ok(RawRun {
        config: config.clone(),
        dt: config.dt,
        traces: recorder.into_traces(),
        events: state.events,
    })
}

struct Recorder {
    traces: Vec<VehicleTrace>,
    index_of: std::collections::HashMap<u64, usize>,
}

impl Recorder {
    fn new() -> Self {
        Self {
            traces: Vec::new(),
            index_of: std::collections::HashMap::new(),
        }
    }

    fn record(&mut self, state: &SimState, config: &SimConfig) {
        for (i, v) in state.vehicles.iter().enumerate() {
            let (gap, time_gap) = if i == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let lead = &state.vehicles[i - 1];
                let gap = lead.position - v.position - config.vehicle_length;
                let tg = (gap / v.velocity.max(driver::TIME_GAP_SPEED_FLOOR))
                    .clamp(0.0, driver::TIME_GAP_CAP);
                (gap, tg)
            };
            let idx = *self.index_of.entry(v.id).or_insert_with(|| {
                self.traces.push(VehicleTrace {
                    id: v.id,
                    kind: v.kind,
                    is_leader: i == 0,
                    start_step: state.step,
                    position: Vec::new(),
                    speed: Vec::new(),
                    accel: Vec::new(),
                    gap: Vec::new(),
                    time_gap: Vec::new(),
                });
                self.traces.len() - 1
            });
            let trace = &mut self.traces[idx];
            trace.position.push(v.position);
            trace.speed.push(v.velocity);
            trace.accel.push(v.acceleration);
            trace.gap.push(gap);
            trace.time_gap.push(time_gap);
        }
    }

    fn into_traces(self) -> Vec<VehicleTrace> {
        self.traces
    }
}

/// Write the per-vehicle output CSV, one row per vehicle per recorded step,
/// optionally decimated by `stride` (1 keeps everything).
pub fn write_run_csv<W: std::io::Write>(writer: W, run: &RawRun, stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "time_s",
        "vehicle_id",
        "kind",
        "position_m",
        "speed_mps",
        "accel_mps2",
        "gap_m",
        "time_gap_s",
        "fuel_rate",
    ])?;
    let energy = &run.config.energy;
    // rows ordered by time then vehicle id, so output is reproducible
    let max_len = run
        .traces
        .iter()
        .map(|t| t.start_step + t.position.len())
        .max()
        .unwrap_or(0);
    for step in (0..max_len).step_by(stride) {
        for trace in &run.traces {
            if step < trace.start_step {
                continue;
            }
            let k = step - trace.start_step;
            if k >= trace.position.len() {
                continue;
            }
            let t = step as f64 * run.dt;
            let kind = if trace.is_leader {
                "leader"
            } else if trace.kind == VehicleKind::Automated {
                "av"
            } else {
                "human"
            };
            let fuel = crate::metrics::fuel_rate(trace.speed[k], trace.accel[k], energy);
            // shortest round-trip float formatting, so re-ingesting the file
            // reproduces the run bit-for-bit
            let fmt_opt = |x: f64| {
                if x.is_nan() {
                    String::new()
                } else {
                    format!("{x}")
                }
            };
            wtr.write_record([
                format!("{t:.1}"),
                format!("{}", trace.id),
                kind.to_string(),
                format!("{}", trace.position[k]),
                format!("{}", trace.speed[k]),
                format!("{}", trace.accel[k]),
                fmt_opt(trace.gap[k]),
                fmt_opt(trace.time_gap[k]),
                format!("{fuel}"),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Read a full-rate run CSV back into traces. Only meaningful for files
/// written with stride 1; decimated files reconstruct decimated traces.
pub fn read_run_csv<R: std::io::Read>(reader: R, dt: f64) -> Result<Vec<VehicleTrace>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut traces: Vec<VehicleTrace> = Vec::new();
    let mut index_of = std::collections::HashMap::new();
    for record in rdr.records() {
        let row = record?;
        let time: f64 = row[0].parse().map_err(|_| {
            Error::Trajectory(format!("bad time field {:?}", &row[0]))
        })?;
        let id: u64 = row[1].parse().map_err(|_| {
            Error::Trajectory(format!("bad vehicle id {:?}", &row[1]))
        })?;
        let kind_str = &row[2];
        let parse = |s: &str| -> f64 {
            if s.is_empty() {
                f64::NAN
            } else {
                s.parse().unwrap_or(f64::NAN)
            }
        };
        let step = (time / dt).round() as usize;
        let idx = *index_of.entry(id).or_insert_with(|| {
            traces.push(VehicleTrace {
                id,
                kind: if kind_str == "av" {
                    VehicleKind::Automated
                } else {
                    VehicleKind::Human
                },
                is_leader: kind_str == "leader",
                start_step: step,
                position: Vec::new(),
                speed: Vec::new(),
                accel: Vec::new(),
                gap: Vec::new(),
                time_gap: Vec::new(),
            });
            traces.len() - 1
        });
        let trace = &mut traces[idx];
        trace.position.push(parse(&row[3]));
        trace.speed.push(parse(&row[4]));
        trace.accel.push(parse(&row[5]));
        trace.gap.push(parse(&row[6]));
        trace.time_gap.push(parse(&row[7]));
    }
    Ok(traces)
}

/// Write time-space diagram data: `time_s,vehicle_id,position_m,speed_mps`.
pub fn write_tsd_csv<W: std::io::Write>(writer: W, run: &RawRun, stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["time_s", "vehicle_id", "position_m", "speed_mps"])?;
    let max_len = run
        .traces
        .iter()
        .map(|t| t.start_step + t.position.len())
        .max()
        .unwrap_or(0);
    for step in (0..max_len).step_by(stride) {
        for trace in &run.traces {
            if step < trace.start_step {
                continue;
            }
            let k = step - trace.start_step;
            if k >= trace.position.len() {
                continue;
            }
            wtr.write_record([
                format!("{:.1}", step as f64 * run.dt),
                format!("{}", trace.id),
                format!("{:.6}", trace.position[k]),
                format!("{:.6}", trace.speed[k]),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
