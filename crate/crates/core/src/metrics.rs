//! Fuel model, MPG conversion, and run-level aggregate metrics.
//!
//! Fuel rate is a fitted polynomial in speed and acceleration with a
//! fuel-cut floor, in grams/second. Aggregates integrate it trapezoidally
//! over each vehicle's recorded trace and convert to miles-per-gallon; gap
//! and time-gap histograms summarize proximity behavior per vehicle class.

use serde::{Deserialize, Serialize};

use crate::config::{EnergyParams, VehicleKind};
use crate::error::{Error, Result};
use crate::sim::{RawRun, VehicleTrace};

pub const METERS_PER_MILE: f64 = 1609.344;

/// Instantaneous fuel mass rate, g/s: `max(f(v, a), beta)` with the
/// positive-acceleration terms gated by `a+ = max(a, 0)`.
pub fn fuel_rate(v: f64, a: f64, p: &EnergyParams) -> f64 {
    debug_assert!(v >= 0.0);
    let a_plus = a.max(0.0);
    let f = p.c0
        + p.c1 * v
        + p.c2 * v * v
        + p.c3 * v * v * v
        + p.p0 * a
        + p.p1 * a * v
        + p.p2 * a * v * v
        + p.q0 * a_plus * a_plus
        + p.q1 * a_plus * a_plus * v;
    f.max(p.beta)
}

/// Convert a distance and a fuel mass to miles per gallon.
///
/// Zero distance yields zero; zero fuel is an error (the fuel-cut floor
/// makes it physically impossible in any run of positive length).
pub fn mpg(distance_m: f64, fuel_g: f64, grams_per_gallon: f64) -> Result<f64> {
    if distance_m == 0.0 {
        return Ok(0.0);
    }
    if fuel_g <= 0.0 {
        return Err(Error::ZeroFuel);
    }
    Ok((distance_m / METERS_PER_MILE) / (fuel_g / grams_per_gallon))
}

/// Fixed-bin histogram with explicit out-of-range counters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bin_width: f64) -> Self {
        let bins = ((hi - lo) / bin_width).round() as usize;
        Self {
            lo,
            hi,
            bin_width,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    pub fn add(&mut self, x: f64) {
        if x.is_nan() {
            return;
        }
        if x < self.lo {
            self.underflow += 1;
        } else if x >= self.hi {
            self.overflow += 1;
        } else {
            let bin = (((x - self.lo) / self.bin_width) as usize).min(self.counts.len() - 1);
            self.counts[bin] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

/// Summary statistics of one class's time-gap samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub p95: f64,
}

fn gap_stats(mut samples: Vec<f64>) -> Option<GapStats> {
    samples.retain(|x| !x.is_nan());
    if samples.is_empty() {
        return None;
    }
    let count = samples.len();
    let mean = samples.iter().sum::<f64>() / count as f64;
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let idx = ((count as f64) * 0.95) as usize;
    let idx = idx.min(count - 1);
    let (_, p95, _) = samples.select_nth_unstable_by(idx, f64::total_cmp);
    Some(GapStats {
        count,
        mean,
        min,
        p95: *p95,
    })
}

/// Per-vehicle totals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub id: u64,
    pub kind: VehicleKind,
    pub is_leader: bool,
    pub distance_m: f64,
    pub fuel_g: f64,
}

/// Aggregate metrics of one run. The replayed leader is excluded from every
/// total: its motion is exogenous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub penetration: f64,
    /// Mean distance of the controlled vehicles, km (all followers when the
    /// run has no AVs).
    pub distance_km: f64,
    pub mpg_avs: Option<f64>,
    pub mpg_total: f64,
    pub total_distance_m: f64,
    pub total_fuel_g: f64,
    pub av_ids: Vec<u64>,
    pub per_vehicle: Vec<VehicleSummary>,
    pub gap_hist_human: Histogram,
    pub gap_hist_av: Histogram,
    pub time_gap_hist_human: Histogram,
    pub time_gap_hist_av: Histogram,
    pub time_gap_human: Option<GapStats>,
    pub time_gap_av: Option<GapStats>,
}

fn integrate_fuel(trace: &VehicleTrace, dt: f64, p: &EnergyParams) -> f64 {
    if trace.speed.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut prev = fuel_rate(trace.speed[0], trace.accel[0], p);
    for k in 1..trace.speed.len() {
        let cur = fuel_rate(trace.speed[k], trace.accel[k], p);
        total += 0.5 * (prev + cur) * dt;
        prev = cur;
    }
    total
}

/// Compute all aggregate metrics from recorded traces.
pub fn aggregate_metrics(run: &RawRun) -> Result<RunMetrics> {
    assert!(!run.traces.is_empty(), "run has no traces");
    let energy = &run.config.energy;
    let gpg = energy.grams_per_gallon;

    let mut per_vehicle = Vec::with_capacity(run.traces.len());
    let mut gap_hist_human = Histogram::new(0.0, 100.0, 2.0);
    let mut gap_hist_av = Histogram::new(0.0, 100.0, 2.0);
    let mut tg_hist_human = Histogram::new(0.0, 10.0, 0.2);
    let mut tg_hist_av = Histogram::new(0.0, 10.0, 0.2);
    let mut tg_samples_human = Vec::new();
    let mut tg_samples_av = Vec::new();

    let mut total_distance = 0.0;
    let mut total_fuel = 0.0;
    let mut av_distance = 0.0;
    let mut av_fuel = 0.0;
    let mut av_ids = Vec::new();

    for trace in &run.traces {
        let fuel = integrate_fuel(trace, run.dt, energy);
        let distance = trace.distance();
        per_vehicle.push(VehicleSummary {
            id: trace.id,
            kind: trace.kind,
            is_leader: trace.is_leader,
            distance_m: distance,
            fuel_g: fuel,
        });
        if trace.is_leader {
            continue;
        }
        total_distance += distance;
        total_fuel += fuel;
        match trace.kind {
            VehicleKind::Automated => {
                av_distance += distance;
                av_fuel += fuel;
                av_ids.push(trace.id);
                for &g in &trace.gap {
                    gap_hist_av.add(g);
                }
                for &h in &trace.time_gap {
                    tg_hist_av.add(h);
                    tg_samples_av.push(h);
                }
            }
            VehicleKind::Human => {
                for &g in &trace.gap {
                    gap_hist_human.add(g);
                }
                for &h in &trace.time_gap {
                    tg_hist_human.add(h);
                    tg_samples_human.push(h);
                }
            }
        }
    }

    let mpg_total = mpg(total_distance, total_fuel, gpg)?;
    let mpg_avs = if av_ids.is_empty() {
        None
    } else {
        Some(mpg(av_distance, av_fuel, gpg)?)
    };

    // distance metric: the controlled vehicles when there are any, the
    // whole following platoon otherwise
    let distance_km = if av_ids.is_empty() {
        let n = per_vehicle.iter().filter(|v| !v.is_leader).count();
        total_distance / n as f64 / 1000.0
    } else {
        av_distance / av_ids.len() as f64 / 1000.0
    };

    Ok(RunMetrics {
        seed: run.config.seed,
        penetration: run.config.penetration,
        distance_km,
        mpg_avs,
        mpg_total,
        total_distance_m: total_distance,
        total_fuel_g: total_fuel,
        av_ids,
        per_vehicle,
        gap_hist_human,
        gap_hist_av,
        time_gap_hist_human: tg_hist_human,
        time_gap_hist_av: tg_hist_av,
        time_gap_human: gap_stats(tg_samples_human),
        time_gap_av: gap_stats(tg_samples_av),
    })
}

/// One side of a comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub distance_km: f64,
    pub mpg_avs: Option<f64>,
    pub mpg_total: f64,
}

/// Percent deltas of the controlled run relative to the baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub distance_km: f64,
    pub mpg_avs: Option<f64>,
    pub mpg_total: f64,
}

/// Baseline-vs-controlled comparison for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub baseline: MetricsRow,
    pub controlled: MetricsRow,
    pub delta_pct: DeltaRow,
}

fn pct(baseline: f64, controlled: f64) -> f64 {
    (controlled - baseline) / baseline * 100.0
}

/// Compare a controlled run against its human-driven baseline.
///
/// Both runs must share the seed and platoon size. The distance comparison
/// is slot-paired: the baseline side averages over the vehicles occupying
/// the controlled run's AV positions.
pub fn compare_runs(baseline: &RunMetrics, controlled: &RunMetrics) -> Result<ComparisonReport> {
    if baseline.seed != controlled.seed {
        return Err(Error::Mismatch(format!(
            "seeds differ: {} vs {}",
            baseline.seed, controlled.seed
        )));
    }
    // baseline distance over the controlled run's AV slots, when it has any
    let baseline_distance_km = if controlled.av_ids.is_empty() {
        baseline.distance_km
    } else {
        let mut sum = 0.0;
        for id in &controlled.av_ids {
            let v = baseline
                .per_vehicle
                .iter()
                .find(|v| v.id == *id)
                .ok_or_else(|| {
                    Error::Mismatch(format!("baseline run has no vehicle with id {id}"))
                })?;
            sum += v.distance_m;
        }
        sum / controlled.av_ids.len() as f64 / 1000.0
    };

    let base_row = MetricsRow {
        distance_km: baseline_distance_km,
        mpg_avs: baseline.mpg_avs,
        mpg_total: baseline.mpg_total,
    };
    let ctrl_row = MetricsRow {
        distance_km: controlled.distance_km,
        mpg_avs: controlled.mpg_avs,
        mpg_total: controlled.mpg_total,
    };
    let delta = DeltaRow {
        distance_km: pct(base_row.distance_km, ctrl_row.distance_km),
        mpg_avs: match (base_row.mpg_avs, ctrl_row.mpg_avs) {
            (Some(b), Some(c)) => Some(pct(b, c)),
            _ => None,
        },
        mpg_total: pct(base_row.mpg_total, ctrl_row.mpg_total),
    };
    Ok(ComparisonReport {
        seed: baseline.seed,
        baseline: base_row,
        controlled: ctrl_row,
        delta_pct: delta,
    })
}

/// Standard deviation of one trace's speed samples.
pub fn speed_std(trace: &VehicleTrace) -> f64 {
    let n = trace.speed.len() as f64;
    let mean = trace.speed.iter().sum::<f64>() / n;
    (trace.speed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Pooled standard deviation of speed over the followers whose ids fall in
/// `id_range`, across all recorded steps.
pub fn pooled_speed_std(run: &RawRun, id_range: std::ops::RangeInclusive<u64>) -> f64 {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut n = 0u64;
    for trace in &run.traces {
        if trace.is_leader || !id_range.contains(&trace.id) {
            continue;
        }
        for &v in &trace.speed {
            sum += v;
            sum_sq += v * v;
            n += 1;
        }
    }
    let n = n as f64;
    let mean = sum / n;
    ((sum_sq / n) - mean * mean).max(0.0).sqrt()
}
