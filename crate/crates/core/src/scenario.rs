//! Scenario definitions and the batch experiment runner.
//!
//! A scenario names a leading-trajectory source and a speed-field source.
//! Two synthetic presets ship with the crate: `moderate` alternates between
//! free-flowing and congested speeds, `heavy` keeps speeds low with full
//! stops. Both are qualitative stand-ins for recorded congested drives,
//! which cannot be redistributed.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::field::{
    ingest_segments, read_segment_csv, SpeedField, SyncOffset, DEFAULT_SEGMENT_LENGTH,
    DEFAULT_UPDATE_PERIOD,
};
use crate::metrics::{
    aggregate_metrics, compare_runs, ComparisonReport, DeltaRow, MetricsRow, RunMetrics,
};
use crate::sim::{self, RawRun};
use crate::trajectory::{
    generate_synthetic_trajectory, LeadingTrajectory, Oscillation, StopEvent, SyntheticSpec,
};

/// Where a scenario's leading trajectory comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrajectorySource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Where a scenario's speed field comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FieldSource {
    File(PathBuf),
    /// Aggregate the leading trajectory itself into segment/minute means.
    DeriveFromLeader,
}

/// A named, reproducible experiment setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub trajectory: TrajectorySource,
    pub field: FieldSource,
    pub config: SimConfig,
}

/// Alternating free-flow and congestion: sharp but bounded oscillations
/// around a mid-range base speed.
pub fn moderate_spec() -> SyntheticSpec {
    SyntheticSpec {
        duration: 1200.0,
        base_speed: 25.0,
        oscillations: vec![
            Oscillation {
                amplitude: 5.0,
                period: 150.0,
            },
            Oscillation {
                amplitude: 3.0,
                period: 53.0,
            },
            Oscillation {
                amplitude: 1.0,
                period: 23.0,
            },
        ],
        stop_events: vec![],
    }
}

/// Sustained slow driving with full stops.
pub fn heavy_spec() -> SyntheticSpec {
    SyntheticSpec {
        duration: 1200.0,
        base_speed: 12.0,
        oscillations: vec![
            Oscillation {
                amplitude: 6.0,
                period: 130.0,
            },
            Oscillation {
                amplitude: 3.0,
                period: 47.0,
            },
        ],
        stop_events: vec![
            StopEvent {
                time: 400.0,
                hold_duration: 15.0,
            },
            StopEvent {
                time: 850.0,
                hold_duration: 20.0,
            },
        ],
    }
}

/// Look up a shipped preset by name.
pub fn preset(name: &str) -> Option<SyntheticSpec> {
    match name {
        "moderate" => Some(moderate_spec()),
        "heavy" => Some(heavy_spec()),
        _ => None,
    }
}

impl Scenario {
    pub fn from_preset(name: &str, config: SimConfig) -> Option<Self> {
        Some(Self {
            name: name.to_string(),
            trajectory: TrajectorySource::Synthetic(preset(name)?),
            field: FieldSource::DeriveFromLeader,
            config,
        })
    }

    pub fn trajectory(&self, seed: u64) -> Result<LeadingTrajectory> {
        match &self.trajectory {
            TrajectorySource::File(path) => {
                let file = std::fs::File::open(path)?;
                let (traj, _warnings) = LeadingTrajectory::from_csv_reader(file)?;
                Ok(traj)
            }
            TrajectorySource::Synthetic(spec) => generate_synthetic_trajectory(spec, seed),
        }
    }

    pub fn field(&self, traj: &LeadingTrajectory) -> Result<SpeedField> {
        match &self.field {
            FieldSource::File(path) => {
                let file = std::fs::File::open(path)?;
                let records = read_segment_csv(file)?;
                let (field, _warnings) = ingest_segments(&records, SyncOffset::default())?;
                Ok(field)
            }
            FieldSource::DeriveFromLeader => {
                let (field, _flags) =
                    derive_field_from_leader(traj, DEFAULT_SEGMENT_LENGTH, DEFAULT_UPDATE_PERIOD)?;
                Ok(field)
            }
        }
    }
}

/// Aggregate the leader's own motion into a segment/minute speed field.
///
/// Each `(segment, minute)` cell holds the mean of the leader's speeds
/// while it occupied that segment during that minute; cells the leader
/// never filled take the nearest-in-time value within their segment, and
/// segments never entered copy the nearest occupied segment (flagged in
/// the returned list).
pub fn derive_field_from_leader(
    traj: &LeadingTrajectory,
    segment_length: f64,
    update_period: f64,
) -> Result<(SpeedField, Vec<String>)> {
    assert!(segment_length > 0.0);
    assert!(update_period > 0.0);
    let samples = traj.samples();
    if samples.is_empty() {
        return Err(Error::EmptyTrajectory);
    }

    let x_min = samples.first().unwrap().position;
    let x_max = samples.last().unwrap().position;
    let base = (x_min / segment_length).floor() * segment_length;
    let n_seg = (((x_max - base) / segment_length).floor() as usize + 1).max(1);
    let n_min = (traj.duration() / update_period).floor() as usize + 1;

    let mut sums = vec![vec![0.0f64; n_min]; n_seg];
    let mut counts = vec![vec![0u64; n_min]; n_seg];
    for s in samples {
        let seg = (((s.position - base) / segment_length) as usize).min(n_seg - 1);
        let minute = ((s.time / update_period) as usize).min(n_min - 1);
        sums[seg][minute] += s.velocity;
        counts[seg][minute] += 1;
    }

    let mut flags = Vec::new();
    let mut speeds: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n_seg);
    let occupied: Vec<bool> = counts.iter().map(|c| c.iter().any(|&n| n > 0)).collect();

    for seg in 0..n_seg {
        if occupied[seg] {
            // nearest-in-time fill within the segment
            let mut series = Vec::with_capacity(n_min);
            for minute in 0..n_min {
                let value = if counts[seg][minute] > 0 {
                    sums[seg][minute] / counts[seg][minute] as f64
                } else {
                    let nearest = (0..n_min)
                        .filter(|&m| counts[seg][m] > 0)
                        .min_by_key(|&m| (m as i64 - minute as i64).unsigned_abs())
                        .expect("segment is occupied");
                    sums[seg][nearest] / counts[seg][nearest] as f64
                };
                series.push((minute as f64 * update_period, value));
            }
            speeds.push(series);
        } else {
            speeds.push(Vec::new()); // filled below from a neighbor
        }
    }
    for seg in 0..n_seg {
        if !occupied[seg] {
            let donor = (0..n_seg)
                .filter(|&s| occupied[s])
                .min_by_key(|&s| (s as i64 - seg as i64).unsigned_abs())
                .ok_or(Error::EmptyField)?;
            speeds[seg] = speeds[donor].clone();
            flags.push(format!(
                "segment {seg} never entered by the leader; filled from segment {donor}"
            ));
        }
    }

    let bounds = (0..=n_seg)
        .map(|i| base + i as f64 * segment_length)
        .collect();
    Ok((SpeedField::from_series(bounds, speeds)?, flags))
}

/// Outcome of one `(penetration, seed)` cell of an experiment.
pub struct CompletedRun {
    pub penetration: f64,
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Mean comparison across seeds for one penetration; deltas are recomputed
/// from the averaged absolutes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanComparison {
    pub penetration: f64,
    pub seeds: usize,
    pub baseline: MetricsRow,
    pub controlled: MetricsRow,
    pub delta_pct: DeltaRow,
}

/// One controlled-vs-baseline comparison within an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub penetration: f64,
    #[serde(flatten)]
    pub report: ComparisonReport,
}

/// The JSON document an experiment emits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub penetrations: Vec<f64>,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
    pub comparisons: Vec<ComparisonEntry>,
    pub means: Vec<MeanComparison>,
}

fn mean_rows(reports: &[&ComparisonReport], penetration: f64) -> MeanComparison {
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&ComparisonReport) -> f64| {
        reports.iter().map(|r| f(r)).sum::<f64>() / n
    };
    let baseline = MetricsRow {
        distance_km: avg(&|r| r.baseline.distance_km),
        mpg_avs: None,
        mpg_total: avg(&|r| r.baseline.mpg_total),
    };
    let mpg_avs = if reports.iter().all(|r| r.controlled.mpg_avs.is_some()) {
        Some(avg(&|r| r.controlled.mpg_avs.unwrap()))
    } else {
        None
    };
    let controlled = MetricsRow {
        distance_km: avg(&|r| r.controlled.distance_km),
        mpg_avs,
        mpg_total: avg(&|r| r.controlled.mpg_total),
    };
    let pct = |b: f64, c: f64| (c - b) / b * 100.0;
    MeanComparison {
        penetration,
        seeds: reports.len(),
        baseline,
        controlled,
        delta_pct: DeltaRow {
            distance_km: pct(baseline.distance_km, controlled.distance_km),
            // baseline has no AVs, so no AV-MPG delta exists
            mpg_avs: None,
            mpg_total: pct(baseline.mpg_total, controlled.mpg_total),
        },
    }
}

/// Execute the full `(penetration, seed)` cross product of a scenario.
///
/// Runs execute in parallel; all outputs are deterministic per cell. Writes
/// per-run trajectory and time-space CSVs, the JSON report, and a
/// plain-text comparison table into `out_dir`.
pub fn run_experiment(
    scenario: &Scenario,
    penetrations: &[f64],
    seeds: &[u64],
    out_dir: &Path,
    stride: usize,
) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out_dir)?;

    let cells: Vec<(f64, u64)> = penetrations
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();

    let completed: Vec<Result<CompletedRun>> = cells
        .par_iter()
        .map(|&(penetration, seed)| {
            let traj = scenario.trajectory(seed)?;
            let field = scenario.field(&traj)?;
            let config = SimConfig {
                penetration,
                seed,
                ..scenario.config.clone()
            };
            let raw = sim::run(&traj, &field, &config)?;
            let metrics = aggregate_metrics(&raw)?;
            write_run_outputs(out_dir, &scenario.name, penetration, seed, &raw, stride)?;
            Ok(CompletedRun {
                penetration,
                seed,
                metrics,
            })
        })
        .collect();
    let completed: Vec<CompletedRun> = completed.into_iter().collect::<Result<_>>()?;

    let find = |p: f64, s: u64| {
        completed
            .iter()
            .find(|r| r.penetration == p && r.seed == s)
            .map(|r| &r.metrics)
    };

    let mut comparisons = Vec::new();
    let mut means = Vec::new();
    if penetrations.contains(&0.0) {
        for &p in penetrations.iter().filter(|&&p| p > 0.0) {
            let mut per_seed = Vec::new();
            for &s in seeds {
                let (Some(base), Some(ctrl)) = (find(0.0, s), find(p, s)) else {
                    continue;
                };
                per_seed.push(compare_runs(base, ctrl)?);
            }
            for report in &per_seed {
                comparisons.push(ComparisonEntry {
                    penetration: p,
                    report: report.clone(),
                });
            }
            if !per_seed.is_empty() {
                means.push(mean_rows(&per_seed.iter().collect::<Vec<_>>(), p));
            }
        }
    }

    let report = ExperimentReport {
        scenario: scenario.name.clone(),
        penetrations: penetrations.to_vec(),
        seeds: seeds.to_vec(),
        runs: completed.into_iter().map(|r| r.metrics).collect(),
        comparisons,
        means,
    };

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(out_dir.join(format!("{}_report.json", scenario.name)), json)?;
    if !report.comparisons.is_empty() {
        std::fs::write(
            out_dir.join(format!("{}_table.txt", scenario.name)),
            format_comparison_table(&report),
        )?;
    }
    Ok(report)
}

fn write_run_outputs(
    out_dir: &Path,
    name: &str,
    penetration: f64,
    seed: u64,
    raw: &RawRun,
    stride: usize,
) -> Result<()> {
    let stem = format!("{name}_p{penetration}_seed{seed}");
    let traj_file = std::fs::File::create(out_dir.join(format!("{stem}_trajectories.csv")))?;
    sim::write_run_csv(std::io::BufWriter::new(traj_file), raw, stride)?;
    let tsd_file = std::fs::File::create(out_dir.join(format!("{stem}_tsd.csv")))?;
    sim::write_tsd_csv(std::io::BufWriter::new(tsd_file), raw, stride)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "--".to_string(), |x| format!("{x:.2}"))
}

fn fmt_delta(abs: f64, pct: f64) -> String {
    format!("{abs:.2} ({pct:+.2}%)")
}

/// Render the comparisons as an aligned plain-text table, one seed per
/// block plus the mean row.
pub fn format_comparison_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let push_row = |out: &mut String, c0: &str, c1: &str, c2: &str, c3: &str, c4: &str| {
        out.push_str(&format!("{c0:<18} {c1:<16} {c2:<18} {c3:<18} {c4:<18}\n"));
    };
    push_row(
        &mut out,
        "Scenario / seed",
        "Model",
        "Distance (km)",
        "MPG (AVs)",
        "MPG (total)",
    );
    out.push_str(&"-".repeat(90));
    out.push('\n');
    for entry in &report.comparisons {
        let r = &entry.report;
        let label = format!("{} seed {}", report.scenario, r.seed);
        push_row(
            &mut out,
            &label,
            "Human-driven",
            &format!("{:.2}", r.baseline.distance_km),
            &fmt_opt(r.baseline.mpg_avs),
            &format!("{:.2}", r.baseline.mpg_total),
        );
        push_row(
            &mut out,
            "",
            "Mixed-autonomy",
            &fmt_delta(r.controlled.distance_km, r.delta_pct.distance_km),
            &fmt_opt(r.controlled.mpg_avs),
            &fmt_delta(r.controlled.mpg_total, r.delta_pct.mpg_total),
        );
    }
    for mean in &report.means {
        out.push_str(&"-".repeat(90));
        out.push('\n');
        let label = format!("Average (p={}%)", mean.penetration);
        push_row(
            &mut out,
            &label,
            "Human-driven",
            &format!("{:.2}", mean.baseline.distance_km),
            "--",
            &format!("{:.2}", mean.baseline.mpg_total),
        );
        push_row(
            &mut out,
            "",
            "Mixed-autonomy",
            &fmt_delta(mean.controlled.distance_km, mean.delta_pct.distance_km),
            &fmt_opt(mean.controlled.mpg_avs),
            &fmt_delta(mean.controlled.mpg_total, mean.delta_pct.mpg_total),
        );
    }
    out
}
