//! Scenario runner CLI.
//!
//! Subcommands: `run` (batch baseline/controlled experiments), `gen-traj`
//! (synthetic leading trajectories), `derive-field` (aggregate a trajectory
//! into a segment speed field), `plan-profile` (target-speed profile over a
//! field, optionally fused with probe pings), `compare` (metrics diff of
//! two recorded runs).

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use harmonize::config::{LaneChangeParams, SimConfig};
use harmonize::field::{
    ingest_segments, plan_target_profile, read_ping_csv, read_segment_csv, write_profile_csv,
    write_segment_csv, SyncOffset, DEFAULT_FUSION_MAX_AGE, DEFAULT_FUSION_TAU_AGE,
    DEFAULT_SEGMENT_LENGTH, DEFAULT_UPDATE_PERIOD,
};
use harmonize::metrics::{aggregate_metrics, compare_runs};
use harmonize::scenario::{
    self, derive_field_from_leader, run_experiment, FieldSource, Scenario, TrajectorySource,
};
use harmonize::sim::{self, RawRun};
use harmonize::trajectory::{
    generate_synthetic_trajectory, LeadingTrajectory, Oscillation, StopEvent, SyntheticSpec,
};

#[derive(Parser)]
#[command(name = "harmonize", version, about = "Mixed-autonomy platoon simulator")]
struct Cli {
    /// TOML config file overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch experiment over penetration rates and seeds.
    Run(RunArgs),
    /// Generate a synthetic leading trajectory CSV.
    GenTraj(GenTrajArgs),
    /// Aggregate a trajectory into a segment speed field CSV.
    DeriveField(DeriveFieldArgs),
    /// Compute a target-speed profile from a segment field.
    PlanProfile(PlanProfileArgs),
    /// Compare two full-rate run CSVs.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Shipped preset ("moderate" or "heavy"); mutually exclusive with --traj.
    #[arg(long)]
    preset: Option<String>,

    /// Leading trajectory CSV; mutually exclusive with --preset.
    #[arg(long)]
    traj: Option<PathBuf>,

    /// Segment field CSV; omitted means "derive from the leader".
    #[arg(long)]
    field: Option<PathBuf>,

    /// Scenario name used in output file names.
    #[arg(long)]
    name: Option<String>,

    /// Comma-separated penetration percentages, e.g. "0,4".
    #[arg(long, default_value = "0,4")]
    penetrations: String,

    /// Comma-separated seeds, e.g. "0,1,2".
    #[arg(long, default_value = "0")]
    seeds: String,

    /// Enable the stochastic lane-change perturbation model.
    #[arg(long)]
    lane_changes: bool,

    /// Output decimation stride (1 = full 10 Hz rate).
    #[arg(long, default_value_t = 10)]
    stride: usize,

    /// Parallel runs (0 = rayon default).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct GenTrajArgs {
    /// Shipped preset name instead of explicit spec flags.
    #[arg(long)]
    preset: Option<String>,

    #[arg(long, default_value_t = 1200.0)]
    duration: f64,

    #[arg(long, default_value_t = 25.0)]
    base_speed: f64,

    /// Oscillation components "amplitude:period", repeatable.
    #[arg(long = "oscillation")]
    oscillations: Vec<String>,

    /// Stop events "time:hold_duration", repeatable.
    #[arg(long = "stop")]
    stops: Vec<String>,

    /// Output file (default <out-dir>/trajectory.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DeriveFieldArgs {
    #[arg(long)]
    traj: PathBuf,

    #[arg(long, default_value_t = DEFAULT_SEGMENT_LENGTH)]
    segment_length: f64,

    #[arg(long, default_value_t = DEFAULT_UPDATE_PERIOD)]
    update_period: f64,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanProfileArgs {
    /// Segment field CSV.
    #[arg(long)]
    segments: PathBuf,

    /// Optional probe-ping CSV fused into the field before planning.
    #[arg(long)]
    pings: Option<PathBuf>,

    /// Evaluation time, s.
    #[arg(long, default_value_t = 0.0)]
    time: f64,

    /// Route as "start:end" in meters; defaults to the field extent.
    #[arg(long)]
    route: Option<String>,

    /// Averaging window, m.
    #[arg(long, default_value_t = 3000.0)]
    window: f64,

    /// Profile sample spacing, m.
    #[arg(long, default_value_t = 10.0)]
    dx: f64,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Full-rate run CSV of the human-driven baseline.
    #[arg(long)]
    baseline: PathBuf,

    /// Full-rate run CSV of the controlled run.
    #[arg(long)]
    controlled: PathBuf,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|e| anyhow!("bad list entry {p:?}: {e}"))
        })
        .collect()
}

fn parse_pair(s: &str) -> anyhow::Result<(f64, f64)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("expected \"a:b\", got {s:?}"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn load_config(cli: &Cli) -> anyhow::Result<SimConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            SimConfig::from_toml_str(&text)?
        }
        None => SimConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let report = harmonize::config::validate_config(&config);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.is_runnable() {
        bail!("invalid config: {}", report.violations.join("; "));
    }
    Ok(config)
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = real_main(&cli) {
        let msg = serde_json::json!({ "error": format!("{err:#}") });
        eprintln!("{msg}");
        std::process::exit(1);
    }
}

fn real_main(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Run(args) => cmd_run(cli, args),
        Command::GenTraj(args) => cmd_gen_traj(cli, args),
        Command::DeriveField(args) => cmd_derive_field(cli, args),
        Command::PlanProfile(args) => cmd_plan_profile(cli, args),
        Command::Compare(args) => cmd_compare(cli, args),
    }
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> anyhow::Result<()> {
    let mut config = load_config(cli)?;
    if args.lane_changes && config.lane_change.is_none() {
        config.lane_change = Some(LaneChangeParams::default());
    }
    if args.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build_global()
            .ok();
    }

    let (trajectory, default_name) = match (&args.preset, &args.traj) {
        (Some(name), None) => {
            let spec = scenario::preset(name)
                .ok_or_else(|| anyhow!("unknown preset {name:?} (try moderate or heavy)"))?;
            (TrajectorySource::Synthetic(spec), name.clone())
        }
        (None, Some(path)) => (
            TrajectorySource::File(path.clone()),
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into()),
        ),
        _ => bail!("exactly one of --preset and --traj is required"),
    };
    let field = match &args.field {
        Some(path) => FieldSource::File(path.clone()),
        None => FieldSource::DeriveFromLeader,
    };
    let scenario = Scenario {
        name: args.name.clone().unwrap_or(default_name),
        trajectory,
        field,
        config,
    };

    let penetrations: Vec<f64> = parse_list(&args.penetrations)?;
    let seeds: Vec<u64> = parse_list(&args.seeds)?;
    let report = run_experiment(&scenario, &penetrations, &seeds, &cli.out_dir, args.stride)?;
    if !report.comparisons.is_empty() {
        print!("{}", scenario::format_comparison_table(&report));
    } else {
        println!(
            "completed {} runs of {} (no baseline/controlled pair to compare)",
            report.runs.len(),
            report.scenario
        );
    }
    println!(
        "outputs written to {}",
        cli.out_dir.canonicalize().unwrap_or(cli.out_dir.clone()).display()
    );
    Ok(())
}

fn cmd_gen_traj(cli: &Cli, args: &GenTrajArgs) -> anyhow::Result<()> {
    let spec = if let Some(name) = &args.preset {
        scenario::preset(name).ok_or_else(|| anyhow!("unknown preset {name:?}"))?
    } else {
        SyntheticSpec {
            duration: args.duration,
            base_speed: args.base_speed,
            oscillations: args
                .oscillations
                .iter()
                .map(|s| {
                    parse_pair(s).map(|(amplitude, period)| Oscillation { amplitude, period })
                })
                .collect::<anyhow::Result<_>>()?,
            stop_events: args
                .stops
                .iter()
                .map(|s| {
                    parse_pair(s).map(|(time, hold_duration)| StopEvent {
                        time,
                        hold_duration,
                    })
                })
                .collect::<anyhow::Result<_>>()?,
        }
    };
    let traj = generate_synthetic_trajectory(&spec, cli.seed.unwrap_or(0))?;
    let out = output_path(cli, args.out.as_ref(), "trajectory.csv")?;
    traj.to_csv_writer(std::io::BufWriter::new(std::fs::File::create(&out)?))?;
    println!("wrote {} samples to {}", traj.len(), out.display());
    Ok(())
}

fn cmd_derive_field(cli: &Cli, args: &DeriveFieldArgs) -> anyhow::Result<()> {
    let file = std::fs::File::open(&args.traj)
        .with_context(|| format!("opening {}", args.traj.display()))?;
    let (traj, warnings) = LeadingTrajectory::from_csv_reader(file)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let (field, flags) = derive_field_from_leader(&traj, args.segment_length, args.update_period)?;
    for f in flags {
        eprintln!("note: {f}");
    }
    let out = output_path(cli, args.out.as_ref(), "field.csv")?;
    write_segment_csv(
        std::io::BufWriter::new(std::fs::File::create(&out)?),
        &field.to_records(),
    )?;
    println!(
        "wrote {} segments to {}",
        field.segment_count(),
        out.display()
    );
    Ok(())
}

fn cmd_plan_profile(cli: &Cli, args: &PlanProfileArgs) -> anyhow::Result<()> {
    let records = read_segment_csv(std::fs::File::open(&args.segments)?)?;
    let (field, warnings) = ingest_segments(&records, SyncOffset::default())?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let field = match &args.pings {
        Some(path) => {
            let pings = read_ping_csv(std::fs::File::open(path)?)?;
            field.fuse_pings(
                &pings,
                args.time,
                DEFAULT_FUSION_TAU_AGE,
                DEFAULT_FUSION_MAX_AGE,
            )?
        }
        None => field,
    };
    let route = match &args.route {
        Some(s) => parse_pair(s)?,
        None => field.extent(),
    };
    let profile = plan_target_profile(&field, args.time, route, args.window, args.dx)?;
    let out = output_path(cli, args.out.as_ref(), "profile.csv")?;
    write_profile_csv(std::io::BufWriter::new(std::fs::File::create(&out)?), &profile)?;
    println!("wrote {} profile points to {}", profile.len(), out.display());
    Ok(())
}

fn cmd_compare(cli: &Cli, args: &CompareArgs) -> anyhow::Result<()> {
    let config = load_config(cli)?;
    let read = |path: &PathBuf, penetration: f64| -> anyhow::Result<_> {
        let traces = sim::read_run_csv(std::fs::File::open(path)?, config.dt)?;
        let raw = RawRun {
            config: SimConfig {
                penetration,
                ..config.clone()
            },
            dt: config.dt,
            traces,
            events: vec![],
        };
        Ok(aggregate_metrics(&raw)?)
    };
    let baseline = read(&args.baseline, 0.0)?;
    let controlled = read(&args.controlled, config.penetration)?;
    let report = compare_runs(&baseline, &controlled)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn output_path(
    cli: &Cli,
    explicit: Option<&PathBuf>,
    default_name: &str,
) -> anyhow::Result<PathBuf> {
    match explicit {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            Ok(p.clone())
        }
        None => {
            std::fs::create_dir_all(&cli.out_dir)?;
            Ok(cli.out_dir.join(default_name))
        }
    }
}
