//! Segment speed fields: storage, interpolation, ping fusion, and the
//! target-speed planner.
//!
//! A [`SpeedField`] holds mean speeds per route segment (roughly half-mile
//! tiles updated on a minute cadence) and exposes a continuous speed
//! `v(x, t)`: piecewise-linear between segment midpoints, constant beyond
//! the first/last midpoint, piecewise-constant in time with a step at each
//! update. Fields are immutable; fusion returns a new snapshot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default segment length, m (about half a mile).
pub const DEFAULT_SEGMENT_LENGTH: f64 = 804.67;
/// Default field update period, s.
pub const DEFAULT_UPDATE_PERIOD: f64 = 60.0;
/// Default e-folding age of ping fusion weights, s.
pub const DEFAULT_FUSION_TAU_AGE: f64 = 60.0;
/// Pings older than this are ignored by fusion, s.
pub const DEFAULT_FUSION_MAX_AGE: f64 = 120.0;

/// One raw speed measurement: a segment, a timestamp, a mean speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_start: f64,
    pub segment_end: f64,
    pub timestamp: f64,
    pub mean_speed: f64,
}

/// A probe-vehicle position/speed report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehiclePing {
    pub vehicle_id: u64,
    pub timestamp: f64,
    pub position: f64,
    pub speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct TimedSpeed {
    t: f64,
    v: f64,
}

/// Spatiotemporal segment-average speeds with midpoint-linear interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedField {
    /// Segment boundaries, sorted, tiling the route: `bounds[i]..bounds[i+1]`.
    bounds: Vec<f64>,
    /// Per segment, mean-speed records sorted by strictly increasing time.
    series: Vec<Vec<TimedSpeed>>,
}

/// Position/time shift applied to records at ingest, used to synchronize an
/// externally collected field with the leading trajectory. Zero is the
/// identity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SyncOffset {
    pub dx: f64,
    pub dt: f64,
}

/// Build a field from raw records.
///
/// Segments must tile the route: overlapping or conflicting geometry and
/// gaps are hard errors. Duplicate `(segment, timestamp)` records resolve
/// last-write-wins with a warning.
pub fn ingest_segments(
    records: &[SegmentRecord],
    offset: SyncOffset,
) -> Result<(SpeedField, Vec<String>)> {
    if records.is_empty() {
        return Err(Error::EmptyField);
    }
    let mut warnings = Vec::new();

    for r in records {
        if r.segment_end <= r.segment_start {
            return Err(Error::FieldGeometry(format!(
                "segment [{}, {}] has non-positive length",
                r.segment_start, r.segment_end
            )));
        }
        if r.mean_speed < 0.0 {
            return Err(Error::FieldGeometry(format!(
                "negative mean speed {} in segment [{}, {}]",
                r.mean_speed, r.segment_start, r.segment_end
            )));
        }
    }

    // Collect distinct segment geometries, shifted by the sync offset.
    let mut geoms: Vec<(f64, f64)> = Vec::new();
    for r in records {
        let g = (r.segment_start + offset.dx, r.segment_end + offset.dx);
        if !geoms.iter().any(|&(s, e)| approx_eq(s, g.0) && approx_eq(e, g.1)) {
            geoms.push(g);
        }
    }
    geoms.sort_by(|a, b| a.0.total_cmp(&b.0));

    const EPS: f64 = 1e-6;
    let mut gaps = Vec::new();
    for pair in geoms.windows(2) {
        let ((s0, e0), (s1, e1)) = (pair[0], pair[1]);
        if approx_eq(s0, s1) {
            return Err(Error::FieldGeometry(format!(
                "conflicting geometry: segments [{s0}, {e0}] and [{s1}, {e1}] share a start"
            )));
        }
        if s1 < e0 - EPS {
            return Err(Error::FieldGeometry(format!(
                "segments [{s0}, {e0}] and [{s1}, {e1}] overlap"
            )));
        }
        if s1 > e0 + EPS {
            gaps.push(format!("[{e0}, {s1}]"));
        }
    }
    if !gaps.is_empty() {
        return Err(Error::FieldGeometry(format!(
            "route has uncovered intervals: {}",
            gaps.join(", ")
        )));
    }

    let mut bounds: Vec<f64> = geoms.iter().map(|&(s, _)| s).collect();
    bounds.push(geoms.last().unwrap().1);

    let mut series: Vec<Vec<TimedSpeed>> = vec![Vec::new(); geoms.len()];
    for r in records {
        let start = r.segment_start + offset.dx;
        let t = r.timestamp + offset.dt;
        let idx = geoms
            .iter()
            .position(|&(s, _)| approx_eq(s, start))
            .expect("geometry registered above");
        let slot = &mut series[idx];
        if let Some(existing) = slot.iter_mut().find(|ts| approx_eq(ts.t, t)) {
            if existing.v != r.mean_speed {
                warnings.push(format!(
                    "duplicate record for segment [{start}, {}] at t={t}: \
                     {} m/s overwritten by {} m/s",
                    r.segment_end + offset.dx,
                    existing.v,
                    r.mean_speed
                ));
            }
            existing.v = r.mean_speed;
        } else {
            slot.push(TimedSpeed {
                t,
                v: r.mean_speed,
            });
        }
    }
    for slot in &mut series {
        slot.sort_by(|a, b| a.t.total_cmp(&b.t));
    }

    Ok((SpeedField { bounds, series }, warnings))
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-6
}

impl SpeedField {
    /// Construct directly from per-segment time series. Intended for
    /// programmatic builders; `bounds` has one more entry than `speeds`.
    pub fn from_series(bounds: Vec<f64>, speeds: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if bounds.len() < 2 || speeds.len() + 1 != bounds.len() {
            return Err(Error::FieldGeometry(
                "bounds must contain one more entry than the segment list".into(),
            ));
        }
        let series = speeds
            .into_iter()
            .map(|s| s.into_iter().map(|(t, v)| TimedSpeed { t, v }).collect())
            .collect();
        Ok(Self { bounds, series })
    }

    pub fn segment_count(&self) -> usize {
        self.series.len()
    }

    /// Spatial extent `[start, end]` of the tiled route.
    pub fn extent(&self) -> (f64, f64) {
        (self.bounds[0], *self.bounds.last().unwrap())
    }

    /// Earliest timestamp across all segments.
    pub fn first_timestamp(&self) -> Option<f64> {
        self.series
            .iter()
            .filter_map(|s| s.first().map(|ts| ts.t))
            .min_by(f64::total_cmp)
    }

    fn midpoint(&self, i: usize) -> f64 {
        0.5 * (self.bounds[i] + self.bounds[i + 1])
    }

    /// Segment value effective at time `t`: the record with the latest
    /// timestamp <= t, falling back to the segment's earliest record when
    /// its series starts later than `t`.
    fn segment_value(&self, i: usize, t: f64) -> Option<f64> {
        let slot = &self.series[i];
        let mut current = None;
        for ts in slot {
            if ts.t <= t + 1e-9 {
                current = Some(ts.v);
            } else {
                break;
            }
        }
        current.or_else(|| slot.first().map(|ts| ts.v))
    }

    /// Per-segment speeds effective at `t`, one per segment.
    fn snapshot(&self, t: f64) -> Result<Vec<f64>> {
        if self.series.is_empty() {
            return Err(Error::EmptyField);
        }
        let first = self.first_timestamp().ok_or(Error::EmptyField)?;
        if t < first - 1e-9 {
            return Err(Error::NoDataYet(t));
        }
        self.series
            .iter()
            .enumerate()
            .map(|(i, _)| self.segment_value(i, t).ok_or(Error::EmptyField))
            .collect()
    }

    /// Interpolated speed at position `x`, time `t`.
    ///
    /// Linear between segment midpoints at the latest update <= `t`;
    /// constant beyond the first/last midpoint.
    pub fn speed_at(&self, x: f64, t: f64) -> Result<f64> {
        let values = self.snapshot(t)?;
        Ok(self.interpolate(&values, x))
    }

    fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let n = values.len();
        if n == 1 || x <= self.midpoint(0) {
            return values[0];
        }
        if x >= self.midpoint(n - 1) {
            return values[n - 1];
        }
        // find i with midpoint(i) <= x < midpoint(i+1)
        let mut i = 0;
        while i + 1 < n && self.midpoint(i + 1) < x {
            i += 1;
        }
        let (m0, m1) = (self.midpoint(i), self.midpoint(i + 1));
        let f = (x - m0) / (m1 - m0);
        values[i] * (1.0 - f) + values[i + 1] * f
    }

    /// Exact integral of the interpolated speed over `[a, b]` at time `t`,
    /// using the same clamped piecewise-linear profile as [`speed_at`].
    pub fn integrate_speed(&self, a: f64, b: f64, t: f64) -> Result<f64> {
        let values = self.snapshot(t)?;
        Ok(self.integrate(&values, a, b))
    }

    fn integrate(&self, values: &[f64], a: f64, b: f64) -> f64 {
        debug_assert!(b >= a);
        let n = values.len();
        // breakpoints of the piecewise-linear profile inside [a, b]
        let mut xs = vec![a];
        for i in 0..n {
            let m = self.midpoint(i);
            if m > a && m < b {
                xs.push(m);
            }
        }
        xs.push(b);
        let mut total = 0.0;
        for pair in xs.windows(2) {
            let (x0, x1) = (pair[0], pair[1]);
            // trapezoid over a linear piece is exact
            let v0 = self.interpolate(values, x0);
            let v1 = self.interpolate(values, x1);
            total += 0.5 * (v0 + v1) * (x1 - x0);
        }
        total
    }

    /// Windowed mean speed over `[x, x + w]` at time `t` (the macroscopic
    /// speed target fed to the controller's upper layer).
    pub fn kernel_average(&self, x: f64, t: f64, w: f64) -> Result<f64> {
        assert!(w > 0.0, "window width must be positive");
        Ok(self.integrate_speed(x, x + w, t)? / w)
    }

    /// Fuse fresh probe pings into the field, returning a new snapshot.
    ///
    /// Per segment holding at least one ping aged within `max_age`, the
    /// fused value is `(1 - w) * segment + w * mean(ping speeds)` with
    /// `w = exp(-age / tau_age)` taken from the freshest ping. The fused
    /// value is recorded at timestamp `t`.
    pub fn fuse_pings(
        &self,
        pings: &[VehiclePing],
        t: f64,
        tau_age: f64,
        max_age: f64,
    ) -> Result<SpeedField> {
        let mut fused = self.clone();
        if pings.is_empty() {
            return Ok(fused);
        }
        for i in 0..self.series.len() {
            let (s, e) = (self.bounds[i], self.bounds[i + 1]);
            let in_seg: Vec<&VehiclePing> = pings
                .iter()
                .filter(|p| {
                    p.position >= s
                        && p.position < e
                        && p.timestamp <= t + 1e-9
                        && t - p.timestamp <= max_age
                })
                .collect();
            if in_seg.is_empty() {
                continue;
            }
            let ping_mean =
                in_seg.iter().map(|p| p.speed).sum::<f64>() / in_seg.len() as f64;
            let age = in_seg
                .iter()
                .map(|p| t - p.timestamp)
                .min_by(f64::total_cmp)
                .unwrap()
                .max(0.0);
            let weight = (-age / tau_age).exp();
            let base = self
                .segment_value(i, t)
                .ok_or(Error::EmptyField)?;
            let value = (1.0 - weight) * base + weight * ping_mean;
            let slot = &mut fused.series[i];
            if let Some(existing) = slot.iter_mut().find(|ts| approx_eq(ts.t, t)) {
                existing.v = value;
            } else {
                slot.push(TimedSpeed { t, v: value });
                slot.sort_by(|a, b| a.t.total_cmp(&b.t));
            }
        }
        Ok(fused)
    }

    /// Flatten the field back into raw records (for CSV export).
    pub fn to_records(&self) -> Vec<SegmentRecord> {
        let mut out = Vec::new();
        for (i, slot) in self.series.iter().enumerate() {
            for ts in slot {
                out.push(SegmentRecord {
                    segment_start: self.bounds[i],
                    segment_end: self.bounds[i + 1],
                    timestamp: ts.t,
                    mean_speed: ts.v,
                });
            }
        }
        out
    }

    /// Minimum and maximum stored segment speed effective at `t`.
    pub fn speed_range(&self, t: f64) -> Result<(f64, f64)> {
        let values = self.snapshot(t)?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((min, max))
    }
}

/// Sample the planner's target speed profile along `route`.
///
/// Each sample is the `w`-windowed mean of the field at that position. The
/// profile starts decreasing upstream of any drop in the field, which is
/// what lets a vehicle following it slow down before reaching congestion.
pub fn plan_target_profile(
    field: &SpeedField,
    t: f64,
    route: (f64, f64),
    w: f64,
    dx: f64,
) -> Result<Vec<(f64, f64)>> {
    let (x_start, x_end) = route;
    assert!(x_end > x_start, "route end must be downstream of start");
    assert!(dx > 0.0, "sample spacing must be positive");
    let steps = ((x_end - x_start) / dx).floor() as usize;
    let mut profile = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let x = x_start + i as f64 * dx;
        profile.push((x, field.kernel_average(x, t, w)?));
    }
    Ok(profile)
}

/// CSV row of the segment schema `segment_start_m,segment_end_m,timestamp_s,speed_mps`.
#[derive(Serialize, Deserialize)]
struct SegmentRow {
    segment_start_m: f64,
    segment_end_m: f64,
    timestamp_s: f64,
    speed_mps: f64,
}

pub fn read_segment_csv<R: std::io::Read>(reader: R) -> Result<Vec<SegmentRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.deserialize() {
        let row: SegmentRow = record?;
        out.push(SegmentRecord {
            segment_start: row.segment_start_m,
            segment_end: row.segment_end_m,
            timestamp: row.timestamp_s,
            mean_speed: row.speed_mps,
        });
    }
    Ok(out)
}

pub fn write_segment_csv<W: std::io::Write>(writer: W, records: &[SegmentRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(SegmentRow {
            segment_start_m: r.segment_start,
            segment_end_m: r.segment_end,
            timestamp_s: r.timestamp,
            speed_mps: r.mean_speed,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// CSV row of the ping schema `vehicle_id,timestamp_s,position_m,speed_mps`.
#[derive(Serialize, Deserialize)]
struct PingRow {
    vehicle_id: u64,
    timestamp_s: f64,
    position_m: f64,
    speed_mps: f64,
}

pub fn read_ping_csv<R: std::io::Read>(reader: R) -> Result<Vec<VehiclePing>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.deserialize() {
        let row: PingRow = record?;
        out.push(VehiclePing {
            vehicle_id: row.vehicle_id,
            timestamp: row.timestamp_s,
            position: row.position_m,
            speed: row.speed_mps,
        });
    }
    Ok(out)
}

/// Write the planner profile as `position_m,target_speed_mps`.
pub fn write_profile_csv<W: std::io::Write>(writer: W, profile: &[(f64, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["position_m", "target_speed_mps"])?;
    for (x, v) in profile {
        wtr.write_record([format!("{x}"), format!("{v}")])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn uniform_field(speed: f64) -> SpeedField {
        let bounds = (0..=10).map(|i| i as f64 * 800.0).collect();
        let speeds = vec![vec![(0.0, speed)]; 10];
        SpeedField::from_series(bounds, speeds).unwrap()
    }

    fn two_segment_field(v0: f64, v1: f64) -> SpeedField {
        SpeedField::from_series(
            vec![0.0, 1500.0, 3000.0],
            vec![vec![(0.0, v0)], vec![(0.0, v1)]],
        )
        .unwrap()
    }

    #[test]
    fn speed_at_midpoint_is_exact() {
        let f = two_segment_field(10.0, 20.0);
        assert_relative_eq!(f.speed_at(750.0, 0.0).unwrap(), 10.0);
        assert_relative_eq!(f.speed_at(2250.0, 0.0).unwrap(), 20.0);
    }

    #[test]
    fn speed_at_between_midpoints_interpolates() {
        let f = two_segment_field(10.0, 20.0);
        assert_relative_eq!(f.speed_at(1500.0, 0.0).unwrap(), 15.0);
    }

    #[test]
    fn speed_at_clamps_beyond_ends() {
        let f = two_segment_field(10.0, 20.0);
        assert_relative_eq!(f.speed_at(-500.0, 0.0).unwrap(), 10.0);
        assert_relative_eq!(f.speed_at(10_000.0, 0.0).unwrap(), 20.0);
    }

    #[test]
    fn speed_at_before_first_timestamp_errors() {
        let f = SpeedField::from_series(
            vec![0.0, 1000.0],
            vec![vec![(60.0, 15.0)]],
        )
        .unwrap();
        assert!(matches!(f.speed_at(500.0, 0.0), Err(Error::NoDataYet(_))));
        assert_relative_eq!(f.speed_at(500.0, 60.0).unwrap(), 15.0);
    }

    #[test]
    fn time_is_piecewise_constant_latest_wins() {
        let f = SpeedField::from_series(
            vec![0.0, 1000.0],
            vec![vec![(0.0, 30.0), (60.0, 10.0)]],
        )
        .unwrap();
        assert_relative_eq!(f.speed_at(500.0, 59.9).unwrap(), 30.0);
        assert_relative_eq!(f.speed_at(500.0, 60.0).unwrap(), 10.0);
        assert_relative_eq!(f.speed_at(500.0, 1e6).unwrap(), 10.0);
    }

    #[test]
    fn kernel_average_of_constant_is_constant() {
        let f = uniform_field(25.0);
        for x in [-2000.0, 0.0, 1234.5, 9000.0] {
            assert_relative_eq!(f.kernel_average(x, 0.0, 3000.0).unwrap(), 25.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kernel_average_two_segments_closed_form() {
        // 0-1500 @10, 1500-3000 @20; midpoints 750 and 2250.
        // v(x): 10 for x<=750, linear to 20 at 2250, then 20.
        // integral over [0, 3000] = 10*750 + 15*1500 + 20*750 = 45000 -> mean 15
        let f = two_segment_field(10.0, 20.0);
        assert_relative_eq!(f.kernel_average(0.0, 0.0, 3000.0).unwrap(), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn kernel_window_past_field_end_clamps() {
        let f = two_segment_field(10.0, 20.0);
        // window [2250, 5250]: linear has ended at 2250, tail constant 20
        assert_relative_eq!(
            f.kernel_average(2250.0, 0.0, 3000.0).unwrap(),
            20.0,
            epsilon = 1e-12
        );
        // window [1500, 4500]: [1500,2250] ramps 15->20 (mean 17.5), rest 20
        let expect = (17.5 * 750.0 + 20.0 * 2250.0) / 3000.0;
        assert_relative_eq!(
            f.kernel_average(1500.0, 0.0, 3000.0).unwrap(),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ingest_builds_adjacent_segments() {
        let records = vec![
            SegmentRecord {
                segment_start: 0.0,
                segment_end: 800.0,
                timestamp: 0.0,
                mean_speed: 20.0,
            },
            SegmentRecord {
                segment_start: 800.0,
                segment_end: 1600.0,
                timestamp: 0.0,
                mean_speed: 25.0,
            },
        ];
        let (field, warnings) = ingest_segments(&records, SyncOffset::default()).unwrap();
        assert_eq!(field.segment_count(), 2);
        assert!(warnings.is_empty());
    }

    #[test]
    fn ingest_gap_is_an_error_naming_the_interval() {
        let records = vec![
            SegmentRecord {
                segment_start: 0.0,
                segment_end: 800.0,
                timestamp: 0.0,
                mean_speed: 20.0,
            },
            SegmentRecord {
                segment_start: 900.0,
                segment_end: 1700.0,
                timestamp: 0.0,
                mean_speed: 25.0,
            },
        ];
        let err = ingest_segments(&records, SyncOffset::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[800, 900]"), "{msg}");
    }

    #[test]
    fn ingest_duplicate_timestamp_last_write_wins() {
        let mk = |v| SegmentRecord {
            segment_start: 0.0,
            segment_end: 800.0,
            timestamp: 60.0,
            mean_speed: v,
        };
        let (field, warnings) =
            ingest_segments(&[mk(20.0), mk(22.0)], SyncOffset::default()).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_relative_eq!(field.speed_at(400.0, 60.0).unwrap(), 22.0);
    }

    #[test]
    fn ingest_zero_offset_is_identity() {
        let records = vec![
            SegmentRecord {
                segment_start: 0.0,
                segment_end: 800.0,
                timestamp: 0.0,
                mean_speed: 20.0,
            },
            SegmentRecord {
                segment_start: 800.0,
                segment_end: 1600.0,
                timestamp: 60.0,
                mean_speed: 25.0,
            },
        ];
        let (a, _) = ingest_segments(&records, SyncOffset::default()).unwrap();
        let (b, _) = ingest_segments(&records, SyncOffset { dx: 0.0, dt: 0.0 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ingest_offset_shifts_position_and_time() {
        let records = vec![SegmentRecord {
            segment_start: 0.0,
            segment_end: 800.0,
            timestamp: 0.0,
            mean_speed: 20.0,
        }];
        let (f, _) =
            ingest_segments(&records, SyncOffset { dx: 100.0, dt: 30.0 }).unwrap();
        assert_eq!(f.extent(), (100.0, 900.0));
        assert!(matches!(f.speed_at(500.0, 0.0), Err(Error::NoDataYet(_))));
        assert_relative_eq!(f.speed_at(500.0, 30.0).unwrap(), 20.0);
    }

    #[test]
    fn fuse_with_no_pings_is_identity() {
        let f = two_segment_field(10.0, 20.0);
        let fused = f.fuse_pings(&[], 0.0, 60.0, 120.0).unwrap();
        assert_eq!(f, fused);
    }

    #[test]
    fn fuse_zero_age_ping_takes_ping_speed() {
        let f = uniform_field(30.0);
        let ping = VehiclePing {
            vehicle_id: 1,
            timestamp: 100.0,
            position: 400.0,
            speed: 10.0,
        };
        let fused = f.fuse_pings(&[ping], 100.0, 60.0, 120.0).unwrap();
        assert_relative_eq!(fused.speed_at(400.0, 100.0).unwrap(), 10.0);
        // other segments untouched
        assert_relative_eq!(fused.speed_at(4400.0, 100.0).unwrap(), 30.0);
    }

    #[test]
    fn fuse_stale_ping_barely_moves_the_segment() {
        let f = uniform_field(30.0);
        let ping = VehiclePing {
            vehicle_id: 1,
            timestamp: 0.0,
            position: 400.0,
            speed: 10.0,
        };
        // age 600 s with tau 60 s: weight ~ 4.5e-5 but max_age window must allow it
        let fused = f.fuse_pings(&[ping], 600.0, 60.0, 1000.0).unwrap();
        assert!((fused.speed_at(400.0, 600.0).unwrap() - 30.0).abs() < 1e-3);
    }

    #[test]
    fn fused_value_is_a_convex_combination() {
        let f = uniform_field(30.0);
        for age in [0.0, 10.0, 60.0, 119.0] {
            let ping = VehiclePing {
                vehicle_id: 1,
                timestamp: 200.0 - age,
                position: 400.0,
                speed: 12.0,
            };
            let fused = f.fuse_pings(&[ping], 200.0, 60.0, 120.0).unwrap();
            let v = fused.speed_at(400.0, 200.0).unwrap();
            assert!((12.0..=30.0).contains(&v), "age {age} gave {v}");
        }
    }

    #[test]
    fn profile_of_constant_field_is_constant() {
        let f = uniform_field(25.0);
        let profile = plan_target_profile(&f, 0.0, (0.0, 5000.0), 3000.0, 100.0).unwrap();
        for (_, v) in profile {
            assert_relative_eq!(v, 25.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn profile_anticipates_a_downstream_drop() {
        // 30 m/s up to 5000 m, 10 m/s after, in 500 m segments. The
        // interpolated field starts dropping at the last fast midpoint
        // (4750); the profile must start dropping exactly w before that.
        let bounds: Vec<f64> = (0..=20).map(|i| i as f64 * 500.0).collect();
        let speeds = (0..20)
            .map(|i| vec![(0.0, if (i as f64 * 500.0) < 5000.0 { 30.0 } else { 10.0 })])
            .collect();
        let f = SpeedField::from_series(bounds, speeds).unwrap();
        let w = 3000.0;
        let profile = plan_target_profile(&f, 0.0, (0.0, 6000.0), w, 10.0).unwrap();
        let field_drop_start = 4750.0;
        for (x, v) in &profile {
            if *x <= field_drop_start - w + 1e-9 {
                assert_relative_eq!(*v, 30.0, epsilon = 1e-12);
            }
            if *x > field_drop_start - w + 1e-9 && *x < 5000.0 {
                assert!(*v < 30.0, "profile flat at x={x}");
            }
        }
    }

    #[test]
    fn profile_preserves_monotonicity() {
        let bounds: Vec<f64> = (0..=10).map(|i| i as f64 * 800.0).collect();
        let speeds = (0..10).map(|i| vec![(0.0, 30.0 - 2.0 * i as f64)]).collect();
        let f = SpeedField::from_series(bounds, speeds).unwrap();
        let profile = plan_target_profile(&f, 0.0, (0.0, 8000.0), 2000.0, 50.0).unwrap();
        for pair in profile.windows(2) {
            assert!(pair[1].1 <= pair[0].1 + 1e-12);
        }
    }

    #[test]
    fn segment_csv_round_trip() {
        let records = vec![SegmentRecord {
            segment_start: 0.0,
            segment_end: 804.67,
            timestamp: 60.0,
            mean_speed: 22.5,
        }];
        let mut buf = Vec::new();
        write_segment_csv(&mut buf, &records).unwrap();
        let back = read_segment_csv(buf.as_slice()).unwrap();
        assert_eq!(records, back);
    }
}
